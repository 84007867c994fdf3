"""Run orchestration and result files.

A run directory contains

``series.csv``
    diagnostics sampled during the iteration (monitored Lagrangian,
    relative change of the cost, constraint residual norms);
``masses.csv``
    total mass of every population at every time node, overall and per
    region (halves, quadrants, factories);
``snapshots/``
    density fields at the requested nodes, each a one-line text header
    followed by the raw little-endian ``float64`` array;
``report.txt``
    the :class:`RunReport` as ``key = value`` lines.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .config import ExperimentConfig
from .grid import ConfigurationError, GridSpec, estimate_operator_norm, gradient, divergence
from .model import SIRVModel, check_feasibility, evaluate_cost
from .operators import kkt_residuals
from .pdhg import SolveResult, solve
from .state import POPULATIONS, StateVector, V

__all__ = [
    "RunReport",
    "OUTPUT_ROOT_ENV",
    "output_root",
    "region_masks",
    "summarize",
    "run",
    "write_snapshot",
    "read_snapshot",
    "read_report",
    "compare_reports",
    "norm_study",
]

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "SIRV_MFC_OUTPUT"
SNAPSHOT_MAGIC = "sirv-mfc-snapshot"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


# --------------------------------------------------------------------------
# reporting


@dataclass
class RunReport:
    name: str
    converged: bool
    iterations: int
    relative_error: float
    cost_total: float
    cost_terms: dict[str, float]
    terminal_mass: dict[str, float]
    production_total: float
    production_per_factory: dict[str, float]
    transport_cost: float
    delivered_right: float
    feasibility: dict[str, float] = field(default_factory=dict)
    kkt: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "name": self.name,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "relative_error": self.relative_error,
            "cost_total": self.cost_total,
            "production_total": self.production_total,
            "transport_cost": self.transport_cost,
            "delivered_right": self.delivered_right,
        }
        for prefix, table in (
            ("cost", self.cost_terms),
            ("terminal_mass", self.terminal_mass),
            ("production", self.production_per_factory),
            ("violation", self.feasibility),
            ("kkt", self.kkt),
        ):
            for k, v in table.items():
                d[f"{prefix}.{k}"] = v
        return d

    def to_text(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            key = f'"{k}"' if "." in k or "-" in k else k
            if isinstance(v, bool):
                lines.append(f"{key} = {'true' if v else 'false'}")
            elif isinstance(v, str):
                lines.append(f'{key} = "{v}"')
            elif isinstance(v, int):
                lines.append(f"{key} = {v}")
            else:
                v = float(v)
                lines.append(f"{key} = {v!r}" if math.isfinite(v) else f"{key} = {'inf' if v > 0 else '-inf'}")
        return "\n".join(lines) + "\n"


def read_report(path: str | Path) -> dict:
    return tomllib.loads(Path(path).read_text())


def region_masks(model: SIRVModel, names: tuple[str, ...], factory_names: tuple[str, ...] = ()) -> dict[str, np.ndarray]:
    """Boolean masks for the requested region families, keyed by label."""
    x1, x2 = model.grid.centers()
    out = {}
    if "halves" in names:
        out["left"] = x1 < 0.5
        out["right"] = x1 >= 0.5
    if "quadrants" in names:
        out["top_left"] = (x1 < 0.5) & (x2 >= 0.5)
        out["bottom_left"] = (x1 < 0.5) & (x2 < 0.5)
        out["top_right"] = (x1 >= 0.5) & (x2 >= 0.5)
        out["bottom_right"] = (x1 >= 0.5) & (x2 < 0.5)
    if "factories" in names:
        for j, mask in enumerate(model.logistics.factories):
            label = factory_names[j] if j < len(factory_names) and factory_names[j] else f"factory{j}"
            out[f"factory_{label}"] = mask
    return out


def transport_cost(model: SIRVModel, u: StateVector) -> float:
    """``int_{T'}^T int |m_V|^2 / (2 rho_V)`` over the delivery slabs."""
    g = model.grid
    sl = slice(g.n_prime, g.nt - 1)
    r = u.rho[V, sl]
    m2 = u.m[V, 0, sl] ** 2 + u.m[V, 1, sl] ** 2
    pos = r > 0
    return float(np.sum(m2[pos] / (2.0 * r[pos]))) * g.dt * g.cell_area


def summarize(
    model: SIRVModel,
    result: SolveResult,
    name: str = "run",
    factory_names: tuple[str, ...] = (),
    with_kkt: bool = True,
) -> RunReport:
    g = model.grid
    u = result.u
    cost = evaluate_cost(model, u)
    n1 = g.n_prime
    dA = g.cell_area
    terminal = {p: float(u.rho[i, -1].sum() * dA) for i, p in enumerate(POPULATIONS)}
    per_factory = {}
    for j, mask in enumerate(model.logistics.factories):
        label = factory_names[j] if j < len(factory_names) and factory_names[j] else f"factory{j}"
        per_factory[label] = float(u.rho[V, n1][mask].sum() * dA)
    right = g.centers()[0] >= 0.5
    delivered = float(u.rho[V, n1:][:, right].sum() * dA * g.dt)
    return RunReport(
        name=name,
        converged=result.converged,
        iterations=result.iterations,
        relative_error=result.relative_error,
        cost_total=cost.value,
        cost_terms=cost.terms,
        terminal_mass=terminal,
        production_total=float(u.rho[V, n1].sum() * dA),
        production_per_factory=per_factory,
        transport_cost=transport_cost(model, u),
        delivered_right=delivered,
        feasibility=check_feasibility(model, u),
        kkt=kkt_residuals(model, u, result.p) if with_kkt else {},
    )


# --------------------------------------------------------------------------
# files


def write_snapshot(path: str | Path, field_: np.ndarray, node: int, population: str) -> None:
    arr = np.ascontiguousarray(field_, dtype="<f8")
    header = f"{SNAPSHOT_MAGIC} nx1={arr.shape[0]} nx2={arr.shape[1]} dtype=float64 node={node} population={population}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(arr.tobytes(order="C"))


def read_snapshot(path: str | Path) -> tuple[np.ndarray, dict[str, str]]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if not header or header[0] != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a snapshot file")
        meta = dict(item.split("=", 1) for item in header[1:])
        data = np.frombuffer(fh.read(), dtype="<f8")
    shape = (int(meta["nx1"]), int(meta["nx2"]))
    if data.size != shape[0] * shape[1]:
        raise ValueError(f"{path}: payload size does not match the header")
    return data.reshape(shape).copy(), meta


def write_series(path: Path, result: SolveResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "monitor_lagrangian", "relative_error", "cost"] + [f"residual_{p}" for p in POPULATIONS])
        for d in result.trace:
            w.writerow([d.iteration, repr(d.monitor_lagrangian), repr(d.relative_error), repr(d.cost)] + [repr(x) for x in d.residual_norms])


def write_masses(path: Path, model: SIRVModel, u: StateVector, regions: dict[str, np.ndarray]) -> None:
    g = model.grid
    dA = g.cell_area
    t = g.times()
    cols = ["node", "time"]
    data = [np.arange(g.nt), t]
    for i, p in enumerate(POPULATIONS):
        cols.append(f"{p}_total")
        data.append(u.rho[i].sum(axis=(1, 2)) * dA)
        for label, mask in regions.items():
            cols.append(f"{p}_{label}")
            data.append(u.rho[i][:, mask].sum(axis=1) * dA)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*data):
            w.writerow([int(row[0])] + [repr(float(x)) for x in row[1:]])


def run(
    config: ExperimentConfig,
    outdir: str | Path | None = None,
    result: SolveResult | None = None,
) -> tuple[RunReport, SolveResult]:
    """Solve ``config`` (unless ``result`` is given) and write all artifacts."""
    model = config.build_model().validate()
    if result is None:
        result = solve(model, config.solver)
    names = tuple(r.name for r in config.factories)
    report = summarize(model, result, config.name, names)
    out = Path(outdir) if outdir is not None else output_root() / config.output.directory
    out.mkdir(parents=True, exist_ok=True)
    write_series(out / "series.csv", result)
    write_masses(out / "masses.csv", model, result.u, region_masks(model, config.output.regions, names))
    if config.output.snapshot_nodes:
        snap = out / "snapshots"
        snap.mkdir(exist_ok=True)
        for n in config.output.snapshot_nodes:
            if not 0 <= n < model.grid.nt:
                raise ConfigurationError(f"snapshot node {n} outside 0..{model.grid.nt - 1}")
            for i, p in enumerate(POPULATIONS):
                write_snapshot(snap / f"rho_{p}_n{n:03d}.bin", result.u.rho[i, n], n, p)
    (out / "report.txt").write_text(report.to_text())
    log.info("wrote results to %s", out)
    return report, result


def compare_reports(a: dict, b: dict) -> list[tuple[str, object, object, str]]:
    """Rows ``(key, value_a, value_b, relation)`` for the keys both reports share."""
    rows = []
    for k in a:
        if k not in b:
            continue
        va, vb = a[k], b[k]
        if isinstance(va, (int, float)) and not isinstance(va, bool) and isinstance(vb, (int, float)):
            rel = "<" if va < vb else (">" if va > vb else "=")
        else:
            rel = "=" if va == vb else "!="
        rows.append((k, va, vb, rel))
    return rows


# --------------------------------------------------------------------------
# operator norm study


@dataclass
class NormRow:
    n: int
    dx: float
    grad_norm: float
    ratio: float
    energy: float


def norm_study(sizes, tol: float = 1e-8, scheme: str = "forward") -> list[NormRow]:
    """Power-iteration estimate of the discrete gradient norm per grid size.

    Also reports ``int |grad u|^2`` for ``u = exp(-20 |x|^2)``.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ConfigurationError("the norm study needs at least two grid sizes")
    if sorted(set(sizes)) != sizes:
        raise ConfigurationError("grid sizes must be strictly increasing")
    rows = []
    prev = None
    for n in sizes:
        g = GridSpec(n, n, 3)
        norm = estimate_operator_norm(
            lambda x: gradient(x, g, scheme), lambda y: -divergence(y, g, scheme), g.space_shape, tol=tol
        )
        x1, x2 = g.centers()
        uu = np.exp(-20.0 * (x1**2 + x2**2))
        gu = gradient(uu, g, scheme)
        energy = float((gu**2).sum() * g.cell_area)
        rows.append(NormRow(n, g.dx1, norm, norm / prev if prev else float("nan"), energy))
        prev = norm
    return rows


def write_norm_study(path: str | Path | None, rows: list[NormRow]) -> str:
    lines = ["n,dx,grad_norm,ratio,energy"]
    for r in rows:
        lines.append(f"{r.n},{r.dx!r},{r.grad_norm!r},{r.ratio!r},{r.energy!r}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
