"""Experiment configuration files and the shipped presets.

Configurations are TOML documents with the sections ``grid``, ``epidemic``,
``weights``, ``logistics``, ``initial``, ``model``, ``solver`` and
``output``; see ``presets/exp1.cfg`` for a fully commented example.
Validation reports every problem at once, each prefixed with the dotted
path of the offending field.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .grid import ConfigurationError, GridSpec, KernelSpec, make_ball, make_rect
from .model import (
    Bump,
    ControlWeights,
    EpidemicParams,
    InitialData,
    SIRVModel,
    VaccineLogistics,
)
from .pdhg import SolverConfig
from .state import POPULATIONS

__all__ = [
    "Region",
    "OutputConfig",
    "ExperimentConfig",
    "load_config",
    "load_config_file",
    "preset",
    "preset_text",
    "PRESETS",
]

PRESETS = (
    "exp1",
    "exp2a",
    "exp2b",
    "exp3-single",
    "exp3-single-obs",
    "exp3-multi",
    "exp3-multi-obs",
    "exp4-controlled",
    "exp4-fixed",
)


@dataclass(frozen=True)
class Region:
    """A disk (``center``, ``radius``) or an axis-aligned rectangle
    (``rect = [x1_min, x1_max, x2_min, x2_max]``)."""

    center: tuple[float, float] | None = None
    radius: float | None = None
    rect: tuple[float, float, float, float] | None = None
    name: str = ""

    def mask(self, grid: GridSpec, allow_empty: bool = False) -> np.ndarray:
        if self.rect is not None:
            return make_rect(grid, self.rect, allow_empty=allow_empty)
        return make_ball(grid, self.center, self.radius, allow_empty=allow_empty)

    def to_dict(self) -> dict:
        if self.rect is not None:
            d = {"rect": list(self.rect)}
        else:
            d = {"center": list(self.center), "radius": self.radius}
        if self.name:
            d["name"] = self.name
        return d


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "run"
    snapshot_nodes: tuple[int, ...] = ()
    regions: tuple[str, ...] = ("halves", "quadrants", "factories")


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment; :meth:`build_model` rasterizes the geometry."""

    name: str
    grid: GridSpec
    epidemic: EpidemicParams
    weights: ControlWeights
    f_max: float
    c_factory: float
    factories: tuple[Region, ...]
    obstacles: tuple[Region, ...]
    obstacle_populations: tuple[str, ...]
    initial: InitialData
    solver: SolverConfig
    output: OutputConfig = OutputConfig()
    scheme: str = "forward"
    congestion: str = "sum"
    cost_variant: str = "full"
    mobile: tuple[bool, bool, bool, bool] = (True, True, True, True)
    fixed_f: float | None = None
    include_terminal_R: bool = True

    def build_model(self, allow_empty: bool = False) -> SIRVModel:
        g = self.grid
        fmasks = tuple(r.mask(g, allow_empty=allow_empty) for r in self.factories)
        factory = np.logical_or.reduce(fmasks) if fmasks else np.zeros(g.space_shape, bool)
        obstacle = None
        if self.obstacles:
            obstacle = np.logical_or.reduce([r.mask(g, allow_empty=True) for r in self.obstacles])
        lg = VaccineLogistics(
            self.f_max, self.c_factory, factory, obstacle, tuple(self.obstacle_populations), fmasks
        )
        return SIRVModel(
            grid=g,
            epidemic=self.epidemic,
            weights=self.weights,
            logistics=lg,
            rho0=self.initial.densities(g),
            scheme=self.scheme,
            congestion=self.congestion,
            cost_variant=self.cost_variant,
            mobile=self.mobile,
            fixed_f=self.fixed_f,
            include_terminal_R=self.include_terminal_R,
        )

    def with_resolution(self, nx: int, nt: int | None = None) -> "ExperimentConfig":
        """Same experiment on an ``nx`` x ``nx`` grid; snapshot nodes are
        moved to the nearest node at the same time."""
        grid = self.grid.with_resolution(nx, nx, nt)
        scale = (grid.nt - 1) / (self.grid.nt - 1)
        nodes = tuple(sorted({round(n * scale) for n in self.output.snapshot_nodes}))
        return replace(self, grid=grid, output=replace(self.output, snapshot_nodes=nodes))

    def with_solver(self, **changes) -> "ExperimentConfig":
        return replace(self, solver=replace(self.solver, **changes))

    def with_output(self, **changes) -> "ExperimentConfig":
        return replace(self, output=replace(self.output, **changes))

    def validate(self) -> "ExperimentConfig":
        errs = _semantic_violations(self)
        if errs:
            raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(errs))
        return self


# --------------------------------------------------------------------------
# parsing


_SECTIONS = {
    "name": None,
    "grid": {"nx1", "nx2", "nt", "T", "tprime"},
    "epidemic": {"beta", "gamma", "theta1", "theta2", "eta", "kernel_sigma"},
    "weights": {"alpha", "a", "d_P", "d_V", "d_0", "lambda"},
    "logistics": {"f_max", "c_factory", "factory", "obstacle", "obstacle_populations"},
    "initial": set(POPULATIONS) | {"constant"},
    "model": {"scheme", "congestion", "cost", "mobile", "fixed_f", "terminal_R"},
    "solver": {"tau", "sigma", "max_iters", "tol", "diag_every", "min_iters", "dual_residual", "time_basis"},
    "output": {"directory", "snapshot_nodes", "regions"},
}
_REQUIRED = ("grid", "epidemic", "logistics", "initial")


class _Collector:
    def __init__(self):
        self.errors: list[str] = []

    def get(self, table: dict, path: str, key: str, kind, default=..., length: int | None = None):
        full = f"{path}.{key}" if path else key
        if key not in table:
            if default is ...:
                self.errors.append(f"{full}: missing")
                return None
            return default
        val = table[key]
        try:
            if length is not None:
                if not isinstance(val, list) or len(val) != length:
                    raise TypeError(f"expected a list of {length} values")
                return tuple(kind(v) if not isinstance(v, bool) else _bad(v) for v in val)
            if kind is float and isinstance(val, bool):
                raise TypeError("expected a number")
            if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
                raise TypeError("expected an integer")
            if kind is str and not isinstance(val, str):
                raise TypeError("expected a string")
            if kind is bool and not isinstance(val, bool):
                raise TypeError("expected true or false")
            return kind(val)
        except (TypeError, ValueError) as exc:
            self.errors.append(f"{full}: {exc}")
            return None


def _bad(v):
    raise TypeError(f"unexpected value {v!r}")


def _parse_region(c: _Collector, entry: Any, path: str) -> Region | None:
    if not isinstance(entry, dict):
        c.errors.append(f"{path}: expected a table")
        return None
    unknown = set(entry) - {"center", "radius", "rect", "name"}
    for k in sorted(unknown):
        c.errors.append(f"{path}.{k}: unknown key")
    name = c.get(entry, path, "name", str, "")
    if "rect" in entry:
        rect = c.get(entry, path, "rect", float, length=4)
        return None if rect is None else Region(rect=rect, name=name)
    center = c.get(entry, path, "center", float, length=2)
    radius = c.get(entry, path, "radius", float)
    if center is None or radius is None:
        return None
    return Region(center=center, radius=radius, name=name)


def _parse_bumps(c: _Collector, entries: Any, path: str) -> tuple[Bump, ...]:
    if isinstance(entries, dict):
        entries = [entries]
    if not isinstance(entries, list):
        c.errors.append(f"{path}: expected an array of tables")
        return ()
    out = []
    for j, e in enumerate(entries):
        p = f"{path}[{j}]"
        if not isinstance(e, dict):
            c.errors.append(f"{p}: expected a table")
            continue
        for k in sorted(set(e) - {"amplitude", "decay", "center", "floor"}):
            c.errors.append(f"{p}.{k}: unknown key")
        amp = c.get(e, p, "amplitude", float)
        decay = c.get(e, p, "decay", float)
        center = c.get(e, p, "center", float, length=2)
        floor = c.get(e, p, "floor", float, 0.0)
        if None not in (amp, decay, center, floor):
            out.append(Bump(amp, decay, center, floor))
    return tuple(out)


def _populations(c: _Collector, val: Any, path: str) -> tuple[str, ...]:
    if not isinstance(val, list) or not all(isinstance(v, str) for v in val):
        c.errors.append(f"{path}: expected a list of population names")
        return ()
    bad = [v for v in val if v not in POPULATIONS]
    if bad:
        c.errors.append(f"{path}: unknown populations {bad}")
    return tuple(v for v in val if v in POPULATIONS)


def _from_dict(doc: dict) -> ExperimentConfig:
    c = _Collector()
    for key in doc:
        if key not in _SECTIONS:
            c.errors.append(f"{key}: unknown section")
    for key in _REQUIRED:
        if key not in doc:
            c.errors.append(f"{key}: missing section")
    tables = {}
    for sec, keys in _SECTIONS.items():
        if keys is None:
            continue
        t = doc.get(sec, {})
        if not isinstance(t, dict):
            c.errors.append(f"{sec}: expected a table")
            t = {}
        for k in sorted(set(t) - keys):
            c.errors.append(f"{sec}.{k}: unknown key")
        tables[sec] = t

    name = c.get(doc, "", "name", str, "experiment")

    t = tables["grid"]
    grid = None
    nx1 = c.get(t, "grid", "nx1", int)
    nx2 = c.get(t, "grid", "nx2", int, nx1)
    nt = c.get(t, "grid", "nt", int)
    T = c.get(t, "grid", "T", float, 1.0)
    tprime = c.get(t, "grid", "tprime", float, 0.5)
    if None not in (nx1, nx2, nt, T, tprime):
        try:
            grid = GridSpec(nx1, nx2, nt, T, tprime)
        except ConfigurationError as exc:
            c.errors.append(f"grid: {exc}")

    t = tables["epidemic"]
    eta = c.get(t, "epidemic", "eta", float, (0.01, 0.01, 0.01), length=3)
    ks = c.get(t, "epidemic", "kernel_sigma", float, (0.01, 0.01), length=2)
    kernel = None
    if ks is not None:
        try:
            kernel = KernelSpec(*ks)
        except ConfigurationError as exc:
            c.errors.append(f"epidemic.kernel_sigma: {exc}")
    ep_vals = [c.get(t, "epidemic", k, float) for k in ("beta", "gamma", "theta1", "theta2")]
    epidemic = None
    if None not in ep_vals and eta is not None and kernel is not None:
        epidemic = EpidemicParams(*ep_vals, *eta, kernel=kernel)

    t = tables["weights"]
    base = ControlWeights()
    alpha = c.get(t, "weights", "alpha", float, tuple(base.alpha), length=4)
    a = c.get(t, "weights", "a", float, tuple(base.a), length=4)
    d_P = c.get(t, "weights", "d_P", float, base.d_P)
    d_V = c.get(t, "weights", "d_V", float, base.d_V)
    d_0 = c.get(t, "weights", "d_0", float, base.d_0)
    lam = c.get(t, "weights", "lambda", float, base.lam)
    weights = None
    if None not in (alpha, a, d_P, d_V, d_0, lam):
        weights = ControlWeights(*alpha, *a, d_P, d_V, d_0, lam)

    t = tables["logistics"]
    f_max = c.get(t, "logistics", "f_max", float)
    c_factory = c.get(t, "logistics", "c_factory", float)
    fac_entries = t.get("factory", [])
    if isinstance(fac_entries, dict):
        fac_entries = [fac_entries]
    factories = tuple(
        r for j, e in enumerate(fac_entries) if (r := _parse_region(c, e, f"logistics.factory[{j}]")) is not None
    )
    obs_entries = t.get("obstacle", [])
    if isinstance(obs_entries, dict):
        obs_entries = [obs_entries]
    obstacles = tuple(
        r for j, e in enumerate(obs_entries) if (r := _parse_region(c, e, f"logistics.obstacle[{j}]")) is not None
    )
    obs_pops = _populations(c, t.get("obstacle_populations", list(POPULATIONS)), "logistics.obstacle_populations")

    t = tables["initial"]
    bumps = {p: _parse_bumps(c, t[p], f"initial.{p}") for p in POPULATIONS if p in t}
    consts = {}
    ct = t.get("constant", {})
    if not isinstance(ct, dict):
        c.errors.append("initial.constant: expected a table")
        ct = {}
    for k, v in ct.items():
        if k not in POPULATIONS:
            c.errors.append(f"initial.constant.{k}: unknown population")
        else:
            val = c.get(ct, "initial.constant", k, float)
            if val is not None:
                consts[k] = val
    initial = InitialData(bumps, consts)

    t = tables["model"]
    scheme = c.get(t, "model", "scheme", str, "forward")
    congestion = c.get(t, "model", "congestion", str, "sum")
    cost = c.get(t, "model", "cost", str, "full")
    mob = _populations(c, t.get("mobile", list(POPULATIONS)), "model.mobile")
    mobile = tuple(p in mob for p in POPULATIONS)
    fixed_f = c.get(t, "model", "fixed_f", float, None)
    terminal_R = c.get(t, "model", "terminal_R", bool, True)

    t = tables["solver"]
    sd = SolverConfig()
    solver = SolverConfig(
        tau=c.get(t, "solver", "tau", float, sd.tau),
        sigma=c.get(t, "solver", "sigma", float, sd.sigma),
        max_iters=c.get(t, "solver", "max_iters", int, sd.max_iters),
        tol=c.get(t, "solver", "tol", float, sd.tol),
        diag_every=c.get(t, "solver", "diag_every", int, sd.diag_every),
        min_iters=c.get(t, "solver", "min_iters", int, sd.min_iters),
        dual_residual=c.get(t, "solver", "dual_residual", str, sd.dual_residual),
        time_basis=c.get(t, "solver", "time_basis", str, sd.time_basis),
    )

    t = tables["output"]
    snaps = t.get("snapshot_nodes", [])
    if not isinstance(snaps, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in snaps):
        c.errors.append("output.snapshot_nodes: expected a list of integers")
        snaps = []
    regions = t.get("regions", ["halves", "quadrants", "factories"])
    if not isinstance(regions, list) or not set(regions) <= {"halves", "quadrants", "factories"}:
        c.errors.append("output.regions: expected a subset of ['halves', 'quadrants', 'factories']")
        regions = []
    output = OutputConfig(c.get(t, "output", "directory", str, name), tuple(snaps), tuple(regions))

    if c.errors:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(c.errors))
    cfg = ExperimentConfig(
        name=name,
        grid=grid,
        epidemic=epidemic,
        weights=weights,
        f_max=f_max,
        c_factory=c_factory,
        factories=factories,
        obstacles=obstacles,
        obstacle_populations=obs_pops,
        initial=initial,
        solver=solver,
        output=output,
        scheme=scheme,
        congestion=congestion,
        cost_variant=cost,
        mobile=mobile,
        fixed_f=fixed_f,
        include_terminal_R=terminal_R,
    )
    return cfg.validate()


def _semantic_violations(cfg: ExperimentConfig) -> list[str]:
    errs = []
    errs += [f"solver.{e}" for e in cfg.solver.violations()]
    if cfg.scheme not in ("forward", "centered"):
        errs.append(f"model.scheme: unknown scheme {cfg.scheme!r}")
    if not cfg.factories:
        errs.append("logistics.factory: at least one factory region is required")
    g = cfg.grid
    for j, r in enumerate(cfg.factories):
        try:
            r.mask(g)
        except ConfigurationError as exc:
            if cfg.f_max > 0:
                errs.append(f"logistics.factory[{j}]: {exc}")
    for j, r in enumerate(cfg.obstacles):
        try:
            r.mask(g, allow_empty=True)
        except ConfigurationError as exc:
            errs.append(f"logistics.obstacle[{j}]: {exc}")
    if errs:
        return errs
    model = cfg.build_model(allow_empty=True)
    if cfg.f_max > 0 and not model.logistics.factory.any():
        errs.append("logistics.factory: region is empty on this grid")
    for e in model.violations():
        if e.startswith("logistics.factory: region is empty"):
            continue
        errs.append(e if "." in e.split(":")[0] else f"model.{e}")
    return errs


def load_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration document.

    Raises
    ------
    ConfigurationError
        With the line and column for syntax errors, or the list of every
        semantic violation.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"parse error: {exc}") from exc
    return _from_dict(doc)


def load_config_file(path: str | Path) -> ExperimentConfig:
    return load_config(Path(path).read_text())


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("sirv_mfc").joinpath("presets", f"{name}.cfg").read_text()


def preset(name: str) -> ExperimentConfig:
    """One of the shipped experiment configurations (see :data:`PRESETS`)."""
    return load_config(preset_text(name))
