"""Model constants, cost functional and constraint checks.

All integrals use cell-center quadrature in space.  In time, densities are
integrated over the nodes ``1 .. nt-1`` and controls (momenta, production)
over ``0 .. nt-2``, each with weight ``dt``; this pairs every variable with
exactly one PDE slab and makes the constant-field integrals exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .grid import ConfigurationError, GridSpec, KernelSpec
from .state import POPULATIONS, DualVector, I, R, S, StateVector, V, slab_dot

__all__ = [
    "EpidemicParams",
    "ControlWeights",
    "VaccineLogistics",
    "Bump",
    "InitialData",
    "SIRVModel",
    "CostReport",
    "kinetic_term",
    "evaluate_cost",
    "evaluate_monitor_lagrangian",
    "check_feasibility",
    "variable_mask",
]

PARAM_BOUND = 10.0
FEAS_TOL = 1e-9


@dataclass(frozen=True)
class EpidemicParams:
    beta: float
    gamma: float
    theta1: float
    theta2: float
    eta_S: float = 0.01
    eta_I: float = 0.01
    eta_R: float = 0.01
    kernel: KernelSpec = KernelSpec(0.01, 0.01)

    @property
    def eta(self) -> tuple[float, float, float]:
        return (self.eta_S, self.eta_I, self.eta_R)

    def violations(self, bound: float = PARAM_BOUND) -> list[str]:
        out = []
        for name in ("beta", "gamma", "theta1", "theta2", "eta_S", "eta_I", "eta_R"):
            v = getattr(self, name)
            if not v >= 0:
                out.append(f"{name}: must be nonnegative, got {v}")
        for name in ("beta", "gamma", "theta1", "theta2"):
            v = getattr(self, name)
            if v > bound:
                out.append(f"{name}: {v} exceeds sanity bound {bound}")
        return out


@dataclass(frozen=True)
class ControlWeights:
    alpha_S: float = 10.0
    alpha_I: float = 30.0
    alpha_R: float = 20.0
    alpha_V: float = 0.005
    a_S: float = 2.0
    a_I: float = 2.0
    a_R: float = 0.001
    a_V: float = 0.1
    d_P: float = 0.4
    d_V: float = 0.4
    d_0: float = 0.01
    lam: float = 1e-3

    @property
    def alpha(self) -> np.ndarray:
        return np.array([self.alpha_S, self.alpha_I, self.alpha_R, self.alpha_V])

    @property
    def a(self) -> np.ndarray:
        return np.array([self.a_S, self.a_I, self.a_R, self.a_V])

    def violations(self) -> list[str]:
        out = []
        for name, v in vars(self).items():
            if not v >= 0:
                out.append(f"{name}: must be nonnegative, got {v}")
        if not self.lam > 0:
            out.append(f"lam: must be positive for strong convexity, got {self.lam}")
        return out


@dataclass(frozen=True, eq=False)
class VaccineLogistics:
    f_max: float
    c_factory: float
    factory: np.ndarray
    obstacle: np.ndarray | None = None
    # populations forced to vanish on the obstacle
    obstacle_populations: tuple[str, ...] = POPULATIONS
    # individual factory balls, for per-factory reporting
    factories: tuple[np.ndarray, ...] = ()

    def violations(self) -> list[str]:
        out = []
        if not self.f_max >= 0:
            out.append(f"f_max: must be nonnegative, got {self.f_max}")
        if not self.c_factory >= 0:
            out.append(f"c_factory: must be nonnegative, got {self.c_factory}")
        if not self.factory.any():
            out.append("factory: region is empty")
        if self.obstacle is not None and (self.obstacle & self.factory).any():
            out.append("obstacle: overlaps the factory region")
        bad = set(self.obstacle_populations) - set(POPULATIONS)
        if bad:
            out.append(f"obstacle_populations: unknown populations {sorted(bad)}")
        return out


@dataclass(frozen=True)
class Bump:
    """Truncated Gaussian ``(A exp(-s |x - c|^2) - h)_+``."""

    amplitude: float
    decay: float
    center: tuple[float, float]
    floor: float = 0.0

    def evaluate(self, grid: GridSpec) -> np.ndarray:
        x1, x2 = grid.centers()
        c1, c2 = self.center
        r2 = (x1 - c1) ** 2 + (x2 - c2) ** 2
        return np.maximum(self.amplitude * np.exp(-self.decay * r2) - self.floor, 0.0)


@dataclass(frozen=True)
class InitialData:
    bumps: dict[str, tuple[Bump, ...]] = field(default_factory=dict)
    constants: dict[str, float] = field(default_factory=dict)

    def densities(self, grid: GridSpec) -> np.ndarray:
        rho0 = np.zeros((4,) + grid.space_shape)
        for i, name in enumerate(POPULATIONS):
            rho0[i] += self.constants.get(name, 0.0)
            for b in self.bumps.get(name, ()):
                rho0[i] += b.evaluate(grid)
        return rho0


@dataclass(frozen=True, eq=False)
class SIRVModel:
    """Everything the constraint operator, cost and solver need to know.

    ``congestion`` selects ``d_P/2 (rho_S + rho_I + rho_R)^2`` (``"sum"``) or
    ``d_P/2 sum_i rho_i^2`` (``"separate"``).  ``cost_variant="vaccine"``
    keeps only the vaccine-related cost terms.  ``mobile[i]`` tells whether
    population ``i`` has a momentum control.  ``fixed_f``, when set, freezes
    the production rate at that value on the factory during production.
    """

    grid: GridSpec
    epidemic: EpidemicParams
    weights: ControlWeights
    logistics: VaccineLogistics
    rho0: np.ndarray
    scheme: str = "forward"
    congestion: str = "sum"
    cost_variant: str = "full"
    mobile: tuple[bool, bool, bool, bool] = (True, True, True, True)
    fixed_f: float | None = None
    include_terminal_R: bool = True

    def replace(self, **changes) -> "SIRVModel":
        return replace(self, **changes)

    def violations(self) -> list[str]:
        out = [f"epidemic.{v}" for v in self.epidemic.violations()]
        out += [f"weights.{v}" for v in self.weights.violations()]
        out += [f"logistics.{v}" for v in self.logistics.violations()]
        if self.rho0.shape != (4,) + self.grid.space_shape:
            out.append(f"initial: shape {self.rho0.shape} does not match grid")
        elif not np.all(np.isfinite(self.rho0)) or (self.rho0 < 0).any():
            out.append("initial: densities must be finite and nonnegative")
        elif self.logistics.obstacle is not None:
            for i, name in enumerate(POPULATIONS):
                if name in self.logistics.obstacle_populations and (self.rho0[i][self.logistics.obstacle] > 0).any():
                    out.append(f"initial.{name}: positive density on the obstacle")
        if self.congestion not in ("sum", "separate"):
            out.append(f"congestion: unknown mode {self.congestion!r}")
        if self.cost_variant not in ("full", "vaccine"):
            out.append(f"cost_variant: unknown variant {self.cost_variant!r}")
        if self.fixed_f is not None and not 0 <= self.fixed_f <= self.logistics.f_max:
            out.append(f"fixed_f: {self.fixed_f} outside [0, f_max]")
        return out

    def validate(self) -> "SIRVModel":
        errs = self.violations()
        if errs:
            raise ConfigurationError("; ".join(errs))
        return self

    # masks over time ---------------------------------------------------
    def production_nodes(self) -> np.ndarray:
        """Boolean ``(nt,)``: nodes/slabs belonging to the production phase."""
        return np.arange(self.grid.nt) < self.grid.n_prime

    def obstacle_for(self, i: int) -> np.ndarray | None:
        obs = self.logistics.obstacle
        if obs is None or POPULATIONS[i] not in self.logistics.obstacle_populations:
            return None
        return obs

    def fixed_production(self) -> np.ndarray:
        f = np.zeros(self.grid.shape)
        if self.fixed_f is not None:
            f[self.production_nodes()] = self.fixed_f * self.logistics.factory
        return f

    def initial_state(self) -> StateVector:
        """Densities frozen at their initial values, zero controls."""
        u = StateVector.zeros(self.grid)
        u.rho[:] = self.rho0[:, None]
        for i in range(4):
            obs = self.obstacle_for(i)
            if obs is not None:
                u.rho[i, 1:, obs] = 0.0
        if self.fixed_f is not None:
            u.f = self.fixed_production()
        return u


def variable_mask(model: SIRVModel) -> StateVector:
    """Boolean state marking the entries the optimizer is free to change."""
    g = model.grid
    nt = g.nt
    prod = model.production_nodes()
    mask = StateVector(
        np.zeros((4,) + g.shape, dtype=bool),
        np.zeros((4, 2) + g.shape, dtype=bool),
        np.zeros(g.shape, dtype=bool),
    )
    mask.rho[:, 1:] = True
    for i in range(3):
        if model.mobile[i]:
            mask.m[i, :, : nt - 1] = True
    if model.mobile[V]:
        deliver = ~prod
        deliver[nt - 1] = False
        mask.m[V, :, deliver] = True
    if model.fixed_f is None:
        mask.f[prod] = model.logistics.factory
    return mask


# --------------------------------------------------------------------------
# costs


def kinetic_term(rho: float, m: Sequence[float], alpha: float) -> float:
    """``alpha |m|^2 / (2 rho)`` with the lower semicontinuous extension at 0."""
    if rho < 0:
        raise ValueError(f"density must be nonnegative, got {rho}")
    m2 = float(np.dot(m, m))
    if rho > 0:
        return alpha * m2 / (2.0 * rho)
    return 0.0 if m2 == 0.0 else math.inf


def _kinetic_field(rho: np.ndarray, m: np.ndarray, alpha: float) -> tuple[np.ndarray, float]:
    """Pointwise kinetic density and the largest |m| sitting on zero density."""
    m2 = m[0] ** 2 + m[1] ** 2
    pos = rho > 0
    out = np.zeros_like(rho)
    out[pos] = alpha * m2[pos] / (2.0 * rho[pos])
    bad = ~pos & (m2 > 0)
    worst = float(np.sqrt(m2[bad].max())) if bad.any() else 0.0
    return out, worst


@dataclass
class CostReport:
    """Smooth cost ``value`` itemized in ``terms``; ``feasible`` is False when an
    indicator constraint is violated above tolerance (the cost is then +inf)."""

    value: float
    terms: dict[str, float]
    feasible: bool
    violations: dict[str, float]

    @property
    def extended_value(self) -> float:
        return self.value if self.feasible else math.inf


def _smooth_terms(model: SIRVModel, u: StateVector) -> dict[str, float]:
    g = model.grid
    w = g.dt * g.cell_area
    wts = model.weights
    nt = g.nt
    rho, m, f = u.rho, u.m, u.f
    prod = model.production_nodes()
    vaccine_only = model.cost_variant == "vaccine"
    alpha = wts.alpha
    terms: dict[str, float] = {}

    rT = rho[:, nt - 1]
    if vaccine_only:
        terms["terminal"] = 0.5 * wts.a_V * float((rT[V] ** 2).sum()) * g.cell_area
    else:
        t = sum(0.5 * wts.a[i] * float((rT[i] ** 2).sum()) for i in (S, I, V))
        if model.include_terminal_R:
            t += 0.5 * wts.a_R * float(((1.0 - rT[R]) ** 2).sum())
        terms["terminal"] = t * g.cell_area

    kin = 0.0
    kin_worst = 0.0
    pops = (V,) if vaccine_only else (S, I, R, V)
    for i in pops:
        if not model.mobile[i]:
            continue
        nodes = np.arange(nt - 1) if i != V else np.arange(g.n_prime, nt - 1)
        k, worst = _kinetic_field(rho[i, nodes], m[i][:, nodes], alpha[i])
        kin += float(k.sum())
        kin_worst = max(kin_worst, worst)
    terms["kinetic"] = kin * w

    later = rho[:, 1:]
    cong = 0.5 * wts.d_V * float((later[V] ** 2).sum())
    if not vaccine_only:
        if model.congestion == "sum":
            cong += 0.5 * wts.d_P * float(((later[S] + later[I] + later[R]) ** 2).sum())
        else:
            cong += 0.5 * wts.d_P * float((later[:3] ** 2).sum())
    terms["congestion"] = cong * w

    terms["production"] = 0.5 * wts.d_0 * float((f[prod] ** 2).sum()) * w

    rng = (V,) if vaccine_only else (S, I, R, V)
    reg = float((f[: nt - 1] ** 2).sum())
    for i in rng:
        reg += float((later[i] ** 2).sum())
        if model.mobile[i]:
            reg += float((m[i][:, : nt - 1] ** 2).sum())
    terms["regularization"] = 0.5 * wts.lam * reg * w
    terms["_kinetic_mass_violation"] = kin_worst
    return terms


def evaluate_cost(model: SIRVModel, u: StateVector, tol: float = FEAS_TOL) -> CostReport:
    if u.rho.shape != (4,) + model.grid.shape or u.f.shape != model.grid.shape:
        raise ValueError("state does not live on the model grid")
    terms = _smooth_terms(model, u)
    kin_bad = terms.pop("_kinetic_mass_violation")
    viol = check_feasibility(model, u, tol)
    viol["kinetic_support"] = kin_bad
    feasible = all(v <= tol for v in viol.values())
    return CostReport(sum(terms.values()), terms, feasible, viol)


def smooth_cost(model: SIRVModel, u: StateVector) -> float:
    terms = _smooth_terms(model, u)
    terms.pop("_kinetic_mass_violation")
    return sum(terms.values())


def evaluate_monitor_lagrangian(model: SIRVModel, u: StateVector, p: DualVector) -> float:
    """Smooth cost minus the pairing of the multipliers with the PDE residuals."""
    from .operators import apply_A

    res = apply_A(model, u)
    return smooth_cost(model, u) - slab_dot(res, p.phi, model.grid)


def check_feasibility(model: SIRVModel, u: StateVector, tol: float = FEAS_TOL) -> dict[str, float]:
    """Worst violation of each hard constraint (0 means satisfied)."""
    g = model.grid
    lg = model.logistics
    prod = model.production_nodes()
    f = u.f
    # only slabs 0..nt-2 carry a production rate
    allowed = prod[:, None, None] & lg.factory[None]
    offsupport = np.where(allowed, 0.0, f)[: g.nt - 1]
    out = {
        "f_upper": max(0.0, float((f - lg.f_max).max())),
        "f_lower": max(0.0, float((-f).max())),
        "f_support": float(np.abs(offsupport).max()),
        "c_factory": max(0.0, float((u.rho[V][prod][:, lg.factory] - lg.c_factory).max(initial=-np.inf))),
        "nonnegativity": max(0.0, float((-u.rho).max())),
        "obstacle": 0.0,
    }
    if lg.obstacle is not None:
        worst = 0.0
        for i in range(4):
            obs = model.obstacle_for(i)
            if obs is not None:
                worst = max(worst, float(np.abs(u.rho[i][:, obs]).max(initial=0.0)))
        out["obstacle"] = worst
    return out
