"""G-prox primal-dual hybrid gradient iteration.

One iteration maps ``(u^k, phi^k)`` to ``(u^{k+1}, phi^{k+1})``:

1. ``u^{k+1} = prox_{tau G}(u^k + tau A'(u^k)^T phi^k)``, evaluated in
   closed form cell by cell (cubic roots for the densities that carry a
   kinetic term, shrinkage for the momenta, clipping for the production);
2. ``ubar = 2 u^{k+1} - u^k``;
3. ``phi^{k+1} = phi^k - sigma (A_i A_i^T)^{-1} r(ubar)`` with ``r`` either the
   nonlinear residual ``A(ubar)`` or its linearization around ``u^k``.

Within the primal block every density uses the iterate ``k`` of the other
populations, and the momenta use the freshly updated densities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ConfigurationError
from .model import SIRVModel, evaluate_monitor_lagrangian, smooth_cost, variable_mask
from .operators import (
    LinearizationPoint,
    Preconditioner,
    apply_A,
    apply_adjoint,
    apply_jacobian,
)
from .state import DualVector, I, R, S, StateVector, V

__all__ = [
    "SolverConfig",
    "IterationDiagnostics",
    "SolveResult",
    "SolverDivergence",
    "root_plus",
    "primal_update",
    "dual_update",
    "solve",
    "check_M_positivity",
]

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12


class SolverDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Step sizes and stopping rule.

    ``dual_residual`` selects ``"nonlinear"`` (``A(ubar)``) or
    ``"linearized"`` (``A(u^k) + A'(u^k)(ubar - u^k)``) for the dual step.
    ``min_iters`` suppresses the stopping test during the first iterations,
    where the cost may stall before the multipliers have built up.
    """

    tau: float = 0.05
    sigma: float = 0.2
    max_iters: int = 3000
    tol: float = 1e-6
    diag_every: int = 10
    min_iters: int = 100
    dual_residual: str = "nonlinear"
    time_basis: str = "pinned"

    def violations(self) -> list[str]:
        out = []
        if not (self.tau > 0 and self.sigma >= 0):
            out.append(f"tau, sigma: need tau > 0 and sigma >= 0, got {self.tau}, {self.sigma}")
        elif not self.tau * self.sigma < 1:
            out.append(f"tau*sigma: step-size rule requires tau*sigma < 1, got {self.tau * self.sigma:g}")
        if not self.tol > 0:
            out.append(f"tol: must be positive, got {self.tol}")
        if self.max_iters < 1:
            out.append(f"max_iters: must be at least 1, got {self.max_iters}")
        if self.diag_every < 1:
            out.append(f"diag_every: must be at least 1, got {self.diag_every}")
        if self.dual_residual not in ("nonlinear", "linearized"):
            out.append(f"dual_residual: unknown mode {self.dual_residual!r}")
        if self.time_basis not in ("pinned", "cosine"):
            out.append(f"time_basis: unknown basis {self.time_basis!r}")
        return out

    def validate(self) -> "SolverConfig":
        errs = self.violations()
        if errs:
            raise ConfigurationError("; ".join(errs))
        return self


@dataclass
class IterationDiagnostics:
    iteration: int
    monitor_lagrangian: float
    relative_error: float
    cost: float
    residual_norms: tuple[float, float, float, float]
    masses: np.ndarray | None = None


@dataclass
class SolveResult:
    u: StateVector
    p: DualVector
    trace: list[IterationDiagnostics] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    relative_error: float = math.inf


# --------------------------------------------------------------------------
# cubic root


def root_plus(a, b, c):
    """Largest real root of ``x^3 + a x^2 + b x + c``, clamped below at 0.

    Works elementwise on arrays.  One root of largest magnitude comes from
    Cardano's formula (one real root) or the trigonometric form (three real
    roots); the other two come from the quadratic left after dividing it out
    (Vieta's relations).  Deflating in both branches keeps small roots
    accurate when ``|a|`` is large, including when round-off puts a cubic
    with two close small roots on the wrong side of the discriminant test.
    Two safeguarded Newton steps follow.
    """
    a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, c)))
    scalar = a.ndim == 0
    # depressed cubic y^3 + p y + q with x = y - a/3
    p = b - a * a / 3.0
    q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c
    disc = (q * q) / 4.0 + (p * p * p) / 27.0
    one = disc > 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # one real root: Cardano, pairing terms to avoid cancellation
        t = -q / 2.0 - np.copysign(np.sqrt(np.where(one, disc, 0.0)), q)
        u1 = np.cbrt(t)
        x1 = u1 + np.where(u1 != 0, -p / (3.0 * u1), 0.0) - a / 3.0
        # three real roots: the trigonometric branch farthest from zero
        r = np.sqrt(np.maximum(-p / 3.0, 0.0))
        arg = np.clip(np.where(r > 0, -q / (2.0 * r * r * r), 0.0), -1.0, 1.0)
        th = np.arccos(arg) / 3.0
        xa = 2.0 * r * np.cos(th) - a / 3.0
        xb = 2.0 * r * np.cos(th - 2.0 * np.pi / 3.0) - a / 3.0
        xc = 2.0 * r * np.cos(th + 2.0 * np.pi / 3.0) - a / 3.0
        big = np.where(np.abs(xa) >= np.abs(xb), xa, xb)
        big = np.where(np.abs(big) >= np.abs(xc), big, xc)
        big = np.where(one, x1, big)
        # remaining pair: product -c/big, sum (b - product)/big
        nz = big != 0
        safe = np.where(nz, big, 1.0)
        prod = -c / safe
        ssum = (b - prod) / safe
        d2 = ssum * ssum - 4.0 * prod
        real = nz & (d2 >= -1e-12 * (ssum * ssum + np.abs(prod)))
        d = np.sqrt(np.maximum(d2, 0.0))
        h = 0.5 * (ssum + np.copysign(d, ssum))
        other = np.where(h != 0, prod / np.where(h != 0, h, 1.0), 0.0)
        pair = np.maximum(h, other)
        x = np.where(real, np.maximum(big, pair), big)
        x = np.where(nz | one, x, xa)

    for _ in range(2):
        fx = ((x + a) * x + b) * x + c
        dfx = (3.0 * x + 2.0 * a) * x + b
        ok = dfx > 0
        step = np.where(ok, fx / np.where(ok, dfx, 1.0), 0.0)
        xn = x - step
        # keep the Newton step only if it reduces the residual
        fn = ((xn + a) * xn + b) * xn + c
        x = np.where(np.abs(fn) <= np.abs(fx), xn, x)
    x = np.maximum(x, 0.0)
    return float(x) if scalar else x


# --------------------------------------------------------------------------
# primal step


def _density_prox(z, tau, q, h, kin):
    """Minimize ``q/2 r^2 + h r + kin/r + (r - z)^2/(2 tau)`` over ``r >= 0``.

    ``kin = alpha |m|^2 / 2`` (``None`` for no kinetic term).
    """
    s = tau / (1.0 + tau * q)
    if kin is None:
        return np.maximum(s * (z / tau - h), 0.0)
    return root_plus(s * (h - z / tau), 0.0, -s * kin)


def primal_update(
    model: SIRVModel,
    u: StateVector,
    p: DualVector,
    tau: float,
    mask: StateVector | None = None,
    adjoint: StateVector | None = None,
    iteration: int | None = None,
) -> StateVector:
    """Closed-form proximal step of the cost at ``u + tau A'(u)^T phi``."""
    g = model.grid
    nt = g.nt
    n1 = g.n_prime
    w = model.weights
    lg = model.logistics
    mask = variable_mask(model) if mask is None else mask
    if adjoint is None:
        adjoint = apply_adjoint(model, u, p)
    z = u + adjoint * tau
    vaccine_only = model.cost_variant == "vaccine"
    alpha = w.alpha
    lam = w.lam
    new = u.copy()

    # --- densities, Jacobi in the population index
    for i in (S, I, R):
        zi = z.rho[i]
        if vaccine_only:
            q, h = 0.0, 0.0
        else:
            q = w.d_P + lam
            if model.congestion == "sum":
                h = w.d_P * (u.rho[:3, 1:].sum(axis=0) - u.rho[i, 1:])
            else:
                h = np.zeros_like(zi[1:])
        hh = np.broadcast_to(h, zi[1:].shape)
        kin = 0.5 * alpha[i] * (u.m[i, 0] ** 2 + u.m[i, 1] ** 2) if (model.mobile[i] and not vaccine_only) else None
        mid = slice(1, nt - 1)
        new.rho[i, mid] = _density_prox(zi[mid], tau, q, hh[: nt - 2], None if kin is None else kin[mid])
        # terminal node: no kinetic term, terminal cost with weight 1/dt
        qT, hT = q, hh[nt - 2]
        if not vaccine_only:
            qT = q + w.a[i] / g.dt
            if i == R and model.include_terminal_R:
                hT = hT - w.a_R / g.dt
        new.rho[i, nt - 1] = _density_prox(zi[nt - 1], tau, qT, hT, None)

    zV = z.rho[V]
    qV = w.d_V + lam
    prod = slice(1, n1)
    new.rho[V, prod] = np.clip(zV[prod] / (1.0 + tau * qV), 0.0, lg.c_factory)
    deliv = slice(n1, nt - 1)
    kinV = 0.5 * alpha[V] * (u.m[V, 0, deliv] ** 2 + u.m[V, 1, deliv] ** 2) if model.mobile[V] else None
    new.rho[V, deliv] = _density_prox(zV[deliv], tau, qV, 0.0, kinV)
    new.rho[V, nt - 1] = _density_prox(zV[nt - 1], tau, qV + w.a_V / g.dt, 0.0, None)

    for i in range(4):
        obs = model.obstacle_for(i)
        if obs is not None:
            new.rho[i, 1:, obs] = 0.0
    new.rho[:, 0] = u.rho[:, 0]

    # --- momenta, using the updated densities
    for i in range(4):
        if not model.mobile[i]:
            new.m[i] = 0.0
            continue
        lo = 0 if i != V else n1
        sl = slice(lo, nt - 1)
        lam_i = lam if (not vaccine_only or i == V) else 0.0
        r = new.rho[i, sl]
        denom = tau * alpha[i] + (1.0 + tau * lam_i) * r
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(r > 0, r / np.where(denom > 0, denom, 1.0), 0.0)
        new.m[i] = 0.0
        new.m[i][:, sl] = coef * z.m[i][:, sl]

    # --- production rate
    if model.fixed_f is None:
        fz = z.f / (1.0 + tau * (w.d_0 + lam))
        new.f = np.where(mask.f, np.clip(fz, 0.0, lg.f_max), 0.0)
    else:
        new.f = model.fixed_production()

    if not new.is_finite():
        where = f" at iteration {iteration}" if iteration is not None else ""
        raise FloatingPointError(f"non-finite value in primal update{where}")
    return new


# --------------------------------------------------------------------------
# dual step


def dual_update(
    model: SIRVModel,
    p: DualVector,
    u_new: StateVector,
    u_old: StateVector,
    sigma: float,
    precond: Preconditioner,
    mode: str = "nonlinear",
    iteration: int | None = None,
) -> tuple[DualVector, np.ndarray]:
    """Preconditioned dual step at the extrapolated point ``2 u_new - u_old``.

    Returns the new multipliers and the residual used for the step.
    """
    ubar = u_new * 2.0 - u_old
    if mode == "nonlinear":
        res = apply_A(model, ubar)
    elif mode == "linearized":
        res = apply_A(model, u_old) + apply_jacobian(model, u_old, ubar - u_old)
    else:
        raise ValueError(f"unknown dual residual mode {mode!r}")
    if not np.all(np.isfinite(res)):
        where = f" at iteration {iteration}" if iteration is not None else ""
        raise FloatingPointError(f"non-finite constraint residual in dual update{where}")
    if sigma == 0:
        return p.copy(), res
    return DualVector(p.phi - sigma * precond.solve_all(res)), res


# --------------------------------------------------------------------------
# driver


def solve(
    model: SIRVModel,
    config: SolverConfig,
    initial: tuple[StateVector, DualVector] | None = None,
    record_masses: bool = False,
    callback=None,
) -> SolveResult:
    """Run the iteration until the relative change of the cost drops below
    ``config.tol`` or ``config.max_iters`` is reached."""
    config.validate()
    model.validate()
    g = model.grid
    w = g.dt * g.cell_area
    precond = Preconditioner(model, config.time_basis)
    mask = variable_mask(model)
    if initial is None:
        u, p = model.initial_state(), DualVector.zeros(g)
    else:
        u, p = initial[0].copy(), initial[1].copy()
    if (u.rho < 0).any():
        raise ConfigurationError("initial densities must be nonnegative")

    result = SolveResult(u, p)
    G_old = smooth_cost(model, u)
    rel = math.inf
    for k in range(1, config.max_iters + 1):
        u_new = primal_update(model, u, p, config.tau, mask=mask, iteration=k)
        p, res = dual_update(model, p, u_new, u, config.sigma, precond, config.dual_residual, iteration=k)
        u = u_new
        G = smooth_cost(model, u)
        rel = abs(G - G_old) / max(abs(G_old), 1e-300)
        G_old = G
        if not math.isfinite(G) or abs(G) > DIVERGENCE_LIMIT:
            raise SolverDivergence(f"cost {G:g} exceeded the divergence limit at iteration {k}")

        done = k >= config.min_iters and rel < config.tol
        if k % config.diag_every == 0 or done or k == config.max_iters or k == 1:
            lag = evaluate_monitor_lagrangian(model, u, p)
            if not math.isfinite(lag) or abs(lag) > DIVERGENCE_LIMIT:
                raise SolverDivergence(f"monitored Lagrangian {lag:g} diverged at iteration {k}")
            norms = tuple(float(np.sqrt(w * np.sum(r * r))) for r in res)
            masses = u.rho.sum(axis=(2, 3)) * g.cell_area if record_masses else None
            diag = IterationDiagnostics(k, lag, rel, G, norms, masses)
            result.trace.append(diag)
            if callback is not None:
                callback(diag, u, p)
            log.debug("iter %d  L=%.6e  rel=%.3e  res=%s", k, lag, rel, norms)
        result.iterations = k
        if done:
            result.converged = True
            break

    result.u, result.p, result.relative_error = u, p, rel
    return result


# --------------------------------------------------------------------------
# positivity of the PDHG metric


@dataclass
class PositivityReport:
    trials: int
    n_positive: int
    min_value: float
    min_rayleigh: float
    max_rayleigh: float

    @property
    def passed(self) -> bool:
        return self.n_positive == self.trials


def check_M_positivity(
    model: SIRVModel,
    ubar: StateVector,
    tau: float,
    sigma: float,
    trials: int = 100,
    rng: np.random.Generator | None = None,
    raise_on_failure: bool = False,
) -> PositivityReport:
    """Evaluate ``|u|^2/tau + |A'^T p|^2/sigma - 2 <u, A'^T p>`` on random pairs.

    The dual norm is the one induced by the linearized operator at
    ``ubar``; primal entries are restricted to the free variables.
    The Rayleigh quotients are taken with respect to ``|u|^2 + |A'^T p|^2``.
    """
    if not tau * sigma < 1:
        raise ConfigurationError(f"tau*sigma must be below 1, got {tau * sigma:g}")
    rng = np.random.default_rng(0) if rng is None else rng
    g = model.grid
    pt = LinearizationPoint.from_state(ubar)
    mask = variable_mask(model)
    vals, rq = [], []
    for t in range(trials):
        u = StateVector.random(g, rng).where(mask)
        p = DualVector.random(g, rng)
        if t == 0:
            p = DualVector.zeros(g)
        elif t == 1:
            u = StateVector.zeros(g)
        atp = apply_adjoint(model, pt, p).where(mask)
        uu = u.dot(u, g)
        aa = atp.dot(atp, g)
        val = uu / tau + aa / sigma - 2.0 * u.dot(atp, g)
        vals.append(val)
        rq.append(val / (uu + aa))
    vals = np.array(vals)
    n_pos = int((vals > 0).sum())
    rep = PositivityReport(trials, n_pos, float(vals.min()), float(min(rq)), float(max(rq)))
    if raise_on_failure and not rep.passed:
        raise AssertionError(f"metric not positive: {trials - n_pos} of {trials} trials failed")
    return rep

