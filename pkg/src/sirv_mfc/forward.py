"""Forward integrators used as oracles for the constraint operator.

``forward_simulate`` marches the discrete SIRV system in time for given
controls, reusing the spatial stencils of :mod:`sirv_mfc.operators`.  With
the default explicit Euler scheme its output satisfies ``A(u) = 0`` up to
round-off.  ``sir_ode`` is a plain RK4 integrator for the classical
three-compartment model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ConfigurationError
from .model import SIRVModel
from .operators import apply_A, constraint_rates
from .state import POPULATIONS, StateVector, V

__all__ = [
    "OdeState",
    "ForwardSimulationError",
    "sir_ode",
    "forward_simulate",
    "cross_validate",
    "CFL_LIMIT",
]

CFL_LIMIT = 0.9


class ForwardSimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OdeState:
    S: float
    I: float
    R: float = 0.0

    def __post_init__(self):
        for name in ("S", "I", "R"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def sir_ode(beta: float, gamma: float, initial: OdeState, T: float, steps: int) -> np.ndarray:
    """Classical RK4 for ``S' = -beta S I``, ``I' = beta S I - gamma I``, ``R' = gamma I``.

    Returns an array of shape ``(steps + 1, 3)`` with the states at
    ``t_n = n T / steps``.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if beta < 0 or gamma < 0 or T < 0:
        raise ValueError("beta, gamma and T must be nonnegative")

    def rhs(y):
        s, i, _ = y
        return np.array([-beta * s * i, beta * s * i - gamma * i, gamma * i])

    h = T / steps
    out = np.empty((steps + 1, 3))
    y = np.array([initial.S, initial.I, initial.R], dtype=float)
    out[0] = y
    for n in range(steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[n + 1] = y
    return out


def _cfl_number(model: SIRVModel, rho: np.ndarray, m: np.ndarray) -> float:
    g = model.grid
    speed = 0.0
    for i in range(4):
        if not model.mobile[i]:
            continue
        mm = np.hypot(m[i, 0], m[i, 1])
        pos = rho[i] > 0
        if pos.any():
            speed = max(speed, float((mm[pos] / rho[i][pos]).max()))
    eta2 = max(model.epidemic.eta) ** 2
    h = min(g.dx1, g.dx2)
    return g.dt * (speed / h + 2.0 * eta2 / h**2)


def forward_simulate(
    model: SIRVModel,
    momenta: np.ndarray | None = None,
    production: np.ndarray | None = None,
    velocities: np.ndarray | None = None,
    method: str = "euler",
    check_negative: bool = True,
) -> StateVector:
    """Integrate the SIRV system from ``model.rho0`` for the given controls.

    Parameters
    ----------
    momenta, velocities
        Control fields of shape ``(4, 2, nt, nx1, nx2)``; give at most one.
        Velocities are turned into momenta ``m = rho v`` on the fly.
    production
        Production rate ``(nt, nx1, nx2)``; defaults to the model's fixed
        rate when it has one, else zero.
    method
        ``"euler"`` steps exactly the discrete constraint.  ``"rk4"`` applies
        classical RK4 to the same semi-discrete system (controls held fixed
        over each step); it is used to compare the homogeneous case against
        the ODE.

    Raises
    ------
    ForwardSimulationError
        On a CFL violation or when a density turns negative.
    """
    if momenta is not None and velocities is not None:
        raise ValueError("give either momenta or velocities, not both")
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    g = model.grid
    nt = g.nt
    u = StateVector.zeros(g)
    if momenta is not None:
        u.m[:] = momenta
    if production is not None:
        u.f[:] = production
    elif model.fixed_f is not None:
        u.f[:] = model.fixed_production()
    for i in range(4):
        if not model.mobile[i]:
            u.m[i] = 0.0
    u.m[V][:, : g.n_prime] = 0.0
    u.rho[:, 0] = model.rho0

    def rate(rho, m, f, n):
        return constraint_rates(model, rho[:, None], m[:, :, None], f[None], [n])[:, 0]

    for n in range(nt - 1):
        rho = u.rho[:, n]
        if velocities is not None:
            u.m[:, :, n] = rho[:, None] * velocities[:, :, n]
            for i in range(4):
                if not model.mobile[i]:
                    u.m[i, :, n] = 0.0
            if n < g.n_prime:
                u.m[V, :, n] = 0.0
        m = u.m[:, :, n]
        cfl = _cfl_number(model, rho, m)
        if cfl >= CFL_LIMIT:
            raise ForwardSimulationError(f"CFL number {cfl:.3g} >= {CFL_LIMIT} at step {n}")
        f = u.f[n]
        if method == "euler":
            new = rho - g.dt * rate(rho, m, f, n)
        else:
            h = g.dt
            k1 = -rate(rho, m, f, n)
            k2 = -rate(rho + 0.5 * h * k1, m, f, n)
            k3 = -rate(rho + 0.5 * h * k2, m, f, n)
            k4 = -rate(rho + h * k3, m, f, n)
            new = rho + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if check_negative and (new < -1e-14).any():
            idx = np.unravel_index(int(np.argmin(new)), new.shape)
            raise ForwardSimulationError(
                f"negative density {new[idx]:.3e} for {POPULATIONS[idx[0]]} at step {n + 1}, cell {tuple(int(k) for k in idx[1:])}"
            )
        u.rho[:, n + 1] = new
    return u


@dataclass
class CrossValidationReport:
    max_residual: dict[str, float]
    location: dict[str, tuple[int, int, int]]

    @property
    def worst(self) -> float:
        return max(self.max_residual.values())


def cross_validate(model: SIRVModel, u: StateVector) -> CrossValidationReport:
    """Max-norm of each constraint residual and the slab/cell where it occurs."""
    if u.rho.shape != (4,) + model.grid.shape:
        raise ConfigurationError("state does not live on the model grid")
    res = np.abs(apply_A(model, u))
    out, loc = {}, {}
    for i, name in enumerate(POPULATIONS):
        k = int(np.argmax(res[i]))
        out[name] = float(res[i].flat[k])
        loc[name] = tuple(int(x) for x in np.unravel_index(k, res[i].shape))
    return CrossValidationReport(out, loc)
