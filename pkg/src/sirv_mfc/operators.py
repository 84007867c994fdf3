"""Discrete PDE constraint, its linearization, adjoint and preconditioners.

The constraint ``A(u)`` has one residual per population and per time slab
``n = 0 .. nt-2``, built with forward Euler in time: transport, diffusion
and reaction terms of slab ``n`` are evaluated at the node ``n``.  For
``S, I, R, V`` it reads

.. math::

    D_t\\rho_S + \\nabla\\cdot m_S - \\tfrac{\\eta_S^2}{2}\\Delta\\rho_S
        + \\beta\\rho_S K*\\rho_I + \\theta_1\\rho_S\\rho_V,

    D_t\\rho_I + \\nabla\\cdot m_I - \\tfrac{\\eta_I^2}{2}\\Delta\\rho_I
        - \\beta\\rho_S K*\\rho_I + \\gamma\\rho_I,

    D_t\\rho_R + \\nabla\\cdot m_R - \\tfrac{\\eta_R^2}{2}\\Delta\\rho_R
        - \\gamma\\rho_I - \\theta_1\\rho_S\\rho_V,

    D_t\\rho_V - f\\,1_{[0,T')} + \\nabla\\cdot m_V\\,1_{[T',T)} + \\theta_2\\rho_S\\rho_V.

``apply_jacobian`` is the exact derivative of ``A`` and ``apply_adjoint`` its
transpose for the ``dt * cell_area`` weighted inner products, so the
linearization ``A(ubar) + A'(ubar)(u - ubar)`` is second order accurate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    ConfigurationError,
    dct_forward,
    dct_inverse,
    divergence,
    gradient,
    kernel_convolve,
    laplacian,
    laplacian_symbol,
)
from .model import SIRVModel, variable_mask
from .state import POPULATIONS, DualVector, I, R, S, StateVector, V

__all__ = [
    "LinearizationPoint",
    "apply_A",
    "constraint_rates",
    "apply_jacobian",
    "apply_linearized",
    "apply_adjoint",
    "smooth_cost_gradient",
    "Preconditioner",
    "pinned_time_basis",
    "kkt_residuals",
]

EPS0 = 1e-8


@dataclass(frozen=True, eq=False)
class LinearizationPoint:
    """Read-only copies of the densities entering ``A`` nonlinearly."""

    rho_S: np.ndarray
    rho_I: np.ndarray
    rho_V: np.ndarray

    @classmethod
    def from_state(cls, u: StateVector) -> "LinearizationPoint":
        arrs = []
        for i in (S, I, V):
            a = np.array(u.rho[i], dtype=float, copy=True)
            a.setflags(write=False)
            arrs.append(a)
        return cls(*arrs)


def _as_point(ubar) -> LinearizationPoint:
    return ubar if isinstance(ubar, LinearizationPoint) else LinearizationPoint.from_state(ubar)


def _check(model: SIRVModel, u: StateVector) -> None:
    if u.rho.shape != (4,) + model.grid.shape:
        raise ValueError(f"state shape {u.rho.shape} does not match grid {model.grid.shape}")


def _spatial_linear(model: SIRVModel, rho, m, f, slabs: np.ndarray) -> np.ndarray:
    """Divergence, diffusion and source terms on the given slab indices.

    ``rho``, ``m``, ``f`` hold the node values of those slabs along their
    time axis.
    """
    g = model.grid
    out = np.zeros_like(rho)
    eta = model.epidemic.eta
    for i in (S, I, R):
        if eta[i]:
            out[i] -= 0.5 * eta[i] ** 2 * laplacian(rho[i], g)
        if model.mobile[i]:
            out[i] += divergence(m[i], g, model.scheme)
    prod = slabs < g.n_prime
    out[V, prod] -= f[prod]
    if model.mobile[V] and (~prod).any():
        out[V, ~prod] += divergence(m[V][:, ~prod], g, model.scheme)
    return out


def _reactions(model: SIRVModel, rho: np.ndarray) -> np.ndarray:
    ep = model.epidemic
    rS, rI, rV = rho[S], rho[I], rho[V]
    inf = ep.beta * rS * kernel_convolve(ep.kernel, rI, model.grid)
    sv = rS * rV
    return np.stack(
        [inf + ep.theta1 * sv, -inf + ep.gamma * rI, -ep.gamma * rI - ep.theta1 * sv, ep.theta2 * sv]
    )


def constraint_rates(model: SIRVModel, rho, m, f, slabs) -> np.ndarray:
    """Everything in ``A`` except the time difference, for the given slabs.

    ``A(u)[:, n] = (rho[:, n+1] - rho[:, n]) / dt + rates[:, n]``; the forward
    simulator steps with exactly this function.
    """
    slabs = np.atleast_1d(np.asarray(slabs))
    return _spatial_linear(model, rho, m, f, slabs) + _reactions(model, rho)


def _transport(model: SIRVModel, u: StateVector) -> np.ndarray:
    """Linear part of ``A``: time difference, divergence, diffusion, source."""
    g = model.grid
    slabs = np.arange(g.nt - 1)
    return (u.rho[:, 1:] - u.rho[:, :-1]) / g.dt + _spatial_linear(
        model, u.rho[:, :-1], u.m[:, :, :-1], u.f[:-1], slabs
    )


def apply_A(model: SIRVModel, u: StateVector) -> np.ndarray:
    """Nonlinear residuals, shape ``(4, nt-1, nx1, nx2)``."""
    _check(model, u)
    return _transport(model, u) + _reactions(model, u.rho[:, :-1])


def apply_jacobian(model: SIRVModel, ubar, h: StateVector) -> np.ndarray:
    """Derivative of ``A`` at ``ubar`` applied to the direction ``h``."""
    _check(model, h)
    pt = _as_point(ubar)
    ep = model.epidemic
    g = model.grid
    out = _transport(model, h)
    bS, bI, bV = pt.rho_S[:-1], pt.rho_I[:-1], pt.rho_V[:-1]
    hS, hI, hV = h.rho[S, :-1], h.rho[I, :-1], h.rho[V, :-1]
    inf = ep.beta * (hS * kernel_convolve(ep.kernel, bI, g) + bS * kernel_convolve(ep.kernel, hI, g))
    sv = hS * bV + bS * hV
    out[S] += inf + ep.theta1 * sv
    out[I] += -inf + ep.gamma * hI
    out[R] += -ep.gamma * hI - ep.theta1 * sv
    out[V] += ep.theta2 * sv
    return out


def apply_linearized(model: SIRVModel, ubar: StateVector, u: StateVector) -> np.ndarray:
    """``A(ubar) + A'(ubar)(u - ubar)``."""
    return apply_A(model, ubar) + apply_jacobian(model, ubar, u - ubar)


def apply_adjoint(model: SIRVModel, ubar, p: DualVector | np.ndarray) -> StateVector:
    """Transpose of :func:`apply_jacobian` with respect to ``phi``."""
    phi = p.phi if isinstance(p, DualVector) else np.asarray(p)
    pt = _as_point(ubar)
    g = model.grid
    ep = model.epidemic
    nt = g.nt
    n1 = g.n_prime
    out = StateVector.zeros(g)

    # time difference
    out.rho[:, 1:] += phi / g.dt
    out.rho[:, :-1] -= phi / g.dt

    eta = ep.eta
    for i in (S, I, R):
        if eta[i]:
            out.rho[i, :-1] -= 0.5 * eta[i] ** 2 * laplacian(phi[i], g)
        if model.mobile[i]:
            out.m[i][:, :-1] = -gradient(phi[i], g, model.scheme)
    if model.mobile[V]:
        out.m[V][:, n1 : nt - 1] = -gradient(phi[V, n1:], g, model.scheme)
    out.f[:n1] = -phi[V, :n1]

    pS, pI, pR, pV = phi
    bS, bI, bV = pt.rho_S[:-1], pt.rho_I[:-1], pt.rho_V[:-1]
    vac = ep.theta1 * (pS - pR) + ep.theta2 * pV
    out.rho[S, :-1] += ep.beta * kernel_convolve(ep.kernel, bI, g) * (pS - pI) + bV * vac
    out.rho[I, :-1] += ep.beta * kernel_convolve(ep.kernel, bS * (pS - pI), g) + ep.gamma * (pI - pR)
    out.rho[V, :-1] += bS * vac
    return out


# --------------------------------------------------------------------------
# gradient of the smooth cost, in units of the dt*cell_area inner product


def smooth_cost_gradient(model: SIRVModel, u: StateVector) -> StateVector:
    """Gradient of the smooth cost on cells with positive density.

    Kinetic terms are differentiated where ``rho > 0``; cells with zero
    density contribute no kinetic gradient.
    """
    g = model.grid
    w = model.weights
    nt = g.nt
    n1 = g.n_prime
    rho, m = u.rho, u.m
    vaccine_only = model.cost_variant == "vaccine"
    out = StateVector.zeros(g)

    later = rho[:, 1:]
    if not vaccine_only:
        if model.congestion == "sum":
            out.rho[:3, 1:] += w.d_P * (later[S] + later[I] + later[R])
        else:
            out.rho[:3, 1:] += w.d_P * later[:3]
    out.rho[V, 1:] += w.d_V * later[V]

    pops = (V,) if vaccine_only else (S, I, R, V)
    for i in pops:
        out.rho[i, 1:] += w.lam * later[i]
    out.f[: nt - 1] += w.lam * u.f[: nt - 1]
    out.f[:n1] += w.d_0 * u.f[:n1]

    # terminal terms carry weight cell_area, i.e. 1/dt in slab units
    if vaccine_only:
        out.rho[V, nt - 1] += w.a_V * rho[V, nt - 1] / g.dt
    else:
        for i in (S, I, V):
            out.rho[i, nt - 1] += w.a[i] * rho[i, nt - 1] / g.dt
        if model.include_terminal_R:
            out.rho[R, nt - 1] -= w.a_R * (1.0 - rho[R, nt - 1]) / g.dt

    alpha = w.alpha
    for i in pops:
        if not model.mobile[i]:
            continue
        lo = 0 if i != V else n1
        r = rho[i, lo : nt - 1]
        mm = m[i][:, lo : nt - 1]
        pos = r > 0
        safe = np.where(pos, r, 1.0)
        m2 = mm[0] ** 2 + mm[1] ** 2
        out.rho[i, lo : nt - 1] += np.where(pos, -alpha[i] * m2 / (2 * safe**2), 0.0)
        out.m[i][:, lo : nt - 1] += np.where(pos, alpha[i] * mm / safe, 0.0) + w.lam * mm
    return out


# --------------------------------------------------------------------------
# preconditioner


def pinned_time_basis(m: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of ``D D^T`` for the forward difference with a pinned start.

    ``D D^T`` is tridiagonal with diagonal ``[1, 2, ..., 2] / dt^2`` and
    off-diagonals ``-1 / dt^2``.  Its eigenvectors are
    ``cos(w_p (n + 1/2))`` with ``w_p = pi (p + 1/2) / (m + 1/2)``.
    Returns ``(eigenvalues, Q)`` with orthonormal columns in ``Q``.
    """
    w = np.pi * (np.arange(m) + 0.5) / (m + 0.5)
    n = np.arange(m) + 0.5
    Q = np.cos(np.outer(n, w))
    Q /= np.linalg.norm(Q, axis=0)
    lam = (2.0 - 2.0 * np.cos(w)) / dt**2
    return lam, Q


def _time_operator(m: int, dt: float, basis: str) -> np.ndarray:
    T = np.diag(np.full(m, 2.0)) - np.eye(m, k=1) - np.eye(m, k=-1)
    T[0, 0] = 1.0
    if basis == "cosine":
        T[-1, -1] = 1.0
    return T / dt**2


def _time_apply(mat: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multiply the time axis (third from last) of ``x`` by ``mat``."""
    sh = x.shape
    flat = x.reshape(sh[:-3] + (sh[-3], sh[-2] * sh[-1]))
    return np.matmul(mat, flat).reshape(sh[:-3] + (mat.shape[0],) + sh[-2:])


class Preconditioner:
    """Constant-coefficient surrogates for ``A_i A_i^T`` and their inverses.

    Symbols, with ``L`` the eigenvalues of the negative 5-point Laplacian and
    ``T`` those of the time operator::

        S: T + eta^4/4 L^2 + (1 + (beta+theta1) eta^2) L + (beta+theta1)^2
        I: T + eta^4/4 L^2 + (1 + (gamma+beta) eta^2) L + (gamma+beta)^2
        R: T + eta^4/4 L^2 + L
        V: T + L + theta2^2

    ``time_basis="pinned"`` uses the exact eigenbasis of ``D_t D_t^T`` with the
    initial slice fixed (all symbols positive).  ``"cosine"`` uses a DCT-II in
    time; zero symbols are then lifted by ``eps0``.
    """

    def __init__(self, model: SIRVModel, time_basis: str = "pinned", eps0: float = EPS0):
        if time_basis not in ("pinned", "cosine"):
            raise ConfigurationError(f"unknown time basis {time_basis!r}")
        g = model.grid
        ep = model.epidemic
        self.grid = g
        self.time_basis = time_basis
        self.eps0 = eps0
        M = g.nt - 1
        if time_basis == "pinned":
            tsym, self._Q = pinned_time_basis(M, g.dt)
        else:
            tsym = 2.0 / g.dt**2 * (1.0 - np.cos(np.pi * np.arange(M) / M))
            self._Q = None
        self._T = _time_operator(M, g.dt, time_basis)
        L = laplacian_symbol(g)
        T = tsym[:, None, None]
        self._coef = []
        sym = []
        for i, c in enumerate((ep.beta + ep.theta1, ep.gamma + ep.beta, None, ep.theta2)):
            if i == V:
                a4, a2, a0 = 0.0, 1.0, c**2
            elif i == R:
                a4, a2, a0 = ep.eta_R**4 / 4, 1.0, 0.0
            else:
                eta = ep.eta[i]
                a4, a2, a0 = eta**4 / 4, 1.0 + c * eta**2, c**2
            self._coef.append((a4, a2, a0))
            sym.append(T + a4 * L**2 + a2 * L + a0)
        self.symbols = np.stack(sym)
        self._lift = np.zeros(4, dtype=bool)
        for i in range(4):
            zero = self.symbols[i] <= 0
            if zero.any():
                if eps0 <= 0:
                    raise ConfigurationError(f"preconditioner symbol for {POPULATIONS[i]} vanishes")
                self.symbols[i][zero] += eps0
                self._lift[i] = True
        if not (self.symbols > 0).all():
            raise ConfigurationError("preconditioner symbols must be strictly positive")

    # transforms ---------------------------------------------------------
    def forward(self, r: np.ndarray) -> np.ndarray:
        c = dct_forward(r, axes=(-2, -1))
        if self._Q is None:
            return dct_forward(c, axes=(-3,))
        return _time_apply(self._Q.T, c)

    def inverse(self, c: np.ndarray) -> np.ndarray:
        if self._Q is None:
            c = dct_inverse(c, axes=(-3,))
        else:
            c = _time_apply(self._Q, c)
        return dct_inverse(c, axes=(-2, -1))

    def solve(self, i: int, r: np.ndarray) -> np.ndarray:
        """``(A_i A_i^T)^{-1} r`` for slab fields ``r`` of shape ``(nt-1, nx1, nx2)``."""
        if not np.all(np.isfinite(r)):
            raise FloatingPointError(f"non-finite residual for {POPULATIONS[i]}")
        return self.inverse(self.forward(r) / self.symbols[i])

    def solve_all(self, r: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(r)):
            raise FloatingPointError("non-finite residual passed to the preconditioner")
        return self.inverse(self.forward(r) / self.symbols)

    def apply_surrogate(self, i: int, phi: np.ndarray) -> np.ndarray:
        """The surrogate operator in physical space (inverse of :meth:`solve`)."""
        g = self.grid
        a4, a2, a0 = self._coef[i]
        out = _time_apply(self._T, phi)
        lap = laplacian(phi, g)
        out = out - a2 * lap + a0 * phi
        if a4:
            out += a4 * laplacian(lap, g)
        if self._lift[i]:
            # the lifted modes are exactly those with zero symbol; set their
            # coefficients directly so round-off in the stencils is not
            # amplified by 1/eps0 in a later solve
            zero = self.symbols[i] - self.eps0 <= 0
            c = np.where(zero, self.eps0 * self.forward(phi), self.forward(out))
            out = self.inverse(c)
        return out


# --------------------------------------------------------------------------
# optimality diagnostics


def kkt_residuals(model: SIRVModel, u: StateVector, p: DualVector) -> dict[str, float]:
    """L2 norms of the discrete optimality system at ``(u, p)``.

    Stationarity of the Lagrangian ``G(u) - <phi, A(u)>`` is measured with
    the projection form ``x - P(x - grad)`` so that bound constraints are
    handled by complementarity.  Entries:

    * ``phi_S``, ``phi_I``, ``phi_R``: density stationarity on interior nodes;
    * ``phi_V_production``, ``phi_V_delivery``: the two phases of ``rho_V``;
    * ``terminal_<i>``: stationarity at the final node;
    * ``forward_<i>``: the constraint with the optimal momentum
      ``m = -rho grad(phi) / (alpha + lam rho)`` substituted;
    * ``f``: optimality of the production rate.
    """
    g = model.grid
    nt = g.nt
    n1 = g.n_prime
    w = g.dt * g.cell_area
    mask = variable_mask(model)
    grad = smooth_cost_gradient(model, u) - apply_adjoint(model, u, p)

    def l2(a):
        return float(np.sqrt(w * np.sum(a * a)))

    # projected stationarity for rho >= 0 (and rho_V <= C on the factory)
    lower = np.zeros_like(u.rho)
    upper = np.full_like(u.rho, np.inf)
    for i in range(4):
        obs = model.obstacle_for(i)
        if obs is not None:
            upper[i][:, obs] = 0.0
    upper[V, :n1][:, model.logistics.factory] = np.minimum(upper[V, :n1][:, model.logistics.factory], model.logistics.c_factory)
    rho_res = (u.rho - np.clip(u.rho - grad.rho, lower, upper)) * mask.rho

    out: dict[str, float] = {}
    for i, name in ((S, "S"), (I, "I"), (R, "R")):
        out[f"phi_{name}"] = l2(rho_res[i, 1 : nt - 1])
    out["phi_V_production"] = l2(rho_res[V, 1:n1])
    out["phi_V_delivery"] = l2(rho_res[V, n1 : nt - 1])
    for i, name in enumerate(POPULATIONS):
        out[f"terminal_{name}"] = l2(rho_res[i, nt - 1]) * np.sqrt(g.dt)

    # forward equations with the optimal momentum substituted
    alpha = model.weights.alpha
    lam = model.weights.lam
    ustar = u.copy()
    ustar.m[:] = 0.0
    for i in range(4):
        if not model.mobile[i]:
            continue
        lo = 0 if i != V else n1
        r = u.rho[i, lo : nt - 1]
        gphi = gradient(p.phi[i, lo:], g, model.scheme)
        ustar.m[i][:, lo : nt - 1] = -r * gphi / (alpha[i] + lam * r)
    res = apply_A(model, ustar)
    for i, name in enumerate(POPULATIONS):
        out[f"forward_{name}"] = l2(res[i])

    if model.fixed_f is None:
        f = u.f
        f_res = (f - np.clip(f - grad.f, 0.0, model.logistics.f_max)) * mask.f
        out["f"] = l2(f_res)
    else:
        out["f"] = 0.0
    return out
