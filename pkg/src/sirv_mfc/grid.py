"""Space-time grid, Neumann finite differences and spectral transforms.

Fields are plain ``numpy`` arrays whose trailing two axes are the spatial
cell indices ``(k, l)``; a leading time axis is used for space-time fields.
Cell centers sit at ``((k + 0.5) dx1, (l + 0.5) dx2)`` on the unit square and
time nodes at ``n dt`` with ``dt = 1 / (nt - 1)``.

Two adjoint-consistent gradient/divergence pairs are available:

``"forward"``
    forward differences for the gradient, backward differences for the
    divergence.  ``-div(grad u)`` is then exactly the 5-point Neumann
    Laplacian, which the cosine basis diagonalizes.
``"centered"``
    centered differences over mirror ghost cells.  The divergence is the
    negative transpose, which amounts to odd ghost cells for the flux.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import fft

__all__ = [
    "ConfigurationError",
    "GridSpec",
    "KernelSpec",
    "gradient",
    "divergence",
    "laplacian",
    "biharmonic",
    "laplacian_symbol",
    "dct_forward",
    "dct_inverse",
    "kernel_weights",
    "kernel_convolve",
    "estimate_operator_norm",
    "make_ball",
    "make_rect",
]

SCHEMES = ("forward", "centered")


class ConfigurationError(ValueError):
    """Raised for geometrically or numerically meaningless set-ups."""


@dataclass(frozen=True)
class GridSpec:
    nx1: int
    nx2: int
    nt: int
    T: float = 1.0
    tprime: float = 0.5

    def __post_init__(self):
        for name in ("nx1", "nx2", "nt"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.nt < 3:
            raise ConfigurationError("nt must be at least 3")
        if not 0.0 < self.tprime < self.T:
            raise ConfigurationError(f"tprime must lie in (0, T), got {self.tprime}")
        n = self.n_prime
        if not 0 < n < self.nt - 1:
            raise ConfigurationError(
                f"tprime={self.tprime} maps to time index {n}, outside (0, {self.nt - 1})"
            )

    @property
    def dx1(self) -> float:
        return 1.0 / self.nx1

    @property
    def dx2(self) -> float:
        return 1.0 / self.nx2

    @property
    def dt(self) -> float:
        return self.T / (self.nt - 1)

    @property
    def cell_area(self) -> float:
        return self.dx1 * self.dx2

    @property
    def n_prime(self) -> int:
        """Index of the first delivery-phase time node."""
        return int(round(self.tprime / self.dt))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nt, self.nx1, self.nx2)

    @property
    def space_shape(self) -> tuple[int, int]:
        return (self.nx1, self.nx2)

    @property
    def slab_shape(self) -> tuple[int, int, int]:
        """Shape of fields living on the ``nt - 1`` time slabs (PDE residuals, duals)."""
        return (self.nt - 1, self.nx1, self.nx2)

    def times(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinate arrays ``(x1, x2)`` of shape ``(nx1, nx2)``."""
        x1 = (np.arange(self.nx1) + 0.5) * self.dx1
        x2 = (np.arange(self.nx2) + 0.5) * self.dx2
        return np.meshgrid(x1, x2, indexing="ij")

    def with_resolution(self, nx1: int, nx2: int | None = None, nt: int | None = None) -> "GridSpec":
        return GridSpec(nx1, nx1 if nx2 is None else nx2, self.nt if nt is None else nt, self.T, self.tprime)


@dataclass(frozen=True)
class KernelSpec:
    """Widths of the separable Gaussian interaction kernel (unit-square lengths)."""

    sigma1: float
    sigma2: float

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ConfigurationError(f"kernel widths must be positive, got {self.sigma1}, {self.sigma2}")


# --------------------------------------------------------------------------
# finite differences


def _check_scheme(scheme: str) -> None:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown difference scheme {scheme!r}; expected one of {SCHEMES}")


def _diff(u: np.ndarray, axis: int, h: float, scheme: str) -> np.ndarray:
    n = u.shape[axis]
    out = np.zeros_like(u)
    if n == 1:
        return out
    sl = [slice(None)] * u.ndim

    def at(s):
        sl2 = list(sl)
        sl2[axis] = s
        return tuple(sl2)

    if scheme == "forward":
        # last cell: mirror ghost equals the cell itself
        out[at(slice(0, n - 1))] = (u[at(slice(1, n))] - u[at(slice(0, n - 1))]) / h
    else:
        out[at(slice(1, n - 1))] = (u[at(slice(2, n))] - u[at(slice(0, n - 2))]) / (2 * h)
        out[at(0)] = (u[at(1)] - u[at(0)]) / (2 * h)
        out[at(n - 1)] = (u[at(n - 1)] - u[at(n - 2)]) / (2 * h)
    return out


def _diff_transpose(m: np.ndarray, axis: int, h: float, scheme: str) -> np.ndarray:
    """Transpose of ``_diff`` along ``axis``."""
    n = m.shape[axis]
    out = np.zeros_like(m)
    if n == 1:
        return out
    sl = [slice(None)] * m.ndim

    def at(s):
        sl2 = list(sl)
        sl2[axis] = s
        return tuple(sl2)

    if scheme == "forward":
        out[at(slice(1, n))] += m[at(slice(0, n - 1))] / h
        out[at(slice(0, n - 1))] -= m[at(slice(0, n - 1))] / h
    else:
        c = 1.0 / (2 * h)
        out[at(slice(2, n))] += c * m[at(slice(1, n - 1))]
        out[at(slice(0, n - 2))] -= c * m[at(slice(1, n - 1))]
        out[at(1)] += c * m[at(0)]
        out[at(0)] -= c * m[at(0)]
        out[at(n - 1)] += c * m[at(n - 1)]
        out[at(n - 2)] -= c * m[at(n - 1)]
    return out


def gradient(u: np.ndarray, grid: GridSpec, scheme: str = "forward") -> np.ndarray:
    """Discrete spatial gradient of ``u`` (``(..., nx1, nx2)``).

    Returns an array of shape ``(2, ..., nx1, nx2)``.  With the forward
    scheme the first component at cell ``k`` approximates the derivative at
    the face ``k + 1/2``.
    """
    _check_scheme(scheme)
    u = np.asarray(u, dtype=float)
    return np.stack(
        [_diff(u, u.ndim - 2, grid.dx1, scheme), _diff(u, u.ndim - 1, grid.dx2, scheme)]
    )


def divergence(m: np.ndarray, grid: GridSpec, scheme: str = "forward") -> np.ndarray:
    """Discrete divergence, the negative transpose of :func:`gradient`.

    ``m`` has shape ``(2, ..., nx1, nx2)``.  The flux through the domain
    boundary is zero, so the cell sum of the result vanishes identically.
    """
    _check_scheme(scheme)
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise FloatingPointError("non-finite momentum passed to divergence")
    nd = m.ndim - 1
    return -(_diff_transpose(m[0], nd - 2, grid.dx1, scheme) + _diff_transpose(m[1], nd - 1, grid.dx2, scheme))


def _second_diff(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    return _diff_transpose(_diff(u, axis, h, "forward"), axis, h, "forward") * -1.0


def laplacian(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """5-point Neumann Laplacian over the trailing two axes."""
    u = np.asarray(u, dtype=float)
    return _second_diff(u, u.ndim - 2, grid.dx1) + _second_diff(u, u.ndim - 1, grid.dx2)


def biharmonic(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    return laplacian(laplacian(u, grid), grid)


def laplacian_symbol(grid: GridSpec) -> np.ndarray:
    """Eigenvalues of ``-laplacian`` on the DCT-II modes, shape ``(nx1, nx2)``."""
    p = np.arange(grid.nx1)
    q = np.arange(grid.nx2)
    s1 = 2.0 / grid.dx1**2 * (1.0 - np.cos(np.pi * p / grid.nx1))
    s2 = 2.0 / grid.dx2**2 * (1.0 - np.cos(np.pi * q / grid.nx2))
    return s1[:, None] + s2[None, :]


# --------------------------------------------------------------------------
# cosine transforms


def dct_forward(u: np.ndarray, axes: Sequence[int] | None = None) -> np.ndarray:
    """Orthonormal DCT-II over ``axes`` (default: all axes)."""
    return fft.dctn(np.asarray(u, dtype=float), type=2, norm="ortho", axes=axes)


def dct_inverse(coeffs: np.ndarray, axes: Sequence[int] | None = None) -> np.ndarray:
    return fft.idctn(np.asarray(coeffs, dtype=float), type=2, norm="ortho", axes=axes)


# --------------------------------------------------------------------------
# Gaussian kernel


def kernel_weights(n: int, h: float, sigma: float) -> np.ndarray:
    """Normalized 1D kernel taps for offsets ``-(n-1) .. n-1``."""
    d = np.arange(-(n - 1), n) * h
    w = np.exp(-(d**2) / (2.0 * sigma**2))
    return w / w.sum()


def _kernel_symbol(n: int, h: float, sigma: float) -> np.ndarray:
    w = kernel_weights(n, h, sigma)
    centre = w[n - 1]
    taps = w[n:]  # offsets 1 .. n-1
    p = np.arange(n)[:, None]
    d = np.arange(1, n)[None, :]
    return centre + 2.0 * (np.cos(np.pi * p * d / n) * taps).sum(axis=1)


class _KernelCache:
    def __init__(self):
        self._store: dict[tuple, np.ndarray] = {}

    def symbol(self, kernel: KernelSpec, grid: GridSpec) -> np.ndarray:
        key = (kernel.sigma1, kernel.sigma2, grid.nx1, grid.nx2)
        if key not in self._store:
            if kernel.sigma1 < grid.dx1 / 2 or kernel.sigma2 < grid.dx2 / 2:
                warnings.warn(
                    f"kernel widths ({kernel.sigma1}, {kernel.sigma2}) are below half a cell; "
                    "the discrete kernel is close to the identity",
                    stacklevel=3,
                )
            s1 = _kernel_symbol(grid.nx1, grid.dx1, kernel.sigma1)
            s2 = _kernel_symbol(grid.nx2, grid.dx2, kernel.sigma2)
            self._store[key] = s1[:, None] * s2[None, :]
        return self._store[key]


_kernels = _KernelCache()


def kernel_convolve(kernel: KernelSpec, rho: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Convolve the trailing two axes of ``rho`` with the normalized Gaussian.

    The field is mirror-extended across the boundary, so the operator is
    symmetric with unit row sums; uniform fields are fixed points and total
    mass is preserved.
    """
    rho = np.asarray(rho, dtype=float)
    sym = _kernels.symbol(kernel, grid)
    axes = (rho.ndim - 2, rho.ndim - 1)
    return dct_inverse(dct_forward(rho, axes) * sym, axes)


# --------------------------------------------------------------------------
# operator norms


def estimate_operator_norm(
    op: Callable[[np.ndarray], np.ndarray],
    adjoint: Callable[[np.ndarray], np.ndarray],
    shape: tuple[int, ...],
    tol: float = 1e-8,
    max_iter: int = 10_000,
    seed: int = 0,
) -> float:
    """Power iteration on ``adjoint(op(x))``; returns the largest singular value.

    Iteration stops once the Rayleigh quotient changes by less than ``tol``
    relative to its value.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = adjoint(op(x))
        lam_new = float(np.vdot(x, y))
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        x = y / nrm
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return float(np.sqrt(lam_new))
        lam = lam_new
    raise RuntimeError(f"power iteration did not converge in {max_iter} iterations")


# --------------------------------------------------------------------------
# regions


def make_ball(grid: GridSpec, center: Sequence[float], radius: float, allow_empty: bool = False) -> np.ndarray:
    c1, c2 = center
    if not (0.0 <= c1 <= 1.0 and 0.0 <= c2 <= 1.0):
        raise ConfigurationError(f"ball center {tuple(center)} outside the unit square")
    x1, x2 = grid.centers()
    mask = (x1 - c1) ** 2 + (x2 - c2) ** 2 <= radius**2
    if not allow_empty and not mask.any():
        raise ConfigurationError(f"ball of radius {radius} at {tuple(center)} contains no cell center")
    return mask


def make_rect(grid: GridSpec, bounds: Sequence[float], allow_empty: bool = False) -> np.ndarray:
    """Cells whose centers satisfy ``x1 in [a1, b1]`` and ``x2 in [a2, b2]``."""
    a1, b1, a2, b2 = bounds
    if not (0.0 <= a1 <= b1 <= 1.0 and 0.0 <= a2 <= b2 <= 1.0):
        raise ConfigurationError(f"rectangle {tuple(bounds)} is not an ordered box inside the unit square")
    x1, x2 = grid.centers()
    mask = (x1 >= a1) & (x1 <= b1) & (x2 >= a2) & (x2 <= b2)
    if not allow_empty and not mask.any():
        raise ConfigurationError(f"rectangle {tuple(bounds)} contains no cell center")
    return mask
