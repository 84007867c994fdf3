"""Primal and dual unknowns of the saddle-point problem.

Population axis order is ``S, I, R, V`` throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec

POPULATIONS = ("S", "I", "R", "V")
S, I, R, V = range(4)


@dataclass
class StateVector:
    """Densities ``rho (4, nt, nx1, nx2)``, momenta ``m (4, 2, nt, nx1, nx2)``,
    production rate ``f (nt, nx1, nx2)``."""

    rho: np.ndarray
    m: np.ndarray
    f: np.ndarray

    @classmethod
    def zeros(cls, grid: GridSpec) -> "StateVector":
        nt, n1, n2 = grid.shape
        return cls(np.zeros((4, nt, n1, n2)), np.zeros((4, 2, nt, n1, n2)), np.zeros((nt, n1, n2)))

    @classmethod
    def random(cls, grid: GridSpec, rng: np.random.Generator, positive: bool = False) -> "StateVector":
        nt, n1, n2 = grid.shape
        rho = rng.random((4, nt, n1, n2)) if positive else rng.standard_normal((4, nt, n1, n2))
        return cls(rho, rng.standard_normal((4, 2, nt, n1, n2)), rng.standard_normal((nt, n1, n2)))

    def copy(self) -> "StateVector":
        return StateVector(self.rho.copy(), self.m.copy(), self.f.copy())

    def __add__(self, other: "StateVector") -> "StateVector":
        return StateVector(self.rho + other.rho, self.m + other.m, self.f + other.f)

    def __sub__(self, other: "StateVector") -> "StateVector":
        return StateVector(self.rho - other.rho, self.m - other.m, self.f - other.f)

    def __mul__(self, c: float) -> "StateVector":
        return StateVector(self.rho * c, self.m * c, self.f * c)

    __rmul__ = __mul__

    def where(self, mask: "StateVector") -> "StateVector":
        """Entries selected by a boolean mask state; zero elsewhere."""
        return StateVector(self.rho * mask.rho, self.m * mask.m, self.f * mask.f)

    def dot(self, other: "StateVector", grid: GridSpec) -> float:
        w = grid.dt * grid.cell_area
        return w * float(
            np.vdot(self.rho, other.rho) + np.vdot(self.m, other.m) + np.vdot(self.f, other.f)
        )

    def norm(self, grid: GridSpec) -> float:
        return float(np.sqrt(self.dot(self, grid)))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.rho).all() and np.isfinite(self.m).all() and np.isfinite(self.f).all())


@dataclass
class DualVector:
    """Multipliers ``phi (4, nt - 1, nx1, nx2)``, one per PDE slab."""

    phi: np.ndarray

    @classmethod
    def zeros(cls, grid: GridSpec) -> "DualVector":
        return cls(np.zeros((4,) + grid.slab_shape))

    @classmethod
    def random(cls, grid: GridSpec, rng: np.random.Generator) -> "DualVector":
        return cls(rng.standard_normal((4,) + grid.slab_shape))

    def copy(self) -> "DualVector":
        return DualVector(self.phi.copy())

    def __add__(self, other: "DualVector") -> "DualVector":
        return DualVector(self.phi + other.phi)

    def __sub__(self, other: "DualVector") -> "DualVector":
        return DualVector(self.phi - other.phi)

    def __mul__(self, c: float) -> "DualVector":
        return DualVector(self.phi * c)

    __rmul__ = __mul__

    def dot(self, other: "DualVector", grid: GridSpec) -> float:
        return grid.dt * grid.cell_area * float(np.vdot(self.phi, other.phi))

    def norm(self, grid: GridSpec) -> float:
        return float(np.sqrt(self.dot(self, grid)))


def slab_dot(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> float:
    return grid.dt * grid.cell_area * float(np.vdot(a, b))
