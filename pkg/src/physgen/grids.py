"""Uniform grids on the unit square, scalar fields, and trapezoid quadrature.

Index convention used everywhere in this package: ``values[i, j]`` holds the
field at x = (i/(n-1), j/(n-1)), i.e. axis 0 is the x1 coordinate and axis 1
is the x2 coordinate. Arrays are row-major float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """n x n node grid on [0,1]^2 with spacing dx = 1/(n-1)."""

    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"grid needs n >= 3 nodes per axis, got n={self.n}")

    @property
    def dx(self) -> float:
        return 1.0 / (self.n - 1)

    def coords(self) -> np.ndarray:
        """Node coordinates along one axis, shape (n,)."""
        return np.linspace(0.0, 1.0, self.n)


@dataclass
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = self.grid.n
        if self.values.shape != (n, n):
            raise ValueError(
                f"field shape {self.values.shape} does not match grid ({n}, {n})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")


@dataclass
class Sample:
    """One data sample: a pressure field paired with a permeability field."""

    pressure: ScalarField
    permeability: ScalarField

    def __post_init__(self):
        if self.pressure.grid.n != self.permeability.grid.n:
            raise ValueError("pressure and permeability must share a grid")

    def validate(self, tol: float = 1e-10):
        """Check dataset invariants: K > 0 and zero-mean pressure."""
        if np.any(self.permeability.values <= 0.0):
            raise ValueError("permeability must be strictly positive")
        integral = trapezoid_integral(self.pressure)
        scale = max(1.0, float(np.max(np.abs(self.pressure.values))))
        if abs(integral) > tol * scale:
            raise ValueError(f"pressure integral {integral:g} exceeds tolerance")
        return self


def trapezoid_weights(n: int) -> np.ndarray:
    """Composite trapezoid weights on an n x n grid: 1 corners, 2 edges, 4 interior."""
    w = np.full((n, n), 4.0)
    w[0, :] = w[-1, :] = w[:, 0] = w[:, -1] = 2.0
    w[0, 0] = w[0, -1] = w[-1, 0] = w[-1, -1] = 1.0
    return w


def trapezoid_integral(field: ScalarField) -> float:
    """2D trapezoid rule over [0,1]^2: (dx^2/4) * sum(w * values)."""
    if not np.all(np.isfinite(field.values)):
        raise ValueError("cannot integrate non-finite field")
    n = field.grid.n
    dx = field.grid.dx
    return float(dx * dx / 4.0 * np.sum(trapezoid_weights(n) * field.values))


def zero_mean_normalize(field: ScalarField) -> ScalarField:
    """Shift a field so its trapezoid integral over the unit square vanishes.

    The square has unit area, so subtracting the integral itself removes the
    mean in the quadrature sense.
    """
    shifted = field.values - trapezoid_integral(field)
    return ScalarField(field.grid, shifted)
