"""Finite-difference Darcy pressure solver and discrete residual operators.

The pressure equation -div(K grad p) = f_s with zero Neumann flux and a
zero-integral constraint is discretized on the node grid of
:class:`~physgen.grids.GridSpec`. The solver eliminates boundary ghost
points using the Neumann condition; the residual instead uses one-sided
second-order stencils on the boundary, so the two boundary treatments
deliberately disagree and a solved field carries a small nonzero residual
on boundary nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grids import GridSpec, ScalarField, trapezoid_weights, zero_mean_normalize

# Dense QR least squares up to this n; normal equations above (spacing of the
# crossover follows the system size n^2+1 ~ 1e3 where dense QR is still cheap).
_DENSE_LSTSQ_MAX_N = 32
_NORMAL_EQ_REG = 1e-12


@dataclass(frozen=True)
class DarcySource:
    """Corner source/sink boxes: +rate where both x_i <= width, -rate mirrored."""

    rate: float = 10.0
    width: float = 0.125

    def __post_init__(self):
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"source rate must be positive, got {self.rate}")
        if not (np.isfinite(self.width) and 0 < self.width <= 0.5):
            raise ValueError(f"source width must lie in (0, 0.5], got {self.width}")


@dataclass
class DarcySystem:
    """Overdetermined linear system for pressure: (n^2+1) x n^2 matrix and rhs."""

    matrix: np.ndarray
    rhs: np.ndarray
    grid: GridSpec


def source_function(src: DarcySource, grid: GridSpec) -> ScalarField:
    """Evaluate the piecewise-constant source field on the grid nodes."""
    x = grid.coords()
    r, w = src.rate, src.width
    in_lo = np.abs(x - 0.5 * w) <= 0.5 * w          # 0 <= x <= w
    in_hi = np.abs(x - 1.0 + 0.5 * w) <= 0.5 * w    # 1-w <= x <= 1
    vals = np.zeros((grid.n, grid.n))
    vals[np.outer(in_lo, in_lo)] = r
    vals[np.outer(in_hi, in_hi)] = -r
    return ScalarField(grid, vals)


def assemble_system(K: ScalarField, f: ScalarField) -> DarcySystem:
    """Build the pressure system: ghost-point PDE rows plus the integral row.

    Rows are -K*lap(p) - grad(K).grad(p) = f with central differences,
    Neumann ghost elimination on boundaries (first derivatives normal to a
    boundary vanish there, so only tangential convection survives on edges
    and none at corners), and a final trapezoid-quadrature row pinning the
    pressure integral to zero.
    """
    if K.grid.n != f.grid.n:
        raise ValueError("K and f must share a grid")
    if np.any(K.values <= 0.0):
        raise ValueError("permeability must be strictly positive")
    n = K.grid.n
    dx = K.grid.dx
    Kv = K.values
    idx = lambda i, j: i * n + j

    A = np.zeros((n * n + 1, n * n))
    for i in range(n):
        for j in range(n):
            row = A[idx(i, j)]
            c = -Kv[i, j] / dx**2
            # Laplacian with ghost elimination: boundary-normal neighbors
            # fold onto the single interior neighbor with weight 2.
            row[idx(i, j)] = -4.0 * c
            if i == 0:
                row[idx(1, j)] += 2.0 * c
            elif i == n - 1:
                row[idx(n - 2, j)] += 2.0 * c
            else:
                row[idx(i - 1, j)] += c
                row[idx(i + 1, j)] += c
            if j == 0:
                row[idx(i, 1)] += 2.0 * c
            elif j == n - 1:
                row[idx(i, n - 2)] += 2.0 * c
            else:
                row[idx(i, j - 1)] += c
                row[idx(i, j + 1)] += c
            # Convection -dK/dx1 * dp/dx1, central both factors; drops on
            # x1 boundaries where dp/dx1 = 0 by the Neumann condition.
            if 0 < i < n - 1:
                g = -(Kv[i + 1, j] - Kv[i - 1, j]) / (4.0 * dx**2)
                row[idx(i + 1, j)] += g
                row[idx(i - 1, j)] -= g
            if 0 < j < n - 1:
                g = -(Kv[i, j + 1] - Kv[i, j - 1]) / (4.0 * dx**2)
                row[idx(i, j + 1)] += g
                row[idx(i, j - 1)] -= g

    A[n * n, :] = (dx**2 / 4.0) * trapezoid_weights(n).ravel()
    rhs = np.concatenate([f.values.ravel(), [0.0]])
    return DarcySystem(A, rhs, K.grid)


def solve_pressure(K: ScalarField, f: ScalarField) -> ScalarField:
    """Least-squares pressure solve, normalized to zero trapezoid integral."""
    system = assemble_system(K, f)
    A, rhs = system.matrix, system.rhs
    n = K.grid.n
    if n <= _DENSE_LSTSQ_MAX_N:
        p, _, rank, _ = scipy.linalg.lstsq(A, rhs, lapack_driver="gelsy")
        if rank < n * n:
            cond = np.linalg.cond(A)
            raise np.linalg.LinAlgError(
                f"pressure system rank-deficient: rank {rank} < {n * n}, "
                f"cond(A) = {cond:.3e}"
            )
    else:
        gram = A.T @ A
        gram[np.diag_indices_from(gram)] += _NORMAL_EQ_REG
        try:
            p = scipy.linalg.solve(gram, A.T @ rhs, assume_a="pos")
        except np.linalg.LinAlgError as err:
            raise np.linalg.LinAlgError(
                f"normal equations not SPD even with {_NORMAL_EQ_REG:g} "
                f"regularization: {err}"
            ) from err
    field = ScalarField(K.grid, p.reshape(n, n))
    return zero_mean_normalize(field)


def d1_matrix(n: int, dx: float) -> np.ndarray:
    """First-derivative operator: central interior, 2nd-order one-sided ends."""
    D = np.zeros((n, n))
    for k in range(1, n - 1):
        D[k, k - 1] = -1.0
        D[k, k + 1] = 1.0
    D[0, :3] = [-3.0, 4.0, -1.0]
    D[-1, -3:] = [1.0, -4.0, 3.0]
    return D / (2.0 * dx)


def d2_matrix(n: int, dx: float) -> np.ndarray:
    """Second-derivative operator: central interior, 2nd-order one-sided ends."""
    if n < 4:
        raise ValueError("one-sided second-derivative stencil needs n >= 4")
    D = np.zeros((n, n))
    for k in range(1, n - 1):
        D[k, k - 1 : k + 2] = [1.0, -2.0, 1.0]
    D[0, :4] = [2.0, -5.0, 4.0, -1.0]
    D[-1, -4:] = [-1.0, 4.0, -5.0, 2.0]
    return D / dx**2


def velocity(K: ScalarField, p: ScalarField) -> tuple[ScalarField, ScalarField]:
    """u = -K grad p with the one-sided boundary first-derivative stencils."""
    if K.grid.n != p.grid.n:
        raise ValueError("K and p must share a grid")
    D1 = d1_matrix(K.grid.n, K.grid.dx)
    u1 = -K.values * (D1 @ p.values)
    u2 = -K.values * (p.values @ D1.T)
    return ScalarField(K.grid, u1), ScalarField(K.grid, u2)


def residual_darcy(K: ScalarField, p: ScalarField, f: ScalarField) -> ScalarField:
    """Chain-rule residual K*p_11 + K_1*p_1 + K*p_22 + K_2*p_2 + f.

    All derivatives use central stencils on interior nodes and one-sided
    second-order stencils on boundary nodes (for both K and p).
    """
    n, dx = K.grid.n, K.grid.dx
    D1, D2 = d1_matrix(n, dx), d2_matrix(n, dx)
    Kv, P = K.values, p.values
    r = (
        Kv * (D2 @ P)
        + (D1 @ Kv) * (D1 @ P)
        + Kv * (P @ D2.T)
        + (Kv @ D1.T) * (P @ D1.T)
        + f.values
    )
    return ScalarField(K.grid, r)


def residual_gradient(K: ScalarField, p: ScalarField, f: ScalarField) -> ScalarField:
    """Exact gradient of sum(r^2) with respect to every pressure node.

    The residual is linear in p for fixed K, r = R p + const, so the
    gradient is 2 R^T r computed by transposing each stencil application.
    """
    n, dx = K.grid.n, K.grid.dx
    D1, D2 = d1_matrix(n, dx), d2_matrix(n, dx)
    Kv = K.values
    r = residual_darcy(K, p, f).values
    Kx1 = D1 @ Kv
    Kx2 = Kv @ D1.T
    g = 2.0 * (
        D2.T @ (Kv * r)
        + D1.T @ (Kx1 * r)
        + (Kv * r) @ D2
        + (Kx2 * r) @ D1
    )
    return ScalarField(K.grid, g)
