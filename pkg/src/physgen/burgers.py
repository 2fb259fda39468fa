"""1D viscous Burgers slabs: reference solver, discrete residual, gradient.

A slab stores the velocity history as an (nt, nx) array, U[j, i] = u(x_i, t_j),
on a periodic domain of length L. The reference solver is a conservative
finite-volume scheme (Rusanov flux for u^2/2, central diffusion) with explicit
substepping; the residual uses the plain central/one-sided stencil convention
on the stored slab, so solver output carries a moderate nonzero residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .darcy import d1_matrix, d2_matrix
from .parallel import map_workers

MODE_COUNT = 2
MAX_WAVENUMBER = 8
BLOWUP_LIMIT = 1e3
_CFL = 0.4


@dataclass(frozen=True)
class BurgersConfig:
    nu: float = 0.01
    nx: int = 64
    nt: int = 64
    dt: float = 0.01
    L: float = 1.0

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")
        if self.nx < 2 or self.nt < 2:
            raise ValueError("need at least 2 spatial nodes and 2 time rows")
        if self.dt <= 0 or self.L <= 0:
            raise ValueError("dt and L must be positive")

    @property
    def dx(self) -> float:
        # periodic cells: node nx would alias node 0
        return self.L / self.nx

    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx


@dataclass(frozen=True)
class SinusoidIC:
    """u0(x) = sum_i A_i sin(2 pi n_i x / L + phi_i) with integer modes."""

    amplitudes: tuple
    modes: tuple
    phases: tuple

    def __post_init__(self):
        if not len(self.amplitudes) == len(self.modes) == len(self.phases):
            raise ValueError("amplitudes, modes, phases must have equal length")
        for a in self.amplitudes:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"amplitude {a} outside [0, 1]")
        for m in self.modes:
            if not (1 <= m <= MAX_WAVENUMBER and int(m) == m):
                raise ValueError(f"mode {m} not an integer in [1, {MAX_WAVENUMBER}]")
        for p in self.phases:
            if not 0.0 <= p < 2 * np.pi:
                raise ValueError(f"phase {p} outside [0, 2 pi)")


@dataclass
class SpaceTimeField:
    values: np.ndarray   # (nt, nx)
    config: BurgersConfig

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.config.nt, self.config.nx):
            raise ValueError(
                f"slab shape {self.values.shape} does not match "
                f"(nt, nx) = ({self.config.nt}, {self.config.nx})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("slab contains non-finite values")


@dataclass
class BurgersDataset:
    slabs: np.ndarray          # (count, nt, nx)
    ic_params: np.ndarray      # (count, 3 * MODE_COUNT): A_i, n_i, phi_i
    config: BurgersConfig
    seed: int

    @property
    def count(self) -> int:
        return self.slabs.shape[0]


def burgers_ic(ic: SinusoidIC, nx: int, L: float = 1.0) -> np.ndarray:
    x = np.arange(nx) * (L / nx)
    u0 = np.zeros(nx)
    for a, m, phi in zip(ic.amplitudes, ic.modes, ic.phases):
        u0 += a * np.sin(2.0 * np.pi * m * x / L + phi)
    return u0


def random_ic(rng: np.random.Generator) -> SinusoidIC:
    """Two-mode IC: A ~ U[0,1], integer mode in [1, 8], phase ~ U[0, 2pi)."""
    amps = rng.uniform(0.0, 1.0, MODE_COUNT)
    modes = rng.integers(1, MAX_WAVENUMBER + 1, MODE_COUNT)
    phases = rng.uniform(0.0, 2.0 * np.pi, MODE_COUNT)
    return SinusoidIC(tuple(amps), tuple(int(m) for m in modes), tuple(phases))


def solve_burgers(u0: np.ndarray, config: BurgersConfig) -> SpaceTimeField:
    """March u0 forward, storing nt rows spaced config.dt apart (row 0 = u0).

    Interface flux is Rusanov: 0.5*(F_L + F_R) - 0.5*max(|u_L|,|u_R|)*(u_R - u_L)
    with F = u^2/2, which telescopes over the ring so mass is conserved exactly.
    The substep obeys internal_dt <= 0.4*min(dx^2/nu, dx/max|u|).
    """
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (config.nx,):
        raise ValueError(f"u0 must have shape ({config.nx},), got {u0.shape}")
    dx, nu = config.dx, config.nu
    rows = np.empty((config.nt, config.nx))
    rows[0] = u0
    u = u0.copy()
    for j in range(1, config.nt):
        remaining = config.dt
        while remaining > 1e-15 * config.dt:
            umax = np.max(np.abs(u))
            limit = _CFL * dx * dx / nu
            if umax > 0:
                limit = min(limit, _CFL * dx / umax)
            h = min(remaining, limit)
            up = np.roll(u, -1)
            flux_r = 0.25 * (u * u + up * up) - 0.5 * np.maximum(
                np.abs(u), np.abs(up)
            ) * (up - u)
            flux_l = np.roll(flux_r, 1)
            diff = (up - 2.0 * u + np.roll(u, 1)) / dx**2
            u = u - h / dx * (flux_r - flux_l) + h * nu * diff
            if np.max(np.abs(u)) > BLOWUP_LIMIT:
                raise FloatingPointError(
                    f"Burgers integration blew up (|u| > {BLOWUP_LIMIT:g}) "
                    f"before stored row {j}"
                )
            remaining -= h
        rows[j] = u
    return SpaceTimeField(rows, config)


def _stencil_matrices(config: BurgersConfig):
    """(Dt, Dx_periodic, Lx_periodic): time one-sided at ends, space periodic."""
    nt, nx = config.nt, config.nx
    Dt = d1_matrix(nt, config.dt)
    Dx = np.zeros((nx, nx))
    Lx = np.zeros((nx, nx))
    for i in range(nx):
        Dx[i, (i + 1) % nx] = 1.0
        Dx[i, (i - 1) % nx] = -1.0
        Lx[i, (i + 1) % nx] = 1.0
        Lx[i, (i - 1) % nx] = 1.0
        Lx[i, i] = -2.0
    return Dt, Dx / (2.0 * config.dx), Lx / config.dx**2


def residual_burgers(U: SpaceTimeField) -> np.ndarray:
    """r = u_t + u u_x - nu u_xx on the slab, periodic in x, one-sided in t."""
    cfg = U.config
    if cfg.nt < 3 or cfg.nx < 3:
        raise ValueError("residual stencils need nt >= 3 and nx >= 3")
    Dt, Dx, Lx = _stencil_matrices(cfg)
    V = U.values
    return Dt @ V + V * (V @ Dx.T) - cfg.nu * (V @ Lx.T)


def residual_gradient_burgers(U: SpaceTimeField) -> np.ndarray:
    """Exact gradient of sum(r^2) over the slab.

    r depends on u through the linear time/diffusion stencils and the
    quadratic convection u*(Dx u); the gradient is the adjoint of that
    linearization applied to 2r.
    """
    cfg = U.config
    Dt, Dx, Lx = _stencil_matrices(cfg)
    V = U.values
    r = residual_burgers(U)
    ux = V @ Dx.T
    g = Dt.T @ r + r * ux + (V * r) @ Dx - cfg.nu * (r @ Lx)
    return 2.0 * g


def generate_burgers_dataset(count: int, config: BurgersConfig | None = None,
                             seed: int = 0) -> BurgersDataset:
    """Solve `count` random-IC slabs with per-sample RNG streams."""
    config = config or BurgersConfig()

    def build(k: int):
        rng = np.random.default_rng([seed, k])
        ic = random_ic(rng)
        try:
            slab = solve_burgers(burgers_ic(ic, config.nx, config.L), config)
        except Exception as err:
            raise RuntimeError(f"Burgers solve failed for sample {k}: {err}") from err
        params = np.concatenate([ic.amplitudes, ic.modes, ic.phases])
        return slab.values, params

    results = map_workers(build, range(count))
    slabs = np.stack([r[0] for r in results])
    ic_params = np.stack([r[1] for r in results])
    return BurgersDataset(slabs, ic_params, config, seed)
