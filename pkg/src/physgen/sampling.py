"""Reverse-SDE / PF-ODE sampling loops with physical-consistency steps.

The reverse solvers walk t_i = i*T/tau from i = tau down to 1, evaluating
the score at the current time of each step, and land exactly at t = 0.
A consistency step moves the masked state entries a small step down the
gradient of the squared discrete PDE residual; it runs after each of the
last N solver steps and M more times once t = 0 is reached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .darcy import residual_darcy, residual_gradient
from .diffusion import VPSchedule, beta
from .grids import GridSpec, ScalarField
from .states import BurgersCodec, DarcyCodec

REVERSE_SDE = "reverse_sde"
PF_ODE = "pf_ode"
ADAPTIVE_EPS_NUMERATOR = 2e-4


@dataclass(frozen=True)
class SamplerConfig:
    equation: str = PF_ODE
    tau: int = 2000
    N: int = 0
    M: int = 0
    eps: float | None = None   # None: adaptive 2e-4 / max|grad| rule
    seed: int = 0

    def __post_init__(self):
        if self.equation not in (REVERSE_SDE, PF_ODE):
            raise ValueError(f"unknown equation {self.equation!r}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if not 0 <= self.N <= self.tau:
            raise ValueError(f"N must lie in [0, tau], got {self.N}")
        if self.M < 0:
            raise ValueError(f"M must be >= 0, got {self.M}")
        if self.eps is not None and self.eps <= 0:
            raise ValueError(f"fixed eps must be positive, got {self.eps}")


@dataclass
class ConsistencyContext:
    """Residual, exact-gradient, and Jacobian-scale evaluators on flat states.

    `jacobian_max` returns the largest |d r_a / d y_b| over the masked
    entries; the adaptive rule divides the fixed numerator 2e-4 by it to
    set the descent step.
    """

    residual_fn: Callable[[np.ndarray], np.ndarray]
    gradient_fn: Callable[[np.ndarray], np.ndarray]
    jacobian_max: Callable[[np.ndarray], float]
    mask: np.ndarray


@dataclass
class SampleRun:
    """Final states plus per-chain operator bookkeeping."""

    states: np.ndarray
    score_evals: int
    residual_evals: int


def em_reverse_step(y: np.ndarray, t_i: float, dt: float, score_fn,
                    z: np.ndarray, sched: VPSchedule) -> np.ndarray:
    """One Euler-Maruyama step of the reverse SDE, backward over [t_i-dt, t_i]."""
    b = beta(t_i, sched)
    score = np.asarray(score_fn(y, t_i), dtype=np.float64)
    if not np.all(np.isfinite(score)):
        raise FloatingPointError(f"score is non-finite at t={t_i:g}")
    drift = -0.5 * b * y - b * score
    return y - drift * dt + np.sqrt(b * dt) * z


def pf_ode_step(y: np.ndarray, t_i: float, dt: float, score_fn,
                sched: VPSchedule) -> np.ndarray:
    """One forward-Euler step of the probability-flow ODE, backward in time."""
    b = beta(t_i, sched)
    score = np.asarray(score_fn(y, t_i), dtype=np.float64)
    if not np.all(np.isfinite(score)):
        raise FloatingPointError(f"score is non-finite at t={t_i:g}")
    drift = -0.5 * b * y - 0.5 * b * score
    return y - drift * dt


def consistency_step(state: np.ndarray, ctx: ConsistencyContext,
                     eps: float | None = None) -> np.ndarray:
    """Descend the squared-residual gradient on the masked entries.

    Step sizes are scale-free, recomputed every call:
      adaptive (eps=None): 2e-4 / max|dr/dy| times the exact gradient, the
        step the operator scale supports (drives deep residual reduction);
      fixed eps: displacement cap, the gradient scaled so its largest
        entry moves by eps.
    A zero gradient (or zero Jacobian) skips the step instead of dividing
    by zero.
    """
    g = ctx.gradient_fn(state) * ctx.mask
    if not np.any(g):
        return state
    if eps is None:
        jmax = float(ctx.jacobian_max(state))
        if jmax == 0.0:
            return state
        scale = ADAPTIVE_EPS_NUMERATOR / jmax
    else:
        scale = eps / float(np.max(np.abs(g)))
    return state - scale * g


def sample_loop(score_fn, cfg: SamplerConfig, d: int, sched: VPSchedule,
                ctx: ConsistencyContext | None = None, count: int = 1,
                codec=None) -> SampleRun:
    """Draw `count` chains from the prior and integrate to t = 0.

    Consistency steps follow the last N solver steps and repeat M times at
    t = 0; both require `ctx`. With a codec the returned states are
    de-standardized and finalized (zero-mean pressure for Darcy).
    Operator counts are per chain: the solver costs tau score evaluations
    and consistency costs N + M residual-operator evaluations.
    """
    if (cfg.N > 0 or cfg.M > 0) and ctx is None:
        raise ValueError("consistency steps requested but no ConsistencyContext given")
    rng = np.random.default_rng(cfg.seed)
    y = rng.standard_normal((count, d))
    dt = sched.T / cfg.tau
    score_evals = 0
    residual_evals = 0

    def consistency_all(arr):
        nonlocal residual_evals
        for c in range(arr.shape[0]):
            arr[c] = consistency_step(arr[c], ctx, cfg.eps)
        residual_evals += 1

    for i in range(cfg.tau, 0, -1):
        t_i = i * dt
        try:
            if cfg.equation == REVERSE_SDE:
                z = rng.standard_normal((count, d))
                y = em_reverse_step(y, t_i, dt, score_fn, z, sched)
            else:
                y = pf_ode_step(y, t_i, dt, score_fn, sched)
        except FloatingPointError as err:
            raise FloatingPointError(f"solver step {cfg.tau - i + 1} failed: {err}") from err
        score_evals += 1
        if i <= cfg.N:
            consistency_all(y)
    for _ in range(cfg.M):
        consistency_all(y)

    if codec is not None:
        y = codec.finalize(codec.destandardize(y))
    return SampleRun(y, score_evals, residual_evals)


def darcy_pressure_jacobian_max(K: np.ndarray, n: int, dx: float) -> float:
    """Largest |d r_a / d p_b| of the Darcy residual operator.

    The operator is diag(K)(D2 (+) D2) + diag(K_x1)(D1 (x) I)
    + diag(K_x2)(I (x) D1); its entries split into same-column terms,
    same-row terms, and the doubly-counted diagonal.
    """
    from .darcy import d1_matrix, d2_matrix

    D1, D2 = d1_matrix(n, dx), d2_matrix(n, dx)
    Kx1 = D1 @ K
    Kx2 = K @ D1.T
    idx = np.arange(n)
    E_col = K[:, :, None] * D2[:, None, :] + Kx1[:, :, None] * D1[:, None, :]
    E_row = K[:, :, None] * D2[None, :, :] + Kx2[:, :, None] * D1[None, :, :]
    diag = np.einsum("iji->ij", E_col) + np.einsum("ijj->ij", E_row)
    E_col[idx, :, idx] = 0.0
    E_row[:, idx, idx] = 0.0
    return float(max(np.max(np.abs(E_col)), np.max(np.abs(E_row)),
                     np.max(np.abs(diag))))


def darcy_consistency(codec: DarcyCodec, source: ScalarField) -> ConsistencyContext:
    """Darcy residual context over standardized states; pressure-only updates.

    The residual is evaluated on de-standardized fields; by the chain rule
    both the gradient and the Jacobian scale with respect to standardized
    pressure pick up one factor of the pressure std.
    """
    grid = GridSpec(codec.n)

    def fields(state_std):
        phys = codec.destandardize(state_std)
        p, k = codec.unflatten(phys)
        return ScalarField(grid, k), ScalarField(grid, p)

    def residual_fn(state_std):
        K, p = fields(state_std)
        return residual_darcy(K, p, source).values

    def gradient_fn(state_std):
        K, p = fields(state_std)
        g_phys = residual_gradient(K, p, source).values
        g = np.zeros(codec.d)
        g[: codec.n * codec.n] = g_phys.ravel() * codec.pressure.std
        return g

    def jacobian_max(state_std):
        K, _ = fields(state_std)
        return darcy_pressure_jacobian_max(K.values, codec.n, grid.dx) \
            * codec.pressure.std

    return ConsistencyContext(residual_fn, gradient_fn, jacobian_max,
                              codec.pressure_mask())


def burgers_jacobian_max(U: np.ndarray, config) -> float:
    """Largest |d r_a / d u_b| of the discrete Burgers residual."""
    from .burgers import _stencil_matrices, SpaceTimeField  # noqa: F401

    Dt, Dx, Lx = _stencil_matrices(config)
    idx_t = np.arange(config.nt)
    idx_x = np.arange(config.nx)
    T = np.abs(Dt.copy())
    T[idx_t, idx_t] = 0.0
    S = U[:, :, None] * Dx[None, :, :] - config.nu * Lx[None, :, :]
    diag = np.diag(Dt)[:, None] + U @ Dx.T - config.nu * np.diag(Lx)[None, :]
    S[:, idx_x, idx_x] = 0.0
    return float(max(np.max(T), np.max(np.abs(S)), np.max(np.abs(diag))))


def burgers_consistency(codec: BurgersCodec, config) -> ConsistencyContext:
    """Burgers residual context over standardized slab states (full update)."""
    from .burgers import SpaceTimeField, residual_burgers, residual_gradient_burgers

    def slab(state_std):
        return SpaceTimeField(codec.unflatten(codec.destandardize(state_std)), config)

    def residual_fn(state_std):
        return residual_burgers(slab(state_std))

    def gradient_fn(state_std):
        g = residual_gradient_burgers(slab(state_std))
        return g.ravel() * codec.slab.std

    def jacobian_max(state_std):
        return burgers_jacobian_max(slab(state_std).values, config) * codec.slab.std

    return ConsistencyContext(residual_fn, gradient_fn, jacobian_max,
                              codec.pressure_mask())
