"""Field reconstruction from sparse pressure measurements.

Three routes: training-free imputation (measured dimensions re-sampled
from the closed-form forward kernel after every reverse step), RePaint
resampling (extra forward/reverse step pairs per time step to mix measured
information into the unmeasured dimensions), and a gappy-POD least-squares
baseline. Imputation runs on the reverse SDE only: the forward SDE has a
closed-form kernel for the known dimensions while a PF-ODE forward pass
would require integrating the ODE forward at every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import VPSchedule, beta, kernel_coeffs
from .sampling import (PF_ODE, REVERSE_SDE, ConsistencyContext, SampleRun,
                       SamplerConfig, consistency_step, em_reverse_step)

_PF_ODE_REFUSAL = (
    "imputation requires equation=reverse_sde: known dimensions are drawn "
    "from the closed-form forward kernel, and the PF ODE has no closed-form "
    "forward samples (it would need a full forward ODE solve per step)"
)


@dataclass(frozen=True)
class MeasurementSet:
    """Measured pressure entries: distinct flat indices plus their values."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.intp))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ValueError("indices and values must be equal-length 1D arrays")
        if self.indices.size and np.unique(self.indices).size != self.indices.size:
            raise ValueError("measurement indices must be distinct")
        if np.any(self.indices < 0):
            raise ValueError("measurement indices must be nonnegative")

    @property
    def m(self) -> int:
        return self.indices.size


@dataclass
class PODBasis:
    psi: np.ndarray               # (d, k), orthonormal columns
    singular_values: np.ndarray   # (k,), descending
    mean: np.ndarray              # (d,)

    @property
    def k(self) -> int:
        return self.psi.shape[1]


def known_dim_replace(y: np.ndarray, t: float, meas: MeasurementSet,
                      z: np.ndarray, sched: VPSchedule) -> np.ndarray:
    """Overwrite measured entries with forward-kernel draws at time t.

    y[idx] <- alpha(t) * omega + sqrt(sigma2(t)) * z; at t = 0 this pins the
    measured entries to omega exactly. Other entries are untouched.
    """
    y = np.array(y, dtype=np.float64)
    if meas.m == 0:
        return y
    if np.max(meas.indices) >= y.shape[-1]:
        raise IndexError(
            f"measurement index {np.max(meas.indices)} out of range for "
            f"state dimension {y.shape[-1]}"
        )
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != meas.m:
        raise ValueError(f"noise must have {meas.m} entries, got {z.shape}")
    alpha, sigma2 = kernel_coeffs(t, sched)
    y[..., meas.indices] = alpha * meas.values + np.sqrt(sigma2) * z
    return y


def _standardized_measurements(meas: MeasurementSet, codec) -> MeasurementSet:
    std_values = (meas.values - codec.pressure.mean) / codec.pressure.std
    return MeasurementSet(meas.indices, std_values)


def _require_reverse_sde(cfg: SamplerConfig):
    if cfg.equation == PF_ODE:
        raise ValueError(_PF_ODE_REFUSAL)
    if cfg.equation != REVERSE_SDE:
        raise ValueError(f"unknown equation {cfg.equation!r}")


def _finish(y, meas, codec):
    """De-standardize, zero-mean the pressure, then pin measurements exactly."""
    y = codec.finalize(codec.destandardize(y))
    if meas.m:
        y[..., meas.indices] = meas.values
    return y


def impute_sample(score_fn, cfg: SamplerConfig, meas: MeasurementSet,
                  codec, sched: VPSchedule,
                  ctx: ConsistencyContext | None = None,
                  count: int = 1) -> SampleRun:
    """Reverse-SDE sampling with known dimensions re-drawn after every step."""
    _require_reverse_sde(cfg)
    if (cfg.N > 0 or cfg.M > 0) and ctx is None:
        raise ValueError("consistency steps requested but no ConsistencyContext given")
    meas_std = _standardized_measurements(meas, codec)
    rng = np.random.default_rng(cfg.seed)
    d = codec.d
    y = rng.standard_normal((count, d))
    dt = sched.T / cfg.tau
    score_evals = residual_evals = 0
    for i in range(cfg.tau, 0, -1):
        t_i = i * dt
        z = rng.standard_normal((count, d))
        y = em_reverse_step(y, t_i, dt, score_fn, z, sched)
        score_evals += 1
        y = known_dim_replace(y, (i - 1) * dt, meas_std,
                              rng.standard_normal((count, meas.m)), sched)
        if i <= cfg.N:
            for c in range(count):
                y[c] = consistency_step(y[c], ctx, cfg.eps)
            residual_evals += 1
    for _ in range(cfg.M):
        for c in range(count):
            y[c] = consistency_step(y[c], ctx, cfg.eps)
        residual_evals += 1
    return SampleRun(_finish(y, meas, codec), score_evals, residual_evals)


def repaint_sample(score_fn, cfg: SamplerConfig, meas: MeasurementSet,
                   codec, sched: VPSchedule, r: int,
                   ctx: ConsistencyContext | None = None,
                   count: int = 1) -> SampleRun:
    """Imputation with r extra forward/reverse pairs at every time step.

    A resampling pair steps the forward SDE over [t_{i-1}, t_i] by
    Euler-Maruyama and immediately reverses it, replacing the known
    dimensions after every reverse step, so the chain's time coordinate
    returns to t_{i-1} after each pair. Score cost is tau * (1 + r) per
    chain; forward steps are score-free.
    """
    if r < 0:
        raise ValueError(f"resampling count r must be >= 0, got {r}")
    _require_reverse_sde(cfg)
    if (cfg.N > 0 or cfg.M > 0) and ctx is None:
        raise ValueError("consistency steps requested but no ConsistencyContext given")
    meas_std = _standardized_measurements(meas, codec)
    rng = np.random.default_rng(cfg.seed)
    d = codec.d
    y = rng.standard_normal((count, d))
    dt = sched.T / cfg.tau
    score_evals = residual_evals = 0
    for i in range(cfg.tau, 0, -1):
        t_i = i * dt
        t_prev = (i - 1) * dt
        y = em_reverse_step(y, t_i, dt, score_fn,
                            rng.standard_normal((count, d)), sched)
        score_evals += 1
        y = known_dim_replace(y, t_prev, meas_std,
                              rng.standard_normal((count, meas.m)), sched)
        for _ in range(r):
            b = beta(t_prev, sched)
            y = y - 0.5 * b * y * dt + np.sqrt(b * dt) * rng.standard_normal((count, d))
            y = em_reverse_step(y, t_i, dt, score_fn,
                                rng.standard_normal((count, d)), sched)
            score_evals += 1
            y = known_dim_replace(y, t_prev, meas_std,
                                  rng.standard_normal((count, meas.m)), sched)
        if i <= cfg.N:
            for c in range(count):
                y[c] = consistency_step(y[c], ctx, cfg.eps)
            residual_evals += 1
    for _ in range(cfg.M):
        for c in range(count):
            y[c] = consistency_step(y[c], ctx, cfg.eps)
        residual_evals += 1
    return SampleRun(_finish(y, meas, codec), score_evals, residual_evals)


def pod_basis(states: np.ndarray, k: int) -> PODBasis:
    """Top-k left singular vectors of the mean-centered snapshot matrix."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2:
        raise ValueError("states must be (count, d)")
    count, d = states.shape
    if not 1 <= k <= min(d, count):
        raise ValueError(f"rank k={k} outside [1, {min(d, count)}]")
    mean = states.mean(axis=0)
    u, svals, _ = np.linalg.svd((states - mean).T, full_matrices=False)
    return PODBasis(u[:, :k], svals[:k], mean)


def pod_reconstruct(basis: PODBasis, meas: MeasurementSet,
                    q: np.ndarray | None = None) -> np.ndarray:
    """Gappy reconstruction: mean + Psi pinv(P Psi) (q - P mean).

    The selector P picks the measured pressure entries; q defaults to the
    measurement values. Singular values of P Psi below 1e-10 of the largest
    are truncated by the pseudoinverse.
    """
    if meas.m < 1:
        raise ValueError("POD reconstruction needs at least one measurement")
    q = meas.values if q is None else np.asarray(q, dtype=np.float64)
    if q.shape != (meas.m,):
        raise ValueError(f"q must have shape ({meas.m},), got {q.shape}")
    P_psi = basis.psi[meas.indices, :]
    if not np.any(P_psi):
        raise ValueError("P Psi is identically zero; measurements see no basis mode")
    coeffs = np.linalg.pinv(P_psi, rcond=1e-10) @ (q - basis.mean[meas.indices])
    return basis.mean + basis.psi @ coeffs
