"""Variance-preserving noising schedule and its closed-form transition kernel.

The forward dynamics dy = -0.5*beta(t)*y dt + sqrt(beta(t)) dw with linear
beta(t) admit a Gaussian kernel p(y(t)|y(0)) = N(alpha(t) y(0), sigma2(t) I):

    alpha(t)  = exp(-t^2 (beta_max-beta_min)/4 - t beta_min / 2)
    sigma2(t) = 1 - alpha(t)^2

Everything here is a pure function; noise enters as explicit arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_T_MIN = 1e-5


@dataclass(frozen=True)
class VPSchedule:
    beta_min: float = 1e-4
    beta_max: float = 10.0
    T: float = 1.0

    def __post_init__(self):
        if not 0 < self.beta_min < self.beta_max:
            raise ValueError(
                f"need 0 < beta_min < beta_max, got ({self.beta_min}, {self.beta_max})"
            )
        if self.T <= 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")


def beta(t: float, sched: VPSchedule) -> float:
    """Linear noise rate beta_min + (beta_max - beta_min) * t."""
    if not 0.0 <= t <= sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T}]")
    return sched.beta_min + (sched.beta_max - sched.beta_min) * t


def drift_diffusion(y: np.ndarray, t: float, sched: VPSchedule):
    """Forward SDE coefficients: drift -0.5*beta(t)*y and diffusion sqrt(beta(t))."""
    b = beta(t, sched)
    return -0.5 * b * np.asarray(y, dtype=np.float64), float(np.sqrt(b))


def kernel_coeffs(t: float, sched: VPSchedule) -> tuple[float, float]:
    """(alpha, sigma2) of the transition kernel at time t."""
    if not 0.0 <= t <= sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T}]")
    exponent = -0.25 * t * t * (sched.beta_max - sched.beta_min) - 0.5 * t * sched.beta_min
    alpha = float(np.exp(exponent))
    sigma2 = float(1.0 - np.exp(2.0 * exponent))
    return alpha, sigma2


def perturb(y0: np.ndarray, t: float, z: np.ndarray, sched: VPSchedule) -> np.ndarray:
    """Draw from the kernel: y(t) = alpha * y0 + sqrt(sigma2) * z."""
    y0 = np.asarray(y0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != y0.shape:
        raise ValueError(f"noise shape {z.shape} != data shape {y0.shape}")
    alpha, sigma2 = kernel_coeffs(t, sched)
    return alpha * y0 + np.sqrt(sigma2) * z


def dsm_loss(score_fn, y0_batch: np.ndarray, t_batch: np.ndarray,
             z_batch: np.ndarray, sched: VPSchedule,
             t_min: float = DEFAULT_T_MIN) -> float:
    """Denoising score-matching loss with unit weighting.

    Per sample: || score_fn(y(t), t) + z / sqrt(sigma2(t)) ||^2 summed over
    dimensions, then averaged over the batch. Times below t_min are rejected
    because the target z/sqrt(sigma2) diverges as sigma2 -> 0.
    """
    y0_batch = np.atleast_2d(np.asarray(y0_batch, dtype=np.float64))
    z_batch = np.atleast_2d(np.asarray(z_batch, dtype=np.float64))
    t_batch = np.atleast_1d(np.asarray(t_batch, dtype=np.float64))
    if np.any(t_batch < t_min):
        raise ValueError(f"t below t_min={t_min:g}; smallest was {t_batch.min():g}")
    total = 0.0
    for y0, t, z in zip(y0_batch, t_batch, z_batch):
        alpha, sigma2 = kernel_coeffs(float(t), sched)
        yt = alpha * y0 + np.sqrt(sigma2) * z
        err = score_fn(yt, float(t)) + z / np.sqrt(sigma2)
        total += float(np.dot(err, err))
    return total / y0_batch.shape[0]


def gaussian_score_oracle(m0: np.ndarray, v0: np.ndarray, sched: VPSchedule):
    """Analytic score of the noised Gaussian N(m0, diag(v0)).

    At time t the marginal is N(alpha*m0, alpha^2 v0 + sigma2), so the score
    is -(y - alpha*m0) / (alpha^2 v0 + sigma2) elementwise. Useful as an
    exact stand-in for a trained network in sampler tests.
    """
    m0 = np.asarray(m0, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)

    def score(y: np.ndarray, t: float) -> np.ndarray:
        alpha, sigma2 = kernel_coeffs(t, sched)
        return -(y - alpha * m0) / (alpha * alpha * v0 + sigma2)

    return score
