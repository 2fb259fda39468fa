"""Log-permeability random fields via truncated Karhunen-Loeve expansion.

The log field G ~ N(mean, k) with exponential covariance
k(x, x') = exp(-||x - x'||_2 / length) is discretized on the grid nodes
(Nystrom with unit quadrature weights) and truncated to the top-s
eigenpairs; permeability is K = exp(G).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .darcy import DarcySource, residual_darcy, solve_pressure, source_function
from .grids import GridSpec, Sample, ScalarField
from .parallel import map_workers

_EIG_CLAMP = -1e-10


@dataclass(frozen=True)
class CovarianceSpec:
    length: float = 0.25
    mean: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.length) and self.length > 0):
            raise ValueError(f"correlation length must be positive, got {self.length}")


@dataclass
class KLEBasis:
    """Top-s eigenpairs of the node covariance matrix, eigenvalues descending."""

    s: int
    lambdas: np.ndarray        # (s,), nonnegative, descending
    phis: np.ndarray           # (s, n*n) orthonormal rows
    mean: float
    grid: GridSpec


@dataclass
class GenerativeParams:
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta contains non-finite entries")


@dataclass
class DarcyDataset:
    """Generated Darcy samples plus every parameter needed to regenerate them."""

    pressure: np.ndarray       # (count, n, n)
    permeability: np.ndarray   # (count, n, n)
    thetas: np.ndarray         # (count, s)
    grid: GridSpec
    cov: CovarianceSpec
    source: DarcySource
    seed: int

    @property
    def count(self) -> int:
        return self.pressure.shape[0]

    @property
    def s(self) -> int:
        return self.thetas.shape[1]

    def samples(self):
        for k in range(self.count):
            yield Sample(
                ScalarField(self.grid, self.pressure[k]),
                ScalarField(self.grid, self.permeability[k]),
            )


def covariance_matrix(grid: GridSpec, spec: CovarianceSpec) -> np.ndarray:
    """Node covariance C[a, b] = exp(-||x_a - x_b|| / length), n^2 x n^2."""
    x = grid.coords()
    xx, yy = np.meshgrid(x, x, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    C = np.exp(-dist / spec.length)
    return 0.5 * (C + C.T)


def kle_decompose(C: np.ndarray, s: int, mean: float = 0.0,
                  grid: GridSpec | None = None) -> KLEBasis:
    """Top-s eigenpairs of a symmetric covariance matrix.

    Eigenvalues in [-1e-10, 0) are clamped to zero; anything more negative
    means C is not a covariance matrix and raises. Eigenvector signs are
    fixed by making each vector's largest-magnitude entry positive so the
    basis is reproducible across eigensolvers.
    """
    C = np.asarray(C, dtype=np.float64)
    m = C.shape[0]
    if C.shape != (m, m) or not np.allclose(C, C.T, atol=1e-12):
        raise ValueError("covariance matrix must be square symmetric")
    if not 1 <= s <= m:
        raise ValueError(f"truncation order s={s} outside [1, {m}]")
    if grid is None:
        n = int(round(np.sqrt(m)))
        if n * n != m:
            raise ValueError("matrix size is not a square grid; pass grid")
        grid = GridSpec(n)

    # full decomposition, then truncate: subset solves can rotate degenerate
    # eigenspaces differently between calls, breaking truncation consistency
    lam_all, vec_all = scipy.linalg.eigh(C)
    if lam_all[0] < _EIG_CLAMP:
        raise ValueError(
            f"covariance has eigenvalue {float(lam_all[0]):.3e} below clamp "
            f"{_EIG_CLAMP:g}"
        )
    lam = lam_all[::-1][:s].copy()
    vec = vec_all[:, ::-1][:, :s].copy()
    lam = np.clip(lam, 0.0, None)
    for k in range(s):
        pivot = np.argmax(np.abs(vec[:, k]))
        if vec[pivot, k] < 0:
            vec[:, k] = -vec[:, k]
    return KLEBasis(s=s, lambdas=lam, phis=vec.T.copy(), mean=mean, grid=grid)


def sample_permeability(basis: KLEBasis, params: GenerativeParams) -> ScalarField:
    """K = exp(mean + sum_i sqrt(lambda_i) theta_i phi_i), strictly positive."""
    theta = params.theta
    if theta.shape != (basis.s,):
        raise ValueError(f"theta must have length s={basis.s}, got {theta.shape}")
    logk = basis.mean + (np.sqrt(basis.lambdas) * theta) @ basis.phis
    n = basis.grid.n
    return ScalarField(basis.grid, np.exp(logk.reshape(n, n)))


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent per-sample stream derived from (seed, sample index)."""
    return np.random.default_rng([seed, index])


def generate_darcy_dataset(count: int, n: int, s: int,
                           cov: CovarianceSpec | None = None,
                           src: DarcySource | None = None,
                           seed: int = 0) -> DarcyDataset:
    """Draw theta ~ N(0, I) per sample, build K and solve for pressure.

    Each sample uses its own RNG stream keyed on (seed, index), so the
    dataset is reproducible and independent of worker scheduling.
    """
    cov = cov or CovarianceSpec()
    src = src or DarcySource()
    grid = GridSpec(n)
    basis = kle_decompose(covariance_matrix(grid, cov), s, mean=cov.mean, grid=grid)
    f = source_function(src, grid)

    def build(k: int):
        theta = sample_rng(seed, k).standard_normal(s)
        K = sample_permeability(basis, GenerativeParams(theta))
        try:
            p = solve_pressure(K, f)
        except Exception as err:
            raise RuntimeError(f"pressure solve failed for sample {k}: {err}") from err
        return theta, K.values, p.values

    results = map_workers(build, range(count))
    pressure = np.stack([r[2] for r in results])
    permeability = np.stack([r[1] for r in results])
    thetas = np.stack([r[0] for r in results])
    return DarcyDataset(pressure, permeability, thetas, grid, cov, src, seed)


def dataset_residual_baseline(ds: DarcyDataset, src: DarcySource | None = None) -> float:
    """Mean over samples of the summed squared residual (the dataset floor)."""
    f = source_function(src or ds.source, ds.grid)
    total = 0.0
    for sample in ds.samples():
        r = residual_darcy(sample.permeability, sample.pressure, f).values
        total += float(np.sum(r * r))
    return total / ds.count
