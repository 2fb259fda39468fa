"""Flattened state vectors for the generative model.

A Darcy state is [pressure, permeability] raveled to length 2*n^2; a
Burgers state is the raveled (nt, nx) slab. Codecs carry the per-channel
standardization statistics recorded in the dataset manifest and convert
between physical fields and the standardized vectors the score model sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import GridSpec, Sample, ScalarField, trapezoid_integral, trapezoid_weights


@dataclass(frozen=True)
class ChannelStats:
    mean: float
    std: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.std) and self.std > 0):
            raise ValueError(f"bad channel stats ({self.mean}, {self.std})")


def channel_stats(values: np.ndarray) -> ChannelStats:
    std = float(np.std(values))
    return ChannelStats(float(np.mean(values)), std if std > 0 else 1.0)


@dataclass(frozen=True)
class DarcyCodec:
    """Layout and statistics for [pressure | permeability] states."""

    n: int
    pressure: ChannelStats
    permeability: ChannelStats

    @property
    def d(self) -> int:
        return 2 * self.n * self.n

    def flatten(self, pressure: np.ndarray, permeability: np.ndarray) -> np.ndarray:
        return np.concatenate([np.ravel(pressure), np.ravel(permeability)], axis=-1)

    def unflatten(self, state: np.ndarray):
        n2 = self.n * self.n
        shape = state.shape[:-1] + (self.n, self.n)
        return state[..., :n2].reshape(shape), state[..., n2:].reshape(shape)

    def standardize(self, state: np.ndarray) -> np.ndarray:
        p, k = np.split(np.asarray(state, dtype=np.float64), 2, axis=-1)
        return np.concatenate(
            [(p - self.pressure.mean) / self.pressure.std,
             (k - self.permeability.mean) / self.permeability.std], axis=-1)

    def destandardize(self, state: np.ndarray) -> np.ndarray:
        p, k = np.split(np.asarray(state, dtype=np.float64), 2, axis=-1)
        return np.concatenate(
            [p * self.pressure.std + self.pressure.mean,
             k * self.permeability.std + self.permeability.mean], axis=-1)

    def pressure_mask(self) -> np.ndarray:
        mask = np.zeros(self.d, dtype=bool)
        mask[: self.n * self.n] = True
        return mask

    def finalize(self, state: np.ndarray) -> np.ndarray:
        """Pin the pressure integral to zero on a physical-space state."""
        state = np.array(state, dtype=np.float64)
        n2 = self.n * self.n
        w = trapezoid_weights(self.n).ravel() * (GridSpec(self.n).dx ** 2 / 4.0)
        integral = state[..., :n2] @ w
        state[..., :n2] -= integral[..., None]
        return state

    def to_sample(self, state: np.ndarray) -> Sample:
        p, k = self.unflatten(state)
        grid = GridSpec(self.n)
        return Sample(ScalarField(grid, p), ScalarField(grid, k))


@dataclass(frozen=True)
class BurgersCodec:
    nt: int
    nx: int
    slab: ChannelStats

    @property
    def d(self) -> int:
        return self.nt * self.nx

    def flatten(self, slab: np.ndarray) -> np.ndarray:
        return np.reshape(slab, slab.shape[:-2] + (self.d,))

    def unflatten(self, state: np.ndarray) -> np.ndarray:
        return np.reshape(state, state.shape[:-1] + (self.nt, self.nx))

    def standardize(self, state: np.ndarray) -> np.ndarray:
        return (np.asarray(state, dtype=np.float64) - self.slab.mean) / self.slab.std

    def destandardize(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(state, dtype=np.float64) * self.slab.std + self.slab.mean

    def pressure_mask(self) -> np.ndarray:
        return np.ones(self.d, dtype=bool)

    def finalize(self, state: np.ndarray) -> np.ndarray:
        return np.array(state, dtype=np.float64)
