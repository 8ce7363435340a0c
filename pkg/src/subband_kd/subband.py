"""Fixed-width sub-band partition of the STFT bin axis.

Bands are half-open and disjoint: band ``i`` owns bins ``[i*w, (i+1)*w)``.
Bins past the last full band form the residual set, which is never enhanced
and never used for training.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class SubbandPartition:
    total_bins: int
    band_width: int

    def __post_init__(self):
        if not 1 <= self.band_width <= self.total_bins:
            raise PartitionError(
                f"invalid band width {self.band_width} for {self.total_bins} bins")

    @property
    def n_bands(self) -> int:
        return self.total_bins // self.band_width

    @property
    def bands(self) -> list[tuple[int, int]]:
        w = self.band_width
        return [(i * w, (i + 1) * w) for i in range(self.n_bands)]

    @property
    def covered_bins(self) -> int:
        return self.n_bands * self.band_width

    @property
    def residual_bins(self) -> list[int]:
        return list(range(self.covered_bins, self.total_bins))

    def band(self, i: int) -> tuple[int, int]:
        if not 0 <= i < self.n_bands:
            raise PartitionError(f"band index {i} out of range [0, {self.n_bands})")
        return i * self.band_width, (i + 1) * self.band_width

    def labels(self) -> list[str]:
        return [f"{a}-{b}" for a, b in self.bands]


def make_partition(total_bins: int, band_width: int) -> SubbandPartition:
    return SubbandPartition(int(total_bins), int(band_width))


@dataclass(frozen=True)
class SubbandSlice:
    band_index: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise PartitionError("slice values must be a T x w array")
        if np.any(values < 0):
            raise PartitionError("slice values must be nonnegative")
        object.__setattr__(self, "values", values)


def _check_plane(magnitude: np.ndarray, part: SubbandPartition) -> np.ndarray:
    magnitude = np.asarray(magnitude, dtype=np.float64)
    if magnitude.ndim != 2 or magnitude.shape[1] != part.total_bins:
        raise PartitionError(
            f"magnitude shape {magnitude.shape} does not have {part.total_bins} bins")
    return magnitude


def extract(magnitude: np.ndarray, part: SubbandPartition, i: int) -> SubbandSlice:
    magnitude = _check_plane(magnitude, part)
    lo, hi = part.band(i)
    return SubbandSlice(i, magnitude[:, lo:hi].copy())


def extract_all(magnitude: np.ndarray, part: SubbandPartition) -> np.ndarray:
    """All band slices stacked as an ``n x T x w`` array (band-major)."""
    magnitude = _check_plane(magnitude, part)
    covered = magnitude[:, :part.covered_bins]
    n, w = part.n_bands, part.band_width
    return covered.reshape(magnitude.shape[0], n, w).transpose(1, 0, 2).copy()


def assemble(slices: Sequence[SubbandSlice], noisy_magnitude: np.ndarray,
             part: SubbandPartition) -> np.ndarray:
    """Scatter enhanced band slices into a full plane; residual bins copied from the noisy plane."""
    noisy_magnitude = _check_plane(noisy_magnitude, part)
    indices = [s.band_index for s in slices]
    if sorted(indices) != list(range(part.n_bands)):
        missing = sorted(set(range(part.n_bands)) - set(indices))
        dupes = sorted({i for i in indices if indices.count(i) > 1})
        raise PartitionError(
            f"need exactly one slice per band; missing {missing}, duplicated {dupes}")
    out = noisy_magnitude.copy()
    T = noisy_magnitude.shape[0]
    for s in slices:
        lo, hi = part.band(s.band_index)
        if s.values.shape != (T, hi - lo):
            raise PartitionError(
                f"slice {s.band_index} has shape {s.values.shape}, expected {(T, hi - lo)}")
        out[:, lo:hi] = s.values
    return out


def assemble_stacked(bands: np.ndarray, noisy_magnitude: np.ndarray,
                     part: SubbandPartition) -> np.ndarray:
    """Inverse of :func:`extract_all` with residual passthrough."""
    return assemble([SubbandSlice(i, b) for i, b in enumerate(bands)],
                    noisy_magnitude, part)
