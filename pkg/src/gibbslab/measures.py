"""Grid histograms of orbits, a multiscale weak-* proxy metric, Birkhoff
averages, and ensemble estimation of physical measures.

Measures live on dyadic grid partitions (cells per axis a power of two) so
they can be coarsened exactly; the distance between two measures is the
2^{-k}-weighted sum of total-variation distances over the first K dyadic
coarsenings, which vanishes iff the base histograms agree and shrinks when
mass moves a short distance, the behavior needed from a weak-* proxy.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import EscapeError, SmoothSystem, PhaseSpace

_WEIGHT_SUM_TOL = 1e-12
_ACCUMULATE_CHUNK = 4096


class PartialMeasureError(RuntimeError):
    """An orbit escaped before the requested length.

    Carries the number of completed steps and the histogram of the prefix.
    """

    def __init__(self, prefix_length: int, partial: "GridMeasure"):
        super().__init__(f"orbit escaped after {prefix_length} steps")
        self.prefix_length = prefix_length
        self.partial = partial


class MeasureMismatchError(ValueError):
    """Two measures do not share a common base partition."""


class NonFiniteObservableError(RuntimeError):
    """An observable produced a non-finite value along the orbit."""

    def __init__(self, index: int, value: float):
        super().__init__(f"observable returned {value} at orbit index {index}")
        self.index = index
        self.value = value


class EnsembleEscapeError(RuntimeError):
    """Fewer than two ensemble orbits survived to the end."""

    def __init__(self, escaped: dict):
        super().__init__(f"only {len(escaped)} escapes recorded, "
                         f"fewer than 2 orbits survived")
        self.escaped = escaped


@dataclass(frozen=True, eq=False)
class GridPartition:
    """Dyadic product partition: resolution cells per axis, half-open.

    Points on interior cell boundaries fall in the higher cell (floor
    convention); the top box face is clipped into the last cell so the cells
    tile the space and every point has exactly one index.
    """

    space: PhaseSpace
    resolution: int

    def __post_init__(self):
        r = self.resolution
        if r < 2 or (r & (r - 1)) != 0:
            raise ValueError("resolution must be a power of two, at least 2")

    @property
    def cells(self) -> int:
        return self.resolution ** self.space.dim

    def cell_diameter(self) -> float:
        if self.space.kind == "torus":
            width = np.full(self.space.dim, 1.0 / self.resolution)
        else:
            width = (self.space.hi - self.space.lo) / self.resolution
        return float(np.linalg.norm(width))

    def cell_index(self, x: np.ndarray) -> np.ndarray:
        """Flat cell ids (row-major over axes) for points of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if self.space.kind == "torus":
            u = x % 1.0
        else:
            u = (x - self.space.lo) / (self.space.hi - self.space.lo)
        # non-finite coordinates (dead ensemble rows) map to cell 0; callers
        # mask such rows out before counting
        u = np.where(np.isfinite(u), u, 0.0)
        idx = np.clip(np.floor(u * self.resolution).astype(np.int64),
                      0, self.resolution - 1)
        flat = idx[..., 0]
        for a in range(1, self.space.dim):
            flat = flat * self.resolution + idx[..., a]
        return flat

    def cell_center(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        d = self.space.dim
        coords = np.empty(flat.shape + (d,))
        rem = flat
        for a in range(d - 1, -1, -1):
            coords[..., a] = rem % self.resolution
            rem = rem // self.resolution
        u = (coords + 0.5) / self.resolution
        if self.space.kind == "torus":
            return u
        return self.space.lo + u * (self.space.hi - self.space.lo)

    def compatible_with(self, other: "GridPartition") -> bool:
        return (self.resolution == other.resolution
                and self.space.kind == other.space.kind
                and self.space.dim == other.space.dim)


@dataclass(eq=False)
class GridMeasure:
    """Probability weights on the cells of a grid partition."""

    partition: GridPartition
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != self.partition.cells:
            raise ValueError("weight vector does not match the cell count")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        self.weights = w

    @classmethod
    def from_counts(cls, partition: GridPartition, counts: np.ndarray) -> "GridMeasure":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise ValueError("empty counts")
        return cls(partition, counts / total)

    @classmethod
    def dirac(cls, partition: GridPartition, x: np.ndarray) -> "GridMeasure":
        w = np.zeros(partition.cells)
        w[int(partition.cell_index(np.asarray(x)))] = 1.0
        return cls(partition, w)

    @classmethod
    def uniform(cls, partition: GridPartition) -> "GridMeasure":
        return cls(partition, np.full(partition.cells, 1.0 / partition.cells))

    def support_size(self) -> int:
        return int(np.count_nonzero(self.weights))

    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-(w * np.log(w)).sum())

    def total_variation(self, other: "GridMeasure") -> float:
        if not self.partition.compatible_with(other.partition):
            raise MeasureMismatchError("partitions differ")
        return 0.5 * float(np.abs(self.weights - other.weights).sum())

    def coarsened_weights(self, level: int) -> np.ndarray:
        """Weights after merging to 2^level cells per axis."""
        d = self.partition.space.dim
        res = self.partition.resolution
        c = 2 ** level
        f = res // c
        shape = []
        for _ in range(d):
            shape.extend((c, f))
        w = self.weights.reshape(shape)
        return w.sum(axis=tuple(range(1, 2 * d, 2))).reshape(-1)

    def export_csv(self, path) -> None:
        """Support cells as (cell_index, weight) rows under a '#' schema line."""
        with open(path, "w", newline="") as fh:
            fh.write("# schema=cell_index,weight\n")
            writer = csv.writer(fh)
            for idx in np.nonzero(self.weights)[0]:
                writer.writerow([int(idx), repr(float(self.weights[idx]))])

    def summary(self) -> dict:
        return {
            "resolution": self.partition.resolution,
            "entropy": self.entropy(),
            "support_size": self.support_size(),
        }

    def export_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class MeasureDistanceConfig:
    """Depth of the multiscale comparison; level k carries weight 2^{-k}."""

    max_depth: int = 5

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


def default_distance_config(partition: GridPartition) -> MeasureDistanceConfig:
    return MeasureDistanceConfig(max_depth=int(np.log2(partition.resolution)))


def weak_star_distance(a: GridMeasure, b: GridMeasure,
                       cfg: Optional[MeasureDistanceConfig] = None) -> float:
    """Sum over levels k = 0..K of 2^{-k} TV(coarsen_k(a), coarsen_k(b)).

    A metric on measures sharing a partition; insensitive to mass motion
    below the base grid scale, increasingly sensitive at coarse scales.
    """
    if not a.partition.compatible_with(b.partition):
        raise MeasureMismatchError("partitions differ")
    if cfg is None:
        cfg = default_distance_config(a.partition)
    if 2 ** cfg.max_depth > a.partition.resolution:
        raise MeasureMismatchError(
            f"depth {cfg.max_depth} needs resolution >= {2 ** cfg.max_depth}")
    total = 0.0
    for k in range(cfg.max_depth + 1):
        wa = a.coarsened_weights(k)
        wb = b.coarsened_weights(k)
        total += 2.0 ** -k * 0.5 * float(np.abs(wa - wb).sum())
    return total


def empirical_measure(system: SmoothSystem, x: np.ndarray, n: int,
                      partition: GridPartition) -> GridMeasure:
    """Histogram of x, f(x), ..., f^{n-1}(x) on the partition.

    On box spaces an escape raises PartialMeasureError carrying the prefix.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    space = system.space
    x = space.wrap(np.asarray(x, dtype=float))
    counts = np.zeros(partition.cells, dtype=np.int64)
    for i in range(n):
        if space.kind == "box" and not space.contains(x):
            if counts.sum() == 0:
                raise PartialMeasureError(0, GridMeasure.uniform(partition))
            raise PartialMeasureError(i, GridMeasure.from_counts(partition, counts))
        counts[int(partition.cell_index(x))] += 1
        if i + 1 < n:
            x = system.forward(x)
    return GridMeasure.from_counts(partition, counts)


def birkhoff_average(system: SmoothSystem, x: np.ndarray, n: int,
                     observable: Callable[[np.ndarray], float]) -> float:
    """(1/n) sum of the observable over the first n orbit points."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = system.space.wrap(np.asarray(x, dtype=float))
    total = 0.0
    for i in range(n):
        v = float(observable(x))
        if not np.isfinite(v):
            raise NonFiniteObservableError(i, v)
        total += v
        if i + 1 < n:
            x = system.forward(x)
    return total / n


@dataclass(eq=False)
class PhysicalMeasureEstimate:
    """Ensemble histogram average with an agreement diagnostic.

    dispersion is the maximum pairwise weak-* proxy distance among per-orbit
    measures; a small value signals that one measure attracts the sample.
    """

    mean: GridMeasure
    dispersion: float
    per_ic: list
    escaped: dict = field(default_factory=dict)
    samples_per_ic: int = 0


def physical_measure_estimate(system: SmoothSystem, ics: np.ndarray, n: int,
                              burn_in: int, partition: GridPartition,
                              distance_cfg: Optional[MeasureDistanceConfig] = None
                              ) -> PhysicalMeasureEstimate:
    """Per-orbit histograms over steps burn_in..n-1, averaged over orbits.

    Escaped orbits are dropped and reported; at least two must survive.
    Uses the system's batch map when available, advancing all orbits in
    lock step with buffered histogram accumulation.
    """
    ics = np.atleast_2d(np.asarray(ics, dtype=float))
    if len(ics) < 2:
        raise ValueError("need at least 2 initial conditions")
    if not n > burn_in:
        raise ValueError("n must exceed burn_in")
    if system.forward_batch is not None:
        counts, escaped = _ensemble_counts_batch(system, ics, n, burn_in, partition)
    else:
        counts, escaped = _ensemble_counts_loop(system, ics, n, burn_in, partition)
    survivors = [i for i in range(len(ics)) if i not in escaped]
    if len(survivors) < 2:
        raise EnsembleEscapeError(escaped)
    per_ic = [GridMeasure.from_counts(partition, counts[i]) for i in survivors]
    mean_w = np.mean([m.weights for m in per_ic], axis=0)
    mean = GridMeasure(partition, mean_w / mean_w.sum())
    cfg = distance_cfg or default_distance_config(partition)
    dispersion = 0.0
    for i in range(len(per_ic)):
        for j in range(i + 1, len(per_ic)):
            dispersion = max(dispersion, weak_star_distance(per_ic[i], per_ic[j], cfg))
    return PhysicalMeasureEstimate(mean=mean, dispersion=dispersion,
                                   per_ic=per_ic, escaped=escaped,
                                   samples_per_ic=n - burn_in)


def _ensemble_counts_batch(system, ics, n, burn_in, partition):
    space = system.space
    m = len(ics)
    cells = partition.cells
    X = space.wrap(np.array(ics, dtype=float))
    alive = np.ones(m, dtype=bool)
    escaped = {}
    counts = np.zeros((m, cells), dtype=np.int64)
    offsets = np.arange(m, dtype=np.int64) * cells
    buffer = np.empty((_ACCUMULATE_CHUNK, m), dtype=np.int64)
    buffered = 0
    all_alive = True

    def flush(upto):
        nonlocal buffered
        if upto == 0:
            return
        block = buffer[:upto]
        if all_alive:
            flat = (block + offsets[None, :]).reshape(-1)
        else:
            flat = (block[:, alive] + offsets[None, alive]).reshape(-1)
        counts.reshape(-1)[:] += np.bincount(flat, minlength=m * cells)
        buffered = 0

    for step in range(n):
        if space.kind == "box":
            inside = np.all((X >= space.lo) & (X <= space.hi), axis=1)
            newly = alive & ~inside
            if newly.any():
                flush(buffered)
                for i in np.nonzero(newly)[0]:
                    escaped[int(i)] = step
                    counts[i] = 0
                alive &= inside
                all_alive = False
                if not alive.any():
                    break
        if step >= burn_in:
            buffer[buffered] = partition.cell_index(X)
            buffered += 1
            if buffered == _ACCUMULATE_CHUNK:
                flush(buffered)
        if step + 1 < n:
            X = system.forward_batch(X)
            if space.kind == "torus":
                X = space.wrap(X)
    flush(buffered)
    return counts, escaped


def _ensemble_counts_loop(system, ics, n, burn_in, partition):
    counts = np.zeros((len(ics), partition.cells), dtype=np.int64)
    escaped = {}
    space = system.space
    for i, ic in enumerate(ics):
        x = space.wrap(np.asarray(ic, dtype=float))
        for step in range(n):
            if space.kind == "box" and not space.contains(x):
                escaped[i] = step
                counts[i] = 0
                break
            if step >= burn_in:
                counts[i, int(partition.cell_index(x))] += 1
            if step + 1 < n:
                x = system.forward(x)
    return counts, escaped
