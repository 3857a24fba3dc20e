"""Entropy-rate estimation from itinerary words, the volume-expansion
potential of a tangent frame, Gibbs defects, separated sets, and the
separated-set pressure estimator.

The central audit quantity is the defect h + avg(phi) where h is an entropy
estimate and phi(x) = -log of the volume growth of the expanding frame at x.
Measures realizing defect >= 0 (up to estimator tolerance) pass the audit;
point masses and other deficient measures fail it with a visibly negative
defect.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .dynamics import EscapeError, SmoothSystem, iterate, jacobian_at
from .measures import GridMeasure, GridPartition

DEFAULT_GIBBS_TOLERANCE = 0.15
DEFAULT_ITINERARY_DEPTH = 8
UNDERSAMPLED_FRACTION = 0.8


class SingularPotentialError(RuntimeError):
    """Df collapses the frame: the expansion potential is undefined."""


class PressureEstimationError(RuntimeError):
    """Splitting or potential evaluation failed at a separated-set point."""

    def __init__(self, point: np.ndarray, cause: Exception):
        super().__init__(f"potential evaluation failed at {point}: {cause}")
        self.point = np.asarray(point)
        self.cause = cause


def shannon_entropy(measure: GridMeasure) -> float:
    """-sum w log w over positive cells, natural log."""
    return measure.entropy()


@dataclass(eq=False)
class ItinerarySample:
    """Length-N cell-id words sampled from orbits, with sample weights."""

    partition: GridPartition
    depth: int
    words: np.ndarray
    weights: Optional[np.ndarray] = None
    dropped: int = 0

    def __post_init__(self):
        w = np.asarray(self.words, dtype=np.int64)
        if w.ndim != 2 or w.shape[1] != self.depth:
            raise ValueError("words must be (samples, depth)")
        if w.size and (w.min() < 0 or w.max() >= self.partition.cells):
            raise ValueError("words contain invalid cell ids")
        self.words = w
        if self.weights is not None:
            wt = np.asarray(self.weights, dtype=float)
            if wt.shape != (len(w),) or np.any(wt < 0):
                raise ValueError("weights must be nonnegative, one per word")
            self.weights = wt / wt.sum()

    def __len__(self) -> int:
        return len(self.words)


def sample_itineraries(system: SmoothSystem, ics: np.ndarray,
                       partition: GridPartition, depth: int) -> ItinerarySample:
    """One length-`depth` word per initial condition, advanced in lock step.

    Box orbits that escape before completing their word are dropped and
    counted in the sample's `dropped` field.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    space = system.space
    X = space.wrap(np.atleast_2d(np.asarray(ics, dtype=float)))
    m = len(X)
    words = np.empty((m, depth), dtype=np.int64)
    alive = np.ones(m, dtype=bool)
    step_one = system.forward_batch
    for i in range(depth):
        if space.kind == "box":
            alive &= np.all((X >= space.lo) & (X <= space.hi), axis=1)
        words[:, i] = partition.cell_index(X)
        if i + 1 < depth:
            if step_one is not None:
                X = space.wrap(step_one(X))
            else:
                X = np.array([space.wrap(system.forward(row)) for row in X])
    kept = words[alive]
    return ItinerarySample(partition=partition, depth=depth, words=kept,
                           dropped=int(m - alive.sum()))


@dataclass(frozen=True)
class EntropyRateEstimate:
    """Entropy-per-symbol estimate from a word sample.

    rate: bias-corrected slope between the word entropy at full depth and at
    depth one, which cancels the common finite-sample and boundary biases.
    word_entropy_per_symbol: the raw word entropy divided by the depth.
    undersampled: set when distinct words approach the sample count, where
    any per-word estimate saturates toward log(sample count)/depth.
    """

    rate: float
    word_entropy_per_symbol: float
    depth: int
    samples: int
    distinct_words: int
    undersampled: bool

    def __float__(self) -> float:
        return self.rate


def _word_entropy(counts: np.ndarray, total: float) -> float:
    p = counts / total
    return float(-(p * np.log(p)).sum())


def entropy_rate_from_sample(sample: ItinerarySample) -> EntropyRateEstimate:
    words = sample.words
    m = len(words)
    if m == 0:
        raise ValueError("empty itinerary sample")
    _, counts = np.unique(words, axis=0, return_counts=True)
    distinct = len(counts)
    h_full = _word_entropy(counts, m) + (distinct - 1) / (2.0 * m)
    _, counts1 = np.unique(words[:, 0], return_counts=True)
    h_one = _word_entropy(counts1, m) + (len(counts1) - 1) / (2.0 * m)
    if sample.depth == 1:
        rate = h_one
    else:
        rate = (h_full - h_one) / (sample.depth - 1)
    raw = _word_entropy(counts, m)
    return EntropyRateEstimate(
        rate=float(rate),
        word_entropy_per_symbol=float(raw / sample.depth),
        depth=sample.depth,
        samples=m,
        distinct_words=distinct,
        undersampled=distinct > UNDERSAMPLED_FRACTION * m,
    )


def itinerary_entropy_rate(system: SmoothSystem, ics: np.ndarray,
                           partition: GridPartition,
                           depth: int = DEFAULT_ITINERARY_DEPTH
                           ) -> EntropyRateEstimate:
    """Entropy rate of the empirical length-`depth` word distribution."""
    return entropy_rate_from_sample(
        sample_itineraries(system, ics, partition, depth))


def expansion_potential(system: SmoothSystem, x: np.ndarray,
                        F_frame: np.ndarray) -> float:
    """-log of the volume growth of the frame under Df at x.

    Computed as -1/2 log det(G^T G) with G = Df(x) applied to the frame
    columns; requires an orthonormal frame.
    """
    G = jacobian_at(system, np.asarray(x, dtype=float)) @ F_frame
    gram = G.T @ G
    det = float(np.linalg.det(gram))
    if not np.isfinite(det) or det <= 0.0:
        raise SingularPotentialError(f"frame image degenerate at {x} (det {det})")
    return -0.5 * float(np.log(det))


FrameSource = Union[np.ndarray, Callable[[np.ndarray], object]]


def _frame_at(source: FrameSource, x: np.ndarray) -> np.ndarray:
    if isinstance(source, np.ndarray):
        return source
    out = source(x)
    F = getattr(out, "F_frame", out)
    return np.asarray(F, dtype=float)


def birkhoff_potential_sum(system: SmoothSystem, x: np.ndarray, m: int,
                           F_source: FrameSource) -> float:
    """S_m phi at x: the potential summed over x, f(x), ..., f^{m-1}(x)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    z = system.space.wrap(np.asarray(x, dtype=float))
    total = 0.0
    for i in range(m):
        total += expansion_potential(system, z, _frame_at(F_source, z))
        if i + 1 < m:
            z = system.forward(z)
    return total


def coevolved_potential_average(system: SmoothSystem, x: np.ndarray, n: int,
                                F0: np.ndarray) -> tuple:
    """Average potential along an orbit with the frame pushed by Df.

    The frame is re-orthonormalized every step via QR, so the step
    potential is -sum(log |diag R|), the exact log volume growth of the
    evolving plane.  Returns (average, final frame); use when no constant
    invariant frame exists.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    z = system.space.wrap(np.asarray(x, dtype=float))
    Q = np.asarray(F0, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None]
    total = 0.0
    for i in range(n):
        G = jacobian_at(system, z) @ Q
        Q, R = np.linalg.qr(G)
        diag = np.abs(np.diag(R))
        if not np.all(np.isfinite(diag)) or np.any(diag == 0.0):
            raise SingularPotentialError(
                f"frame image degenerate at step {i} near {z}")
        total -= float(np.sum(np.log(diag)))
        if i + 1 < n:
            z = system.forward(z)
    return total / n, Q


@dataclass(eq=False)
class GibbsReport:
    """Entropy, average potential, and their sum (the defect).

    The flag is set when the defect clears -tolerance; a strongly negative
    defect marks a measure that concentrates more than its expansion allows.
    """

    entropy_estimate: float
    potential_average: float
    defect: float
    tolerance: float
    gibbs_compatible: bool
    entropy_samples: int = 0
    potential_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "entropy_estimate": self.entropy_estimate,
            "potential_average": self.potential_average,
            "defect": self.defect,
            "tolerance": self.tolerance,
            "gibbs_compatible": self.gibbs_compatible,
            "entropy_samples": self.entropy_samples,
            "potential_samples": self.potential_samples,
        }

    def export_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def gibbs_defect(h: float, potential_avg: float, *,
                 tolerance: float = DEFAULT_GIBBS_TOLERANCE,
                 entropy_samples: int = 0,
                 potential_samples: int = 0) -> GibbsReport:
    """Defect h + potential_avg; compatible iff defect >= -tolerance."""
    if not (np.isfinite(h) and np.isfinite(potential_avg)):
        raise ValueError("entropy and potential average must be finite")
    defect = h + potential_avg
    return GibbsReport(entropy_estimate=float(h),
                       potential_average=float(potential_avg),
                       defect=float(defect),
                       tolerance=float(tolerance),
                       gibbs_compatible=bool(defect >= -tolerance),
                       entropy_samples=entropy_samples,
                       potential_samples=potential_samples)


@dataclass(eq=False)
class SeparatedSet:
    """Points pairwise separated by delta somewhere in their first m steps."""

    points: np.ndarray
    delta: float
    m: int
    birkhoff_sums: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.delta <= 0 or self.m < 1:
            raise ValueError("need delta > 0 and m >= 1")

    def __len__(self) -> int:
        return len(self.points)


def _orbit_block(system: SmoothSystem, X: np.ndarray, m: int):
    """Orbits of all rows of X for m steps: array (m, len(X), d).

    Box escapes invalidate a row; the companion mask marks rows whose full
    m-step orbit stayed inside.
    """
    space = system.space
    X = space.wrap(np.array(X, dtype=float))
    count, d = X.shape
    orbits = np.empty((m, count, d))
    ok = np.ones(count, dtype=bool)
    for i in range(m):
        if space.kind == "box":
            ok &= np.all((X >= space.lo) & (X <= space.hi), axis=1)
        orbits[i] = X
        if i + 1 < m:
            if system.forward_batch is not None:
                X = space.wrap(system.forward_batch(X))
            else:
                X = np.array([space.wrap(system.forward(row)) for row in X])
    return orbits, ok


def greedy_separated_set(candidates: np.ndarray, system: SmoothSystem,
                         delta: float, m: int) -> SeparatedSet:
    """First-fit scan: keep a candidate iff no kept point shadows it.

    Two points conflict when every one of the first m steps keeps them
    closer than delta.  Pairs already delta-apart at step 0 never conflict,
    so only step-0 neighbors (found through a spatial hash with cell size
    delta) need their orbits compared.  Scan order is input order, making
    the result reproducible and maximal within the candidate list.
    """
    if delta <= 0 or m < 1:
        raise ValueError("need delta > 0 and m >= 1")
    space = system.space
    X = np.atleast_2d(np.asarray(candidates, dtype=float))
    orbits, ok = _orbit_block(system, X, m)
    idx_ok = np.nonzero(ok)[0]

    if space.kind == "torus":
        cells_per_axis = max(1, int(np.floor(1.0 / delta)))
        def cell_of(p):
            return tuple((np.floor(p / (1.0 / cells_per_axis))
                          .astype(int)) % cells_per_axis)
        def neighbor_cells(c):
            d = len(c)
            for off in np.ndindex(*(3,) * d):
                yield tuple((c[a] + off[a] - 1) % cells_per_axis
                            for a in range(d))
    else:
        def cell_of(p):
            return tuple(np.floor((p - space.lo) / delta).astype(int))
        def neighbor_cells(c):
            d = len(c)
            for off in np.ndindex(*(3,) * d):
                yield tuple(c[a] + off[a] - 1 for a in range(d))

    kept: list = []
    hash_map: dict = {}
    for j in idx_ok:
        p = orbits[0, j]
        cell = cell_of(p)
        neighbors = []
        for nc in neighbor_cells(cell):
            neighbors.extend(hash_map.get(nc, ()))
        keep = True
        if neighbors:
            cand_orbit = orbits[:, j, :][:, None, :]
            others = orbits[:, neighbors, :]
            dists = space.distance(cand_orbit, others)
            if np.any(dists.max(axis=0) < delta):
                keep = False
        if keep:
            hash_map.setdefault(cell, []).append(j)
            kept.append(j)
    return SeparatedSet(points=orbits[0, kept].copy(), delta=delta, m=m)


def separation_violations(E: SeparatedSet, system: SmoothSystem) -> int:
    """Number of kept pairs that are not (delta, m)-separated (should be 0)."""
    orbits, _ = _orbit_block(system, E.points, E.m)
    space = system.space
    k = len(E)
    bad = 0
    for i in range(k):
        for j in range(i + 1, k):
            d = space.distance(orbits[:, i, :], orbits[:, j, :])
            if d.max() < E.delta:
                bad += 1
    return bad


def pressure_estimate(E: SeparatedSet, system: SmoothSystem,
                      F_source: FrameSource, *, threads: int = 1) -> float:
    """(1/m) log sum over E of exp(S_m phi), via log-sum-exp.

    Caches the Birkhoff sums into E.  Potential failures propagate with the
    offending point attached.
    """
    if len(E) == 0:
        raise ValueError("separated set is empty")

    def sum_at(z):
        try:
            return birkhoff_potential_sum(system, z, E.m, F_source)
        except (SingularPotentialError, EscapeError) as exc:
            raise PressureEstimationError(z, exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sums = np.fromiter(pool.map(sum_at, E.points), dtype=float,
                               count=len(E))
    else:
        sums = np.fromiter((sum_at(z) for z in E.points), dtype=float,
                           count=len(E))
    E.birkhoff_sums = sums
    return float(logsumexp(sums) / E.m)


def write_pressure_curve(path, rows: Sequence[dict]) -> None:
    """CSV rows (m, set_size, pressure) under a '#' schema comment."""
    with open(path, "w", newline="") as fh:
        fh.write("# schema=m,set_size,pressure\n")
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow([row["m"], row["set_size"], repr(row["pressure"])])
