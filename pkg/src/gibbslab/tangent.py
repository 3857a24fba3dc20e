"""Tangent-space diagnostics: Lyapunov spectra by periodic QR, estimation of
invariant splittings, domination ratios, cone contraction, and Bowen balls.

The splitting estimator evolves a candidate expanding frame forward from a
backward orbit endpoint and a candidate contracting frame backward along a
forward orbit; both are compared against half-horizon runs to measure
convergence.  Systems whose inverse blows up (time-one maps of dissipative
flows) fall back to a forward-only estimate without a contracting frame.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .dynamics import (DegenerateFrameError, EscapeError, IntegrationError,
                       Orbit, SmoothSystem, iterate, jacobian_at)

REORTHONORMALIZATION_PERIOD = 10
PRINCIPAL_ANGLE_FLOOR = 1e-6
FRAME_ORTHONORMALITY_TOL = 1e-10
GROWTH_GAP_FLOOR = 1e-9
CONE_MESH_SIZE = 64
DEFAULT_CONE_APERTURE = 0.5
DEFAULT_CONE_LOCALITY = 0.1
DEFAULT_BOWEN_RADIUS = 0.05


class NoDominationError(RuntimeError):
    """Frame evolution found no spectral gap or failed to converge."""


class ConeInvarianceWarning(RuntimeWarning):
    """A sampled cone boundary vector left the unit cone during iteration."""


@dataclass(frozen=True)
class LyapunovResult:
    """Chain-rule growth rates from periodic QR re-orthonormalization."""

    exponents: tuple
    orbit_length: int
    reorthonormalization_period: int


@dataclass(eq=False)
class TangentSplitting:
    """Orthonormal frames for a contracting/expanding pair at a point.

    E_frame is None when only the expanding bundle could be estimated
    (systems without a usable inverse).  convergence_residual is the
    operator-norm distance between the orthogonal projectors obtained at
    the full and the half estimation horizon.
    """

    basepoint: np.ndarray
    E_frame: Optional[np.ndarray]
    F_frame: np.ndarray
    convergence_residual: float

    def __post_init__(self):
        self.basepoint = np.asarray(self.basepoint, dtype=float)
        self.F_frame = _check_frame(np.asarray(self.F_frame, dtype=float), "F_frame")
        if self.E_frame is not None:
            self.E_frame = _check_frame(np.asarray(self.E_frame, dtype=float),
                                        "E_frame")
            if self.E_frame.shape[1] + self.F_frame.shape[1] != len(self.basepoint):
                raise ValueError("frame dimensions do not sum to the phase dimension")
            overlap = np.linalg.svd(self.E_frame.T @ self.F_frame,
                                    compute_uv=False)
            if overlap.size:
                angle = np.arccos(min(1.0, float(overlap.max())))
                if angle <= PRINCIPAL_ANGLE_FLOOR:
                    raise ValueError(
                        f"E and F frames overlap: principal angle {angle:.3e}")
        if self.convergence_residual < 0:
            raise ValueError("convergence_residual must be nonnegative")

    @property
    def dimF(self) -> int:
        return self.F_frame.shape[1]


def _check_frame(Q: np.ndarray, name: str) -> np.ndarray:
    if Q.ndim != 2:
        raise ValueError(f"{name} must be a (d, k) column frame")
    gram = Q.T @ Q
    if np.max(np.abs(gram - np.eye(Q.shape[1]))) > FRAME_ORTHONORMALITY_TOL:
        raise ValueError(f"{name} is not orthonormal within "
                         f"{FRAME_ORTHONORMALITY_TOL}")
    return Q


@dataclass(frozen=True, eq=False)
class ConeSpec:
    """Vectors whose component ratio around a center frame is below aperture."""

    center: np.ndarray
    aperture: float

    def __post_init__(self):
        object.__setattr__(self, "center",
                           _check_frame(np.asarray(self.center, dtype=float),
                                        "center"))
        if not 0.0 < self.aperture <= 1.0:
            raise ValueError("aperture must lie in (0, 1]")


@dataclass(frozen=True)
class DominationReport:
    ok: bool
    worst_ratio: float


_SPREAD_LOG_BUDGET = 14.0  # growth-rate spread a product may accumulate


def lyapunov_spectrum(system: SmoothSystem, x: np.ndarray, n: int, *,
                      period: int = REORTHONORMALIZATION_PERIOD) -> LyapunovResult:
    """All d exponents from n Jacobian applications along the orbit of x.

    The evolved frame is re-orthonormalized every `period` steps, or more
    often when the spread between the fastest and slowest growth rate makes
    longer Jacobian products ill-conditioned (the spread is measured during
    a per-step warmup of `period` steps).  The accumulated log R diagonals
    are unchanged by the cadence in exact arithmetic.
    """
    if period < 1:
        raise ValueError("period must be >= 1")
    if n < 10 * period:
        raise ValueError(f"n must be at least 10*period = {10 * period}")
    space = system.space
    x = space.wrap(np.asarray(x, dtype=float))
    d = space.dim
    if space.kind == "box" and not space.contains(x):
        raise EscapeError(0, x, np.empty((0, d)))
    jac = system.jacobian
    if jac is None:
        def jac(y, _s=system):
            return jacobian_at(_s, y)
    forward = system.forward
    boxlike = space.kind == "box"
    qr = np.linalg.qr
    diagonal = np.diagonal
    M = np.eye(d)
    sums = np.zeros(d)
    since_qr = 0
    cadence = 1
    warmup = min(period, n)
    spread_seen = 0.0
    # R diagonals buffer: log/finite/spread processing amortizes over events
    buf = np.empty((512, d))
    steps_per_event = np.empty(512)
    nev = 0

    def flush(upto_step):
        nonlocal nev, spread_seen, cadence
        if nev == 0:
            return
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.log(np.abs(buf[:nev]))
        if not np.all(np.isfinite(logs)):
            raise DegenerateFrameError(
                f"R diagonal degenerate before step {upto_step}")
        sums[:] += logs.sum(axis=0)
        spreads = (logs.max(axis=1) - logs.min(axis=1)) / steps_per_event[:nev]
        worst = float(spreads.max())
        if worst > spread_seen:
            spread_seen = worst
        while spread_seen * cadence > _SPREAD_LOG_BUDGET and cadence > 1:
            cadence //= 2
        nev = 0

    for i in range(n):
        M = jac(x) @ M
        since_qr += 1
        if since_qr == cadence or i + 1 == n:
            M, R = qr(M)
            buf[nev] = diagonal(R)
            steps_per_event[nev] = since_qr
            nev += 1
            since_qr = 0
            if nev == 512:
                flush(i + 1)
            if i + 1 == warmup:
                flush(i + 1)
                cadence = max(1, min(period, int(_SPREAD_LOG_BUDGET
                                                 / max(spread_seen, 1.4))))
        if i + 1 < n:
            x = forward(x)
            if boxlike and not space.contains(x):
                raise EscapeError(i + 1, x, np.empty((0, d)))
    flush(n)
    exponents = np.sort(sums / n)[::-1]
    return LyapunovResult(exponents=tuple(float(e) for e in exponents),
                          orbit_length=n,
                          reorthonormalization_period=period)


def _push_frame(J: np.ndarray, Q: np.ndarray):
    """One forward step of a frame: QR of J Q, with log growth per column."""
    Qn, R = np.linalg.qr(J @ Q)
    diag = np.abs(np.diag(R))
    if np.any(diag < 1e-300) or not np.all(np.isfinite(diag)):
        raise DegenerateFrameError("frame collapsed during evolution")
    return Qn, np.log(diag)


def _pull_frame(J: np.ndarray, Q: np.ndarray):
    """One backward step: QR of J^{-1} Q via a linear solve."""
    Qn, R = np.linalg.qr(np.linalg.solve(J, Q))
    diag = np.abs(np.diag(R))
    if np.any(diag < 1e-300) or not np.all(np.isfinite(diag)):
        raise DegenerateFrameError("frame collapsed during backward evolution")
    return Qn, np.log(diag)


def _projector_distance(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.linalg.norm(A @ A.T - B @ B.T, 2))


@lru_cache(maxsize=None)
def _generic_frame(d: int) -> np.ndarray:
    """A fixed dense rotation of R^d used to seed frame evolution.

    Axis-aligned seeds can sit exactly inside an invariant complementary
    subspace (block-diagonal systems) and then never converge to the
    dominant bundle; a dense orthogonal matrix avoids that.
    """
    idx = np.arange(d)
    S = 0.7 / (1.0 + idx[:, None] + 2.0 * idx[None, :])
    return expm(S - S.T)


def estimate_splitting(system: SmoothSystem, x: np.ndarray, n: int,
                       dimF: int) -> TangentSplitting:
    """Estimate the invariant splitting at x with estimation horizon n.

    The expanding frame is seeded at the n-th backward iterate and pushed
    forward to x; the complementary frame is seeded at the n-th forward
    iterate and pulled back to x.  The residual compares each frame with a
    half-horizon rerun.  A vanishing gap between the slowest expanding and
    the fastest contracting growth rate raises NoDominationError.

    When the backward orbit escapes or diverges, the estimate falls back to
    forward evolution only: the returned basepoint is then the forward
    endpoint f^n(x), E_frame is None, and the residual compares two
    independently seeded frames.
    """
    if n < 100:
        raise ValueError("estimation horizon must be at least 100")
    d = system.space.dim
    if not 1 <= dimF < d:
        raise ValueError("dimF must satisfy 1 <= dimF < d")
    x = system.space.wrap(np.asarray(x, dtype=float))

    back = _backward_orbit(system, x, n)
    if back is None:
        return _forward_only_splitting(system, x, n, dimF)

    half = n // 2
    seed = _generic_frame(d)
    # expanding side: seed at f^{-n}(x), push forward to x
    Qf = seed[:, :dimF].copy()
    Qf_half = None
    logs_f = np.zeros(dimF)
    for k in range(n):
        J = jacobian_at(system, back[k])
        Qf, step_logs = _push_frame(J, Qf)
        logs_f += step_logs
        if k == n - half - 1:
            Qf_half = seed[:, :dimF].copy()
        elif Qf_half is not None:
            Qf_half, _ = _push_frame(J, Qf_half)
    residual_f = _projector_distance(Qf, Qf_half)

    # contracting side: seed at f^{n}(x), pull back to x
    fwd = iterate(system, x, n + 1).points
    dimE = d - dimF
    Qe = seed[:, d - dimE:].copy()
    Qe_half = None
    logs_e = np.zeros(dimE)
    for k in range(n - 1, -1, -1):
        J = jacobian_at(system, fwd[k])
        Qe, step_logs = _pull_frame(J, Qe)
        logs_e += step_logs
        if k == half:
            Qe_half = seed[:, d - dimE:].copy()
        elif Qe_half is not None:
            Qe_half, _ = _pull_frame(J, Qe_half)
    residual_e = _projector_distance(Qe, Qe_half)

    rate_f_min = float(np.min(logs_f) / n)
    rate_e_max = float(-np.min(logs_e) / n)  # backward growth negated
    if rate_f_min - rate_e_max <= GROWTH_GAP_FLOOR:
        raise NoDominationError(
            f"no spectral gap: slowest expanding rate {rate_f_min:.6f} "
            f"does not exceed fastest contracting rate {rate_e_max:.6f}")
    residual = max(residual_f, residual_e)
    if residual >= 0.9:
        raise NoDominationError(
            f"frames did not converge (residual {residual:.3f})")
    return TangentSplitting(basepoint=x, E_frame=Qe, F_frame=Qf,
                            convergence_residual=residual)


def _backward_orbit(system: SmoothSystem, x: np.ndarray, n: int):
    """Points f^{-n}(x), ..., f^{-1}(x) or None when unavailable."""
    if system.inverse is None:
        return None
    space = system.space
    pts = np.empty((n, space.dim))
    z = x
    try:
        for i in range(n):
            z = space.wrap(np.asarray(system.inverse(z), dtype=float))
            if not (np.all(np.isfinite(z)) and space.contains(z)):
                return None
            pts[n - 1 - i] = z
    except (IntegrationError, EscapeError, FloatingPointError, OverflowError):
        return None
    return pts


def _forward_only_splitting(system: SmoothSystem, x: np.ndarray, n: int,
                            dimF: int) -> TangentSplitting:
    d = system.space.dim
    fwd = iterate(system, x, n + 1).points
    seed = _generic_frame(d)
    Qa = seed[:, :dimF].copy()
    Qb = np.roll(seed, 1, axis=1)[:, :dimF]
    for k in range(n):
        J = jacobian_at(system, fwd[k])
        Qa, _ = _push_frame(J, Qa)
        Qb, _ = _push_frame(J, Qb)
    residual = _projector_distance(Qa, Qb)
    if residual >= 0.5:
        raise NoDominationError(
            f"forward frames did not converge (residual {residual:.3f})")
    return TangentSplitting(basepoint=fwd[-1], E_frame=None, F_frame=Qa,
                            convergence_residual=residual)


def domination_check(system: SmoothSystem, orbit: Orbit,
                     splittings: Sequence[TangentSplitting]) -> DominationReport:
    """Worst ‖(Df|_F)^{-1}‖ ‖Df|_E‖ over the orbit; ok iff strictly below 1."""
    points = orbit.points
    if len(splittings) != len(points):
        raise ValueError(f"{len(splittings)} splittings for "
                         f"{len(points)} orbit points")
    worst = 0.0
    for i, s in enumerate(splittings):
        if s.E_frame is None:
            raise ValueError("domination check needs both frames; "
                             f"splitting {i} has no E_frame")
        J = (orbit.jacobians[i] if orbit.jacobians is not None
             else jacobian_at(system, points[i]))
        norm_E = np.linalg.svd(J @ s.E_frame, compute_uv=False).max()
        sing_F = np.linalg.svd(J @ s.F_frame, compute_uv=False)
        if sing_F.min() < 1e-300:
            raise DegenerateFrameError(f"Df collapses F at orbit index {i}")
        worst = max(worst, float(norm_E) / float(sing_F.min()))
    return DominationReport(ok=worst < 1.0, worst_ratio=worst)


def _mesh_directions(k: int, count: int, lead: Optional[np.ndarray] = None
                     ) -> np.ndarray:
    """Deterministic unit vectors in R^k.

    Signed axes plus planar circle points, preceded by optional lead
    directions (placed first so extremal samples survive truncation).
    """
    dirs = [] if lead is None else [np.asarray(v, dtype=float) for v in lead]
    if k == 1:
        dirs.extend([np.array([1.0]), np.array([-1.0])])
        return np.asarray(dirs)[:count]
    for a in range(k):
        e = np.zeros(k)
        e[a] = 1.0
        dirs.append(e.copy())
        dirs.append(-e)
    per_plane = max(4, count // max(1, k * (k - 1) // 2))
    for a in range(k):
        for b in range(a + 1, k):
            for t in range(per_plane):
                ang = 2.0 * np.pi * t / per_plane
                e = np.zeros(k)
                e[a] = np.cos(ang)
                e[b] = np.sin(ang)
                dirs.append(e)
    return np.asarray(dirs)[:count]


def cone_contraction(system: SmoothSystem, x: np.ndarray, cone: ConeSpec,
                     n: int) -> float:
    """Per-step geometric-mean contraction of the cone boundary under Df^n.

    Boundary vectors v = u_F + aperture * u_E are sampled over a
    deterministic direction mesh seeded with the extremal (singular)
    directions of the n-step derivative restricted to the two spans, so the
    worst boundary ray is always sampled.  The expanding frame is co-evolved
    by QR and the transverse component is measured against it.  A boundary
    vector whose transverse/frame ratio exceeds 1 at any step triggers a
    ConeInvarianceWarning; the factor is still returned.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = system.space.wrap(np.asarray(x, dtype=float))
    F = cone.center
    d, dimF = F.shape
    dimE = d - dimF
    if dimE == 0:
        raise ValueError("cone center spans the whole space")
    # orthogonal complement of the center frame
    full, _ = np.linalg.qr(np.hstack([F, np.eye(d)]))
    E = full[:, dimF:d]

    orbit = iterate(system, x, n, cache_jacobians=True)
    product = np.eye(d)
    for J in orbit.jacobians:
        product = J @ product
    # right singular vectors: slowest-growing F direction, fastest E direction
    wf = np.linalg.svd(product @ F, compute_uv=True)[2]
    we = np.linalg.svd(product @ E, compute_uv=True)[2]
    mesh_f = _mesh_directions(dimF, CONE_MESH_SIZE // 8 if dimF > 1 else 2,
                              lead=wf[::-1])
    mesh_e = _mesh_directions(dimE, CONE_MESH_SIZE // max(1, len(mesh_f)),
                              lead=we)
    V = np.empty((d, len(mesh_f) * len(mesh_e)))
    col = 0
    for uf in mesh_f:
        for ue in mesh_e:
            V[:, col] = F @ uf + cone.aperture * (E @ ue)
            col += 1

    Q = F.copy()
    escaped = False
    for step in range(n):
        J = orbit.jacobians[step]
        V = J @ V
        Q, _ = _push_frame(J, Q)
        comp_F = Q.T @ V
        resid = V - Q @ comp_F
        ratio = (np.linalg.norm(resid, axis=0)
                 / np.maximum(np.linalg.norm(comp_F, axis=0), 1e-300))
        if not escaped and np.any(ratio > 1.0):
            escaped = True
            warnings.warn(
                f"cone boundary vector left the unit cone at step {step + 1} "
                f"(worst ratio {ratio.max():.3f})", ConeInvarianceWarning)
    final_ratio = float(np.max(ratio))
    return float((final_ratio / cone.aperture) ** (1.0 / n))


def bowen_ball_contains(system: SmoothSystem, x: np.ndarray, y: np.ndarray,
                        delta: float, n: int) -> bool:
    """True iff d(f^i x, f^i y) < delta for all 0 <= i <= n-1.

    On box spaces, an orbit leaving the domain before step n-1 counts as
    leaving the ball.
    """
    if n < 1 or delta <= 0:
        raise ValueError("need n >= 1 and delta > 0")
    space = system.space
    a = space.wrap(np.asarray(x, dtype=float))
    b = space.wrap(np.asarray(y, dtype=float))
    for i in range(n):
        if space.kind == "box" and not (space.contains(a) and space.contains(b)):
            return False
        if space.distance(a, b) >= delta:
            return False
        if i + 1 < n:
            a = system.forward(a)
            b = system.forward(b)
    return True


def splittings_to_csv(splittings: Sequence[TangentSplitting], path) -> None:
    """Rows of basepoint coordinates, flattened frames, and residuals."""
    with open(path, "w", newline="") as fh:
        fh.write("# schema=basepoint,F_frame,E_frame,convergence_residual\n")
        writer = csv.writer(fh)
        for s in splittings:
            e_flat = ([] if s.E_frame is None
                      else [repr(float(v)) for v in s.E_frame.ravel()])
            writer.writerow(
                [repr(float(v)) for v in s.basepoint]
                + [repr(float(v)) for v in s.F_frame.ravel()]
                + e_flat + [repr(float(s.convergence_residual))])
