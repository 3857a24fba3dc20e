"""Phase spaces, differentiable systems, orbit iteration, and ODE time-one maps.

Two kinds of phase space are supported: flat tori T^d with coordinates in
[0, 1)^d and wrap-around metric, and axis-aligned boxes in R^d with the
Euclidean metric.  A system is a callable forward map plus optional inverse
and Jacobian; missing Jacobians fall back to central finite differences.
Time-one maps of smooth vector fields are built by classical RK4 with the
variational (matrix) equation integrated alongside the base state.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

FD_STEP = 1e-6          # central finite-difference step for Jacobians
DEFAULT_ODE_STEP = 1e-3  # RK4 step for time-one maps


class EscapeError(RuntimeError):
    """Raised when a box-space orbit leaves the box.

    Carries the first escape index and the completed orbit prefix so callers
    can salvage partial data (empirical measures over survivors, etc.).
    """

    def __init__(self, index: int, point: np.ndarray, prefix: np.ndarray):
        super().__init__(f"orbit left the box at step {index}")
        self.index = index
        self.point = point
        self.prefix = prefix


class IntegrationError(RuntimeError):
    """Raised when an ODE integration produces non-finite state."""


class DegenerateFrameError(RuntimeError):
    """Raised when an evolved tangent frame collapses numerically."""


@dataclass(frozen=True)
class PhaseSpace:
    """Flat torus [0,1)^d or Euclidean box [lo, hi]."""

    kind: str                       # "torus" or "box"
    dim: int
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("torus", "box"):
            raise ValueError(f"unknown phase space kind {self.kind!r}")
        if self.kind == "box":
            if self.lo is None or self.hi is None:
                raise ValueError("box space needs lo and hi")
            if not np.all(np.asarray(self.hi) > np.asarray(self.lo)):
                raise ValueError("box needs hi > lo componentwise")

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Canonical coordinates: mod 1 on the torus, unchanged on a box."""
        x = np.asarray(x, dtype=float)
        if self.kind == "torus":
            return x % 1.0
        return x

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind == "torus":
            return bool(np.all(np.isfinite(x)))
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def difference(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """a - b as a displacement vector, wrapped to [-1/2, 1/2) on the torus.

        Broadcasts over leading axes.
        """
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if self.kind == "torus":
            d = (d + 0.5) % 1.0 - 0.5
        return d

    def distance(self, a: np.ndarray, b: np.ndarray):
        d = self.difference(a, b)
        return np.sqrt(np.sum(d * d, axis=-1))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n uniform points; on a box, uniform in the box."""
        u = rng.random((n, self.dim))
        if self.kind == "torus":
            return u
        return np.asarray(self.lo) + u * (np.asarray(self.hi) - np.asarray(self.lo))


def low_discrepancy_sequence(count: int, dim: int) -> np.ndarray:
    """Deterministic quasi-uniform points in [0,1)^dim.

    Additive lattice with slopes 1/g, 1/g^2, ..., g the positive root of
    x^{dim+1} = x + 1 (golden ratio in dimension 1); well distributed and
    reproducible without an RNG.
    """
    g = 1.5
    for _ in range(64):
        g = (1.0 + g) ** (1.0 / (dim + 1))
    alpha = g ** -(1.0 + np.arange(dim))
    j = np.arange(1, count + 1, dtype=float)
    return (0.5 + np.outer(j, alpha)) % 1.0


def torus(dim: int) -> PhaseSpace:
    return PhaseSpace(kind="torus", dim=dim)


def box(lo, hi) -> PhaseSpace:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return PhaseSpace(kind="box", dim=len(lo), lo=lo, hi=hi)


@dataclass(frozen=True)
class SmoothSystem:
    """A differentiable self-map of a phase space.

    forward_batch, when present, maps an (n, d) array of points in one call
    and must agree with forward row by row; ensemble code uses it as a fast
    path.  spec carries construction data (matrices, field callables, ...)
    for the example systems.  Systems are immutable and thread-safe.
    """

    space: PhaseSpace
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    forward_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    c1_norm_bound: Optional[float] = None
    label: str = ""
    spec: object = None

    def with_label(self, label: str) -> "SmoothSystem":
        return dataclasses.replace(self, label=label)


@dataclass
class Orbit:
    points: np.ndarray                      # (n, d)
    jacobians: Optional[np.ndarray] = None  # (n, d, d) when cached

    def __len__(self) -> int:
        return len(self.points)


def identity_system(space: PhaseSpace) -> SmoothSystem:
    d = space.dim
    eye = np.eye(d)
    return SmoothSystem(
        space=space,
        forward=lambda x: space.wrap(np.array(x, dtype=float)),
        inverse=lambda x: space.wrap(np.array(x, dtype=float)),
        jacobian=lambda x: eye.copy(),
        forward_batch=lambda xs: space.wrap(np.array(xs, dtype=float)),
        c1_norm_bound=1.0,
        label="identity",
    )


def jacobian_at(system: SmoothSystem, x: np.ndarray) -> np.ndarray:
    """Analytic Jacobian when the system provides one, else central finite
    differences with step FD_STEP (one-sided at box boundaries)."""
    x = np.asarray(x, dtype=float)
    if system.jacobian is not None:
        return np.asarray(system.jacobian(x), dtype=float)
    return _fd_jacobian(system, x)


def _fd_jacobian(system: SmoothSystem, x: np.ndarray) -> np.ndarray:
    space = system.space
    d = space.dim
    J = np.empty((d, d))
    h = FD_STEP
    for c in range(d):
        e = np.zeros(d)
        e[c] = h
        xp, xm = x + e, x - e
        if space.kind == "box":
            # fall back to one-sided differences at the boundary
            if not space.contains(xp):
                J[:, c] = space.difference(system.forward(x), system.forward(xm)) / h
                continue
            if not space.contains(xm):
                J[:, c] = space.difference(system.forward(xp), system.forward(x)) / h
                continue
        fp = system.forward(space.wrap(xp))
        fm = system.forward(space.wrap(xm))
        J[:, c] = space.difference(fp, fm) / (2 * h)
    return J


def iterate(system: SmoothSystem, x: np.ndarray, n: int,
            cache_jacobians: bool = False) -> Orbit:
    """Orbit x, f(x), ..., f^{n-1}(x).

    Box spaces raise EscapeError at the first point outside the box; the
    exception carries the completed prefix.
    """
    if n < 1:
        raise ValueError("orbit length must be >= 1")
    space = system.space
    x = space.wrap(np.asarray(x, dtype=float))
    d = space.dim
    pts = np.empty((n, d))
    jacs = np.empty((n, d, d)) if cache_jacobians else None
    for i in range(n):
        if space.kind == "box" and not space.contains(x):
            raise EscapeError(i, x, pts[:i].copy())
        pts[i] = x
        if cache_jacobians:
            jacs[i] = jacobian_at(system, x)
        if i + 1 < n:
            x = system.forward(x)
    return Orbit(points=pts, jacobians=jacs)


def orbit_jacobian_product(orbit: Orbit) -> np.ndarray:
    """Df^n(x) via the chain rule over cached orbit Jacobians."""
    if orbit.jacobians is None:
        raise ValueError("orbit was iterated without cache_jacobians")
    P = np.eye(orbit.jacobians.shape[1])
    for J in orbit.jacobians:
        P = J @ P
    return P


@dataclass(frozen=True)
class FlowSpec:
    """Vector field data behind a time-one system."""

    field: Callable[[np.ndarray], np.ndarray]
    field_jacobian: Optional[Callable[[np.ndarray], np.ndarray]]
    step: float


def _rk4_flow(field, x: np.ndarray, total_time: float, step: float) -> np.ndarray:
    n = int(round(total_time / step))
    h = step
    for _ in range(n):
        k1 = field(x)
        k2 = field(x + 0.5 * h * k1)
        k3 = field(x + 0.5 * h * k2)
        k4 = field(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(x)):
        raise IntegrationError("non-finite state during integration")
    return x


def _rk4_flow_variational(field, field_jacobian, x: np.ndarray,
                          total_time: float, step: float):
    """Integrate x' = X(x) and J' = DX(x) J jointly; J(0) = I."""
    d = len(x)
    J = np.eye(d)
    h = step
    n = int(round(total_time / step))

    def rhs(state):
        y, M = state
        return field(y), field_jacobian(y) @ M

    for _ in range(n):
        k1x, k1j = rhs((x, J))
        k2x, k2j = rhs((x + 0.5 * h * k1x, J + 0.5 * h * k1j))
        k3x, k3j = rhs((x + 0.5 * h * k2x, J + 0.5 * h * k2j))
        k4x, k4j = rhs((x + h * k3x, J + h * k3j))
        x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        J = J + (h / 6.0) * (k1j + 2 * k2j + 2 * k3j + k4j)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(J))):
        raise IntegrationError("non-finite state during variational integration")
    return x, J


def time_one_map(field: Callable[[np.ndarray], np.ndarray],
                 field_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 *,
                 space: PhaseSpace,
                 step: float = DEFAULT_ODE_STEP,
                 label: str = "time-one map") -> SmoothSystem:
    """Time-1 map of a smooth vector field via classical RK4.

    The Jacobian of the map is the variational flow integrated with the same
    scheme and step.  The inverse integrates the reversed field.  The step
    must divide 1 evenly.
    """
    n_steps = round(1.0 / step)
    if n_steps < 1 or abs(n_steps * step - 1.0) > 1e-12:
        raise ValueError("integrator step must divide 1 evenly")

    if field_jacobian is None:
        def field_jacobian(y, _f=field):  # FD on the field itself
            d = len(y)
            M = np.empty((d, d))
            for c in range(d):
                e = np.zeros(d)
                e[c] = FD_STEP
                M[:, c] = (_f(y + e) - _f(y - e)) / (2 * FD_STEP)
            return M

    def forward(x):
        return _rk4_flow(field, np.asarray(x, dtype=float), 1.0, step)

    def inverse(x):
        return _rk4_flow(lambda y: -field(y), np.asarray(x, dtype=float), 1.0, step)

    def jacobian(x):
        _, J = _rk4_flow_variational(field, field_jacobian,
                                     np.asarray(x, dtype=float), 1.0, step)
        return J

    return SmoothSystem(
        space=space,
        forward=forward,
        inverse=inverse,
        jacobian=jacobian,
        label=label,
        spec=FlowSpec(field=field, field_jacobian=field_jacobian, step=step),
    )
