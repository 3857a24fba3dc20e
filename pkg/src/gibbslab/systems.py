"""Concrete example systems.

Four families are shipped, all as SmoothSystem instances:

* the 2-torus automorphism with matrix [[2,1],[1,1]] ("cat"),
* the 4-torus automorphism diag(A0^2, A0^3) with four distinct positive
  eigenvalues straddling the gap (1/3, 3) ("anosov_t4"),
* a compactly supported deformation of the T^4 map that pushes one fixed
  point through a pitchfork bifurcation and twists the contracting plane at
  one of the new fixed points, with the mirrored deformation applied to the
  inverse near a second fixed point ("bonatti_viana"),
* the time-one map of the Lorenz-63 flow on a trapping box, with compiled
  RK4 kernels for the state and variational equations ("lorenz").
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy.optimize import brentq

from .dynamics import (IntegrationError, PhaseSpace, SmoothSystem, box,
                       jacobian_at, low_discrepancy_sequence, time_one_map,
                       torus)
from .perturb import bump_profile


class ConstructionError(ValueError):
    """A system constructor received parameters it cannot realize."""


# ---------------------------------------------------------------------------
# linear toral automorphisms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearToralSpec:
    """Integer unimodular matrix acting on the torus, with its spectrum.

    eigen_data holds "values" (ascending absolute value) and "vectors"
    (matching unit columns), computed at construction.
    """

    matrix: np.ndarray
    eigen_data: dict = field(default_factory=dict)

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ConstructionError("matrix must be square")
        if not np.allclose(M, np.round(M)):
            raise ConstructionError("matrix entries must be integers")
        if abs(abs(np.linalg.det(M)) - 1.0) > 1e-9:
            raise ConstructionError("matrix must have determinant +-1")
        object.__setattr__(self, "matrix", np.round(M))
        if not self.eigen_data:
            if np.allclose(M, M.T):
                values, vectors = np.linalg.eigh(M)
            else:
                values, vectors = np.linalg.eig(M)
                values, vectors = values.real, vectors.real
            order = np.argsort(np.abs(values))
            object.__setattr__(self, "eigen_data", {
                "values": values[order],
                "vectors": vectors[:, order],
            })


def linear_toral_system(matrix, label: str) -> SmoothSystem:
    spec = LinearToralSpec(matrix=np.asarray(matrix))
    M = spec.matrix
    d = M.shape[0]
    Minv = np.round(np.linalg.inv(M))
    if not np.array_equal(M @ Minv, np.eye(d)):
        raise ConstructionError("inverse matrix is not integer")
    space = torus(d)
    return SmoothSystem(
        space=space,
        forward=lambda x: space.wrap(M @ np.asarray(x, dtype=float)),
        inverse=lambda x: space.wrap(Minv @ np.asarray(x, dtype=float)),
        jacobian=lambda x: M,
        forward_batch=lambda xs: space.wrap(np.asarray(xs, dtype=float) @ M.T),
        c1_norm_bound=float(np.linalg.norm(M, 2)),
        label=label,
        spec=spec,
    )


def make_cat_map() -> SmoothSystem:
    """Hyperbolic automorphism of T^2 with matrix [[2,1],[1,1]]."""
    return linear_toral_system([[2, 1], [1, 1]], label="cat")


def make_anosov_T4() -> SmoothSystem:
    """Block automorphism diag(A0^2, A0^3) of T^4, A0 the cat matrix.

    Spectrum: lam^{-3} < lam^{-2} < 1/3 < 3 < lam^2 < lam^3 with
    lam = (3+sqrt(5))/2; the gap between the two contracting and the two
    expanding eigenvalues is what the splitting and pressure tests exercise.
    """
    A0 = np.array([[2, 1], [1, 1]])
    M = np.zeros((4, 4), dtype=int)
    M[:2, :2] = A0 @ A0
    M[2:, 2:] = A0 @ A0 @ A0
    system = linear_toral_system(M, label="anosov_t4")
    values = system.spec.eigen_data["values"]
    assert 0 < values[0] < values[1] < 1.0 / 3.0, "contracting pair outside (0, 1/3)"
    assert 3.0 < values[2] < values[3], "expanding pair not above 3"
    return system


# ---------------------------------------------------------------------------
# deformed T^4 map
# ---------------------------------------------------------------------------

def _pitch_profile(xi, height, rise, length):
    """Odd C^2 profile: slope-1 rise to `height` at `rise`, smooth descent
    to zero at `length`, identically zero beyond."""
    xi = np.asarray(xi, dtype=float)
    a = np.abs(xi)
    t1 = np.clip(a / rise, 0.0, 1.0)
    u_rise = height * ((((0.6 * t1 - 0.6) * t1 - 0.8) * t1 * t1 + 1.8) * t1)
    t2 = np.clip((a - rise) / (length - rise), 0.0, 1.0)
    w = ((6.0 * t2 - 15.0) * t2 + 10.0) * t2 ** 3
    u = np.where(a <= rise, u_rise, height * (1.0 - w))
    u = np.where(a >= length, 0.0, u)
    return np.sign(xi) * u


def _pitch_slope(xi, height, rise, length):
    xi = np.asarray(xi, dtype=float)
    a = np.abs(xi)
    t1 = np.clip(a / rise, 0.0, 1.0)
    du_rise = (height / rise) * (((3.0 * t1 - 2.4) * t1 - 2.4) * t1 * t1 + 1.8)
    t2 = np.clip((a - rise) / (length - rise), 0.0, 1.0)
    dw = 30.0 * t2 * t2 * (t2 - 1.0) ** 2
    du = np.where(a <= rise, du_rise, -(height / (length - rise)) * dw)
    return np.where(a >= length, 0.0, du)


class _Deformation:
    """Pitchfork along one axis composed with a localized plane rotation.

    Works in displacement coordinates relative to an anchor point.  The
    rotation is applied first, centered at rot_offset on the axis; then the
    axial coordinate is sheared by strength * bump(transverse) * profile(xi).
    Both factors are exactly the identity outside their supports, both are
    invertible in closed or one-dimensional-monotone form, and the Jacobian
    is available analytically.
    """

    def __init__(self, axis, plane, rot_offset, rot_radius, angle,
                 strength, height, rise, length, trans_radius):
        self.axis = np.asarray(axis, dtype=float)
        self.e1 = np.asarray(plane[0], dtype=float)
        self.e2 = np.asarray(plane[1], dtype=float)
        self.rot_center = rot_offset * self.axis
        self.rot_radius = rot_radius
        self.angle = angle
        self.strength = strength
        self.height = height
        self.rise = rise
        self.length = length
        self.trans_radius = trans_radius

    # rotation factor ------------------------------------------------------

    def _rotate(self, delta, sign):
        v = delta - self.rot_center
        rho = np.linalg.norm(v, axis=-1)
        t = np.clip(rho / self.rot_radius, 0.0, 1.0)
        alpha = sign * self.angle * bump_profile(t)
        a = v @ self.e1
        b = v @ self.e2
        ca, sa = np.cos(alpha), np.sin(alpha)
        return (delta
                + ((ca - 1.0) * a - sa * b)[..., None] * self.e1
                + (sa * a + (ca - 1.0) * b)[..., None] * self.e2)

    def _rotate_jacobian(self, delta):
        d = len(self.axis)
        v = delta - self.rot_center
        rho = float(np.linalg.norm(v))
        t = min(rho / self.rot_radius, 1.0)
        alpha = self.angle * float(bump_profile(t))
        a, b = float(v @ self.e1), float(v @ self.e2)
        ca, sa = np.cos(alpha), np.sin(alpha)
        J = np.eye(d)
        J += (ca - 1.0) * (np.outer(self.e1, self.e1) + np.outer(self.e2, self.e2))
        J += sa * (np.outer(self.e2, self.e1) - np.outer(self.e1, self.e2))
        if t < 1.0:
            # d alpha / d v = -6 angle (1-t^2)^2 v / r'^2, smooth at rho = 0
            grad = -6.0 * self.angle * (1.0 - t * t) ** 2 / self.rot_radius ** 2 * v
            w = (-sa * a - ca * b) * self.e1 + (ca * a - sa * b) * self.e2
            J += np.outer(w, grad)
        return J

    # pitchfork factor -----------------------------------------------------

    def _beta(self, y, xi):
        perp = y - xi[..., None] * self.axis
        t = np.clip(np.linalg.norm(perp, axis=-1) / self.trans_radius, 0.0, 1.0)
        return bump_profile(t), perp, t

    def _pitch(self, y):
        xi = y @ self.axis
        beta, _, _ = self._beta(y, xi)
        amp = self.strength * beta * _pitch_profile(xi, self.height, self.rise,
                                                    self.length)
        return y + amp[..., None] * self.axis

    def _pitch_inverse(self, y):
        xi_target = y @ self.axis
        beta, _, _ = self._beta(y, xi_target)
        # solve xi + s beta u(xi) = xi_target; monotone since s sup|u'| < 1
        pad = self.strength * self.height
        lo = xi_target - pad
        hi = xi_target + pad
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            g = mid + self.strength * beta * _pitch_profile(
                mid, self.height, self.rise, self.length) - xi_target
            lo = np.where(g < 0.0, mid, lo)
            hi = np.where(g < 0.0, hi, mid)
        xi = 0.5 * (lo + hi)
        return y + (xi - xi_target)[..., None] * self.axis

    def _pitch_jacobian(self, y):
        d = len(self.axis)
        xi = float(y @ self.axis)
        beta, perp, t = self._beta(y, np.asarray(xi))
        beta = float(beta)
        J = np.eye(d)
        J += self.strength * beta * float(_pitch_slope(
            xi, self.height, self.rise, self.length)) * np.outer(self.axis, self.axis)
        if t < 1.0:
            grad_beta = -6.0 * (1.0 - t * t) ** 2 / self.trans_radius ** 2 * perp
            J += self.strength * float(_pitch_profile(
                xi, self.height, self.rise, self.length)) * np.outer(self.axis, grad_beta)
        return J

    # composite ------------------------------------------------------------

    def apply(self, delta):
        return self._pitch(self._rotate(delta, 1.0))

    def invert(self, delta):
        return self._rotate(self._pitch_inverse(delta), -1.0)

    def jacobian(self, delta):
        mid = self._rotate(delta[None, :], 1.0)[0]
        return self._pitch_jacobian(mid) @ self._rotate_jacobian(delta)

    def min_axial_determinant(self) -> float:
        """Exact Jacobian determinant minimum over the support.

        det D(pitch) = 1 + s beta u'(xi) because the transverse-gradient
        term is a nilpotent shear, and det D(rotation) = 1; scanning the
        (xi, transverse) rectangle therefore covers the whole ball.
        """
        xi = np.linspace(-self.length, self.length, 2001)
        t = np.linspace(0.0, 1.0, 501)
        du = _pitch_slope(xi, self.height, self.rise, self.length)
        dets = 1.0 + self.strength * np.outer(bump_profile(t), du)
        return float(dets.min())


@dataclass(frozen=True, eq=False)
class BVSpec:
    """Parameters of the deformed T^4 automorphism.

    p undergoes the pitchfork along the weak contracting eigendirection
    (creating p1, p2); the rotation of the contracting plane lives in the
    radius-r_prime ball at p1.  The mirrored deformation acts near q through
    the inverse, so q trades its weak expanding direction the same way.
    """

    base: LinearToralSpec = None
    p: np.ndarray = (0.0, 0.0, 0.0, 0.0)
    q: np.ndarray = (0.8, 0.6, 0.0, 0.0)
    r: float = 0.1
    r_prime: float = 0.002
    pitchfork_strength: float = 7.0
    rotation_angle: float = 1.2

    def __post_init__(self):
        if self.base is None:
            object.__setattr__(self, "base", make_anosov_T4().spec)
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))


@dataclass(eq=False)
class BVData:
    """Construction record attached to the deformed system."""

    params: BVSpec
    basis: np.ndarray               # eigenvector columns, ascending |value|
    eigenvalues: np.ndarray
    xi_star: float                  # axial offset of the new fixed points
    bifurcation_threshold: float
    fixed_points: dict
    lambda_cs: float                # sup over B_r(p) of log ||Df|_{E^cs}||
    lambda_cu: float                # sup over B_r(q) of log ||Df|_{E^cu}||


def make_bonatti_viana(spec: Optional[BVSpec] = None) -> SmoothSystem:
    """Deformation of the T^4 automorphism with coexisting saddle indices.

    The returned map equals the linear base exactly outside the two radius-r
    balls.  Near p the weak contracting direction is pushed through a
    pitchfork (p becomes stable-index 1; p1, p2 appear with stable index 2)
    and the contracting plane is twisted at p1 so its eigenvalues turn
    complex.  Near q the same surgery is applied to the inverse map.
    """
    spec = spec if spec is not None else BVSpec()
    base = spec.base
    M = base.matrix
    Minv = np.round(np.linalg.inv(M))
    space = torus(M.shape[0])
    p = space.wrap(spec.p)
    q = space.wrap(spec.q)

    for name, pt in (("p", p), ("q", q)):
        if np.max(np.abs(space.difference(space.wrap(M @ pt), pt))) > 1e-9:
            raise ConstructionError(f"{name} is not a fixed point of the base matrix")
    if space.distance(p, q) <= 2.0 * spec.r:
        raise ConstructionError("deformation balls overlap; reduce r")

    if spec.pitchfork_strength == 0.0 and spec.rotation_angle == 0.0:
        system = linear_toral_system(M, label="bonatti_viana")
        return system

    values = base.eigen_data["values"]
    W = base.eigen_data["vectors"]
    if np.any(values <= 0) or len(values) != 4:
        raise ConstructionError("base must have four positive eigenvalues")
    lam1, lam2, lam3, lam4 = (float(v) for v in values)

    # profile geometry scales with r; the support cylinder stays inside B_r
    length = 0.99 * spec.r / np.sqrt(2.0)
    trans_radius = length
    height = length / 20.0
    rise = 1.8 * height

    threshold = 1.0 / lam2 - 1.0
    s = spec.pitchfork_strength
    if not s > threshold:
        raise ConstructionError(
            f"pitchfork_strength must exceed the bifurcation threshold {threshold:.4f}")

    # axial fixed-point equation s*u(xi) = threshold*xi has a root in (0, rise)
    def gap(xi):
        return s * float(_pitch_profile(xi, height, rise, length)) - threshold * xi

    if gap(rise) >= 0.0:
        raise ConstructionError("pitchfork_strength too large for the profile")
    xi_star = float(brentq(gap, 1e-3 * rise, rise, xtol=1e-16))
    if spec.r_prime >= xi_star:
        raise ConstructionError(
            f"r_prime must stay below the fixed-point offset {xi_star:.5f}")

    deform_p = _Deformation(axis=W[:, 1], plane=(W[:, 0], W[:, 1]),
                            rot_offset=xi_star, rot_radius=spec.r_prime,
                            angle=spec.rotation_angle, strength=s,
                            height=height, rise=rise, length=length,
                            trans_radius=trans_radius)
    deform_q = _Deformation(axis=W[:, 2], plane=(W[:, 2], W[:, 3]),
                            rot_offset=xi_star, rot_radius=spec.r_prime,
                            angle=spec.rotation_angle, strength=s,
                            height=height, rise=rise, length=length,
                            trans_radius=trans_radius)

    min_det = min(deform_p.min_axial_determinant(),
                  deform_q.min_axial_determinant())
    if min_det <= 0.0:
        raise ConstructionError(
            f"parameters make the deformation non-invertible "
            f"(min Jacobian determinant {min_det:.3e} on the sample grid)")

    r = spec.r

    def _deform_batch(xs):
        out = np.array(xs, dtype=float)
        dp = space.difference(out, p)
        dq = space.difference(out, q)
        near_p = np.linalg.norm(dp, axis=-1) < r
        near_q = np.linalg.norm(dq, axis=-1) < r
        if near_p.any():
            out[near_p] = space.wrap(p + deform_p.apply(dp[near_p]))
        if near_q.any():
            out[near_q] = space.wrap(q + deform_q.invert(dq[near_q]))
        return out

    def forward_batch(xs):
        return space.wrap(_deform_batch(xs) @ M.T)

    def forward(x):
        return forward_batch(np.asarray(x, dtype=float)[None, :])[0]

    def inverse(x):
        z = space.wrap(Minv @ np.asarray(x, dtype=float))
        dz = space.difference(z, p)
        if np.linalg.norm(dz) < r:
            return space.wrap(p + deform_p.invert(dz[None, :])[0])
        dz = space.difference(z, q)
        if np.linalg.norm(dz) < r:
            return space.wrap(q + deform_q.apply(dz[None, :])[0])
        return z

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        dp = space.difference(x, p)
        if np.linalg.norm(dp) < r:
            return M @ deform_p.jacobian(dp)
        dq = space.difference(x, q)
        if np.linalg.norm(dq) < r:
            w = deform_q.invert(dq[None, :])[0]
            return M @ np.linalg.inv(deform_q.jacobian(w))
        return M.astype(float)

    fixed_points = {
        "p": p,
        "p1": space.wrap(p + xi_star * W[:, 1]),
        "p2": space.wrap(p - xi_star * W[:, 1]),
        "q": q,
        "q_plus": space.wrap(q + lam3 * xi_star * W[:, 2]),
        "q_minus": space.wrap(q - lam3 * xi_star * W[:, 2]),
    }

    # deformation strength report: sup of log ||Df restricted to the
    # contracting plane|| over B_r(p), and to the expanding plane over B_r(q)
    offsets = (low_discrepancy_sequence(4096, 4) - 0.5) * (2.0 * r)
    offsets = offsets[np.linalg.norm(offsets, axis=-1) < r]
    offsets = np.vstack([offsets, np.zeros(4)])
    probes_p = space.wrap(p + np.vstack([offsets, xi_star * W[:, 1],
                                         -xi_star * W[:, 1]]))
    probes_q = space.wrap(q + np.vstack([offsets, lam3 * xi_star * W[:, 2],
                                         -lam3 * xi_star * W[:, 2]]))
    W_cs, W_cu = W[:, :2], W[:, 2:]
    c1_max = float(np.linalg.norm(M, 2))
    lam_cs = -np.inf
    for x in probes_p:
        J = jacobian(x)
        lam_cs = max(lam_cs, float(np.linalg.norm(J @ W_cs, 2)))
        c1_max = max(c1_max, float(np.linalg.norm(J, 2)))
    lam_cu = -np.inf
    for x in probes_q:
        J = jacobian(x)
        lam_cu = max(lam_cu, float(np.linalg.norm(J @ W_cu, 2)))
        c1_max = max(c1_max, float(np.linalg.norm(J, 2)))
    lambda_cs = float(np.log(lam_cs))
    lambda_cu = float(np.log(lam_cu))
    if not (np.isfinite(lambda_cs) and lambda_cs > 0.0):
        raise ConstructionError("contracting-plane expansion report not positive")
    if not (np.isfinite(lambda_cu) and lambda_cu > 0.0):
        raise ConstructionError("expanding-plane report not positive")

    data = BVData(params=spec, basis=W, eigenvalues=values.copy(),
                  xi_star=xi_star, bifurcation_threshold=threshold,
                  fixed_points=fixed_points,
                  lambda_cs=lambda_cs, lambda_cu=lambda_cu)
    return SmoothSystem(
        space=space,
        forward=forward,
        inverse=inverse,
        jacobian=jacobian,
        forward_batch=forward_batch,
        c1_norm_bound=1.02 * c1_max,
        label="bonatti_viana",
        spec=data,
    )


def find_fixed_points(system: SmoothSystem, seeds: np.ndarray,
                      tol: float = 1e-12, max_iter: int = 60,
                      dedup_radius: float = 1e-7) -> np.ndarray:
    """Newton search for f(x) = x from each seed; deduplicated results.

    Seeds whose iteration diverges or hits a singular Df - I are dropped.
    Returns fixed points sorted lexicographically for determinism.
    """
    space = system.space
    d = space.dim
    eye = np.eye(d)
    found = []
    for seed in np.atleast_2d(np.asarray(seeds, dtype=float)):
        x = space.wrap(seed.copy())
        ok = False
        for _ in range(max_iter):
            g = space.difference(system.forward(x), x)
            if np.linalg.norm(g) < tol:
                ok = True
                break
            J = jacobian_at(system, x) - eye
            try:
                step = np.linalg.solve(J, g)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)) or np.linalg.norm(step) > 1.0:
                break
            x = space.wrap(x - step)
        if not ok:
            continue
        if not any(space.distance(x, y) < dedup_radius for y in found):
            found.append(x)
    if not found:
        return np.empty((0, d))
    pts = np.array(found)
    return pts[np.lexsort(pts.T[::-1])]


# ---------------------------------------------------------------------------
# Lorenz-63 time-one map
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _lz_flow(x, y, z, sigma, rho, beta, h, nsteps, direction):
    for _ in range(nsteps):
        k1x = direction * (sigma * (y - x))
        k1y = direction * (x * (rho - z) - y)
        k1z = direction * (x * y - beta * z)
        ax, ay, az = x + 0.5 * h * k1x, y + 0.5 * h * k1y, z + 0.5 * h * k1z
        k2x = direction * (sigma * (ay - ax))
        k2y = direction * (ax * (rho - az) - ay)
        k2z = direction * (ax * ay - beta * az)
        bx, by, bz = x + 0.5 * h * k2x, y + 0.5 * h * k2y, z + 0.5 * h * k2z
        k3x = direction * (sigma * (by - bx))
        k3y = direction * (bx * (rho - bz) - by)
        k3z = direction * (bx * by - beta * bz)
        cx, cy, cz = x + h * k3x, y + h * k3y, z + h * k3z
        k4x = direction * (sigma * (cy - cx))
        k4y = direction * (cx * (rho - cz) - cy)
        k4z = direction * (cx * cy - beta * cz)
        x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y += (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        z += (h / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
    return x, y, z


@njit(cache=True, nogil=True)
def _lz_flow_batch(states, sigma, rho, beta, h, nsteps, direction):
    out = np.empty_like(states)
    for i in range(states.shape[0]):
        x, y, z = _lz_flow(states[i, 0], states[i, 1], states[i, 2],
                           sigma, rho, beta, h, nsteps, direction)
        out[i, 0] = x
        out[i, 1] = y
        out[i, 2] = z
    return out


@njit(cache=True, nogil=True)
def _lz_var_rhs(x, y, z, J, sigma, rho, beta, direction, out):
    # out = direction * DX(x,y,z) @ J, columnwise
    for c in range(3):
        a = J[0, c]
        b = J[1, c]
        d = J[2, c]
        out[0, c] = direction * (sigma * (b - a))
        out[1, c] = direction * ((rho - z) * a - b - x * d)
        out[2, c] = direction * (y * a + x * b - beta * d)


@njit(cache=True, nogil=True)
def _lz_flow_var(x, y, z, sigma, rho, beta, h, nsteps, direction):
    J = np.eye(3)
    K1 = np.empty((3, 3))
    K2 = np.empty((3, 3))
    K3 = np.empty((3, 3))
    K4 = np.empty((3, 3))
    for _ in range(nsteps):
        k1x = direction * (sigma * (y - x))
        k1y = direction * (x * (rho - z) - y)
        k1z = direction * (x * y - beta * z)
        _lz_var_rhs(x, y, z, J, sigma, rho, beta, direction, K1)
        ax, ay, az = x + 0.5 * h * k1x, y + 0.5 * h * k1y, z + 0.5 * h * k1z
        k2x = direction * (sigma * (ay - ax))
        k2y = direction * (ax * (rho - az) - ay)
        k2z = direction * (ax * ay - beta * az)
        _lz_var_rhs(ax, ay, az, J + 0.5 * h * K1, sigma, rho, beta, direction, K2)
        bx, by, bz = x + 0.5 * h * k2x, y + 0.5 * h * k2y, z + 0.5 * h * k2z
        k3x = direction * (sigma * (by - bx))
        k3y = direction * (bx * (rho - bz) - by)
        k3z = direction * (bx * by - beta * bz)
        _lz_var_rhs(bx, by, bz, J + 0.5 * h * K2, sigma, rho, beta, direction, K3)
        cx, cy, cz = x + h * k3x, y + h * k3y, z + h * k3z
        k4x = direction * (sigma * (cy - cx))
        k4y = direction * (cx * (rho - cz) - cy)
        k4z = direction * (cx * cy - beta * cz)
        _lz_var_rhs(cx, cy, cz, J + h * K3, sigma, rho, beta, direction, K4)
        x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y += (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        z += (h / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        J = J + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
    return x, y, z, J


@dataclass(frozen=True, eq=False)
class LorenzSpec:
    """Lorenz-63 parameters, trapping box, and integrator step."""

    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    trapping_region: PhaseSpace = None
    step: float = 1e-3

    def __post_init__(self):
        if self.trapping_region is None:
            object.__setattr__(self, "trapping_region",
                               box([-25.0, -30.0, -5.0], [25.0, 30.0, 60.0]))
        if self.trapping_region.kind != "box":
            raise ConstructionError("trapping region must be a box")

    def field(self, y):
        x1, x2, x3 = np.asarray(y, dtype=float)
        return np.array([self.sigma * (x2 - x1),
                         x1 * (self.rho - x3) - x2,
                         x1 * x2 - self.beta * x3])

    def field_jacobian(self, y):
        x1, x2, x3 = np.asarray(y, dtype=float)
        return np.array([[-self.sigma, self.sigma, 0.0],
                         [self.rho - x3, -1.0, -x1],
                         [x2, x1, -self.beta]])


def lorenz_origin_eigenvalues(spec: LorenzSpec) -> np.ndarray:
    """Field-Jacobian spectrum at the origin, ascending: -beta and the two
    roots of the quadratic from the (x, y) block."""
    tr = -(spec.sigma + 1.0)
    disc = np.sqrt((spec.sigma + 1.0) ** 2 + 4.0 * spec.sigma * (spec.rho - 1.0))
    return np.sort(np.array([-spec.beta, 0.5 * (tr + disc), 0.5 * (tr - disc)]))


def make_lorenz(spec: Optional[LorenzSpec] = None, *, compiled: bool = True,
                validate: bool = True, validation_horizon: int = 1000,
                validation_orbits: int = 8) -> SmoothSystem:
    """Time-one map of the Lorenz-63 flow on its trapping box.

    Built through the generic RK4 time-one construction; forward, inverse
    (reversed field), and Jacobian (variational flow) are then swapped for
    compiled kernels that integrate the same scheme at the same step.
    Construction checks that the origin is hyperbolic and, when validate is
    set, that sampled post-transient orbits stay inside the box for
    validation_horizon time units; escapes produce a warning with counts,
    not an error.
    """
    spec = spec if spec is not None else LorenzSpec()
    space = spec.trapping_region
    nsteps = round(1.0 / spec.step)
    if abs(nsteps * spec.step - 1.0) > 1e-12:
        raise ConstructionError("integrator step must divide 1 evenly")

    origin_eigs = np.linalg.eigvals(spec.field_jacobian(np.zeros(3)))
    if np.min(np.abs(origin_eigs.real)) <= 1e-9:
        raise ConstructionError("origin equilibrium is not hyperbolic")

    generic = time_one_map(spec.field, spec.field_jacobian, space=space,
                           step=spec.step, label="lorenz")
    if compiled:
        sg, rh, bt, h = spec.sigma, spec.rho, spec.beta, spec.step

        def _checked(arr):
            if not np.all(np.isfinite(arr)):
                raise IntegrationError("non-finite state during integration")
            return arr

        def forward(x):
            x = np.asarray(x, dtype=float)
            return _checked(np.array(_lz_flow(x[0], x[1], x[2], sg, rh, bt, h,
                                              nsteps, 1.0)))

        def inverse(x):
            x = np.asarray(x, dtype=float)
            return _checked(np.array(_lz_flow(x[0], x[1], x[2], sg, rh, bt, h,
                                              nsteps, -1.0)))

        def jacobian(x):
            x = np.asarray(x, dtype=float)
            return _checked(_lz_flow_var(x[0], x[1], x[2], sg, rh, bt, h,
                                         nsteps, 1.0)[3])

        def forward_batch(xs):
            return _lz_flow_batch(np.ascontiguousarray(xs, dtype=float),
                                  sg, rh, bt, h, nsteps, 1.0)

        system = SmoothSystem(space=space, forward=forward, inverse=inverse,
                              jacobian=jacobian, forward_batch=forward_batch,
                              label="lorenz", spec=spec)
    else:
        system = dataclasses.replace(generic, spec=spec)

    if validate:
        _validate_trapping(system, spec, horizon=validation_horizon,
                           orbits=validation_orbits)
    return system


def _validate_trapping(system: SmoothSystem, spec: LorenzSpec, *,
                       horizon: int, orbits: int, transient: float = 10.0):
    """Containment check: drop a short transient, then require orbits to
    stay inside the box for the whole horizon."""
    space = spec.trapping_region
    u = low_discrepancy_sequence(orbits, 3)
    starts = space.lo + u * (space.hi - space.lo)
    escapes = 0
    first_escape = None
    for i in range(orbits):
        x = np.array(_lz_flow(starts[i, 0], starts[i, 1], starts[i, 2],
                              spec.sigma, spec.rho, spec.beta, spec.step,
                              round(transient / spec.step), 1.0))
        for t in range(horizon):
            x = system.forward(x)
            if not space.contains(x):
                escapes += 1
                if first_escape is None:
                    first_escape = (i, t + 1)
                break
    if escapes:
        warnings.warn(
            f"trapping-region validation: {escapes}/{orbits} orbits escaped "
            f"(first: orbit {first_escape[0]} at time {first_escape[1]}); "
            f"the box is not invariant for these parameters",
            RuntimeWarning)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

def make_system(name: str, **params) -> SmoothSystem:
    """Build a registered system by name.

    "cat" and "anosov_t4" take no parameters; "bonatti_viana" accepts BVSpec
    fields; "lorenz" accepts LorenzSpec fields plus trapping_lo/trapping_hi
    and the make_lorenz keyword arguments.
    """
    if name == "cat":
        if params:
            raise ConstructionError("cat takes no parameters")
        return make_cat_map()
    if name == "anosov_t4":
        if params:
            raise ConstructionError("anosov_t4 takes no parameters")
        return make_anosov_T4()
    if name == "bonatti_viana":
        allowed = {"p", "q", "r", "r_prime", "pitchfork_strength", "rotation_angle"}
        unknown = set(params) - allowed
        if unknown:
            raise ConstructionError(f"unknown bonatti_viana parameters: {sorted(unknown)}")
        return make_bonatti_viana(BVSpec(**params))
    if name == "lorenz":
        allowed = {"sigma", "rho", "beta", "step", "trapping_lo", "trapping_hi",
                   "compiled", "validate", "validation_horizon", "validation_orbits"}
        unknown = set(params) - allowed
        if unknown:
            raise ConstructionError(f"unknown lorenz parameters: {sorted(unknown)}")
        kwargs = {k: params[k] for k in ("compiled", "validate", "validation_horizon",
                                         "validation_orbits") if k in params}
        fields = {k: params[k] for k in ("sigma", "rho", "beta", "step") if k in params}
        if "trapping_lo" in params or "trapping_hi" in params:
            fields["trapping_region"] = box(params["trapping_lo"], params["trapping_hi"])
        return make_lorenz(LorenzSpec(**fields), **kwargs)
    raise ConstructionError(f"unknown system {name!r}; "
                            f"known: cat, anosov_t4, bonatti_viana, lorenz")


SYSTEM_REGISTRY = ("cat", "anosov_t4", "bonatti_viana", "lorenz")
