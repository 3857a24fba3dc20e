"""C1-small perturbation families built from compactly supported bumps.

A perturbation is a displacement tau supported in a metric ball, applied
after the base map: g = tau o f.  The bump profile (1 - (r/R)^2)^3 is C2,
equals 1 at the center, and vanishes with its gradient at radius R, so g
equals f exactly at every point whose image lies outside the support ball,
and the C1 distance between g and f is bounded by an explicit constant
times the size parameter.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import PhaseSpace, SmoothSystem, FlowSpec, jacobian_at, time_one_map

KINDS = ("bump-translation", "bump-shear", "ode-vector-field-bump")

# sup over [0,1] of the gradient-size profiles, sampled densely once;
# these give sup|D tau - I| <= eps * factor / R for each displacement kind
_S = np.linspace(0.0, 1.0, 200001)
TRANSLATION_GRAD_FACTOR = float(np.max(6.0 * _S * (1 - _S**2) ** 2))
SHEAR_GRAD_FACTOR = float(np.max(6.0 * _S**2 * (1 - _S**2) ** 2 + (1 - _S**2) ** 3))
del _S

# total sample budget for the determinant-sign invertibility grid; 64 points
# per axis up to dimension 2, fewer per axis in higher dimension
_DET_GRID_BUDGET = 65536


class PerturbationRejected(ValueError):
    """Size parameter produced a map that fails the invertibility check."""


def bump_profile(s):
    """C2 bump (1 - s^2)^3 on [0, 1), zero outside."""
    s = np.asarray(s, dtype=float)
    inside = np.clip(1.0 - s * s, 0.0, None)
    return inside**3


@dataclass(frozen=True)
class PerturbationFamily:
    """A one-parameter family g_eps = tau_eps o f around a base system.

    c1_slope is the reported constant C with sup|Dg_eps - Df| <= C * eps,
    computed from the bump gradient bound and the base C1 norm.
    """

    base: SmoothSystem
    kind: str
    support_center: np.ndarray
    support_radius: float
    size: float
    direction: Optional[np.ndarray] = None
    c1_slope: float = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.size < 0:
            raise ValueError("size must be >= 0")
        space = self.base.space
        center = space.wrap(np.asarray(self.support_center, dtype=float))
        object.__setattr__(self, "support_center", center)
        R = float(self.support_radius)
        if R <= 0:
            raise ValueError("support radius must be positive")
        if space.kind == "torus" and R >= 0.5:
            raise ValueError("support radius must stay below half the torus period")
        if space.kind == "box":
            if not (np.all(center - R >= space.lo) and np.all(center + R <= space.hi)):
                raise ValueError("support ball must lie inside the box")
        u = self.direction
        if u is None:
            u = np.zeros(space.dim)
            u[0] = 1.0
        u = np.asarray(u, dtype=float)
        norm = np.linalg.norm(u)
        if norm == 0:
            raise ValueError("direction must be nonzero")
        object.__setattr__(self, "direction", u / norm)
        object.__setattr__(self, "c1_slope", self._compute_c1_slope())

    def _compute_c1_slope(self) -> float:
        if self.kind == "bump-translation":
            grad = TRANSLATION_GRAD_FACTOR / self.support_radius
        elif self.kind == "bump-shear":
            grad = SHEAR_GRAD_FACTOR / self.support_radius
        else:
            # field bump: |D(g_eps) - D(g_0)| <= e^{sup|DX|} * grad bound,
            # estimated with the same profile constant; coarse but reported
            grad = TRANSLATION_GRAD_FACTOR / self.support_radius + 1.0
        base_norm = self.base.c1_norm_bound
        if base_norm is None:
            base_norm = _sampled_c1_norm(self.base)
        return grad * base_norm

    # -- displacement tau(y) - y and its Jacobian, vectorized over rows --

    def displacement(self, y: np.ndarray) -> np.ndarray:
        space = self.base.space
        y = np.atleast_2d(np.asarray(y, dtype=float))
        delta = space.difference(y, self.support_center)
        r = np.linalg.norm(delta, axis=-1)
        s = r / self.support_radius
        psi = bump_profile(s)
        if self.kind == "bump-translation":
            amp = self.size * psi
            return amp[:, None] * self.direction
        if self.kind == "bump-shear":
            # slide along `direction`, proportionally to the coordinate
            # along the next axis (cyclic), normalized by the radius
            axis = (int(np.argmax(self.direction)) + 1) % space.dim
            xi = delta[:, axis] / self.support_radius
            amp = self.size * psi * xi
            return amp[:, None] * self.direction
        raise ValueError("ode-vector-field-bump has no pointwise displacement")

    def displacement_jacobian(self, y: np.ndarray) -> np.ndarray:
        """D tau - I at each row of y, shape (n, d, d)."""
        space = self.base.space
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n, d = y.shape
        delta = space.difference(y, self.support_center)
        r = np.linalg.norm(delta, axis=-1)
        R = self.support_radius
        s = np.clip(r / R, 0.0, 1.0)
        core = (1.0 - s * s) ** 2
        # grad of psi(|y-c|/R) = -6 (1 - s^2)^2 (y - c) / R^2, smooth at r=0
        grad_psi = -6.0 * core[:, None] * delta / (R * R)
        grad_psi[s >= 1.0] = 0.0
        psi = bump_profile(s)
        out = np.zeros((n, d, d))
        if self.kind == "bump-translation":
            out += self.size * self.direction[None, :, None] * grad_psi[:, None, :]
        elif self.kind == "bump-shear":
            axis = (int(np.argmax(self.direction)) + 1) % d
            xi = delta[:, axis] / R
            grad_amp = psi[:, None] * np.eye(d)[axis][None, :] / R + xi[:, None] * grad_psi
            grad_amp[s >= 1.0] = 0.0
            out += self.size * self.direction[None, :, None] * grad_amp[:, None, :]
        else:
            raise ValueError("ode-vector-field-bump has no pointwise displacement")
        return out


def _sampled_c1_norm(system: SmoothSystem, samples: int = 256) -> float:
    rng = np.random.default_rng(0)
    pts = system.space.sample(rng, samples)
    return max(float(np.linalg.norm(jacobian_at(system, p), 2)) for p in pts)


def _det_check_grid(family: PerturbationFamily) -> None:
    """Reject sizes whose displacement Jacobian determinant changes sign.

    The grid covers the support ball's bounding cube; outside the support
    the determinant is exactly 1, so a sign change can only appear here.
    """
    space = family.base.space
    d = space.dim
    per_axis = min(64, max(4, int(round(_DET_GRID_BUDGET ** (1.0 / d)))))
    axes = [np.linspace(-family.support_radius, family.support_radius, per_axis)
            for _ in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    pts = space.wrap(family.support_center[None, :] + mesh)
    M = np.eye(d)[None] + family.displacement_jacobian(pts)
    dets = np.linalg.det(M)
    if dets.min() <= 0.0:
        raise PerturbationRejected(
            f"size {family.size} makes the displacement non-invertible "
            f"(min grid determinant {dets.min():.3e})")


def perturb(family: PerturbationFamily) -> SmoothSystem:
    """Build the perturbed system g = tau o f for the family's size.

    Raises PerturbationRejected when the determinant-sign grid check fails.
    """
    base = family.base
    space = base.space

    if family.kind == "ode-vector-field-bump":
        return _perturb_field(family)

    if family.size > 0:
        _det_check_grid(family)

    def tau(y):
        return space.wrap(y + family.displacement(y)[0])

    def tau_batch(ys):
        return space.wrap(ys + family.displacement(ys))

    def tau_inverse(z):
        # fixed point of y = z - disp(y); contraction below the threshold
        y = np.asarray(z, dtype=float)
        for _ in range(200):
            step = space.wrap(z - family.displacement(y)[0]) if space.kind == "torus" \
                else z - family.displacement(y)[0]
            if np.max(np.abs(space.difference(step, y))) < 1e-14:
                return step
            y = step
        return y

    def forward(x):
        return tau(base.forward(x))

    forward_batch = None
    if base.forward_batch is not None:
        def forward_batch(xs):
            return tau_batch(base.forward_batch(xs))

    def jacobian(x):
        y = base.forward(x)
        Dtau = np.eye(space.dim) + family.displacement_jacobian(y)[0]
        return Dtau @ jacobian_at(base, x)

    inverse = None
    if base.inverse is not None:
        def inverse(z):
            return base.inverse(tau_inverse(z))

    bound = None
    if base.c1_norm_bound is not None:
        grad = family.c1_slope / base.c1_norm_bound
        bound = base.c1_norm_bound * (1.0 + family.size * grad)

    return SmoothSystem(
        space=space,
        forward=forward,
        inverse=inverse,
        jacobian=jacobian,
        forward_batch=forward_batch,
        c1_norm_bound=bound,
        label=f"{base.label}+{family.kind}(size={family.size:g})",
        spec=family,
    )


def _perturb_field(family: PerturbationFamily) -> SmoothSystem:
    base = family.base
    flow = base.spec
    if not (isinstance(flow, FlowSpec) or
            all(hasattr(flow, a) for a in ("field", "field_jacobian", "step"))):
        raise ValueError("ode-vector-field-bump needs a base carrying a flow spec")
    c = family.support_center
    R = family.support_radius
    u = family.direction
    eps = family.size
    base_field = flow.field
    base_jac = flow.field_jacobian

    def field(y):
        delta = y - c
        s = np.linalg.norm(delta) / R
        return base_field(y) + eps * float(bump_profile(s)) * u

    def field_jacobian(y):
        delta = y - c
        r = np.linalg.norm(delta)
        s = min(r / R, 1.0)
        grad_psi = -6.0 * (1.0 - s * s) ** 2 * delta / (R * R) if s < 1.0 else 0.0 * delta
        return base_jac(y) + eps * np.outer(u, grad_psi)

    sys = time_one_map(field, field_jacobian, space=base.space, step=flow.step,
                       label=f"{base.label}+{family.kind}(size={eps:g})")
    return sys
