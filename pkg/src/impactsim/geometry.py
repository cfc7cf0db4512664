"""Constraint geometry and the mass-matrix metric.

Tangent vectors are paired by ``M(u)`` and covectors (impulsions, the
differential of ``phi``) by ``M(u)^-1``.  Every normal/tangential split in
this package is taken with respect to the cotangent metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateBoundaryError,
    MetricDegeneracyError,
    ProjectionError,
)

PHI_TOL = 1e-9
NEWTON_TOL = 1e-12
MAX_NEWTON = 40
FD_REL_STEP = 1e-5
SYMMETRY_TOL = 1e-12
GRAD_EPS = 1e-14
GEODESIC_SUBSTEPS = 32

PROJECTION_MODES = ("frozen-metric", "geodesic")


def _fd_step(u):
    return FD_REL_STEP * (1.0 + float(np.linalg.norm(u)))


@dataclass(frozen=True)
class ConstraintSpec:
    """The admissible set ``K = {u : phi(u) >= 0}``.

    ``hess_phi`` may be omitted, in which case the Hessian is obtained by
    central differences of ``grad_phi``.
    """

    phi: Callable
    grad_phi: Callable
    hess_phi: Optional[Callable] = None
    boundary_band: float = 1e-6

    def value(self, u) -> float:
        return float(self.phi(u))

    def gradient(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.asarray(self.grad_phi(u), dtype=float).reshape(u.shape)

    def hessian(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        d = u.size
        if self.hess_phi is not None:
            return np.asarray(self.hess_phi(u), dtype=float).reshape(d, d)
        step = _fd_step(u)
        H = np.empty((d, d))
        for k in range(d):
            du = np.zeros(d)
            du[k] = step
            H[:, k] = (self.gradient(u + du) - self.gradient(u - du)) / (2.0 * step)
        return 0.5 * (H + H.T)

    def contains(self, u, tol: float = 0.0) -> bool:
        return self.value(u) >= -tol

    def check_interior(self, witness) -> None:
        if not self.value(witness) > 0.0:
            raise ConfigurationError(
                f"interior witness {np.asarray(witness).tolist()} has phi <= 0; "
                "K must have non-empty interior"
            )

    def check_nondegenerate(self, points) -> None:
        """Raise if the gradient vanishes at any sampled point of the boundary band."""
        for u in points:
            if abs(self.value(u)) <= self.boundary_band:
                if np.linalg.norm(self.gradient(u)) <= GRAD_EPS:
                    raise DegenerateBoundaryError(u)


@dataclass(frozen=True)
class MetricField:
    """Position-dependent SPD mass matrix ``M(u)``.

    Use :meth:`constant` for a fixed matrix; it is validated and inverted once.
    ``d_mass(u, w)`` is the directional derivative ``DM(u)[w]``.
    """

    mass_fn: Callable
    d_mass_fn: Optional[Callable] = None
    _fixed: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _fixed_inv: Optional[np.ndarray] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self._fixed is not None:
            M = np.array(self._fixed, dtype=float)
            M = np.atleast_2d(M)
            _validate_mass(M, np.zeros(M.shape[0]))
            inv = np.linalg.inv(M)
            M.flags.writeable = False
            inv.flags.writeable = False
            object.__setattr__(self, "_fixed", M)
            object.__setattr__(self, "_fixed_inv", inv)

    @classmethod
    def constant(cls, matrix) -> "MetricField":
        M = np.atleast_2d(np.array(matrix, dtype=float))
        return cls(mass_fn=lambda u: M, _fixed=M)

    @classmethod
    def identity(cls, d: int) -> "MetricField":
        return cls.constant(np.eye(d))

    @property
    def is_constant(self) -> bool:
        return self._fixed is not None

    def mass(self, u) -> np.ndarray:
        if self._fixed is not None:
            return self._fixed
        u = np.asarray(u, dtype=float)
        M = np.atleast_2d(np.asarray(self.mass_fn(u), dtype=float))
        _validate_mass(M, u)
        return M

    def inverse(self, u) -> np.ndarray:
        if self._fixed_inv is not None:
            return self._fixed_inv
        return np.linalg.inv(self.mass(u))

    def solve(self, u, xi) -> np.ndarray:
        """Return ``M(u)^-1 xi`` (raise a covector to a tangent vector)."""
        xi = np.asarray(xi, dtype=float)
        if self._fixed_inv is not None:
            return self._fixed_inv @ xi
        return np.linalg.solve(self.mass(u), xi)

    def lower(self, u, v) -> np.ndarray:
        """Return ``M(u) v`` (lower a tangent vector to a covector)."""
        return self.mass(u) @ np.asarray(v, dtype=float)

    def d_mass(self, u, w) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        if self._fixed is not None:
            return np.zeros_like(self._fixed)
        if self.d_mass_fn is not None:
            return np.atleast_2d(np.asarray(self.d_mass_fn(u, w), dtype=float))
        step = _fd_step(u)
        return (
            np.atleast_2d(self.mass_fn(u + step * w)) - np.atleast_2d(self.mass_fn(u - step * w))
        ) / (2.0 * step)


def _validate_mass(M, u):
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise MetricDegeneracyError(u, f"mass matrix has shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise MetricDegeneracyError(u, "mass matrix has non-finite entries")
    if np.max(np.abs(M - M.T)) > SYMMETRY_TOL * scale:
        raise MetricDegeneracyError(u, "mass matrix is not symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise MetricDegeneracyError(u) from None


@dataclass(frozen=True)
class BoundaryPoint:
    position: np.ndarray
    inward_normal: np.ndarray


def tangent_inner(metric: MetricField, u, x, y) -> float:
    return float(np.asarray(x, dtype=float) @ metric.mass(u) @ np.asarray(y, dtype=float))


def tangent_norm(metric: MetricField, u, x) -> float:
    return float(np.sqrt(tangent_inner(metric, u, x, x)))


def cotangent_inner(metric: MetricField, u, xi, eta) -> float:
    """``xi^T M(u)^-1 eta``."""
    return float(np.asarray(xi, dtype=float) @ metric.solve(u, eta))


def cotangent_norm(metric: MetricField, u, xi) -> float:
    return float(np.sqrt(max(cotangent_inner(metric, u, xi, xi), 0.0)))


def energy(metric: MetricField, u, p) -> float:
    """Kinetic energy ``E(u, p) = <p, p>*_u / 2``."""
    return 0.5 * cotangent_inner(metric, u, p, p)


def _boundary_gradient(cs, x, phi_tol):
    if abs(cs.value(x)) > phi_tol:
        raise ValueError(f"point {np.asarray(x).tolist()} is not on the boundary (|phi| > {phi_tol:g})")
    g = cs.gradient(x)
    if np.linalg.norm(g) <= GRAD_EPS:
        raise DegenerateBoundaryError(x)
    return g


def _normal_from_gradient(metric, x, g):
    n = metric.solve(x, g)
    gg = float(g @ n)
    if not gg > 0.0:
        raise DegenerateBoundaryError(x)
    return n / np.sqrt(gg)


def inward_normal(cs: ConstraintSpec, metric: MetricField, x, phi_tol: float = PHI_TOL) -> BoundaryPoint:
    """Unit inward normal ``N(x) = M^-1 dphi^T / |dphi|*`` at a boundary point."""
    x = np.asarray(x, dtype=float)
    g = _boundary_gradient(cs, x, phi_tol)
    return BoundaryPoint(position=x, inward_normal=_normal_from_gradient(metric, x, g))


def _frozen_projection(cs, A, x, tol, max_newton):
    # Stationarity A (y - x) = lam * grad(y) together with phi(y) = 0.
    d = x.size
    y = x.copy()
    lam = 0.0
    scale = 1.0 + float(np.linalg.norm(x))
    res = np.inf
    J = np.zeros((d + 1, d + 1))
    rhs = np.empty(d + 1)
    for _ in range(max_newton + 1):
        g = cs.gradient(y)
        ph = cs.value(y)
        r1 = A @ (y - x) - lam * g
        res = max(float(np.linalg.norm(r1)), abs(ph))
        if res <= tol * scale:
            return y
        J[:d, :d] = A - lam * cs.hessian(y)
        J[:d, d] = -g
        J[d, :d] = g
        J[d, d] = 0.0
        rhs[:d] = -r1
        rhs[d] = -ph
        try:
            delta = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError:
            raise ProjectionError("singular KKT system in boundary projection", y, res) from None
        y = y + delta[:d]
        lam += delta[d]
        if not np.all(np.isfinite(y)):
            raise ProjectionError("boundary projection diverged", y, np.inf)
    raise ProjectionError(f"boundary projection did not converge in {max_newton} Newton steps", y, res)


def geodesic_acceleration(metric: MetricField, u, w) -> np.ndarray:
    """Second derivative of a geodesic through ``u`` with velocity ``w``."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if metric.is_constant:
        return np.zeros_like(w)
    d = u.size
    q = np.empty(d)
    for k in range(d):
        ek = np.zeros(d)
        ek[k] = 1.0
        q[k] = w @ metric.d_mass(u, ek) @ w
    return -metric.solve(u, metric.d_mass(u, w) @ w - 0.5 * q)


def geodesic_endpoint(metric: MetricField, y, w, substeps: int = GEODESIC_SUBSTEPS) -> np.ndarray:
    """Exponential map: position at time 1 of the geodesic from ``y`` with velocity ``w`` (RK4)."""
    u = np.asarray(y, dtype=float).copy()
    w = np.asarray(w, dtype=float).copy()
    dt = 1.0 / substeps
    for _ in range(substeps):
        k1u, k1w = w, geodesic_acceleration(metric, u, w)
        k2u, k2w = w + 0.5 * dt * k1w, geodesic_acceleration(metric, u + 0.5 * dt * k1u, w + 0.5 * dt * k1w)
        k3u, k3w = w + 0.5 * dt * k2w, geodesic_acceleration(metric, u + 0.5 * dt * k2u, w + 0.5 * dt * k2w)
        k4u, k4w = w + dt * k3w, geodesic_acceleration(metric, u + dt * k3u, w + dt * k3w)
        u = u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
        w = w + dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
    return u


def _geodesic_projection(cs, metric, x, y0, tol, max_newton):
    # Shooting unknowns (y, s): the geodesic leaving y with velocity -s N(y)
    # must reach x at time 1, and y must lie on the boundary.
    d = x.size

    def residual(z):
        y, s = z[:d], z[d]
        N = _normal_from_gradient(metric, y, cs.gradient(y))
        out = np.empty(d + 1)
        out[:d] = geodesic_endpoint(metric, y, -s * N) - x
        out[d] = cs.value(y)
        return out

    z = np.empty(d + 1)
    z[:d] = y0
    z[d] = tangent_norm(metric, y0, x - y0)
    scale = 1.0 + float(np.linalg.norm(x))
    res = np.inf
    for _ in range(max_newton + 1):
        R = residual(z)
        res = float(np.linalg.norm(R))
        if res <= tol * scale:
            return z[:d]
        J = np.empty((d + 1, d + 1))
        step = 1e-7 * (1.0 + float(np.linalg.norm(z)))
        for k in range(d + 1):
            dz = np.zeros(d + 1)
            dz[k] = step
            J[:, k] = (residual(z + dz) - residual(z - dz)) / (2.0 * step)
        try:
            z = z - np.linalg.solve(J, R)
        except np.linalg.LinAlgError:
            raise ProjectionError("singular shooting Jacobian", z[:d], res) from None
    raise ProjectionError(f"geodesic shooting did not converge in {max_newton} Newton steps", z[:d], res)


def project_boundary(
    cs: ConstraintSpec,
    metric: MetricField,
    x,
    mode: str = "frozen-metric",
    tol: float = NEWTON_TOL,
    max_newton: int = MAX_NEWTON,
) -> BoundaryPoint:
    """Nearest boundary point to ``x``.

    ``frozen-metric`` minimizes ``(y - x)^T M(x) (y - x)`` on ``phi = 0`` by
    Newton on the KKT system.  ``geodesic`` refines that point until the
    geodesic leaving it along ``-N(y)`` hits ``x``.
    """
    x = np.asarray(x, dtype=float)
    if mode not in PROJECTION_MODES:
        raise ConfigurationError(f"unknown projection mode {mode!r}; expected one of {PROJECTION_MODES}")
    y = _frozen_projection(cs, metric.mass(x), x, tol, max_newton)
    if mode == "geodesic" and not metric.is_constant and np.linalg.norm(y - x) > 0.0:
        y = _geodesic_projection(cs, metric, x, y, tol, max_newton)
    g = cs.gradient(y)
    if np.linalg.norm(g) <= GRAD_EPS:
        raise DegenerateBoundaryError(y)
    return BoundaryPoint(position=y, inward_normal=_normal_from_gradient(metric, y, g))


def project_K(cs: ConstraintSpec, metric: MetricField, x, mode: str = "frozen-metric", **kw) -> np.ndarray:
    """Identity on ``K``; nearest boundary point otherwise."""
    x = np.asarray(x, dtype=float)
    if cs.value(x) >= 0.0:
        return x
    return project_boundary(cs, metric, x, mode, **kw).position


def decompose_impulse(cs: ConstraintSpec, metric: MetricField, x, p, phi_tol: float = PHI_TOL):
    """Split a covector into ``(p_N, p_T)`` with ``p_N`` along ``dphi(x)``.

    Orthogonality is in the cotangent metric at ``x``.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    g = _boundary_gradient(cs, x, phi_tol)
    n = metric.solve(x, g)
    p_N = (float(p @ n) / float(g @ n)) * g
    return p_N, p - p_N


def normal_coordinate(cs: ConstraintSpec, metric: MetricField, x, p) -> float:
    """Signed normal component ``<dphi, p>* / |dphi|*``; positive means leaving the boundary into K."""
    g = cs.gradient(x)
    n = metric.solve(x, g)
    return float(np.asarray(p, dtype=float) @ n) / np.sqrt(float(g @ n))


def impact_map(
    cs: ConstraintSpec,
    metric: MetricField,
    x,
    p_minus,
    e: float,
    phi_tol: float = PHI_TOL,
    with_flag: bool = False,
):
    """Post-impact impulsion under the restitution law.

    The normal component of ``p_minus`` is reversed and scaled by ``e``; the
    tangential component is kept.  A covector that already points into K is
    returned unchanged; ``with_flag=True`` also returns whether an impact
    took place.
    """
    if not 0.0 <= e <= 1.0:
        raise ConfigurationError(f"restitution coefficient e={e} outside [0, 1]")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p_minus, dtype=float)
    g = _boundary_gradient(cs, x, phi_tol)
    n = metric.solve(x, g)
    pn = float(p @ n)
    if pn > 0.0:
        out = p.copy()
        return (out, False) if with_flag else out
    out = p - (1.0 + e) * (pn / float(g @ n)) * g
    return (out, True) if with_flag else out
