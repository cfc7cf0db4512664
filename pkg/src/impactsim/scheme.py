"""Projection time stepper for a unilateral constraint with restitution.

Each step solves

    U[m+1] = -e U[m-1] + (1 + e) P_K(W[m]),
    W[m]   = (2 U[m] - (1 - e) U[m-1] + h^2 F[m]) / (1 + e),

where ``F[m]`` depends on the unknown through the centered velocity
``(U[m+1] - U[m-1]) / (2h)``.  The implicit dependence is resolved by
Picard iteration on ``v = (U[m+1] - U[m]) / h``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import AdmissibilityError, ConfigurationError, ImpactSimError, StepFailure
from .geometry import (
    PHI_TOL,
    PROJECTION_MODES,
    ConstraintSpec,
    MetricField,
    cotangent_inner,
    cotangent_norm,
    energy,
    project_K,
)

log = logging.getLogger(__name__)

Z_INIT_POLICIES = ("half-force", "zero")


@dataclass(frozen=True)
class ForceModel:
    """Generalized force ``f(t, u, p)`` and its discrete acceleration ``F``.

    Without a custom ``F`` the discrete acceleration is
    ``F(t, u, u_prev, v, h) = M(u)^-1 f(t, u, M(u) v)``, which is consistent
    with ``f`` by construction.  ``velocity_dependent=False`` declares that
    ``F`` ignores ``v``, so the implicit step needs a single evaluation.
    """

    f: Callable
    F: Optional[Callable] = None
    velocity_dependent: bool = True

    @property
    def consistency_mode(self) -> str:
        return "auto-derived" if self.F is None else "custom"

    def force(self, t, u, p) -> np.ndarray:
        return np.asarray(self.f(t, u, p), dtype=float).reshape(np.shape(u))

    def accel(self, t, u, u_prev, v, h, metric: MetricField) -> np.ndarray:
        if self.F is not None:
            return np.asarray(self.F(t, u, u_prev, v, h), dtype=float).reshape(np.shape(u))
        return metric.solve(u, self.force(t, u, metric.lower(u, v)))

    def consistency_defect(self, metric: MetricField, samples) -> float:
        """Largest ``|F(t,u,u,v,0) - M^-1 f(t,u,Mv)|`` over ``(t, u, v)`` samples."""
        worst = 0.0
        for t, u, v in samples:
            u = np.asarray(u, dtype=float)
            v = np.asarray(v, dtype=float)
            lhs = self.accel(t, u, u, v, 0.0, metric)
            rhs = metric.solve(u, self.force(t, u, metric.lower(u, v)))
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        return worst


@dataclass(frozen=True)
class SchemeConfig:
    h: float
    e: float
    t_end: float
    t0: float = 0.0
    fp_tol: float = 1e-10
    fp_max_iter: int = 50
    projection_mode: str = "frozen-metric"
    z_init: str = "half-force"

    def __post_init__(self):
        if not (isinstance(self.h, (int, float)) and math.isfinite(self.h) and self.h > 0):
            raise ConfigurationError(f"time step h={self.h} must be positive")
        if not 0.0 <= self.e <= 1.0:
            raise ConfigurationError(f"restitution coefficient e={self.e} outside [0, 1]")
        if not 0.0 < self.fp_tol <= 1e-6:
            raise ConfigurationError(f"fp_tol={self.fp_tol} outside (0, 1e-6]")
        if int(self.fp_max_iter) < 1:
            raise ConfigurationError(f"fp_max_iter={self.fp_max_iter} must be at least 1")
        # t_end == t0 is accepted: it yields an empty trajectory.
        if not self.t_end >= self.t0:
            raise ConfigurationError(f"t_end={self.t_end} precedes t0={self.t0}")
        if self.projection_mode not in PROJECTION_MODES:
            raise ConfigurationError(f"projection_mode={self.projection_mode!r} not in {PROJECTION_MODES}")
        if self.z_init not in Z_INIT_POLICIES:
            raise ConfigurationError(f"z_init={self.z_init!r} not in {Z_INIT_POLICIES}")

    @property
    def n_steps(self) -> int:
        return int(math.floor((self.t_end - self.t0) / self.h * (1.0 + 1e-12)))


@dataclass(frozen=True)
class InitialData:
    t0: float
    u0: np.ndarray
    p0: np.ndarray

    def check_admissible(self, cs: ConstraintSpec, metric: MetricField) -> None:
        u0 = np.asarray(self.u0, dtype=float)
        ph = cs.value(u0)
        if ph < -PHI_TOL:
            raise AdmissibilityError(f"initial position outside K: phi(u0)={ph:.6g} < 0")
        if ph <= PHI_TOL:
            s = cotangent_inner(metric, u0, self.p0, cs.gradient(u0))
            if s < -1e-12:
                raise AdmissibilityError(
                    f"initial impulsion points out of K on the boundary: <p0, dphi(u0)>* = {s:.6g} < 0"
                )


@dataclass(frozen=True)
class SchemeState:
    m: int
    t: float
    u_prev: np.ndarray
    u_curr: np.ndarray


@dataclass(frozen=True)
class StepDiagnostics:
    w: np.ndarray
    z: np.ndarray
    v: np.ndarray
    reaction_impulse: np.ndarray
    fp_iters: int
    active: bool


@dataclass
class FailureRecord:
    step: int
    message: str


@dataclass
class Trajectory:
    """Sampled scheme output.

    Row ``m`` holds ``t_m``, ``U[m]`` and the forward velocity
    ``V[m] = (U[m+1] - U[m]) / h`` together with the diagnostics of the step
    that produced ``U[m+1]``.  Row 0 carries the initialization step, which
    never projects.  ``w``, ``z`` and ``reaction`` are only kept in memory.
    """

    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    phi: np.ndarray
    energy: np.ndarray
    reaction_norm: np.ndarray
    active: np.ndarray
    fp_iters: np.ndarray
    h: float
    e: float = float("nan")
    w: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    reaction: Optional[np.ndarray] = None
    u_final: Optional[np.ndarray] = None
    failure: Optional[FailureRecord] = None

    def __len__(self):
        return len(self.t)

    @property
    def dimension(self) -> int:
        return self.u.shape[1]

    @property
    def ok(self) -> bool:
        return self.failure is None


def init_first_steps(
    data: InitialData, cfg: SchemeConfig, force: ForceModel, metric: MetricField, cs: ConstraintSpec
) -> SchemeState:
    """``U0 = u0`` and ``U1 = u0 + h M(u0)^-1 p0 + h z(h)``."""
    data.check_admissible(cs, metric)
    u0 = np.asarray(data.u0, dtype=float)
    p0 = np.asarray(data.p0, dtype=float)
    h = cfg.h
    u1 = u0 + h * metric.solve(u0, p0)
    if cfg.z_init == "half-force":
        u1 = u1 + h * (0.5 * h) * metric.solve(u0, force.force(data.t0, u0, p0))
    return SchemeState(m=1, t=data.t0 + h, u_prev=u0, u_curr=u1)


def _advance(m, u_prev, u, cfg, force, metric, cs):
    """Solve step ``m``; returns ``(U[m+1], W[m], Z[m], fp_iters, active)``."""
    h, e = cfg.h, cfg.e
    t_m = cfg.t0 + m * h
    v_prev = (u - u_prev) / h
    base = 2.0 * u - (1.0 - e) * u_prev
    hh = h * h
    v = v_prev
    iters = 0
    prev_delta = None
    contraction = float("nan")
    while True:
        iters += 1
        F = force.accel(t_m, u, u_prev, 0.5 * (v + v_prev), h, metric)
        w = (base + hh * F) / (1.0 + e)
        if cs.value(w) >= 0.0:
            # Algebraically identical to -e U[m-1] + (1+e) W; kept in
            # central-difference form so free flight is reproduced exactly.
            u_next, z, active = 2.0 * u - u_prev + hh * F, w, False
        else:
            try:
                z = project_K(cs, metric, w, cfg.projection_mode)
            except ImpactSimError as exc:
                raise StepFailure(m, f"{exc}; reduce h", contraction) from exc
            u_next, active = -e * u_prev + (1.0 + e) * z, True
        if not force.velocity_dependent:
            break
        v_new = (u_next - u) / h
        if not math.isfinite(float(v_new.sum())):
            raise StepFailure(m, "fixed-point iterate is not finite; reduce h", contraction)
        delta = float(np.linalg.norm(v_new - v))
        if prev_delta is not None and prev_delta > 0.0:
            contraction = delta / prev_delta
        prev_delta = delta
        v = v_new
        if delta <= cfg.fp_tol * (1.0 + float(np.linalg.norm(v_new))):
            break
        if iters >= cfg.fp_max_iter:
            raise StepFailure(
                m,
                f"fixed-point iteration did not converge in {cfg.fp_max_iter} iterations "
                f"(contraction estimate {contraction:.3g}); reduce h",
                contraction,
            )
    if not math.isfinite(float(u_next.sum())):
        raise StepFailure(m, "non-finite position; reduce h", contraction)
    return u_next, w, z, iters, active


def _reaction(metric, w, z, e, h):
    return metric.lower(z, (1.0 + e) * (z - w) / h)


def step(
    state: SchemeState, cfg: SchemeConfig, force: ForceModel, metric: MetricField, cs: ConstraintSpec
):
    """Advance ``(U[m-1], U[m])`` to ``(U[m], U[m+1])``.

    Returns the new state and the diagnostics of step ``m``.  Raises
    :class:`StepFailure` when the Picard iteration does not settle.
    """
    u = state.u_curr
    u_next, w, z, iters, active = _advance(state.m, state.u_prev, u, cfg, force, metric, cs)
    reaction = _reaction(metric, w, z, cfg.e, cfg.h) if active else np.zeros_like(u)
    diag = StepDiagnostics(
        w=w, z=z, v=(u_next - u) / cfg.h, reaction_impulse=reaction, fp_iters=iters, active=active
    )
    new_state = SchemeState(m=state.m + 1, t=cfg.t0 + (state.m + 1) * cfg.h, u_prev=u, u_curr=u_next)
    return new_state, diag


def run(
    data: InitialData, cfg: SchemeConfig, force: ForceModel, metric: MetricField, cs: ConstraintSpec
) -> Trajectory:
    """Integrate over ``floor((t_end - t0) / h)`` samples.

    A step failure ends the run early; the returned trajectory then holds
    every completed sample and a :class:`FailureRecord`.
    """
    n = cfg.n_steps
    d = np.asarray(data.u0).size
    h, e = cfg.h, cfg.e
    positions, w_rows, z_rows = [], [], []
    act_rows, it_rows = [], []
    failure = None
    u_final = None
    if n > 0:
        state = init_first_steps(data, cfg, force, metric, cs)
        u_prev, u = state.u_prev, state.u_curr
        positions += [u_prev, u]
        w_rows.append(u_prev)
        z_rows.append(u_prev)
        act_rows.append(False)
        it_rows.append(0)
        for m in range(1, n):
            try:
                u_next, w, z, iters, active = _advance(m, u_prev, u, cfg, force, metric, cs)
            except StepFailure as exc:
                failure = FailureRecord(step=exc.step, message=str(exc))
                log.warning("run stopped early: %s", exc)
                break
            positions.append(u_next)
            w_rows.append(w)
            z_rows.append(z)
            act_rows.append(active)
            it_rows.append(iters)
            u_prev, u = u, u_next
        u_final = u
    P = np.array(positions, dtype=float).reshape(-1, d)
    N = max(len(P) - 1, 0)
    U = P[:N]
    V = (P[1:] - P[:-1]) / h if N else np.zeros((0, d))
    W = np.array(w_rows, dtype=float).reshape(N, d)
    Z = np.array(z_rows, dtype=float).reshape(N, d)
    active = np.array(act_rows, dtype=bool)
    R = np.zeros((N, d))
    for k in np.flatnonzero(active):
        R[k] = _reaction(metric, W[k], Z[k], e, h)
    phi = np.array([cs.value(x) for x in U])
    if metric.is_constant:
        M = metric.mass(None)
        en = 0.5 * np.einsum("ij,jk,ik->i", V, M, V)
    else:
        en = np.array([energy(metric, x, metric.lower(x, vx)) for x, vx in zip(U, V)])
    rn = np.zeros(N)
    for k in np.flatnonzero(active):
        rn[k] = cotangent_norm(metric, Z[k], R[k])
    return Trajectory(
        t=cfg.t0 + h * np.arange(N, dtype=float),
        u=U,
        v=V,
        phi=phi,
        energy=en,
        reaction_norm=rn,
        active=active,
        fp_iters=np.array(it_rows, dtype=int),
        h=h,
        e=e,
        w=W,
        z=Z,
        reaction=R,
        u_final=u_final,
        failure=failure,
    )


def central_difference(u0, u1, accel: Callable, n: int, h: float, t0: float = 0.0) -> np.ndarray:
    """Explicit ``U[m+1] = 2U[m] - U[m-1] + h^2 a(t_m, U[m])`` from two starting values."""
    out = [np.asarray(u0, dtype=float), np.asarray(u1, dtype=float)]
    for m in range(1, n):
        out.append(2.0 * out[-1] - out[-2] + h * h * np.asarray(accel(t0 + m * h, out[-1]), dtype=float))
    return np.array(out[: n + 1])


# One-dimensional model recurrence used for the velocity estimate.


def lemma_monodim_step(y_prev, y_curr, lambda_m, e, h):
    """``y[m+1] = -e y[m-1] + (2 y[m] - (1-e) y[m-1])^+ + h^2 lambda[m]``.

    Works elementwise on arrays.
    """
    return -e * y_prev + np.maximum(2.0 * y_curr - (1.0 - e) * y_prev, 0.0) + h * h * lambda_m


def lemma_velocity(y_curr, y_next, h):
    return (y_next - y_curr) / h


def lemma_sequence(y0, y1, lambdas, e, h) -> np.ndarray:
    """Run the recurrence; ``lambdas[k]`` is used for ``m = k + 1``.

    Inputs may be arrays (one column per independent instance) as long as
    ``lambdas`` has the steps along its first axis.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    ys = [np.asarray(y0, dtype=float), np.asarray(y1, dtype=float)]
    for lam in lambdas:
        ys.append(lemma_monodim_step(ys[-2], ys[-1], lam, e, h))
    return np.array(ys)


def lemma_bound_violations(ys, lambdas, e, h, slack: float = 1e-12) -> np.ndarray:
    """Boolean mask of indices ``m >= 2`` where the velocity bound fails.

    The bound is ``|eta[m]| <= max(|eta[m-1]|, e |eta[m-2]|) + h|lambda[m]| + h|lambda[m-1]|``
    with ``eta[m] = (y[m+1] - y[m]) / h``; ``slack`` is relative to ``1 + rhs``.
    Row ``k`` of the result corresponds to ``m = k + 2``.
    """
    ys = np.asarray(ys, dtype=float)
    lam = np.concatenate([np.zeros_like(np.asarray(lambdas, dtype=float)[:1]), np.asarray(lambdas, dtype=float)])
    eta = (ys[1:] - ys[:-1]) / h
    m = np.arange(2, len(eta))
    lhs = np.abs(eta[m])
    rhs = np.maximum(np.abs(eta[m - 1]), e * np.abs(eta[m - 2])) + h * np.abs(lam[m]) + h * np.abs(lam[m - 1])
    return lhs > rhs + slack * (1.0 + rhs)


@dataclass
class LemmaCheckResult:
    count: int
    failures: int
    first_counterexample: Optional[dict] = None

    @property
    def passed(self) -> bool:
        return self.failures == 0


def lemma_random_check(count: int, seed: int = 0, steps: int = 200, lambda_max: float = 10.0) -> LemmaCheckResult:
    """Check the velocity bound on ``count`` random recurrences of ``steps`` steps each.

    Half of the instances use a roughly constant negative forcing so that the
    positive part is clipped often (repeated bouncing); the rest use
    uniformly random forcing.
    """
    if count < 1:
        raise ConfigurationError(f"count={count} must be at least 1")
    rng = np.random.default_rng(seed)
    e = rng.uniform(0.0, 1.0, count)
    h = 10.0 ** rng.uniform(-3.0, -1.0, count)
    y0 = rng.uniform(-1.0, 1.0, count)
    y1 = y0 + h * rng.uniform(-5.0, 5.0, count)
    bound = rng.uniform(0.0, lambda_max, count)
    noise = rng.uniform(-1.0, 1.0, (steps, count)) * bound
    gravity_like = rng.uniform(size=count) < 0.5
    lambdas = np.where(gravity_like, -bound + 0.1 * noise, noise)
    ys = lemma_sequence(y0, y1, lambdas, e, h)
    bad = lemma_bound_violations(ys, lambdas, e, h)
    failures = int(np.count_nonzero(bad.any(axis=0)))
    first = None
    if failures:
        rows, cols = np.nonzero(bad)
        j = int(cols.min())
        k = int(rows[cols == j].min())
        m = k + 2
        first = {
            "instance": j,
            "m": m,
            "e": float(e[j]),
            "h": float(h[j]),
            "y[m-2..m+1]": ys[m - 2 : m + 2, j].tolist(),
            "lambda[m-1], lambda[m]": lambdas[m - 2 : m, j].tolist(),
        }
    return LemmaCheckResult(count=count, failures=failures, first_counterexample=first)
