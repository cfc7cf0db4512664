"""Reference solutions: an event-driven integrator and the closed-form bouncing ball."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, ConfigurationError
from .geometry import (
    ConstraintSpec,
    MetricField,
    decompose_impulse,
    impact_map,
    normal_coordinate,
    project_K,
    project_boundary,
)
from .scheme import ForceModel, InitialData


@dataclass(frozen=True)
class EventDrivenConfig:
    rk_step: float = 1e-3
    event_tol: float = 1e-12
    max_events: int = 20
    zeno_guard: float = 1e-7

    def __post_init__(self):
        if not self.rk_step > 0:
            raise ConfigurationError(f"rk_step={self.rk_step} must be positive")
        if not self.event_tol > 0:
            raise ConfigurationError(f"event_tol={self.event_tol} must be positive")
        if not self.zeno_guard >= 0:
            raise ConfigurationError(f"zeno_guard={self.zeno_guard} must be non-negative")
        if int(self.max_events) < 0:
            raise ConfigurationError(f"max_events={self.max_events} must be non-negative")


@dataclass
class OracleImpact:
    t: float
    x: np.ndarray
    p_minus: np.ndarray
    p_plus: np.ndarray


@dataclass
class EventDrivenResult:
    """Samples ``(t, u, v)`` and the list of located impacts.

    ``status`` is ``"ok"``, ``"zeno-stop"`` (normal speed fell under the
    guard; the state was placed on the boundary with its tangential motion)
    or ``"zeno-overflow"`` (event budget exhausted).
    """

    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    impacts: list = field(default_factory=list)
    status: str = "ok"
    t_stop: float = float("nan")

    @property
    def impact_times(self) -> np.ndarray:
        return np.array([imp.t for imp in self.impacts])


def _accel(force, metric, t, u, v):
    return metric.solve(u, force.force(t, u, metric.lower(u, v)))


def _rk4(force, metric, t, u, v, dt):
    k1u, k1v = v, _accel(force, metric, t, u, v)
    k2u = v + 0.5 * dt * k1v
    k2v = _accel(force, metric, t + 0.5 * dt, u + 0.5 * dt * k1u, k2u)
    k3u = v + 0.5 * dt * k2v
    k3v = _accel(force, metric, t + 0.5 * dt, u + 0.5 * dt * k2u, k3u)
    k4u = v + dt * k3v
    k4v = _accel(force, metric, t + dt, u + dt * k3u, k4u)
    return (
        u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u),
        v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
    )


def integrate_event_driven(
    data: InitialData,
    force: ForceModel,
    metric: MetricField,
    cs: ConstraintSpec,
    cfg: EventDrivenConfig,
    t_end: float,
    e: float,
    sample_times=None,
) -> EventDrivenResult:
    """RK4 flight between impacts, bisection to locate them, restitution law at each.

    With ``sample_times`` the integrator lands exactly on each requested time
    and reports only those samples; otherwise every accepted RK4 node is kept.
    """
    if not 0.0 <= e <= 1.0:
        raise ConfigurationError(f"restitution coefficient e={e} outside [0, 1]")
    data.check_admissible(cs, metric)
    t = float(data.t0)
    u = np.asarray(data.u0, dtype=float).copy()
    v = metric.solve(u, data.p0)
    if sample_times is None:
        targets = None
        ts, us, vs = [t], [u.copy()], [v.copy()]
    else:
        targets = np.asarray(sample_times, dtype=float)
        ts, us, vs = [], [], []
    k_target = 0
    impacts = []
    status = "ok"
    t_stop = float("nan")

    def record_targets_until(t_now, u_now, v_now):
        nonlocal k_target
        while targets is not None and k_target < len(targets) and targets[k_target] <= t_now + 1e-14:
            ts.append(targets[k_target])
            us.append(u_now.copy())
            vs.append(v_now.copy())
            k_target += 1

    record_targets_until(t, u, v)
    while t < t_end - 1e-15:
        dt = min(cfg.rk_step, t_end - t)
        if targets is not None and k_target < len(targets):
            dt = min(dt, targets[k_target] - t)
        dt = max(dt, 0.0)
        u_new, v_new = _rk4(force, metric, t, u, v, dt)
        if cs.value(u_new) >= 0.0:
            t, u, v = t + dt, u_new, v_new
            if targets is None:
                ts.append(t)
                us.append(u.copy())
                vs.append(v.copy())
            else:
                if k_target < len(targets) and abs(targets[k_target] - t) <= 1e-14:
                    t = targets[k_target]
                record_targets_until(t, u, v)
            continue

        # Bracket [lo, hi] of sub-step sizes with phi(lo) >= 0 > phi(hi).
        lo, hi = 0.0, dt
        u_lo, v_lo = u, v
        # A start sitting on the boundary but moving inward is not the root.
        while hi - lo > 4 * np.finfo(float).eps * max(1.0, abs(t)) and not (
            cs.value(u_lo) <= cfg.event_tol and _normal_speed(cs, metric, u_lo, v_lo) <= 0.0
        ):
            mid = 0.5 * (lo + hi)
            u_mid, v_mid = _rk4(force, metric, t, u, v, mid)
            if cs.value(u_mid) >= 0.0:
                lo, u_lo, v_lo = mid, u_mid, v_mid
            else:
                hi = mid
        t_hit = t + lo
        p_minus = metric.lower(u_lo, v_lo)
        speed_n = _normal_speed(cs, metric, u_lo, v_lo)

        if abs(speed_n) < cfg.zeno_guard:
            # Grazing contact: sticking if the free flow keeps pushing outward.
            if _normal_acceleration(cs, metric, force, t_hit, u_lo, v_lo) < 0.0:
                status, t_stop = "zeno-stop", t_hit
                t, u, v = _settle_on_boundary(cs, metric, t_hit, u_lo, v_lo)
                break
            t, u, v = t + dt, project_K(cs, metric, u_new), v_new
            if targets is None:
                ts.append(t)
                us.append(u.copy())
                vs.append(v.copy())
            else:
                record_targets_until(t, u, v)
            continue

        if len(impacts) >= cfg.max_events:
            status, t_stop = "zeno-overflow", t_hit
            t, u, v = t_hit, u_lo, v_lo
            break
        x = project_boundary(cs, metric, u_lo).position
        p_plus = impact_map(cs, metric, x, p_minus, e, phi_tol=max(cfg.event_tol, 1e-9))
        impacts.append(OracleImpact(t=t_hit, x=x, p_minus=p_minus, p_plus=p_plus))
        t, u, v = t_hit, u_lo, metric.solve(u_lo, p_plus)
        record_targets_until(t, u, v)
        if targets is None:
            ts.append(t)
            us.append(u.copy())
            vs.append(v.copy())
        if _normal_speed(cs, metric, u, v) < cfg.zeno_guard:
            status, t_stop = "zeno-stop", t_hit
            t, u, v = _settle_on_boundary(cs, metric, t_hit, u, v)
            break

    if status == "zeno-stop":
        # Motion after the stop is not integrated; hold the settled state.
        record_targets_until(t_end, u, v)
    d = u.size
    return EventDrivenResult(
        t=np.array(ts, dtype=float),
        u=np.array(us, dtype=float).reshape(-1, d),
        v=np.array(vs, dtype=float).reshape(-1, d),
        impacts=impacts,
        status=status,
        t_stop=t_stop,
    )


def _normal_speed(cs, metric, u, v):
    """Normal velocity component measured in the tangent metric (``dphi v / |dphi|*``)."""
    return normal_coordinate(cs, metric, u, metric.lower(u, v))


def _normal_acceleration(cs, metric, force, t, u, v):
    a = _accel(force, metric, t, u, v)
    return float(cs.gradient(u) @ a + v @ cs.hessian(u) @ v)


def _settle_on_boundary(cs, metric, t, u, v):
    x = project_boundary(cs, metric, u).position
    _, p_T = decompose_impulse(cs, metric, x, metric.lower(u, v), phi_tol=1e-6)
    return t, x, metric.solve(x, p_T)


@dataclass(frozen=True)
class ClosedFormBall:
    """Ball on the half-line ``u >= 0`` under constant gravity with restitution ``e``."""

    u0: float
    v0: float
    g: float
    e: float

    def __post_init__(self):
        if self.u0 < 0:
            raise ConfigurationError(f"drop height u0={self.u0} must be non-negative")
        if self.g <= 0:
            raise ConfigurationError(f"gravity g={self.g} must be positive")
        if not 0.0 <= self.e <= 1.0:
            raise ConfigurationError(f"restitution coefficient e={self.e} outside [0, 1]")
        if self.u0 == 0 and self.v0 < 0:
            raise AdmissibilityError("initial velocity points out of K at the boundary")

    @property
    def first_impact_time(self) -> float:
        return (self.v0 + math.sqrt(self.v0**2 + 2.0 * self.g * self.u0)) / self.g

    @property
    def first_impact_speed(self) -> float:
        return math.sqrt(self.v0**2 + 2.0 * self.g * self.u0)

    @property
    def zeno_time(self) -> float:
        """Accumulation time of the impacts (``inf`` for ``e = 1``)."""
        s1 = self.first_impact_speed
        if s1 == 0.0:
            return 0.0
        if self.e >= 1.0:
            return math.inf
        return self.first_impact_time + 2.0 * self.e * s1 / (self.g * (1.0 - self.e))

    def impact_times(self, t_max: float = math.inf, max_count: int = 10_000) -> np.ndarray:
        """Impact times ``t_1 < t_2 < ...`` not exceeding ``t_max``."""
        s = self.first_impact_speed
        if s == 0.0:
            return np.array([0.0]) if t_max >= 0 else np.array([])
        out = []
        t = self.first_impact_time
        while t <= t_max and len(out) < max_count:
            out.append(t)
            s *= self.e
            gap = 2.0 * s / self.g
            if gap <= 0.0 or t + gap == t:
                break
            t += gap
        return np.array(out)

    def state(self, t):
        """Position and velocity at time(s) ``t``; the ball rests at 0 past the Zeno time."""
        scalar = np.isscalar(t)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0):
            raise ValueError("closed-form ball is defined for t >= 0")
        u = np.zeros_like(t)
        v = np.zeros_like(t)
        t1 = self.first_impact_time
        s1 = self.first_impact_speed
        pre = t < t1
        u[pre] = self.u0 + self.v0 * t[pre] - 0.5 * self.g * t[pre] ** 2
        v[pre] = self.v0 - self.g * t[pre]
        if s1 > 0.0:
            zt = self.zeno_time
            horizon = float(np.max(t)) if t.size else 0.0
            starts = self.impact_times(t_max=min(horizon, zt))
            speeds = s1 * self.e ** np.arange(len(starts))
            post = ~pre & (t < zt)
            if starts.size:
                k = np.searchsorted(starts, t[post], side="right") - 1
                k = np.clip(k, 0, len(starts) - 1)
                tau = t[post] - starts[k]
                up = self.e * speeds[k]
                u[post] = np.maximum(up * tau - 0.5 * self.g * tau**2, 0.0)
                v[post] = up - self.g * tau
        if scalar:
            return float(u[0]), float(v[0])
        return u, v


def closed_form_ball(model: ClosedFormBall, t):
    return model.state(t)
