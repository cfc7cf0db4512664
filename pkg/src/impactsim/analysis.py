"""Post-processing of scheme trajectories: impacts, energy, variation, convergence."""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .geometry import (
    ConstraintSpec,
    MetricField,
    cotangent_norm,
    decompose_impulse,
    energy,
    normal_coordinate,
    project_boundary,
)
from .models import ModelDescriptor
from .oracle import EventDrivenConfig, integrate_event_driven
from .scheme import SchemeConfig, Trajectory, run

log = logging.getLogger(__name__)

CLUSTER_GAP = 2
GRAZE_RATIO = 1e-8


class OpenClusterWarning(UserWarning):
    """An active cluster reaches the end of the trajectory; its outgoing state is unknown."""


@dataclass
class ImpactEvent:
    t: float
    x: np.ndarray
    p_minus: np.ndarray
    p_plus: np.ndarray
    measured_e: float
    tangential_error: float
    energy_jump: float
    first_row: int
    last_row: int

    @property
    def grazing(self) -> bool:
        return math.isnan(self.measured_e)


@dataclass
class EnergyTrace:
    times: np.ndarray
    E_values: np.ndarray
    # (first_row, last_row, E_before, E_after) for each cluster that gained energy
    violations: list = field(default_factory=list)


@dataclass
class ConvergenceReport:
    h_values: list
    sup_position_errors: list
    observed_order: float
    reference: str
    impact_time_errors: list = field(default_factory=list)
    measured_e_errors: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    oracle_kind: Optional[str] = None

    def summary(self) -> str:
        lines = [f"reference: {self.reference}" + (f" ({self.oracle_kind})" if self.oracle_kind else "")]
        lines.append(f"{'h':>12} {'sup_err':>14} {'impact_t_err':>14} {'e_err':>12}")
        for i, h in enumerate(self.h_values):
            lines.append(
                f"{h:12.4e} {self.sup_position_errors[i]:14.6e} "
                f"{self.impact_time_errors[i]:14.6e} {self.measured_e_errors[i]:12.4e}"
            )
        lines.append(f"observed_order: {self.observed_order:.4f}")
        for h, msg in self.failures.items():
            lines.append(f"failure at h={h:g}: {msg}")
        return "\n".join(lines)


def active_clusters(active, gap: int = CLUSTER_GAP):
    """Group active rows; runs separated by at most ``gap`` inactive rows are merged."""
    idx = np.flatnonzero(np.asarray(active, dtype=bool))
    clusters = []
    if idx.size == 0:
        return clusters
    start = prev = int(idx[0])
    for k in idx[1:]:
        k = int(k)
        if k - prev > gap + 1:
            clusters.append((start, prev))
            start = k
        prev = k
    clusters.append((start, prev))
    return clusters


def _closed_clusters(traj, gap):
    n = len(traj)
    out = []
    for a, b in active_clusters(traj.active, gap):
        if a < 1 or b + gap > n - 1:
            warnings.warn(
                f"active cluster at rows {a}..{b} touches the trajectory end; event omitted",
                OpenClusterWarning,
                stacklevel=3,
            )
            continue
        out.append((a, b))
    return out


def detect_impacts(
    traj: Trajectory, cs: ConstraintSpec, metric: MetricField, gap: int = CLUSTER_GAP
) -> list:
    """One :class:`ImpactEvent` per closed cluster of active steps.

    The incoming velocity is the one just before the cluster and the
    outgoing velocity the one just after; both are lowered to impulsions at
    the boundary projection of the first active position.
    """
    events = []
    h = traj.h
    for a, b in _closed_clusters(traj, gap):
        ua = traj.u[a]
        v_minus, v_plus = traj.v[a - 1], traj.v[b]
        x = project_boundary(cs, metric, ua).position
        p_minus = metric.lower(x, v_minus)
        p_plus = metric.lower(x, v_plus)
        # crossing time from the linearized approach to the boundary
        rate = -float(cs.gradient(ua) @ v_minus)
        tau = cs.value(ua) / rate if rate > 0.0 else 0.0
        t_hit = float(traj.t[a] + min(max(tau, 0.0), h))
        n_minus = normal_coordinate(cs, metric, x, p_minus)
        n_plus = normal_coordinate(cs, metric, x, p_plus)
        if abs(n_minus) < GRAZE_RATIO * cotangent_norm(metric, x, p_minus) or n_minus == 0.0:
            measured_e = float("nan")
        else:
            measured_e = -n_plus / n_minus
        _, pt_minus = decompose_impulse(cs, metric, x, p_minus)
        _, pt_plus = decompose_impulse(cs, metric, x, p_plus)
        events.append(
            ImpactEvent(
                t=t_hit,
                x=x,
                p_minus=p_minus,
                p_plus=p_plus,
                measured_e=measured_e,
                tangential_error=cotangent_norm(metric, x, pt_plus - pt_minus),
                energy_jump=energy(metric, x, p_plus) - energy(metric, x, p_minus),
                first_row=a,
                last_row=b,
            )
        )
    return events


def tangential_constant(events, h: float) -> float:
    """Smallest ``K`` with ``tangential_error <= K h`` over the events."""
    if not events:
        return 0.0
    return max(ev.tangential_error for ev in events) / h


def total_variation_velocity(traj: Trajectory) -> float:
    """``sum_m |V[m] - V[m-1]|`` with Euclidean norms."""
    if len(traj) < 2:
        raise ValueError("total variation needs at least two velocity samples")
    return float(np.sum(np.linalg.norm(np.diff(traj.v, axis=0), axis=1)))


def energy_trace(
    traj: Trajectory,
    metric: MetricField,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-3,
    gap: int = CLUSTER_GAP,
) -> EnergyTrace:
    """Kinetic energy per sample; flags clusters where it rises by more than ``abs_tol + rel_tol E``."""
    if metric.is_constant:
        M = metric.mass(None)
        E = 0.5 * np.einsum("ij,jk,ik->i", traj.v, M, traj.v)
    else:
        E = np.array([energy(metric, u, metric.lower(u, v)) for u, v in zip(traj.u, traj.v)])
    violations = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OpenClusterWarning)
        clusters = _closed_clusters(traj, gap)
    for a, b in clusters:
        before, after = E[a - 1], E[b]
        if after > before + abs_tol + rel_tol * before:
            violations.append((a, b, float(before), float(after)))
    return EnergyTrace(times=traj.t.copy(), E_values=E, violations=violations)


@dataclass(frozen=True)
class Problem:
    """A model plus the scheme settings shared by every run of a sweep."""

    model: ModelDescriptor
    t_end: float
    fp_tol: float = 1e-10
    fp_max_iter: int = 50
    projection_mode: str = "frozen-metric"
    z_init: str = "half-force"

    def config(self, h: float) -> SchemeConfig:
        return SchemeConfig(
            h=h,
            e=self.model.e,
            t_end=self.t_end,
            t0=self.model.initial.t0,
            fp_tol=self.fp_tol,
            fp_max_iter=self.fp_max_iter,
            projection_mode=self.projection_mode,
            z_init=self.z_init,
        )

    def run(self, h: float) -> Trajectory:
        m = self.model
        return run(m.initial, self.config(h), m.force, m.metric, m.constraint)


def check_halving(h_list) -> list:
    hs = [float(h) for h in h_list]
    if len(hs) < 3:
        raise ConfigurationError(f"convergence study needs at least 3 step sizes, got {len(hs)}")
    for a, b in zip(hs, hs[1:]):
        if not b < a:
            raise ConfigurationError(f"step sizes must be strictly decreasing: {a:g} then {b:g}")
        if abs(a / b - 2.0) > 1e-9:
            raise ConfigurationError(f"each step size must halve the previous: {a:g} -> {b:g}")
    return hs


def default_threads(n: int) -> int:
    env = os.environ.get("IMPACTSIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"IMPACTSIM_THREADS={env!r} is not an integer") from None
    return max(1, n)


def _median_order(errors):
    ratios = []
    for a, b in zip(errors, errors[1:]):
        if np.isfinite(a) and np.isfinite(b) and a > 0 and b > 0:
            ratios.append(math.log2(a / b))
    return float(np.median(ratios)) if ratios else float("nan")


def _first_event(traj, model):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OpenClusterWarning)
        events = detect_impacts(traj, model.constraint, model.metric)
    return events[0] if events else None


def convergence_study(
    problem: Problem,
    h_list,
    reference: str = "auto",
    threads: Optional[int] = None,
    oracle_cfg: Optional[EventDrivenConfig] = None,
) -> ConvergenceReport:
    """Sup-norm position error of the scheme for a halving sequence of step sizes.

    ``reference`` is ``"oracle"`` (closed form when the model has one, the
    event-driven integrator otherwise), ``"finest-grid"`` (the smallest ``h``
    serves as reference and gets no error of its own) or ``"auto"`` (closed
    form if available, else finest grid).
    """
    hs = check_halving(h_list)
    model = problem.model
    if reference == "auto":
        reference = "oracle" if model.has_closed_form else "finest-grid"
    if reference not in ("oracle", "finest-grid"):
        raise ConfigurationError(f"unknown reference {reference!r}")

    workers = threads if threads is not None else default_threads(len(hs))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        trajs = list(pool.map(problem.run, hs))

    failures = {h: tr.failure.message for h, tr in zip(hs, trajs) if tr.failure is not None}
    sup_err, t_err, e_err = [], [], []
    oracle_kind = None
    ref_t1 = float("nan")

    if reference == "oracle":
        if model.has_closed_form:
            oracle_kind = "closed-form"
            cf = model.closed_form
            ref_t1 = cf.first_impact_time
            for tr in trajs:
                ref_u, _ = cf.state(tr.t)
                sup_err.append(float(np.max(np.abs(tr.u[:, 0] - ref_u))) if len(tr) else float("nan"))
        else:
            oracle_kind = "event-driven"
            cfg = oracle_cfg or EventDrivenConfig(rk_step=min(hs) / 4.0, max_events=10_000)
            for tr in trajs:
                res = integrate_event_driven(
                    model.initial, model.force, model.metric, model.constraint, cfg,
                    float(tr.t[-1]) if len(tr) else model.initial.t0, model.e, sample_times=tr.t,
                )
                k = min(len(res.t), len(tr))
                sup_err.append(float(np.max(np.linalg.norm(tr.u[:k] - res.u[:k], axis=1))) if k else float("nan"))
                if res.impacts:
                    ref_t1 = res.impacts[0].t
    else:
        fine = trajs[-1]
        for i, tr in enumerate(trajs[:-1]):
            stride = 2 ** (len(hs) - 1 - i)
            k = min(len(tr), (len(fine) - 1) // stride + 1)
            diff = tr.u[:k] - fine.u[: k * stride : stride]
            sup_err.append(float(np.max(np.linalg.norm(diff, axis=1))) if k else float("nan"))
        sup_err.append(float("nan"))
        ev = _first_event(fine, model)
        ref_t1 = ev.t if ev is not None else float("nan")

    for h, tr in zip(hs, trajs):
        if h in failures:
            sup_err[hs.index(h)] = float("nan")
        ev = _first_event(tr, model)
        t_err.append(abs(ev.t - ref_t1) if ev is not None else float("nan"))
        e_err.append(abs(ev.measured_e - model.e) if ev is not None else float("nan"))

    return ConvergenceReport(
        h_values=hs,
        sup_position_errors=sup_err,
        observed_order=_median_order(sup_err),
        reference=reference,
        impact_time_errors=t_err,
        measured_e_errors=e_err,
        failures=failures,
        oracle_kind=oracle_kind,
    )
