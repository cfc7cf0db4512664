"""Built-in benchmark problems."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .geometry import ConstraintSpec, MetricField
from .oracle import ClosedFormBall
from .scheme import ForceModel, InitialData


@dataclass(frozen=True)
class ModelDescriptor:
    name: str
    dimension: int
    constraint: ConstraintSpec
    metric: MetricField
    force: ForceModel
    initial: InitialData
    e: float
    params: dict = field(default_factory=dict)
    closed_form: Optional[ClosedFormBall] = None
    interior_witness: Optional[np.ndarray] = None

    @property
    def has_closed_form(self) -> bool:
        return self.closed_form is not None

    def validate(self) -> "ModelDescriptor":
        """Admissibility, SPD and dimension checks run at construction."""
        if not 0.0 <= self.e <= 1.0:
            raise ConfigurationError(f"restitution coefficient e={self.e} outside [0, 1]")
        d = self.dimension
        u0 = np.asarray(self.initial.u0, dtype=float)
        p0 = np.asarray(self.initial.p0, dtype=float)
        if u0.shape != (d,) or p0.shape != (d,):
            raise ConfigurationError(f"{self.name}: initial data do not have dimension {d}")
        if self.constraint.gradient(u0).shape != (d,):
            raise ConfigurationError(f"{self.name}: constraint gradient has wrong dimension")
        if self.metric.mass(u0).shape != (d, d):
            raise ConfigurationError(f"{self.name}: mass matrix has wrong dimension")
        if self.interior_witness is not None:
            self.constraint.check_interior(self.interior_witness)
        self.initial.check_admissible(self.constraint, self.metric)
        return self


def _half_line():
    return ConstraintSpec(
        phi=lambda u: u[0],
        grad_phi=lambda u: np.ones(1),
        hess_phi=lambda u: np.zeros((1, 1)),
    )


def _floor_2d():
    return ConstraintSpec(
        phi=lambda u: u[1],
        grad_phi=lambda u: np.array([0.0, 1.0]),
        hess_phi=lambda u: np.zeros((2, 2)),
    )


def _gravity(d: int, g: float):
    fg = np.zeros(d)
    fg[-1] = -g
    fg.flags.writeable = False
    return lambda t, u, p: fg


def model_bouncing_ball(u0: float = 1.0, v0: float = 0.0, g: float = 10.0, e: float = 0.5) -> ModelDescriptor:
    """Unit mass on the half-line ``u >= 0`` under gravity."""
    if u0 < 0:
        raise ConfigurationError(f"bouncing_ball: drop height u0={u0} must be non-negative")
    return ModelDescriptor(
        name="bouncing_ball",
        dimension=1,
        constraint=_half_line(),
        metric=MetricField.identity(1),
        force=ForceModel(f=_gravity(1, g), velocity_dependent=False),
        initial=InitialData(t0=0.0, u0=np.array([float(u0)]), p0=np.array([float(v0)])),
        e=float(e),
        params={"u0": u0, "v0": v0, "g": g, "e": e},
        closed_form=ClosedFormBall(u0=float(u0), v0=float(v0), g=float(g), e=float(e)),
        interior_witness=np.array([1.0]),
    ).validate()


def model_disk_billiard(
    radius: float = 1.0, speed: float = 1.0, angle: float = 0.3, e: float = 1.0, start=(0.0, 0.0)
) -> ModelDescriptor:
    """Free particle inside the disk ``|u| <= radius``."""
    R2 = float(radius) ** 2
    start = np.asarray(start, dtype=float)
    if not R2 - start @ start > 0:
        raise ConfigurationError("disk_billiard: start point must lie strictly inside the disk")
    cs = ConstraintSpec(
        phi=lambda u: R2 - (u[0] * u[0] + u[1] * u[1]),
        grad_phi=lambda u: -2.0 * u,
        hess_phi=lambda u: -2.0 * np.eye(2),
    )
    zero = np.zeros(2)
    zero.flags.writeable = False
    v0 = speed * np.array([math.cos(angle), math.sin(angle)])
    return ModelDescriptor(
        name="disk_billiard",
        dimension=2,
        constraint=cs,
        metric=MetricField.identity(2),
        force=ForceModel(f=lambda t, u, p: zero, velocity_dependent=False),
        initial=InitialData(t0=0.0, u0=start, p0=v0),
        e=float(e),
        params={"radius": radius, "speed": speed, "angle": angle, "e": e, "start": start.tolist()},
        interior_witness=np.zeros(2),
    ).validate()


def model_variable_mass(
    e: float = 0.5, g: float = 10.0, damping: float = 0.0, u0=(0.5, 1.0), v0=(1.0, 0.0)
) -> ModelDescriptor:
    """Floor ``u2 >= 0`` with mass matrix ``diag(1 + u1^2, 1)``.

    ``damping`` adds ``-damping * p`` to the force, which makes the discrete
    acceleration velocity dependent.
    """
    cs = _floor_2d()
    metric = MetricField(
        mass_fn=lambda u: np.array([[1.0 + u[0] * u[0], 0.0], [0.0, 1.0]]),
        d_mass_fn=lambda u, w: np.array([[2.0 * u[0] * w[0], 0.0], [0.0, 0.0]]),
    )
    fg = np.array([0.0, -float(g)])
    c = float(damping)
    if c:
        force = ForceModel(f=lambda t, u, p: fg - c * p, velocity_dependent=True)
    else:
        force = ForceModel(f=lambda t, u, p: fg, velocity_dependent=False)
    u0 = np.asarray(u0, dtype=float)
    p0 = metric.lower(u0, np.asarray(v0, dtype=float))
    return ModelDescriptor(
        name="variable_mass",
        dimension=2,
        constraint=cs,
        metric=metric,
        force=force,
        initial=InitialData(t0=0.0, u0=u0, p0=p0),
        e=float(e),
        params={"e": e, "g": g, "damping": damping, "u0": u0.tolist(), "v0": list(map(float, v0))},
        interior_witness=np.array([0.0, 1.0]),
    ).validate()


def model_oblique_wall(
    e: float = 0.5, g: float = 0.0, u0=(0.0, 0.5), v0=(1.0, -2.0)
) -> ModelDescriptor:
    """Floor ``u2 >= 0`` with identity mass; oblique incidence by default."""
    u0 = np.asarray(u0, dtype=float)
    return ModelDescriptor(
        name="oblique_wall",
        dimension=2,
        constraint=_floor_2d(),
        metric=MetricField.identity(2),
        force=ForceModel(f=_gravity(2, g), velocity_dependent=False),
        initial=InitialData(t0=0.0, u0=u0, p0=np.asarray(v0, dtype=float)),
        e=float(e),
        params={"e": e, "g": g, "u0": u0.tolist(), "v0": list(map(float, v0))},
        interior_witness=np.array([0.0, 1.0]),
    ).validate()


MODELS: dict[str, Callable[..., ModelDescriptor]] = {
    "bouncing_ball": model_bouncing_ball,
    "disk_billiard": model_disk_billiard,
    "variable_mass": model_variable_mass,
    "oblique_wall": model_oblique_wall,
}


def build_model(name: str, params: Optional[dict] = None) -> ModelDescriptor:
    try:
        factory = MODELS[name]
    except KeyError:
        raise ConfigurationError(f"unknown model {name!r}; available: {sorted(MODELS)}") from None
    try:
        return factory(**(params or {}))
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for model {name!r}: {exc}") from None
