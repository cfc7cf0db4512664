"""CSV artifacts and the JSON run configuration."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .scheme import Trajectory

FLOAT_FMT = "{:.17g}"


def _f(x) -> str:
    return FLOAT_FMT.format(float(x))


def trajectory_header(d: int) -> list:
    return (
        ["t"]
        + [f"u_{i}" for i in range(1, d + 1)]
        + [f"v_{i}" for i in range(1, d + 1)]
        + ["phi", "energy", "reaction_norm", "active", "fp_iters"]
    )


def write_trajectory_csv(path, traj: Trajectory) -> None:
    d = traj.dimension
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(trajectory_header(d))
        for k in range(len(traj)):
            wr.writerow(
                [_f(traj.t[k])]
                + [_f(x) for x in traj.u[k]]
                + [_f(x) for x in traj.v[k]]
                + [
                    _f(traj.phi[k]),
                    _f(traj.energy[k]),
                    _f(traj.reaction_norm[k]),
                    int(bool(traj.active[k])),
                    int(traj.fp_iters[k]),
                ]
            )


def read_trajectory_csv(path, h: Optional[float] = None, e: float = float("nan")) -> Trajectory:
    """Parse a trajectory CSV; ``h`` defaults to the spacing of the first two rows."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = list(rd)
    d = (len(header) - 6) // 2
    if header != trajectory_header(d):
        raise ConfigurationError(f"{path}: unexpected trajectory header {header}")
    a = np.array([[float(x) for x in r] for r in rows], dtype=float).reshape(len(rows), len(header))
    t = a[:, 0].copy()
    if h is None:
        h = float(t[1] - t[0]) if len(t) > 1 else float("nan")
    return Trajectory(
        t=t,
        u=a[:, 1 : 1 + d].copy(),
        v=a[:, 1 + d : 1 + 2 * d].copy(),
        phi=a[:, 1 + 2 * d].copy(),
        energy=a[:, 2 + 2 * d].copy(),
        reaction_norm=a[:, 3 + 2 * d].copy(),
        active=np.array([int(r[4 + 2 * d]) for r in rows], dtype=bool),
        fp_iters=np.array([int(r[5 + 2 * d]) for r in rows], dtype=int),
        h=h,
        e=e,
    )


def impacts_header(d: int) -> list:
    return ["t"] + [f"x_{i}" for i in range(1, d + 1)] + ["measured_e", "tangential_error", "energy_jump"]


def write_impacts_csv(path, events, d: int) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(impacts_header(d))
        for ev in events:
            wr.writerow(
                [_f(ev.t)]
                + [_f(x) for x in ev.x]
                + [_f(ev.measured_e), _f(ev.tangential_error), _f(ev.energy_jump)]
            )


def read_impacts_csv(path) -> dict:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = [[float(x) for x in r] for r in rd]
    a = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: a[:, i] for i, name in enumerate(header)}


def write_oracle_csv(path, result) -> None:
    d = result.u.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t"] + [f"u_{i}" for i in range(1, d + 1)] + [f"v_{i}" for i in range(1, d + 1)])
        for t, u, v in zip(result.t, result.u, result.v):
            wr.writerow([_f(t)] + [_f(x) for x in u] + [_f(x) for x in v])


def write_convergence_csv(path, report) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["h", "sup_err", "impact_time_err", "measured_e_err"])
        for row in zip(
            report.h_values, report.sup_position_errors, report.impact_time_errors, report.measured_e_errors
        ):
            wr.writerow([_f(x) for x in row])


SCHEME_KEYS = ("h", "t_end", "fp_tol", "fp_max_iter", "projection_mode", "z_init")
OUTPUT_DEFAULTS = {
    "trajectory": "trajectory.csv",
    "impacts": "impacts.csv",
    "oracle": "oracle.csv",
    "convergence": "convergence.csv",
    "summary": "convergence.txt",
}
CONVERGE_DEFAULTS = {"h_values": [], "reference": "auto", "t_end": None}
TOP_KEYS = ("model", "scheme", "outputs", "oracle", "seed", "converge")


@dataclass
class RunConfig:
    """Parsed JSON configuration.

    Schema::

        {
          "model":    {"name": str, "params": {...}},
          "scheme":   {"h": float, "t_end": float, "fp_tol": float,
                       "fp_max_iter": int, "projection_mode": str, "z_init": str},
          "outputs":  {"trajectory": str, "impacts": str, "oracle": str,
                       "convergence": str, "summary": str},
          "oracle":   bool,
          "seed":     int,
          "converge": {"h_values": [float, ...], "reference": str, "t_end": float | null}
        }

    Only ``model.name``, ``scheme.h`` and ``scheme.t_end`` are required.
    The restitution coefficient is a model parameter (``params.e``).
    """

    model: str
    model_params: dict
    scheme: dict
    outputs: dict = field(default_factory=lambda: dict(OUTPUT_DEFAULTS))
    oracle: bool = False
    seed: int = 0
    converge: dict = field(default_factory=lambda: dict(CONVERGE_DEFAULTS))

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("config root must be a JSON object")
        for key in raw:
            if key not in TOP_KEYS:
                raise ConfigurationError(f"unknown config key {key!r}")
        model = raw.get("model")
        if not isinstance(model, dict) or "name" not in model:
            raise ConfigurationError("config key 'model.name' is required")
        for key in model:
            if key not in ("name", "params"):
                raise ConfigurationError(f"unknown config key 'model.{key}'")
        params = model.get("params", {}) or {}
        if not isinstance(params, dict):
            raise ConfigurationError("config key 'model.params' must be an object")

        scheme = raw.get("scheme")
        if not isinstance(scheme, dict):
            raise ConfigurationError("config key 'scheme' is required")
        for key in scheme:
            if key not in SCHEME_KEYS:
                raise ConfigurationError(f"unknown config key 'scheme.{key}'")
        for key in ("h", "t_end"):
            if key not in scheme:
                raise ConfigurationError(f"config key 'scheme.{key}' is required")
            if not isinstance(scheme[key], (int, float)) or isinstance(scheme[key], bool):
                raise ConfigurationError(f"config key 'scheme.{key}' must be a number")

        outputs = dict(OUTPUT_DEFAULTS)
        for key, val in (raw.get("outputs") or {}).items():
            if key not in OUTPUT_DEFAULTS:
                raise ConfigurationError(f"unknown config key 'outputs.{key}'")
            outputs[key] = str(val)

        converge = dict(CONVERGE_DEFAULTS)
        for key, val in (raw.get("converge") or {}).items():
            if key not in CONVERGE_DEFAULTS:
                raise ConfigurationError(f"unknown config key 'converge.{key}'")
            converge[key] = val
        converge["h_values"] = [float(h) for h in converge["h_values"]]
        if converge["reference"] not in ("auto", "oracle", "finest-grid"):
            raise ConfigurationError(f"config key 'converge.reference' has invalid value {converge['reference']!r}")

        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigurationError("config key 'seed' must be an integer")
        oracle = raw.get("oracle", False)
        if not isinstance(oracle, bool):
            raise ConfigurationError("config key 'oracle' must be a boolean")
        return cls(
            model=str(model["name"]),
            model_params=dict(params),
            scheme=dict(scheme),
            outputs=outputs,
            oracle=oracle,
            seed=seed,
            converge=converge,
        )

    def to_dict(self) -> dict:
        return {
            "model": {"name": self.model, "params": dict(self.model_params)},
            "scheme": dict(self.scheme),
            "outputs": dict(self.outputs),
            "oracle": self.oracle,
            "seed": self.seed,
            "converge": dict(self.converge),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        return cls.loads(text)


def ensure_writable_dir(path) -> str:
    path = os.fspath(path)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"output directory {path} cannot be created: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ConfigurationError(f"output directory {path} is not writable")
    return path
