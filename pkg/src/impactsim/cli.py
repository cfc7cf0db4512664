"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings

from . import __version__
from .analysis import OpenClusterWarning, Problem, check_halving, convergence_study, detect_impacts
from .errors import ConfigurationError, ImpactSimError
from .io import (
    RunConfig,
    ensure_writable_dir,
    write_convergence_csv,
    write_impacts_csv,
    write_oracle_csv,
    write_trajectory_csv,
)
from .models import MODELS, build_model
from .oracle import EventDrivenConfig, integrate_event_driven
from .scheme import SchemeConfig, lemma_random_check, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _say(quiet, *args):
    if not quiet:
        print(*args)


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _scheme_config(rc: RunConfig, model, t_end=None, h=None) -> SchemeConfig:
    s = rc.scheme
    return SchemeConfig(
        h=float(h if h is not None else s["h"]),
        e=model.e,
        t_end=float(t_end if t_end is not None else s["t_end"]),
        t0=model.initial.t0,
        fp_tol=float(s.get("fp_tol", 1e-10)),
        fp_max_iter=int(s.get("fp_max_iter", 50)),
        projection_mode=s.get("projection_mode", "frozen-metric"),
        z_init=s.get("z_init", "half-force"),
    )


def _prepare(config_path, out_dir):
    if config_path is None:
        raise ConfigurationError("--config is required")
    rc = RunConfig.load(config_path)
    model = build_model(rc.model, rc.model_params)
    cfg = _scheme_config(rc, model)
    out = ensure_writable_dir(out_dir or ".")
    return rc, model, cfg, out


def cmd_run(config_path, out_dir=None, quiet=False) -> int:
    try:
        rc, model, cfg, out = _prepare(config_path, out_dir)
    except (ImpactSimError, ValueError) as exc:
        _err(exc)
        return EXIT_CONFIG

    traj = run(model.initial, cfg, model.force, model.metric, model.constraint)
    traj_path = os.path.join(out, rc.outputs["trajectory"])
    write_trajectory_csv(traj_path, traj)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OpenClusterWarning)
        events = detect_impacts(traj, model.constraint, model.metric)
    write_impacts_csv(os.path.join(out, rc.outputs["impacts"]), events, model.dimension)
    _say(quiet, f"{model.name}: {len(traj)} samples, {len(events)} impacts -> {traj_path}")

    if rc.oracle:
        res = integrate_event_driven(
            model.initial, model.force, model.metric, model.constraint,
            EventDrivenConfig(rk_step=min(cfg.h, 1e-3)), cfg.t0 + cfg.n_steps * cfg.h, model.e,
        )
        write_oracle_csv(os.path.join(out, rc.outputs["oracle"]), res)
        _say(quiet, f"event-driven oracle: status {res.status}, {len(res.impacts)} impacts")

    if traj.failure is not None:
        _err(f"numerical failure, {traj.failure.message} (partial output kept, {len(traj)} rows)")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_converge(config_path, out_dir=None, quiet=False) -> int:
    try:
        rc, model, cfg, out = _prepare(config_path, out_dir)
        conv = rc.converge
        t_end = conv["t_end"] if conv["t_end"] is not None else cfg.t_end
        problem = Problem(
            model=model,
            t_end=float(t_end),
            fp_tol=cfg.fp_tol,
            fp_max_iter=cfg.fp_max_iter,
            projection_mode=cfg.projection_mode,
            z_init=cfg.z_init,
        )
        for h in conv["h_values"]:
            _scheme_config(rc, model, t_end=t_end, h=h)
        check_halving(conv["h_values"])
    except (ImpactSimError, ValueError) as exc:
        _err(exc)
        return EXIT_CONFIG

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OpenClusterWarning)
        report = convergence_study(problem, conv["h_values"], reference=conv["reference"])
    write_convergence_csv(os.path.join(out, rc.outputs["convergence"]), report)
    summary = report.summary()
    with open(os.path.join(out, rc.outputs["summary"]), "w") as fh:
        fh.write(summary + "\n")
    _say(quiet, summary)
    if report.failures:
        for h, msg in report.failures.items():
            _err(f"run with h={h:g} failed: {msg}")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_lemma_check(count=10_000, seed=0, steps=200, quiet=False) -> int:
    if count < 1:
        _err(f"count={count} must be at least 1")
        return EXIT_CONFIG
    if steps < 3:
        _err(f"steps={steps} must be at least 3")
        return EXIT_CONFIG
    res = lemma_random_check(count, seed, steps=steps)
    if res.passed:
        _say(quiet, f"lemma check: {res.count} random recurrences, velocity bound holds at every step (seed {seed})")
        return EXIT_OK
    print(f"lemma check: {res.failures}/{res.count} recurrences violate the velocity bound (seed {seed})")
    print(f"first counterexample: {res.first_counterexample}")
    return EXIT_NUMERIC


def cmd_models(quiet=False) -> int:
    for name, factory in MODELS.items():
        doc = (factory.__doc__ or "").strip().splitlines()
        print(f"{name:16s} {doc[0] if doc else ''}")
    return EXIT_OK


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for CSV/report output")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="impactsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"impactsim {__version__}")
    p.add_argument("--config", default=None, help="JSON run configuration")
    p.add_argument("--out-dir", default=None, help="directory for CSV/report output")
    p.add_argument("--quiet", action="store_true", default=False)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate one configuration")
    sub.add_parser("converge", parents=[common], help="h-refinement study")
    lc = sub.add_parser("lemma-check", parents=[common], help="randomized check of the 1-D velocity bound")
    lc.add_argument("--count", type=int, default=10_000)
    lc.add_argument("--seed", type=int, default=0)
    lc.add_argument("--steps", type=int, default=200)
    sub.add_parser("models", parents=[common], help="list built-in models")
    return p


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.out_dir, args.quiet)
    if args.command == "converge":
        return cmd_converge(args.config, args.out_dir, args.quiet)
    if args.command == "lemma-check":
        return cmd_lemma_check(args.count, args.seed, args.steps, args.quiet)
    return cmd_models(args.quiet)


if __name__ == "__main__":
    sys.exit(main())
