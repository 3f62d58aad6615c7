"""Command-line entry point: ``chiralmag {minimize,evolve,check,degree}``.

Exit codes: 0 success, 1 configuration error (or failed check/audit),
2 line search stalled, 3 admissibility violation, 4 failed time step.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import io
from .config import load_config
from .errors import (ChiralmagError, ConfigError, LineSearchStalled, NonPositiveDeterminant, StepFailed,
                     ZeroVectorNode, OnBoundaryImage, NonIntegerWinding)

EXIT_OK, EXIT_CONFIG, EXIT_STALLED, EXIT_ADMISSIBILITY, EXIT_STEP = 0, 1, 2, 3, 4

log = logging.getLogger("chiralmag")


def _setup_logging():
    level = os.environ.get("CHIRALMAG_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _prepare_out(cfg, out):
    out = out or cfg.output
    io.ensure_dir(out)
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(cfg.text)
    return out


def _ciarlet_necas(q, voxels=32):
    from .geometry import ciarlet_necas_check, deformed_configuration
    from .strayfield import EulerianGrid

    dc = deformed_configuration(q, EulerianGrid.for_state(q, voxels))
    return ciarlet_necas_check(q, dc)


def cmd_minimize(cfg, out):
    from .optimizer import minimize_static

    out = _prepare_out(cfg, out)
    q0 = cfg.initial_state()
    result = {"time": cfg.time, "seed": cfg.seed}
    try:
        q0.check_admissible()
        res = minimize_static(cfg.time, q0, cfg.material, cfg.loads, cfg.stray, cfg.optimizer, cfg.mu_fixed,
                              log_path=os.path.join(out, "convergence.csv"))
    except LineSearchStalled as exc:
        print(f"line search stalled in block {exc.block}: {exc}", file=sys.stderr)
        return EXIT_STALLED
    except (NonPositiveDeterminant, ZeroVectorNode) as exc:
        print(f"admissibility violation: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    q = res.state
    cn = _ciarlet_necas(q)
    result.update(status="ok", energies=res.breakdown.to_dict(), iterations=res.iterations,
                  converged=res.converged, message=res.message, min_det=q.min_det(), ciarlet_necas=cn.to_dict())
    if not cn.satisfied:
        result["status"] = "inadmissible"
    io.write_json(os.path.join(out, "result.json"), result, "minimize")
    io.save_state(os.path.join(out, "state.json"), q)
    io.write_state_vtk(os.path.join(out, "state.vtk"), q)
    if not cn.satisfied:
        print(f"Ciarlet-Necas condition violated: lhs {cn.lhs:.6g} > rhs {cn.rhs:.6g}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    return EXIT_OK


def cmd_evolve(cfg, out):
    from .quasistatic import energy_balance_report, evolve, prepare_initial

    out = _prepare_out(cfg, out)
    q0 = cfg.initial_state()
    stray = cfg.stray.bind(q0) if cfg.stray is not None and cfg.stray.route == "deposit" else cfg.stray

    def dump_step(i, q, audit):
        io.write_state_vtk(os.path.join(out, f"step_{i:04d}.vtk"), q)

    try:
        q0.check_admissible()
        qi = prepare_initial(q0, cfg.material, cfg.loads, stray, cfg.optimizer, cfg.audit, cfg.mu_fixed)
        traj = evolve(qi, cfg.partition, cfg.material, cfg.loads, stray, cfg.optimizer, cfg.audit,
                      mu_fixed=cfg.mu_fixed, callback=dump_step)
    except StepFailed as exc:
        print(str(exc), file=sys.stderr)
        if isinstance(exc.cause, LineSearchStalled):
            return EXIT_STALLED
        if isinstance(exc.cause, NonPositiveDeterminant):
            return EXIT_ADMISSIBILITY
        return EXIT_STEP
    except LineSearchStalled as exc:
        print(f"line search stalled in block {exc.block}: {exc}", file=sys.stderr)
        return EXIT_STALLED
    except (NonPositiveDeterminant, ZeroVectorNode) as exc:
        print(f"admissibility violation: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    bal = energy_balance_report(traj, cfg.material, cfg.loads, stray, cfg.optimizer.regularize)
    ok = traj.all_passed() and bal.upper_holds
    doc = {"status": "ok" if ok else "audit_failed", "seed": cfg.seed, "steps": traj.records(),
           "gronwall": {"L": traj.gronwall.L, "M": traj.gronwall.M},
           "total_dissipation": traj.total_dissipation, "energy_balance": bal.to_dict()}
    io.write_json(os.path.join(out, "trajectory.json"), doc, "trajectory")
    io.write_jsonl(os.path.join(out, "trajectory.jsonl"), traj.records(), "step")
    io.save_state(os.path.join(out, "state_final.json"), traj.states[-1])
    if not ok:
        print("one or more audits failed; see trajectory.json", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_check(suite, seed):
    from .suites import run_suite

    results = run_suite(suite, seed)
    for r in results:
        print(r.row())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return EXIT_OK if n_fail == 0 else EXIT_CONFIG


def cmd_degree(cfg, point):
    from .geometry import topological_degree

    q = cfg.initial_state()
    try:
        d = topological_degree(q.y, np.asarray(point, dtype=float))
    except (OnBoundaryImage, NonIntegerWinding) as exc:
        print(f"degree undefined: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    print(int(d))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="chiralmag", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("minimize", "evolve", "check", "degree"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=name != "check")
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        if name == "check":
            s.add_argument("--suite", default="all")
        if name == "degree":
            s.add_argument("--point", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    return p


def _with_seed(cfg, seed):
    if seed is None:
        return cfg
    from .config import parse_config
    import json

    raw = dict(cfg.raw)
    raw["seed"] = seed
    new = parse_config(json.dumps(raw))
    new.text = cfg.text
    return new


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    limiter = None
    if args.threads:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=args.threads)
    try:
        if args.command == "check":
            seed = args.seed if args.seed is not None else 0
            if args.config:
                cfg = load_config(args.config)
                seed = args.seed if args.seed is not None else cfg.seed
            return cmd_check(args.suite, seed)
        cfg = _with_seed(load_config(args.config), args.seed)
        if args.command == "minimize":
            return cmd_minimize(cfg, args.out)
        if args.command == "evolve":
            return cmd_evolve(cfg, args.out)
        return cmd_degree(cfg, args.point)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ChiralmagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
