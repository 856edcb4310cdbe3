"""Command line entry point: ``taskdecomp <command> ...``.

Exit codes: 0 success, 1 validation failure, 2 bad configuration or input,
3 decomposition emptied (partial output written).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import BootstrapFailed, ConfigInvalid, TaskDecompError
from .experiment import Scenario, run_experiment, run_method, train
from .ilmpc import run_iteration
from .model import StageCost, validate_execution
from .robot import RobotTaskConfig, bootstrap_trajectory, build_robot_task
from .safeset import ConvexSafeSet, SampledSafeSet, realized_costs

EXIT_INVALID, EXIT_CONFIG, EXIT_EMPTY = 1, 2, 3


def _ordering(text):
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"ordering must be comma-separated integers: {text!r}") from exc


def _vector(text):
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _scenario(args) -> Scenario:
    s = Scenario.load(args.scenario) if args.scenario else Scenario()
    s.validate()
    return s


def cmd_init(args):
    path = Scenario().save(args.out)
    print(f"wrote {path}")
    return 0


def cmd_bootstrap(args):
    s = _scenario(args)
    o = args.ordering or list(range(1, s.task.M + 1))
    task = build_robot_task(s.task, o)
    e = bootstrap_trajectory(task, s.bootstrap)
    out = Path(args.out)
    io.write_execution_csv(out / "bootstrap.csv", task, e)
    rep = validate_execution(task, e)
    io.write_json(out / "bootstrap_validation.json", {"ok": rep.ok, "summary": rep.summary(),
                                                      "steps": e.length, "ordering": o})
    print(f"bootstrap {o}: {e.length} steps, valid={rep.ok}")
    return 0 if rep.ok else EXIT_INVALID


def cmd_train(args):
    s = _scenario(args)
    res = train(s)
    out = Path(args.out)
    m = io.Manifest()
    m.add(io.write_json(out / "safe_set.json", res.sampled.to_dict()), "safe_set", out)
    m.add(io.write_json(out / "orderings.json", {"orderings": res.orderings, "task": s.task.to_dict()}),
          "training", out)
    bad = 0
    for idx, it, e in res.executions:
        task = build_robot_task(s.task, res.orderings[idx])
        bad += not validate_execution(task, e).ok
        m.add(io.write_execution_csv(out / f"execution_{it:03d}.csv", task, e), "rollout_log", out)
        print(f"ordering {res.orderings[idx]} iteration {it}: {e.length} steps")
    m.write(out)
    return EXIT_INVALID if bad else 0


def cmd_decompose(args):
    s = _scenario(args)
    sss = SampledSafeSet.from_json(Path(args.safe_set).read_text())
    task2 = build_robot_task(s.task, args.ordering)
    out = run_method(sss, task2, args.method)
    root = Path(args.out)
    io.write_json(root / f"{args.method}.json", {**out.to_dict(), "task": s.task.to_dict()})
    io.write_json(root / f"{args.method}_timing.json", out.timing_dict())
    if out.convex is not None:
        io.write_vertex_clouds(root / "vertex_clouds", out.convex, args.method)
    io.write_guards(root / f"{args.method}_guards.csv", task2, out.sampled)
    kept = len(out.surviving_guards())
    print(f"{args.method}: {kept} trajectories kept, {out.num_vertices()} vertices, "
          f"{out.total_seconds:.3f} s, complete={out.complete}")
    return 0 if out.complete else EXIT_EMPTY


def cmd_rollout(args):
    d = io.read_json(args.decomposition)
    cfg = RobotTaskConfig.from_dict(d["task"])
    task = build_robot_task(cfg, d["ordering"])
    sss = SampledSafeSet.from_dict(d["safe_set"])
    css = ConvexSafeSet.from_sampled(sss, task)
    s = _scenario(args)
    x0 = np.asarray(args.x0, dtype=float) if args.x0 else task.initial_state
    e = run_iteration(task, css, s.controller(), x0, slot0=args.slot)
    rep = validate_execution(task, e)
    root = Path(args.out)
    io.write_execution_csv(root / "rollout.csv", task, e)
    io.write_json(root / "rollout.json", {"ok": rep.ok, "summary": rep.summary(), "steps": e.length,
                                          "cost": float(realized_costs(task, e, StageCost())[0])})
    print(f"rollout: {e.length} steps, valid={rep.ok}")
    return 0 if rep.ok else EXIT_INVALID


def cmd_bench(args):
    s = _scenario(args)
    if args.trials:
        s.trials = args.trials
    if args.rollouts:
        s.rollouts = args.rollouts
    if args.out:
        s.output_dir = args.out
    art = run_experiment(s, write=True, plots=not args.no_plots)
    for r in art.records:
        print(f"trial {r.trial} {r.ordering}: convex {r.convex_seconds:.2f} s, pointwise "
              f"{r.pointwise_seconds:.2f} s ({r.speedup:.1f}x), superset={r.superset}")
    print(f"geometric-mean speedup {art.speedup:.2f}x")
    if art.theorem is not None:
        print(f"t2 {art.t2}: {art.theorem.samples - len(art.theorem.failures)}/{art.theorem.samples} "
              f"rollouts feasible")
    print(f"artifacts in {art.output_dir}")
    return 0 if art.ok else EXIT_INVALID


def cmd_appendix(args):
    from .plotting import appendix_figure
    from .polytope import proposition1_demo
    rep = proposition1_demo(identity_A=args.identity_A, require_witness=not args.identity_A)
    root = Path(args.out)
    io.write_json(root / "appendix.json", rep)
    io.write_polylines(root / "appendix_sets.csv", rep["sets"])
    io.write_csv(root / "appendix_witness.csv", ["x1", "x2"], [rep["witness"]] if rep["witness"] else [])
    appendix_figure(root / "appendix.png", rep)
    print(f"target invariant: {rep['target_invariant']} (margin {rep['invariance_margin']:.4g})")
    print(f"witness: {rep['witness']}")
    if args.identity_A:
        return 0
    ok = (not rep["target_invariant"]) and rep["invariance_margin"] > 1e-6 and rep["witness"] is not None
    return 0 if ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taskdecomp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_scenario(sp):
        sp.add_argument("--scenario", help="scenario JSON (defaults built in)")
        return sp

    sp = sub.add_parser("init", help="write the default scenario file")
    sp.add_argument("--out", default="scenario.json")
    sp.set_defaults(fn=cmd_init)

    sp = with_scenario(sub.add_parser("bootstrap", help="run and validate the bootstrap controller"))
    sp.add_argument("--ordering", type=_ordering)
    sp.add_argument("--out", default="out/bootstrap")
    sp.set_defaults(fn=cmd_bootstrap)

    sp = with_scenario(sub.add_parser("train", help="ILMPC training on the scenario orderings"))
    sp.add_argument("--out", default="out/training")
    sp.set_defaults(fn=cmd_train)

    sp = with_scenario(sub.add_parser("decompose", help="certify stored data for a new ordering"))
    sp.add_argument("--safe-set", required=True)
    sp.add_argument("--ordering", type=_ordering, required=True)
    sp.add_argument("--method", choices=["convex", "pointwise"], default="convex")
    sp.add_argument("--out", default="out/decomposition")
    sp.set_defaults(fn=cmd_decompose)

    sp = with_scenario(sub.add_parser("rollout", help="closed-loop run from a decomposition"))
    sp.add_argument("--decomposition", required=True)
    sp.add_argument("--slot", type=int, default=0)
    sp.add_argument("--x0", type=_vector, help="start state as q0,q0_dot,z,z_dot")
    sp.add_argument("--out", default="out/rollout")
    sp.set_defaults(fn=cmd_rollout)

    sp = with_scenario(sub.add_parser("bench", help="full train/decompose/time batch"))
    sp.add_argument("--out")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--rollouts", type=int)
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("appendix-demo", help="controllable-set hull counterexample")
    sp.add_argument("--out", default="out/appendix")
    sp.add_argument("--identity-A", action="store_true", help="use the identity state matrix instead")
    sp.set_defaults(fn=cmd_appendix)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigInvalid, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BootstrapFailed as exc:
        print(f"bootstrap failed: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TaskDecompError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
