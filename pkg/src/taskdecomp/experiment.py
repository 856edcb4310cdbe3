"""Train on reordered tasks, decompose for a new ordering, time both checks.

A :class:`Scenario` fixes every seeded choice, so two runs of the same scenario
write byte-identical safe-set and decomposition JSON (timing files aside).
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .decomposition import (DecompositionOutput, TheoremReport, decompose, decompose_pointwise,
                            verify_theorem1)
from .errors import ConfigInvalid, EmptyDecomposition, Infeasible, MaxStepsExceeded
from .ilmpc import ControllerConfig, run_iteration
from .model import Execution, StageCost, Task, validate_execution
from .robot import BootstrapConfig, RobotTaskConfig, bootstrap_trajectory, build_robot_task
from .safeset import ConvexSafeSet, SampledSafeSet, min_cost_membership, realized_costs

log = logging.getLogger(__name__)

SCENARIO_SCHEMA = "taskdecomp.scenario/1"


@dataclass
class Scenario:
    """Everything needed to reproduce one benchmark run."""

    task: RobotTaskConfig = field(default_factory=RobotTaskConfig)
    training: Optional[list] = None  # orderings; drawn from ``seed`` when None
    t2: Optional[list] = None  # new ordering; selected from ``seed`` when None
    horizon: int = 6
    max_steps: int = 20000
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    n_training: int = 5
    iterations: int = 5
    trials: int = 5
    rollouts: int = 100
    seed: int = 1
    max_t2_attempts: int = 40
    output_dir: str = "out"

    def controller(self) -> ControllerConfig:
        return ControllerConfig(horizon=self.horizon, max_steps=self.max_steps)

    def validate(self) -> None:
        self.task.validate()
        err = {}
        M = self.task.M
        perm = list(range(1, M + 1))

        def bad(o):
            return not isinstance(o, (list, tuple)) or sorted(int(v) for v in o) != perm

        if self.training is not None:
            if not self.training or any(bad(o) for o in self.training):
                err["training"] = f"every ordering must be a permutation of 1..{M}"
            elif len({tuple(o) for o in self.training}) != len(self.training):
                err["training"] = "orderings must be distinct"
        if self.t2 is not None:
            if bad(self.t2):
                err["t2"] = f"must be a permutation of 1..{M}"
            elif self.training is not None and list(self.t2) in [list(o) for o in self.training]:
                err["t2"] = "must differ from every training ordering"
        for name in ("n_training", "iterations", "trials", "rollouts", "horizon", "max_t2_attempts"):
            if int(getattr(self, name)) < 1:
                err[name] = "must be >= 1"
        if self.max_steps <= self.horizon:
            err["max_steps"] = "must exceed the horizon"
        if self.training is None and self.n_training > math.factorial(M) - 1:
            err["n_training"] = "more orderings than permutations"
        if err:
            raise ConfigInvalid(err)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("task", "bootstrap")}
        d["schema"] = SCENARIO_SCHEMA
        d["task"] = self.task.to_dict()
        d["bootstrap"] = asdict(self.bootstrap)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        schema = d.pop("schema", None)
        if schema != SCENARIO_SCHEMA:
            raise ConfigInvalid({"schema": f"expected {SCENARIO_SCHEMA!r}, got {schema!r}"})
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigInvalid({k: "unknown field" for k in sorted(extra)})
        task = RobotTaskConfig.from_dict(d.pop("task", {}))
        try:
            boot = BootstrapConfig(**d.pop("bootstrap", {}))
        except TypeError as exc:
            raise ConfigInvalid({"bootstrap": str(exc)}) from exc
        s = cls(task=task, bootstrap=boot, **d)
        s.validate()
        return s

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(io.read_json(path))

    def save(self, path) -> Path:
        return io.write_json(path, self.to_dict())


# -- orderings -----------------------------------------------------------------

def training_orderings(s: Scenario) -> list:
    if s.training is not None:
        return [[int(v) for v in o] for o in s.training]
    rng = np.random.default_rng(s.seed)
    out = []
    while len(out) < s.n_training:
        o = [int(v) + 1 for v in rng.permutation(s.task.M)]
        if o not in out:
            out.append(o)
    return out


def adjacent_pairs(ordering) -> set:
    """Consecutive subtask pairs, with ``(0, first)`` standing for the start from rest."""
    o = [0] + list(ordering)
    return {(a, b) for a, b in zip(o, o[1:])}


def is_covered(ordering, training) -> bool:
    """Every consecutive pair of ``ordering`` was executed in some training ordering.

    The first subtask must also have been first somewhere, otherwise no stored
    state of it is reachable from the task's initial rest state.
    """
    seen = set().union(*(adjacent_pairs(o) for o in training))
    return adjacent_pairs(ordering) <= seen


def candidate_orderings(s: Scenario, training) -> list:
    """Fresh orderings in a seeded order, covered ones first.

    A new ordering whose consecutive subtask pairs never occurred during
    training has guard states that never entered that successor, so both
    decompositions almost surely empty at that stage.  The seeded shuffle
    is drawn over all permutations so it does not depend on the filter.
    """
    fresh = [list(p) for p in itertools.permutations(range(1, s.task.M + 1)) if list(p) not in training]
    rng = np.random.default_rng(s.seed + 1000)
    order = rng.permutation(len(fresh))
    fresh = [fresh[i] for i in order]
    return [o for o in fresh if is_covered(o, training)] + [o for o in fresh if not is_covered(o, training)]


# -- training ------------------------------------------------------------------

@dataclass
class TrainingResult:
    orderings: list
    sampled: SampledSafeSet
    executions: list  # (ordering index, iteration id, Execution)

    def costs(self) -> list:
        return [(i, it, e.length) for i, it, e in self.executions]


def train(s: Scenario) -> TrainingResult:
    """Bootstrap plus ``iterations`` ILMPC runs per training ordering.

    Each ordering learns from its own executions only; the union is returned.
    """
    orders = training_orderings(s)
    cost = StageCost()
    cfg = s.controller()
    union = SampledSafeSet(4, 2)
    executions = []
    it = 0
    for idx, o in enumerate(orders):
        task = build_robot_task(s.task, o)
        own = SampledSafeSet(4, 2)
        e = bootstrap_trajectory(task, s.bootstrap, iteration_id=it)
        own.record_execution(task, e, cost)
        executions.append((idx, it, e))
        it += 1
        for _ in range(s.iterations):
            css = ConvexSafeSet.from_sampled(own, task)
            e = run_iteration(task, css, cfg, task.initial_state, iteration_id=it)
            own.record_execution(task, e, cost)
            executions.append((idx, it, e))
            log.info("ordering %s iteration %d: %d steps", o, it, e.length)
            it += 1
        union.absorb(own)
    return TrainingResult(orders, union, executions)


# -- decomposition trials ------------------------------------------------------

def run_method(sampled: SampledSafeSet, task2: Task, method: str) -> DecompositionOutput:
    """Decomposition that returns the partial output instead of raising."""
    fn = decompose if method == "convex" else decompose_pointwise
    try:
        return fn(sampled, task2)
    except EmptyDecomposition as exc:
        if exc.output is None:
            raise
        return exc.output


def certifies_start(out: DecompositionOutput) -> bool:
    """Complete decomposition whose first-slot sets contain the task's initial state."""
    if not out.complete or out.convex is None:
        return False
    return min_cost_membership(out.convex, out.task.initial_state, slots=[0]) is not None


def select_t2(s: Scenario, training: TrainingResult):
    """First candidate ordering the convex decomposition certifies from its start.

    Returns ``(ordering, output, rejected)`` where ``rejected`` lists the
    earlier candidates with the slot at which each one emptied (``None`` when
    the decomposition completed but no kept state covers the initial state).
    """
    task_cfg = s.task
    if s.t2 is not None:
        o = [int(v) for v in s.t2]
        return o, run_method(training.sampled, build_robot_task(task_cfg, o), "convex"), []
    rejected = []
    for o in candidate_orderings(s, training.orderings)[:s.max_t2_attempts]:
        out = run_method(training.sampled, build_robot_task(task_cfg, o), "convex")
        if certifies_start(out):
            return o, out, rejected
        failed = None if out.complete else min(out.stage_seconds, default=None)
        rejected.append({"ordering": o, "emptied_slot": failed})
    raise EmptyDecomposition(f"none of {len(rejected)} candidate orderings could be certified")


@dataclass
class TimingRecord:
    trial: int
    ordering: list
    convex_seconds: float
    pointwise_seconds: float
    convex_guards_checked: int
    pointwise_guards_checked: int
    convex_surviving: int
    pointwise_surviving: int
    convex_vertices: int
    pointwise_vertices: int
    convex_complete: bool
    pointwise_complete: bool
    superset: bool
    convex_median_us: float
    pointwise_median_us: float

    @property
    def speedup(self) -> float:
        return self.pointwise_seconds / self.convex_seconds

    def row(self) -> list:
        return [self.trial, " ".join(map(str, self.ordering)), self.convex_seconds, self.pointwise_seconds,
                self.speedup, self.convex_guards_checked, self.pointwise_guards_checked,
                self.convex_surviving, self.pointwise_surviving, self.convex_vertices,
                self.pointwise_vertices, self.convex_complete, self.pointwise_complete, self.superset,
                self.convex_median_us, self.pointwise_median_us]

    HEADER = ["trial", "ordering", "convex_seconds", "pointwise_seconds", "speedup",
              "convex_guards_checked", "pointwise_guards_checked", "convex_surviving",
              "pointwise_surviving", "convex_vertices", "pointwise_vertices", "convex_complete",
              "pointwise_complete", "superset", "convex_median_us", "pointwise_median_us"]


def _median_us(out: DecompositionOutput) -> float:
    return float(np.median([g.solve_us for g in out.audit])) if out.audit else float("nan")


def run_trial(sampled: SampledSafeSet, s: Scenario, ordering, trial: int):
    task2 = build_robot_task(s.task, ordering)
    cvx = run_method(sampled, task2, "convex")
    pw = run_method(sampled, task2, "pointwise")
    rec = TimingRecord(
        trial=trial, ordering=list(ordering),
        convex_seconds=cvx.total_seconds, pointwise_seconds=pw.total_seconds,
        convex_guards_checked=len(cvx.audit), pointwise_guards_checked=len(pw.audit),
        convex_surviving=len(cvx.surviving_guards()), pointwise_surviving=len(pw.surviving_guards()),
        convex_vertices=cvx.num_vertices(), pointwise_vertices=pw.num_vertices(),
        convex_complete=cvx.complete, pointwise_complete=pw.complete,
        superset=pw.surviving_guards() <= cvx.surviving_guards(),
        convex_median_us=_median_us(cvx), pointwise_median_us=_median_us(pw),
    )
    return rec, cvx, pw


def geometric_mean_speedup(records) -> float:
    return float(np.exp(np.mean([np.log(r.speedup) for r in records])))


def first_execution(task2: Task, out: DecompositionOutput, s: Scenario):
    """Cost of one ILMPC run of ``task2`` from its initial state, ``inf`` if impossible."""
    if not out.complete:
        return math.inf, None, "decomposition incomplete"
    try:
        e = run_iteration(task2, out.convex, s.controller(), task2.initial_state, iteration_id=0)
    except (Infeasible, MaxStepsExceeded) as exc:
        return math.inf, None, f"{type(exc).__name__}: {exc}"
    rep = validate_execution(task2, e)
    if not rep.ok:
        return math.inf, e, rep.summary()
    return float(realized_costs(task2, e, StageCost())[0]), e, None


# -- full batch ----------------------------------------------------------------

@dataclass
class Artifacts:
    scenario: Scenario
    training: TrainingResult
    t2: list
    t2_rejected: list
    convex: DecompositionOutput
    pointwise: DecompositionOutput
    records: list
    theorem: Optional[TheoremReport]
    first_costs: dict
    first_executions: dict
    manifest: io.Manifest
    output_dir: Optional[Path] = None

    @property
    def speedup(self) -> float:
        return geometric_mean_speedup(self.records)

    @property
    def ok(self) -> bool:
        return (self.theorem is not None and self.theorem.ok and self.convex.complete
                and all(r.superset for r in self.records))


def run_experiment(s: Scenario, write: bool = True, plots: bool = True, verify: bool = True,
                   training: Optional[TrainingResult] = None) -> Artifacts:
    """Full batch.  ``training`` may be passed in to reuse an earlier :func:`train` of ``s``."""
    s.validate()
    manifest = io.Manifest()
    training = train(s) if training is None else training
    t2, cvx, rejected = select_t2(s, training)
    task2 = build_robot_task(s.task, t2)
    pw = run_method(training.sampled, task2, "pointwise")
    if rejected:
        manifest.warn(f"{len(rejected)} candidate orderings were not certifiable before {t2}")
    if not pw.complete:
        manifest.partial["pointwise"] = "pointwise decomposition emptied; output is partial"
    if not cvx.complete:
        manifest.partial["convex"] = "convex decomposition emptied; output is partial"

    records = []
    for trial, o in enumerate(candidate_orderings(s, training.orderings)[:s.trials]):
        rec, _, _ = run_trial(training.sampled, s, o, trial)
        records.append(rec)

    theorem = None
    if verify and cvx.complete:
        theorem = verify_theorem1(cvx, task2, s.controller(), samples=s.rollouts, seed=s.seed)
    first_costs, first_exec = {}, {}
    for name, out in (("convex", cvx), ("pointwise", pw)):
        c, e, why = first_execution(task2, out, s)
        first_costs[name] = {"cost": c, "note": why}
        first_exec[name] = e
    art = Artifacts(s, training, t2, rejected, cvx, pw, records, theorem, first_costs, first_exec, manifest)
    if write:
        write_artifacts(art, Path(s.output_dir), plots=plots)
    return art


def write_artifacts(art: Artifacts, root: Path, plots: bool = True) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    m = art.manifest
    s = art.scenario

    def add(path, kind):
        m.add(path, kind, root)

    add(s.save(root / "scenario.json"), "scenario")
    add(io.write_json(root / "training" / "safe_set.json", art.training.sampled.to_dict()), "safe_set")
    add(io.write_json(root / "training" / "orderings.json",
                      {"orderings": art.training.orderings,
                       "iterations": [{"ordering": i, "iteration": it, "steps": e.length}
                                      for i, it, e in art.training.executions]}), "training")
    for idx, it, e in art.training.executions:
        task = build_robot_task(s.task, art.training.orderings[idx])
        add(io.write_execution_csv(root / "training" / f"execution_{it:03d}.csv", task, e), "rollout_log")

    task2 = build_robot_task(s.task, art.t2)
    for name, out in (("convex", art.convex), ("pointwise", art.pointwise)):
        d = root / "decomposition"
        add(io.write_json(d / f"{name}.json", {**out.to_dict(), "task": s.task.to_dict()}), "decomposition")
        add(io.write_json(d / f"{name}_audit.json", {"guards": [g.to_dict(timing=False) for g in out.audit],
                                                     "removed": out.removed}), "audit")
        add(io.write_json(d / f"{name}_timing.json", out.timing_dict()), "timing")
        if out.convex is not None:
            for p in io.write_vertex_clouds(d / "vertex_clouds", out.convex, name):
                add(p, "vertex_cloud")
        add(io.write_guards(d / f"{name}_guards.csv", task2, out.sampled), "guards")
        e = art.first_executions.get(name)
        if e is not None:
            add(io.write_execution_csv(root / "t2" / f"first_execution_{name}.csv", task2, e), "rollout_log")
    add(io.write_workspaces(root / "t2" / "workspaces.csv", task2), "workspaces")
    add(io.write_json(root / "t2" / "selection.json", {"t2": art.t2, "rejected": art.t2_rejected}), "selection")
    add(io.write_json(root / "t2" / "first_execution.json", art.first_costs), "first_execution")
    if art.theorem is not None:
        add(io.write_json(root / "t2" / "closed_loop.json", art.theorem.to_dict()), "closed_loop")

    add(io.write_csv(root / "timing.csv", TimingRecord.HEADER, [r.row() for r in art.records]), "timing")
    add(io.write_json(root / "timing.json", {
        "records": [asdict(r) | {"speedup": r.speedup} for r in art.records],
        "geometric_mean_speedup": art.speedup,
        "machine": io.machine_descriptor(),
    }), "timing")
    if plots:
        from . import plotting
        for p in plotting.experiment_figures(art, root):
            add(p, "figure")
    m.write(root)
    art.output_dir = root
    return root
