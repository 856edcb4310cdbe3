"""Re-using stored executions for a reordered task.

The backward pass walks the new ordering from its second-to-last subtask to
the first.  Every stored subtask trajectory is certified through its exit
(guard) state: a one-step move into the already-certified sets of the
successor subtask.  Certified trajectories are re-costed onto the new task's
cost-to-go; the rest are dropped.

Two certificates are available.  :func:`ctrb` lands the step anywhere in a
convex hull of successor states (one LP per time level).  The point-to-point
baseline has to hit one stored successor state exactly (one LP per state).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .convex import TOL, ConvexProgram, solve
from .errors import EmptyDecomposition, EmptySet
from .ilmpc import ControllerConfig, run_iteration
from .model import StageCost, Subtask, Task, validate_execution
from .safeset import ConvexSafeSet, SampledSafeSet, Trajectory, realized_costs

SCHEMA = "taskdecomp.decomposition/1"


@dataclass
class CtrbResult:
    feasible: bool
    u: Optional[np.ndarray] = None
    q: float = float("inf")
    I: Optional[int] = None
    K: Optional[int] = None
    lam: Optional[np.ndarray] = None
    vertex: Optional[int] = None  # pointwise only: index of the hit state in its level
    lps: int = 0


def _ctrb_level(x, sub: Subtask, Z, V):
    """Joint LP over ``(u, lam)``: ``A x + B u = Z' lam``, cheapest landing cost."""
    A, B = sub.dynamics.A, sub.dynamics.B
    n, m = B.shape
    P = Z.shape[0]
    A_eq = np.zeros((n + 1, m + P))
    A_eq[:n, :m] = B
    # centred on the free landing point A x for conditioning (sum(lam) = 1)
    A_eq[:n, m:] = -(Z - A @ x).T
    A_eq[n, m:] = 1.0
    b_eq = np.concatenate([np.zeros(n), [1.0]])
    lb = np.concatenate([sub.input_box.lower, np.zeros(P)])
    ub = np.concatenate([sub.input_box.upper, np.full(P, np.inf)])
    v0 = float(V.min())
    res = solve(ConvexProgram(c=np.concatenate([np.zeros(m), V - v0]), A_eq=A_eq, b_eq=b_eq,
                              lb=lb, ub=ub, offset=v0))
    if not res.ok:
        return None
    return res.z[:m], np.clip(res.z[m:], 0.0, None), float(res.objective)


def ctrb(x, source: Subtask, css: ConvexSafeSet, I: int, k: Optional[int] = None) -> CtrbResult:
    """One-step controllability of ``x`` into the hulls of slot ``I``.

    With ``k`` given only that level is tried; otherwise every nonempty level
    is solved in ascending order and the cheapest landing wins (ties keep the
    smaller ``k``).
    """
    x = np.asarray(x, dtype=float)
    ks = [k] if k is not None else css.slot_levels(I)
    if k is not None and (I, k) not in css:
        raise EmptySet(f"no vertices stored at level {(I, k)}")
    best = CtrbResult(False)
    for kk in ks:
        lev = css.levels[(I, kk)]
        r = _ctrb_level(x, source, lev.Z, lev.V)
        best.lps += 1
        if r is None:
            continue
        u, lam, q = r
        if not best.feasible or q < best.q - 1e-9:
            best = CtrbResult(True, u, q, I, kk, lam, lps=best.lps)
    return best


def _hit_state(x, sub: Subtask, z) -> Optional[np.ndarray]:
    """Input ``u`` in the box with ``A x + B u = z`` exactly, if one exists."""
    A, B = sub.dynamics.A, sub.dynamics.B
    res = solve(ConvexProgram(c=np.zeros(B.shape[1]), A_eq=B, b_eq=z - A @ x,
                              lb=sub.input_box.lower, ub=sub.input_box.upper))
    return res.z if res.ok else None


def ctrb_pointwise(x, source: Subtask, css: ConvexSafeSet, I: int) -> CtrbResult:
    """Point-to-point baseline: enumerate every stored successor state."""
    x = np.asarray(x, dtype=float)
    best = CtrbResult(False)
    for kk in css.slot_levels(I):
        lev = css.levels[(I, kk)]
        for p in range(lev.size):
            u = _hit_state(x, source, lev.Z[p])
            best.lps += 1
            if u is None:
                continue
            q = float(lev.V[p])
            if not best.feasible or q < best.q - 1e-9:
                lam = np.zeros(lev.size)
                lam[p] = 1.0
                best = CtrbResult(True, u, q, I, kk, lam, p, lps=best.lps)
    return best


@dataclass
class GuardRecord:
    slot: int
    label: int
    iteration: int
    feasible: bool
    q: Optional[float]
    u: Optional[list]
    I: Optional[int]
    K: Optional[int]
    lps: int
    solve_us: float

    def to_dict(self, timing=True) -> dict:
        d = {"slot": self.slot, "label": self.label, "iteration": self.iteration,
             "feasible": self.feasible, "q_star": self.q, "u_star": self.u,
             "I": self.I, "K": self.K, "lps": self.lps}
        if timing:
            d["solve_us"] = self.solve_us
        return d


@dataclass
class DecompositionOutput:
    method: str
    task: Task
    sampled: SampledSafeSet
    convex: Optional[ConvexSafeSet]
    bridges: dict = field(default_factory=dict)  # (label, iteration) -> GuardRecord
    audit: list = field(default_factory=list)
    removed: list = field(default_factory=list)  # (slot, label, iteration)
    stage_seconds: dict = field(default_factory=dict)
    complete: bool = False

    @property
    def total_seconds(self) -> float:
        return float(sum(self.stage_seconds.values()))

    def surviving_guards(self) -> set:
        """``(label, iteration)`` of every stored trajectory kept in the output."""
        return {(t.label, t.iteration) for ts in self.sampled.trajectories.values() for t in ts}

    def num_states(self) -> int:
        return self.sampled.num_states()

    def num_vertices(self) -> int:
        return 0 if self.convex is None else self.convex.num_vertices()

    def to_dict(self) -> dict:
        """Deterministic content only; timings live in :meth:`timing_dict`."""
        return {
            "schema": SCHEMA,
            "method": self.method,
            "ordering": self.task.ordering,
            "complete": self.complete,
            "removed": [list(r) for r in self.removed],
            "guards": [g.to_dict(timing=False) for g in self.audit],
            "safe_set": self.sampled.to_dict(),
            "convex_safe_set": None if self.convex is None else self.convex.to_dict(),
        }

    def timing_dict(self) -> dict:
        return {"method": self.method, "total_seconds": self.total_seconds,
                "stage_seconds": {str(k): v for k, v in sorted(self.stage_seconds.items())},
                "guards": [g.to_dict() for g in self.audit]}


def recost(traj: Trajectory, sub: Subtask, task: Task, slot: int, stage_cost: StageCost,
           terminal: float) -> np.ndarray:
    """Tags ``stage cost along the suffix (guard included) + terminal``.

    In the last slot the guard state lies in the target, so its stage cost is
    zero and ``terminal`` is 0 as well.
    """
    T = traj.T
    costs = np.empty(T + 1)
    acc = terminal
    for t in range(T, -1, -1):
        x = sub.to_global(traj.states[t])
        inside = slot == task.M - 1 and task.in_target(x)
        u = traj.inputs[t]
        acc += stage_cost(x, None if np.any(np.isnan(u)) else u, inside)
        costs[t] = acc
    return costs


def _decompose(t1: SampledSafeSet, task2: Task, stage_cost: StageCost, method: str) -> DecompositionOutput:
    missing = [s.label for s in task2.subtasks if not t1.trajectories.get(s.label)]
    if missing:
        raise EmptyDecomposition(f"no stored trajectories for subtasks {missing}")
    check = ctrb if method == "convex" else ctrb_pointwise
    out_sets = SampledSafeSet(t1.n, t1.m)
    out = DecompositionOutput(method, task2, out_sets, None)

    last = task2.M - 1
    sub = task2.subtasks[last]
    for traj in t1.trajectories[sub.label]:
        nt = Trajectory(traj.label, traj.iteration, traj.states.copy(), traj.inputs.copy(), traj.costs.copy())
        nt.costs = recost(nt, sub, task2, last, stage_cost, 0.0)
        out_sets.add_trajectory(nt)
    css = ConvexSafeSet.from_sampled(out_sets, task2, slots=[last])

    for slot in range(last - 1, -1, -1):
        sub = task2.subtasks[slot]
        t_stage = 0.0
        for traj in t1.trajectories[sub.label]:
            x = sub.to_global(traj.states[-1])
            t0 = time.perf_counter()
            r = check(x, sub, css, slot + 1)
            dt = time.perf_counter() - t0
            t_stage += dt
            rec = GuardRecord(slot, traj.label, traj.iteration, r.feasible,
                              r.q if r.feasible else None,
                              None if r.u is None else [float(v) for v in r.u],
                              r.I, r.K, r.lps, dt * 1e6)
            out.audit.append(rec)
            if not r.feasible:
                out.removed.append((slot, traj.label, traj.iteration))
                continue
            nt = Trajectory(traj.label, traj.iteration, traj.states.copy(), traj.inputs.copy(), traj.costs.copy())
            # the bridge input replaces the recorded exit input
            nt.inputs[-1] = np.clip(r.u, sub.input_box.lower, sub.input_box.upper)
            nt.costs = recost(nt, sub, task2, slot, stage_cost, r.q)
            out_sets.add_trajectory(nt)
            out.bridges[(traj.label, traj.iteration)] = rec
        out.stage_seconds[slot] = t_stage
        if not out_sets.trajectories.get(sub.label):
            out.convex = css
            raise EmptyDecomposition(
                f"{method} decomposition: every trajectory of subtask {sub.label} (slot {slot}) was pruned",
                output=out, slot=slot)
        css = ConvexSafeSet.from_sampled(out_sets, task2, slots=range(slot, task2.M))
    out.convex = css
    out.complete = True
    return out


def decompose(t1_sets: SampledSafeSet, task2: Task, stage_cost: StageCost = StageCost()) -> DecompositionOutput:
    """Certify stored data for ``task2`` with hull-landing certificates."""
    return _decompose(t1_sets, task2, stage_cost, "convex")


def decompose_pointwise(t1_sets: SampledSafeSet, task2: Task,
                        stage_cost: StageCost = StageCost()) -> DecompositionOutput:
    """Baseline: certificates must land exactly on a stored successor state."""
    return _decompose(t1_sets, task2, stage_cost, "pointwise")


# -- verification -----------------------------------------------------------

@dataclass
class RolloutFailure:
    index: int
    slot: int
    x0: list
    reason: str


@dataclass
class TheoremReport:
    samples: int
    failures: list
    steps: list
    costs: list

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {"samples": self.samples, "failures": [f.__dict__ for f in self.failures],
                "steps": self.steps, "costs": self.costs}


def sample_initial_states(css: ConvexSafeSet, samples: int, seed: int, vertex_share: float = 0.5):
    """Stored vertices and random convex combinations of single levels.

    Returns ``(slot, x)`` pairs; deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    keys = css.keys()
    verts = [(s, k, p) for (s, k) in keys for p in range(css.levels[(s, k)].size)]
    nv = min(len(verts), int(round(samples * vertex_share)))
    out = []
    for i in sorted(rng.choice(len(verts), size=nv, replace=False)):
        s, k, p = verts[i]
        out.append((s, css.levels[(s, k)].Z[p].copy()))
    multi = [key for key in keys if css.levels[key].size > 1] or keys
    while len(out) < samples:
        key = multi[rng.integers(len(multi))]
        lev = css.levels[key]
        lam = rng.dirichlet(np.ones(lev.size))
        out.append((key[0], lam @ lev.Z))
    return out


def verify_theorem1(output: DecompositionOutput, task2: Task, cfg: ControllerConfig,
                    samples: int = 100, seed: int = 0, starts=None) -> TheoremReport:
    """Closed-loop rollouts from states of the decomposed sets.

    Every rollout must stay feasible at each step, validate, and end in the
    target.  Any exception or validation error is reported as a failure.
    """
    css = output.convex
    starts = starts if starts is not None else sample_initial_states(css, samples, seed)
    failures, steps, costs = [], [], []
    for i, (slot, x0) in enumerate(starts):
        try:
            e = run_iteration(task2, css, cfg, x0, slot0=slot, iteration_id=i, check_start=False)
        except Exception as exc:  # noqa: BLE001 - every failure mode is reported
            failures.append(RolloutFailure(i, slot, [float(v) for v in x0], f"{type(exc).__name__}: {exc}"))
            continue
        rep = validate_execution(task2, e, TOL)
        if not rep.ok:
            failures.append(RolloutFailure(i, slot, [float(v) for v in x0], rep.summary()))
            continue
        steps.append(e.length)
        costs.append(float(realized_costs(task2, e, cfg.stage_cost)[0]))
    return TheoremReport(len(starts), failures, steps, costs)
