"""Sampled and convex time-indexed subtask safe sets.

Sampled sets are stored per subtask label as whole subtask trajectories, in the
subtask's local frame, because decomposition prunes and re-costs trajectory by
trajectory.  The time-indexed view (level ``k`` = steps remaining to the
subtask's transition state) is derived on demand.  A :class:`ConvexSafeSet` is
the hull view of a sampled set placed into one particular task's frame.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import cdd
import numpy as np

from .convex import TOL
from .errors import EmptySet, ExecutionRejected
from .model import Execution, StageCost, Task, validate_execution

SCHEMA = "taskdecomp.safeset/1"

#: States closer than this (max-norm) are merged when hulls are built.
MERGE_TOL = 1e-9


@dataclass
class CostTaggedState:
    x: np.ndarray
    u: np.ndarray
    cost_to_go: float
    source: tuple  # (iteration, label, local time index)


@dataclass
class Trajectory:
    """One subtask-local segment: states ``0..T`` with the last in the transition set."""

    label: int
    iteration: int
    states: np.ndarray
    inputs: np.ndarray
    costs: np.ndarray

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1

    def level_index(self, k: int) -> int:
        return self.T - k

    def tagged(self, t: int) -> CostTaggedState:
        return CostTaggedState(self.states[t].copy(), self.inputs[t].copy(),
                               float(self.costs[t]), (self.iteration, self.label, t))


def realized_costs(task: Task, e: Execution, stage_cost: StageCost) -> np.ndarray:
    """Cost-to-go from every state of a completed execution to the task target."""
    X, U = e.states, e.inputs
    T = X.shape[0]
    h = np.zeros(T)
    for t in range(T):
        u = U[t] if t < U.shape[0] else None
        h[t] = stage_cost(X[t], u, task.in_target(X[t]))
    # the target state itself closes the execution at zero cost
    h[-1] = 0.0
    return np.cumsum(h[::-1])[::-1]


class SampledSafeSet:
    def __init__(self, n: int, m: int):
        self.n = n
        self.m = m
        self.trajectories: dict = {}

    def __repr__(self):
        counts = {l: len(ts) for l, ts in sorted(self.trajectories.items())}
        return f"SampledSafeSet(n={self.n}, m={self.m}, trajectories={counts})"

    def copy(self) -> "SampledSafeSet":
        return copy.deepcopy(self)

    @property
    def labels(self) -> list:
        return sorted(self.trajectories)

    def add_trajectory(self, traj: Trajectory) -> None:
        bucket = self.trajectories.setdefault(traj.label, [])
        if any(t.iteration == traj.iteration for t in bucket):
            raise ValueError(f"iteration {traj.iteration} already recorded for subtask {traj.label}")
        bucket.append(traj)
        bucket.sort(key=lambda t: t.iteration)

    def absorb(self, other: "SampledSafeSet") -> "SampledSafeSet":
        """Add every trajectory of ``other`` (iteration ids must not collide)."""
        if (other.n, other.m) != (self.n, self.m):
            raise ValueError("safe sets differ in dimensions")
        for ts in other.trajectories.values():
            for t in ts:
                self.add_trajectory(copy.deepcopy(t))
        return self

    def remove(self, label: int, iteration: int) -> Trajectory:
        bucket = self.trajectories[label]
        for i, t in enumerate(bucket):
            if t.iteration == iteration:
                return bucket.pop(i)
        raise KeyError((label, iteration))

    def get(self, label: int, iteration: int) -> Trajectory:
        for t in self.trajectories.get(label, []):
            if t.iteration == iteration:
                return t
        raise KeyError((label, iteration))

    def iterations(self) -> list:
        return sorted({t.iteration for ts in self.trajectories.values() for t in ts})

    def max_level(self, label: int) -> int:
        ts = self.trajectories.get(label, [])
        return max((t.T for t in ts), default=-1)

    def level(self, label: int, k: int) -> list:
        out = []
        for t in self.trajectories.get(label, []):
            if 0 <= k <= t.T:
                out.append(t.tagged(t.level_index(k)))
        return out

    def guard_set(self, label: int) -> list:
        return self.level(label, 0)

    def num_states(self, label: Optional[int] = None) -> int:
        labels = self.labels if label is None else [label]
        return sum(t.T + 1 for l in labels for t in self.trajectories.get(l, []))

    def record_execution(self, task: Task, e: Execution, stage_cost: StageCost,
                         validate: bool = True) -> "SampledSafeSet":
        """Insert every state of ``e`` at its steps-to-transition index.

        Cost tags are the realized cost-to-go to the task target.  Executions
        that fail validation are rejected.
        """
        if validate:
            rep = validate_execution(task, e)
            if not rep.ok:
                raise ExecutionRejected(f"execution {e.iteration_id} invalid: {rep.summary()}", rep)
        if e.spans[0].slot != 0 or e.spans[-1].slot != task.M - 1:
            raise ExecutionRejected("only complete task executions can be recorded")
        costs = realized_costs(task, e, stage_cost)
        U = np.vstack([e.inputs, np.full((1, self.m), np.nan)]) if e.inputs.shape[0] < e.states.shape[0] else e.inputs
        for sp in e.spans:
            sub = task.subtasks[sp.slot]
            sl = slice(sp.start, sp.end + 1)
            self.add_trajectory(Trajectory(
                label=sub.label,
                iteration=e.iteration_id,
                states=np.array([sub.to_local(x) for x in e.states[sl]]),
                inputs=U[sl].copy(),
                costs=costs[sl].copy(),
            ))
        return self

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        subs = []
        for label in self.labels:
            levels = []
            for k in range(self.max_level(label) + 1):
                members = self.level(label, k)
                members.sort(key=lambda c: (c.source[0], c.source[2]))
                levels.append({
                    "k": k,
                    "states": [c.x.tolist() for c in members],
                    "inputs": [[None if np.isnan(v) else float(v) for v in c.u] for c in members],
                    "costs": [c.cost_to_go for c in members],
                    "sources": [list(c.source) for c in members],
                })
            subs.append({"label": label, "levels": levels})
        return {"schema": SCHEMA, "frame": "local", "n": self.n, "m": self.m, "subtasks": subs}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SampledSafeSet":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported safe-set schema {d.get('schema')!r}")
        sss = cls(d["n"], d["m"])
        rows = {}
        for sub in d["subtasks"]:
            for lev in sub["levels"]:
                for x, u, c, src in zip(lev["states"], lev["inputs"], lev["costs"], lev["sources"]):
                    it, label, t = src
                    u = [np.nan if v is None else v for v in u]
                    rows.setdefault((label, it), []).append((t, x, u, c))
        for (label, it), items in sorted(rows.items()):
            items.sort(key=lambda r: r[0])
            sss.add_trajectory(Trajectory(
                label=label, iteration=it,
                states=np.array([r[1] for r in items], dtype=float),
                inputs=np.array([r[2] for r in items], dtype=float),
                costs=np.array([r[3] for r in items], dtype=float),
            ))
        return sss

    @classmethod
    def from_json(cls, text: str) -> "SampledSafeSet":
        return cls.from_dict(json.loads(text))


@dataclass
class Level:
    """Vertex list of one hull ``(slot, k)`` in a task's global frame."""

    slot: int
    k: int
    Z: np.ndarray
    U: np.ndarray
    V: np.ndarray
    sources: list
    lo: np.ndarray = field(init=False)
    hi: np.ndarray = field(init=False)
    _exact: tuple = field(init=False, default=None, repr=False, compare=False)

    def __post_init__(self):
        self.lo = self.Z.min(axis=0)
        self.hi = self.Z.max(axis=0)

    def exact(self):
        """States and costs as exact rationals of their float values (cached)."""
        if self._exact is None:
            Zq = [[Fraction(float(v)) for v in z] for z in self.Z]
            self._exact = (Zq, [Fraction(float(v)) for v in self.V])
        return self._exact

    @property
    def size(self) -> int:
        return self.Z.shape[0]


def _merge(Z, U, V, S):
    close = np.max(np.abs(Z[:, None, :] - Z[None, :, :]), axis=2) <= MERGE_TOL
    if close.sum() == Z.shape[0]:
        return Z, U, V, S
    # cheapest copy of each duplicate group survives; stable on ties
    order = np.argsort(V, kind="stable")
    taken = np.zeros(Z.shape[0], dtype=bool)
    keep = []
    for i in order:
        if taken[i]:
            continue
        keep.append(i)
        taken |= close[i]
    keep.sort()
    return Z[keep], U[keep], V[keep], [S[i] for i in keep]


class ConvexSafeSet:
    """Hull view ``(slot, k) -> Level`` of a sampled safe set placed in ``task``."""

    def __init__(self, task: Task, levels: dict):
        self.task = task
        self.levels = levels
        self._by_slot: dict = {}
        for (slot, k) in sorted(levels):
            self._by_slot.setdefault(slot, []).append(k)

    @classmethod
    def from_sampled(cls, sss: SampledSafeSet, task: Task, slots=None) -> "ConvexSafeSet":
        levels = {}
        slots = range(task.M) if slots is None else slots
        for slot in slots:
            sub = task.subtasks[slot]
            ts = sss.trajectories.get(sub.label, [])
            if not ts:
                continue
            for k in range(max(t.T for t in ts) + 1):
                rows = [(t, t.level_index(k)) for t in ts if k <= t.T]
                Z = np.array([sub.to_global(t.states[i]) for t, i in rows])
                U = np.array([t.inputs[i] for t, i in rows])
                V = np.array([t.costs[i] for t, i in rows])
                S = [(t.iteration, t.label, i) for t, i in rows]
                if len(rows) > 1:
                    Z, U, V, S = _merge(Z, U, V, S)
                levels[(slot, k)] = Level(slot, k, Z, U, V, S)
        return cls(task, levels)

    def keys(self) -> list:
        return sorted(self.levels)

    def slot_bounds(self, slot: int):
        """Stacked ``(ks, lo, hi, vmin)`` of every level in ``slot`` (cached)."""
        cache = self.__dict__.setdefault("_bounds", {})
        if slot not in cache:
            ks = self.slot_levels(slot)
            levs = [self.levels[(slot, k)] for k in ks]
            n = self.task.subtasks[0].n
            cache[slot] = (
                np.asarray(ks, dtype=int),
                np.array([l.lo for l in levs]).reshape(-1, n),
                np.array([l.hi for l in levs]).reshape(-1, n),
                np.array([l.V.min() for l in levs]),
            )
        return cache[slot]

    def slot_levels(self, slot: int) -> list:
        return self._by_slot.get(slot, [])

    def max_level(self, slot: int) -> int:
        ks = self.slot_levels(slot)
        return ks[-1] if ks else -1

    def __getitem__(self, key) -> Level:
        if key not in self.levels:
            raise EmptySet(f"no vertices stored at level {key}")
        return self.levels[key]

    def __contains__(self, key) -> bool:
        return key in self.levels

    def num_vertices(self, slot: Optional[int] = None) -> int:
        return sum(l.size for (s, _), l in self.levels.items() if slot is None or s == slot)

    def to_dict(self) -> dict:
        out = []
        for (slot, k) in self.keys():
            lev = self.levels[(slot, k)]
            out.append({
                "slot": slot, "k": k,
                "states": lev.Z.tolist(),
                "inputs": [[None if np.isnan(v) else float(v) for v in u] for u in lev.U],
                "costs": lev.V.tolist(),
                "sources": [list(s) for s in lev.sources],
            })
        return {"schema": "taskdecomp.convexsafeset/1", "frame": "global",
                "ordering": self.task.ordering, "levels": out}


@dataclass
class Barycentric:
    value: float
    lam: np.ndarray
    slot: int
    k: int


def _exact_hull_lp(lev: Level, x):
    # min V.lam  s.t.  lam >= 0, sum(lam) = 1, |(Z - x)' lam| <= TOL, in rationals.
    # Levels are often near-flat simplices whose heights sit far below the
    # rounding error of x, so any floating-point solve of this program moves
    # the optimum by more than TOL.  Solved exactly, the value can only drop
    # when states are added, and a stored state is feasible at its own cost.
    Zq, Vq = lev.exact()
    P = len(Zq)
    tau = Fraction(TOL)
    one, zero = Fraction(1), Fraction(0)
    rows = []
    for j, xj in enumerate(Fraction(float(v)) for v in x):
        d = [z[j] - xj for z in Zq]
        rows.append([tau] + [-v for v in d])
        rows.append([tau] + d)
    for i in range(P):
        rows.append([zero] * (i + 1) + [one] + [zero] * (P - i - 1))
    rows.append([-one] + [one] * P)
    m = cdd.Matrix(rows, number_type="fraction")
    m.lin_set = frozenset([len(rows) - 1])
    m.obj_type = cdd.LPObjType.MIN
    m.obj_func = [zero] + Vq
    lp = cdd.LinProg(m)
    lp.solve()
    if lp.status != cdd.LPStatusType.OPTIMAL:
        return None
    return lp.obj_value, lp.primal_solution


def barycentric_cost(css: ConvexSafeSet, x, slot: int, k: int) -> Optional[Barycentric]:
    """Cheapest convex combination of stored costs within ``TOL`` (max-norm) of ``x``.

    Returns ``None`` when ``x`` lies outside the hull of level ``(slot, k)``.
    The program is solved in exact rational arithmetic.
    """
    lev = css[(slot, k)]
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x < lev.lo - TOL) or np.any(x > lev.hi + TOL):
        return None
    if lev.size == 1:
        if np.max(np.abs(lev.Z[0] - x)) <= TOL:
            return Barycentric(float(lev.V[0]), np.ones(1), slot, k)
        return None
    res = _exact_hull_lp(lev, x)
    if res is None:
        return None
    value, lam = res
    return Barycentric(float(value), np.array([float(v) for v in lam]), slot, k)


def min_cost_membership(css: ConvexSafeSet, x, slots=None) -> Optional[Barycentric]:
    """Scan every nonempty level and return the cheapest representation of ``x``.

    Ties go to the smallest slot, then the smallest ``k``.
    """
    best = None
    x = np.asarray(x, dtype=float)
    for (slot, k) in css.keys():
        if slots is not None and slot not in slots:
            continue
        lev = css.levels[(slot, k)]
        if best is not None and lev.V.min() > best.value + 1e-9:
            continue
        r = barycentric_cost(css, x, slot, k)
        if r is not None and (best is None or r.value < best.value - 1e-9):
            best = r
    return best


def blended_input(css: ConvexSafeSet, bary: Barycentric) -> np.ndarray:
    """Input obtained by blending the stored inputs with the barycentric weights."""
    lev = css[(bary.slot, bary.k)]
    return bary.lam @ lev.U
