"""Systems, subtasks, tasks and executions.

A subtask bundles linear dynamics with axis-aligned state/input boxes and a
transition predicate.  Subtasks carry an identity ``label`` (which obstacle /
mode they are) and a frame ``offset``: the same subtask placed at a different
position in a task is a translated copy, which is what lets executions recorded
under one ordering be reused under another.  Translations must commute with the
dynamics (``A @ offset == offset``) so translated trajectories stay feasible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .convex import TOL, ConvexProgram, solve
from .errors import DimensionMismatch, InputOutOfBounds


def _vec(x, name="vector"):
    a = np.asarray(x, dtype=float)
    if a.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class LinearDynamics:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("dynamics matrices must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def __call__(self, x, u):
        return self.A @ x + self.B @ u


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _vec(self.lower, "lower")
        hi = _vec(self.upper, "upper")
        if lo.shape != hi.shape:
            raise DimensionMismatch("box bounds differ in length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lo > hi):
            raise ValueError(f"box lower bound exceeds upper bound: {lo} > {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x, tol=TOL) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def violation(self, x) -> np.ndarray:
        """Per-coordinate amount by which ``x`` leaves the box (0 inside)."""
        x = np.asarray(x, dtype=float)
        return np.maximum(np.maximum(self.lower - x, x - self.upper), 0.0)

    def shifted(self, offset) -> "Box":
        return Box(self.lower + offset, self.upper + offset)

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class TransitionSpec:
    """Halfspace predicate ``G x <= g`` (intersected with the state box).

    ``existential`` additionally requires a one-step admissible move into the
    next subtask's state box; it is switched off for the task target.
    """

    G: np.ndarray
    g: np.ndarray
    existential: bool = True

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        if G.ndim == 1:
            G = G.reshape(1, -1)
        g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if G.shape[0] != g.shape[0]:
            raise DimensionMismatch("G and g row counts differ")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)

    @classmethod
    def everything(cls, n, existential=True):
        return cls(np.zeros((0, n)), np.zeros(0), existential)

    def halfspace_ok(self, x, tol=TOL) -> bool:
        if self.G.shape[0] == 0:
            return True
        return bool(np.all(self.G @ x <= self.g + tol))

    def shifted(self, offset) -> "TransitionSpec":
        return TransitionSpec(self.G, self.g + self.G @ offset, self.existential)

    def as_target(self) -> "TransitionSpec":
        return TransitionSpec(self.G, self.g, existential=False)


@dataclass(frozen=True)
class Subtask:
    dynamics: LinearDynamics
    state_box: Box
    input_box: Box
    transition: TransitionSpec
    label: int = 0
    offset: Optional[np.ndarray] = None

    def __post_init__(self):
        n, m = self.dynamics.n, self.dynamics.m
        if self.state_box.dim != n:
            raise DimensionMismatch(f"state box has dim {self.state_box.dim}, dynamics n={n}")
        if self.input_box.dim != m:
            raise DimensionMismatch(f"input box has dim {self.input_box.dim}, dynamics m={m}")
        if self.transition.G.shape[1] != n:
            raise DimensionMismatch("transition G must have n columns")
        off = np.zeros(n) if self.offset is None else _vec(self.offset, "offset")
        if off.shape[0] != n:
            raise DimensionMismatch("offset must have n entries")
        if not np.allclose(self.dynamics.A @ off, off, atol=1e-12, rtol=0):
            raise ValueError("frame offset must be a fixed direction of A (A @ offset == offset)")
        object.__setattr__(self, "offset", off)

    @property
    def n(self) -> int:
        return self.dynamics.n

    @property
    def m(self) -> int:
        return self.dynamics.m

    def to_local(self, x):
        return np.asarray(x, dtype=float) - self.offset

    def to_global(self, x):
        return np.asarray(x, dtype=float) + self.offset

    def placed(self, offset) -> "Subtask":
        """Translate a local-frame subtask (offset 0) to ``offset``."""
        offset = _vec(offset, "offset")
        delta = offset - self.offset
        return Subtask(
            self.dynamics,
            self.state_box.shifted(delta),
            self.input_box,
            self.transition.shifted(delta),
            self.label,
            offset,
        )


@dataclass(frozen=True)
class Task:
    """An ordered sequence of placed subtasks; the target is the last one's predicate."""

    subtasks: tuple
    initial_state: Optional[np.ndarray] = None

    def __post_init__(self):
        subs = tuple(self.subtasks)
        if not subs:
            raise ValueError("a task needs at least one subtask")
        n = subs[0].n
        if any(s.n != n for s in subs):
            raise DimensionMismatch("all subtasks must share the state dimension")
        labels = [s.label for s in subs]
        if len(set(labels)) != len(labels):
            raise ValueError(f"subtask labels must be distinct, got {labels}")
        object.__setattr__(self, "subtasks", subs)
        if self.initial_state is not None:
            object.__setattr__(self, "initial_state", _vec(self.initial_state, "initial_state"))

    @property
    def M(self) -> int:
        return len(self.subtasks)

    @property
    def ordering(self) -> list:
        return [s.label for s in self.subtasks]

    @property
    def target(self) -> TransitionSpec:
        return self.subtasks[-1].transition.as_target()

    def slot_of(self, label) -> int:
        return self.ordering.index(label)

    def next_box(self, slot) -> Optional[Box]:
        return self.subtasks[slot + 1].state_box if slot + 1 < self.M else None

    def transition_of(self, slot) -> TransitionSpec:
        return self.target if slot == self.M - 1 else self.subtasks[slot].transition

    def in_target(self, x, tol=TOL) -> bool:
        last = self.subtasks[-1]
        return last.state_box.contains(x, tol) and self.target.halfspace_ok(x, tol)


@dataclass(frozen=True)
class StageCost:
    """Stage cost ``h(x, u)``.

    ``minimum-time`` is 1 outside the target and 0 inside.  ``quadratic`` is
    ``x'Qx + u'Ru`` outside the target and 0 inside.
    """

    kind: str = "minimum-time"
    Q: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("minimum-time", "quadratic"):
            raise ValueError(f"unknown stage cost kind {self.kind!r}")
        if self.kind == "quadratic":
            if self.Q is None or self.R is None:
                raise ValueError("quadratic stage cost needs Q and R")
            object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
            object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))

    @property
    def is_min_time(self) -> bool:
        return self.kind == "minimum-time"

    def __call__(self, x, u, in_target: bool) -> float:
        if in_target:
            return 0.0
        if self.is_min_time:
            return 1.0
        x = np.asarray(x, dtype=float)
        val = float(x @ self.Q @ x)
        if u is not None and not np.any(np.isnan(u)):
            u = np.asarray(u, dtype=float)
            val += float(u @ self.R @ u)
        return val


@dataclass(frozen=True)
class Span:
    slot: int
    start: int
    end: int

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass
class Execution:
    """A recorded trajectory segmented by subtask slot.

    ``inputs[t]`` is applied at ``states[t]``; a completed task execution has one
    fewer input than states (no input at the target state).
    """

    states: np.ndarray
    inputs: np.ndarray
    spans: list
    iteration_id: int = 0
    log: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.size == 0:
            inputs = inputs.reshape(0, inputs.shape[-1] if inputs.ndim == 2 else 0)
        self.inputs = inputs
        self.spans = [s if isinstance(s, Span) else Span(*s) for s in self.spans]

    @property
    def durations(self) -> list:
        return [s.duration for s in self.spans]

    @property
    def length(self) -> int:
        return self.states.shape[0] - 1


def step(subtask: Subtask, x, u) -> np.ndarray:
    x = _vec(x, "x")
    u = _vec(u, "u")
    if x.shape[0] != subtask.n:
        raise DimensionMismatch(f"x has {x.shape[0]} entries, expected {subtask.n}")
    if u.shape[0] != subtask.m:
        raise DimensionMismatch(f"u has {u.shape[0]} entries, expected {subtask.m}")
    if not subtask.input_box.contains(u):
        raise InputOutOfBounds(f"input {u} outside [{subtask.input_box.lower}, {subtask.input_box.upper}]")
    return subtask.dynamics(x, u)


def one_step_feasible(subtask: Subtask, x, target_box: Box) -> bool:
    """Does some admissible input move ``x`` into ``target_box`` in one step?"""
    dyn = subtask.dynamics
    n, m = dyn.n, dyn.m
    lo = target_box.lower - dyn.A @ x
    hi = target_box.upper - dyn.A @ x
    prog = ConvexProgram(
        c=np.zeros(m),
        A_ub=np.vstack([dyn.B, -dyn.B]),
        b_ub=np.concatenate([hi, -lo]),
        lb=subtask.input_box.lower,
        ub=subtask.input_box.upper,
    )
    keep = np.isfinite(prog.b_ub)
    prog = ConvexProgram(c=prog.c, A_ub=prog.A_ub[keep], b_ub=prog.b_ub[keep], lb=prog.lb, ub=prog.ub)
    return solve(prog).status == "optimal"


def in_transition_set(subtask: Subtask, x, next_state_box: Optional[Box] = None,
                      tol=TOL) -> bool:
    x = _vec(x, "x")
    if not subtask.state_box.contains(x, tol):
        return False
    if not subtask.transition.halfspace_ok(x, tol):
        return False
    if subtask.transition.existential and next_state_box is not None:
        return one_step_feasible(subtask, x, next_state_box)
    return True


@dataclass(frozen=True)
class Violation:
    kind: str  # dynamics | state_bound | input_bound | transition | not_terminal | structure
    index: int
    slot: int
    amount: float
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, kind) -> int:
        return sum(v.kind == kind for v in self.violations)

    def add(self, *args, **kw):
        self.violations.append(Violation(*args, **kw))

    def summary(self) -> str:
        if self.ok:
            return "execution valid"
        kinds = sorted({v.kind for v in self.violations})
        return ", ".join(f"{k}={self.count(k)}" for k in kinds)


def validate_execution(task: Task, e: Execution, tol=TOL) -> ValidationReport:
    """Check dynamics, box constraints and transition conditions of ``e``."""
    rep = ValidationReport()
    X, U = e.states, e.inputs
    T = X.shape[0]
    if not e.spans:
        rep.add("structure", 0, -1, 0.0, "no subtask spans")
        return rep
    if X.shape[1] != task.subtasks[0].n:
        rep.add("structure", 0, -1, 0.0, "state dimension mismatch")
        return rep
    if U.shape[0] not in (T - 1, T):
        rep.add("structure", 0, -1, 0.0, f"{T} states but {U.shape[0]} inputs")
        return rep
    if e.spans[0].start != 0 or e.spans[-1].end != T - 1:
        rep.add("structure", 0, -1, 0.0, "spans do not cover the trajectory")
    for a, b in zip(e.spans, e.spans[1:]):
        if b.start != a.end + 1 or b.slot != a.slot + 1:
            rep.add("structure", b.start, b.slot, 0.0, "spans are not contiguous")
    for sp in e.spans:
        if not 0 <= sp.slot < task.M or sp.end < sp.start:
            rep.add("structure", sp.start, sp.slot, 0.0, "invalid span")
    if not rep.ok:
        return rep

    for sp in e.spans:
        sub = task.subtasks[sp.slot]
        for t in range(sp.start, sp.end + 1):
            v = sub.state_box.violation(X[t]).max()
            if v > tol:
                rep.add("state_bound", t, sp.slot, float(v))
            if t < U.shape[0]:
                if np.any(np.isnan(U[t])):
                    if t < T - 1:
                        rep.add("input_bound", t, sp.slot, float("inf"), "missing input")
                    continue
                v = sub.input_box.violation(U[t]).max()
                if v > tol:
                    rep.add("input_bound", t, sp.slot, float(v))
                if t + 1 < T:
                    r = np.abs(sub.dynamics(X[t], U[t]) - X[t + 1]).max()
                    if r > tol:
                        rep.add("dynamics", t, sp.slot, float(r))
        end = X[sp.end]
        spec = task.transition_of(sp.slot)
        if sp is e.spans[-1]:
            if sp.slot != task.M - 1 or not task.in_target(end, tol):
                rep.add("not_terminal", sp.end, sp.slot, 0.0, "final state is not in the task target")
        elif not spec.halfspace_ok(end, tol):
            viol = float(np.max(spec.G @ end - spec.g))
            rep.add("transition", sp.end, sp.slot, viol, "span end outside transition set")
    return rep
