"""Safe-set iterative learning MPC over piecewise-linear subtasks.

Each MPC solve enumerates terminal candidates.  A candidate fixes the hull the
terminal state must land in and the crossing step at which the prediction
switches from the current subtask's constraints to the next one's, so every
candidate is a single convex program.  Candidates are solved cheapest lower
bound first and the scan stops once no remaining bound can beat the incumbent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .convex import TOL, ConvexProgram, solve
from .errors import Infeasible, MaxStepsExceeded
from .model import Execution, Span, StageCost, Task, step
from .safeset import ConvexSafeSet, min_cost_membership


#: Slot sentinel for the task target as terminal set.
TARGET = -1
#: Objective values closer than this are treated as ties.
TIE_TOL = 1e-7


@dataclass
class ControllerConfig:
    horizon: int = 6
    stage_cost: StageCost = field(default_factory=StageCost)
    candidate_filter: Optional[Callable[[int, int], bool]] = None
    max_steps: int = 5000

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.max_steps <= self.horizon:
            raise ValueError("max_steps must exceed the horizon")


@dataclass(frozen=True, order=True)
class TerminalCandidate:
    """Terminal hull ``(I, K)`` and crossing step ``s``.

    For hulls of the current subtask ``s`` equals the horizon (no crossing);
    for the next subtask it is the first predicted step spent there.  For the
    target ``s`` is the arrival step and ``K`` is unused.
    """

    I: int
    K: int
    s: int

    def tiebreak(self):
        # target first, then smaller I, smaller K, larger s
        return (0 if self.I == TARGET else 1, self.I, self.K, -self.s)


@dataclass
class MpcSolution:
    states: np.ndarray
    inputs: np.ndarray
    candidate: Optional[TerminalCandidate]
    cost: float
    lam: Optional[np.ndarray] = None
    slots: Optional[list] = None
    complete: bool = False
    solved: int = 0

    @property
    def first_input(self):
        return None if self.complete else self.inputs[0]


def _reach(dyns, xboxes, uboxes, x0):
    """Interval over-approximation of reachable states along a box schedule.

    The list stops early at the first step whose reachable box is empty.
    """
    lo = hi = np.asarray(x0, dtype=float)
    out = [(lo, hi)]
    for dyn, xb, ub in zip(dyns, xboxes, uboxes):
        A, B = dyn.A, dyn.B
        c, r = 0.5 * (lo + hi), 0.5 * (hi - lo)
        cu, ru = 0.5 * (ub.lower + ub.upper), 0.5 * (ub.upper - ub.lower)
        nc = A @ c + B @ cu
        nr = np.abs(A) @ r + np.abs(B) @ ru
        lo = np.maximum(nc - nr, xb.lower)
        hi = np.minimum(nc + nr, xb.upper)
        if np.any(lo > hi + TOL):
            break
        out.append((lo, hi))
    return out


def _staying_schedule(task, slot, L):
    cur = task.subtasks[slot]
    return [cur] * L, [cur.state_box] * L


def _crossing_schedule(task, slot, s, N):
    cur, nxt = task.subtasks[slot], task.subtasks[slot + 1]
    subs = [cur if t < s else nxt for t in range(N)]
    xboxes = [(cur if t + 1 < s else nxt).state_box for t in range(N)]
    return subs, xboxes


def _build_program(x0, subs, xboxes, cost: StageCost, Z=None, V=None,
                   halfspace=None):
    """Assemble the horizon program.

    Variables are ``[x_0..x_L, u_0..u_{L-1}, lam]``.  ``halfspace`` is an
    optional ``(t, G, g)`` row block on ``x_t``.
    """
    L = len(subs)
    n, m = subs[0].n, subs[0].m
    P = 0 if Z is None else Z.shape[0]
    nx, nu = (L + 1) * n, L * m
    d = nx + nu + P
    rows = L * n + (n + 1 if P else 0)
    A_eq = np.zeros((rows, d))
    for t, sub in enumerate(subs):
        r = slice(t * n, (t + 1) * n)
        A_eq[r, (t + 1) * n:(t + 2) * n] = np.eye(n)
        A_eq[r, t * n:(t + 1) * n] = -sub.dynamics.A
        A_eq[r, nx + t * m:nx + (t + 1) * m] = -sub.dynamics.B
    b_eq = np.zeros(rows)
    if P:
        r0 = L * n
        A_eq[r0:r0 + n, L * n:(L + 1) * n] = np.eye(n)
        # x_L - c = (Z - c)' lam with c the level mean, for conditioning
        zc = Z.mean(axis=0)
        A_eq[r0:r0 + n, nx + nu:] = -(Z - zc).T
        A_eq[r0 + n, nx + nu:] = 1.0
        b_eq[r0:r0 + n] = zc
        b_eq[r0 + n] = 1.0
    lb = np.empty(d)
    ub = np.empty(d)
    lb[:n] = ub[:n] = x0
    for t, xb in enumerate(xboxes):
        lb[(t + 1) * n:(t + 2) * n] = xb.lower
        ub[(t + 1) * n:(t + 2) * n] = xb.upper
    for t, sub in enumerate(subs):
        lb[nx + t * m:nx + (t + 1) * m] = sub.input_box.lower
        ub[nx + t * m:nx + (t + 1) * m] = sub.input_box.upper
    lb[nx + nu:] = 0.0
    ub[nx + nu:] = np.inf
    A_ub = b_ub = None
    if halfspace is not None:
        t, G, g = halfspace
        if G.shape[0]:
            A_ub = np.zeros((G.shape[0], d))
            A_ub[:, t * n:(t + 1) * n] = G
            b_ub = g
    c = np.zeros(d)
    H = None
    offset = 0.0
    if P:
        # sum(lam) = 1: shift the tags by their minimum to keep duals small
        offset = float(V.min())
        c[nx + nu:] = V - offset
    if cost.is_min_time:
        offset += float(L)
    else:
        H = np.zeros((d, d))
        for t in range(L):
            H[t * n:(t + 1) * n, t * n:(t + 1) * n] = 2.0 * cost.Q
            H[nx + t * m:nx + (t + 1) * m, nx + t * m:nx + (t + 1) * m] = 2.0 * cost.R
    return ConvexProgram(c=c, H=H, A_eq=A_eq, b_eq=b_eq, A_ub=A_ub, b_ub=b_ub,
                         lb=lb, ub=ub, offset=offset)


def _stage_lower_bound(cost: StageCost, steps: int) -> float:
    return float(steps) if cost.is_min_time else 0.0


def enumerate_candidates(task: Task, css: ConvexSafeSet, cfg: ControllerConfig, x, slot):
    """Admissible candidates with their lower bounds, after reachability pruning.

    Pruning drops a hull only when its bounding box misses an interval
    over-approximation of the states reachable at the terminal step, so no
    feasible candidate is ever discarded.
    """
    N = cfg.horizon
    cost = cfg.stage_cost
    out = []
    last = slot == task.M - 1

    def keep(I, K):
        return cfg.candidate_filter is None or cfg.candidate_filter(I, K)

    if last:
        subs, xboxes = _staying_schedule(task, slot, N)
        reach = _reach([s.dynamics for s in subs], xboxes, [s.input_box for s in subs], x)
        tgt_box = task.subtasks[-1].state_box
        for t in range(1, len(reach)):
            lo, hi = reach[t]
            if np.all(lo <= tgt_box.upper + TOL) and np.all(hi >= tgt_box.lower - TOL):
                out.append((_stage_lower_bound(cost, t), TerminalCandidate(TARGET, 0, t)))
    schedules = [(slot, N)]
    if not last:
        schedules += [(slot + 1, s) for s in range(1, N + 1)]
    for I, s in schedules:
        if not css.slot_levels(I):
            continue
        if I == slot:
            subs, xboxes = _staying_schedule(task, slot, N)
        else:
            subs, xboxes = _crossing_schedule(task, slot, s, N)
        reach = _reach([sb.dynamics for sb in subs], xboxes, [sb.input_box for sb in subs], x)
        if len(reach) <= N:
            continue
        lo, hi = reach[N]
        base = _stage_lower_bound(cost, N)
        ks, LO, HI, VMIN = css.slot_bounds(I)
        hit = np.all(LO <= hi + TOL, axis=1) & np.all(HI >= lo - TOL, axis=1)
        for j in np.flatnonzero(hit):
            K = int(ks[j])
            if keep(I, K):
                out.append((base + float(VMIN[j]), TerminalCandidate(I, K, s)))
    return out


def solve_candidate(task: Task, css: ConvexSafeSet, cfg: ControllerConfig, x, slot,
                    cand: TerminalCandidate) -> Optional[MpcSolution]:
    N = cfg.horizon
    n, m = task.subtasks[0].n, task.subtasks[0].m
    if cand.I == TARGET:
        L = cand.s
        subs, xboxes = _staying_schedule(task, slot, L)
        tgt = task.target
        prog = _build_program(x, subs, xboxes, cfg.stage_cost,
                              halfspace=(L, tgt.G, tgt.g))
        slots = [slot] * (L + 1)
        lev = None
    else:
        L = N
        if cand.I == slot:
            subs, xboxes = _staying_schedule(task, slot, N)
            hs = None
        else:
            subs, xboxes = _crossing_schedule(task, slot, cand.s, N)
            spec = task.transition_of(slot)
            hs = (cand.s - 1, spec.G, spec.g)
        lev = css.levels[(cand.I, cand.K)]
        prog = _build_program(x, subs, xboxes, cfg.stage_cost, Z=lev.Z, V=lev.V, halfspace=hs)
        slots = [slot] + [slot if t + 1 < cand.s else cand.I for t in range(N)]
    res = solve(prog)
    if not res.ok:
        return None
    z = res.z
    X = z[:(L + 1) * n].reshape(L + 1, n)
    U = z[(L + 1) * n:(L + 1) * n + L * m].reshape(L, m)
    lam = None if lev is None else np.clip(z[(L + 1) * n + L * m:], 0.0, None)
    return MpcSolution(X, U, cand, float(res.objective), lam, slots)


def solve_mpc(task: Task, css: ConvexSafeSet, cfg: ControllerConfig, x, slot: int,
              hint: Optional[TerminalCandidate] = None) -> MpcSolution:
    """Minimum-cost feasible terminal candidate for state ``x`` in ``slot``.

    ``hint`` is solved first to seed the incumbent (typically the previous
    step's candidate shifted by one level); it never changes the result.
    """
    x = np.asarray(x, dtype=float)
    sub = task.subtasks[slot]
    if slot == task.M - 1 and task.in_target(x):
        return MpcSolution(x[None, :], np.zeros((0, sub.m)), TerminalCandidate(TARGET, 0, 0),
                           0.0, None, [slot], complete=True)
    if not sub.state_box.contains(x):
        raise Infeasible(f"state {x} outside the state box of slot {slot}")
    cands = enumerate_candidates(task, css, cfg, x, slot)
    cands.sort(key=lambda lc: (lc[0], lc[1].tiebreak()))
    best = None
    solved = 0
    tried = set()
    if hint is not None:
        for lb, c in cands:
            if c == hint:
                best = solve_candidate(task, css, cfg, x, slot, c)
                solved += 1
                tried.add(c)
                break
    for lb, c in cands:
        if best is not None and lb > best.cost + TIE_TOL:
            break
        if c in tried:
            continue
        sol = solve_candidate(task, css, cfg, x, slot, c)
        solved += 1
        if sol is None:
            continue
        if (best is None or sol.cost < best.cost - TIE_TOL
                or (abs(sol.cost - best.cost) <= TIE_TOL and c.tiebreak() < best.candidate.tiebreak())):
            best = sol
    if best is None:
        raise Infeasible(f"no terminal candidate admits a solution from slot {slot}")
    best.solved = solved
    return best


def policy_step(task: Task, css: ConvexSafeSet, cfg: ControllerConfig, x, slot: int):
    """First optimal input, or ``None`` once the state is in the target."""
    return solve_mpc(task, css, cfg, x, slot).first_input


def _shifted_hint(sol: MpcSolution, slot: int, task: Task) -> Optional[TerminalCandidate]:
    c = sol.candidate
    if c is None or c.I == TARGET:
        return None if c is None or c.s <= 1 else TerminalCandidate(TARGET, 0, c.s - 1)
    if c.I == slot:
        return TerminalCandidate(c.I, c.K - 1, c.s) if c.K > 0 else None
    if c.s > 1:
        return TerminalCandidate(c.I, c.K - 1, c.s - 1) if c.K > 0 else None
    return None


def run_iteration(task: Task, css: ConvexSafeSet, cfg: ControllerConfig, x0,
                  slot0: int = 0, iteration_id: int = 0, check_start: bool = True) -> Execution:
    """Closed-loop receding-horizon rollout until the target is reached.

    The returned execution carries a per-step ``log`` (see :mod:`taskdecomp.io`).
    """
    x = np.asarray(x0, dtype=float)
    slot = slot0
    if check_start and min_cost_membership(css, x, slots=[slot0]) is None:
        if not (slot0 == task.M - 1 and task.in_target(x)):
            raise Infeasible(f"initial state is in no convex safe set of slot {slot0}")
    states, inputs, spans, rows = [x.copy()], [], [], []
    start = 0
    hint = None
    for t in range(cfg.max_steps):
        sol = solve_mpc(task, css, cfg, x, slot, hint=hint)
        if sol.complete:
            spans.append(Span(slot, start, t))
            return Execution(np.array(states), np.array(inputs).reshape(-1, task.subtasks[0].m),
                             spans, iteration_id, log=rows)
        u = sol.inputs[0]
        c = sol.candidate
        rows.append({"t": t, "slot": slot, "x": x.copy(), "u": u.copy(), "I": c.I, "K": c.K,
                     "s": c.s, "cost": sol.cost, "solved": sol.solved})
        x = step(task.subtasks[slot], x, np.clip(u, task.subtasks[slot].input_box.lower,
                                                  task.subtasks[slot].input_box.upper))
        states.append(x.copy())
        inputs.append(u)
        hint = _shifted_hint(sol, slot, task)
        if c.I == slot + 1 and c.s == 1 and c.I != TARGET:
            spans.append(Span(slot, start, t))
            slot += 1
            start = t + 1
    partial = Execution(np.array(states), np.array(inputs), spans + [Span(slot, start, len(states) - 1)],
                        iteration_id, log=rows)
    raise MaxStepsExceeded(f"target not reached within {cfg.max_steps} steps", partial)
