"""Small dense LP/QP solving behind one contract.

Every computation in the package reduces to small dense programs (tens to a
few hundred variables), so the default backend talks to HiGHS directly and
reuses one solver instance per thread; building a fresh instance per call
costs more than the solve itself at these sizes.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

import highspy
import numpy as np

#: Residual bound an ``optimal`` result must satisfy; shared with the model layer.
TOL = 1e-7
#: Primal feasibility tolerance handed to the solver.  Infeasibility is declared
#: when no point satisfies the constraints to this level.
SOLVER_FEAS_TOL = 1e-9
#: Phase-1 threshold: a program is infeasible only when the least total
#: violation of its general constraints exceeds this.
PHASE1_TOL = 1e-8

_INF = highspy.kHighsInf


@dataclass
class ConvexProgram:
    """``min c'z + 0.5 z'Hz`` s.t. ``A_eq z = b_eq``, ``A_ub z <= b_ub``, ``lb <= z <= ub``."""

    c: np.ndarray
    H: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        d = self.c.shape[0]
        self.A_eq = np.zeros((0, d)) if self.A_eq is None else np.asarray(self.A_eq, dtype=float).reshape(-1, d)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()
        self.A_ub = np.zeros((0, d)) if self.A_ub is None else np.asarray(self.A_ub, dtype=float).reshape(-1, d)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=float).ravel()
        self.lb = np.full(d, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(d, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.A_eq.shape[0] != self.b_eq.shape[0] or self.A_ub.shape[0] != self.b_ub.shape[0]:
            raise ValueError("constraint matrix / right-hand side length mismatch")
        if self.lb.shape[0] != d or self.ub.shape[0] != d:
            raise ValueError("variable bounds must have one entry per variable")
        if self.H is not None:
            self.H = np.asarray(self.H, dtype=float)
            if self.H.shape != (d, d):
                raise ValueError(f"H must be {d}x{d}")
            if not np.allclose(self.H, self.H.T, atol=1e-12):
                raise ValueError("H must be symmetric")

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    def residual(self, z) -> float:
        r = 0.0
        if self.A_eq.shape[0]:
            r = max(r, float(np.max(np.abs(self.A_eq @ z - self.b_eq))))
        if self.A_ub.shape[0]:
            r = max(r, float(np.max(self.A_ub @ z - self.b_ub, initial=0.0)))
        r = max(r, float(np.max(self.lb - z, initial=0.0)), float(np.max(z - self.ub, initial=0.0)))
        return r

    def objective(self, z) -> float:
        val = float(self.c @ z) + self.offset
        if self.H is not None:
            val += 0.5 * float(z @ self.H @ z)
        return val


def elastic(p: ConvexProgram) -> ConvexProgram:
    """Phase-1 program: least L1 violation of the equality and inequality rows.

    Variable bounds stay hard.  Always feasible when ``lb <= ub``.
    """
    d, me, mu = p.dim, p.A_eq.shape[0], p.A_ub.shape[0]
    ns = 2 * me + mu
    A_eq = np.hstack([p.A_eq, np.eye(me), -np.eye(me), np.zeros((me, mu))])
    A_ub = np.hstack([p.A_ub, np.zeros((mu, 2 * me)), -np.eye(mu)])
    return ConvexProgram(c=np.concatenate([np.zeros(d), np.ones(ns)]), A_eq=A_eq, b_eq=p.b_eq,
                         A_ub=A_ub, b_ub=p.b_ub, lb=np.concatenate([p.lb, np.zeros(ns)]),
                         ub=np.concatenate([p.ub, np.full(ns, np.inf)]))


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | numerical_failure
    z: Optional[np.ndarray]
    objective: float
    residual: float

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class HighsBackend:
    """Default backend: dual simplex (LP) / active-set QP from HiGHS.

    A run the solver cannot decide is retried with primal simplex, then with
    presolve switched on, before ``numerical_failure`` is reported.
    """

    name = "highs"
    #: (simplex_strategy, presolve) per attempt: dual, primal, dual with presolve
    attempts = ((1, "off"), (4, "off"), (1, "on"))

    def __init__(self):
        self._local = threading.local()

    def _solver(self):
        h = getattr(self._local, "h", None)
        if h is None:
            h = highspy.Highs()
            h.setOptionValue("output_flag", False)
            h.setOptionValue("presolve", self.attempts[0][1])
            h.setOptionValue("simplex_strategy", self.attempts[0][0])
            h.setOptionValue("primal_feasibility_tolerance", SOLVER_FEAS_TOL)
            h.setOptionValue("dual_feasibility_tolerance", SOLVER_FEAS_TOL)
            self._local.h = h
        return h

    def _run(self, p: ConvexProgram, fallback: int = 0):
        h = self._solver()
        d = p.dim
        A = np.vstack([p.A_eq, p.A_ub]) if p.A_ub.shape[0] else p.A_eq
        n_eq = p.A_eq.shape[0]
        row_lo = np.concatenate([p.b_eq, np.full(p.A_ub.shape[0], -_INF)])
        row_hi = np.concatenate([p.b_eq, p.b_ub])
        model = highspy.HighsModel()
        lp = model.lp_
        lp.num_col_ = d
        lp.num_row_ = A.shape[0]
        lp.col_cost_ = p.c
        lp.col_lower_ = np.where(np.isfinite(p.lb), p.lb, -_INF)
        lp.col_upper_ = np.where(np.isfinite(p.ub), p.ub, _INF)
        lp.row_lower_ = np.where(np.isfinite(row_lo), row_lo, -_INF)
        lp.row_upper_ = np.where(np.isfinite(row_hi), row_hi, _INF)
        lp.offset_ = float(p.offset)
        mask = A != 0
        lp.a_matrix_.format_ = highspy.MatrixFormat.kRowwise
        lp.a_matrix_.start_ = np.concatenate([[0], np.cumsum(mask.sum(axis=1))]).astype(np.int32)
        lp.a_matrix_.index_ = np.nonzero(mask)[1].astype(np.int32)
        lp.a_matrix_.value_ = A[mask]
        if p.H is not None and np.any(p.H):
            hess = model.hessian_
            L = np.tril(p.H)
            cols, starts, vals = [], [0], []
            for j in range(d):
                rows = np.nonzero(L[j:, j])[0] + j
                cols.extend(rows)
                vals.extend(L[rows, j])
                starts.append(len(cols))
            hess.dim_ = d
            hess.format_ = highspy.HessianFormat.kTriangular
            hess.start_ = np.asarray(starts, dtype=np.int32)
            hess.index_ = np.asarray(cols, dtype=np.int32)
            hess.value_ = np.asarray(vals, dtype=float)
        h.clearSolver()
        if getattr(self._local, "mode", 0) != fallback:
            strategy, presolve = self.attempts[fallback]
            h.setOptionValue("simplex_strategy", strategy)
            h.setOptionValue("presolve", presolve)
            self._local.mode = fallback
        h.passModel(model)
        h.run()
        return h, n_eq

    def solve(self, p: ConvexProgram) -> SolveResult:
        res = None
        for attempt in range(len(self.attempts)):
            res = self._solve_once(p, attempt)
            if res.status != "numerical_failure":
                return res
        return res

    def _solve_once(self, p: ConvexProgram, attempt: int) -> SolveResult:
        MS = highspy.HighsModelStatus
        h, _ = self._run(p, attempt)
        st = h.getModelStatus()
        if st == MS.kOptimal:
            return self._optimal(p, h)
        if st == MS.kInfeasible:
            return self._confirm_infeasible(p, attempt)
        if st in (MS.kUnbounded, MS.kUnboundedOrInfeasible):
            # Decide which one by a pure feasibility solve.
            feas = ConvexProgram(np.zeros(p.dim), None, p.A_eq, p.b_eq, p.A_ub, p.b_ub, p.lb, p.ub)
            h2, _ = self._run(feas, attempt)
            if h2.getModelStatus() == MS.kInfeasible:
                return self._confirm_infeasible(p, attempt)
            return SolveResult("unbounded", None, float("-inf"), 0.0)
        return SolveResult("numerical_failure", None, float("nan"), float("inf"))

    @staticmethod
    def _optimal(p: ConvexProgram, h) -> SolveResult:
        z = np.asarray(h.getSolution().col_value, dtype=float)
        res = p.residual(z)
        if res > TOL:
            return SolveResult("numerical_failure", z, float("nan"), res)
        return SolveResult("optimal", z, p.objective(z), res)

    def _confirm_infeasible(self, p: ConvexProgram, attempt: int) -> SolveResult:
        """Check an infeasible verdict against the phase-1 threshold.

        Badly scaled hull LPs can be declared infeasible at the tight solver
        tolerance although a point violating nothing by more than
        ``PHASE1_TOL`` exists; those are re-solved at the looser ``TOL``.
        """
        MS = highspy.HighsModelStatus
        h, _ = self._run(elastic(p), attempt)
        if h.getModelStatus() != MS.kOptimal or h.getInfo().objective_function_value > PHASE1_TOL:
            return SolveResult("infeasible", None, float("inf"), float("inf"))
        h.setOptionValue("primal_feasibility_tolerance", TOL)
        try:
            h, _ = self._run(p, attempt)
            if h.getModelStatus() == MS.kOptimal:
                return self._optimal(p, h)
        finally:
            h.setOptionValue("primal_feasibility_tolerance", SOLVER_FEAS_TOL)
        return SolveResult("numerical_failure", None, float("nan"), float("inf"))


class ScipyBackend:
    """LP-only alternative through :func:`scipy.optimize.linprog`."""

    name = "scipy"

    @staticmethod
    def _linprog(p: ConvexProgram, feas_tol: float):
        from scipy.optimize import linprog

        return linprog(
            p.c,
            A_ub=p.A_ub if p.A_ub.shape[0] else None,
            b_ub=p.b_ub if p.A_ub.shape[0] else None,
            A_eq=p.A_eq if p.A_eq.shape[0] else None,
            b_eq=p.b_eq if p.A_eq.shape[0] else None,
            bounds=list(zip(np.where(np.isfinite(p.lb), p.lb, None), np.where(np.isfinite(p.ub), p.ub, None))),
            method="highs",
            options={"primal_feasibility_tolerance": feas_tol, "presolve": False},
        )

    def solve(self, p: ConvexProgram) -> SolveResult:
        if p.H is not None and np.any(p.H):
            raise NotImplementedError("the scipy backend handles linear programs only")
        res = self._linprog(p, SOLVER_FEAS_TOL)
        if res.status == 0:
            z = np.asarray(res.x, dtype=float)
            r = p.residual(z)
            if r > TOL:
                return SolveResult("numerical_failure", z, float("nan"), r)
            return SolveResult("optimal", z, p.objective(z), r)
        if res.status == 2:
            ph = self._linprog(elastic(p), SOLVER_FEAS_TOL) if p.A_eq.shape[0] + p.A_ub.shape[0] else None
            if ph is None or ph.status != 0 or ph.fun > PHASE1_TOL:
                return SolveResult("infeasible", None, float("inf"), float("inf"))
            res = self._linprog(p, TOL)
            if res.status != 0:
                return SolveResult("numerical_failure", None, float("nan"), float("inf"))
            z = np.asarray(res.x, dtype=float)
            r = p.residual(z)
            if r > TOL:
                return SolveResult("numerical_failure", z, float("nan"), r)
            return SolveResult("optimal", z, p.objective(z), r)
        if res.status == 3:
            return SolveResult("unbounded", None, float("-inf"), 0.0)
        return SolveResult("numerical_failure", None, float("nan"), float("inf"))


_default_backend = HighsBackend()


def get_backend():
    return _default_backend


def set_backend(backend) -> None:
    """Swap the process-wide backend (anything with ``solve(ConvexProgram)``)."""
    global _default_backend
    _default_backend = backend


def solve(p: ConvexProgram, backend=None) -> SolveResult:
    return (backend or _default_backend).solve(p)
