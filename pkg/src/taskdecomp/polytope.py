"""H-representation polytopes, the Pre operator and N-step controllable sets.

Sizes are desk scale (a handful of dimensions), so projection is plain
Fourier-Motzkin elimination with LP redundancy removal after every step.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .convex import ConvexProgram, solve
from .errors import DegenerateHull, ProjectionBlowup, WitnessNotFound
from .model import Box, LinearDynamics

#: Geometric tolerance for containment and redundancy decisions.
GEO_TOL = 1e-9
MAX_ROWS = 2000


@dataclass
class Polytope:
    """``{x : F x <= f}``.  An empty set is stored as the single row ``0 <= -1``."""

    F: np.ndarray
    f: np.ndarray
    affine_dim: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        f = np.asarray(self.f, dtype=float).ravel()
        if F.ndim != 2 or F.shape[0] != f.shape[0]:
            raise ValueError("F must be r x n with one f entry per row")
        self.F, self.f = F, f

    @property
    def n(self) -> int:
        return self.F.shape[1]

    @property
    def rows(self) -> int:
        return self.F.shape[0]

    @classmethod
    def full(cls, n: int) -> "Polytope":
        return cls(np.zeros((0, n)), np.zeros(0))

    @classmethod
    def empty(cls, n: int) -> "Polytope":
        return cls(np.zeros((1, n)), np.array([-1.0]))

    @classmethod
    def from_box(cls, box: Box) -> "Polytope":
        n = box.dim
        F = np.vstack([np.eye(n), -np.eye(n)])
        f = np.concatenate([box.upper, -box.lower])
        keep = np.isfinite(f)
        return cls(F[keep], f[keep])

    def contains(self, x, tol=1e-7) -> bool:
        return bool(np.all(self.F @ np.asarray(x, dtype=float) <= self.f + tol))

    def margin(self, x) -> float:
        """Largest row violation at ``x`` (negative inside)."""
        if not self.rows:
            return -np.inf
        return float(np.max(self.F @ np.asarray(x, dtype=float) - self.f))

    def intersect(self, other: "Polytope") -> "Polytope":
        return Polytope(np.vstack([self.F, other.F]), np.concatenate([self.f, other.f]))

    def support(self, c) -> Optional[float]:
        """``max c'x`` over the set; ``None`` if empty, ``inf`` if unbounded."""
        res = solve(ConvexProgram(c=-np.asarray(c, dtype=float), A_ub=self.F, b_ub=self.f))
        if res.status == "infeasible":
            return None
        if res.status == "unbounded":
            return np.inf
        if not res.ok:
            raise RuntimeError(f"support LP failed: {res.status}")
        return -res.objective

    def is_empty(self) -> bool:
        if np.any((np.abs(self.F).sum(axis=1) == 0) & (self.f < -GEO_TOL)):
            return True
        return solve(ConvexProgram(c=np.zeros(self.n), A_ub=self.F, b_ub=self.f)).status == "infeasible"

    def is_bounded(self) -> bool:
        for i in range(self.n):
            for s in (1.0, -1.0):
                e = np.zeros(self.n)
                e[i] = s
                v = self.support(e)
                if v is not None and not np.isfinite(v):
                    return False
        return True

    def canonical(self) -> "Polytope":
        return canonicalize(self)

    def vertices(self, tol=1e-7) -> np.ndarray:
        """Vertex list by brute-force row intersection (``n <= 3``).

        In 2-D the vertices come back in counter-clockwise order.
        """
        n = self.n
        if n > 3:
            raise ValueError("vertex enumeration is limited to n <= 3")
        if self.is_empty():
            return np.zeros((0, n))
        pts = []
        for idx in itertools.combinations(range(self.rows), n):
            M = self.F[list(idx)]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            v = np.linalg.solve(M, self.f[list(idx)])
            if self.contains(v, tol):
                pts.append(v)
        if not pts:
            return np.zeros((0, n))
        pts = _unique_rows(np.array(pts), 1e-7)
        if n == 2 and len(pts) > 2:
            c = pts.mean(axis=0)
            pts = pts[np.argsort(np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]))]
        return pts


def _unique_rows(P, tol):
    out = []
    for p in P:
        if not any(np.max(np.abs(p - q)) <= tol for q in out):
            out.append(p)
    return np.array(out)


def _normalize(F, f):
    norms = np.linalg.norm(F, axis=1)
    zero = norms <= 1e-12
    Fn = np.where(zero[:, None], 0.0, F / np.where(zero, 1.0, norms)[:, None])
    fn = np.where(zero, f, f / np.where(zero, 1.0, norms))
    return Fn, fn, zero


def canonicalize(p: Polytope) -> Polytope:
    """Unit-norm rows, no duplicates, no LP-redundant rows, stable row order."""
    n = p.n
    F, f, zero = _normalize(p.F, p.f)
    if np.any(zero & (f < -GEO_TOL)):
        return Polytope.empty(n)
    F, f = F[~zero], f[~zero]
    if not F.shape[0]:
        return Polytope.full(n)
    # drop exact duplicates, keeping the tightest right-hand side
    order = np.lexsort(np.vstack([f, np.round(F, 9).T[::-1]]))
    F, f = F[order], f[order]
    keep = [0]
    for i in range(1, F.shape[0]):
        if np.max(np.abs(F[i] - F[keep[-1]])) <= 1e-9:
            continue
        keep.append(i)
    F, f = F[keep], f[keep]
    q = Polytope(F, f)
    if q.is_empty():
        return Polytope.empty(n)
    active = np.ones(F.shape[0], dtype=bool)
    for i in range(F.shape[0]):
        active[i] = False
        others = Polytope(np.vstack([F[active], F[i:i + 1]]), np.concatenate([f[active], [f[i] + 1.0]]))
        v = others.support(F[i])
        if v is None or v > f[i] + GEO_TOL:
            active[i] = True
    return Polytope(F[active], f[active], p.affine_dim)


def fourier_motzkin(p: Polytope, k: int, max_rows: int = MAX_ROWS) -> Polytope:
    """Eliminate coordinate ``k`` (the result lives in ``n - 1`` dimensions)."""
    F, f = p.F, p.f
    a = F[:, k]
    pos, neg, zer = a > 1e-12, a < -1e-12, np.abs(a) <= 1e-12
    rows = [F[zer]]
    rhs = [f[zer]]
    P_idx, N_idx = np.flatnonzero(pos), np.flatnonzero(neg)
    if len(P_idx) * len(N_idx) + zer.sum() > max_rows:
        raise ProjectionBlowup(f"eliminating coordinate {k} would create "
                               f"{len(P_idx) * len(N_idx) + zer.sum()} rows (cap {max_rows})")
    for i in P_idx:
        for j in N_idx:
            rows.append((F[i] / a[i] - F[j] / a[j])[None, :])
            rhs.append(np.array([f[i] / a[i] - f[j] / a[j]]))
    G = np.vstack(rows)
    g = np.concatenate(rhs)
    return canonicalize(Polytope(np.delete(G, k, axis=1), g))


def project_out(p: Polytope, dims, max_rows: int = MAX_ROWS) -> Polytope:
    """Eliminate every coordinate in ``dims`` (highest index first)."""
    q = canonicalize(p)
    for k in sorted(dims, reverse=True):
        q = fourier_motzkin(q, k, max_rows)
    return q


def pre(p: Polytope, dyn: LinearDynamics, input_box: Box, state_set: Optional[Polytope] = None,
        max_rows: int = MAX_ROWS) -> Polytope:
    """``{x : exists u in U, A x + B u in p}`` intersected with ``state_set``."""
    n, m = dyn.n, dyn.m
    if state_set is None:
        state_set = Polytope.full(n)
    if not p.rows:
        return canonicalize(state_set)
    U = Polytope.from_box(input_box)
    lifted_F = np.vstack([
        np.hstack([p.F @ dyn.A, p.F @ dyn.B]),
        np.hstack([np.zeros((U.rows, n)), U.F]),
    ])
    lifted_f = np.concatenate([p.f, U.f])
    proj = project_out(Polytope(lifted_F, lifted_f), range(n, n + m), max_rows)
    return canonicalize(proj.intersect(state_set))


def pre_member(p: Polytope, dyn: LinearDynamics, input_box: Box, x, tol=1e-7) -> bool:
    """LP form of Pre membership (no projection)."""
    x = np.asarray(x, dtype=float)
    if not p.rows:
        return True
    res = solve(ConvexProgram(c=np.zeros(dyn.m), A_ub=p.F @ dyn.B, b_ub=p.f - p.F @ dyn.A @ x + tol,
                              lb=input_box.lower, ub=input_box.upper))
    return res.ok


def n_step_member(r: Polytope, dyn: LinearDynamics, input_box: Box, state_set: Polytope, x, N: int) -> bool:
    """Direct LP: can ``x`` be driven into ``r`` in exactly ``N`` steps inside ``state_set``?

    Independent of the projection machinery; used as a certificate.
    """
    n, m = dyn.n, dyn.m
    x = np.asarray(x, dtype=float)
    if N == 0:
        return r.contains(x) and state_set.contains(x) if r.rows else state_set.contains(x)
    d = N * m
    # x_t = A^t x + sum_{s<t} A^{t-1-s} B u_s
    rows, rhs = [], []
    Ap = [np.linalg.matrix_power(dyn.A, t) for t in range(N + 1)]
    for t in range(1, N + 1):
        M = np.zeros((n, d))
        for s in range(t):
            M[:, s * m:(s + 1) * m] = Ap[t - 1 - s] @ dyn.B
        free = Ap[t] @ x
        S = r if t == N else state_set
        if t == N:
            S = r.intersect(state_set)
        if S.rows:
            rows.append(S.F @ M)
            rhs.append(S.f - S.F @ free)
    if not state_set.contains(x):
        return False
    lb = np.tile(input_box.lower, N)
    ub = np.tile(input_box.upper, N)
    res = solve(ConvexProgram(c=np.zeros(d), A_ub=np.vstack(rows) if rows else None,
                              b_ub=np.concatenate(rhs) if rhs else None, lb=lb, ub=ub))
    return res.ok


def contains(outer: Polytope, inner: Polytope):
    """``(inner <= outer, worst margin)`` via one support LP per row of ``outer``."""
    if inner.is_empty():
        return True, -np.inf
    worst = -np.inf
    for Fi, fi in zip(outer.F, outer.f):
        v = inner.support(Fi)
        worst = max(worst, np.inf if v is None else v - fi)
    return bool(worst <= 1e-7), float(worst)


def is_control_invariant(r: Polytope, dyn: LinearDynamics, input_box: Box) -> bool:
    return invariance_margin(r, dyn, input_box) <= 1e-7


def invariance_margin(r: Polytope, dyn: LinearDynamics, input_box: Box) -> float:
    """How far ``r`` sticks out of ``Pre(r)`` (``<= 0`` means invariant)."""
    return contains(pre(r, dyn, input_box), r)[1]


@dataclass
class ControllableFamily:
    sets: list

    def __len__(self):
        return len(self.sets)

    def __getitem__(self, j) -> Polytope:
        return self.sets[j]


def controllable_family(r: Polytope, dyn: LinearDynamics, input_box: Box, state_set: Polytope,
                        N: int, max_rows: int = MAX_ROWS) -> ControllableFamily:
    if N < 0:
        raise ValueError("N must be >= 0")
    sets = [canonicalize(r)]
    for _ in range(N):
        sets.append(pre(sets[-1], dyn, input_box, state_set, max_rows))
    return ControllableFamily(sets)


def vrep_to_hrep(vertices, strict: bool = False) -> Polytope:
    """Minimal H-representation of ``conv(vertices)`` for ``n <= 3``.

    Lower-dimensional hulls get a pair of opposite rows for every direction
    orthogonal to their affine hull.  ``strict`` turns that case into
    :class:`DegenerateHull` instead.
    """
    V = np.atleast_2d(np.asarray(vertices, dtype=float))
    if V.shape[0] == 0:
        raise DegenerateHull("no vertices given")
    n = V.shape[1]
    if n > 3:
        raise ValueError("vrep_to_hrep supports n <= 3")
    c = V.mean(axis=0)
    _, sv, Vt = np.linalg.svd(V - c)
    sv = np.concatenate([sv, np.zeros(n - sv.shape[0])])
    r = int(np.sum(sv > 1e-9 * max(1.0, sv.max(initial=0.0))))
    if r < n and strict:
        raise DegenerateHull(f"hull has affine dimension {r} < {n}")
    if r == 0:
        F = np.vstack([np.eye(n), -np.eye(n)])
        return Polytope(F, np.concatenate([V[0], -V[0]]), affine_dim=0)
    basis, normal = Vt[:r], Vt[r:]
    Y = (V - c) @ basis.T
    if r == 1:
        lo, hi = Y.min(), Y.max()
        G, g = np.array([[1.0], [-1.0]]), np.array([hi, -lo])
    else:
        try:
            hull = ConvexHull(Y)
        except QhullError as exc:
            raise DegenerateHull(str(exc)) from exc
        G, g = hull.equations[:, :-1], -hull.equations[:, -1]
    F = G @ basis
    f = g + F @ c
    if r < n:
        F = np.vstack([F, normal, -normal])
        f = np.concatenate([f, normal @ c, -(normal @ c)])
    out = canonicalize(Polytope(F, f))
    out.affine_dim = r
    return out


# -- counterexample instance ---------------------------------------------------

APPENDIX_POINTS = np.array([[3.0, 2.0], [2.0, 2.5], [3.0, 3.0]])


def appendix_instance(identity_A: bool = False):
    """Double integrator, ``u in [-2, 2]``, ``X = [-10, 10]^2``, triangular target."""
    A = np.eye(2) if identity_A else np.array([[1.0, 1.0], [0.0, 1.0]])
    dyn = LinearDynamics(A, np.array([[0.0], [1.0]]))
    U = Box([-2.0], [2.0])
    X = Polytope.from_box(Box([-10.0, -10.0], [10.0, 10.0]))
    R = vrep_to_hrep(APPENDIX_POINTS)
    return dyn, U, X, R


def hull_member(points, x, tol=1e-6):
    """Barycentric LP certificate that ``x`` lies in ``conv(points)``."""
    P = np.asarray(points, dtype=float)
    k = P.shape[0]
    res = solve(ConvexProgram(c=np.zeros(k), A_eq=np.vstack([P.T, np.ones((1, k))]),
                              b_eq=np.concatenate([x, [1.0]]), lb=np.zeros(k)))
    return res.ok, (None if not res.ok else res.z)


def proposition1_demo(identity_A: bool = False, N: int = 3, grid_step: float = 0.05,
                      tol: float = 1e-6, require_witness: bool = True) -> dict:
    """Hull of controllable sets that contains uncontrollable states.

    Returns a JSON-ready report: every set as H-rep plus vertices, the
    non-invariance margin of the target, and one witness point lying in the
    hull of ``K_0..K_N`` but in none of them, with its certificates.  With
    ``require_witness=False`` a missing witness is reported as ``None``
    instead of raising (the identity variant has nested sets).
    """
    dyn, U, X, R = appendix_instance(identity_A)
    fam = controllable_family(R, dyn, U, X, N)
    verts = [K.vertices() for K in fam.sets]
    cloud = np.vstack(verts)
    C = vrep_to_hrep(cloud)
    inv_margin = invariance_margin(R, dyn, U)
    k12 = contains(fam[2], fam[1]) if N >= 2 else (None, None)

    lo, hi = cloud.min(axis=0), cloud.max(axis=0)
    xs = np.round(np.arange(lo[0], hi[0] + grid_step / 2, grid_step), 9)
    ys = np.round(np.arange(lo[1], hi[1] + grid_step / 2, grid_step), 9)
    witness = None
    best = -np.inf
    for x in xs:
        for y in ys:
            w = np.array([x, y])
            if C.margin(w) > -tol:
                continue
            # distance outside the nearest K_j by its H-rep
            m = min(K.margin(w) for K in fam.sets)
            if m > best:
                best, witness = m, w
    lam, outside_lp = None, None
    if witness is None or best <= tol:
        if require_witness:
            raise WitnessNotFound("no grid point of the hull lies outside every controllable set")
        witness = None
    else:
        inside, lam = hull_member(cloud, witness, tol)
        outside_lp = [not n_step_member(R, dyn, U, X, witness, j) for j in range(N + 1)]
        if not inside or not all(outside_lp):
            raise WitnessNotFound("witness certificates disagree with the grid search")

    def pack(P):
        return {"F": P.F.tolist(), "f": P.f.tolist(), "vertices": P.vertices().tolist()}

    return {
        "dynamics": {"A": dyn.A.tolist(), "B": dyn.B.tolist(), "identity_A": identity_A,
                     "note": ("printed identity state matrix: every target state is a fixed point under u=0"
                              if identity_A else "standard discrete double integrator A=[[1,1],[0,1]]")},
        "input_box": [U.lower.tolist(), U.upper.tolist()],
        "state_box": [[-10.0, -10.0], [10.0, 10.0]],
        "sets": {**{f"K{j}": pack(K) for j, K in enumerate(fam.sets)}, "C": pack(C)},
        "target_invariant": bool(inv_margin <= 1e-7),
        "invariance_margin": inv_margin,
        "K1_subset_K2": None if k12[0] is None else bool(k12[0]),
        "K1_subset_K2_margin": k12[1],
        "witness": None if witness is None else witness.tolist(),
        "witness_margin": None if witness is None else best,
        "witness_hull_weights": None if lam is None else lam.tolist(),
        "witness_outside_lp": outside_lp,
    }
