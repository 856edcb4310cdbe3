import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import double_integrator
from taskdecomp.errors import DegenerateHull, ProjectionBlowup, WitnessNotFound
from taskdecomp.model import Box, LinearDynamics
from taskdecomp.polytope import (APPENDIX_POINTS, Polytope, appendix_instance, canonicalize, contains,
                                 controllable_family, fourier_motzkin, hull_member, invariance_margin,
                                 is_control_invariant, n_step_member, pre, pre_member, proposition1_demo,
                                 vrep_to_hrep)

U2 = Box([-2.0], [2.0])


def random_triangle(rng, scale=2.0):
    while True:
        T = rng.uniform(-scale, scale, size=(3, 2))
        if abs(np.linalg.det(np.vstack([T[1] - T[0], T[2] - T[0]]))) > 0.5:
            return T


# -- H-representation -----------------------------------------------------------

def test_triangle_hrep_has_x_row():
    P = vrep_to_hrep([[0, 0], [3, 0], [3, 1]])
    assert P.rows == 3
    rows = {tuple(np.round(np.concatenate([F, [f]]), 9)) for F, f in zip(P.F, P.f)}
    assert (1.0, 0.0, 3.0) in rows
    assert P.contains([2.5, 0.5]) and not P.contains([3.1, 0.5])


def test_single_point_hrep():
    P = vrep_to_hrep([[1.0, -2.0]])
    assert P.rows == 4 and P.affine_dim == 0
    assert P.contains([1.0, -2.0]) and not P.contains([1.0, -1.99])
    with pytest.raises(DegenerateHull):
        vrep_to_hrep([[1.0, -2.0]], strict=True)


def test_unit_square_four_facets():
    P = vrep_to_hrep([[0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0.5]])
    assert P.rows == 4
    assert np.allclose(sorted(P.vertices().tolist()), [[0, 0], [0, 1], [1, 0], [1, 1]])


def test_segment_hrep_is_flat():
    P = vrep_to_hrep([[0, 0], [2, 2]])
    assert P.affine_dim == 1
    assert P.contains([1, 1]) and not P.contains([1, 1.01]) and not P.contains([2.1, 2.1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_hrep_matches_hull_lp(seed):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(rng.integers(3, 9), 2))
    P = vrep_to_hrep(V)
    for x in rng.normal(scale=1.5, size=(40, 2)):
        m = P.margin(x)
        if abs(m) < 1e-6:
            continue
        assert (m < 0) == hull_member(V, x)[0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_canonicalize_idempotent(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(10, 2))
    P = Polytope(np.vstack([F, np.eye(2), -np.eye(2)]), np.concatenate([rng.uniform(0.2, 2, 10), np.ones(4) * 3]))
    a = canonicalize(P)
    b = canonicalize(a)
    assert a.rows == b.rows
    assert np.allclose(a.F, b.F) and np.allclose(a.f, b.f)
    for x in rng.uniform(-3, 3, size=(50, 2)):
        if abs(P.margin(x)) > 1e-6:
            assert P.contains(x) == a.contains(x)


# -- Pre ------------------------------------------------------------------------

def test_pre_of_full_space_is_state_set():
    X = Polytope.from_box(Box([-1, -1], [1, 1]))
    P = pre(Polytope.full(2), double_integrator(), U2, X)
    ok, _ = contains(P, X)
    assert ok and contains(X, P)[0]


def test_pre_with_zero_input_matrix_is_preimage():
    dyn = LinearDynamics([[2.0, 0.0], [0.0, 1.0]], [[0.0], [0.0]])
    T = Polytope.from_box(Box([-2, -1], [2, 1]))
    P = pre(T, dyn, U2)
    expected = Polytope.from_box(Box([-1, -1], [1, 1]))
    assert contains(P, expected)[0] and contains(expected, P)[0]


def test_pre_matches_input_grid():
    rng = np.random.default_rng(1)
    dyn = double_integrator()
    grid = np.arange(-2.0, 2.0 + 1e-12, 0.05)
    band = 0.05
    checked = agree = 0
    while checked < 1000:
        T = vrep_to_hrep(random_triangle(rng))
        P = pre(T, dyn, U2)
        for x in rng.uniform(-5, 5, size=(200, 2)):
            land = (dyn.A @ x)[None, :] + grid[:, None] * dyn.B[:, 0][None, :]
            m = (land @ T.F.T - T.f).max(axis=1)
            if m.min() < -band:
                want = True
            elif m.min() > band:
                want = False
            else:
                continue
            checked += 1
            agree += P.contains(x) == want
    assert agree == checked


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_projection_agrees_with_lp(seed):
    rng = np.random.default_rng(seed)
    dyn = double_integrator()
    T = vrep_to_hrep(random_triangle(rng))
    P = pre(T, dyn, U2)
    for x in rng.uniform(-5, 5, size=(30, 2)):
        if abs(P.margin(x)) < 1e-6:
            continue
        assert P.contains(x) == pre_member(T, dyn, U2, x)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_pre_is_monotone(seed):
    rng = np.random.default_rng(seed)
    dyn = double_integrator()
    V = random_triangle(rng)
    small = vrep_to_hrep(V)
    big = vrep_to_hrep(np.vstack([V, rng.uniform(-3, 3, size=(3, 2))]))
    assert contains(pre(big, dyn, U2), pre(small, dyn, U2))[0]


def test_fourier_motzkin_blowup_cap():
    rng = np.random.default_rng(0)
    F = rng.normal(size=(40, 3))
    P = Polytope(F, np.ones(40))
    with pytest.raises(ProjectionBlowup):
        fourier_motzkin(P, 2, max_rows=10)


# -- invariance and controllable families --------------------------------------

def test_contraction_box_is_invariant():
    dyn = LinearDynamics([[0.5, 0.0], [0.0, 0.5]], [[0.0], [1.0]])
    R = Polytope.from_box(Box([-1, -1], [1, 1]))
    assert is_control_invariant(R, dyn, U2)
    assert invariance_margin(R, dyn, U2) <= 0


def test_fixed_point_is_invariant():
    R = vrep_to_hrep([[0.0, 0.0]])
    assert is_control_invariant(R, double_integrator(), U2)


def test_appendix_target_not_invariant():
    dyn, U, X, R = appendix_instance()
    assert not is_control_invariant(R, dyn, U)
    assert invariance_margin(R, dyn, U) > 1.0


def test_identity_target_invariant():
    dyn, U, X, R = appendix_instance(identity_A=True)
    assert is_control_invariant(R, dyn, U)


def test_controllable_family_shapes():
    dyn, U, X, R = appendix_instance()
    fam0 = controllable_family(R, dyn, U, X, 0)
    assert len(fam0) == 1 and contains(fam0[0], R)[0] and contains(R, fam0[0])[0]
    fam = controllable_family(R, dyn, U, X, 3)
    assert len(fam) == 4
    for K in fam.sets:
        assert not K.is_empty() and K.is_bounded()
    with pytest.raises(ValueError):
        controllable_family(R, dyn, U, X, -1)


def test_family_matches_n_step_lp():
    dyn, U, X, R = appendix_instance()
    fam = controllable_family(R, dyn, U, X, 3)
    rng = np.random.default_rng(2)
    for j, K in enumerate(fam.sets):
        for x in rng.uniform(-8, 8, size=(150, 2)):
            if abs(K.margin(x)) < 1e-6:
                continue
            assert K.contains(x) == n_step_member(R, dyn, U, X, x, j)


# -- hull of controllable sets --------------------------------------------------

def test_demo_witness_outside_every_set():
    rep = proposition1_demo()
    assert rep["target_invariant"] is False
    assert rep["K1_subset_K2"] is False and rep["K1_subset_K2_margin"] > 0
    w = np.array(rep["witness"])
    dyn, U, X, R = appendix_instance()
    fam = controllable_family(R, dyn, U, X, 3)
    cloud = np.vstack([K.vertices() for K in fam.sets])
    assert hull_member(cloud, w)[0]
    assert all(not n_step_member(R, dyn, U, X, w, j) for j in range(4))
    assert all(rep["witness_outside_lp"])
    assert rep["witness_margin"] > 1e-6
    lam = np.array(rep["witness_hull_weights"])
    assert np.all(lam >= -1e-9) and np.allclose(lam @ cloud, w, atol=1e-6)


def test_demo_identity_variant():
    with pytest.raises(WitnessNotFound):
        proposition1_demo(identity_A=True)
    rep = proposition1_demo(identity_A=True, require_witness=False)
    assert rep["witness"] is None and rep["target_invariant"] is True
    assert rep["K1_subset_K2"] is True


def test_appendix_points_vertices():
    R = vrep_to_hrep(APPENDIX_POINTS)
    assert np.allclose(sorted(R.vertices().tolist()), sorted(APPENDIX_POINTS.tolist()))
