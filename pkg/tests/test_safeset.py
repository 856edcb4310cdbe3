import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import di_subtask
from taskdecomp.convex import TOL
from taskdecomp.errors import EmptySet, ExecutionRejected
from taskdecomp.model import Execution, Span, StageCost, Task
from taskdecomp.safeset import (ConvexSafeSet, Level, SampledSafeSet, Trajectory, barycentric_cost,
                                blended_input, min_cost_membership, realized_costs)


def target_task(goal=5.0):
    """One double-integrator subtask; the task ends once ``x1 >= goal``."""
    sub = di_subtask(1, G=np.array([[-1.0, 0.0]]), g=np.array([-goal]), existential=False)
    return Task((sub,), initial_state=np.zeros(2))


def rollout(task, x0, inputs):
    sub = task.subtasks[0]
    X, U = [np.asarray(x0, dtype=float)], []
    for u in inputs:
        if task.in_target(X[-1]):
            break
        U.append(np.array([u]))
        X.append(sub.dynamics(X[-1], U[-1]))
    assert task.in_target(X[-1])
    return Execution(np.array(X), np.array(U).reshape(-1, 1), [Span(0, 0, len(X) - 1)])


def random_execution(task, rng, iteration):
    x0 = np.array([rng.uniform(-3, 0), rng.uniform(-0.5, 0.5)])
    inputs = rng.uniform(0.2, 1.0, size=60)  # crosses x1 = 5 below speed 4, inside the box
    e = rollout(task, x0, inputs)
    e.iteration_id = iteration
    return e


def css_from_levels(task, levels):
    lv = {}
    for (slot, k), (Z, V) in levels.items():
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        lv[(slot, k)] = Level(slot, k, Z, np.zeros((Z.shape[0], 1)), np.asarray(V, dtype=float),
                              [(0, 1, i) for i in range(Z.shape[0])])
    return ConvexSafeSet(task, lv)


def test_three_step_execution_levels():
    task = target_task(goal=3.0)
    e = rollout(task, [0.0, 1.0], [0.0, 0.0, 0.0])
    assert e.length == 3
    sss = SampledSafeSet(2, 1).record_execution(task, e, StageCost())
    assert sss.max_level(1) == 3
    for k in range(4):
        (c,) = sss.level(1, k)
        assert np.allclose(c.x, e.states[3 - k])


def test_min_time_tags_at_target():
    task = target_task(goal=3.0)
    e = rollout(task, [0.0, 1.0], [0.0, 0.0, 0.0])
    sss = SampledSafeSet(2, 1).record_execution(task, e, StageCost())
    assert sss.level(1, 0)[0].cost_to_go == 0
    assert sss.level(1, 1)[0].cost_to_go == 1
    assert [c.cost_to_go for k in range(4) for c in sss.level(1, k)] == [0, 1, 2, 3]


def test_lengths_four_and_six():
    task = target_task(goal=4.0)
    e4 = rollout(task, [0.0, 1.0], [0.0] * 4)
    e6 = rollout(task, [-2.0, 1.0], [0.0] * 6)
    e6.iteration_id = 1
    sss = SampledSafeSet(2, 1).record_execution(task, e4, StageCost()).record_execution(task, e6, StageCost())
    assert (e4.length, e6.length) == (4, 6)
    assert sss.max_level(1) == 6
    for k in (5, 6):
        assert [c.source[0] for c in sss.level(1, k)] == [1]
    assert sorted(c.source[0] for c in sss.level(1, 4)) == [0, 1]


def test_invalid_execution_rejected():
    task = target_task(goal=3.0)
    e = rollout(task, [0.0, 1.0], [0.0, 0.0, 0.0])
    e.states[1, 0] += 1e-3
    with pytest.raises(ExecutionRejected):
        SampledSafeSet(2, 1).record_execution(task, e, StageCost())


def test_barycentric_single_vertex():
    task = target_task()
    css = css_from_levels(task, {(0, 0): ([[1.0, 2.0]], [5.0])})
    r = barycentric_cost(css, [1.0, 2.0], 0, 0)
    assert r.value == pytest.approx(5.0) and np.allclose(r.lam, [1.0])


def test_barycentric_midpoint():
    task = target_task()
    css = css_from_levels(task, {(0, 0): ([[0.0, 0.0], [2.0, 2.0]], [2.0, 4.0])})
    assert barycentric_cost(css, [1.0, 1.0], 0, 0).value == pytest.approx(3.0)


def test_barycentric_outside_hull():
    task = target_task()
    css = css_from_levels(task, {(0, 0): ([[0.0, 0.0], [2.0, 2.0], [2.0, 0.0]], [1.0, 1.0, 1.0])})
    assert barycentric_cost(css, [0.0, 1.0], 0, 0) is None


def test_barycentric_empty_level():
    task = target_task()
    css = css_from_levels(task, {(0, 0): ([[0.0, 0.0]], [1.0])})
    with pytest.raises(EmptySet):
        barycentric_cost(css, [0.0, 0.0], 0, 3)


def test_min_cost_membership_unique_and_outer_min():
    task = target_task()
    tri = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]
    css = css_from_levels(task, {(0, 1): ([[5.0, 5.0]], [3.0]),
                                 (0, 2): (tri, [7.0, 7.0, 7.0]),
                                 (0, 3): (tri, [4.0, 4.0, 4.0])})
    r = min_cost_membership(css, [5.0, 5.0])
    assert (r.slot, r.k, r.value) == (0, 1, 3.0)
    r = min_cost_membership(css, [0.5, 0.5])
    assert (r.slot, r.k) == (0, 3) and r.value == pytest.approx(4.0)
    assert min_cost_membership(css, [9.0, -9.0]) is None


def test_min_cost_membership_tie_prefers_smaller_k():
    task = target_task()
    tri = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]
    css = css_from_levels(task, {(0, 2): (tri, [4.0] * 3), (0, 5): (tri, [4.0] * 3)})
    assert min_cost_membership(css, [0.5, 0.5]).k == 2


def test_duplicates_merge_keeps_cheaper_tag():
    task = target_task(goal=4.0)
    sss = SampledSafeSet(2, 1)
    x = np.array([[1.0, 0.0], [4.0, 0.0]])
    sss.add_trajectory(Trajectory(1, 0, x, np.array([[0.0], [np.nan]]), np.array([5.0, 0.0])))
    sss.add_trajectory(Trajectory(1, 1, x.copy(), np.array([[0.0], [np.nan]]), np.array([3.0, 0.0])))
    css = ConvexSafeSet.from_sampled(sss, task)
    assert css[(0, 1)].size == 1 and css[(0, 1)].V[0] == 3.0


def test_json_round_trip():
    task = target_task()
    rng = np.random.default_rng(0)
    sss = SampledSafeSet(2, 1)
    for j in range(3):
        sss.record_execution(task, random_execution(task, rng, j), StageCost())
    text = sss.to_json()
    again = SampledSafeSet.from_json(text)
    assert again.to_json() == text
    assert json.loads(text)["schema"].startswith("taskdecomp.safeset")


def test_realized_costs_min_time():
    task = target_task(goal=3.0)
    e = rollout(task, [0.0, 1.0], [0.0, 0.0, 0.0])
    assert list(realized_costs(task, e, StageCost())) == [3, 2, 1, 0]


# -- properties over random recorded executions --------------------------------

def recorded(seed, count):
    task = target_task()
    rng = np.random.default_rng(seed)
    sss = SampledSafeSet(2, 1)
    for j in range(count):
        sss.record_execution(task, random_execution(task, rng, j), StageCost())
    return task, sss


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_stored_vertex_cost_at_most_tag(seed):
    task, sss = recorded(seed, 4)
    css = ConvexSafeSet.from_sampled(sss, task)
    for ts in sss.trajectories.values():
        for t in ts:
            for i in range(t.T + 1):
                r = barycentric_cost(css, t.states[i], 0, t.T - i)
                assert r is not None and r.value <= t.costs[i] + 1e-7


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_monotone_under_more_executions(seed):
    task, sss = recorded(seed, 6)
    rng = np.random.default_rng(seed + 1)
    small = SampledSafeSet(2, 1)
    for label, ts in sss.trajectories.items():
        for t in ts[:2]:
            small.add_trajectory(t)
    before = ConvexSafeSet.from_sampled(small, task)
    after = ConvexSafeSet.from_sampled(sss, task)
    for _ in range(30):
        key = before.keys()[rng.integers(len(before.keys()))]
        lev = before[key]
        x = rng.dirichlet(np.ones(lev.size)) @ lev.Z
        a = barycentric_cost(before, x, *key)
        b = barycentric_cost(after, x, *key)
        assert a is not None and b is not None
        assert b.value <= a.value + 1e-7


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_blended_input_lands_in_previous_level(seed):
    task, sss = recorded(seed, 5)
    css = ConvexSafeSet.from_sampled(sss, task)
    sub = task.subtasks[0]
    rng = np.random.default_rng(seed)
    for key in css.keys():
        if key[1] == 0:
            continue
        lev = css[key]
        x = rng.dirichlet(np.ones(lev.size)) @ lev.Z
        r = barycentric_cost(css, x, *key)
        assert r is not None
        assert np.all(r.lam >= -TOL) and abs(r.lam.sum() - 1) <= 1e-7
        assert np.allclose(r.lam @ lev.Z, x, atol=1e-7)
        u = blended_input(css, r)
        assert sub.input_box.contains(u)
        assert barycentric_cost(css, sub.dynamics(x, u), key[0], key[1] - 1) is not None


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([1e-6, 1e-9, 1e-11, 1e-13]))
def test_near_flat_level_monotone_and_tag_bounded(seed, height):
    # a triangle in 3D plus one state barely off its plane; floating-point
    # solves of such levels drift by far more than TOL
    rng = np.random.default_rng(seed)
    task = Task((di_subtask(1),), initial_state=np.zeros(2))
    tri = rng.uniform(0, 5, size=(3, 3)) * np.array([1.0, 1.0, 0.0]) + 1.0
    apex = tri.mean(axis=0) + np.array([0.0, 0.0, height])
    V = rng.uniform(100, 1000, size=4)
    small = css_from_levels(task, {(0, 0): (tri, V[:3])})
    big = css_from_levels(task, {(0, 0): (np.vstack([tri, apex]), V)})
    for i in range(3):
        assert barycentric_cost(big, tri[i], 0, 0).value <= V[i]
    for _ in range(10):
        x = rng.dirichlet(np.ones(3)) @ tri
        a = barycentric_cost(small, x, 0, 0)
        b = barycentric_cost(big, x, 0, 0)
        assert a is not None and b is not None and b.value <= a.value
        assert np.max(np.abs(b.lam @ big[(0, 0)].Z - x)) <= TOL + 1e-12  # lam rounded to floats
