import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import di_subtask, double_integrator
from taskdecomp.errors import DimensionMismatch, InputOutOfBounds
from taskdecomp.model import (TOL, Box, Execution, Span, StageCost, Subtask, Task, TransitionSpec,
                              in_transition_set, step, validate_execution)
from taskdecomp.robot import RobotTaskConfig, build_robot_task, quadruple_integrator, robot_subtask


def test_step_appendix_system():
    sub = di_subtask()
    assert np.allclose(step(sub, [3, 2], [0]), [5, 2])


def test_step_quadruple_integrator():
    cfg = RobotTaskConfig()
    sub = robot_subtask(cfg, 1)
    assert np.allclose(step(sub, [0, 1, 0, 0], [0, 0]), [0.01, 1, 0, 0])


def test_step_rejects_input_above_bound():
    sub = di_subtask(u=2.0)
    with pytest.raises(InputOutOfBounds):
        step(sub, [0, 0], [2.5])


def test_step_dimension_checks():
    sub = di_subtask()
    with pytest.raises(DimensionMismatch):
        step(sub, [0, 0, 0], [0])
    with pytest.raises(DimensionMismatch):
        step(sub, [0, 0], [0, 0])


def test_box_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])


def test_subtask_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        Subtask(double_integrator(), Box([0], [1]), Box([-1], [1]), TransitionSpec.everything(2))


def test_transition_existential_robot():
    cfg = RobotTaskConfig()
    task = build_robot_task(cfg, [1, 2, 3, 4, 5, 6])
    sub = task.subtasks[0]
    w = cfg.width(1)
    z = 0.5 * (max(cfg.o_min[0], cfg.o_min[1]) + min(cfg.o_max[0], cfg.o_max[1]))
    # just below the sector end at full forward speed: the next angle passes it
    x = np.array([w - 0.005, np.pi, z, 0.0])
    assert in_transition_set(sub, x, task.next_box(0))
    # height outside the next band and too far to reach in one step
    nb = task.next_box(0)
    far = np.array([w - 0.005, np.pi, 0.0, 0.0])
    far[2] = sub.state_box.upper[2] if sub.state_box.upper[2] > nb.upper[2] + 0.01 else sub.state_box.lower[2]
    if far[2] > nb.upper[2] + 0.01 or far[2] < nb.lower[2] - 0.01:
        assert not in_transition_set(sub, far, nb)


def test_transition_halfspace_violated():
    sub = di_subtask(G=np.array([[-1.0, 0.0]]), g=np.array([-3.0]))
    assert not in_transition_set(sub, [3.0 - 10 * TOL, 0.0])
    assert in_transition_set(sub, [3.0, 0.0])


def test_target_pure_membership():
    cfg = RobotTaskConfig()
    task = build_robot_task(cfg, [1, 2, 3, 4, 5, 6])
    assert not task.target.existential
    last = task.subtasks[-1].state_box
    x = np.array([last.upper[0], 0.0, last.center()[2], 0.0])
    assert task.in_target(x)
    x[0] -= 0.1
    assert not task.in_target(x)


def _simple_task():
    s1 = di_subtask(1, G=np.array([[-1.0, 0.0]]), g=np.array([-2.0]))
    s2 = di_subtask(2, G=np.array([[-1.0, 0.0]]), g=np.array([-6.0]))
    return Task((s1, s2), initial_state=np.array([0.0, 0.0]))


def _execution():
    task = _simple_task()
    # u = 1, 1, 0, -1 ... gives x1 = 0, 0, 1, 3, 5, 6
    U = np.array([[1.0], [1.0], [0.0], [-1.0], [-1.0]])
    X = [np.zeros(2)]
    for u in U:
        X.append(task.subtasks[0].dynamics(X[-1], u))
    X = np.array(X)
    # first state with x1 >= 2 closes subtask 1
    k = int(np.argmax(X[:, 0] >= 2.0))
    e = Execution(X, U, [Span(0, 0, k), Span(1, k + 1, len(X) - 1)])
    return task, e


def test_validate_constructed_execution():
    task, e = _execution()
    assert validate_execution(task, e).ok


def test_validate_state_bound_violation():
    task, e = _execution()
    bad = Execution(e.states.copy(), e.inputs.copy(), e.spans)
    bad.states[1, 1] = 10 + 10 * TOL
    rep = validate_execution(task, bad)
    assert rep.count("state_bound") == 1


def test_validate_truncated_execution():
    task, e = _execution()
    cut = Execution(e.states[:3], e.inputs[:2], [Span(0, 0, 2)])
    rep = validate_execution(task, cut)
    assert rep.count("not_terminal") == 1


def test_stage_cost_min_time():
    h = StageCost()
    assert h([0, 0], [0], in_target=False) == 1.0
    assert h([0, 0], [0], in_target=True) == 0.0


def test_quadruple_integrator_matrix_layout():
    dyn = quadruple_integrator(0.01)
    assert dyn.A[0, 1] == 0.01 and dyn.A[2, 3] == 0.01
    assert dyn.B[1, 0] == 0.01 and dyn.B[3, 1] == 0.01


vec4 = st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4)
vec2 = st.lists(st.floats(-1, 1, allow_nan=False), min_size=2, max_size=2)


@settings(max_examples=60, deadline=None)
@given(vec4, vec4, vec2, vec2)
def test_step_is_linear(x1, x2, u1, u2):
    sub = robot_subtask(RobotTaskConfig(), 1)
    x1, x2, u1, u2 = map(np.array, (x1, x2, u1, u2))
    lhs = step(sub, x1 + x2, u1 + u2)
    rhs = step(sub, x1, u1) + step(sub, x2, u2) - step(sub, np.zeros(4), np.zeros(2))
    assert np.allclose(lhs, rhs, atol=1e-12)
    assert np.allclose(step(sub, np.zeros(4), np.zeros(2)), 0.0)


def test_validated_execution_boundary_condition():
    task, e = _execution()
    assert validate_execution(task, e).ok
    for a, b in zip(e.spans, e.spans[1:]):
        nxt = task.subtasks[b.slot]
        x = task.subtasks[a.slot].dynamics(e.states[a.end], e.inputs[a.end])
        assert nxt.state_box.contains(x)
