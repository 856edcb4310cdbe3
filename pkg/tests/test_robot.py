import numpy as np
import pytest

from taskdecomp.errors import BootstrapFailed, ConfigInvalid
from taskdecomp.model import validate_execution
from taskdecomp.robot import (BootstrapConfig, RobotTaskConfig, bootstrap_trajectory, build_robot_task,
                              draw_bands, robot_subtask)


def test_default_config_valid():
    cfg = RobotTaskConfig()
    cfg.validate()
    assert cfg.M == 6
    assert cfg.width(3) == pytest.approx(np.pi / 3)


def test_bands_seeded_and_in_range():
    lo, hi = draw_bands(4)
    assert (lo, hi) == draw_bands(4)
    assert all(0.25 <= v <= 0.45 for v in lo) and all(0.55 <= v <= 0.85 for v in hi)


@pytest.mark.parametrize("field,value", [
    ("dt", 0.0),
    ("theta", [0.0, 1.0, 0.5, 2.0, 3.0, 4.0, 5.0]),
    ("o_min", [0.3] * 5),
    ("d1", 0.2),
    ("qdot_max", -1.0),
])
def test_invalid_config_names_field(field, value):
    cfg = RobotTaskConfig(**{field: value})
    with pytest.raises(ConfigInvalid) as info:
        cfg.validate()
    assert field in info.value.errors


def test_inverted_band_rejected():
    cfg = RobotTaskConfig()
    cfg.o_max = list(cfg.o_max)
    cfg.o_max[2] = cfg.o_min[2] - 0.01
    with pytest.raises(ConfigInvalid) as info:
        cfg.validate()
    assert "o_max" in info.value.errors


def test_config_round_trip_and_unknown_field():
    cfg = RobotTaskConfig.seeded(3)
    assert RobotTaskConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigInvalid):
        RobotTaskConfig.from_dict({**cfg.to_dict(), "mass": 1.0})


def test_build_task_layout():
    cfg = RobotTaskConfig()
    task = build_robot_task(cfg, [3, 1, 2, 6, 5, 4])
    starts = [s.state_box.lower[0] for s in task.subtasks]
    widths = [cfg.width(l) for l in (3, 1, 2, 6, 5, 4)]
    assert np.allclose(starts, np.concatenate([[0.0], np.cumsum(widths)[:-1]]))
    assert [s.label for s in task.subtasks] == [3, 1, 2, 6, 5, 4]
    sub = task.subtasks[1]
    assert sub.state_box.lower[2] == cfg.o_min[0] and sub.state_box.upper[2] == cfg.o_max[0]
    assert task.initial_state[2] == pytest.approx(task.subtasks[0].state_box.center()[2])
    with pytest.raises(ConfigInvalid):
        build_robot_task(cfg, [1, 2, 3])


def test_local_subtask_bounds():
    cfg = RobotTaskConfig()
    sub = robot_subtask(cfg, 2)
    assert sub.state_box.lower[0] == 0.0 and sub.state_box.upper[0] == pytest.approx(cfg.width(2))
    assert sub.state_box.upper[3] == pytest.approx(cfg.zdot_max(2))
    assert sub.input_box.upper[1] == pytest.approx(cfg.zddot_max(2))


@pytest.mark.parametrize("ordering", [[1, 2, 3, 4, 5, 6], [6, 5, 4, 3, 2, 1], [2, 5, 1, 3, 4, 6]])
def test_bootstrap_is_valid(ordering):
    task = build_robot_task(RobotTaskConfig(), ordering)
    e = bootstrap_trajectory(task)
    assert validate_execution(task, e).ok
    assert task.in_target(e.states[-1])
    assert [s.slot for s in e.spans] == list(range(6))


def test_bootstrap_tracks_band_centre():
    task = build_robot_task(RobotTaskConfig(), [1, 2, 3, 4, 5, 6])
    e = bootstrap_trajectory(task)
    sp = e.spans[0]
    box = task.subtasks[0].state_box
    mid = sp.start + (sp.end - sp.start) // 3
    assert e.states[mid, 2] == pytest.approx(box.center()[2], abs=1e-3)


def test_zero_width_band_fails():
    cfg = RobotTaskConfig()
    cfg.o_max = list(cfg.o_max)
    cfg.o_max[0] = cfg.o_min[0]
    task = build_robot_task(cfg, [1, 2, 3, 4, 5, 6])
    with pytest.raises(BootstrapFailed):
        bootstrap_trajectory(task)


def test_bootstrap_speed_above_bound_fails():
    task = build_robot_task(RobotTaskConfig(), [1, 2, 3, 4, 5, 6])
    with pytest.raises(BootstrapFailed):
        bootstrap_trajectory(task, BootstrapConfig(speed=4.0))
