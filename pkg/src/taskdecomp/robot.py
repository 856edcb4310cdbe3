"""Base-rotation / end-effector-height benchmark.

The arm sweeps its base angle ``q0`` through six angular sectors.  Each sector
is a subtask whose height ``z`` must stay between a lower and an upper
obstacle.  State ``(q0, q0_dot, z, z_dot)``, input ``(q0_ddot, z_ddot)``.

Subtasks are defined in a local frame where their sector starts at angle 0; a
task ordering places them one after another along ``q0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .errors import BootstrapFailed, ConfigInvalid
from .model import (Box, Execution, LinearDynamics, Span, Subtask, Task,
                    TransitionSpec, step, validate_execution)

M_DEFAULT = 6


def quadruple_integrator(dt: float) -> LinearDynamics:
    A = np.array([[1, dt, 0, 0], [0, 1, 0, 0], [0, 0, 1, dt], [0, 0, 0, 1]], dtype=float)
    B = np.array([[0, 0], [dt, 0], [0, 0], [0, dt]], dtype=float)
    return LinearDynamics(A, B)


def draw_bands(seed: int, M: int = M_DEFAULT, lower=(0.25, 0.45), upper=(0.55, 0.85)):
    rng = np.random.default_rng(seed)
    o_min = rng.uniform(*lower, size=M)
    o_max = rng.uniform(*upper, size=M)
    return [round(float(v), 6) for v in o_min], [round(float(v), 6) for v in o_max]


@dataclass
class RobotTaskConfig:
    """Physical parameters of the benchmark.

    ``theta`` holds the cumulative sector angles ``Theta_0..Theta_M`` of the
    reference ordering; sector widths belong to the subtasks (label ``i`` has
    width ``theta[i] - theta[i-1]``) and travel with them when reordered.
    """

    dt: float = 0.01
    theta: list = field(default_factory=lambda: [i * np.pi / 3 for i in range(M_DEFAULT + 1)])
    o_min: list = field(default_factory=lambda: draw_bands(0)[0])
    o_max: list = field(default_factory=lambda: draw_bands(0)[1])
    C1: float = 1.0
    C2: float = 4.0
    d1: float = 1.0
    d2: float = 1.0
    d3: float = 2.0
    qdot_max: float = np.pi
    qddot_max: float = np.pi

    @classmethod
    def seeded(cls, band_seed: int, **kw) -> "RobotTaskConfig":
        lo, hi = draw_bands(band_seed)
        return cls(o_min=lo, o_max=hi, **kw)

    @property
    def M(self) -> int:
        return len(self.theta) - 1

    def width(self, label: int) -> float:
        return float(self.theta[label] - self.theta[label - 1])

    def zdot_max(self, label: int) -> float:
        return float(self.C1 * np.sin(np.arccos(self.o_min[label - 1] / self.d1)))

    def zddot_max(self, label: int) -> float:
        o = self.o_min[label - 1]
        return float(self.C2 * np.sin(np.arccos(o / self.d2) + o / self.d3))

    def validate(self) -> None:
        err = {}
        if not self.dt > 0:
            err["dt"] = "must be positive"
        th = np.asarray(self.theta, dtype=float)
        if th.ndim != 1 or th.size < 2:
            err["theta"] = "needs at least two cumulative angles"
        elif np.any(np.diff(th) <= 0):
            err["theta"] = "must be strictly increasing"
        M = max(th.size - 1, 0)
        for name in ("o_min", "o_max"):
            if len(getattr(self, name)) != M:
                err[name] = f"needs {M} entries, got {len(getattr(self, name))}"
        if "o_min" not in err and "o_max" not in err:
            bad = [i + 1 for i in range(M) if self.o_min[i] > self.o_max[i]]
            if bad:
                err["o_max"] = f"below o_min for subtasks {bad}"
            for name, d in (("d1", self.d1), ("d2", self.d2)):
                if d <= 0 or any(not 0 < o / d < 1 for o in self.o_min):
                    err[name] = "o_min/" + name + " must lie in (0, 1)"
            if not err:
                for i in range(1, M + 1):
                    if not self.zdot_max(i) > 0:
                        err["C1"] = "derived z_dot bound must be positive"
                    if not self.zddot_max(i) > 0:
                        err["C2"] = "derived z_ddot bound must be positive"
        if self.d3 == 0:
            err["d3"] = "must be nonzero"
        if not self.qdot_max > 0:
            err["qdot_max"] = "must be positive"
        if not self.qddot_max > 0:
            err["qddot_max"] = "must be positive"
        if err:
            raise ConfigInvalid(err)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta"] = [float(v) for v in self.theta]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RobotTaskConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigInvalid({k: "unknown field" for k in sorted(extra)})
        return cls(**d)


def robot_subtask(cfg: RobotTaskConfig, label: int) -> Subtask:
    """Subtask ``label`` in its local frame (sector from angle 0 to its width)."""
    w = cfg.width(label)
    zd, zdd = cfg.zdot_max(label), cfg.zddot_max(label)
    lo, hi = cfg.o_min[label - 1], cfg.o_max[label - 1]
    xbox = Box([0.0, -cfg.qdot_max, lo, -zd], [w, cfg.qdot_max, hi, zd])
    ubox = Box([-cfg.qddot_max, -zdd], [cfg.qddot_max, zdd])
    # next-step angle q0 + dt*q0_dot reaches the end of the sector
    trans = TransitionSpec(np.array([[-1.0, -cfg.dt, 0.0, 0.0]]), np.array([-w]), existential=True)
    return Subtask(quadruple_integrator(cfg.dt), xbox, ubox, trans, label=label)


def build_robot_task(cfg: RobotTaskConfig, ordering: Sequence[int]) -> Task:
    cfg.validate()
    ordering = [int(v) for v in ordering]
    if sorted(ordering) != list(range(1, cfg.M + 1)):
        raise ConfigInvalid({"ordering": f"must be a permutation of 1..{cfg.M}, got {ordering}"})
    subs = []
    start = 0.0
    for label in ordering:
        subs.append(robot_subtask(cfg, label).placed(np.array([start, 0.0, 0.0, 0.0])))
        start += cfg.width(label)
    first = subs[0].state_box
    x0 = np.array([0.0, 0.0, first.center()[2], 0.0])
    return Task(tuple(subs), initial_state=x0)


@dataclass
class BootstrapConfig:
    speed: float = 0.5  # cruise base velocity, rad/s
    kp: float = 100.0
    kd: float = 20.0
    handover: float = 0.5  # fraction of a sector after which the next band is tracked


def _height_reference(task: Task, slot: int, q_local: float, width: float, bc: BootstrapConfig):
    box = task.subtasks[slot].state_box
    if slot + 1 < task.M and q_local >= bc.handover * width:
        nb = task.subtasks[slot + 1].state_box
        lo, hi = max(box.lower[2], nb.lower[2]), min(box.upper[2], nb.upper[2])
        if hi <= lo:
            raise BootstrapFailed(f"bands of slots {slot} and {slot + 1} do not overlap")
        return 0.5 * (lo + hi)
    return 0.5 * (box.lower[2] + box.upper[2])


def bootstrap_trajectory(task: Task, cfg: Optional[BootstrapConfig] = None,
                         x0=None, iteration_id: int = 0, max_steps: int = 100000) -> Execution:
    """Slow, conservative first execution.

    The base accelerates to a low cruise velocity and holds it while a
    saturating PD rule on the height acceleration keeps ``z`` on the centre of
    the current band, moving to the middle of the overlap with the next band
    during the second part of each sector.
    """
    bc = cfg or BootstrapConfig()
    for slot, sub in enumerate(task.subtasks):
        if sub.state_box.upper[2] - sub.state_box.lower[2] <= 0:
            raise BootstrapFailed(f"slot {slot} has a zero-width workspace")
        if bc.speed > sub.state_box.upper[1]:
            raise BootstrapFailed(f"cruise speed exceeds the velocity bound in slot {slot}")
    x = np.asarray(task.initial_state if x0 is None else x0, dtype=float)
    slot = 0
    states, inputs, spans = [x.copy()], [], []
    start = 0
    for t in range(max_steps):
        sub = task.subtasks[slot]
        spec = task.transition_of(slot)
        if spec.halfspace_ok(x):
            if slot == task.M - 1:
                spans.append(Span(slot, start, t))
                e = Execution(np.array(states), np.array(inputs), spans, iteration_id)
                rep = validate_execution(task, e)
                if not rep.ok:
                    raise BootstrapFailed(f"bootstrap execution invalid: {rep.summary()}")
                return e
        ub = sub.input_box
        width = sub.state_box.upper[0] - sub.state_box.lower[0]
        q_local = x[0] - sub.state_box.lower[0]
        r = _height_reference(task, slot, q_local, width, bc)
        a_q = np.clip((bc.speed - x[1]) / sub.dynamics.B[1, 0], ub.lower[0], ub.upper[0])
        a_z = np.clip(bc.kp * (r - x[2]) - bc.kd * x[3], ub.lower[1], ub.upper[1])
        u = np.array([a_q, a_z])
        xn = step(sub, x, u)
        crossing = slot + 1 < task.M and spec.halfspace_ok(x)
        states.append(xn)
        inputs.append(u)
        if crossing:
            spans.append(Span(slot, start, t))
            slot += 1
            start = t + 1
        box = task.subtasks[slot].state_box
        if not box.contains(xn):
            raise BootstrapFailed(f"state left the workspace of slot {slot} at step {t + 1}: {xn}")
        x = xn
    raise BootstrapFailed(f"target not reached within {max_steps} steps")
