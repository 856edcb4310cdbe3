"""CSV/JSON writers for experiment artifacts.

JSON is written with sorted keys and ``repr`` floats so identical inputs give
byte-identical files.  Non-finite floats become ``null``.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .model import Execution, Task


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, header: list, rows: Iterable) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def execution_rows(task: Task, e: Execution):
    """One row per state: time, slot, state, applied input and controller info."""
    n, m = e.states.shape[1], task.subtasks[0].m
    slot_of = np.full(e.states.shape[0], -1)
    for sp in e.spans:
        slot_of[sp.start:sp.end + 1] = sp.slot
    log = {r["t"]: r for r in (e.log or [])}
    for t, x in enumerate(e.states):
        u = e.inputs[t] if t < e.inputs.shape[0] else np.full(m, np.nan)
        r = log.get(t, {})
        yield [t, int(slot_of[t]), *x, *u, r.get("I", ""), r.get("K", ""), r.get("s", ""),
               r.get("cost", ""), r.get("solved", "")]


EXECUTION_HEADER = ["t", "slot", "q0", "q0_dot", "z", "z_dot", "u_q0", "u_z", "I", "K", "s", "mpc_cost", "lps"]


def write_execution_csv(path, task: Task, e: Execution) -> Path:
    return write_csv(path, EXECUTION_HEADER, execution_rows(task, e))


def vertex_cloud_rows(css, slot: int):
    for (s, k) in css.keys():
        if s != slot:
            continue
        lev = css[(s, k)]
        for z, v in zip(lev.Z, lev.V):
            yield [s, css.task.subtasks[s].label, k, *z, v]


VERTEX_HEADER = ["slot", "label", "k", "q0", "q0_dot", "z", "z_dot", "cost"]


def write_vertex_clouds(directory, css, prefix: str) -> list:
    """One CSV per slot with every hull vertex (global frame)."""
    out = []
    for slot in range(css.task.M):
        out.append(write_csv(Path(directory) / f"{prefix}_slot{slot}.csv", VERTEX_HEADER,
                             vertex_cloud_rows(css, slot)))
    return out


def write_guards(path, task: Task, sss) -> Path:
    rows = []
    for slot, sub in enumerate(task.subtasks):
        for traj in sss.trajectories.get(sub.label, []):
            rows.append([slot, sub.label, traj.iteration, *sub.to_global(traj.states[-1])])
    return write_csv(path, ["slot", "label", "iteration", "q0", "q0_dot", "z", "z_dot"], rows)


def write_workspaces(path, task: Task) -> Path:
    rows = []
    for slot, sub in enumerate(task.subtasks):
        b = sub.state_box
        rows.append([slot, sub.label, b.lower[0], b.upper[0], b.lower[2], b.upper[2]])
    return write_csv(path, ["slot", "label", "q0_start", "q0_end", "z_min", "z_max"], rows)


def write_polylines(path, sets: dict) -> Path:
    """Closed boundary polylines of 2-D sets, one row per vertex."""
    rows = []
    for name in sorted(sets):
        V = sets[name]["vertices"]
        for i, v in enumerate(list(V) + list(V[:1])):
            rows.append([name, i, *v])
    return write_csv(path, ["set", "index", "x1", "x2"], rows)


@dataclass
class Manifest:
    files: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    partial: dict = field(default_factory=dict)

    def add(self, path, kind: str, root=None) -> None:
        p = Path(path)
        self.files.append({"path": str(p.relative_to(root) if root else p), "kind": kind})

    def warn(self, msg: str) -> None:
        self.warnings.append(msg)

    def write(self, directory) -> Path:
        if not self.files:
            self.warn("no artifacts were produced")
        return write_json(Path(directory) / "manifest.json",
                          {"files": sorted(self.files, key=lambda f: f["path"]),
                           "warnings": self.warnings, "partial": self.partial})


def machine_descriptor() -> dict:
    import platform
    return {"python": platform.python_version(), "machine": platform.machine(),
            "system": platform.system(), "processor": platform.processor() or "",
            "cpus": os.cpu_count()}
