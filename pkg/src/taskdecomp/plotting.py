"""Matplotlib figures (Agg backend) written next to the CSV/JSON artifacts."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Polygon, Rectangle  # noqa: E402
import numpy as np  # noqa: E402

from .robot import build_robot_task  # noqa: E402


def _workspaces(ax, task):
    for sub in task.subtasks:
        b = sub.state_box
        ax.add_patch(Rectangle((b.lower[0], b.lower[2]), b.upper[0] - b.lower[0], b.upper[2] - b.lower[2],
                               fill=False, lw=0.8, ec="0.4"))
        ax.text(0.5 * (b.lower[0] + b.upper[0]), b.upper[2] + 0.01, str(sub.label), ha="center", fontsize=8)


def safe_set_figure(path, task, sampled, title=""):
    """Stored states in the ``(q0, z)`` plane, guard states in black."""
    fig, ax = plt.subplots(figsize=(8, 3.5))
    _workspaces(ax, task)
    for slot, sub in enumerate(task.subtasks):
        for traj in sampled.trajectories.get(sub.label, []):
            X = np.array([sub.to_global(x) for x in traj.states])
            ax.plot(X[:, 0], X[:, 2], lw=0.5, color=f"C{slot}", alpha=0.6)
            ax.plot(X[-1, 0], X[-1, 2], "k.", ms=3)
    ax.set_xlabel("q0 [rad]")
    ax.set_ylabel("z [m]")
    ax.set_title(title, fontsize=9)
    ax.autoscale_view()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def execution_figure(path, task, e, title=""):
    fig, ax = plt.subplots(figsize=(8, 3.5))
    _workspaces(ax, task)
    ax.plot(e.states[:, 0], e.states[:, 2], "C3-", lw=1.2)
    ax.set_xlabel("q0 [rad]")
    ax.set_ylabel("z [m]")
    ax.set_title(title, fontsize=9)
    ax.autoscale_view()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def timing_figure(path, records):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    idx = np.arange(len(records))
    ax.bar(idx - 0.2, [r.convex_seconds for r in records], 0.4, label="convex")
    ax.bar(idx + 0.2, [r.pointwise_seconds for r in records], 0.4, label="pointwise")
    ax.set_xticks(idx)
    ax.set_xticklabels([str(r.trial) for r in records])
    ax.set_xlabel("trial")
    ax.set_ylabel("controllability analysis [s]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def learning_figure(path, training):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    by = {}
    for idx, it, e in training.executions:
        by.setdefault(idx, []).append(e.length)
    for idx, steps in sorted(by.items()):
        ax.plot(range(len(steps)), steps, "o-", ms=3, label=" ".join(map(str, training.orderings[idx])))
    ax.set_xlabel("iteration (0 = bootstrap)")
    ax.set_ylabel("steps to target")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def experiment_figures(art, root) -> list:
    root = Path(root)
    fig_dir = root / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    s = art.scenario
    task2 = build_robot_task(s.task, art.t2)
    out = [learning_figure(fig_dir / "learning.png", art.training),
           timing_figure(fig_dir / "timing.png", art.records)]
    for name, dec in (("convex", art.convex), ("pointwise", art.pointwise)):
        flag = "" if dec.complete else " (partial)"
        out.append(safe_set_figure(fig_dir / f"safe_set_{name}.png", task2, dec.sampled,
                                   f"{name} decomposition for {art.t2}{flag}"))
        e = art.first_executions.get(name)
        if e is not None:
            out.append(execution_figure(fig_dir / f"first_execution_{name}.png", task2, e,
                                        f"first execution, {name} sets"))
    return out


def appendix_figure(path, report):
    fig, ax = plt.subplots(figsize=(5, 4.5))
    sets = report["sets"]
    names = [n for n in sets if n != "C"]
    for i, name in enumerate(names):
        V = np.asarray(sets[name]["vertices"])
        if len(V) >= 3:
            ax.add_patch(Polygon(V, closed=True, fill=True, alpha=0.25, fc=f"C{i}", ec=f"C{i}", label=name))
    C = np.asarray(sets["C"]["vertices"])
    ax.add_patch(Polygon(C, closed=True, fill=False, ls="--", ec="k", label="hull"))
    if report.get("witness") is not None:
        w = report["witness"]
        ax.plot(w[0], w[1], "r*", ms=10, label="witness")
    ax.autoscale_view()
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
