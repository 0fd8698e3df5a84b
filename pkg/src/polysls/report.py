"""Figure rendering for CLI artifacts.

Each report-producing command writes a PNG next to its delimited output.
Rendering is headless (Agg) and file-only.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .cost import SweepPoint, TracePoint
from .simulate import TrajectoryRecord


def save_trajectory_figure(traj: TrajectoryRecord, path, title: str = "") -> None:
    """States and inputs over time, one panel each."""
    n = traj.n
    t_states = range(traj.horizon + 1)
    t_inputs = range(traj.horizon)
    fig, (ax_x, ax_u) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    for i in range(n):
        ax_x.plot(t_states, traj.states[:, i], label=f"x_{i}", marker=".", ms=4)
        ax_u.plot(t_inputs, traj.inputs[:, i], label=f"u_{i}", marker=".", ms=4)
    ax_x.set_ylabel("state")
    ax_u.set_ylabel("input")
    ax_u.set_xlabel("step")
    ax_x.legend(loc="best", fontsize=8)
    ax_u.legend(loc="best", fontsize=8)
    ax_x.grid(alpha=0.3)
    ax_u.grid(alpha=0.3)
    if title:
        ax_x.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_figure(points: Sequence[SweepPoint], path, title: str = "") -> None:
    """Total cost with its state/input split along the sweep grid."""
    values = [p.value for p in points]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(values, [p.total_cost for p in points], "o-", label="total")
    ax.plot(values, [p.state_cost for p in points], "s--", label="state")
    ax.plot(values, [p.input_cost for p in points], "d--", label="input")
    slot = points[0].slot if points else ("?", "?")
    ax.set_xlabel(f"weight ({slot[0]}:{slot[1]})")
    ax.set_ylabel("expected cost")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_trace_figure(trace: Sequence[TracePoint], path, title: str = "") -> None:
    """Cost of the accepted iterate over optimizer iterations."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([p.iteration for p in trace], [p.cost for p in trace], "o-")
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost")
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
