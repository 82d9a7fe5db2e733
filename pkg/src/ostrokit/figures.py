"""Optional PNG rendering of trajectories next to the CSV/report output."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .integrate import Trajectory


def _column_groups(traj: Trajectory):
    groups = []
    for prefix, title in (("q", "coordinates"), ("p", "momenta"), ("z", "controls")):
        cols = [l for l in traj.labels if l.startswith(prefix)]
        if cols:
            groups.append((title, cols))
    return groups


def _render_one(traj: Trajectory, path: Path, title: str):
    groups = _column_groups(traj)
    fig, axes = plt.subplots(
        len(groups), 1, figsize=(7.0, 2.4 * len(groups)), sharex=True, squeeze=False
    )
    for ax, (name, cols) in zip(axes[:, 0], groups):
        for label in cols:
            ax.plot(traj.times, traj.column(label), label=label, linewidth=1.0)
        ax.set_ylabel(name)
        ax.legend(loc="best", fontsize="small")
        ax.grid(True, alpha=0.3)
    axes[-1, 0].set_xlabel("t")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _render_overlay(trajectories: Mapping[str, Trajectory], path: Path, label: str):
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    for route, traj in trajectories.items():
        ax.plot(traj.times, traj.column(label), label=route, linewidth=1.0)
    ax.set_xlabel("t")
    ax.set_ylabel(label)
    ax.legend(loc="best", fontsize="small")
    ax.grid(True, alpha=0.3)
    fig.suptitle(f"{label} across routes")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_figures(
    trajectories: Mapping[str, Trajectory], outdir, problem: str
) -> list:
    """One PNG per route plus a cross-route overlay; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for route, traj in trajectories.items():
        path = outdir / f"{problem}_{route}.png"
        _render_one(traj, path, f"{problem} ({route})")
        written.append(path)
    if len(trajectories) > 1:
        shared = set.intersection(*(set(t.labels) for t in trajectories.values()))
        q_shared = sorted(l for l in shared if l.startswith("q"))
        if q_shared:
            path = outdir / f"{problem}_routes.png"
            _render_overlay(trajectories, path, q_shared[0])
            written.append(path)
    return written
