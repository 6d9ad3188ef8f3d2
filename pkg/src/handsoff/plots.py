"""Static figures for a run: the control input and the state trajectories."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dynamics import Trajectory  # noqa: E402
from .objective import ControlSequence  # noqa: E402

# fixed metadata keeps the PNG bytes stable across reruns
_META = {"Software": None}


def control_figure(u: ControlSequence, path: Path, threshold: float = 1e-3) -> None:
    fig, ax = plt.subplots(figsize=(6, 3))
    for k in range(u.input_dim):
        ax.step(range(u.horizon), u.values[:, k], where="post", label=f"u{k}" if u.input_dim > 1 else "u")
    ax.axhline(0.0, color="0.6", lw=0.8)
    active = (abs(u.values) > threshold).any(axis=1).sum()
    ax.set_title(f"control input ({active} of {u.horizon} steps active)")
    ax.set_xlabel("step t")
    ax.set_ylabel("u_t")
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def state_figure(trajs: list[Trajectory], target, path: Path) -> None:
    n = trajs[0].states.shape[1]
    fig, axes = plt.subplots(n, 1, figsize=(6, 2.2 * n), sharex=True, squeeze=False)
    for k, ax in enumerate(axes[:, 0]):
        for traj in trajs:
            ax.plot(traj.states[:, k], lw=1.0, alpha=0.8)
        ax.axhline(target[k], color="k", ls="--", lw=0.8)
        ax.set_ylabel(["x", "y"][k] if n == 2 else f"x{k}")
    axes[-1, 0].set_xlabel("step t")
    axes[0, 0].set_title("state trajectories (dashed: target)")
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def phase_figure(trajs: list[Trajectory], x0, target, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for traj in trajs:
        ax.plot(traj.states[:, 0], traj.states[:, 1], lw=1.0, alpha=0.8)
    ax.plot(*x0[:2], "o", color="k", label="initial")
    ax.plot(*target[:2], "*", color="r", ms=12, label="target")
    ax.set_xlabel("x (angle)")
    ax.set_ylabel("y (rate)")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
