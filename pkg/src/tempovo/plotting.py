"""Trajectory figures: top-down X-Z projections written to image files.

Plots are always emitted as files through the Agg backend; nothing here
opens a window. The X axis is world x (right), the Y axis world z
(forward), so a forward-driving camera moves up the page.
"""

from __future__ import annotations

import numpy as np

from .geometry import Trajectory


def save_trajectory_plot(named: list, out_path, title: str | None = None) -> None:
    """Write an X-Z projection of one or more trajectories.

    named: list of (label, Trajectory) drawn in order; the shared origin
    is marked. PNG metadata is stripped so identical inputs produce
    identical bytes.
    """
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    if not named:
        raise ValueError("nothing to plot: no trajectories given")
    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    for label, traj in named:
        if not isinstance(traj, Trajectory):
            raise TypeError(f"{label!r} is not a Trajectory")
        pos = np.stack([p.translation for p in traj.poses])
        ax.plot(pos[:, 0], pos[:, 2], linewidth=1.4, label=str(label))
    ax.scatter([0.0], [0.0], marker="s", color="black", zorder=5, label="start")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(True, linewidth=0.4, alpha=0.6)
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120, metadata={"Software": None})
    plt.close(fig)
