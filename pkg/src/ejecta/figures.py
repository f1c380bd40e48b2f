"""Render branch clouds to PNG files.

Output is deterministic (fixed canvas, Agg backend, no timestamps) so
repeated runs of the reporting commands are byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .atlas import BranchCloud  # noqa: E402

_STYLE = {
    "slice_scan": dict(s=6.0, color="#1f77b4", label="slice scan"),
    "continuation": dict(s=2.5, color="#d62728", label="continuation"),
}


def render_cloud(cloud: BranchCloud, path, title: str = "") -> None:
    """Scatter the cloud: (lambda, p) for scalar problems, a 3-D view
    with lambda on the vertical axis for planar ones."""
    if cloud.dim == 1:
        fig, ax = plt.subplots(figsize=(6.4, 4.8), dpi=130)
        for prov, style in _STYLE.items():
            pts = [q for q in cloud.points if q.provenance == prov]
            if pts:
                ax.scatter([q.lam for q in pts], [q.p[0] for q in pts], **style)
        ax.set_xlabel("lambda")
        ax.set_ylabel("p")
        ax.set_xlim(*cloud.window[0])
        ax.grid(True, alpha=0.3)
        if any(q.provenance == "continuation" for q in cloud.points):
            ax.legend(loc="best")
    else:
        fig = plt.figure(figsize=(6.4, 4.8), dpi=130)
        ax = fig.add_subplot(projection="3d")
        for prov, style in _STYLE.items():
            pts = [q for q in cloud.points if q.provenance == prov]
            if pts:
                ax.scatter([q.p[0] for q in pts], [q.p[1] for q in pts],
                           [q.lam for q in pts],
                           s=style["s"], color=style["color"])
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_zlabel("lambda")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="png")
    plt.close(fig)
