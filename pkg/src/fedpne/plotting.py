"""Static regret plots (SVG by default) with byte-stable output."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import RunAggregate  # noqa: E402

_RC = {
    "svg.hashsalt": "fedpne",
    "svg.fonttype": "none",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


class PlotError(OSError):
    pass


def render_regret_plot(summaries: Sequence[RunAggregate], path, labels: Sequence[str] | None = None,
                       title: str | None = None) -> Path:
    """One mean line plus a shaded +-1 std band per summary."""
    if not summaries:
        raise PlotError("need at least one summary to plot")
    if labels is not None and len(labels) != len(summaries):
        raise PlotError("labels and summaries differ in length")
    path = Path(path)
    fmt = path.suffix.lstrip(".").lower() or "svg"
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        try:
            for i, s in enumerate(summaries):
                label = labels[i] if labels is not None else None
                (line,) = ax.plot(s.rounds, s.mean, lw=1.5, label=label)
                ax.fill_between(s.rounds, s.mean - s.std, s.mean + s.std,
                                color=line.get_color(), alpha=0.2, lw=0)
            ax.set_xlabel("rounds")
            ax.set_ylabel("average cumulative regret")
            if title:
                ax.set_title(title)
            if labels is not None:
                ax.legend(loc="upper left")
            fig.tight_layout()
            meta = {"Date": None} if fmt in ("svg", "pdf") else {}
            if fmt == "png":
                meta = {"Software": None}
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                fig.savefig(path, format=fmt, metadata=meta)
            except OSError as exc:
                raise PlotError(f"{path}: cannot write plot ({exc.strerror or exc})") from None
        finally:
            plt.close(fig)
    return path
