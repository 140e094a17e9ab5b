"""Report figures: latency CDF and repetition accounting."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import SKIP_FIELDS, MetricsReport  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}


def plot_latency_cdf(report: MetricsReport, path) -> Path:
    cdf = report.latency_cdf()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if cdf:
            xs, ys = zip(*cdf)
            ax.step(xs, ys, where="post", color="C0")
            ax.set_xscale("log")
        else:
            ax.text(0.5, 0.5, "no delivered packets", ha="center", va="center",
                    transform=ax.transAxes)
        ax.set_xlabel("latency (us)")
        ax.set_ylabel("fraction of offered packets")
        ax.set_ylim(0, 1.02)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_repetitions(report: MetricsReport, path) -> Path:
    c = report.pooled()
    labels = ["emitted"] + [f.replace("skipped_", "") for f in SKIP_FIELDS]
    values = [c.reps_emitted] + [getattr(c, f) for f in SKIP_FIELDS]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(labels, values, color=["C2"] + ["C3"] * len(SKIP_FIELDS))
        ax.set_ylabel(f"repetitions (nominal {c.reps_nominal})")
        ax.tick_params(axis="x", labelrotation=35)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def render(report: MetricsReport, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return {"latency_cdf_png": plot_latency_cdf(report, out / "latency_cdf.png"),
            "repetitions_png": plot_repetitions(report, out / "repetitions.png")}
