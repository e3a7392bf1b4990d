"""Figure rendering for harness reports.

Each report writer has a matching plot function that renders a PNG next to
the CSV. Uses the Agg backend so rendering works headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .harness import DpaBenchResult, MuSweep, PCReport, QEReport  # noqa: E402
from .store import BalanceStats  # noqa: E402

_RC = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_pc_report(report: PCReport, path: str | Path) -> Path:
    """Observed completeness vs requested confidence, with the y=x reference."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        xs = [r.confidence for r in report.rows]
        ax.plot(xs, [r.opc for r in report.rows], "o-", label="observed PC")
        ax.plot(
            xs, [r.mean_expected_pc for r in report.rows], "s--",
            label="mean expected PC",
        )
        ax.plot([0, 1], [0, 1], color="gray", lw=1, label="y = x")
        ax.set_xlabel("confidence")
        ax.set_ylabel("probability of completeness")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.legend()
        return _save(fig, path)


def plot_qe_report(report: QEReport, path: str | Path) -> Path:
    """Five-number boxes of matched/searched block ratio per confidence."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        boxes = [
            {
                "label": f"{r.confidence:g}",
                "whislo": r.minimum,
                "q1": r.q1,
                "med": r.median,
                "q3": r.q3,
                "whishi": r.maximum,
                "fliers": [],
            }
            for r in report.rows
            if r.trials
        ]
        if boxes:
            ax.bxp(boxes, showfliers=False)
        ax.set_xlabel("confidence")
        ax.set_ylabel("query efficiency (matched / searched blocks)")
        return _save(fig, path)


def plot_balance(stats: BalanceStats, path: str | Path) -> Path:
    """Per-block record counts with the overall mean."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        slots, n = stats.counts.shape
        xs = range(1, n + 1)
        for s in range(slots):
            ax.plot(xs, stats.counts[s], lw=0.8, label=f"slot {s}")
        ax.axhline(stats.mean, color="black", ls="--", lw=1, label="mean")
        ax.set_xlabel("block")
        ax.set_ylabel("records")
        ax.legend()
        return _save(fig, path)


def plot_dpa_bench(results: Sequence[DpaBenchResult], path: str | Path) -> Path:
    """Placement throughput per block count."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        xs = [str(r.n) for r in results]
        ax.bar(xs, [r.per_second for r in results])
        ax.set_xlabel("blocks per slot (n)")
        ax.set_ylabel("placement decisions / second")
        return _save(fig, path)


def plot_mu_sweep(sweep: MuSweep, path: str | Path) -> Path:
    """Existence-probability curves for each density mean."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for mu, g in sorted(sweep.curves.items()):
            ax.plot(range(1, len(g) + 1), g, lw=0.9, label=f"mu = {mu:g}")
        ax.set_xlabel("block")
        ax.set_ylabel(f"existence probability (omega = {sweep.omega})")
        ax.legend(fontsize=7)
        return _save(fig, path)
