"""Figure rendering for CTR reports: delivered volume plus per-engine rates."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analytics import TOTAL_ENGINE, CtrReport

_TOTAL_COLOR = "#444444"


def render_report_figure(report: CtrReport, path: str | Path, dpi: int = 150) -> Path:
    """Render one figure: monthly delivered bars and CTR lines per engine.

    CTR lines carry their 95% interval as a shaded band. Returns the
    written path; an empty report still produces a (labelled, empty)
    figure so callers can rely on the file existing.
    """
    path = Path(path)
    buckets = sorted({row.bucket for row in report.rows})
    engines = sorted({row.engine for row in report.rows if row.engine != TOTAL_ENGINE})

    fig, ctr_ax = plt.subplots(figsize=(9, 4.5))
    volume_ax = ctr_ax.twinx()
    positions = range(len(buckets))

    totals = {row.bucket: row for row in report.rows if row.engine == TOTAL_ENGINE}
    volume_ax.bar(
        positions,
        [totals[b].delivered if b in totals else 0 for b in buckets],
        width=0.55,
        color="#c8d8e8",
        zorder=1,
        label="delivered items",
    )

    by_engine = {
        engine: {row.bucket: row for row in report.rows if row.engine == engine}
        for engine in engines + [TOTAL_ENGINE]
    }
    for engine in engines + ([TOTAL_ENGINE] if TOTAL_ENGINE in {r.engine for r in report.rows} else []):
        series = by_engine[engine]
        xs = [i for i, b in enumerate(buckets) if b in series]
        if not xs:
            continue
        rates = [series[buckets[i]].ctr * 100 for i in xs]
        lows = [series[buckets[i]].ci_low * 100 for i in xs]
        highs = [series[buckets[i]].ci_high * 100 for i in xs]
        style = dict(color=_TOTAL_COLOR, linewidth=2.2) if engine == TOTAL_ENGINE else {}
        (line,) = ctr_ax.plot(xs, rates, marker="o", markersize=4, zorder=3, label=engine, **style)
        ctr_ax.fill_between(xs, lows, highs, alpha=0.15, color=line.get_color(), zorder=2)

    ctr_ax.set_xticks(list(positions))
    ctr_ax.set_xticklabels(buckets, rotation=45, ha="right")
    ctr_ax.set_ylabel("CTR (%)")
    ctr_ax.set_ylim(bottom=0)
    volume_ax.set_ylabel("delivered recommendation items")
    volume_ax.set_ylim(bottom=0)
    ctr_ax.set_zorder(volume_ax.get_zorder() + 1)
    ctr_ax.patch.set_visible(False)

    handles, labels = ctr_ax.get_legend_handles_labels()
    bar_handles, bar_labels = volume_ax.get_legend_handles_labels()
    ctr_ax.legend(handles + bar_handles, labels + bar_labels, loc="upper right", fontsize=8)
    ctr_ax.set_title("Click-through rate and delivered volume per engine")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi, metadata={"Software": "reclab"})
    plt.close(fig)
    return path
