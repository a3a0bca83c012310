"""Click-through-rate reports per engine per calendar month.

CTR = distinct clicked items / delivered items. The denominator counts
impression items (not sets), duplicates never count, and a click belongs
to its impression's month and serving engine regardless of click time.
Wilson score intervals quantify uncertainty; they stay valid for the
sub-percent rates this pipeline produces, where Wald intervals go
negative.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable

from .errors import NoImpressionsError, UnknownFormatError
from .model import ClickEvent, ImpressionRecord

TOTAL_ENGINE = "total"

REPORT_COLUMNS = ("bucket", "engine", "delivered", "clicked", "ctr", "ci_low", "ci_high")


@dataclass(frozen=True)
class CtrRow:
    """One (month, engine) cell: volume, clicks, rate, 95% bounds."""

    bucket: str
    engine: str
    delivered: int
    clicked: int
    ctr: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class CtrReport:
    rows: tuple[CtrRow, ...]

    def overall(self) -> tuple[int, int]:
        """Pooled (delivered, clicked) across all buckets' total rows."""
        delivered = sum(row.delivered for row in self.rows if row.engine == TOTAL_ENGINE)
        clicked = sum(row.clicked for row in self.rows if row.engine == TOTAL_ENGINE)
        return delivered, clicked


def ctr(clicked: int, delivered: int) -> float:
    """Exact click-through ratio; undefined when nothing was delivered."""
    if delivered == 0:
        raise NoImpressionsError("ctr is undefined with zero delivered items")
    if not 0 <= clicked <= delivered:
        raise ValueError(f"clicked must be in [0, delivered], got {clicked}/{delivered}")
    return clicked / delivered


def wilson_interval(clicked: int, delivered: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for the proportion clicked/delivered.

    The endpoints are exact at the boundaries: (0, n) yields low == 0.0
    and (n, n) yields high == 1.0.
    """
    if delivered < 1:
        raise NoImpressionsError("interval is undefined with zero delivered items")
    p = clicked / delivered
    z2 = z * z
    denom = 1.0 + z2 / delivered
    center = (p + z2 / (2.0 * delivered)) / denom
    half = z * math.sqrt(p * (1.0 - p) / delivered + z2 / (4.0 * delivered * delivered)) / denom
    low = 0.0 if clicked == 0 else max(0.0, center - half)
    high = 1.0 if clicked == delivered else min(1.0, center + half)
    return low, high


def month_bucket(record: ImpressionRecord) -> str:
    return f"{record.requested_at.year:04d}-{record.requested_at.month:02d}"


def ctr_timeseries(
    events: Iterable[ImpressionRecord | ClickEvent],
    attribution: str = "serving",
    z: float = 1.96,
) -> CtrReport:
    """Per-month, per-engine CTR rows plus a pooled "total" row per month.

    `attribution` is "serving" (what the user actually saw, the default)
    or "assigned" (intent-to-treat). Rows are ordered bucket ascending,
    engine_id ascending, "total" last within each bucket.
    """
    if attribution not in ("serving", "assigned"):
        raise ValueError(f"attribution must be 'serving' or 'assigned', got {attribution!r}")

    impressions: dict[str, ImpressionRecord] = {}
    delivered: dict[tuple[str, str], int] = {}
    clicked: dict[tuple[str, str], int] = {}
    for record in events:
        if isinstance(record, ImpressionRecord):
            impressions[record.set_id] = record
            engine = record.serving_engine if attribution == "serving" else record.assigned_engine
            key = (month_bucket(record), engine)
            delivered[key] = delivered.get(key, 0) + len(record.items)
        else:
            if record.is_duplicate:
                continue
            impression = impressions.get(record.set_id)
            if impression is None:
                continue  # click without a joined impression: not countable
            engine = (
                impression.serving_engine if attribution == "serving"
                else impression.assigned_engine
            )
            key = (month_bucket(impression), engine)
            clicked[key] = clicked.get(key, 0) + 1

    rows = []
    buckets = sorted({bucket for bucket, _ in delivered})
    for bucket in buckets:
        engines = sorted(engine for b, engine in delivered if b == bucket)
        bucket_delivered = 0
        bucket_clicked = 0
        for engine in engines:
            d = delivered[(bucket, engine)]
            c = clicked.get((bucket, engine), 0)
            bucket_delivered += d
            bucket_clicked += c
            low, high = wilson_interval(c, d, z)
            rows.append(CtrRow(bucket, engine, d, c, ctr(c, d), low, high))
        low, high = wilson_interval(bucket_clicked, bucket_delivered, z)
        rows.append(
            CtrRow(
                bucket,
                TOTAL_ENGINE,
                bucket_delivered,
                bucket_clicked,
                ctr(bucket_clicked, bucket_delivered),
                low,
                high,
            )
        )
    return CtrReport(rows=tuple(rows))


def emit_report(report: CtrReport, fmt: str) -> bytes:
    """Render a report as CSV or JSONL bytes; identical input, identical bytes.

    Rates are printed as ratios with six decimals; multiply by 100 for
    the percentage form used in prose (0.002100 -> 0.21%).
    """
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows:
            writer.writerow(
                [
                    row.bucket,
                    row.engine,
                    row.delivered,
                    row.clicked,
                    f"{row.ctr:.6f}",
                    f"{row.ci_low:.6f}",
                    f"{row.ci_high:.6f}",
                ]
            )
        return buffer.getvalue().encode("utf-8")
    if fmt == "jsonl":
        lines = [
            json.dumps(
                {
                    "bucket": row.bucket,
                    "engine": row.engine,
                    "delivered": row.delivered,
                    "clicked": row.clicked,
                    "ctr": f"{row.ctr:.6f}",
                    "ci_low": f"{row.ci_low:.6f}",
                    "ci_high": f"{row.ci_high:.6f}",
                },
                ensure_ascii=False,
                separators=(",", ":"),
            )
            for row in report.rows
        ]
        return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""
    raise UnknownFormatError(fmt)
