"""Append-only persistence of impressions and clicks; the system of record.

Storage is a single JSONL file whose line format doubles as the public
export format, so the on-disk log is directly auditable. Appends are
serialized through one writer lock and acknowledged only after the line
is flushed (and fsynced when `sync` is on). A torn final line, the only
kind of damage a crash mid-write can cause, is dropped on reopen; an
acknowledged append is never lost.
"""

from __future__ import annotations

import json
import os
import threading
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    DuplicateSetIdError,
    ImportStateError,
    MalformedLineError,
    ReferentialViolationError,
    StorageUnavailableError,
    UnknownImpressionError,
)
from .model import (
    ClickEvent,
    ImpressionRecord,
    RecommendationItem,
    format_ts,
    parse_ts,
    truncate_to_ms,
)

EventRecord = ImpressionRecord | ClickEvent


def serialize_record(record: EventRecord) -> str:
    """One canonical JSON line per record (fixed key order, ms timestamps)."""
    if isinstance(record, ImpressionRecord):
        items = []
        for item in record.items:
            raw = {"position": item.position, "title": item.title, "target_url": item.target_url}
            if item.score is not None:
                raw["score"] = item.score
            if item.origin_doc_id is not None:
                raw["origin_doc_id"] = item.origin_doc_id
            items.append(raw)
        payload = {
            "type": "impression",
            "set_id": record.set_id,
            "partner_id": record.partner_id,
            "assigned_engine": record.assigned_engine,
            "serving_engine": record.serving_engine,
            "fallback_occurred": record.fallback_occurred,
            "requested_at": format_ts(record.requested_at),
            "latency_ms": record.latency_ms,
            "items": items,
        }
    else:
        payload = {
            "type": "click",
            "set_id": record.set_id,
            "position": record.position,
            "clicked_at": format_ts(record.clicked_at),
            "is_duplicate": record.is_duplicate,
        }
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":"))


def parse_record(raw: dict) -> EventRecord:
    """Inverse of serialize_record; raises KeyError/ValueError on bad shapes."""
    kind = raw["type"]
    if kind == "impression":
        items = tuple(
            RecommendationItem(
                position=entry["position"],
                title=entry["title"],
                target_url=entry["target_url"],
                score=entry.get("score"),
                origin_doc_id=entry.get("origin_doc_id"),
            )
            for entry in raw["items"]
        )
        return ImpressionRecord(
            set_id=raw["set_id"],
            partner_id=raw["partner_id"],
            assigned_engine=raw["assigned_engine"],
            serving_engine=raw["serving_engine"],
            fallback_occurred=raw["fallback_occurred"],
            requested_at=parse_ts(raw["requested_at"]),
            latency_ms=raw["latency_ms"],
            items=items,
        )
    if kind == "click":
        return ClickEvent(
            set_id=raw["set_id"],
            position=raw["position"],
            clicked_at=parse_ts(raw["clicked_at"]),
            is_duplicate=raw["is_duplicate"],
        )
    raise ValueError(f"unknown record type: {kind!r}")


def _record_ts(record: EventRecord) -> datetime:
    return record.requested_at if isinstance(record, ImpressionRecord) else record.clicked_at


def read_events(path: str | Path) -> list[EventRecord]:
    """Parse an exported log; raises MalformedLineError with the 1-based line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                raise MalformedLineError(line_number, "blank line")
            try:
                records.append(parse_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise MalformedLineError(line_number, f"{exc.__class__.__name__}: {exc}")
    return records


class EventStore:
    """Durable event log plus the in-memory indexes the gateway needs.

    `sync=True` fsyncs every append before acknowledging (the production
    write-ahead contract); `sync=False` keeps the same write path minus
    fsync for high-volume simulation runs.
    """

    def __init__(self, path: str | Path, sync: bool = True):
        self._path = Path(path)
        self._sync = sync
        self._lock = threading.RLock()
        self._records: list[EventRecord] = []
        self._impressions: dict[str, ImpressionRecord] = {}
        self._clicked: set[tuple[str, int]] = set()
        self._first_click_counts: dict[str, int] = {}
        self._recover()
        try:
            self._fh = open(self._path, "a", encoding="utf-8")
        except OSError as exc:
            raise StorageUnavailableError(f"cannot open event log {self._path}: {exc}")

    # -- lifecycle ---------------------------------------------------------

    def _recover(self) -> None:
        if not self._path.exists():
            return
        data = self._path.read_bytes()
        if not data:
            return
        complete = data
        torn = not data.endswith(b"\n")
        if torn:
            cut = data.rfind(b"\n") + 1
            complete = data[:cut]
        for line_number, line in enumerate(complete.decode("utf-8").splitlines(), start=1):
            try:
                record = parse_record(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise MalformedLineError(line_number, f"{exc.__class__.__name__}: {exc}")
            self._apply(record)
        if torn:
            # only an unacknowledged append can be torn; drop it
            with open(self._path, "r+b") as fh:
                fh.truncate(len(complete))

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def __enter__(self) -> "EventStore":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    @property
    def path(self) -> Path:
        return self._path

    # -- appends -----------------------------------------------------------

    def _apply(self, record: EventRecord) -> None:
        self._records.append(record)
        if isinstance(record, ImpressionRecord):
            self._impressions[record.set_id] = record
        else:
            key = (record.set_id, record.position)
            if not record.is_duplicate and key not in self._clicked:
                origin = self._origin_doc(record.set_id, record.position)
                if origin is not None:
                    self._first_click_counts[origin] = self._first_click_counts.get(origin, 0) + 1
            self._clicked.add(key)

    def _origin_doc(self, set_id: str, position: int) -> str | None:
        impression = self._impressions.get(set_id)
        if impression is None:
            return None
        return impression.items[position - 1].origin_doc_id

    def _write(self, record: EventRecord) -> None:
        try:
            self._fh.write(serialize_record(record) + "\n")
            self._fh.flush()
            if self._sync:
                os.fsync(self._fh.fileno())
        except (OSError, ValueError) as exc:
            raise StorageUnavailableError(f"append failed: {exc}")

    def append_impression(self, record: ImpressionRecord) -> ImpressionRecord:
        """Persist one impression; durable before this returns."""
        record = _with_ms_timestamp(record)
        with self._lock:
            if record.set_id in self._impressions:
                raise DuplicateSetIdError(record.set_id)
            self._write(record)
            self._apply(record)
        return record

    def append_click(self, set_id: str, position: int, clicked_at: datetime) -> ClickEvent:
        """Persist one click, computing is_duplicate against all prior clicks.

        Raises UnknownImpressionError if (set_id, position) does not
        reference a delivered item.
        """
        with self._lock:
            impression = self._impressions.get(set_id)
            if impression is None or not 1 <= position <= len(impression.items):
                raise UnknownImpressionError(f"no delivered item at ({set_id!r}, {position})")
            event = ClickEvent(
                set_id=set_id,
                position=position,
                clicked_at=truncate_to_ms(clicked_at),
                is_duplicate=(set_id, position) in self._clicked,
            )
            self._write(event)
            self._apply(event)
        return event

    # -- queries -----------------------------------------------------------

    def records(self) -> list[EventRecord]:
        """Snapshot of all records in append order."""
        with self._lock:
            return list(self._records)

    def impression(self, set_id: str) -> ImpressionRecord | None:
        with self._lock:
            return self._impressions.get(set_id)

    def impression_count(self) -> int:
        with self._lock:
            return len(self._impressions)

    def click_counts(self, as_of: datetime | None = None) -> dict[str, int]:
        """First-click tallies per corpus doc_id (external items excluded).

        With `as_of`, replays the log counting only clicks at or before
        that instant; without it, returns the maintained live tally.
        """
        with self._lock:
            if as_of is None:
                return dict(self._first_click_counts)
            counts: dict[str, int] = {}
            for record in self._records:
                if isinstance(record, ClickEvent) and not record.is_duplicate:
                    if record.clicked_at <= as_of:
                        origin = self._origin_doc(record.set_id, record.position)
                        if origin is not None:
                            counts[origin] = counts.get(origin, 0) + 1
            return counts

    # -- export / import ---------------------------------------------------

    def export_records(
        self, start: datetime | None = None, end: datetime | None = None
    ) -> list[EventRecord]:
        """Records in total order (timestamp, then append sequence).

        A time range selects impressions by requested_at; clicks follow
        their parent impression regardless of click time, so any exported
        slice stays referentially intact.
        """
        with self._lock:
            snapshot = list(self._records)
        if start is not None or end is not None:
            keep: set[str] = set()
            for record in snapshot:
                if isinstance(record, ImpressionRecord):
                    if (start is None or record.requested_at >= start) and (
                        end is None or record.requested_at < end
                    ):
                        keep.add(record.set_id)
            snapshot = [record for record in snapshot if record.set_id in keep]
        order = sorted(range(len(snapshot)), key=lambda i: (_record_ts(snapshot[i]), i))
        return [snapshot[i] for i in order]

    def export_bytes(self, start: datetime | None = None, end: datetime | None = None) -> bytes:
        lines = [serialize_record(record) for record in self.export_records(start, end)]
        return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""

    def export_to(
        self, path: str | Path, start: datetime | None = None, end: datetime | None = None
    ) -> int:
        """Write an export file; returns the number of records written."""
        records = self.export_records(start, end)
        data = ("\n".join(serialize_record(r) for r in records) + "\n") if records else ""
        Path(path).write_text(data, encoding="utf-8")
        return len(records)


def _with_ms_timestamp(record: ImpressionRecord) -> ImpressionRecord:
    truncated = truncate_to_ms(record.requested_at)
    if truncated == record.requested_at:
        return record
    return ImpressionRecord(
        set_id=record.set_id,
        partner_id=record.partner_id,
        assigned_engine=record.assigned_engine,
        serving_engine=record.serving_engine,
        fallback_occurred=record.fallback_occurred,
        requested_at=truncated,
        latency_ms=record.latency_ms,
        items=record.items,
    )


def import_events(source: str | Path | Iterable[str], target_path: str | Path,
                  sync: bool = True) -> EventStore:
    """Rebuild a store from an exported log; the target must be empty.

    Clicks must follow the impression they reference; a click arriving
    first raises ReferentialViolationError with its 1-based line number.
    """
    target = Path(target_path)
    if target.exists() and target.stat().st_size > 0:
        raise ImportStateError(f"import target is not empty: {target}")

    if isinstance(source, (str, Path)):
        lines: Iterator[str] = iter(Path(source).read_text(encoding="utf-8").splitlines())
    else:
        lines = iter(source)

    store = EventStore(target, sync=sync)
    try:
        for line_number, line in enumerate(lines, start=1):
            line = line.strip()
            if not line:
                raise MalformedLineError(line_number, "blank line")
            try:
                record = parse_record(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise MalformedLineError(line_number, f"{exc.__class__.__name__}: {exc}")
            if isinstance(record, ImpressionRecord):
                try:
                    store.append_impression(record)
                except DuplicateSetIdError:
                    raise ReferentialViolationError(line_number, f"duplicate set_id {record.set_id}")
            else:
                try:
                    store.append_click(record.set_id, record.position, record.clicked_at)
                except UnknownImpressionError:
                    raise ReferentialViolationError(
                        line_number, f"click precedes its impression ({record.set_id})"
                    )
    except Exception:
        store.close()
        raise
    return store
