"""Value objects shared by the whole pipeline: documents, queries, impressions, clicks.

Everything here is immutable once constructed and safe to share across
concurrent request handlers. Timestamps are timezone-aware UTC throughout.
"""

from __future__ import annotations

import re
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from random import Random, SystemRandom
from urllib.parse import urlsplit

from .errors import EmptyTitleError, InvalidItemError, ValidationError

DEFAULT_MAX_COUNT = 6
MAX_COUNT_CAP = 50

_WHITESPACE = re.compile(r"\s+")


def normalize_title(raw: str) -> str:
    """Canonical form of a title: lowercase, single-spaced, stripped.

    Raises EmptyTitleError if nothing is left.
    """
    normalized = _WHITESPACE.sub(" ", raw.lower()).strip()
    if not normalized:
        raise EmptyTitleError("title is empty after normalization")
    return normalized


def is_absolute_http_url(url: str) -> bool:
    """True iff `url` is an absolute http:// or https:// locator."""
    try:
        parts = urlsplit(url)
    except ValueError:
        return False
    return parts.scheme in ("http", "https") and bool(parts.netloc)


def _require_utc(name: str, ts: datetime) -> None:
    if ts.tzinfo is None or ts.utcoffset() is None:
        raise ValidationError(name, f"{name} must be timezone-aware UTC")


@dataclass(frozen=True)
class Document:
    """One recommendable corpus item with a landing URL."""

    doc_id: str
    title: str
    url: str
    abstract: str | None = None

    def __post_init__(self):
        if not self.doc_id:
            raise ValidationError("doc_id", "doc_id must be non-empty")
        try:
            normalize_title(self.title)
        except EmptyTitleError:
            raise ValidationError("title", f"document {self.doc_id!r} has an empty title")
        if not is_absolute_http_url(self.url):
            raise ValidationError("url", f"document {self.doc_id!r} needs an absolute http(s) url")

    @property
    def text(self) -> str:
        """The text used for indexing: title plus abstract when present."""
        return f"{self.title} {self.abstract}" if self.abstract else self.title


@dataclass(frozen=True)
class Query:
    """A recommendation request from a platform partner."""

    partner_id: str
    raw_title: str
    max_count: int = DEFAULT_MAX_COUNT

    def __post_init__(self):
        normalize_title(self.raw_title)  # raises EmptyTitleError
        if not 1 <= self.max_count <= MAX_COUNT_CAP:
            raise ValidationError(
                "max_count", f"max_count must be in [1, {MAX_COUNT_CAP}], got {self.max_count}"
            )


@dataclass(frozen=True)
class RecommendationItem:
    """One ranked entry of a delivered recommendation set.

    `origin_doc_id` is set only for items produced by internal engines;
    remote engines recommend items outside our corpus.
    """

    position: int
    title: str
    target_url: str
    score: float | None = None
    origin_doc_id: str | None = None

    def __post_init__(self):
        if self.position < 1:
            raise InvalidItemError("position", f"position must be >= 1, got {self.position}")


def validate_item(item: RecommendationItem) -> None:
    """Reject items that could not be displayed or resolved.

    Raises InvalidItemError naming the failing field.
    """
    try:
        normalize_title(item.title)
    except EmptyTitleError:
        raise InvalidItemError("title")
    if not is_absolute_http_url(item.target_url):
        raise InvalidItemError("url")


def validate_item_sequence(items: tuple[RecommendationItem, ...]) -> None:
    """Positions must be exactly 1..n with no gaps or duplicates."""
    positions = [item.position for item in items]
    if positions != list(range(1, len(items) + 1)):
        raise InvalidItemError("position", f"positions must be 1..{len(items)}, got {positions}")
    for item in items:
        validate_item(item)


@dataclass(frozen=True)
class ImpressionRecord:
    """One delivered recommendation set, as persisted in the event log.

    `serving_engine` differs from `assigned_engine` exactly when fallback
    occurred. Empty sets are never persisted, so `items` is never empty.
    """

    set_id: str
    partner_id: str
    assigned_engine: str
    serving_engine: str
    items: tuple[RecommendationItem, ...]
    requested_at: datetime
    latency_ms: int
    fallback_occurred: bool = False

    def __post_init__(self):
        if not self.set_id:
            raise ValidationError("set_id", "set_id must be non-empty")
        if not self.items:
            raise ValidationError("items", "impressions must contain at least one item")
        validate_item_sequence(self.items)
        if not self.fallback_occurred and self.serving_engine != self.assigned_engine:
            raise ValidationError(
                "serving_engine",
                "serving_engine differs from assigned_engine without fallback_occurred",
            )
        if self.latency_ms < 0:
            raise ValidationError("latency_ms", "latency_ms must be non-negative")
        _require_utc("requested_at", self.requested_at)

    @property
    def delivered_count(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class ClickEvent:
    """A user click on one delivered item, joined by (set_id, position)."""

    set_id: str
    position: int
    clicked_at: datetime
    is_duplicate: bool = False

    def __post_init__(self):
        if self.position < 1:
            raise ValidationError("position", "position must be >= 1")
        _require_utc("clicked_at", self.clicked_at)


class SetIdFactory:
    """Thread-safe generator of opaque recommendation-set identifiers.

    Backed by SystemRandom in production; pass a seeded `random.Random`
    to replay the exact id sequence in simulation runs. Ids carry 122
    bits of entropy (UUID4 layout), so collisions are negligible.
    """

    def __init__(self, rng: Random | None = None):
        self._rng = rng if rng is not None else SystemRandom()
        self._lock = threading.Lock()

    def new_set_id(self) -> str:
        with self._lock:
            bits = self._rng.getrandbits(128)
        return str(uuid.UUID(int=bits, version=4))


def utc_now() -> datetime:
    """Current wall-clock time as an aware UTC datetime."""
    return datetime.now(timezone.utc)


def truncate_to_ms(ts: datetime) -> datetime:
    """Drop sub-millisecond precision and pin the zone to UTC."""
    ts = ts.astimezone(timezone.utc)
    return ts.replace(microsecond=(ts.microsecond // 1000) * 1000)


def format_ts(ts: datetime) -> str:
    """ISO-8601 UTC with millisecond precision, e.g. 2025-06-01T12:00:00.000Z."""
    ts = ts.astimezone(timezone.utc)
    return ts.strftime("%Y-%m-%dT%H:%M:%S") + f".{ts.microsecond // 1000:03d}Z"


def parse_ts(text: str) -> datetime:
    """Inverse of format_ts; also accepts +00:00 style offsets."""
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp lacks timezone: {text!r}")
    return ts.astimezone(timezone.utc)
