"""Recommendation engines: internal baselines and the remote-engine client.

Internal engines are deterministic pure functions over immutable snapshots
(index, click-count snapshot, configured list). The remote client speaks
the research-partner wire protocol and enforces a per-call deadline with
no retries; the gateway handles failures by falling back internally.
"""

from __future__ import annotations

import http.client
import json
import socket
import time
from dataclasses import dataclass
from typing import Mapping
from urllib.parse import urlsplit

from .errors import (
    DeadlineExceededError,
    EmptyQueryError,
    InvalidItemError,
    InvalidPayloadError,
    StereotypeUnconfiguredError,
    TransportError,
    ValidationError,
)
from .index import CorpusIndex, tokenize
from .model import RecommendationItem, normalize_title, validate_item

DEFAULT_DEADLINE_MS = 2000

ENGINE_KINDS = ("internal_cbf", "internal_most_popular", "internal_stereotype", "external")


@dataclass(frozen=True)
class EngineDescriptor:
    """Registry entry for one engine; external engines carry their endpoint."""

    engine_id: str
    kind: str
    endpoint_url: str | None = None
    deadline_ms: int | None = None

    def __post_init__(self):
        if not self.engine_id:
            raise ValidationError("engine_id", "engine_id must be non-empty")
        if self.kind not in ENGINE_KINDS:
            raise ValidationError("kind", f"unknown engine kind: {self.kind!r}")
        if self.kind == "external":
            if not self.endpoint_url:
                raise ValidationError("endpoint_url", "external engines need an endpoint")
            if self.deadline_ms is None:
                object.__setattr__(self, "deadline_ms", DEFAULT_DEADLINE_MS)
            if self.deadline_ms <= 0:
                raise ValidationError("deadline_ms", "deadline_ms must be positive")
        else:
            if self.endpoint_url is not None or self.deadline_ms is not None:
                raise ValidationError(
                    "endpoint_url", "internal engines take no endpoint or deadline"
                )

    @property
    def is_internal(self) -> bool:
        return self.kind != "external"


def _to_items(ranked: list[tuple[str, str, str, float | None]]) -> list[RecommendationItem]:
    return [
        RecommendationItem(
            position=rank,
            title=title,
            target_url=url,
            score=score,
            origin_doc_id=doc_id,
        )
        for rank, (doc_id, title, url, score) in enumerate(ranked, start=1)
    ]


def recommend_cbf(index: CorpusIndex, raw_title: str, k: int) -> list[RecommendationItem]:
    """Top-k corpus documents by TF-IDF cosine against the query title.

    Zero-score documents are excluded rather than padded, and a document
    whose normalized title equals the normalized query is excluded
    (self-exclusion; partner titles carry no corpus ids to match on).
    Ties break by ascending doc_id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query = normalize_title(raw_title)
    query_tokens = tokenize(query)
    if not query_tokens:
        raise EmptyQueryError(f"query tokenizes to nothing: {raw_title!r}")
    scores = index.score_all(query_tokens)
    ranked = sorted(scores.items(), key=lambda pair: (-pair[1], pair[0]))
    picked = []
    for doc_id, score in ranked:
        doc = index.doc_table[doc_id]
        if normalize_title(doc.title) == query:
            continue
        picked.append((doc_id, doc.title, doc.url, score))
        if len(picked) == k:
            break
    return _to_items(picked)


def recommend_most_popular(
    index: CorpusIndex, click_counts: Mapping[str, int], k: int
) -> list[RecommendationItem]:
    """Top-k corpus documents by historical first-click count.

    Every corpus document is a candidate; ties (including count 0) break
    by ascending doc_id, so the result is total and deterministic.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(index.doc_table, key=lambda doc_id: (-click_counts.get(doc_id, 0), doc_id))
    picked = [
        (doc_id, index.doc_table[doc_id].title, index.doc_table[doc_id].url,
         float(click_counts.get(doc_id, 0)))
        for doc_id in ranked[:k]
    ]
    return _to_items(picked)


def recommend_stereotype(
    index: CorpusIndex, stereotype_ids: tuple[str, ...], k: int
) -> list[RecommendationItem]:
    """The first min(k, len) entries of the curated list, in configured order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not stereotype_ids:
        raise StereotypeUnconfiguredError("stereotype list is empty")
    picked = []
    for doc_id in stereotype_ids[:k]:
        doc = index.document(doc_id)
        picked.append((doc_id, doc.title, doc.url, None))
    return _to_items(picked)


def external_request_body(request_id: str, query_title: str, k: int, deadline_ms: int) -> bytes:
    """Serialize one wire-protocol request."""
    return json.dumps(
        {
            "request_id": request_id,
            "query": {"title": query_title},
            "max_items": k,
            "deadline_ms": deadline_ms,
        },
        ensure_ascii=False,
    ).encode("utf-8")


def parse_external_items(body: bytes, k: int) -> list[RecommendationItem]:
    """Validate and renumber a wire-protocol response body.

    Raises InvalidPayloadError on malformed JSON, a missing/ill-typed
    items list, or any item failing validation. An empty list is fine.
    """
    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise InvalidPayloadError("body is not valid JSON")
    if not isinstance(payload, dict) or not isinstance(payload.get("items"), list):
        raise InvalidPayloadError("missing items list")

    items = []
    for position, raw in enumerate(payload["items"][:k], start=1):
        if not isinstance(raw, dict):
            raise InvalidPayloadError("item is not an object")
        title = raw.get("title")
        url = raw.get("url")
        score = raw.get("score")
        if not isinstance(title, str):
            raise InvalidPayloadError("title")
        if not isinstance(url, str):
            raise InvalidPayloadError("url")
        if score is not None and not isinstance(score, (int, float)):
            raise InvalidPayloadError("score")
        item = RecommendationItem(
            position=position,
            title=title,
            target_url=url,
            score=float(score) if score is not None else None,
        )
        try:
            validate_item(item)
        except InvalidItemError as exc:
            raise InvalidPayloadError(exc.field)
        items.append(item)
    return items


def fetch_external(
    descriptor: EngineDescriptor,
    query_title: str,
    k: int,
    deadline_ms: int | None = None,
    request_id: str = "",
) -> list[RecommendationItem]:
    """POST one recommendation request to a remote engine, never retrying.

    The deadline is enforced end-to-end at this client (the only
    measurable point): the remaining budget is re-applied as the socket
    timeout before each blocking phase, and any overrun raises
    DeadlineExceededError. Connection-level failures raise
    TransportError; unusable bodies raise InvalidPayloadError.
    """
    if descriptor.kind != "external":
        raise ValueError(f"engine {descriptor.engine_id!r} is not external")
    budget_ms = deadline_ms if deadline_ms is not None else descriptor.deadline_ms
    budget = budget_ms / 1000.0
    start = time.monotonic()

    def remaining() -> float:
        left = budget - (time.monotonic() - start)
        if left <= 0:
            raise DeadlineExceededError(
                f"engine {descriptor.engine_id}: no response within {budget_ms} ms"
            )
        return left

    parts = urlsplit(descriptor.endpoint_url)
    conn_cls = http.client.HTTPSConnection if parts.scheme == "https" else http.client.HTTPConnection
    conn = conn_cls(parts.hostname, parts.port, timeout=remaining())
    path = parts.path or "/"
    if parts.query:
        path = f"{path}?{parts.query}"
    body = external_request_body(request_id, query_title, k, budget_ms)

    try:
        try:
            conn.connect()
            conn.sock.settimeout(remaining())
            conn.request(
                "POST", path, body=body, headers={"Content-Type": "application/json"}
            )
            conn.sock.settimeout(remaining())
            response = conn.getresponse()
            conn.sock.settimeout(remaining())
            raw = response.read()
        except socket.timeout:
            raise DeadlineExceededError(
                f"engine {descriptor.engine_id}: no response within {budget_ms} ms"
            )
        except (OSError, http.client.HTTPException) as exc:
            raise TransportError(f"engine {descriptor.engine_id}: {exc}")
    finally:
        conn.close()

    remaining()  # a response that lands after the budget is still a miss
    if response.status != 200:
        raise InvalidPayloadError(f"status {response.status}")
    return parse_external_items(raw, k)
