"""The living-lab core: request orchestration, registries, click capture.

`LivingLab` is transport-agnostic; the HTTP layer (http_api) adapts the
wire API onto these handlers, and the simulation harness calls them
in-process. The clock and rng are injectable so simulated runs are
fully deterministic.
"""

from __future__ import annotations

import hmac
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from random import Random
from typing import Callable

from . import engines as engines_mod
from .engines import EngineDescriptor, fetch_external
from .errors import (
    AuthError,
    DuplicateIdError,
    EmptyQueryError,
    ExternalEngineError,
    NoAllocationError,
    StereotypeUnconfiguredError,
    UnknownClickTargetError,
    UnknownDocError,
    UnknownImpressionError,
    ValidationError,
)
from .index import CorpusIndex, build_index, load_corpus_jsonl
from .model import (
    DEFAULT_MAX_COUNT,
    ImpressionRecord,
    Query,
    RecommendationItem,
    SetIdFactory,
    utc_now,
)
from .router import AllocationConfig, assign, next_fallback
from .store import EventStore

CLICK_PATH_TEMPLATE = "/v1/click/{set_id}/{position}"

# engine outcomes that trigger internal fallback rather than a 5xx
_ENGINE_FAILURES = (
    EmptyQueryError,
    StereotypeUnconfiguredError,
    ExternalEngineError,
    UnknownDocError,
)


@dataclass(frozen=True)
class PartnerRegistration:
    """An authenticated platform partner."""

    partner_id: str
    api_key: str
    display_name: str = ""

    def __post_init__(self):
        if not self.partner_id:
            raise ValidationError("partner_id", "partner_id must be non-empty")
        if not self.api_key:
            raise ValidationError("api_key", "api_key must be non-empty")


@dataclass(frozen=True)
class ResponseItem:
    """What a partner sees: never the target URL, never the engine."""

    position: int
    title: str
    click_url: str


@dataclass(frozen=True)
class RecommendationResponse:
    set_id: str
    items: tuple[ResponseItem, ...]
    processing_time_ms: int


class PopularityCounts:
    """Periodically refreshed snapshot of first-click tallies.

    Between refreshes the snapshot is immutable, so the most-popular
    engine stays a pure function of its inputs.
    """

    def __init__(self, store: EventStore, clock: Callable[[], datetime],
                 refresh_seconds: float = 60.0):
        self._store = store
        self._clock = clock
        self._refresh_seconds = refresh_seconds
        self._lock = threading.Lock()
        self._snapshot: dict[str, int] = {}
        self._taken_at: datetime | None = None

    def get(self) -> dict[str, int]:
        now = self._clock()
        with self._lock:
            stale = (
                self._taken_at is None
                or (now - self._taken_at).total_seconds() >= self._refresh_seconds
            )
            if stale:
                self._snapshot = self._store.click_counts()
                self._taken_at = now
            return self._snapshot


class LivingLab:
    """Routes requests to engines, logs impressions/clicks, serves admin ops."""

    def __init__(
        self,
        index: CorpusIndex,
        store: EventStore,
        admin_key: str,
        stereotype_ids: tuple[str, ...] = (),
        *,
        rng: Random | None = None,
        clock: Callable[[], datetime] = utc_now,
        popularity_refresh_seconds: float = 60.0,
    ):
        if not admin_key:
            raise ValidationError("admin_key", "admin_key must be non-empty")
        for doc_id in stereotype_ids:
            index.document(doc_id)  # raises UnknownDocError on bad config
        if len(set(stereotype_ids)) != len(stereotype_ids):
            raise ValidationError("stereotype", "stereotype list has duplicates")

        self.index = index
        self.store = store
        self.clock = clock
        self._admin_key = admin_key
        self._stereotype_ids = tuple(stereotype_ids)
        self._rng = rng if rng is not None else Random()
        self._rng_lock = threading.Lock()
        self._ids = SetIdFactory(self._rng)
        self._popularity = PopularityCounts(store, clock, popularity_refresh_seconds)

        self._registry_lock = threading.Lock()
        self._engines: dict[str, EngineDescriptor] = {}
        self._partners: dict[str, PartnerRegistration] = {}
        self._allocations: dict[str, AllocationConfig] = {}

    # -- admin registry ------------------------------------------------------

    def check_admin_key(self, presented: str) -> None:
        if not hmac.compare_digest(self._admin_key, presented or ""):
            raise AuthError("bad admin key")

    def register_engine(self, descriptor: EngineDescriptor) -> None:
        with self._registry_lock:
            if descriptor.engine_id in self._engines:
                raise DuplicateIdError(descriptor.engine_id)
            self._engines[descriptor.engine_id] = descriptor

    def register_partner(self, registration: PartnerRegistration) -> None:
        with self._registry_lock:
            if registration.partner_id in self._partners:
                raise DuplicateIdError(registration.partner_id)
            self._partners[registration.partner_id] = registration

    def set_allocation(self, config: AllocationConfig) -> None:
        """Validate against the registry and swap the partner's config atomically."""
        with self._registry_lock:
            if config.partner_id not in self._partners:
                raise ValidationError("partner_id", f"unknown partner: {config.partner_id}")
            for engine_id, _ in config.entries:
                if engine_id not in self._engines:
                    raise ValidationError("entries", f"unknown engine: {engine_id}")
            for engine_id in config.fallback_order or ():
                descriptor = self._engines.get(engine_id)
                if descriptor is None:
                    raise ValidationError("fallback_order", f"unknown engine: {engine_id}")
                if not descriptor.is_internal:
                    raise ValidationError(
                        "fallback_order", f"fallback engine must be internal: {engine_id}"
                    )
            if config.fallback_order is None:
                config = AllocationConfig(
                    partner_id=config.partner_id,
                    entries=config.entries,
                    fallback_order=self._default_fallback_order(),
                )
            self._allocations[config.partner_id] = config

    def _default_fallback_order(self) -> tuple[str, ...]:
        order = []
        for kind in ("internal_cbf", "internal_most_popular"):
            order.extend(
                sorted(e.engine_id for e in self._engines.values() if e.kind == kind)
            )
        return tuple(order)

    def engine_ids(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._engines)

    def health(self) -> dict:
        return {"status": "ok", "corpus_docs": self.index.doc_count, "engines": self.engine_ids()}

    # -- request path ----------------------------------------------------------

    def _authenticate(self, partner_id: str, api_key: str) -> PartnerRegistration:
        with self._registry_lock:
            partner = self._partners.get(partner_id)
        if partner is None or not hmac.compare_digest(partner.api_key, api_key or ""):
            raise AuthError("unknown partner or bad key")
        return partner

    def _allocation_for(self, partner_id: str) -> AllocationConfig:
        with self._registry_lock:
            config = self._allocations.get(partner_id)
        if config is None:
            raise NoAllocationError(f"no allocation configured for partner {partner_id}")
        return config

    def _invoke(self, engine_id: str, raw_title: str, k: int) -> list[RecommendationItem]:
        with self._registry_lock:
            descriptor = self._engines[engine_id]
        if descriptor.kind == "internal_cbf":
            return engines_mod.recommend_cbf(self.index, raw_title, k)
        if descriptor.kind == "internal_most_popular":
            return engines_mod.recommend_most_popular(self.index, self._popularity.get(), k)
        if descriptor.kind == "internal_stereotype":
            return engines_mod.recommend_stereotype(self.index, self._stereotype_ids, k)
        with self._rng_lock:
            request_id = self._ids.new_set_id()
        return fetch_external(descriptor, raw_title, k, request_id=request_id)

    def handle_recommend(
        self,
        partner_id: str,
        api_key: str,
        raw_title: str,
        max_count: int | None = None,
    ) -> RecommendationResponse:
        """Serve one recommendation request end to end.

        Assign an engine, invoke it, fall back internally on failure or
        an empty result, persist the impression before answering, and
        answer with click-through URLs only. If every engine comes up
        empty the response is an empty set and nothing is persisted.
        """
        started = self.clock()
        self._authenticate(partner_id, api_key)
        query = Query(
            partner_id=partner_id,
            raw_title=raw_title,
            max_count=max_count if max_count is not None else DEFAULT_MAX_COUNT,
        )
        config = self._allocation_for(partner_id)

        with self._rng_lock:
            assigned = assign(config, self._rng)

        serving = assigned
        items: list[RecommendationItem] = []
        failed: set[str] = set()
        engine_id: str | None = assigned
        while engine_id is not None:
            serving = engine_id
            try:
                items = self._invoke(engine_id, raw_title, query.max_count)
            except _ENGINE_FAILURES:
                items = []
            if items:
                break
            failed.add(engine_id)
            engine_id = next_fallback(config, failed)

        finished = self.clock()
        elapsed_ms = max(0, int((finished - started).total_seconds() * 1000))

        if not items:
            with self._rng_lock:
                set_id = self._ids.new_set_id()
            return RecommendationResponse(set_id=set_id, items=(), processing_time_ms=elapsed_ms)

        with self._rng_lock:
            set_id = self._ids.new_set_id()
        record = ImpressionRecord(
            set_id=set_id,
            partner_id=partner_id,
            assigned_engine=assigned,
            serving_engine=serving,
            fallback_occurred=serving != assigned,
            items=tuple(items),
            requested_at=started,
            latency_ms=elapsed_ms,
        )
        self.store.append_impression(record)  # StorageUnavailableError -> 503 upstream

        response_items = tuple(
            ResponseItem(
                position=item.position,
                title=item.title,
                click_url=CLICK_PATH_TEMPLATE.format(set_id=set_id, position=item.position),
            )
            for item in items
        )
        return RecommendationResponse(
            set_id=set_id, items=response_items, processing_time_ms=elapsed_ms
        )

    def handle_click(self, set_id: str, position: int) -> str:
        """Log one click and return the original target URL to redirect to.

        Duplicate clicks are logged (flagged) and still redirect. Clicks
        on unknown targets raise without touching the log.
        """
        impression = self.store.impression(set_id)
        if impression is None or not 1 <= position <= len(impression.items):
            raise UnknownClickTargetError(f"no delivered item at ({set_id!r}, {position})")
        try:
            self.store.append_click(set_id, position, self.clock())
        except UnknownImpressionError:
            raise UnknownClickTargetError(f"no delivered item at ({set_id!r}, {position})")
        return impression.items[position - 1].target_url


def build_living_lab(
    config: dict,
    *,
    rng: Random | None = None,
    clock: Callable[[], datetime] = utc_now,
    base_dir: str | Path | None = None,
) -> LivingLab:
    """Assemble a LivingLab from a startup config mapping.

    Expected keys: corpus_path, event_store_path, admin_key, and
    optionally stereotype_doc_ids, engines, partners, allocations,
    fsync, popularity_refresh_seconds. Relative paths resolve against
    `base_dir` (defaults to the current directory).
    """
    base = Path(base_dir) if base_dir is not None else Path(".")

    def _resolve(value: str) -> Path:
        path = Path(value)
        return path if path.is_absolute() else base / path

    for key in ("corpus_path", "event_store_path", "admin_key"):
        if key not in config:
            raise ValidationError(key, f"config is missing {key!r}")

    corpus = load_corpus_jsonl(_resolve(config["corpus_path"]))
    index = build_index(corpus)
    store = EventStore(_resolve(config["event_store_path"]), sync=config.get("fsync", True))
    lab = LivingLab(
        index,
        store,
        admin_key=config["admin_key"],
        stereotype_ids=tuple(config.get("stereotype_doc_ids", ())),
        rng=rng,
        clock=clock,
        popularity_refresh_seconds=config.get("popularity_refresh_seconds", 60.0),
    )
    for raw in config.get("engines", ()):
        lab.register_engine(
            EngineDescriptor(
                engine_id=raw["engine_id"],
                kind=raw["kind"],
                endpoint_url=raw.get("endpoint_url"),
                deadline_ms=raw.get("deadline_ms"),
            )
        )
    for raw in config.get("partners", ()):
        lab.register_partner(
            PartnerRegistration(
                partner_id=raw["partner_id"],
                api_key=raw["api_key"],
                display_name=raw.get("display_name", ""),
            )
        )
    for raw in config.get("allocations", ()):
        fallback = raw.get("fallback_order")
        lab.set_allocation(
            AllocationConfig(
                partner_id=raw["partner_id"],
                entries=tuple((e["engine_id"], float(e["weight"])) for e in raw["entries"]),
                fallback_order=tuple(fallback) if fallback is not None else None,
            )
        )
    return lab
