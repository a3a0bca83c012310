"""Shared fixtures: mini corpus, lab builder, random log generator."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from random import Random

import pytest

from reclab.engines import EngineDescriptor
from reclab.gateway import LivingLab, PartnerRegistration
from reclab.index import build_index
from reclab.model import ClickEvent, Document, ImpressionRecord, RecommendationItem
from reclab.router import AllocationConfig
from reclab.store import EventStore

PARTNER_ID = "jabref-sim"
API_KEY = "partner-secret"
ADMIN_KEY = "admin-secret"


@pytest.fixture
def mini_docs() -> list[Document]:
    return [
        Document(doc_id="d1", title="gradient descent optimization", url="https://x.org/d1"),
        Document(doc_id="d2", title="stochastic gradient descent methods", url="https://x.org/d2"),
        Document(doc_id="d3", title="database query planning", url="https://x.org/d3"),
    ]


@pytest.fixture
def mini_index(mini_docs):
    return build_index(mini_docs)


def corpus_of(n: int, seed: int = 0) -> list[Document]:
    """Random small-vocabulary corpus; titles overlap so CBF always matches."""
    rng = Random(seed)
    vocab = (
        "ranking retrieval neural citation corpus metadata clustering indexing "
        "relevance feedback temporal graph embedding topic recommendation "
        "evaluation diversity sampling benchmark annotation search discovery"
    ).split()
    docs = []
    for i in range(n):
        words = rng.sample(vocab, rng.randint(4, 7))
        abstract = " ".join(rng.choice(vocab) for _ in range(rng.randint(5, 12)))
        docs.append(
            Document(
                doc_id=f"c{i:04d}",
                title=" ".join(words),
                abstract=abstract if rng.random() < 0.7 else None,
                url=f"https://corpus.example.org/c{i:04d}",
            )
        )
    return docs


def make_lab(
    tmp_path,
    docs,
    *,
    engines=None,
    entries=None,
    fallback_order=None,
    stereotype_ids=(),
    seed=7,
    clock=None,
    sync=False,
    store_name="events.jsonl",
    popularity_refresh_seconds=60.0,
) -> LivingLab:
    """One-call gateway assembly for tests; defaults to both internal baselines."""
    index = build_index(docs)
    store = EventStore(tmp_path / store_name, sync=sync)
    kwargs = {"rng": Random(seed)}
    if clock is not None:
        kwargs["clock"] = clock
    lab = LivingLab(
        index,
        store,
        admin_key=ADMIN_KEY,
        stereotype_ids=tuple(stereotype_ids),
        popularity_refresh_seconds=popularity_refresh_seconds,
        **kwargs,
    )
    lab.register_partner(PartnerRegistration(PARTNER_ID, API_KEY, "test partner"))
    if engines is None:
        engines = [
            EngineDescriptor("mdl-cbf", "internal_cbf"),
            EngineDescriptor("mdl-pop", "internal_most_popular"),
        ]
    for descriptor in engines:
        lab.register_engine(descriptor)
    if entries is None:
        entries = (("mdl-cbf", 0.75), ("mdl-pop", 0.25))
    lab.set_allocation(
        AllocationConfig(
            partner_id=PARTNER_ID,
            entries=tuple(entries),
            fallback_order=tuple(fallback_order) if fallback_order is not None else None,
        )
    )
    return lab


def ts(year=2025, month=1, day=1, hour=0, minute=0, second=0, ms=0) -> datetime:
    return datetime(year, month, day, hour, minute, second, ms * 1000, tzinfo=timezone.utc)


def make_impression(
    set_id: str,
    *,
    n_items: int = 2,
    engine: str = "mdl-cbf",
    assigned: str | None = None,
    partner: str = PARTNER_ID,
    at: datetime | None = None,
    with_origin: bool = True,
) -> ImpressionRecord:
    items = tuple(
        RecommendationItem(
            position=i,
            title=f"item {i} of {set_id}",
            target_url=f"https://articles.example.org/{set_id}/{i}",
            score=1.0 - 0.1 * i,
            origin_doc_id=f"doc-{set_id}-{i}" if with_origin else None,
        )
        for i in range(1, n_items + 1)
    )
    assigned = assigned or engine
    return ImpressionRecord(
        set_id=set_id,
        partner_id=partner,
        assigned_engine=assigned,
        serving_engine=engine,
        fallback_occurred=engine != assigned,
        items=items,
        requested_at=at or ts(),
        latency_ms=12,
    )


def random_event_log(rng: Random, n_impressions: int, engines=("mdl", "core")):
    """A synthetic, referentially intact event log spread over six months.

    Clicks include duplicates and land anywhere from minutes to months
    after their impression, so bucket attribution is genuinely exercised.
    """
    records = []
    base = ts(2024, 1, 1)
    for i in range(n_impressions):
        month = rng.randrange(6)
        at = ts(2024, month + 1, rng.randint(1, 28), rng.randrange(24), rng.randrange(60))
        assigned = rng.choice(engines)
        fallback = rng.random() < 0.1
        serving = rng.choice(engines) if fallback else assigned
        imp = ImpressionRecord(
            set_id=f"set-{i:06d}",
            partner_id=PARTNER_ID,
            assigned_engine=assigned,
            serving_engine=serving,
            fallback_occurred=fallback,
            items=tuple(
                RecommendationItem(
                    position=p,
                    title=f"synthetic item {i}/{p}",
                    target_url=f"https://articles.example.org/{i}/{p}",
                    origin_doc_id=f"doc-{rng.randrange(40):03d}" if rng.random() < 0.8 else None,
                )
                for p in range(1, rng.randint(1, 8) + 1)
            ),
            requested_at=at,
            latency_ms=rng.randrange(400),
        )
        records.append(imp)
        seen = set()
        for p in range(1, len(imp.items) + 1):
            if rng.random() < 0.004 * rng.randint(1, 50):
                delay = timedelta(minutes=rng.randrange(1, 60 * 24 * 60))
                records.append(
                    ClickEvent(
                        set_id=imp.set_id,
                        position=p,
                        clicked_at=at + delay,
                        is_duplicate=p in seen,
                    )
                )
                if p in seen or rng.random() < 0.2:
                    records.append(
                        ClickEvent(
                            set_id=imp.set_id,
                            position=p,
                            clicked_at=at + delay + timedelta(seconds=30),
                            is_duplicate=True,
                        )
                    )
                seen.add(p)
    return records
