"""reclab: a living-lab gateway for online evaluation of recommendation engines.

The library routes recommendation requests to competing engines through a
weighted A/B router, enforces a response deadline on remote engines with
internal fallback, logs every impression and click to an append-only
event store, and reports per-engine click-through rates over time. A
simulation harness reproduces the whole pipeline deterministically.
"""

from .analytics import CtrReport, CtrRow, ctr, ctr_timeseries, emit_report, wilson_interval
from .engines import (
    EngineDescriptor,
    fetch_external,
    recommend_cbf,
    recommend_most_popular,
    recommend_stereotype,
)
from .errors import RecLabError
from .gateway import LivingLab, PartnerRegistration, RecommendationResponse, build_living_lab
from .http_api import GatewayServer
from .index import CorpusIndex, build_index, load_corpus_jsonl, tokenize
from .mock_engine import MockBehavior, MockResearchEngine
from .model import (
    ClickEvent,
    Document,
    ImpressionRecord,
    Query,
    RecommendationItem,
    SetIdFactory,
    normalize_title,
    validate_item,
)
from .router import AllocationConfig, assign, next_fallback
from .simulate import SimConfig, run_simulation, synth_corpus
from .store import EventStore, import_events, read_events

__version__ = "0.1.0"

__all__ = [
    "AllocationConfig",
    "ClickEvent",
    "CorpusIndex",
    "CtrReport",
    "CtrRow",
    "Document",
    "EngineDescriptor",
    "EventStore",
    "GatewayServer",
    "ImpressionRecord",
    "LivingLab",
    "MockBehavior",
    "MockResearchEngine",
    "PartnerRegistration",
    "Query",
    "RecLabError",
    "RecommendationItem",
    "RecommendationResponse",
    "SetIdFactory",
    "SimConfig",
    "assign",
    "build_index",
    "build_living_lab",
    "ctr",
    "ctr_timeseries",
    "emit_report",
    "fetch_external",
    "import_events",
    "load_corpus_jsonl",
    "next_fallback",
    "normalize_title",
    "read_events",
    "recommend_cbf",
    "recommend_most_popular",
    "recommend_stereotype",
    "run_simulation",
    "synth_corpus",
    "tokenize",
    "validate_item",
    "wilson_interval",
]
