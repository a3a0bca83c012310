"""Simulation harness: mock platform partner, click model, full-pipeline runs.

A run drives the gateway in-process (the mock research engine sits behind
a real loopback HTTP hop, so the wire protocol is exercised) and clicks
through the real click path using a Bernoulli model with optional rank
decay. Every random draw and every timestamp derives from the config, so
a seeded single-worker run reproduces its outputs byte for byte.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from random import Random

from .analytics import CtrReport, ctr_timeseries, emit_report
from .errors import ConfigError
from .gateway import LivingLab, PartnerRegistration
from .engines import EngineDescriptor
from .index import CorpusIndex, build_index, load_corpus_jsonl, tokenize
from .mock_engine import MockBehavior, MockResearchEngine
from .model import Document
from .plotting import render_report_figure
from .router import AllocationConfig
from .store import EventStore

EVENTS_FILENAME = "events.jsonl"
REPORT_FILENAME = "report.csv"
FIGURE_FILENAME = "report.png"

SIM_PARTNER_ID = "sim-partner"
SIM_PARTNER_KEY = "sim-partner-key"
SIM_ADMIN_KEY = "sim-admin-key"

_CLICK_DELAY = timedelta(seconds=30)

# default per-item click probability; the long-run average rate this kind
# of pipeline sees in production is on the order of 0.2%
DEFAULT_CLICK_PROBABILITY = 0.0021


class SimClock:
    """Injectable clock whose 'now' is set per worker thread."""

    def __init__(self, initial: datetime):
        self._initial = initial
        self._local = threading.local()

    def set(self, now: datetime) -> None:
        self._local.now = now

    def __call__(self) -> datetime:
        return getattr(self._local, "now", self._initial)


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one simulated experiment; the seed fixes every draw."""

    seed: int
    n_requests: int
    items_per_request: int = 6
    sim_months: int = 4
    start_month: str = "2025-01"
    click_probabilities: dict[str, float] = field(default_factory=dict)  # engine -> base p
    default_click_probability: float = DEFAULT_CLICK_PROBABILITY
    rank_decay: float = 1.0  # p(rank r) = base * decay**(r-1)
    mock_engine_behavior: str = "ok"
    mock_engine_latency_ms: int = 25
    corpus_docs: int = 200
    workers: int = 1
    gateway: dict | None = None

    def __post_init__(self):
        if self.n_requests < 1:
            raise ConfigError("n_requests must be positive")
        if self.items_per_request < 1:
            raise ConfigError("items_per_request must be positive")
        if self.sim_months < 1:
            raise ConfigError("sim_months must be positive")
        if not 0 < self.rank_decay <= 1:
            raise ConfigError("rank_decay must be in (0, 1]")
        for engine_id, p in self.click_probabilities.items():
            if not 0 <= p <= 1:
                raise ConfigError(f"click probability for {engine_id} must be in [0, 1]")
        if not 0 <= self.default_click_probability <= 1:
            raise ConfigError("default_click_probability must be in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        _parse_month(self.start_month)
        MockBehavior(self.mock_engine_behavior, self.mock_engine_latency_ms)

    def base_probability(self, engine_id: str) -> float:
        return self.click_probabilities.get(engine_id, self.default_click_probability)


_SIM_CONFIG_KEYS = {
    "seed",
    "n_requests",
    "items_per_request",
    "sim_months",
    "start_month",
    "click_probabilities",
    "default_click_probability",
    "rank_decay",
    "mock_engine_behavior",
    "mock_engine_latency_ms",
    "corpus_docs",
    "workers",
    "gateway",
}


def load_sim_config(path: str | Path) -> SimConfig:
    """Parse a SimConfig JSON file, rejecting unknown keys (typo safety)."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read simulation config {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("simulation config must be a JSON object")
    unknown = set(raw) - _SIM_CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown simulation config keys: {sorted(unknown)}")
    for key in ("seed", "n_requests"):
        if key not in raw:
            raise ConfigError(f"simulation config is missing {key!r}")
    try:
        return SimConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad simulation config: {exc}")


def _parse_month(text: str) -> datetime:
    try:
        parsed = datetime.strptime(text, "%Y-%m")
    except ValueError:
        raise ConfigError(f"months must look like YYYY-MM, got {text!r}")
    return parsed.replace(tzinfo=timezone.utc)


def _add_months(start: datetime, months: int) -> datetime:
    month_index = start.year * 12 + (start.month - 1) + months
    return start.replace(year=month_index // 12, month=month_index % 12 + 1)


_VOCAB = (
    "adaptive ranking evaluation retrieval neural semantic citation corpus "
    "scholarly metadata clustering indexing relevance feedback temporal graph "
    "embedding latent topic language translation summarization entity linking "
    "recommendation personalization diversity novelty coverage sampling bias "
    "offline online metrics benchmark reproducibility crowdsourcing annotation "
    "digital library search discovery filtering hybrid collaborative content"
).split()


def synth_corpus(n_docs: int, seed: int) -> list[Document]:
    """Deterministic synthetic corpus over a small shared vocabulary.

    Titles overlap heavily on purpose: any perturbed title still matches
    enough documents for the CBF engine to fill a full result set.
    """
    rng = Random(seed)
    documents = []
    for i in range(n_docs):
        title_words = rng.sample(_VOCAB, rng.randint(5, 8))
        abstract_words = [rng.choice(_VOCAB) for _ in range(rng.randint(8, 20))]
        documents.append(
            Document(
                doc_id=f"doc-{i:05d}",
                title=" ".join(title_words),
                abstract=" ".join(abstract_words),
                url=f"https://corpus.example.org/articles/{i:05d}",
            )
        )
    return documents


@dataclass(frozen=True)
class _RequestSpec:
    """Everything random about one request, drawn up front from one rng."""

    index: int
    requested_at: datetime
    title: str
    click_uniforms: tuple[float, ...]


@dataclass
class SimResult:
    events_path: Path
    report_path: Path
    figure_path: Path
    report: CtrReport
    requests_issued: int
    responses_with_items: int
    items_delivered: int
    clicks_issued: int
    fallback_impressions: int


def _default_gateway_section() -> dict:
    return {
        "engines": [
            {"engine_id": "baseline-cbf", "kind": "internal_cbf"},
            {"engine_id": "baseline-popular", "kind": "internal_most_popular"},
        ],
        "allocations": [
            {
                "partner_id": SIM_PARTNER_ID,
                "entries": [
                    {"engine_id": "baseline-cbf", "weight": 0.75},
                    {"engine_id": "baseline-popular", "weight": 0.25},
                ],
                "fallback_order": ["baseline-cbf", "baseline-popular"],
            }
        ],
    }


def _build_lab(
    sim: SimConfig, out_dir: Path, clock: SimClock, rng: Random
) -> tuple[LivingLab, MockResearchEngine | None]:
    section = dict(sim.gateway or _default_gateway_section())
    unknown = set(section) - {
        "corpus_path", "engines", "allocations", "stereotype_doc_ids", "fsync",
        "popularity_refresh_seconds",
    }
    if unknown:
        raise ConfigError(f"unknown gateway config keys: {sorted(unknown)}")

    if "corpus_path" in section:
        corpus = load_corpus_jsonl(section["corpus_path"])
    else:
        corpus = synth_corpus(sim.corpus_docs, sim.seed)
    index = build_index(corpus)
    store = EventStore(out_dir / EVENTS_FILENAME, sync=section.get("fsync", False))
    lab = LivingLab(
        index,
        store,
        admin_key=SIM_ADMIN_KEY,
        stereotype_ids=tuple(section.get("stereotype_doc_ids", ())),
        rng=rng,
        clock=clock,
        popularity_refresh_seconds=section.get("popularity_refresh_seconds", 60.0),
    )
    lab.register_partner(
        PartnerRegistration(SIM_PARTNER_ID, SIM_PARTNER_KEY, "simulated platform partner")
    )

    engines = section.get("engines", ())
    mock: MockResearchEngine | None = None
    needs_mock = any(raw.get("kind") == "external" for raw in engines)
    if needs_mock:
        behavior = MockBehavior(sim.mock_engine_behavior, sim.mock_engine_latency_ms)
        mock = MockResearchEngine(behavior).start()
    for raw in engines:
        if raw.get("kind") == "external":
            descriptor = EngineDescriptor(
                engine_id=raw["engine_id"],
                kind="external",
                endpoint_url=mock.endpoint_url,  # the mock stands in for the partner
                deadline_ms=raw.get("deadline_ms"),
            )
        else:
            descriptor = EngineDescriptor(engine_id=raw["engine_id"], kind=raw["kind"])
        lab.register_engine(descriptor)

    for raw in section.get("allocations", ()):
        fallback = raw.get("fallback_order")
        lab.set_allocation(
            AllocationConfig(
                partner_id=raw.get("partner_id", SIM_PARTNER_ID),
                entries=tuple((e["engine_id"], float(e["weight"])) for e in raw["entries"]),
                fallback_order=tuple(fallback) if fallback is not None else None,
            )
        )
    return lab, mock


def _request_specs(sim: SimConfig, index: CorpusIndex) -> list[_RequestSpec]:
    """Pre-draw the whole request tape so worker count cannot change it."""
    rng = Random(sim.seed)
    start = _parse_month(sim.start_month)
    end = _add_months(start, sim.sim_months)
    step = (end - start) / sim.n_requests
    doc_ids = index.doc_ids()

    specs = []
    for i in range(sim.n_requests):
        source = index.doc_table[doc_ids[rng.randrange(len(doc_ids))]]
        tokens = tokenize(source.title)
        if len(tokens) > 1:
            tokens.pop(rng.randrange(len(tokens)))  # perturb: self-exclusion rarely bites
        title = " ".join(tokens) if tokens else source.title
        uniforms = tuple(rng.random() for _ in range(sim.items_per_request))
        specs.append(
            _RequestSpec(
                index=i,
                requested_at=start + step * i,
                title=title,
                click_uniforms=uniforms,
            )
        )
    return specs


def run_simulation(sim: SimConfig, out_dir: str | Path) -> SimResult:
    """Execute one simulated experiment and write its artifacts.

    Writes events.jsonl (the exported log), report.csv and report.png
    under `out_dir`. Returns the report plus conservation counters.
    Outputs are byte-identical across runs with the same config at
    workers=1.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events_path = out / EVENTS_FILENAME
    if events_path.exists():
        events_path.unlink()  # a fresh run owns its output directory

    clock = SimClock(_parse_month(sim.start_month))
    gateway_rng = Random(sim.seed + 1)  # distinct stream from the request tape
    lab, mock = _build_lab(sim, out, clock, gateway_rng)

    counters_lock = threading.Lock()
    counters = {"responses_with_items": 0, "items_delivered": 0, "clicks_issued": 0,
                "fallbacks": 0}

    def run_one(spec: _RequestSpec) -> None:
        clock.set(spec.requested_at)
        response = lab.handle_recommend(
            SIM_PARTNER_ID, SIM_PARTNER_KEY, spec.title, sim.items_per_request
        )
        if not response.items:
            return
        impression = lab.store.impression(response.set_id)
        base = sim.base_probability(impression.serving_engine)
        clicks = 0
        clock.set(spec.requested_at + _CLICK_DELAY)
        for item in response.items:
            p = base * sim.rank_decay ** (item.position - 1)
            if spec.click_uniforms[item.position - 1] < p:
                lab.handle_click(response.set_id, item.position)
                clicks += 1
        with counters_lock:
            counters["responses_with_items"] += 1
            counters["items_delivered"] += len(response.items)
            counters["clicks_issued"] += clicks
            counters["fallbacks"] += 1 if impression.fallback_occurred else 0

    try:
        specs = _request_specs(sim, lab.index)
        if sim.workers == 1:
            for spec in specs:
                run_one(spec)
        else:
            with ThreadPoolExecutor(max_workers=sim.workers) as pool:
                for _ in pool.map(run_one, specs):
                    pass  # drain to re-raise the first worker error, if any
    finally:
        if mock is not None:
            mock.stop()

    report = ctr_timeseries(lab.store.records())
    export_data = lab.store.export_bytes()
    lab.store.close()
    # rewrite the log in export order so the file on disk IS the export
    events_path.write_bytes(export_data)

    report_path = out / REPORT_FILENAME
    report_path.write_bytes(emit_report(report, "csv"))
    figure_path = render_report_figure(report, out / FIGURE_FILENAME)

    return SimResult(
        events_path=events_path,
        report_path=report_path,
        figure_path=figure_path,
        report=report,
        requests_issued=len(specs),
        responses_with_items=counters["responses_with_items"],
        items_delivered=counters["items_delivered"],
        clicks_issued=counters["clicks_issued"],
        fallback_impressions=counters["fallbacks"],
    )
