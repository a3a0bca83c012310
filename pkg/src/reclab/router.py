"""Weighted random assignment of requests to engines, per platform partner.

Assignment is per-request and stateless (requests carry only a title, so
user-level bucketing is impossible). The rng is injectable so simulation
runs replay the exact assignment sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from random import Random

from .errors import ValidationError


@dataclass(frozen=True)
class AllocationConfig:
    """Routing weights for one partner plus the internal fallback order.

    `fallback_order=None` asks the registry for its default order at
    registration time; an explicit empty tuple disables fallback.
    """

    partner_id: str
    entries: tuple[tuple[str, float], ...]
    fallback_order: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.partner_id:
            raise ValidationError("partner_id", "partner_id must be non-empty")
        if not self.entries:
            raise ValidationError("entries", "allocation needs at least one entry")
        seen = set()
        for engine_id, weight in self.entries:
            if engine_id in seen:
                raise ValidationError("entries", f"duplicate engine in allocation: {engine_id}")
            seen.add(engine_id)
            if weight < 0:
                raise ValidationError("weight", f"negative weight for {engine_id}: {weight}")
        if not any(weight > 0 for _, weight in self.entries):
            raise ValidationError("weight", "at least one entry must have weight > 0")
        if self.fallback_order is not None and len(set(self.fallback_order)) != len(
            self.fallback_order
        ):
            raise ValidationError("fallback_order", "fallback_order has duplicates")

    @property
    def total_weight(self) -> float:
        return sum(weight for _, weight in self.entries)


def assign(config: AllocationConfig, rng: Random) -> str:
    """Sample one engine_id with probability weight / total weight.

    Zero-weight entries are never returned; scaling all weights by a
    positive constant leaves the distribution unchanged.
    """
    point = rng.random() * config.total_weight
    last_positive = None
    for engine_id, weight in config.entries:
        if weight <= 0:
            continue
        last_positive = engine_id
        point -= weight
        if point < 0:
            return engine_id
    # float residue can leave point at ~0; the last positive entry owns it
    return last_positive


def next_fallback(config: AllocationConfig, failed_engine_ids: set[str]) -> str | None:
    """First fallback engine not yet tried; None once exhausted."""
    for engine_id in config.fallback_order or ():
        if engine_id not in failed_engine_ids:
            return engine_id
    return None
