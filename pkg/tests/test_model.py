"""Domain type and identifier tests."""

from __future__ import annotations

import threading
from datetime import datetime, timezone
from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reclab.errors import EmptyTitleError, InvalidItemError, ValidationError
from reclab.model import (
    ClickEvent,
    Document,
    ImpressionRecord,
    Query,
    RecommendationItem,
    SetIdFactory,
    format_ts,
    is_absolute_http_url,
    normalize_title,
    parse_ts,
    truncate_to_ms,
    validate_item,
    validate_item_sequence,
)

from conftest import make_impression, ts


class TestNormalizeTitle:
    def test_collapses_runs_of_whitespace(self):
        assert normalize_title("  Deep   Learning ") == "deep learning"

    def test_empty_input_raises(self):
        with pytest.raises(EmptyTitleError):
            normalize_title("")

    def test_whitespace_only_raises(self):
        with pytest.raises(EmptyTitleError):
            normalize_title(" \t\n ")

    def test_keeps_punctuation(self):
        assert normalize_title("Graph-Based IR") == "graph-based ir"

    @given(st.text(max_size=200))
    def test_idempotent(self, text):
        try:
            once = normalize_title(text)
        except EmptyTitleError:
            return
        assert normalize_title(once) == once


class TestValidateItem:
    def test_well_formed_item_passes(self):
        validate_item(RecommendationItem(1, "Foo", "https://x.org/p1"))

    def test_empty_title_names_the_field(self):
        with pytest.raises(InvalidItemError) as exc:
            validate_item(RecommendationItem(1, "", "https://x.org/p1"))
        assert exc.value.field == "title"

    def test_non_http_scheme_names_the_field(self):
        with pytest.raises(InvalidItemError) as exc:
            validate_item(RecommendationItem(1, "Foo", "ftp://x.org/p1"))
        assert exc.value.field == "url"

    def test_relative_url_rejected(self):
        with pytest.raises(InvalidItemError):
            validate_item(RecommendationItem(1, "Foo", "/p1"))

    @pytest.mark.parametrize(
        "url,valid",
        [
            ("https://x.org/p1", True),
            ("http://x.org", True),
            ("ftp://x.org/p1", False),
            ("x.org/p1", False),
            ("https://", False),
        ],
    )
    def test_url_rule(self, url, valid):
        assert is_absolute_http_url(url) is valid

    def test_position_sequence_must_be_contiguous(self):
        items = (
            RecommendationItem(1, "a", "https://x.org/1"),
            RecommendationItem(3, "b", "https://x.org/3"),
        )
        with pytest.raises(InvalidItemError):
            validate_item_sequence(items)


class TestSetIds:
    def test_successive_ids_distinct(self):
        factory = SetIdFactory()
        assert factory.new_set_id() != factory.new_set_id()

    def test_one_million_ids_distinct(self):
        factory = SetIdFactory(Random(123))
        ids = {factory.new_set_id() for _ in range(1_000_000)}
        assert len(ids) == 1_000_000

    def test_seeded_factory_replays_the_sequence(self):
        one = SetIdFactory(Random(42))
        two = SetIdFactory(Random(42))
        assert [one.new_set_id() for _ in range(20)] == [two.new_set_id() for _ in range(20)]

    def test_concurrent_generation_stays_unique(self):
        factory = SetIdFactory(Random(7))
        buckets: list[list[str]] = [[] for _ in range(8)]

        def worker(bucket):
            for _ in range(5_000):
                bucket.append(factory.new_set_id())

        threads = [threading.Thread(target=worker, args=(b,)) for b in buckets]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        ids = [i for bucket in buckets for i in bucket]
        assert len(set(ids)) == 40_000


class TestQuery:
    def test_defaults_to_six(self):
        assert Query("p1", "Some Title").max_count == 6

    @pytest.mark.parametrize("count", [0, -1, 51])
    def test_rejects_out_of_range_count(self, count):
        with pytest.raises(ValidationError):
            Query("p1", "Some Title", max_count=count)

    def test_rejects_blank_title(self):
        with pytest.raises(EmptyTitleError):
            Query("p1", "   ")


class TestDocuments:
    def test_rejects_bad_url(self):
        with pytest.raises(ValidationError):
            Document(doc_id="d", title="T", url="gopher://x")

    def test_text_joins_title_and_abstract(self):
        doc = Document(doc_id="d", title="T", url="https://x.org", abstract="A b")
        assert doc.text == "T A b"


class TestImpressionInvariants:
    def test_delivered_count_equals_items_and_max_position(self):
        imp = make_impression("s1", n_items=4)
        assert imp.delivered_count == len(imp.items) == imp.items[-1].position == 4

    def test_serving_must_match_assigned_without_fallback(self):
        with pytest.raises(ValidationError):
            ImpressionRecord(
                set_id="s1",
                partner_id="p",
                assigned_engine="a",
                serving_engine="b",
                fallback_occurred=False,
                items=(RecommendationItem(1, "t", "https://x.org/1"),),
                requested_at=ts(),
                latency_ms=0,
            )

    def test_empty_item_list_rejected(self):
        with pytest.raises(ValidationError):
            ImpressionRecord(
                set_id="s1",
                partner_id="p",
                assigned_engine="a",
                serving_engine="a",
                items=(),
                requested_at=ts(),
                latency_ms=0,
            )

    def test_naive_timestamp_rejected(self):
        with pytest.raises(ValidationError):
            ClickEvent("s1", 1, clicked_at=datetime(2025, 1, 1))


class TestTimestamps:
    def test_format_has_millisecond_precision(self):
        assert format_ts(ts(2025, 6, 1, 12, ms=7)) == "2025-06-01T12:00:00.007Z"

    def test_parse_accepts_offset_form(self):
        assert parse_ts("2025-06-01T12:00:00.007+00:00") == ts(2025, 6, 1, 12, ms=7)

    @given(
        st.datetimes(
            min_value=datetime(2000, 1, 1),
            max_value=datetime(2100, 1, 1),
        )
    )
    @settings(max_examples=200)
    def test_round_trip_at_ms_precision(self, naive):
        aware = truncate_to_ms(naive.replace(tzinfo=timezone.utc))
        assert parse_ts(format_ts(aware)) == aware
