"""Feature hashing, span windows, linear towers, checkpoint format."""

import functools
import json

import numpy as np
import pytest

from hierground.dataset import Mention
from hierground.encoder import (
    DEFAULT_F,
    NGRAM_SIZES,
    SPAN_CLOSE,
    SPAN_OPEN,
    WARNING_COUNTS,
    EncoderParams,
    FeatureVector,
    encode,
    event_text,
    featurize_event,
    featurize_mention,
    fnv1a64,
    hash_text,
    init_encoder,
    load_checkpoint,
    pair_score,
    reset_warning_counts,
    save_checkpoint,
    span_window,
)
from hierground.errors import DimensionMismatch, InvalidConfig, MissingLabel
from hierground.kb import Event, Label


def make_mention(context: str, start: int, end: int) -> Mention:
    return Mention(
        id="M1", language="en", context=context, span_start=start, span_end=end,
        anchor_event="E0",
    )


def ngram_counts(text: str) -> dict:
    counts: dict[str, int] = {}
    for n in NGRAM_SIZES:
        for i in range(len(text) - n + 1):
            g = text[i : i + n]
            counts[g] = counts.get(g, 0) + 1
    return counts


class TestHash:
    def test_published_fnv1a_vectors(self):
        assert fnv1a64(b"") == 0xCBF29CE484222325
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C

    def test_matches_independent_fold(self):
        def oracle(data: bytes) -> int:
            return functools.reduce(
                lambda h, b: ((h ^ b) * 0x100000001B3) % 2**64,
                data,
                0xCBF29CE484222325,
            )

        for text in ("abc", "zdarzenie", "x" * 40, "mention of a battle"):
            assert fnv1a64(text.encode()) == oracle(text.encode())

    def test_stable_across_calls(self):
        assert fnv1a64(b"stable") == fnv1a64(b"stable")


class TestHashText:
    def test_three_char_text_is_single_feature(self):
        fv = hash_text("abc", F=DEFAULT_F)
        assert fv.indices.tolist() == [fnv1a64(b"abc") % DEFAULT_F]
        assert fv.values.tolist() == [1.0]

    def test_l2_normalized(self):
        fv = hash_text("the battle of the river crossing", F=DEFAULT_F)
        assert np.isclose(np.linalg.norm(fv.values), 1.0, atol=1e-12)

    def test_counts_before_normalization(self):
        # "aaaa" has 3-grams {aaa x2}, 4-grams {aaaa x1}: two features 2:1
        fv = hash_text("aaaa", F=DEFAULT_F)
        idx3 = fnv1a64(b"aaa") % DEFAULT_F
        weights = dict(zip(fv.indices.tolist(), fv.values.tolist()))
        assert np.isclose(weights[idx3], 2 / np.sqrt(5))

    def test_too_short_text_is_zero_vector(self):
        reset_warning_counts()
        fv = hash_text("ab", F=DEFAULT_F)
        assert fv.is_zero
        assert WARNING_COUNTS["empty_feature_vector"] == 1

    def test_indices_sorted_and_in_range(self):
        fv = hash_text("some longer example text", F=1024)
        assert (np.diff(fv.indices) > 0).all()
        assert fv.indices.min() >= 0 and fv.indices.max() < 1024

    def test_deterministic(self):
        a = hash_text("an event mention", F=DEFAULT_F)
        b = hash_text("an event mention", F=DEFAULT_F)
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.values, b.values)


class TestSpanWindow:
    def test_markers_wrap_span(self):
        m = make_mention("before span after", 7, 11)
        window = span_window(m, 128)
        assert window == f"before {SPAN_OPEN}span{SPAN_CLOSE} after"

    def test_window_centered_when_context_long(self):
        context = "x" * 200 + " span " + "y" * 200
        m = make_mention(context, 201, 205)
        window = span_window(m, 40)
        assert len(window) == 40
        assert SPAN_OPEN in window and SPAN_CLOSE in window
        assert "span" in window

    def test_span_kept_when_near_edge(self):
        context = "span " + "z" * 300
        m = make_mention(context, 0, 4)
        window = span_window(m, 30)
        assert window.startswith(SPAN_OPEN + "span" + SPAN_CLOSE)
        assert len(window) == 30

    def test_zero_budget_gives_empty(self):
        m = make_mention("abc def", 0, 3)
        assert span_window(m, 0) == ""

    def test_huge_span_anchored_at_start(self):
        context = "abcdefghij" * 10
        m = make_mention(context, 5, 95)
        window = span_window(m, 20)
        assert len(window) == 20
        assert window[0] == SPAN_OPEN


class TestFeaturizeMention:
    def test_identical_mentions_identical_vectors(self):
        a = featurize_mention(make_mention("context with span here", 13, 17))
        b = featurize_mention(make_mention("context with span here", 13, 17))
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.values, b.values)

    def test_span_position_changes_only_marker_adjacent_ngrams(self):
        # inserting markers at the span boundaries leaves every context
        # n-gram intact except the ones straddling an insertion point;
        # everything else added must contain a marker character
        context = "alpha beta gamma"

        def marker_free_oracle(cuts: set) -> dict:
            counts: dict[str, int] = {}
            for n in NGRAM_SIZES:
                for i in range(len(context) - n + 1):
                    if not any(i < c < i + n for c in cuts):
                        gram = context[i : i + n]
                        counts[gram] = counts.get(gram, 0) + 1
            return counts

        for start, end in ((0, 5), (6, 10), (11, 16)):
            window = span_window(make_mention(context, start, end), 128)
            got = {
                g: c
                for g, c in ngram_counts(window).items()
                if SPAN_OPEN not in g and SPAN_CLOSE not in g
            }
            assert got == marker_free_oracle({start, end})

        w1 = span_window(make_mention(context, 0, 5), 128)
        w2 = span_window(make_mention(context, 6, 10), 128)
        assert ngram_counts(w1) != ngram_counts(w2)

    def test_truncated_to_zero_budget_is_zero_vector(self):
        reset_warning_counts()
        fv = featurize_mention(make_mention("tiny", 0, 4), max_context_chars=0)
        assert fv.is_zero
        assert WARNING_COUNTS["empty_feature_vector"] == 1


class TestFeaturizeEvent:
    def setup_method(self):
        self.event = Event(
            id="E1",
            labels={
                "en": Label(title="flood", description="river event"),
                "pl": Label(title="powodz", description="zdarzenie rzeczne"),
            },
        )

    def test_title_only_is_title_ngrams(self):
        event = Event(id="E2", labels={"en": Label(title="abc", description="")})
        fv = featurize_event(event, "en")
        assert fv.indices.tolist() == [fnv1a64(b"abc") % DEFAULT_F]

    def test_title_and_description_joined(self):
        assert event_text(self.event, "en") == "flood river event"

    def test_languages_differ(self):
        a = featurize_event(self.event, "en")
        b = featurize_event(self.event, "pl")
        assert not (
            np.array_equal(a.indices, b.indices)
            and np.array_equal(a.values, b.values)
        )

    def test_fallback_to_english(self):
        a = featurize_event(self.event, "uk")
        b = featurize_event(self.event, "en")
        assert np.array_equal(a.indices, b.indices)

    def test_missing_label_raises(self):
        event = Event(id="E3", labels={"pl": Label(title="tylko polski")})
        with pytest.raises(MissingLabel):
            featurize_event(event, "uk")

    def test_truncation_to_cand_budget(self):
        event = Event(id="E4", labels={"en": Label(title="t" * 300, description="")})
        assert event_text(event, "en", max_cand_chars=128) == "t" * 128


class TestEncode:
    def test_zero_vector_encodes_to_zero(self):
        params = init_encoder(F=64, d=8, seed=0)
        fv = FeatureVector(np.empty(0, dtype=np.int64), np.empty(0), F=64)
        assert np.array_equal(encode(params, fv, "mention"), np.zeros(8))

    def test_identity_towers_densify(self):
        eye = np.eye(6)
        params = EncoderParams(W_mention=eye.copy(), W_event=eye.copy())
        fv = FeatureVector(np.array([1, 4]), np.array([0.6, 0.8]), F=6)
        assert np.allclose(encode(params, fv, "event"), fv.densify())

    def test_linear_in_features(self):
        params = init_encoder(F=32, d=4, seed=1)
        u = hash_text("first text", F=32)
        v = hash_text("other words", F=32)
        combined = u.densify() + 2.0 * v.densify()
        idx = np.flatnonzero(combined)
        fv = FeatureVector(idx, combined[idx], F=32)
        want = encode(params, u, "mention") + 2.0 * encode(params, v, "mention")
        assert np.allclose(encode(params, fv, "mention"), want, atol=1e-12)

    def test_feature_space_mismatch(self):
        params = init_encoder(F=32, d=4, seed=0)
        fv = hash_text("words", F=64)
        with pytest.raises(DimensionMismatch):
            encode(params, fv, "mention")

    def test_unknown_tower(self):
        params = init_encoder(F=32, d=4, seed=0)
        with pytest.raises(InvalidConfig):
            encode(params, hash_text("words", F=32), "both")


class TestPairScore:
    def test_hand_value(self):
        assert pair_score(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0

    def test_orthogonal(self):
        assert pair_score(np.array([1.0, 0.0]), np.array([0.0, 5.0])) == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=6), rng.normal(size=6)
        assert pair_score(a, b) == pair_score(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            pair_score(np.zeros(3), np.zeros(4))


class TestInit:
    def test_deterministic_per_seed(self):
        a = init_encoder(F=128, d=8, seed=5)
        b = init_encoder(F=128, d=8, seed=5)
        assert np.array_equal(a.W_mention, b.W_mention)
        assert np.array_equal(a.W_event, b.W_event)

    def test_seeds_and_towers_differ(self):
        a = init_encoder(F=128, d=8, seed=5)
        c = init_encoder(F=128, d=8, seed=6)
        assert not np.array_equal(a.W_mention, c.W_mention)
        assert not np.array_equal(a.W_mention, a.W_event)

    def test_range(self):
        a = init_encoder(F=256, d=16, seed=0)
        assert np.abs(a.W_mention).max() < 0.05
        assert np.abs(a.W_event).max() < 0.05


class TestCheckpoint:
    def test_round_trip_bytes(self, tmp_path):
        params = init_encoder(F=64, d=4, seed=2)
        extras = {
            "complex.W_re": np.arange(16.0).reshape(4, 4),
            "complex.r": np.linspace(-1, 1, 4),
        }
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(p1, params, extras)
        loaded, loaded_extras = load_checkpoint(p1)
        save_checkpoint(p2, loaded, loaded_extras)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(loaded.W_mention, params.W_mention)
        assert np.array_equal(loaded_extras["complex.r"], extras["complex.r"])

    def test_header_is_json_line(self, tmp_path):
        params = init_encoder(F=16, d=2, seed=0)
        path = tmp_path / "c.bin"
        save_checkpoint(path, params)
        header = json.loads(path.read_bytes().split(b"\n", 1)[0])
        assert header["format_version"] == 1
        assert header["F"] == 16 and header["d"] == 2
        assert header["towers"] == ["mention", "event"]
        assert header["extra_heads"] == []

    def test_truncated_file_rejected(self, tmp_path):
        params = init_encoder(F=16, d=2, seed=0)
        path = tmp_path / "c.bin"
        save_checkpoint(path, params)
        clipped = tmp_path / "clipped.bin"
        clipped.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(InvalidConfig):
            load_checkpoint(clipped)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b'{"format_version": 2}\n')
        with pytest.raises(InvalidConfig):
            load_checkpoint(path)
