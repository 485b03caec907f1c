"""Tokenizer, span corruption, task casting, loss, and file readers."""

import math

import numpy as np
import pytest

from convseq.data import (
    BYTE_OFFSET,
    EOS_ID,
    PAD_ID,
    SENTINEL_BASE,
    VOCAB_SIZE,
    PlacementError,
    cast_classification,
    detokenize,
    example_rng,
    is_sentinel,
    parse_label,
    read_classification_tsv,
    read_corpus_lines,
    sentinel_id,
    seq_cross_entropy,
    span_corrupt,
    tokenize,
    write_classification_tsv,
)
from convseq.tensor import Tensor, check_gradients


class TestTokenizer:
    def test_empty(self):
        assert tokenize("") == []

    def test_ascii_offsets(self):
        assert tokenize("ab") == [97 + BYTE_OFFSET, 98 + BYTE_OFFSET]

    def test_round_trip_random_utf8(self, rng):
        pool = "abc XYZ 123 éü中文\U0001f600\n\t"
        for _ in range(200):
            s = "".join(rng.choice(list(pool), size=rng.integers(0, 30)))
            assert detokenize(tokenize(s)) == s

    def test_specials_never_produced(self, rng):
        for _ in range(50):
            s = "".join(chr(int(c)) for c in rng.integers(32, 0x2FFF, size=20))
            assert all(t >= BYTE_OFFSET for t in tokenize(s))

    def test_specials_render_as_placeholders(self):
        ids = [PAD_ID, EOS_ID, sentinel_id(0), sentinel_id(99)] + tokenize("x")
        assert detokenize(ids) == "[pad][eos][sentinel_0][sentinel_99]x"

    def test_vocab_partition(self):
        assert VOCAB_SIZE == BYTE_OFFSET + 256
        assert not is_sentinel(PAD_ID) and not is_sentinel(EOS_ID)
        assert is_sentinel(SENTINEL_BASE) and is_sentinel(BYTE_OFFSET - 1)
        assert not is_sentinel(BYTE_OFFSET)
        with pytest.raises(ValueError):
            sentinel_id(100)


class TestSpanCorruption:
    def test_rate_zero_is_noop(self):
        tokens = tokenize("hello world")
        ex = span_corrupt(tokens, rate=0.0, rng=np.random.default_rng(3))
        assert ex.input_ids == tokens
        assert ex.target_ids == [EOS_ID]
        assert ex.reconstruct() == tokens

    def test_hundred_tokens_gives_five_spans(self):
        tokens = list(range(BYTE_OFFSET, BYTE_OFFSET + 100))
        ex = span_corrupt(tokens, span_len=3, rate=0.15, rng=np.random.default_rng(0))
        sentinels = [t for t in ex.input_ids if is_sentinel(t)]
        assert len(sentinels) == 5
        assert len(ex.input_ids) == 100 - 15 + 5
        assert ex.reconstruct() == tokens

    def test_sentinels_strictly_increasing(self, rng):
        tokens = list(range(BYTE_OFFSET, BYTE_OFFSET + 80))
        ex = span_corrupt(tokens, rng=rng)
        sents = [t for t in ex.input_ids if is_sentinel(t)]
        assert sents == sorted(sents) and len(set(sents)) == len(sents)
        assert [t for t in ex.target_ids if is_sentinel(t)] == sents

    def test_reconstruction_over_many_seeds(self):
        tokens = tokenize("the quick brown fox jumps over the lazy dog " * 3)
        for seed in range(200):
            ex = span_corrupt(tokens, rng=np.random.default_rng(seed))
            assert ex.reconstruct() == tokens

    def test_budget_within_one_span(self, rng):
        for n in (50, 64, 100, 257):
            tokens = list(range(BYTE_OFFSET, BYTE_OFFSET + n))
            ex = span_corrupt(tokens, span_len=3, rate=0.15, rng=rng)
            masked = ex.original_len - sum(
                1 for t in ex.input_ids if not is_sentinel(t)
            )
            assert abs(masked - 0.15 * n) <= 3

    def test_determinism(self):
        tokens = tokenize("determinism check, same seed same spans " * 2)
        a = span_corrupt(tokens, rng=np.random.default_rng(42))
        b = span_corrupt(tokens, rng=np.random.default_rng(42))
        assert a == b

    def test_placement_failure_raises(self):
        tokens = list(range(BYTE_OFFSET, BYTE_OFFSET + 12))
        with pytest.raises(PlacementError):
            span_corrupt(tokens, span_len=3, rate=0.99, rng=np.random.default_rng(0),
                         max_retries=50)

    def test_too_short_input(self):
        with pytest.raises(ValueError, match="shorter than span"):
            span_corrupt([BYTE_OFFSET, BYTE_OFFSET], span_len=3)

    def test_rate_out_of_range(self):
        with pytest.raises(ValueError, match="rate"):
            span_corrupt(list(range(BYTE_OFFSET, BYTE_OFFSET + 20)), rate=1.0)

    def test_word_granularity_example(self):
        # docs-level illustration: masking the span "on the mat" leaves a
        # single sentinel in the input and yields the span as the target
        tokens = tokenize("The happy cat sat on the mat.")
        masked = tokenize("on the mat")
        start = len(tokenize("The happy cat sat "))
        ex_input = tokens[:start] + [sentinel_id(0)] + tokens[start + len(masked):]
        ex_target = [sentinel_id(0)] + masked + [EOS_ID]
        from convseq.data import SpanCorruptionExample
        ex = SpanCorruptionExample(ex_input, ex_target, len(tokens))
        assert ex.reconstruct() == tokens
        assert detokenize(ex.input_ids) == "The happy cat sat [sentinel_0]."
        assert detokenize(ex.target_ids) == "[sentinel_0]on the mat[eos]"


class TestCasting:
    def test_sentiment_example(self):
        source, target = cast_classification("sentiment", "great movie", "positive")
        assert source == tokenize("sentiment: great movie")
        assert target == tokenize("positive") + [EOS_ID]

    def test_unknown_label(self):
        with pytest.raises(ValueError, match="unknown label"):
            cast_classification("sentiment", "x", "neutral")

    def test_unknown_task(self):
        with pytest.raises(ValueError, match="unknown task"):
            cast_classification("emotion", "x", "positive")

    @pytest.mark.parametrize("task", ["sentiment", "topic"])
    def test_label_round_trip_exhaustive(self, task):
        from convseq.data import TASKS

        for label in TASKS[task]["labels"]:
            _, target = cast_classification(task, "some text", label)
            assert parse_label(task, target) == label

    def test_parse_gibberish_is_none(self):
        assert parse_label("sentiment", tokenize("maybe?") + [EOS_ID]) is None


class TestCrossEntropy:
    def test_uniform_logits_give_log_vocab(self):
        v = 7
        logits = Tensor(np.zeros((3, v)))
        loss = seq_cross_entropy(logits, [2, 5, 6])
        np.testing.assert_allclose(float(loss.data), math.log(v), atol=1e-12)

    def test_dominant_logit_drives_loss_to_zero(self):
        logits = np.full((2, 4), -50.0)
        logits[0, 1] = logits[1, 3] = 50.0
        loss = seq_cross_entropy(Tensor(logits), [1, 3])
        assert float(loss.data) < 1e-12

    def test_two_class_closed_form(self):
        # softmax([0, ln 3]) = [1/4, 3/4]; -log(3/4) = ln(4/3)
        loss = seq_cross_entropy(Tensor([[0.0, math.log(3.0)]]), [1])
        np.testing.assert_allclose(float(loss.data), math.log(4.0 / 3.0), atol=1e-12)

    def test_pad_positions_excluded_from_mean(self):
        logits = np.zeros((3, 4))
        logits[2] = [9.0, -9.0, 0.0, 0.0]  # pad row: must not matter
        loss = seq_cross_entropy(Tensor(logits), [1, 2, PAD_ID])
        np.testing.assert_allclose(float(loss.data), math.log(4.0), atol=1e-12)

    def test_all_pad_rejected(self):
        with pytest.raises(ValueError, match="all-pad"):
            seq_cross_entropy(Tensor(np.zeros((2, 4))), [PAD_ID, PAD_ID])

    def test_target_out_of_vocab(self):
        with pytest.raises(ValueError, match="vocab"):
            seq_cross_entropy(Tensor(np.zeros((1, 4))), [4])

    def test_gradient_at_uniform_is_softmax_minus_onehot(self):
        m, v = 3, 5
        logits = Tensor(np.zeros((m, v)), requires_grad=True)
        targets = [1, 4, 2]
        seq_cross_entropy(logits, targets).backward()
        expected = np.full((m, v), 1.0 / v)
        for i, t in enumerate(targets):
            expected[i, t] -= 1.0
        np.testing.assert_allclose(logits.grad, expected / m, atol=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        logits = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        targets = [5, 2, PAD_ID, 1]
        assert check_gradients(
            lambda: seq_cross_entropy(logits, targets), [logits]
        ) < 1e-4


class TestReaders:
    def test_corpus_lines_skip_blanks(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("alpha\n\nbeta\n", encoding="utf-8")
        assert list(read_corpus_lines(p)) == ["alpha", "beta"]

    def test_tsv_round_trip_with_awkward_fields(self, tmp_path):
        rows = [("plain text", "positive"),
                ("tab\there and \"quotes\"", "negative"),
                ("newline\ninside", "positive")]
        p = tmp_path / "r.tsv"
        write_classification_tsv(p, rows)
        assert list(read_classification_tsv(p)) == rows

    def test_tsv_wrong_arity(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("only one column\n", encoding="utf-8")
        with pytest.raises(ValueError, match="2 columns"):
            list(read_classification_tsv(p))

    def test_bundled_assets_load(self, corpus_ids, sentiment_rows):
        assert len(corpus_ids) > 50_000
        assert all(t >= BYTE_OFFSET for t in corpus_ids)
        labels = {label for _, label in sentiment_rows}
        assert labels == {"positive", "negative"}


class TestExampleRng:
    def test_deterministic_per_index(self):
        a = example_rng(7, 3).integers(0, 1000, size=5)
        b = example_rng(7, 3).integers(0, 1000, size=5)
        np.testing.assert_array_equal(a, b)

    def test_indices_decorrelated(self):
        a = example_rng(7, 3).integers(0, 1_000_000, size=8)
        b = example_rng(7, 4).integers(0, 1_000_000, size=8)
        assert not np.array_equal(a, b)
