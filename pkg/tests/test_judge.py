import statistics

import pytest
from hypothesis import given, settings, strategies as st

from cwa.errors import DomainError
from cwa.judge import (Outcome, classify, descriptive_stats, iqr_outliers, judge_generation,
                       judge_tokens, mae, quantile, step_sign)
from cwa.model import DecodeParams, GenerationRecord
from cwa.oracles import brute_force_signs, sort_interpolate_quantile
from cwa.tokenizer import EOS_ID, Vocabulary, default_vocab, encode

VOCAB = default_vocab()


@pytest.mark.parametrize("m,eos,n,sign", [(3, False, 3, 1), (4, False, 3, -1), (2, True, 3, -1),
                                          (3, True, 3, 1), (0, False, 0, 1), (5, True, 3, -1)])
def test_step_sign_table(m, eos, n, sign):
    assert step_sign(m, eos, n) == sign


def test_formula_variant_for_eos():
    assert step_sign(2, True, 3, eos_rule=False) == 1
    assert step_sign(4, True, 3, eos_rule=False) == -1


def _judge(text, n):
    ids = encode(text, VOCAB) + [EOS_ID]
    record = GenerationRecord([0], ids, [None] * len(ids), DecodeParams())
    return ids, *judge_generation(record, n, VOCAB)


def test_worked_example_success():
    ids, verdicts, outcome = _judge("The dog runs", 3)
    assert outcome is Outcome.SUCCESS and all(v.sign == 1 for v in verdicts)
    assert [v.words for v in verdicts] == [1, 2, 3, 3]


def test_worked_example_too_short():
    ids, verdicts, outcome = _judge("The dog .", 3)
    assert outcome is Outcome.TOO_SHORT
    assert [v.sign for v in verdicts[:-1]] == [1] * (len(ids) - 1)
    assert verdicts[-1].is_eos and verdicts[-1].sign == -1 and verdicts[-1].words == 2


def test_worked_example_too_long():
    ids, verdicts, outcome = _judge("The dog runs fast .", 3)
    assert outcome is Outcome.TOO_LONG
    # The | dog | runs | fast | ' ' | . | EOS
    assert [v.sign for v in verdicts] == [1, 1, 1, -1, -1, -1, -1]
    dot = verdicts[-2]
    assert dot.words == 4


def test_punctuation_step_keeps_sign():
    ids, verdicts, _ = _judge("The dog runs.", 3)
    assert verdicts[3].words == 3 and verdicts[3].sign == 1


def test_truncated_and_empty():
    ids = encode("The dog", VOCAB)
    verdicts, outcome = judge_tokens(ids, 2, VOCAB)
    assert outcome is Outcome.TRUNCATED and len(verdicts) == len(ids)
    assert classify(2, False, 2) is Outcome.TRUNCATED
    with pytest.raises(DomainError):
        judge_generation(GenerationRecord([0], [], [], DecodeParams()), 3, VOCAB)
    with pytest.raises(DomainError):
        judge_tokens([2], -1, VOCAB)


@st.composite
def synthetic_records(draw):
    extra = draw(st.lists(st.binary(min_size=2, max_size=4).filter(lambda b: b != b""),
                          max_size=10, unique=True))
    # bias toward letters, spaces, punctuation and multi-byte characters
    extra += [b" a", b"ab", b" \xc3", b"\xa8 ", b"-x", "è".encode()]
    vocab = Vocabulary.from_subwords(extra)
    body = draw(st.lists(st.integers(2, vocab.size - 1), max_size=25))
    if draw(st.booleans()):
        body.append(EOS_ID)
    return vocab, body, draw(st.integers(0, 9))


@settings(max_examples=1000, deadline=None)
@given(synthetic_records())
def test_signs_match_full_prefix_oracle(case):
    vocab, ids, n = case
    if not ids:
        return
    verdicts, outcome = judge_tokens(ids, n, vocab)
    assert [v.sign for v in verdicts] == brute_force_signs(ids, vocab.entries, n)
    words = [v.words for v in verdicts]
    assert words == sorted(words)
    non_eos_over = [v.sign for v in verdicts if not v.is_eos and v.words > n]
    assert all(s == -1 for s in non_eos_over)
    if outcome is Outcome.SUCCESS:
        assert all(v.sign == 1 for v in verdicts)
    if verdicts[-1].is_eos and all(v.sign == 1 for v in verdicts):
        assert outcome is Outcome.SUCCESS


def test_mae_examples():
    assert mae([0, 0, 0]) == 0.0
    assert mae([-1, 1, 0, 2]) == 1.0
    assert mae([0, 0, -1, 1]) == 0.5
    with pytest.raises(DomainError):
        mae([])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(-20, 20), min_size=1, max_size=30))
def test_mae_zero_iff_all_zero(errors):
    assert (mae(errors) == 0) == all(e == 0 for e in errors)


def test_descriptive_stats_examples():
    s = descriptive_stats([5])
    assert (s.avg, s.std, s.min, s.q25, s.q50, s.q75, s.max) == (5, 0, 5, 5, 5, 5, 5)
    assert descriptive_stats([1, 2, 3, 4]).q50 == 2.5
    table = [-1] * 53 + [1] * 11 + [0] * 536
    s = descriptive_stats(table)
    assert s.avg == pytest.approx(-0.07, abs=1e-12)
    assert f"{s.std:.2f}" == "0.32"
    assert (s.min, s.q25, s.q50, s.q75, s.max) == (-1, 0, 0, 0, 1)
    with pytest.raises(DomainError):
        descriptive_stats([])


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40),
       st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]))
def test_quantile_matches_sort_and_interpolate(values, q):
    assert quantile(values, q) == pytest.approx(sort_interpolate_quantile(values, q),
                                                rel=1e-12, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=1, max_size=40))
def test_stats_ordering_and_std(values):
    s = descriptive_stats(values)
    assert s.min <= s.q25 <= s.q50 <= s.q75 <= s.max
    assert s.std == pytest.approx(statistics.pstdev(values), abs=1e-9)


def test_iqr_outliers():
    assert iqr_outliers([1, 2, 3, 4, 100]) == [100]
    assert iqr_outliers([]) == []
    assert iqr_outliers([0, 0, 0, 0]) == []
