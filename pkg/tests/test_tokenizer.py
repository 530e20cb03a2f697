import pytest
from hypothesis import given, settings, strategies as st

from cwa.errors import CwaError, VocabularyError
from cwa.oracles import brute_force_encode
from cwa.tokenizer import (BOS_ID, EOS_ID, Vocabulary, count_words, decode, default_vocab,
                           dump_vocab_text, encode, escape_token, fixture_subwords,
                           incremental_count, load_vocab_text, unescape_token)

VOCAB = default_vocab()
subword = st.binary(min_size=2, max_size=5)


def test_fixture_vocab_shape():
    assert VOCAB.size == 300
    assert VOCAB.entries[BOS_ID] == b"" and VOCAB.entries[EOS_ID] == b""
    assert {e for e in VOCAB.entries if len(e) == 1} == {bytes([b]) for b in range(256)}


def test_encode_examples():
    assert encode("", VOCAB) == []
    ids = encode("The dog runs", VOCAB)
    assert len(ids) == 3 and ids == brute_force_encode(b"The dog runs", VOCAB.entries)
    assert encode("QZX", VOCAB) == [VOCAB.token_id(bytes([c])) for c in b"QZX"]


def test_decode_examples():
    vocab = Vocabulary.from_subwords(fixture_subwords() + [b"Hi"])
    assert decode([], vocab) == b""
    assert decode([BOS_ID, vocab.token_id(b"Hi"), EOS_ID], vocab) == b"Hi"
    with pytest.raises(VocabularyError):
        decode([vocab.size], vocab)


@settings(max_examples=1000, deadline=None)
@given(st.binary(max_size=40))
def test_roundtrip_and_longest_match(data):
    ids = encode(data, VOCAB)
    assert decode(ids, VOCAB) == data
    assert ids == brute_force_encode(data, VOCAB.entries)
    assert all(2 <= i < VOCAB.size for i in ids)


@settings(max_examples=200, deadline=None)
@given(st.lists(subword, max_size=12, unique=True), st.binary(max_size=30))
def test_random_vocab_matches_brute_force(extra, data):
    vocab = Vocabulary.from_subwords(extra)
    assert encode(data, vocab) == brute_force_encode(data, vocab.entries)


@pytest.mark.parametrize("text,m", [("The dog runs", 3), ("The dog .", 2),
                                    ("The dog runs fast .", 4), ("", 0), ("l'amico", 2),
                                    ("well-known", 2), ("Il cane è qui", 4), (b"caf\xc3\xa9 ok", 2)])
def test_count_words_examples(text, m):
    assert count_words(text) == m


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=30), st.sampled_from([" ", "  ", " . ", "\n", ", "]))
def test_count_words_separator_invariance(text, sep):
    words = text.split()
    assert count_words(sep.join(words)) == count_words(" ".join(words))
    assert count_words(sep + text + sep) == count_words(text)


def _fragments(text, cuts):
    cuts = sorted(set(c % (len(text) + 1) for c in cuts))
    bounds = [0] + cuts + [len(text)]
    return [text[a:b] for a, b in zip(bounds, bounds[1:])]


@settings(max_examples=1000, deadline=None)
@given(st.text(max_size=30), st.lists(st.integers(0, 100), max_size=6))
def test_incremental_equals_whole(text, cuts):
    state, m = None, 0
    for frag in _fragments(text, cuts):
        state, m = incremental_count(state, frag)
    assert m == count_words(text)


def test_incremental_examples():
    state, m = incremental_count(None, "The do")
    state, m = incremental_count(state, "g runs")
    assert m == 3
    state2, m2 = incremental_count(state, "")
    assert (state2, m2) == (state, 3)
    state, m = None, 0
    for ch in "The dog .":
        state, m = incremental_count(state, ch)
    assert m == 2


@settings(max_examples=300, deadline=None)
@given(st.binary(min_size=1, max_size=8))
def test_escape_roundtrip(piece):
    line = escape_token(piece)
    assert "\n" not in line and " " not in line
    assert unescape_token(line) == piece


def test_vocab_text_roundtrip(tmp_path):
    path = tmp_path / "vocab.txt"
    dump_vocab_text(VOCAB, path)
    assert load_vocab_text(path).entries == VOCAB.entries


def test_vocab_rejects_bad_entries():
    with pytest.raises(CwaError):
        Vocabulary((b"", b"", b"x"))
    base = Vocabulary.from_subwords([b"The"]).entries
    with pytest.raises(CwaError):
        Vocabulary(base + (b"The",))
    with pytest.raises(CwaError):
        Vocabulary(base + (b"",))
    assert Vocabulary.from_subwords([b"The", b"The"]).size == 259
