import struct

import numpy as np
import pytest

from cwa.errors import CorruptionError, DomainError, FormatError
from cwa.model import ModelConfig
from cwa.model_io import MAGIC, RigSpec, load, make_reference_model, make_rigged_model, save
from cwa.tokenizer import EOS_ID, Vocabulary, fixture_subwords

CFG = ModelConfig(n_layers=2, n_heads=2, d_model=8, d_ff=12, vocab_size=300, max_seq=16)


@pytest.fixture
def saved(tmp_path):
    weights, cfg, vocab = make_reference_model(4, CFG)
    path = tmp_path / "m.cwam"
    save(weights, cfg, vocab, path)
    return path, weights, cfg, vocab


def test_roundtrip_is_bit_exact(saved):
    path, weights, cfg, vocab = saved
    w2, cfg2, vocab2 = load(path)
    assert cfg2 == cfg and vocab2.entries == vocab.entries
    for (n1, a), (n2, b) in zip(weights.tensors(), w2.tensors()):
        assert n1 == n2 and a.dtype == b.dtype and a.tobytes() == b.tobytes()
    save(w2, cfg2, vocab2, path.with_suffix(".again"))
    assert path.read_bytes() == path.with_suffix(".again").read_bytes()


def test_header_layout(saved):
    path, _, cfg, _ = saved
    data = path.read_bytes()
    assert data[:4] == MAGIC == b"CWAM"
    assert struct.unpack_from("<I6I", data, 4) == (1, 2, 2, 8, 12, 300, 16)
    assert struct.unpack_from("<f", data, 32)[0] == np.float32(cfg.eps)
    assert struct.unpack_from("<I", data, 36)[0] == 300


def test_bad_magic_and_version(saved, tmp_path):
    path, *_ = saved
    data = bytearray(path.read_bytes())
    bad = tmp_path / "bad"
    bad.write_bytes(b"XXXX" + bytes(data[4:]))
    with pytest.raises(FormatError):
        load(bad)
    data[4] = 2
    bad.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="version"):
        load(bad)


def test_truncated_payload_reports_offset(saved, tmp_path):
    path, *_ = saved
    data = path.read_bytes()
    short = tmp_path / "short"
    short.write_bytes(data[:-4])
    with pytest.raises(CorruptionError) as info:
        load(short)
    assert info.value.offset is not None and "offset" in str(info.value)
    assert isinstance(info.value, FormatError)
    long = tmp_path / "long"
    long.write_bytes(data + b"\0")
    with pytest.raises(CorruptionError):
        load(long)
    with pytest.raises(CorruptionError):
        (tmp_path / "hdr").write_bytes(data[:50])
        load(tmp_path / "hdr")


def test_reference_model_init():
    weights, cfg, vocab = make_reference_model(1, CFG)
    assert vocab.size == cfg.vocab_size == 300
    assert vocab.entries[302 - 44] == fixture_subwords()[0]
    for layer in weights.layers:
        assert (layer.gamma_attn == 1).all() and (layer.gamma_mlp == 1).all()
        assert not layer.b_down.any()
    assert (weights.gamma_final == 1).all()
    big, _, _ = make_reference_model(1, ModelConfig(2, 2, 64, 128, 300, 64))
    assert abs(float(big.w_u.std()) - 0.02) < 0.001
    assert abs(float(big.w_u.mean())) < 0.001


def test_custom_vocab_sets_vocab_size():
    vocab = Vocabulary.from_subwords(fixture_subwords() + [b" extra"])
    _, cfg, v = make_reference_model(0, ModelConfig(1, 1, 4, 4, 301, 8), vocab)
    assert cfg.vocab_size == v.size == 301


def test_rigged_model_recipes():
    weights, cfg, _ = make_reference_model(2, CFG)
    zero = make_rigged_model(weights, cfg, RigSpec(1, "zero"))
    assert all(a.tobytes() == b.tobytes() for (_, a), (_, b) in zip(weights.tensors(), zero.tensors()))
    rig = make_rigged_model(weights, cfg, RigSpec(1, "token", EOS_ID, 3.0))
    col = weights.w_u[:, EOS_ID].astype(np.float64)
    np.testing.assert_allclose(rig.layers[1].b_down, 3.0 * col / np.linalg.norm(col), rtol=1e-6)
    assert not weights.layers[1].b_down.any()          # base untouched
    vec = make_rigged_model(weights, cfg, RigSpec(0, "vector", vector=tuple(range(8))))
    assert list(vec.layers[0].b_down) == list(range(8))
    with pytest.raises(DomainError):
        make_rigged_model(weights, cfg, RigSpec(2, "zero"))
    with pytest.raises(DomainError):
        make_rigged_model(weights, cfg, RigSpec(0, "vector", vector=(1.0,)))
