"""Model file format, seeded reference models and rigged variants.

Byte layout (little-endian)::

    magic        4 bytes  b"CWAM"
    version      u32      1
    n_layers, n_heads, d_model, d_ff, vocab_size, max_seq   u32 each
    eps          f32
    vocab count  u32      (== vocab_size)
    vocab        per entry: u16 length, then that many bytes; id = order
    payload      f32 row-major tensors: W_E, P, then per layer
                 gamma_attn, W_Q, W_K, W_V, W_O, gamma_mlp, W_gate, W_up,
                 W_down, b_down; then gamma_final, W_U

Reference weights are N(0, 0.02) draws from xoshiro256** in payload order;
gamma vectors are ones and b_down is zero (neither consumes random draws).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptionError, DomainError, FormatError
from .model import LayerWeights, ModelConfig, Weights, layer_shapes, tensor_shapes
from .rng import Xoshiro256
from .tokenizer import Vocabulary, default_vocab

MAGIC = b"CWAM"
VERSION = 1
INIT_STD = 0.02
_HEADER = struct.Struct("<4sI6If")


def save(weights: Weights, cfg: ModelConfig, vocab: Vocabulary, path: str | Path) -> None:
    if vocab.size != cfg.vocab_size:
        raise DomainError(f"vocabulary has {vocab.size} entries, config says {cfg.vocab_size}")
    weights.validate(cfg)
    parts = [_HEADER.pack(MAGIC, VERSION, cfg.n_layers, cfg.n_heads, cfg.d_model,
                          cfg.d_ff, cfg.vocab_size, cfg.max_seq, cfg.eps),
             struct.pack("<I", vocab.size)]
    for piece in vocab.entries:
        if len(piece) > 0xFFFF:
            raise DomainError("token longer than 65535 bytes")
        parts.append(struct.pack("<H", len(piece)) + piece)
    for _, arr in weights.tensors():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load(path: str | Path) -> tuple[Weights, ModelConfig, Vocabulary]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 4:
        raise FormatError(f"{path}: file too short for a header ({len(data)} bytes)")
    magic, version, L, H, d, f, V, max_seq, eps = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        cfg = ModelConfig(L, H, d, f, V, max_seq, float(eps))
    except DomainError as exc:
        raise FormatError(f"{path}: invalid config in header: {exc}") from exc
    off = _HEADER.size
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    if count != V:
        raise FormatError(f"{path}: vocab count {count} != vocab_size {V}")
    entries = []
    for i in range(count):
        if off + 2 > len(data):
            raise CorruptionError(f"{path}: vocabulary truncated at entry {i}", off)
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + n > len(data):
            raise CorruptionError(f"{path}: vocabulary truncated at entry {i}", off)
        entries.append(data[off:off + n])
        off += n
    vocab = Vocabulary(tuple(entries))

    arrays = {}
    for name, shape in tensor_shapes(cfg):
        nbytes = 4 * int(np.prod(shape))
        if off + nbytes > len(data):
            raise CorruptionError(
                f"{path}: payload truncated in tensor {name}: need {nbytes} bytes, "
                f"{len(data) - off} left", off)
        arrays[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4,
                                     offset=off).astype(np.float32).reshape(shape)
        off += nbytes
    if off != len(data):
        raise CorruptionError(f"{path}: {len(data) - off} trailing bytes after payload", off)
    return _assemble(arrays, cfg), cfg, vocab


def _assemble(arrays: dict, cfg: ModelConfig) -> Weights:
    layers = [LayerWeights(**{k: arrays[f"layers.{i}.{k}"] for k in LayerWeights.FIELDS})
              for i in range(cfg.n_layers)]
    return Weights(arrays["W_E"], arrays["P"], layers, arrays["gamma_final"], arrays["W_U"])


def _is_constant(name: str) -> str | None:
    leaf = name.rsplit(".", 1)[-1]
    if leaf.startswith("gamma"):
        return "ones"
    if leaf == "b_down":
        return "zeros"
    return None


def make_reference_model(seed: int, cfg: ModelConfig | None = None,
                         vocab: Vocabulary | None = None) -> tuple[Weights, ModelConfig, Vocabulary]:
    vocab = vocab or default_vocab()
    if cfg is None:
        cfg = ModelConfig(n_layers=4, n_heads=4, d_model=64, d_ff=128,
                          vocab_size=vocab.size, max_seq=128)
    if cfg.vocab_size != vocab.size:
        raise DomainError(f"config vocab_size {cfg.vocab_size} != vocabulary size {vocab.size}")
    rng = Xoshiro256(seed)
    arrays = {}
    for name, shape in tensor_shapes(cfg):
        const = _is_constant(name)
        if const == "ones":
            arrays[name] = np.ones(shape, dtype=np.float32)
        elif const == "zeros":
            arrays[name] = np.zeros(shape, dtype=np.float32)
        else:
            arrays[name] = rng.normals(int(np.prod(shape)), INIT_STD).reshape(shape)
    return _assemble(arrays, cfg), cfg, vocab


@dataclass(frozen=True)
class RigSpec:
    """Down-projection bias injected at one layer.

    ``recipe`` is ``"zero"``, ``"token"`` (``scale`` times the unit vector
    along W_U[:, token], divided elementwise by gamma_final) or ``"vector"``
    (an explicit bias).
    """

    layer: int
    recipe: str = "token"
    token: int = 1
    scale: float = 0.0
    vector: tuple[float, ...] | None = None


def rig_bias(weights: Weights, cfg: ModelConfig, spec: RigSpec) -> np.ndarray:
    if spec.recipe == "zero":
        return np.zeros(cfg.d_model, dtype=np.float32)
    if spec.recipe == "token":
        if not 0 <= spec.token < cfg.vocab_size:
            raise DomainError(f"rig token {spec.token} outside vocabulary")
        col = weights.w_u[:, spec.token].astype(np.float64)
        direction = col / np.linalg.norm(col) / weights.gamma_final.astype(np.float64)
        return (spec.scale * direction).astype(np.float32)
    if spec.recipe == "vector":
        vec = np.asarray(spec.vector, dtype=np.float32)
        if vec.shape != (cfg.d_model,):
            raise DomainError(f"rig vector must have {cfg.d_model} entries")
        return vec
    raise DomainError(f"unknown rig recipe {spec.recipe!r}")


def make_rigged_model(weights: Weights, cfg: ModelConfig, spec: RigSpec) -> Weights:
    """Copy of ``weights`` whose layer ``spec.layer`` down-projection bias is replaced."""
    if not 0 <= spec.layer < cfg.n_layers:
        raise DomainError(f"rig layer {spec.layer} outside [0, {cfg.n_layers})")
    rigged = weights.copy()
    rigged.layers[spec.layer].b_down = rig_bias(weights, cfg, spec)
    return rigged
