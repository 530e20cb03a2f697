"""Instrumented pre-norm decoder-only transformer.

Each block computes::

    h_mid = h + sum_h attn_head_h(rmsnorm(h, gamma_attn))
    h'    = h_mid + ff(rmsnorm(h_mid, gamma_mlp))

and the logits are ``rmsnorm(h_L, gamma_final) @ W_U``. ``forward`` recomputes
the whole prefix; ``generate`` keeps a key/value cache whose results are
bit-identical to that recompute because every reduction runs in a fixed order.
Both record, for the last position, each component's additive write into the
residual stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import CapacityError, DimensionError, DomainError, VocabularyError
from .rng import Xoshiro256
from .tokenizer import EOS_ID


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    d_model: int
    d_ff: int
    vocab_size: int
    max_seq: int
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "vocab_size", "max_seq"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise DomainError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not self.eps >= 0:
            raise DomainError(f"eps must be >= 0, got {self.eps}")
        # the model file stores eps as f32; keep the in-memory value identical
        object.__setattr__(self, "eps", float(np.float32(self.eps)))

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class LayerWeights:
    gamma_attn: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    gamma_mlp: np.ndarray
    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray
    b_down: np.ndarray

    FIELDS = ("gamma_attn", "w_q", "w_k", "w_v", "w_o",
              "gamma_mlp", "w_gate", "w_up", "w_down", "b_down")

    def copy(self) -> "LayerWeights":
        return LayerWeights(**{k: getattr(self, k).copy() for k in self.FIELDS})


def layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    return {
        "gamma_attn": (d,), "w_q": (d, d), "w_k": (d, d), "w_v": (d, d), "w_o": (d, d),
        "gamma_mlp": (d,), "w_gate": (d, f), "w_up": (d, f), "w_down": (f, d), "b_down": (d,),
    }


@dataclass
class Weights:
    w_e: np.ndarray
    pos: np.ndarray
    layers: list[LayerWeights]
    gamma_final: np.ndarray
    w_u: np.ndarray

    def tensors(self):
        """(name, array) pairs in the canonical serialisation order."""
        yield "W_E", self.w_e
        yield "P", self.pos
        for i, layer in enumerate(self.layers):
            for name in LayerWeights.FIELDS:
                yield f"layers.{i}.{name}", getattr(layer, name)
        yield "gamma_final", self.gamma_final
        yield "W_U", self.w_u

    def copy(self) -> "Weights":
        return Weights(self.w_e.copy(), self.pos.copy(), [l.copy() for l in self.layers],
                       self.gamma_final.copy(), self.w_u.copy())

    def validate(self, cfg: ModelConfig) -> None:
        expected = dict(tensor_shapes(cfg))
        for name, arr in self.tensors():
            if name not in expected:
                raise DimensionError(f"unexpected tensor {name}")
            if arr.shape != expected[name]:
                raise DimensionError(f"{name}: shape {arr.shape}, expected {expected[name]}")
            if arr.dtype != np.float32:
                raise DimensionError(f"{name}: dtype {arr.dtype}, expected float32")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name}: non-finite values")
        if len(self.layers) != cfg.n_layers:
            raise DimensionError(f"{len(self.layers)} layers, config says {cfg.n_layers}")


def tensor_shapes(cfg: ModelConfig):
    yield "W_E", (cfg.vocab_size, cfg.d_model)
    yield "P", (cfg.max_seq, cfg.d_model)
    for i in range(cfg.n_layers):
        for name, shape in layer_shapes(cfg).items():
            yield f"layers.{i}.{name}", shape
    yield "gamma_final", (cfg.d_model,)
    yield "W_U", (cfg.d_model, cfg.vocab_size)


@dataclass
class ResidualTrace:
    """Residual-stream decomposition at the generating (last) position.

    ``embed + sum(head_out) + sum(mlp_out) == resid_final`` up to float32
    rounding; ``rho`` is the final-norm denominator of ``resid_final``.
    """

    embed: np.ndarray          # [d_model]
    head_out: np.ndarray       # [n_layers, n_heads, d_model]
    mlp_out: np.ndarray        # [n_layers, d_model]
    resid_final: np.ndarray    # [d_model]
    rho: float
    logits: np.ndarray         # [vocab]

    @property
    def attn_out(self) -> np.ndarray:
        return self.head_out.sum(axis=1, dtype=np.float32)


@dataclass(frozen=True)
class DecodeParams:
    mode: str = "greedy"
    temperature: float = 1.0
    top_p: float = 0.9
    seed: int = 0
    max_new_tokens: int = 32

    def __post_init__(self):
        if self.mode not in ("greedy", "top-p"):
            raise DomainError(f"unknown decode mode {self.mode!r}")
        if self.max_new_tokens < 1:
            raise DomainError("max_new_tokens must be >= 1")
        if self.mode == "top-p" and not (self.temperature > 0 and 0 < self.top_p <= 1):
            raise DomainError("top-p decoding needs temperature > 0 and 0 < top_p <= 1")


@dataclass
class GenerationRecord:
    prompt_ids: list[int]
    emitted_ids: list[int]
    traces: list[ResidualTrace]
    decode_params: DecodeParams
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.emitted_ids)

    @property
    def terminated(self) -> bool:
        return bool(self.emitted_ids) and self.emitted_ids[-1] == EOS_ID


def _attend(x: np.ndarray, layer: LayerWeights, cfg: ModelConfig,
            past: tuple[np.ndarray, np.ndarray] | None = None):
    """Per-head outputs for the rows of ``x`` given cached keys/values of
    earlier positions. Returns ``(out[n_heads, rows, d_model], (keys, values))``.
    """
    dh = cfg.d_head
    q = K.matmul(x, layer.w_q)
    k = K.matmul(x, layer.w_k)
    v = K.matmul(x, layer.w_v)
    if past is not None:
        k = np.concatenate([past[0], k])
        v = np.concatenate([past[1], v])
    rows, total = x.shape[0], k.shape[0]
    offset = total - rows
    # row r sits at absolute position offset + r and may attend to <= that
    causal = np.arange(total)[None, :] > (offset + np.arange(rows))[:, None]
    scale = np.float32(1.0 / math.sqrt(dh))
    out = np.empty((cfg.n_heads, rows, cfg.d_model), dtype=np.float32)
    for h in range(cfg.n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        scores = K.matmul(q[:, cols], np.ascontiguousarray(k[:, cols].T)) * scale
        scores = np.where(causal, np.float32(-np.inf), scores)
        probs = K.softmax(scores)
        z = K.matmul(probs, v[:, cols])
        out[h] = K.matmul(z, layer.w_o[cols, :])
    return out, (k, v)


def attention_block(x: np.ndarray, layer: LayerWeights, cfg: ModelConfig) -> np.ndarray:
    """Per-head attention outputs after each head's W_O slice.

    ``x`` is the normalised block input ``[seq, d_model]``; the result has
    shape ``[n_heads, seq, d_model]`` and sums over heads to the attention
    output that gets added to the residual stream.
    """
    x = K.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != cfg.d_model:
        raise DimensionError(f"attention input must be [seq, {cfg.d_model}], got {x.shape}")
    return _attend(x, layer, cfg)[0]


def _check_ids(ids, cfg: ModelConfig) -> list[int]:
    ids = [int(t) for t in ids]
    if not 1 <= len(ids) <= cfg.max_seq:
        raise CapacityError(f"sequence length {len(ids)} outside [1, max_seq={cfg.max_seq}]")
    bad = [t for t in ids if not 0 <= t < cfg.vocab_size]
    if bad:
        raise VocabularyError(f"token ids {bad[:5]} outside vocabulary of size {cfg.vocab_size}")
    return ids


def _run(ids: list[int], start: int, weights: Weights, cfg: ModelConfig, cache: list | None):
    """Process positions ``start .. start+len(ids)-1``; ``cache`` holds the
    per-layer (keys, values) of earlier positions and is updated in place.
    Every kernel works row by row, so the cached and uncached paths agree bit
    for bit.
    """
    seq = len(ids)
    embed = weights.w_e[ids] + weights.pos[start:start + seq]
    resid = embed.astype(np.float32)
    heads = np.empty((cfg.n_layers, cfg.n_heads, cfg.d_model), dtype=np.float32)
    mlps = np.empty((cfg.n_layers, cfg.d_model), dtype=np.float32)
    for l, layer in enumerate(weights.layers):
        past = cache[l] if cache is not None and cache[l] is not None else None
        per_head, kv = _attend(K.rmsnorm(resid, layer.gamma_attn, cfg.eps), layer, cfg, past)
        if cache is not None:
            cache[l] = kv
        resid = resid + per_head.sum(axis=0, dtype=np.float32)
        ff = K.gated_ff(K.rmsnorm(resid, layer.gamma_mlp, cfg.eps),
                        layer.w_gate, layer.w_up, layer.w_down, layer.b_down)
        resid = resid + ff
        heads[l] = per_head[:, -1, :]
        mlps[l] = ff[-1]
    final = resid[-1]
    rho = K.rms_denominator(final, cfg.eps)
    normed = K.rmsnorm_frozen(final, weights.gamma_final, rho)
    logits = K.matmul(normed[None, :], weights.w_u)[0]
    trace = ResidualTrace(embed=embed[-1].copy(), head_out=heads, mlp_out=mlps,
                          resid_final=final.copy(), rho=float(rho[0]), logits=logits)
    return logits, trace


def forward(ids, weights: Weights, cfg: ModelConfig) -> tuple[np.ndarray, ResidualTrace]:
    """Run the full prefix from scratch; return last-position logits and its trace."""
    ids = _check_ids(ids, cfg)
    return _run(ids, 0, weights, cfg, None)


def sample_top_p(logits: np.ndarray, temperature: float, top_p: float, rng: Xoshiro256) -> int:
    """Nucleus sampling; ties in probability are broken by lower token id."""
    z = np.asarray(logits, dtype=np.float64) / temperature
    z -= z.max()
    probs = np.exp(z)
    probs /= probs.sum()
    order = np.lexsort((np.arange(len(probs)), -probs))
    cum = np.cumsum(probs[order])
    keep = int(np.searchsorted(cum, top_p, side="left")) + 1
    keep = min(keep, len(order))
    kept = order[:keep]
    p = probs[kept] / probs[kept].sum()
    u = rng.uniform()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return int(kept[min(idx, keep - 1)])


def generate(prompt_ids, weights: Weights, cfg: ModelConfig,
             params: DecodeParams | None = None, use_cache: bool = True) -> GenerationRecord:
    """Autoregressive decoding with one residual trace per emitted token.

    ``use_cache=False`` recomputes every prefix with :func:`forward`; the
    result is bit-identical and slower.
    """
    params = params or DecodeParams()
    prompt_ids = _check_ids(prompt_ids, cfg)
    if len(prompt_ids) + params.max_new_tokens > cfg.max_seq:
        raise CapacityError(
            f"prompt of {len(prompt_ids)} tokens + {params.max_new_tokens} new tokens "
            f"exceeds max_seq={cfg.max_seq}")
    rng = Xoshiro256(params.seed)
    cache = [None] * cfg.n_layers if use_cache else None
    seq = list(prompt_ids)
    emitted, traces = [], []
    for _ in range(params.max_new_tokens):
        if not use_cache:
            logits, trace = forward(seq, weights, cfg)
        elif not emitted:
            logits, trace = _run(seq, 0, weights, cfg, cache)
        else:
            logits, trace = _run(seq[-1:], len(seq) - 1, weights, cfg, cache)
        if params.mode == "greedy":
            tok = int(np.argmax(logits))
        else:
            tok = sample_top_p(logits, params.temperature, params.top_p, rng)
        emitted.append(tok)
        traces.append(trace)
        seq.append(tok)
        if tok == EOS_ID:
            break
    return GenerationRecord(list(prompt_ids), emitted, traces, params, params.seed)
