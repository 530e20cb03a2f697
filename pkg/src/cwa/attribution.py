"""Direct logit attribution per step and cumulative weighted attribution.

The final RMS norm is linearised by freezing its denominator ``rho`` at the
value computed from the full residual, so for any component output ``c``::

    DLA(c) = ((gamma_final * c) / rho) . W_U[:, token]

and the DLAs of the embedding, every attention layer and every MLP sum to the
emitted token's logit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import kernels as K
from .errors import DegenerateTraceError, ProtocolError
from .model import (DecodeParams, GenerationRecord, ModelConfig, ResidualTrace, Weights,
                    forward, generate)
from .model_io import RigSpec, make_rigged_model, rig_bias

EMBED = "embed"
ATTN_HEAD = "attn_head"
ATTN_LAYER = "attn_layer"
MLP = "mlp"
KINDS = (EMBED, ATTN_HEAD, ATTN_LAYER, MLP)


@dataclass(frozen=True, order=True)
class ComponentId:
    kind: str
    layer: int = -1
    head: int = -1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown component kind {self.kind!r}")

    @property
    def label(self) -> str:
        if self.kind == EMBED:
            return "embed"
        if self.kind == ATTN_HEAD:
            return f"L{self.layer}H{self.head}"
        if self.kind == ATTN_LAYER:
            return f"L{self.layer}.attn"
        return f"L{self.layer}.mlp"


def components(cfg: ModelConfig) -> list[ComponentId]:
    """Canonical component order: embed, then per layer heads, attn, mlp."""
    out = [ComponentId(EMBED)]
    for l in range(cfg.n_layers):
        out += [ComponentId(ATTN_HEAD, l, h) for h in range(cfg.n_heads)]
        out += [ComponentId(ATTN_LAYER, l), ComponentId(MLP, l)]
    return out


@dataclass
class StepDLA:
    step: int
    token: int
    contributions: dict[ComponentId, float]
    residual_logit: float
    vocab_vectors: dict[ComponentId, np.ndarray] | None = None

    def total(self) -> float:
        """Embedding plus every layer-level component; equals the logit."""
        return sum(v for c, v in self.contributions.items() if c.kind != ATTN_HEAD)


def _component_matrix(trace: ResidualTrace, cfg: ModelConfig):
    comps = components(cfg)
    rows = []
    for c in comps:
        if c.kind == EMBED:
            rows.append(trace.embed)
        elif c.kind == ATTN_HEAD:
            rows.append(trace.head_out[c.layer, c.head])
        elif c.kind == ATTN_LAYER:
            rows.append(trace.attn_out[c.layer])
        else:
            rows.append(trace.mlp_out[c.layer])
    return comps, np.stack(rows).astype(np.float32)


def project(vectors: np.ndarray, weights: Weights, rho: float, token: int) -> np.ndarray:
    """Frozen-norm projection of residual vectors onto one unembedding column."""
    if not rho > 0:
        raise DegenerateTraceError(f"final-norm denominator must be positive, got {rho}")
    normed = K.rmsnorm_frozen(np.atleast_2d(vectors), weights.gamma_final, np.float32(rho))
    return K.matmul(normed, weights.w_u[:, token:token + 1])[:, 0]


def dla_step(trace: ResidualTrace, token: int, weights: Weights, cfg: ModelConfig,
             step: int = 0, keep_vocab: bool = False) -> StepDLA:
    if not trace.rho > 0:
        raise DegenerateTraceError(f"final-norm denominator must be positive, got {trace.rho}")
    comps, mat = _component_matrix(trace, cfg)
    scalars = project(mat, weights, trace.rho, token)
    vocab_vectors = None
    if keep_vocab:
        full = K.matmul(K.rmsnorm_frozen(mat, weights.gamma_final, np.float32(trace.rho)),
                        weights.w_u)
        vocab_vectors = dict(zip(comps, full))
    return StepDLA(step=step, token=int(token),
                   contributions={c: float(s) for c, s in zip(comps, scalars)},
                   residual_logit=float(trace.logits[token]),
                   vocab_vectors=vocab_vectors)


def dla_record(record: GenerationRecord, weights: Weights, cfg: ModelConfig) -> list[StepDLA]:
    return [dla_step(tr, tok, weights, cfg, step=i)
            for i, (tr, tok) in enumerate(zip(record.traces, record.emitted_ids))]


@dataclass
class CwaReport:
    values: dict[ComponentId, float]
    k: int
    signs: list[int]
    metadata: dict = field(default_factory=dict)


def cwa(signs: Sequence[int], step_dlas: Sequence[StepDLA],
        record: GenerationRecord | None = None, metadata: dict | None = None) -> CwaReport:
    """``CWA_C = (1/K) * sum_i sign_i * DLA_{C,i}``.

    The sum is carried out exactly over the stored float scalars and rounded
    once, so sign flips negate the result bit for bit and ``|CWA_C|`` never
    exceeds ``max_i |DLA_{C,i}|``.
    """
    k = len(step_dlas)
    if len(signs) != k:
        raise ProtocolError(f"{len(signs)} signs for {k} steps")
    if record is not None and record.k != k:
        raise ProtocolError(f"record has {record.k} emitted tokens, got {k} step DLAs")
    if k < 1:
        raise ProtocolError("CWA needs at least one generation step")
    if any(s not in (1, -1) for s in signs):
        raise ProtocolError(f"signs must be +1/-1, got {sorted(set(signs))}")
    keys = list(step_dlas[0].contributions)
    values = {}
    for c in keys:
        total = sum((Fraction(s) * Fraction(d.contributions[c]) for s, d in zip(signs, step_dlas)),
                    Fraction(0))
        values[c] = float(total / k)
    return CwaReport(values, k, list(signs), dict(metadata or {}))


# -- rigged-component oracle ----------------------------------------------------

@dataclass
class RigCheckStep:
    step: int
    token: int
    measured: float       # Mlp(l*) DLA in the rigged model
    closed_form: float    # ((gamma_f * b) / rho) . W_U[:, token]
    baseline: float       # unrigged Mlp(l*) output under the same rho
    doubled: float        # closed-form term for 2b under the same rho

    @property
    def residual_error(self) -> float:
        return abs(self.measured - self.closed_form - self.baseline)


@dataclass
class RigCheckReport:
    layer: int
    steps: list[RigCheckStep]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max((s.residual_error for s in self.steps), default=0.0)

    @property
    def max_doubling_rel_error(self) -> float:
        errs = [abs(s.doubled - 2 * s.closed_form) / max(abs(2 * s.closed_form), 1e-30)
                for s in self.steps if s.closed_form != 0]
        return max(errs, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance and self.max_doubling_rel_error <= self.tolerance


def rigged_component_check(base: Weights, cfg: ModelConfig, spec: RigSpec, prompts,
                           params: DecodeParams | None = None,
                           tolerance: float = 1e-4) -> RigCheckReport:
    """Check that an injected down-projection bias shows up in Mlp(l*)'s DLA
    as exactly its closed-form frozen-norm projection.

    The bias enters the residual after the gated part of layer l*'s MLP, so
    the gated part is the same in the base model when the rigged model's
    tokens are teacher-forced; the remainder after subtracting the closed-form
    term must equal that gated part's projection under the rigged ``rho``.
    """
    rigged = make_rigged_model(base, cfg, spec)
    bias = rig_bias(base, cfg, spec)
    layer = spec.layer
    steps = []
    for prompt in prompts:
        record = generate(prompt, rigged, cfg, params)
        seq = list(record.prompt_ids)
        for i, (trace, tok) in enumerate(zip(record.traces, record.emitted_ids)):
            measured = dla_step(trace, tok, rigged, cfg, step=i).contributions[ComponentId(MLP, layer)]
            _, base_trace = forward(seq, base, cfg)
            gated = base_trace.mlp_out[layer]
            closed, base_part, doubled = project(
                np.stack([bias, gated, 2 * bias]), rigged, trace.rho, tok)
            steps.append(RigCheckStep(i, tok, measured, float(closed), float(base_part),
                                      float(doubled)))
            seq.append(tok)
    return RigCheckReport(layer, steps, tolerance)
