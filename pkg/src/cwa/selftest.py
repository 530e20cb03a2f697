"""Fast invariant checks behind ``cwa selftest``."""
from __future__ import annotations

import random
import tempfile
from pathlib import Path

import numpy as np

from . import kernels as K
from .attribution import ATTN_HEAD, ATTN_LAYER, cwa, dla_record
from .harness import ExperimentConfig, build_prompts
from .judge import judge_tokens, step_sign
from .model import DecodeParams, ModelConfig, forward, generate
from .model_io import load, make_reference_model, save
from .oracles import brute_force_signs, naive_forward
from .tokenizer import BOS_ID, EOS_ID, count_words, decode, encode, incremental_count


def _check_matmul():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 7)).astype(np.float32)
    b = rng.standard_normal((7, 5)).astype(np.float32)
    out = K.matmul(a, b)
    ref = np.zeros((3, 5), dtype=np.float32)
    for i in range(3):
        for j in range(5):
            s = np.float32(0)
            for k in range(7):
                s = np.float32(s + a[i, k] * b[k, j])
            ref[i, j] = s
    return bool(np.array_equal(out, ref)), "fixed-order sum matches scalar loop"


def _check_tokenizer(vocab):
    rnd = random.Random(0)
    for _ in range(200):
        data = bytes(rnd.randrange(256) for _ in range(rnd.randrange(20)))
        if decode(encode(data, vocab), vocab) != data:
            return False, f"roundtrip failed on {data!r}"
        text = data.decode("utf-8", errors="replace")
        state, m = None, 0
        cuts = sorted(rnd.sample(range(len(text) + 1), min(3, len(text) + 1)))
        for lo, hi in zip([0] + cuts, cuts + [len(text)]):
            state, m = incremental_count(state, text[lo:hi])
        if m != count_words(text):
            return False, f"incremental count failed on {text!r}"
    return True, "200 roundtrips and fragmentations"


def _check_model(weights, cfg, vocab):
    prompt = [BOS_ID] + encode("Write a text with exactly 4 words.", vocab)
    record = generate(prompt, weights, cfg, DecodeParams(max_new_tokens=8))
    seq = list(prompt)
    worst = 0.0
    for trace, tok in zip(record.traces, record.emitted_ids):
        ref = naive_forward(seq, weights, cfg)
        worst = max(worst, float(np.abs(trace.logits - ref["logits"]).max()))
        seq.append(tok)
    if worst > 1e-5:
        return False, f"logits differ from float64 oracle by {worst:.2e}"
    logits, _ = forward(seq[:-1], weights, cfg)
    if not np.array_equal(logits, record.traces[-1].logits):
        return False, "cached and recomputed logits differ"
    return True, f"oracle max |dlogit| {worst:.1e}"


def _check_dla(weights, cfg, vocab):
    prompt = [BOS_ID] + encode("Scrivi una frase contenente 5 parole.", vocab)
    record = generate(prompt, weights, cfg, DecodeParams(mode="top-p", seed=7, max_new_tokens=12))
    worst_total = worst_heads = 0.0
    for step in dla_record(record, weights, cfg):
        logit = step.residual_logit
        worst_total = max(worst_total, abs(step.total() - logit) / (1 + abs(logit)))
        for l in range(cfg.n_layers):
            heads = sum(v for c, v in step.contributions.items()
                        if c.kind == ATTN_HEAD and c.layer == l)
            layer = next(v for c, v in step.contributions.items()
                         if c.kind == ATTN_LAYER and c.layer == l)
            worst_heads = max(worst_heads, abs(heads - layer))
    ok = worst_total <= 1e-4 and worst_heads <= 1e-5
    return ok, f"completeness {worst_total:.1e}, head-sum {worst_heads:.1e}"


def _check_signs(vocab):
    cases = [("The dog runs", 3, "success"), ("The dog .", 3, "too_short"),
             ("The dog runs fast .", 3, "too_long")]
    for text, n, expected in cases:
        ids = encode(text, vocab) + [EOS_ID]
        verdicts, outcome = judge_tokens(ids, n, vocab)
        if outcome.value != expected:
            return False, f"{text!r}: {outcome.value} != {expected}"
        if [v.sign for v in verdicts] != brute_force_signs(ids, vocab.entries, n):
            return False, f"{text!r}: signs disagree with prefix recount"
    if (step_sign(3, False, 3), step_sign(4, False, 3), step_sign(2, True, 3),
            step_sign(3, True, 3)) != (1, -1, -1, 1):
        return False, "sign table"
    return True, "worked examples and sign table"


def _check_cwa():
    from .attribution import ComponentId, StepDLA
    c = ComponentId("mlp", 0)
    steps = [StepDLA(i, 0, {c: v}, 0.0) for i, v in enumerate((0.2, -0.1, 0.4))]
    value = cwa([1, 1, -1], steps).values[c]
    return value == -0.1, f"hand fixture gives {value!r}"


def _check_roundtrip(weights, cfg, vocab):
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "m.cwam"
        save(weights, cfg, vocab, path)
        w2, cfg2, vocab2 = load(path)
    same = cfg2 == cfg and vocab2.entries == vocab.entries and all(
        np.array_equal(a, b) for (_, a), (_, b) in zip(weights.tensors(), w2.tensors()))
    return same, "save/load bit equality"


def _check_prompts():
    cfg = ExperimentConfig("ENG-IT", template_sets=("IT", "BASE"))
    prompts = build_prompts(cfg)
    first = prompts[0].text
    ok = len(prompts) == 80 and prompts[3].text == "Generate a sentence using exactly 3 words."
    return ok, f"{len(prompts)} prompts, first {first!r}"


def run_all():
    weights, cfg, vocab = make_reference_model(
        1, ModelConfig(n_layers=2, n_heads=2, d_model=16, d_ff=32, vocab_size=300, max_seq=64))
    checks = [
        ("matmul order", _check_matmul),
        ("tokenizer laws", lambda: _check_tokenizer(vocab)),
        ("forward vs oracle", lambda: _check_model(weights, cfg, vocab)),
        ("DLA additivity", lambda: _check_dla(weights, cfg, vocab)),
        ("sign function", lambda: _check_signs(vocab)),
        ("CWA arithmetic", _check_cwa),
        ("model file roundtrip", lambda: _check_roundtrip(weights, cfg, vocab)),
        ("prompt bank", _check_prompts),
    ]
    results = []
    for name, fn in checks:
        try:
            passed, detail = fn()
        except Exception as exc:  # report, keep going
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(passed), detail))
    return results
