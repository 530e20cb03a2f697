"""Slow, definition-literal reimplementations used to cross-check the fast paths.

Nothing here shares code with the modules it checks: the forward pass uses
float64 ``@`` with monolithic attention, the tokenizer scans every entry, the
sign oracle re-decodes each full prefix, and quantiles are computed by hand.
"""
from __future__ import annotations

import math

import numpy as np


def naive_forward(ids, weights, cfg) -> dict:
    """float64 forward pass over the whole sequence; returns last-position values."""
    f = lambda a: np.asarray(a, dtype=np.float64)
    ids = list(ids)
    h = f(weights.w_e)[ids] + f(weights.pos)[: len(ids)]
    embed = h[-1].copy()
    attn_outs, mlp_outs = [], []

    def norm(x, g):
        return f(g) * x / np.sqrt((x * x).mean(axis=-1, keepdims=True) + cfg.eps)

    n = len(ids)
    for layer in weights.layers:
        x = norm(h, layer.gamma_attn)
        q, k, v = x @ f(layer.w_q), x @ f(layer.w_k), x @ f(layer.w_v)
        z = np.zeros_like(q)
        dh = cfg.d_head
        for hd in range(cfg.n_heads):
            s = slice(hd * dh, (hd + 1) * dh)
            scores = q[:, s] @ k[:, s].T / math.sqrt(dh)
            for i in range(n):
                for j in range(i + 1, n):
                    scores[i, j] = -np.inf
            p = np.exp(scores - scores.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            z[:, s] = p @ v[:, s]
        attn = z @ f(layer.w_o)
        h = h + attn
        x = norm(h, layer.gamma_mlp)
        g = x @ f(layer.w_gate)
        mlp = ((g / (1 + np.exp(-g))) * (x @ f(layer.w_up))) @ f(layer.w_down) + f(layer.b_down)
        h = h + mlp
        attn_outs.append(attn[-1])
        mlp_outs.append(mlp[-1])
    final = h[-1]
    rho = math.sqrt(float((final * final).mean()) + cfg.eps)
    logits = (f(weights.gamma_final) * final / rho) @ f(weights.w_u)
    return {"logits": logits, "resid_final": final, "rho": rho, "embed": embed,
            "attn": np.array(attn_outs), "mlp": np.array(mlp_outs)}


def brute_force_encode(data: bytes, entries) -> list[int]:
    """Longest match by scanning every vocabulary entry at every position."""
    ids, i = [], 0
    while i < len(data):
        best, best_len = None, 0
        for tid, piece in enumerate(entries):
            if piece and len(piece) > best_len and data.startswith(piece, i):
                best, best_len = tid, len(piece)
        ids.append(best)
        i += best_len
    return ids


def _words(text: str) -> int:
    count, prev = 0, False
    for ch in text:
        cur = ch.isalnum()
        count += cur and not prev
        prev = cur
    return count


def brute_force_signs(ids, entries, n: int, eos_id: int = 1) -> list[int]:
    """Re-decode the whole prefix at every step and recount its words."""
    signs = []
    for i in range(len(ids)):
        prefix = b"".join(entries[t] for t in ids[: i + 1])
        m = _words(prefix.decode("utf-8", errors="replace"))
        if ids[i] == eos_id:
            signs.append(1 if m == n else -1)
        else:
            signs.append(1 if m <= n else -1)
        if ids[i] == eos_id:
            break
    return signs


def sort_interpolate_quantile(values, q: float) -> float:
    """Linear interpolation between the closest ranks of the sorted data."""
    data = sorted(float(v) for v in values)
    pos = (len(data) - 1) * q
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(data) - 1)
    frac = pos - lo
    return data[lo] + (data[hi] - data[lo]) * frac
