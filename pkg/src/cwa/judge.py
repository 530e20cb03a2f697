"""Step signs, outcome classes and error statistics for word-count targets."""
from __future__ import annotations

import codecs
import enum
import math
import statistics
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .model import GenerationRecord
from .tokenizer import EOS_ID, Vocabulary, WordState, incremental_count

MAX_TARGET = 1_000_000


def check_target(n: int) -> int:
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or not 0 <= n <= MAX_TARGET:
        raise DomainError(f"word-count target must be an integer in [0, {MAX_TARGET}], got {n!r}")
    return int(n)


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    TOO_SHORT = "too_short"
    TOO_LONG = "too_long"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class StepVerdict:
    step: int
    token: int
    words: int
    is_eos: bool
    sign: int


def step_sign(words: int, is_eos: bool, n: int, eos_rule: bool = True) -> int:
    """+1 if the step keeps the output on track for ``n`` words, else -1.

    Word tokens are fine while the running count stays <= n. With
    ``eos_rule`` (the default) an EOS is only correct right after the n-th
    word; without it EOS steps follow the same ``words <= n`` test.
    """
    if words < 0:
        raise DomainError(f"word count must be >= 0, got {words}")
    if is_eos and eos_rule:
        return 1 if words == n else -1
    return 1 if words <= n else -1


def classify(words: int, terminated: bool, n: int) -> Outcome:
    if not terminated:
        return Outcome.TRUNCATED
    if words == n:
        return Outcome.SUCCESS
    return Outcome.TOO_SHORT if words < n else Outcome.TOO_LONG


def judge_tokens(ids: Sequence[int], n: int, vocab: Vocabulary,
                 eos_rule: bool = True) -> tuple[list[StepVerdict], Outcome]:
    """Decode ``ids`` one token at a time and sign every step.

    Bytes of an incomplete UTF-8 character are held back until the character
    completes, so a token boundary inside a character never splits a word.
    """
    n = check_target(n)
    decoder = codecs.getincrementaldecoder("utf-8")(errors="replace")
    state = WordState()
    words = 0
    verdicts = []
    terminated = False
    for i, tok in enumerate(ids):
        is_eos = tok == EOS_ID
        piece = vocab.entries[tok] if 0 <= tok < vocab.size else None
        if piece is None:
            raise DomainError(f"token id {tok} outside vocabulary")
        state, words = incremental_count(state, decoder.decode(piece))
        verdicts.append(StepVerdict(i, int(tok), words, is_eos, step_sign(words, is_eos, n, eos_rule)))
        if is_eos:
            terminated = True
            break
    return verdicts, classify(words, terminated, n)


def judge_generation(record: GenerationRecord, n: int, vocab: Vocabulary,
                     eos_rule: bool = True) -> tuple[list[StepVerdict], Outcome]:
    if not record.emitted_ids:
        raise DomainError("cannot judge an empty generation")
    return judge_tokens(record.emitted_ids, n, vocab, eos_rule)


# -- error metrics ---------------------------------------------------------------

@dataclass(frozen=True)
class ErrorStats:
    """Summary of an error list; ``std`` is the population standard deviation."""

    count: int
    avg: float
    std: float
    min: float
    q25: float
    q50: float
    q75: float
    max: float

    def as_row(self) -> dict:
        return {"avg": self.avg, "std": self.std, "min": self.min, "q25": self.q25,
                "q50": self.q50, "q75": self.q75, "max": self.max}


def mae(errors: Sequence[float]) -> float:
    if len(errors) == 0:
        raise DomainError("MAE of an empty error list")
    return math.fsum(abs(e) for e in errors) / len(errors)


def quantile(values: Sequence[float], q: float) -> float:
    """Linear interpolation between closest ranks (numpy's default)."""
    return float(np.quantile(np.asarray(values, dtype=np.float64), q))


def descriptive_stats(errors: Sequence[float]) -> ErrorStats:
    if len(errors) == 0:
        raise DomainError("descriptive statistics of an empty error list")
    data = [float(e) for e in errors]
    return ErrorStats(
        count=len(data),
        avg=statistics.fmean(data),
        std=statistics.pstdev(data),
        min=min(data),
        q25=quantile(data, 0.25),
        q50=quantile(data, 0.50),
        q75=quantile(data, 0.75),
        max=max(data),
    )


def iqr_outliers(values: Sequence[float], k: float = 1.5) -> list[float]:
    """Values beyond ``k`` interquartile ranges outside the quartiles."""
    if len(values) == 0:
        return []
    q1, q3 = quantile(values, 0.25), quantile(values, 0.75)
    lo, hi = q1 - k * (q3 - q1), q3 + k * (q3 - q1)
    return [v for v in values if v < lo or v > hi]
