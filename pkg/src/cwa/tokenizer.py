"""Greedy longest-match byte tokenizer and a word counter over decoded text.

The two halves are deliberately independent: the model emits tokens, the
length constraint is judged on words, and a single word may span several
tokens (or a token may hold several words).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

from .errors import FormatError, VocabularyError

BOS_ID = 0
EOS_ID = 1
N_RESERVED = 2


@dataclass(frozen=True)
class Vocabulary:
    """Token id -> byte string table.

    Ids 0 and 1 are BOS and EOS (empty byte strings). The 256 single-byte
    tokens always follow, so encoding is total.
    """

    entries: tuple[bytes, ...]
    _index: dict = field(init=False, repr=False, compare=False)
    _max_len: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple(bytes(e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        if len(entries) < N_RESERVED + 256:
            raise VocabularyError(f"vocabulary needs at least {N_RESERVED + 256} entries")
        if entries[BOS_ID] != b"" or entries[EOS_ID] != b"":
            raise VocabularyError("ids 0 and 1 must be the zero-length BOS/EOS entries")
        index = {}
        for i, piece in enumerate(entries[N_RESERVED:], start=N_RESERVED):
            if not piece:
                raise VocabularyError(f"id {i}: only BOS/EOS may be empty")
            if piece in index:
                raise VocabularyError(f"id {i}: duplicate token {piece!r} (first at id {index[piece]})")
            index[piece] = i
        missing = [b for b in range(256) if bytes([b]) not in index]
        if missing:
            raise VocabularyError(f"single-byte tokens missing for byte values {missing[:8]}...")
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_max_len", max(len(p) for p in index))

    @classmethod
    def from_subwords(cls, subwords: Sequence[bytes]) -> "Vocabulary":
        entries = [b"", b""] + [bytes([b]) for b in range(256)]
        seen = set(entries[N_RESERVED:])
        for piece in subwords:
            if piece not in seen:
                entries.append(piece)
                seen.add(piece)
        return cls(tuple(entries))

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def bos(self) -> int:
        return BOS_ID

    @property
    def eos(self) -> int:
        return EOS_ID

    def token_id(self, piece: bytes) -> int:
        return self._index[piece]

    def __len__(self) -> int:
        return len(self.entries)


def encode(text: bytes | str, vocab: Vocabulary) -> list[int]:
    """Greedy longest match from the left; falls back to single bytes."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    ids = []
    i, n = 0, len(text)
    index, max_len = vocab._index, vocab._max_len
    while i < n:
        for length in range(min(max_len, n - i), 0, -1):
            tid = index.get(text[i:i + length])
            if tid is not None:
                ids.append(tid)
                i += length
                break
    return ids


def decode(ids: Sequence[int], vocab: Vocabulary) -> bytes:
    entries = vocab.entries
    out = []
    for tid in ids:
        if not 0 <= tid < len(entries):
            raise VocabularyError(f"unknown token id {tid} (vocabulary size {len(entries)})")
        out.append(entries[tid])
    return b"".join(out)


# -- word counting -------------------------------------------------------------

def _as_text(text: bytes | str) -> str:
    if isinstance(text, bytes):
        return text.decode("utf-8", errors="replace")
    return text


def count_words(text: bytes | str) -> int:
    """Number of maximal runs of alphanumeric characters.

    Everything else, apostrophes and hyphens included, separates words, so
    ``"l'amico"`` and ``"well-known"`` count as two words each.
    """
    count = 0
    in_word = False
    for ch in _as_text(text):
        if ch.isalnum():
            if not in_word:
                count += 1
            in_word = True
        else:
            in_word = False
    return count


class WordState(NamedTuple):
    words: int = 0
    in_word: bool = False


def incremental_count(state: WordState | None, fragment: str) -> tuple[WordState, int]:
    """Consume one text fragment; returns the new state and the running count."""
    words, in_word = state if state is not None else WordState()
    for ch in fragment:
        if ch.isalnum():
            if not in_word:
                words += 1
            in_word = True
        else:
            in_word = False
    return WordState(words, in_word), words


# -- vocabulary text files -------------------------------------------------------

_ESCAPE_RE = re.compile(rb"\\(x[0-9a-fA-F]{2}|\\)")


def escape_token(piece: bytes) -> str:
    out = []
    for b in piece:
        if b == 0x5C:
            out.append("\\\\")
        elif 0x21 <= b <= 0x7E:
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def unescape_token(line: str) -> bytes:
    raw = line.encode("ascii")
    pos = 0
    out = bytearray()
    for m in _ESCAPE_RE.finditer(raw):
        out += raw[pos:m.start()]
        tok = m.group(1)
        out += b"\\" if tok == b"\\" else bytes([int(tok[1:], 16)])
        pos = m.end()
    rest = raw[pos:]
    if b"\\" in rest:
        raise FormatError(f"bad escape in token line {line!r}")
    out += rest
    return bytes(out)


def dump_vocab_text(vocab: Vocabulary, path: str | Path) -> None:
    """One token per line, line number == id; BOS/EOS are empty lines."""
    lines = [escape_token(p) for p in vocab.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab_text(path: str | Path) -> Vocabulary:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    try:
        return Vocabulary(tuple(unescape_token(line) for line in lines))
    except UnicodeEncodeError as exc:
        raise FormatError(f"{path}: vocabulary lines must be ASCII escapes") from exc


def fixture_subwords() -> list[bytes]:
    """English/Italian subword list shipped with the package."""
    text = resources.files("cwa").joinpath("data/subwords.txt").read_text(encoding="utf-8")
    return [unescape_token(line) for line in text.splitlines() if line]


def default_vocab() -> Vocabulary:
    return Vocabulary.from_subwords(fixture_subwords())
