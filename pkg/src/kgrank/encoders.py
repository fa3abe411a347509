"""Tokenization and the trainable pair encoder.

The encoder consumes two token sequences (a query with a document, or an
entity label with its description), embeds tokens through a hashed bucket
table plus a two-slot segment table, mean-pools, and applies a projection
with tanh. It stands in for a large pretrained cross-encoder behind the
same contract: two sequences in, one 1 x d vector out, all parameters in
the "encoder" learning-rate group. A real pretrained model can be slotted
in by implementing the same ``encode(tape, first, second)`` entry point.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, param

EMPTY_TOKEN = "∅"

# CJK unified ideographs (base + extension A) and compatibility block.
_CJK_RANGES = ((0x4E00, 0x9FFF), (0x3400, 0x4DBF), (0xF900, 0xFAFF))


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


@dataclass
class TokenSequence:
    tokens: list[str]
    language: str

    def truncated(self, cap: int) -> "TokenSequence":
        if len(self.tokens) <= cap:
            return self
        return TokenSequence(self.tokens[:cap], self.language)


def tokenize(text: str, language: str, cap: int | None = None) -> TokenSequence:
    """Lowercased word split; CJK codepoints become single-character tokens.

    Empty or all-separator input yields the single placeholder token so that
    downstream pooling always sees at least one row.
    """
    tokens: list[str] = []
    buf: list[str] = []

    def flush() -> None:
        if buf:
            tokens.append("".join(buf))
            buf.clear()

    for ch in text.lower():
        if _is_cjk(ch):
            flush()
            tokens.append(ch)
        elif ch.isalnum():
            buf.append(ch)
        else:
            flush()
    flush()
    if not tokens:
        tokens = [EMPTY_TOKEN]
    if cap is not None:
        tokens = tokens[:cap]
    return TokenSequence(tokens, language)


def hash_bucket(token: str, buckets: int) -> int:
    """Stable across runs and processes (no per-process string-hash salt)."""
    return zlib.crc32(token.encode("utf-8")) % buckets


@dataclass
class EncoderConfig:
    dim: int = 32
    buckets: int = 4096
    cap_first: int = 64    # queries and entity labels
    cap_second: int = 512  # documents and entity descriptions

    def __post_init__(self) -> None:
        if self.buckets < 1024:
            raise ValueError(f"hash bucket count must be >= 1024, got {self.buckets}")
        if self.dim < 1:
            raise ValueError("encoder dimension must be positive")


class PairEncoder:
    """Hashed-bag encoder over a [first; second] token pair.

    Token rows come from a shared bucket table; each token also receives the
    segment embedding for its half of the pair, so swapping the two inputs
    changes the encoding. Pooling is order-free by design.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        d = config.dim
        self.table = param(rng.uniform(-0.5, 0.5, (config.buckets, d)))
        self.segments = param(rng.uniform(-0.5, 0.5, (2, d)))
        self.proj = param(rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), (d, d)))
        self.bias = param(np.zeros((1, d)))

    def named_tensors(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.table", self.table),
                (f"{prefix}.segments", self.segments),
                (f"{prefix}.proj", self.proj),
                (f"{prefix}.bias", self.bias)]

    def encode(self, tape: Tape, first: TokenSequence,
               second: TokenSequence) -> Tensor:
        cfg = self.config
        a = first.truncated(cfg.cap_first).tokens
        b = second.truncated(cfg.cap_second).tokens
        idx = [hash_bucket(t, cfg.buckets) for t in a + b]
        segs = [0] * len(a) + [1] * len(b)
        rows = tape.add(tape.gather_rows(self.table, idx),
                        tape.gather_rows(self.segments, segs))
        pooled = tape.mean_rows(rows)
        return tape.tanh(tape.affine(pooled, self.proj, self.bias))


def encode_query_document(tape: Tape, encoder: PairEncoder,
                          query: TokenSequence, document: TokenSequence) -> Tensor:
    """Joint vector for a query-document pair (query first, document second)."""
    return encoder.encode(tape, query, document)


def encode_entity(tape: Tape, encoder: PairEncoder,
                  label: TokenSequence, description: TokenSequence) -> Tensor:
    """Entity vector from its label (first slot) and description (second)."""
    return encoder.encode(tape, label, description)
