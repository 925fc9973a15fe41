"""Tokenization, n-gram bags and string similarity measures."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from difflib import SequenceMatcher
from typing import Sequence

import numpy as np

from .exceptions import FeatureError

CHANNELS = ("token", "lemma", "pos")

_TOKEN_RE = re.compile(
    r"""
    (?P<url>(?:https?://|www\.)\S+?)(?=[.,;:!?)\]"']*(?:\s|$))
    | (?P<email>[\w.+-]+@[\w-]+(?:\.[\w-]+)+)
    | (?P<word>\w+(?:'\w+)*)
    | (?P<punct>[^\w\s])
    """,
    re.VERBOSE | re.UNICODE,
)


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    lemmas: tuple[str, ...] | None = None
    pos_tags: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        for name in ("lemmas", "pos_tags"):
            value = getattr(self, name)
            if value is None:
                continue
            value = tuple(value)
            if len(value) != len(self.tokens):
                raise FeatureError(
                    f"{name} has length {len(value)} but there are {len(self.tokens)} tokens"
                )
            object.__setattr__(self, name, value)

    def __len__(self) -> int:
        return len(self.tokens)

    def channel(self, name: str) -> tuple[str, ...]:
        if name == "token":
            return self.tokens
        if name == "lemma":
            seq = self.lemmas
        elif name == "pos":
            seq = self.pos_tags
        else:
            raise FeatureError(f"unknown channel {name!r}")
        if seq is None:
            raise FeatureError("channel unavailable")
        return seq

    def has_channel(self, name: str) -> bool:
        return name == "token" or getattr(self, "lemmas" if name == "lemma" else "pos_tags") is not None


@dataclass(frozen=True)
class NgramBag:
    order: int
    counts: Counter = field(default_factory=Counter)

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def keys(self) -> set:
        return set(self.counts)


def tokenize(text: str) -> TokenSequence:
    """Lowercased word tokens; punctuation split off, URLs and emails kept whole."""
    return TokenSequence(tuple(m.group(0).lower() for m in _TOKEN_RE.finditer(text)))


def ngrams(seq: TokenSequence, order: int, channel: str = "token") -> NgramBag:
    if not 1 <= order <= 4:
        raise FeatureError(f"n-gram order must be in [1, 4], got {order}")
    items = seq.channel(channel)
    counts = Counter(tuple(items[k : k + order]) for k in range(len(items) - order + 1))
    return NgramBag(order, counts)


def _check_orders(a: NgramBag, b: NgramBag):
    if a.order != b.order:
        raise FeatureError(f"n-gram order mismatch: {a.order} vs {b.order}")


def jaccard(a: NgramBag, b: NgramBag) -> float:
    _check_orders(a, b)
    ka, kb = a.keys, b.keys
    union = len(ka | kb)
    return len(ka & kb) / union if union else 0.0


def containment(a: NgramBag, b: NgramBag) -> float:
    """Share of the distinct n-grams of ``a`` that also occur in ``b``."""
    _check_orders(a, b)
    ka = a.keys
    return len(ka & b.keys) / len(ka) if ka else 0.0


def cosine(a: NgramBag, b: NgramBag) -> float:
    _check_orders(a, b)
    if not a.counts or not b.counts:
        return 0.0
    small, large = sorted((a.counts, b.counts), key=len)
    dot = sum(v * large.get(k, 0) for k, v in small.items())
    norm = math.sqrt(sum(v * v for v in a.counts.values())) * math.sqrt(
        sum(v * v for v in b.counts.values())
    )
    return min(1.0, dot / norm)


def longest_common_substring_sim(a: str, b: str) -> float:
    if not a or not b:
        return 0.0
    match = SequenceMatcher(None, a, b, autojunk=False).find_longest_match(0, len(a), 0, len(b))
    return match.size / max(len(a), len(b))


def _encode(a: Sequence[str], b: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    vocab: dict[str, int] = {}
    ea = np.fromiter((vocab.setdefault(t, len(vocab)) for t in a), dtype=np.int64, count=len(a))
    eb = np.fromiter((vocab.setdefault(t, len(vocab)) for t in b), dtype=np.int64, count=len(b))
    return ea, eb


def greedy_string_tiling(
    a: Sequence[str], b: Sequence[str], min_match: int = 3
) -> list[tuple[int, int, int]]:
    """Tiles ``(start_a, start_b, length)`` picked longest-first.

    Ties between equally long candidate runs go to the leftmost start in
    ``a``, then in ``b``.  Tiles never overlap in either sequence.
    """
    if min_match < 1:
        raise FeatureError("min_match must be >= 1")
    if not a or not b:
        return []
    ea, eb = _encode(a, b)
    free_a = np.ones(len(a), dtype=bool)
    free_b = np.ones(len(b), dtype=bool)
    tiles = []
    while True:
        eq = (ea[:, None] == eb[None, :]) & free_a[:, None] & free_b[None, :]
        # run[p, q]: length of the common unmarked run starting at (p, q)
        run = np.zeros((len(a) + 1, len(b) + 1), dtype=np.int64)
        for p in range(len(a) - 1, -1, -1):
            run[p, :-1] = np.where(eq[p], run[p + 1, 1:] + 1, 0)
        best = int(run.max())
        if best < min_match:
            return tiles
        # argmax on the row-major flattening gives smallest p, then smallest q
        p, q = np.unravel_index(int(np.argmax(run)), run.shape)
        tiles.append((int(p), int(q), best))
        free_a[p : p + best] = False
        free_b[q : q + best] = False


def greedy_string_tiling_sim(a: TokenSequence, b: TokenSequence, min_match: int = 3) -> float:
    if min_match < 1:
        raise FeatureError("min_match must be >= 1")
    ta = a.tokens if isinstance(a, TokenSequence) else tuple(a)
    tb = b.tokens if isinstance(b, TokenSequence) else tuple(b)
    if not ta or not tb:
        return 0.0
    covered = sum(length for _, _, length in greedy_string_tiling(ta, tb, min_match))
    return covered / max(len(ta), len(tb))


def load_annotations(data: bytes) -> dict[str, TokenSequence]:
    """Read the annotation sidecar: JSONL records keyed by ``comment_id``.

    Each record carries ``tokens`` and optionally ``lemmas`` and ``pos``.
    Question annotations use the question id in the ``comment_id`` field
    (``question_id`` is accepted as an alias).
    """
    out: dict[str, TokenSequence] = {}
    for lineno, line in enumerate(data.decode("utf-8").split("\n"), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FeatureError(f"malformed annotation JSON at line {lineno}: {exc.msg}") from None
        key = rec.get("comment_id", rec.get("question_id"))
        if key is None or "tokens" not in rec:
            raise FeatureError(f"annotation line {lineno} needs comment_id and tokens")
        out[key] = TokenSequence(
            tuple(t.lower() for t in rec["tokens"]),
            tuple(t.lower() for t in rec["lemmas"]) if rec.get("lemmas") is not None else None,
            tuple(rec["pos"]) if rec.get("pos") is not None else None,
        )
    return out
