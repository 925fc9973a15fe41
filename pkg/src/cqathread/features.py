"""Feature extraction for the Good-vs-Bad and Same-vs-Different classifiers.

Feature vectors are plain ``dict[str, float]`` maps.  Names follow a
``group:detail`` scheme so vectors from different runs line up as long as
the :class:`FeatureConfig` is the same.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

from .corpus import Thread
from .exceptions import FeatureError
from .textsim import (
    TokenSequence,
    containment,
    cosine,
    greedy_string_tiling_sim,
    jaccard,
    longest_common_substring_sim,
    ngrams,
    tokenize,
)

FeatureVector = dict

# Qatar Living forum categories as they appear in QCATEGORY attributes.
DEFAULT_CATEGORIES = (
    "Advice and Help",
    "Beauty and Style",
    "Cars",
    "Computers and Internet",
    "Doha Shopping",
    "Education",
    "Electronics",
    "Environment",
    "Family Life in Qatar",
    "Funnies",
    "Health and Fitness",
    "Investment and Finance",
    "Language",
    "Moving to Qatar",
    "Opportunities",
    "Pets and Animals",
    "Politics",
    "Qatar Living Lounge",
    "Qatari Culture",
    "Salary and Allowances",
    "Sightseeing and Tourist attractions",
    "Socialising",
    "Sports in Qatar",
    "Visas and Permits",
    "Welcome to Qatar",
    "Working in Qatar",
)

DEFAULT_SIGNAL_WORDS = {
    "yes": ("yes", "yeah", "yep", "yup"),
    "sure": ("sure", "surely", "definitely", "certainly"),
    "no": ("no", "nope", "nah"),
    "neither": ("neither", "nor"),
    "okay": ("okay", "ok", "k", "alright"),
    "thanks": ("thanks", "thank", "thx", "ty"),
    "maybe": ("maybe", "perhaps", "probably"),
}

DEFAULT_ACK_WORDS = ("thanks", "thank", "thankyou", "appreciated")

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_EMAIL_RE = re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")
_WORD_RE = re.compile(r"[^\W\d_]+")

SIM_MEASURES = ("jaccard", "containment", "cosine")


@dataclass(frozen=True)
class FeatureConfig:
    ngram_orders: tuple[int, ...] = (1, 2, 3, 4)
    gst_min_match: int = 3
    category_vocabulary: tuple[str, ...] = DEFAULT_CATEGORIES
    signal_words: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_SIGNAL_WORDS)
    )
    ack_words: tuple[str, ...] = DEFAULT_ACK_WORDS
    long_word_threshold: int = 15
    chain_gap: int = 3
    prediction_threshold: float = 0.5

    def __post_init__(self):
        orders = tuple(sorted(set(self.ngram_orders)))
        if not orders or any(not 1 <= k <= 4 for k in orders):
            raise FeatureError(f"ngram_orders must be a non-empty subset of 1..4, got {orders}")
        object.__setattr__(self, "ngram_orders", orders)
        object.__setattr__(self, "category_vocabulary", tuple(self.category_vocabulary))
        object.__setattr__(self, "ack_words", tuple(self.ack_words))
        object.__setattr__(
            self, "signal_words", {k: tuple(v) for k, v in dict(self.signal_words).items()}
        )
        if self.gst_min_match < 1:
            raise FeatureError("gst_min_match must be >= 1")
        if self.chain_gap < 0:
            raise FeatureError("chain_gap must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ngram_orders"] = list(self.ngram_orders)
        d["category_vocabulary"] = list(self.category_vocabulary)
        d["ack_words"] = list(self.ack_words)
        d["signal_words"] = {k: list(v) for k, v in self.signal_words.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureConfig":
        d = dict(d)
        for key in ("ngram_orders", "category_vocabulary", "ack_words"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class DialogueChains:
    """Conversation chains as ``((user_a, user_b), positions)`` with 0-based positions."""

    chains: tuple[tuple[tuple[str, str], tuple[int, ...]], ...]

    def __len__(self) -> int:
        return len(self.chains)

    def __iter__(self):
        return iter(self.chains)


def build_dialogue_chains(thread: Thread, gap: int = 3) -> DialogueChains:
    """Group the comments of each author pair into conversation chains.

    For every unordered pair of distinct authors, their comments are taken in
    thread order and split wherever more than ``gap`` positions by other
    authors intervene.  A segment is a chain when both users post in it.
    """
    authors = [c.author_id for c in thread.comments]
    users = sorted(set(authors))
    chains = []
    for u, v in combinations(users, 2):
        positions = [k for k, a in enumerate(authors) if a == u or a == v]
        segment: list[int] = []
        for pos in positions:
            if segment and pos - segment[-1] - 1 > gap:
                chains.extend(_close(segment, authors, u, v))
                segment = []
            segment.append(pos)
        chains.extend(_close(segment, authors, u, v))
    chains.sort(key=lambda ch: (ch[1][0], ch[1], ch[0]))
    return DialogueChains(tuple(chains))


def _close(segment, authors, u, v):
    if len(segment) >= 2 and {authors[k] for k in segment} == {u, v}:
        return [((u, v), tuple(segment))]
    return []


class _Text:
    """Tokens and text of one question or comment, with channel fallbacks."""

    __slots__ = ("raw", "seq", "has_lemma", "has_pos", "_bags")

    def __init__(self, raw: str, seq: TokenSequence):
        self.raw = raw
        self.seq = seq
        self.has_lemma = seq.lemmas is not None
        self.has_pos = seq.pos_tags is not None
        self._bags: dict = {}

    def bag(self, channel: str, order: int):
        key = (channel, order)
        if key not in self._bags:
            if channel == "lemma" and not self.has_lemma:
                self._bags[key] = ngrams(self.seq, order, "token")
            else:
                self._bags[key] = ngrams(self.seq, order, channel)
        return self._bags[key]


def _make_text(raw: str, key: str, annotations: Mapping[str, TokenSequence] | None) -> _Text:
    seq = annotations.get(key) if annotations else None
    return _Text(raw, seq if seq is not None else tokenize(raw))


def _similarities(a: _Text, b: _Text, cfg: FeatureConfig, prefix: str, symmetric: bool) -> dict:
    out = {}
    pos_ok = a.has_pos and b.has_pos
    for channel in ("token", "lemma", "pos"):
        for order in cfg.ngram_orders:
            if channel == "pos" and not pos_ok:
                values = dict.fromkeys(SIM_MEASURES, 0.0)
                if symmetric:
                    values = {"jaccard": 0.0, "cosine": 0.0, "containment_min": 0.0, "containment_max": 0.0}
            else:
                ba, bb = a.bag(channel, order), b.bag(channel, order)
                if symmetric:
                    ab, ba_ = containment(ba, bb), containment(bb, ba)
                    values = {
                        "jaccard": jaccard(ba, bb),
                        "cosine": cosine(ba, bb),
                        "containment_min": min(ab, ba_),
                        "containment_max": max(ab, ba_),
                    }
                else:
                    values = {
                        "jaccard": jaccard(ba, bb),
                        "containment": containment(ba, bb),
                        "cosine": cosine(ba, bb),
                    }
            for measure, value in values.items():
                out[f"{prefix}:{measure}:{channel}:{order}"] = float(value)
    out[f"{prefix}:lcs"] = longest_common_substring_sim(a.raw.lower(), b.raw.lower())
    out[f"{prefix}:gst"] = greedy_string_tiling_sim(a.seq, b.seq, cfg.gst_min_match)
    return out


def _is_question(text: str) -> bool:
    return "?" in text


class _ThreadContext:
    """Per-thread data shared by the features of all its comments."""

    def __init__(self, thread: Thread, cfg: FeatureConfig, annotations=None):
        self.thread = thread
        self.cfg = cfg
        self.n = len(thread.comments)
        self.question = _make_text(thread.text, thread.question_id, annotations)
        self.comments = [_make_text(c.text, c.comment_id, annotations) for c in thread.comments]
        self.lower_tokens = [set(t.seq.tokens) for t in self.comments]
        self.ack = set(cfg.ack_words)
        self.authors = [c.author_id for c in thread.comments]
        self.chains = build_dialogue_chains(thread, cfg.chain_gap)
        self.missing_pos = not self.question.has_pos or not all(t.has_pos for t in self.comments)

    def has_ack(self, k: int) -> bool:
        return bool(self.lower_tokens[k] & self.ack)


def _signal_features(thread: Thread, k: int, ctx: _ThreadContext) -> dict:
    cfg = ctx.cfg
    comment = thread.comments[k]
    text = comment.body
    tokens = ctx.comments[k].seq.tokens
    words = set(tokens)
    f = {
        "bool:has_url": float(bool(_URL_RE.search(text))),
        "bool:has_email": float(bool(_EMAIL_RE.search(text))),
        "bool:has_question_mark": float("?" in text),
        "bool:has_at": float("@" in text),
    }
    for name, vocab in sorted(cfg.signal_words.items()):
        f[f"bool:word_{name}"] = float(bool(words.intersection(vocab)))
    first_word = next((t for t in tokenize(text).tokens if _WORD_RE.fullmatch(t)), "")
    f["bool:starts_with_yes"] = float(first_word in cfg.signal_words.get("yes", ("yes",)))
    f["bool:long_word"] = float(
        any(len(w) > cfg.long_word_threshold for w in _WORD_RE.findall(text))
    )
    return f


def _category_features(thread: Thread, cfg: FeatureConfig) -> dict:
    return {
        f"cat:{name}": float(thread.category == name) for name in cfg.category_vocabulary
    }


def _same_user_features(thread: Thread, k: int, ctx: _ThreadContext) -> dict:
    comment = thread.comments[k]
    same = bool(thread.asker_id) and comment.author_id == thread.asker_id
    first_by_asker = same and all(
        a != thread.asker_id for a in ctx.authors[:k]
    )
    return {
        "same_user:any": float(same),
        "same_user:question": float(same and _is_question(comment.body)),
        "same_user:ack": float(same and ctx.has_ack(k)),
        "same_user:first": float(first_by_asker),
    }


def _asker_proximity(thread: Thread, k: int, ctx: _ThreadContext) -> dict:
    asker = thread.asker_id
    later = [m for m in range(k + 1, ctx.n) if asker and ctx.authors[m] == asker]
    earlier = [m for m in range(k) if asker and ctx.authors[m] == asker]
    body = lambda m: thread.comments[m].body  # noqa: E731
    return {
        "asker:ack_follows": float(any(ctx.has_ack(m) for m in later)),
        "asker:nonack_follows": float(any(not ctx.has_ack(m) for m in later)),
        "asker:question_follows": float(any(_is_question(body(m)) for m in later)),
        "asker:question_precedes": float(any(_is_question(body(m)) for m in earlier)),
    }


def _chain_features(thread: Thread, k: int, ctx: _ThreadContext) -> dict:
    f = {}
    for scope in ("any", "asker"):
        begin = middle = end = False
        for users, positions in ctx.chains:
            if scope == "asker" and thread.asker_id not in users:
                continue
            if k not in positions:
                continue
            if k == positions[0]:
                begin = True
            elif k == positions[-1]:
                end = True
            else:
                middle = True
        f[f"chain:{scope}:begin"] = float(begin)
        f[f"chain:{scope}:middle"] = float(middle)
        f[f"chain:{scope}:end"] = float(end)
    return f


def _author_features(k: int, ctx: _ThreadContext) -> dict:
    author = ctx.authors[k]
    mine = [m for m, a in enumerate(ctx.authors) if a == author]
    multi = len(mine) > 1
    return {
        "author:multiple": float(multi),
        "author:first": float(multi and k == mine[0]),
        "author:middle": float(multi and mine[0] < k < mine[-1]),
        "author:last": float(multi and k == mine[-1]),
        "author:count": float(len(mine)),
    }


def _local_vector(thread: Thread, k: int, ctx: _ThreadContext) -> FeatureVector:
    cfg = ctx.cfg
    comment_text = ctx.comments[k]
    f = _similarities(ctx.question, comment_text, cfg, "sim", symmetric=False)
    f.update(_signal_features(thread, k, ctx))
    f.update(_category_features(thread, cfg))
    f.update(_same_user_features(thread, k, ctx))
    n_tokens = len(comment_text.seq)
    f["len:tokens"] = float(n_tokens)
    f["len:chars"] = float(len(thread.comments[k].body))
    f["len:log_tokens"] = math.log1p(n_tokens)
    f.update(_asker_proximity(thread, k, ctx))
    f.update(_chain_features(thread, k, ctx))
    f.update(_author_features(k, ctx))
    f["position:raw"] = float(k + 1)
    f["position:norm"] = (k + 1) / ctx.n
    return f


def _warn_pos(ctx: _ThreadContext):
    if ctx.missing_pos:
        warnings.warn(
            "POS annotations unavailable; POS n-gram similarity features are set to 0",
            stacklevel=3,
        )


def extract_local_features(
    thread: Thread,
    i: int,
    cfg: FeatureConfig | None = None,
    annotations: Mapping[str, TokenSequence] | None = None,
) -> FeatureVector:
    """Good-vs-Bad features for comment ``i`` (0-based) of ``thread``."""
    cfg = cfg or FeatureConfig()
    if not 0 <= i < len(thread.comments):
        raise FeatureError(f"comment index {i} out of range for thread of {len(thread.comments)}")
    ctx = _ThreadContext(thread, cfg, annotations)
    _warn_pos(ctx)
    return _local_vector(thread, i, ctx)


def thread_local_features(
    thread: Thread,
    cfg: FeatureConfig | None = None,
    annotations: Mapping[str, TokenSequence] | None = None,
) -> list[FeatureVector]:
    """Local feature vectors for every comment of ``thread``, in order."""
    cfg = cfg or FeatureConfig()
    ctx = _ThreadContext(thread, cfg, annotations)
    _warn_pos(ctx)
    return [_local_vector(thread, k, ctx) for k in range(ctx.n)]


def _prediction_features(p_i: float, p_j: float, threshold: float) -> dict:
    good_i, good_j = p_i >= threshold, p_j >= threshold
    return {
        "pred:s_i": float(p_i),
        "pred:s_j": float(p_j),
        "pred:product": float(p_i * p_j),
        "pred:i_good": float(good_i),
        "pred:j_good": float(good_j),
        "pred:i_bad": float(not good_i),
        "pred:j_bad": float(not good_j),
        "pred:identical": float(good_i == good_j),
    }


def _pair_vector(a: _Text, b: _Text, v_i, v_j, p_i, p_j, cfg) -> FeatureVector:
    f = {}
    for name in sorted(set(v_i) | set(v_j)):
        f[f"diff:{name}"] = abs(v_i.get(name, 0.0) - v_j.get(name, 0.0))
    f.update(_similarities(a, b, cfg, "pair", symmetric=True))
    f.update(_prediction_features(p_i, p_j, cfg.prediction_threshold))
    return f


def extract_pairwise_features(
    thread: Thread,
    i: int,
    j: int,
    local_vecs: Sequence[FeatureVector],
    local_preds: Sequence[float],
    cfg: FeatureConfig | None = None,
    annotations: Mapping[str, TokenSequence] | None = None,
) -> FeatureVector:
    """Same-vs-Different features for the comment pair ``i < j`` (0-based).

    ``local_preds`` holds each comment's predicted probability of Good.
    Pairwise text similarity is computed on the comment bodies.
    """
    cfg = cfg or FeatureConfig()
    n = len(thread.comments)
    if not 0 <= i < j < n:
        raise FeatureError(f"pair ({i}, {j}) must satisfy 0 <= i < j < {n}")
    if len(local_vecs) != n or len(local_preds) != n:
        raise FeatureError("local_vecs and local_preds must have one entry per comment")
    ci, cj = thread.comments[i], thread.comments[j]
    a = _make_text(ci.body, ci.comment_id, annotations)
    b = _make_text(cj.body, cj.comment_id, annotations)
    return _pair_vector(a, b, local_vecs[i], local_vecs[j], local_preds[i], local_preds[j], cfg)


def thread_pairwise_features(
    thread: Thread,
    local_vecs: Sequence[FeatureVector],
    local_preds: Sequence[float],
    cfg: FeatureConfig | None = None,
    annotations: Mapping[str, TokenSequence] | None = None,
) -> dict[tuple[int, int], FeatureVector]:
    """Pairwise vectors for all ``i < j`` of one thread."""
    cfg = cfg or FeatureConfig()
    texts = [_make_text(c.body, c.comment_id, annotations) for c in thread.comments]
    return {
        (i, j): _pair_vector(
            texts[i], texts[j], local_vecs[i], local_vecs[j], local_preds[i], local_preds[j], cfg
        )
        for i, j in combinations(range(len(thread.comments)), 2)
    }


def format_sparse(vec: FeatureVector) -> str:
    """Debug export: one ``name:value`` line per feature, sorted by name."""
    return "\n".join(f"{name}:{vec[name]!r}" for name in sorted(vec))
