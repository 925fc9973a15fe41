"""Loading and normalizing CQA thread datasets.

Two input formats are supported: the SemEval CQA-QL XML release and a
canonical JSONL format (one thread per line).  Raw comment labels are
mapped to the binary Good/Bad scheme through a :class:`LabelMapping`;
comments mapped to ``Drop`` are removed from their thread.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .exceptions import CorpusError

GOOD = "Good"
BAD = "Bad"
UNKNOWN = "Unknown"
DROP = "Drop"

LABELS = (GOOD, BAD)
SPLITS = ("train", "dev", "test", "unlabeled")

_DEFAULT_MAP = {
    "Good": GOOD,
    "Bad": BAD,
    "Potential": BAD,
    "PotentiallyUseful": BAD,
    "Dialogue": BAD,
    "Not English": BAD,
    "Other": BAD,
}


@dataclass(frozen=True)
class Comment:
    comment_id: str
    author_id: str
    subject: str
    body: str
    gold_label: str = UNKNOWN
    raw_label: str = ""
    timestamp: str | None = None

    @property
    def text(self) -> str:
        """Subject and body joined by a newline."""
        if self.subject:
            return f"{self.subject}\n{self.body}"
        return self.body


@dataclass(frozen=True)
class Thread:
    question_id: str
    category: str
    asker_id: str
    subject: str
    body: str
    comments: tuple[Comment, ...] = ()
    timestamp: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "comments", tuple(self.comments))

    def __len__(self) -> int:
        return len(self.comments)

    @property
    def text(self) -> str:
        if self.subject:
            return f"{self.subject}\n{self.body}"
        return self.body

    @property
    def gold_labels(self) -> list[str]:
        return [c.gold_label for c in self.comments]

    @property
    def is_labeled(self) -> bool:
        return all(c.gold_label != UNKNOWN for c in self.comments)


@dataclass(frozen=True)
class Dataset:
    split: str
    threads: tuple[Thread, ...] = ()

    def __post_init__(self):
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r}; expected one of {SPLITS}")
        object.__setattr__(self, "threads", tuple(self.threads))
        seen = set()
        for t in self.threads:
            if t.question_id in seen:
                raise CorpusError(f"duplicate question id {t.question_id!r}")
            seen.add(t.question_id)

    def __len__(self) -> int:
        return len(self.threads)

    def __iter__(self):
        return iter(self.threads)


@dataclass(frozen=True)
class LabelMapping:
    """Total map from raw source labels to ``Good``, ``Bad`` or ``Drop``."""

    map: Mapping[str, str] = field(default_factory=lambda: dict(_DEFAULT_MAP))

    def __post_init__(self):
        for raw, target in self.map.items():
            if target not in (GOOD, BAD, DROP):
                raise CorpusError(
                    f"label {raw!r} mapped to {target!r}; targets must be Good, Bad or Drop"
                )

    @classmethod
    def default(cls) -> "LabelMapping":
        return cls()

    @classmethod
    def parse(cls, text: str, base: "LabelMapping | None" = None) -> "LabelMapping":
        """Parse ``raw=target`` lines; ``#`` starts a comment."""
        entries = dict(base.map) if base is not None else {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CorpusError(f"mapping line {lineno}: expected raw=target, got {line!r}")
            raw, target = (part.strip() for part in line.split("=", 1))
            entries[raw] = target
        return cls(entries)

    def apply(self, raw: str, comment_id: str) -> str:
        try:
            return self.map[raw]
        except KeyError:
            raise CorpusError(
                f"unmapped label {raw!r} on comment {comment_id!r}"
            ) from None


@dataclass(frozen=True)
class DatasetStats:
    question_count: int
    comment_count: int
    label_counts: dict[str, int]

    def as_dict(self) -> dict:
        return {
            "question_count": self.question_count,
            "comment_count": self.comment_count,
            "label_counts": dict(self.label_counts),
        }


def _compile_signatures(patterns: Iterable[str]) -> list[re.Pattern]:
    return [re.compile(p, re.MULTILINE) for p in patterns]


def _strip(body: str, compiled: Sequence[re.Pattern]) -> str:
    for rx in compiled:
        body = rx.sub("", body)
    return body.strip() if compiled else body


def _finish_thread(thread: Thread) -> Thread:
    if not thread.comments:
        raise CorpusError(f"thread {thread.question_id!r} has no comments")
    ids = [c.comment_id for c in thread.comments]
    dup = [cid for cid, k in Counter(ids).items() if k > 1]
    if dup:
        raise CorpusError(f"duplicate comment id {dup[0]!r} in thread {thread.question_id!r}")
    return thread


def _byte_offset(data: bytes, line: int, column: int) -> int:
    lines = data.split(b"\n")
    return sum(len(chunk) + 1 for chunk in lines[: line - 1]) + column


def _child_text(elem: ET.Element, *tags: str) -> str:
    for tag in tags:
        child = elem.find(tag)
        if child is not None:
            return "".join(child.itertext()).strip()
    return ""


def parse_semeval_xml(
    data: bytes,
    mapping: LabelMapping | None = None,
    split: str = "train",
    signature_patterns: Iterable[str] = (),
) -> Dataset:
    """Parse a SemEval CQA-QL XML file.

    Both the 2015 layout (``Question``/``Comment`` with ``CGOLD``) and the
    2016 layout (``Thread``/``RelQuestion``/``RelComment`` with
    ``RELC_RELEVANCE2RELQ``) are recognized.  Unknown attributes are ignored.
    """
    mapping = mapping or LabelMapping.default()
    compiled = _compile_signatures(signature_patterns)
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise CorpusError(
            f"malformed XML at byte offset {_byte_offset(data, line, col)}: {exc}"
        ) from None

    threads = []
    for q in root.iter("Question"):
        threads.append(_parse_2015_question(q, mapping, compiled))
    for t in root.iter("Thread"):
        threads.append(_parse_2016_thread(t, mapping, compiled))
    return Dataset(split, threads)


def _parse_2015_question(q, mapping, compiled) -> Thread:
    qid = q.get("QID")
    if not qid:
        raise CorpusError("Question element without QID attribute")
    comments = []
    for c in q.findall("Comment"):
        cid = c.get("CID") or ""
        if not cid:
            raise CorpusError(f"Comment without CID in question {qid!r}")
        raw = c.get("CGOLD")
        if raw is None:
            raise CorpusError(f"comment {cid!r} has no CGOLD label")
        gold = mapping.apply(raw, cid)
        if gold == DROP:
            continue
        comments.append(
            Comment(
                comment_id=cid,
                author_id=c.get("CUSERID", ""),
                subject=_child_text(c, "CSubject"),
                body=_strip(_child_text(c, "CBody"), compiled),
                gold_label=gold,
                raw_label=raw,
                timestamp=c.get("CDATE"),
            )
        )
    return _finish_thread(
        Thread(
            question_id=qid,
            category=q.get("QCATEGORY", ""),
            asker_id=q.get("QUSERID", ""),
            subject=_child_text(q, "QSubject"),
            body=_child_text(q, "QBody"),
            comments=comments,
            timestamp=q.get("QDATE"),
        )
    )


def _parse_2016_thread(t, mapping, compiled) -> Thread:
    rq = t.find("RelQuestion")
    if rq is None:
        raise CorpusError("Thread element without RelQuestion")
    qid = rq.get("RELQ_ID") or t.get("THREAD_SEQUENCE")
    if not qid:
        raise CorpusError("RelQuestion without RELQ_ID attribute")
    comments = []
    for c in t.findall("RelComment"):
        cid = c.get("RELC_ID") or ""
        if not cid:
            raise CorpusError(f"RelComment without RELC_ID in question {qid!r}")
        raw = c.get("RELC_RELEVANCE2RELQ")
        if raw is None:
            raise CorpusError(f"comment {cid!r} has no RELC_RELEVANCE2RELQ label")
        gold = mapping.apply(raw, cid)
        if gold == DROP:
            continue
        comments.append(
            Comment(
                comment_id=cid,
                author_id=c.get("RELC_USERID", ""),
                subject="",
                body=_strip(_child_text(c, "RelCClean", "RelCText"), compiled),
                gold_label=gold,
                raw_label=raw,
                timestamp=c.get("RELC_DATE"),
            )
        )
    return _finish_thread(
        Thread(
            question_id=qid,
            category=rq.get("RELQ_CATEGORY", ""),
            asker_id=rq.get("RELQ_USERID", ""),
            subject=_child_text(rq, "RelQSubject"),
            body=_child_text(rq, "RelQClean", "RelQBody"),
            comments=comments,
            timestamp=rq.get("RELQ_DATE"),
        )
    )


_THREAD_FIELDS = ("question_id", "category", "asker_id", "subject", "body", "comments")
_COMMENT_FIELDS = ("comment_id", "author_id", "subject", "body")


def _require(obj: dict, name: str, lineno: int, types=str):
    if name not in obj:
        raise CorpusError(f"missing field {name} at line {lineno}")
    value = obj[name]
    if not isinstance(value, types):
        raise CorpusError(f"field {name} at line {lineno} has type {type(value).__name__}")
    return value


def parse_jsonl(
    data: bytes,
    mapping: LabelMapping | None = None,
    split: str = "unlabeled",
    signature_patterns: Iterable[str] = (),
) -> Dataset:
    """Parse the canonical JSONL format; an omitted ``label`` means Unknown.

    ``label`` goes through ``mapping``; the optional ``raw_label`` only
    records the source annotation and defaults to ``label``.
    """
    mapping = mapping or LabelMapping.default()
    compiled = _compile_signatures(signature_patterns)
    threads = []
    seen: set[str] = set()
    for lineno, line in enumerate(data.decode("utf-8").split("\n"), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"malformed JSON at line {lineno}: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise CorpusError(f"line {lineno} is not a JSON object")
        for name in _THREAD_FIELDS[:-1]:
            _require(obj, name, lineno)
        raw_comments = _require(obj, "comments", lineno, list)
        comments = []
        for c in raw_comments:
            if not isinstance(c, dict):
                raise CorpusError(f"comment entry at line {lineno} is not an object")
            for name in _COMMENT_FIELDS:
                _require(c, name, lineno)
            label = c.get("label")
            if label is None:
                gold, raw = UNKNOWN, ""
            else:
                gold = mapping.apply(label, c["comment_id"])
                if gold == DROP:
                    continue
                raw = c.get("raw_label", label)
            comments.append(
                Comment(
                    comment_id=c["comment_id"],
                    author_id=c["author_id"],
                    subject=c["subject"],
                    body=_strip(c["body"], compiled),
                    gold_label=gold,
                    raw_label=raw,
                    timestamp=c.get("timestamp"),
                )
            )
        qid = obj["question_id"]
        if qid in seen:
            raise CorpusError(f"duplicate question id {qid!r} at line {lineno}")
        seen.add(qid)
        threads.append(
            _finish_thread(
                Thread(
                    question_id=qid,
                    category=obj["category"],
                    asker_id=obj["asker_id"],
                    subject=obj["subject"],
                    body=obj["body"],
                    comments=comments,
                    timestamp=obj.get("timestamp"),
                )
            )
        )
    return Dataset(split, threads)


def thread_to_dict(thread: Thread) -> dict:
    out = {
        "question_id": thread.question_id,
        "category": thread.category,
        "asker_id": thread.asker_id,
        "subject": thread.subject,
        "body": thread.body,
    }
    if thread.timestamp is not None:
        out["timestamp"] = thread.timestamp
    comments = []
    for c in thread.comments:
        entry = {
            "comment_id": c.comment_id,
            "author_id": c.author_id,
            "subject": c.subject,
            "body": c.body,
        }
        if c.gold_label != UNKNOWN:
            entry["label"] = c.gold_label
            if c.raw_label and c.raw_label != c.gold_label:
                entry["raw_label"] = c.raw_label
        if c.timestamp is not None:
            entry["timestamp"] = c.timestamp
        comments.append(entry)
    out["comments"] = comments
    return out


def serialize_jsonl(ds: Dataset | Iterable[Thread]) -> bytes:
    lines = [json.dumps(thread_to_dict(t), ensure_ascii=False) for t in ds]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def dataset_stats(ds: Dataset | Iterable[Thread]) -> DatasetStats:
    threads = list(ds)
    counts = Counter(c.gold_label for t in threads for c in t.comments)
    label_counts = {GOOD: counts.get(GOOD, 0), BAD: counts.get(BAD, 0)}
    if counts.get(UNKNOWN):
        label_counts[UNKNOWN] = counts[UNKNOWN]
    return DatasetStats(
        question_count=len(threads),
        comment_count=sum(len(t.comments) for t in threads),
        label_counts=label_counts,
    )


def strip_signatures(ds: Dataset, patterns: Iterable[str]) -> Dataset:
    """Return a copy of ``ds`` with signature regexes removed from comment bodies."""
    compiled = _compile_signatures(patterns)
    if not compiled:
        return ds
    threads = [
        replace(t, comments=[replace(c, body=_strip(c.body, compiled)) for c in t.comments])
        for t in ds
    ]
    return Dataset(ds.split, threads)


def load_dataset(
    path,
    fmt: str = "jsonl",
    mapping: LabelMapping | None = None,
    split: str = "unlabeled",
    signature_patterns: Iterable[str] = (),
) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if fmt == "jsonl":
        return parse_jsonl(data, mapping, split, signature_patterns)
    if fmt == "semeval-xml":
        return parse_semeval_xml(data, mapping, split, signature_patterns)
    raise CorpusError(f"unknown dataset format {fmt!r}")
