"""Build pre-training pairs: adjacent sentences from raw text, and
parent/child comment pairs from threaded discussions.

Both producers are streaming generators; nothing buffers the input corpus.
General pairs whose combined character length falls below `min_chars`
(default 64, counting input + response) are dropped.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import DataError

MIN_PAIR_CHARS = 64

# Dot-terminated tokens that do not end a sentence.
ABBREVIATIONS = {
    "dhr.", "mevr.", "dr.", "prof.", "ir.", "mr.", "st.", "nr.", "o.a.",
    "e.g.", "i.e.", "etc.", "ca.", "bijv.", "evt.", "resp.", "jl.", "a.s.",
    "vs.", "p.", "art.", "afb.", "tel.",
}

@dataclass(frozen=True)
class UtterancePair:
    """One (input, response) training pair."""

    input: str
    response: str
    source: str  # general | conversational | faq

    def combined_length(self) -> int:
        return len(self.input) + len(self.response)


@dataclass
class CommentNode:
    id: str
    parent_id: str | None
    body: str


_BOUNDARY_RE = re.compile(r"[.!?]\s+")


def split_sentences(paragraph: str) -> list[str]:
    """Rule-based sentence split.

    Splits after . ! ? when followed by whitespace and an uppercase letter
    or digit, unless the terminated token is a known abbreviation.
    """
    text = paragraph.strip()
    if not text:
        return []
    sentences = []
    start = 0
    for m in _BOUNDARY_RE.finditer(text):
        nxt = m.end()
        if nxt >= len(text):
            break
        ch = text[nxt]
        if not (ch.isupper() or ch.isdigit()):
            continue
        end = m.start() + 1  # keep the terminator with the left sentence
        if text[m.start()] == ".":
            last_token = text[start:end].split()[-1].lower()
            if last_token in ABBREVIATIONS:
                continue
        sentence = text[start:end].strip()
        if sentence:
            sentences.append(sentence)
        start = nxt
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def _pair_digest(a: str, b: str) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(a.encode("utf-8"))
    h.update(b"\x00")
    h.update(b.encode("utf-8"))
    return h.digest()


def make_general_pairs(
    paragraphs: Iterable[str],
    min_chars: int = MIN_PAIR_CHARS,
    dedup: bool = True,
) -> Iterator[UtterancePair]:
    """Adjacent-sentence pairs within each paragraph.

    Sentence i is the input, sentence i+1 the response. Pairs shorter than
    `min_chars` combined are dropped. Exact duplicates are dropped when
    `dedup` is on (the digest set grows with the number of unique pairs).
    """
    seen: set[bytes] = set()
    for paragraph in paragraphs:
        sentences = split_sentences(paragraph)
        for a, b in zip(sentences, sentences[1:]):
            if len(a) + len(b) < min_chars:
                continue
            if dedup:
                d = _pair_digest(a, b)
                if d in seen:
                    continue
                seen.add(d)
            yield UtterancePair(input=a, response=b, source="general")


_DELETED_BODIES = {"", "[deleted]", "[removed]"}


def _clean_body(body: str) -> str:
    body = " ".join(body.split())
    return "" if body.lower() in _DELETED_BODIES else body


def make_conversational_pairs(nodes: list[CommentNode]) -> Iterator[UtterancePair]:
    """One pair per parent -> child edge of the comment forest.

    Parent body is the input, child body the response; deleted or empty
    bodies drop the edge. A cycle in the parent references is a data error.
    """
    by_id = {n.id: n for n in nodes}
    if len(by_id) != len(nodes):
        raise DataError("duplicate comment ids")

    # cycle check: walk each node to a root, marking visited chains
    state: dict[str, int] = {}  # 0 in-progress, 1 done
    for n in nodes:
        path = []
        cur: CommentNode | None = n
        while cur is not None:
            mark = state.get(cur.id)
            if mark == 1:
                break
            if mark == 0:
                raise DataError(f"cycle in comment parents at id {cur.id!r}")
            state[cur.id] = 0
            path.append(cur.id)
            cur = by_id.get(cur.parent_id) if cur.parent_id is not None else None
        for pid in path:
            state[pid] = 1

    for n in nodes:
        if n.parent_id is None:
            continue
        parent = by_id.get(n.parent_id)
        if parent is None:
            continue  # orphan: treated as a root
        inp = _clean_body(parent.body)
        resp = _clean_body(n.body)
        if inp and resp:
            yield UtterancePair(input=inp, response=resp, source="conversational")


@dataclass
class DatasetStats:
    count: int = 0
    input_char_hist: Counter = field(default_factory=Counter)
    response_char_hist: Counter = field(default_factory=Counter)
    input_token_hist: Counter = field(default_factory=Counter)
    response_token_hist: Counter = field(default_factory=Counter)

    def summary(self) -> dict:
        def describe(hist: Counter) -> dict:
            if not hist:
                return {"min": 0, "max": 0, "mean": 0.0}
            total = sum(hist.values())
            mean = sum(k * v for k, v in hist.items()) / total
            return {"min": min(hist), "max": max(hist), "mean": round(mean, 2)}

        return {
            "count": self.count,
            "input_chars": describe(self.input_char_hist),
            "response_chars": describe(self.response_char_hist),
            "input_tokens": describe(self.input_token_hist),
            "response_tokens": describe(self.response_token_hist),
        }


def dataset_stats(pairs: Iterable[UtterancePair]) -> DatasetStats:
    """Exact pair count plus per-side length distributions.

    Token counts are whitespace tokens (subword counting needs a vocabulary
    and belongs to the tokenizer)."""
    stats = DatasetStats()
    for p in pairs:
        stats.count += 1
        stats.input_char_hist[len(p.input)] += 1
        stats.response_char_hist[len(p.response)] += 1
        stats.input_token_hist[len(p.input.split())] += 1
        stats.response_token_hist[len(p.response.split())] += 1
    return stats


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def write_pairs(pairs: Iterable[UtterancePair], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(json.dumps(
                {"input": p.input, "response": p.response, "source": p.source},
                ensure_ascii=False,
            ))
            f.write("\n")
            n += 1
    return n


def read_pairs(path) -> Iterator[UtterancePair]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            yield UtterancePair(
                input=rec["input"], response=rec["response"],
                source=rec.get("source", "general"),
            )


def read_comment_nodes(path) -> list[CommentNode]:
    nodes = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            nodes.append(CommentNode(
                id=str(rec["id"]),
                parent_id=None if rec.get("parent_id") is None else str(rec["parent_id"]),
                body=rec.get("body", ""),
            ))
    return nodes


def read_paragraphs(paths: list) -> Iterator[str]:
    """One paragraph per line; directories expand to their sorted *.txt
    files."""
    from pathlib import Path

    files = []
    for path in paths:
        p = Path(path)
        if p.is_dir():
            files.extend(sorted(p.glob("*.txt")))
        else:
            files.append(p)
    for path in files:
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    yield line
