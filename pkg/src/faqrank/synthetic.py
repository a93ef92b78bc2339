"""Synthetic corpora for demos and desk-scale experiments.

A tiny constructed language: every topic owns a small lexicon of invented
content words built from shared syllables, glued together with Dutch-ish
function words. General paragraphs keep adjacent sentences on one topic,
conversational threads answer an interrogative root with declarative
replies, and FAQ questions/answers reuse the same topic lexicons — so
pre-training on the corpora genuinely transfers to the FAQ task.
"""

from __future__ import annotations

import numpy as np

from .evaluation import FaqDataset
from .pairs import CommentNode

SYLLABLES = [
    "ba", "do", "fi", "ga", "hu", "ka", "lo", "mi", "na", "po",
    "ra", "se", "ti", "vu", "wa", "zo", "ler", "mon", "tak", "vis",
]

FUNCTION_WORDS = [
    "de", "het", "een", "en", "van", "voor", "met", "bij", "ook", "dan",
    "hier", "daar", "altijd", "vaak", "soms", "gewoon",
]

QUESTION_OPENERS = ["wat", "hoe", "waar", "wanneer", "waarom", "welke"]

VERBS = ["is", "wordt", "blijft", "lijkt", "heet", "geeft", "krijgt", "vraagt"]

_LEXICON_SALT = 7919  # lexicons are fixed per topic, independent of sampling


def topic_lexicon(topic: int, size: int = 8) -> list[str]:
    # a signature first syllable keeps lexicons of different topics apart
    rng = np.random.default_rng(_LEXICON_SALT + topic)
    sig = SYLLABLES[topic % len(SYLLABLES)]
    words = set()
    while len(words) < size:
        words.add(sig + "".join(rng.choice(SYLLABLES) for _ in range(2)))
    return sorted(words)


def _statement(lex: list[str], rng: np.random.Generator) -> str:
    t = [lex[int(rng.integers(len(lex)))] for _ in range(3)]
    f = [FUNCTION_WORDS[int(rng.integers(len(FUNCTION_WORDS)))] for _ in range(3)]
    verb = VERBS[int(rng.integers(len(VERBS)))]
    forms = (
        f"{f[0]} {t[0]} {verb} {f[1]} {t[1]} {f[2]} {t[2]}",
        f"{f[0]} {t[0]} van {t[1]} {verb} {f[1]} {t[2]}",
        f"{t[0]} {verb} {f[0]} {t[1]} en {f[1]} {t[2]} {f[2]}",
    )
    s = forms[int(rng.integers(len(forms)))]
    return s[0].upper() + s[1:] + "."


def _question(lex: list[str], rng: np.random.Generator) -> str:
    t = [lex[int(rng.integers(len(lex)))] for _ in range(2)]
    opener = QUESTION_OPENERS[int(rng.integers(len(QUESTION_OPENERS)))]
    verb = VERBS[int(rng.integers(len(VERBS)))]
    f = FUNCTION_WORDS[int(rng.integers(len(FUNCTION_WORDS)))]
    forms = (
        f"{opener} {verb} {f} {t[0]} {t[1]}",
        f"{opener} {verb} {t[0]} bij {t[1]}",
        f"{opener} {f} {t[0]} {verb}",
    )
    s = forms[int(rng.integers(len(forms)))]
    return s[0].upper() + s[1:] + "?"


def synth_general_paragraphs(n_pairs: int, n_topics: int = 40, seed: int = 0) -> list[str]:
    """Paragraphs (one per line) whose adjacent sentences share a topic;
    splitting them yields at least `n_pairs` general pairs."""
    rng = np.random.default_rng(seed)
    lexicons = [topic_lexicon(t) for t in range(n_topics)]
    paragraphs = []
    pairs = 0
    while pairs < n_pairs:
        lex = lexicons[int(rng.integers(n_topics))]
        n_sentences = int(rng.integers(2, 5))
        paragraphs.append(" ".join(_statement(lex, rng) for _ in range(n_sentences)))
        pairs += n_sentences - 1
    return paragraphs


def _topic_words_in(text: str, lex: list[str]) -> list[str]:
    lower = text.lower()
    return [w for w in lex if w in lower]


def _reply(parent: str, lex: list[str], rng: np.random.Generator) -> str:
    """Declarative reply that echoes the parent's topic words, the way real
    answers repeat the question's terms."""
    echo = _topic_words_in(parent, lex)
    t1 = echo[int(rng.integers(len(echo)))] if echo else lex[int(rng.integers(len(lex)))]
    t2 = lex[int(rng.integers(len(lex)))]
    f = [FUNCTION_WORDS[int(rng.integers(len(FUNCTION_WORDS)))] for _ in range(2)]
    verb = VERBS[int(rng.integers(len(VERBS)))]
    forms = (
        f"{f[0]} {t1} {verb} {f[1]} {t2}",
        f"{t1} {verb} {f[0]} {t2} {f[1]}",
        f"{f[0]} {t2} van {t1} {verb} {f[1]}",
    )
    s = forms[int(rng.integers(len(forms)))]
    return s[0].upper() + s[1:] + "."


def synth_comment_nodes(n_pairs: int, n_topics: int = 40, seed: int = 0) -> list[CommentNode]:
    """Threads whose root asks about a topic and whose replies answer it;
    parent->child edges number at least `n_pairs`."""
    rng = np.random.default_rng(seed)
    lexicons = [topic_lexicon(t) for t in range(n_topics)]
    nodes = []
    edges = 0
    serial = 0
    while edges < n_pairs:
        lex = lexicons[int(rng.integers(n_topics))]
        root_id = f"c{serial}"
        serial += 1
        root_body = _question(lex, rng)
        nodes.append(CommentNode(id=root_id, parent_id=None, body=root_body))
        for _ in range(int(rng.integers(1, 4))):
            reply_id = f"c{serial}"
            serial += 1
            reply_body = _reply(root_body, lex, rng)
            nodes.append(CommentNode(id=reply_id, parent_id=root_id, body=reply_body))
            edges += 1
            # occasionally a follow-up under the reply
            if rng.random() < 0.25:
                sub_id = f"c{serial}"
                serial += 1
                nodes.append(CommentNode(id=sub_id, parent_id=reply_id,
                                         body=_reply(reply_body, lex, rng)))
                edges += 1
    return nodes


def synth_faq(n_answers: int = 30, questions_per_answer: int = 8, seed: int = 0) -> FaqDataset:
    """FAQ over topics 0..n_answers-1 (the same lexicons the corpora use).

    Questions borrow at least one content word from their answer's text,
    the way users quote the FAQ's own vocabulary."""
    rng = np.random.default_rng(seed)
    answers = {}
    rows = []
    for t in range(n_answers):
        lex = topic_lexicon(t)
        aid = f"a{t:03d}"
        text = f"{_statement(lex, rng)} {_statement(lex, rng)}"
        answers[aid] = text
        answer_words = _topic_words_in(text, lex) or lex
        seen = set()
        while len(seen) < questions_per_answer:
            anchor = answer_words[int(rng.integers(len(answer_words)))]
            other = lex[int(rng.integers(len(lex)))]
            opener = QUESTION_OPENERS[int(rng.integers(len(QUESTION_OPENERS)))]
            verb = VERBS[int(rng.integers(len(VERBS)))]
            f = FUNCTION_WORDS[int(rng.integers(len(FUNCTION_WORDS)))]
            forms = (
                f"{opener} {verb} {f} {anchor} {other}",
                f"{opener} {verb} {anchor} bij {other}",
                f"{opener} {f} {anchor} {verb}",
            )
            q = forms[int(rng.integers(len(forms)))]
            q = q[0].upper() + q[1:] + "?"
            if q not in seen:
                seen.add(q)
                rows.append((q, aid))
    return FaqDataset(answers=answers, rows=rows, provenance=f"synthetic seed={seed}")


def write_paragraphs(paragraphs: list[str], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in paragraphs:
            f.write(p + "\n")


def write_comment_nodes(nodes: list[CommentNode], path) -> None:
    import json

    with open(path, "w", encoding="utf-8") as f:
        for n in nodes:
            f.write(json.dumps(
                {"id": n.id, "parent_id": n.parent_id, "body": n.body},
                ensure_ascii=False,
            ) + "\n")


def write_faq(ds: FaqDataset, rows_path, answers_path) -> None:
    import json

    with open(answers_path, "w", encoding="utf-8") as f:
        for aid in sorted(ds.answers):
            f.write(json.dumps({"answer_id": aid, "text": ds.answers[aid]},
                               ensure_ascii=False) + "\n")
    with open(rows_path, "w", encoding="utf-8") as f:
        for q, aid in ds.rows:
            f.write(json.dumps({"question": q, "answer_id": aid},
                               ensure_ascii=False) + "\n")
