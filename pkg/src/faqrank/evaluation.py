"""FAQ evaluation: split generation of increasing size, accuracy@1 against
the full answer set, a lexical TF-IDF baseline, and the variant-by-split
experiment grid.

Ties are always broken toward the lowest answer_id, so every metric here is
deterministic. Answer ids are strings and order lexicographically.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .model import Model
from .training import TrainConfig, finetune_faq

VARIANTS = (
    "baseline",
    "no_pretrain",
    "general_only",
    "conversational_only",
    "general+conversational",
)

DEFAULT_SPLITS = (1, 2, 4, 6, 8, 10)


@dataclass
class FaqDataset:
    answers: dict[str, str]  # answer_id -> answer text
    rows: list[tuple[str, str]]  # (question, answer_id)
    provenance: str = ""

    def __post_init__(self):
        if not self.answers:
            raise DataError("answers table is empty")
        for q, aid in self.rows:
            if aid not in self.answers:
                raise DataError(f"question {q!r} references unknown answer_id {aid!r}")


def load_faq(rows_path, answers_path, provenance: str = "") -> FaqDataset:
    answers: dict[str, str] = {}
    with open(answers_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            aid = str(rec["answer_id"])
            if aid in answers:
                raise DataError(f"duplicate answer_id {aid!r}")
            answers[aid] = rec["text"]
    rows = []
    with open(rows_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rec = json.loads(line)
                rows.append((rec["question"], str(rec["answer_id"])))
    return FaqDataset(answers=answers, rows=rows, provenance=provenance)


@dataclass
class SplitSet:
    """One held-out row per answer, plus nested train_k subsets."""

    test: list[tuple[str, str]]
    train: dict[int, list[tuple[str, str]]]

    def train_k(self, k: int) -> list[tuple[str, str]]:
        if k not in self.train:
            raise ContractError(f"split {k} was not generated")
        return self.train[k]


def make_splits(ds: FaqDataset, seed: int, max_k: int = 10) -> SplitSet:
    """Per answer: one seeded test row, the rest shuffled; train_k takes the
    first min(k, available) of the rest, so the splits nest by construction."""
    by_answer: dict[str, list[str]] = {}
    for q, aid in ds.rows:
        by_answer.setdefault(aid, []).append(q)
    rng = np.random.default_rng(seed)
    test: list[tuple[str, str]] = []
    pools: dict[str, list[str]] = {}
    for aid in sorted(by_answer):
        qs = by_answer[aid]
        if len(qs) < 2:
            raise DataError(
                f"answer_id {aid!r} has {len(qs)} question(s); need at least 2 "
                "(one held-out test row plus one training row)"
            )
        order = rng.permutation(len(qs))
        test.append((qs[order[0]], aid))
        pools[aid] = [qs[i] for i in order[1:]]
    train: dict[int, list[tuple[str, str]]] = {}
    for k in range(1, max_k + 1):
        train[k] = [
            (q, aid)
            for aid in sorted(pools)
            for q in pools[aid][: min(k, len(pools[aid]))]
        ]
    return SplitSet(test=test, train=train)


# ---------------------------------------------------------------------------
# dual-encoder evaluation
# ---------------------------------------------------------------------------


def _rank_matrix(model: Model, questions: list[str], candidates: list[str]) -> np.ndarray:
    """Scores [questions x candidates] from input-side vs response-side
    embeddings, computed in inference mode."""
    cand = model.embed_texts(candidates, "response").data
    scores = []
    for start in range(0, len(questions), 64):
        q = model.embed_texts(questions[start : start + 64], "input").data
        scores.append(q @ cand.T)
    return np.concatenate(scores, axis=0)


def predict(
    model: Model,
    questions: list[str],
    answers: dict[str, str],
    strategy: str = "answers",
    train_rows: list[tuple[str, str]] | None = None,
) -> list[str]:
    """Predicted answer_id per question; ties go to the lowest answer_id.

    strategy "answers" ranks the answer texts (what a response encoder is
    trained for); "questions" ranks training questions and predicts the
    nearest question's answer.
    """
    if strategy == "answers":
        cand_ids = sorted(answers)
        cand_texts = [answers[a] for a in cand_ids]
    elif strategy == "questions":
        if not train_rows:
            raise ContractError("strategy 'questions' needs train_rows")
        cand_ids = [aid for _, aid in train_rows]
        cand_texts = [q for q, _ in train_rows]
    else:
        raise ContractError(f"unknown strategy {strategy!r}")
    scores = _rank_matrix(model, questions, cand_texts)
    out = []
    for row in scores:
        best = min(range(len(cand_ids)), key=lambda j: (-row[j], cand_ids[j]))
        out.append(cand_ids[best])
    return out


def accuracy_at_1(
    model: Model,
    test_rows: list[tuple[str, str]],
    answers: dict[str, str],
    strategy: str = "answers",
    train_rows: list[tuple[str, str]] | None = None,
) -> float:
    """Fraction of test questions whose top-ranked answer is the labeled one."""
    if not test_rows:
        raise ContractError("empty test set")
    if not answers:
        raise ContractError("empty answers table")
    preds = predict(model, [q for q, _ in test_rows], answers, strategy, train_rows)
    correct = sum(p == aid for p, (_, aid) in zip(preds, test_rows))
    return correct / len(test_rows)


def recall_at_k(
    model: Model,
    test_rows: list[tuple[str, str]],
    answers: dict[str, str],
    k: int,
) -> float:
    """Fraction of test rows whose true answer appears in the top k."""
    if not 1 <= k <= len(answers):
        raise ContractError(f"k must be in [1, {len(answers)}], got {k}")
    if not test_rows:
        raise ContractError("empty test set")
    cand_ids = sorted(answers)
    scores = _rank_matrix(model, [q for q, _ in test_rows], [answers[a] for a in cand_ids])
    hits = 0
    for row, (_, true_aid) in zip(scores, test_rows):
        order = sorted(range(len(cand_ids)), key=lambda j: (-row[j], cand_ids[j]))
        top = {cand_ids[j] for j in order[:k]}
        hits += true_aid in top
    return hits / len(test_rows)


# ---------------------------------------------------------------------------
# TF-IDF lexical baseline
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class TfidfIndex:
    """Log-scaled tf, smoothed idf, L2-normalized vectors, cosine scoring."""

    def __init__(self, docs: list[str]):
        token_docs = [_tokenize(d) for d in docs]
        if not any(token_docs):
            raise DataError("empty vocabulary after tokenization")
        n = len(docs)
        df = Counter()
        for toks in token_docs:
            df.update(set(toks))
        self.idf = {t: math.log((1 + n) / (1 + c)) + 1.0 for t, c in df.items()}
        self.vectors: list[dict[str, float]] = []
        for toks in token_docs:
            tf = Counter(toks)
            vec = {t: (1.0 + math.log(c)) * self.idf[t] for t, c in tf.items()}
            norm = math.sqrt(sum(w * w for w in vec.values()))
            if norm > 0:
                vec = {t: w / norm for t, w in vec.items()}
            self.vectors.append(vec)

    def similarities(self, query: str) -> np.ndarray:
        tf = Counter(_tokenize(query))
        qvec = {
            t: (1.0 + math.log(c)) * self.idf[t] for t, c in tf.items() if t in self.idf
        }
        norm = math.sqrt(sum(w * w for w in qvec.values()))
        if norm > 0:
            qvec = {t: w / norm for t, w in qvec.items()}
        sims = np.zeros(len(self.vectors))
        for i, vec in enumerate(self.vectors):
            sims[i] = sum(w * vec.get(t, 0.0) for t, w in qvec.items())
        return sims


def tfidf_predict(
    train_rows: list[tuple[str, str]], test_questions: list[str]
) -> list[str]:
    """Nearest-training-question prediction by cosine similarity."""
    if not train_rows:
        raise DataError("tfidf baseline needs training rows")
    index = TfidfIndex([q for q, _ in train_rows])
    ids = [aid for _, aid in train_rows]
    out = []
    for q in test_questions:
        sims = index.similarities(q)
        best = min(range(len(ids)), key=lambda j: (-sims[j], ids[j]))
        out.append(ids[best])
    return out


def tfidf_baseline(
    train_rows: list[tuple[str, str]],
    answers: dict[str, str],
    test_rows: list[tuple[str, str]],
) -> float:
    preds = tfidf_predict(train_rows, [q for q, _ in test_rows])
    correct = sum(p == aid for p, (_, aid) in zip(preds, test_rows))
    return correct / len(test_rows)


# ---------------------------------------------------------------------------
# the experiment grid
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    splits: list[int]
    table: dict[str, dict[int, float]]
    predictions: dict[str, dict[int, list[dict]]] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["variant"] + [f"split_{k}" for k in self.splits])
            for variant, accs in self.table.items():
                writer.writerow([variant] + [f"{accs[k]:.4f}" for k in self.splits])

    def to_json_report(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(
                {
                    "splits": self.splits,
                    "table": {v: {str(k): a for k, a in row.items()} for v, row in self.table.items()},
                    "predictions": {
                        v: {str(k): p for k, p in per.items()}
                        for v, per in self.predictions.items()
                    },
                },
                f, ensure_ascii=False, indent=2,
            )


def run_experiment(
    ds: FaqDataset,
    variant_models: dict[str, Model | None],
    seed: int,
    splits: tuple[int, ...] = DEFAULT_SPLITS,
    finetune_cfg: TrainConfig | None = None,
) -> ExperimentResult:
    """Fine-tune every variant on each train_k and score accuracy@1 on the
    shared test set; 'baseline' runs the TF-IDF lexical matcher instead.

    Models are cloned per cell, so a variant's checkpoint is reused fresh
    for every split.
    """
    unknown = set(variant_models) - set(VARIANTS)
    if unknown:
        raise ConfigError(f"unknown variants: {sorted(unknown)}")
    for name, model in variant_models.items():
        if name != "baseline" and model is None:
            raise ConfigError(f"variant {name!r} has no checkpoint")

    split_set = make_splits(ds, seed=seed, max_k=max(splits))
    base_cfg = finetune_cfg or TrainConfig.finetune_defaults()
    result = ExperimentResult(splits=list(splits), table={}, predictions={})
    for variant, model in variant_models.items():
        result.table[variant] = {}
        result.predictions[variant] = {}
        for k in splits:
            train_rows = split_set.train_k(k)
            questions = [q for q, _ in split_set.test]
            if variant == "baseline":
                preds = tfidf_predict(train_rows, questions)
            else:
                tuned = model.clone()
                finetune_faq(train_rows, ds.answers, tuned, base_cfg)
                preds = predict(tuned, questions, ds.answers)
            correct = sum(p == aid for p, (_, aid) in zip(preds, split_set.test))
            result.table[variant][k] = correct / len(split_set.test)
            result.predictions[variant][k] = [
                {"question": q, "true": aid, "predicted": p}
                for (q, aid), p in zip(split_set.test, preds)
            ]
    return result
