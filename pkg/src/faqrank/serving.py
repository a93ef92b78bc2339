"""Retrieval service: precomputed response-side embeddings, dot-product
ranking for live queries, and an append-only feedback log whose accepted
records export as future training rows.

The index is frozen at build time and carries the checkpoint fingerprint;
serving with a different checkpoint is a staleness error, never a silent
rebuild. Queries are read-only and safe to run concurrently.

No `from __future__ import annotations` here: the endpoint signatures must
carry evaluated (non-string) annotations for the locally defined request
models to be recognized as body parameters.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, StaleIndexError
from .model import Model

INDEX_MAGIC = b"cvrt-index-v1\n"


@dataclass
class AnswerIndex:
    answer_ids: list[str]  # sorted ascending
    matrix: np.ndarray  # [num_answers, final_dim] float32
    checkpoint_fingerprint: str
    built_at: float

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.answer_ids):
            raise ContractError("index rows and answer ids disagree")


@dataclass
class QueryResult:
    results: list[tuple[str, str, float]]  # (answer_id, answer text, score)


@dataclass
class FeedbackRecord:
    timestamp: float
    query: str
    answer_id: str
    accepted: bool


def build_index(answers: dict[str, str], model: Model, checkpoint_fingerprint: str) -> AnswerIndex:
    """One response-side embedding per answer, in answer_id order."""
    if not answers:
        raise DataError("cannot index an empty answers table")
    ids = sorted(answers)
    rows = []
    for start in range(0, len(ids), 64):
        chunk = ids[start : start + 64]
        rows.append(model.embed_texts([answers[a] for a in chunk], "response").data)
    return AnswerIndex(
        answer_ids=ids,
        matrix=np.concatenate(rows, axis=0),
        checkpoint_fingerprint=checkpoint_fingerprint,
        built_at=time.time(),
    )


def save_index(path, index: AnswerIndex) -> None:
    header = json.dumps({
        "answer_ids": index.answer_ids,
        "shape": list(index.matrix.shape),
        "checkpoint_fingerprint": index.checkpoint_fingerprint,
        "built_at": index.built_at,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        f.write(np.ascontiguousarray(index.matrix, dtype=np.float32).tobytes())


def load_index(path) -> AnswerIndex:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(INDEX_MAGIC):
        raise DataError(f"{path}: not an answer index file")
    pos = len(INDEX_MAGIC)
    header_len = int.from_bytes(blob[pos : pos + 8], "little")
    pos += 8
    try:
        header = json.loads(blob[pos : pos + header_len].decode("utf-8"))
        shape = header["shape"]
        ids = header["answer_ids"]
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: malformed index header: {exc}") from exc
    payload = blob[pos + header_len :]
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(payload) != expected:
        raise DataError(f"{path}: index payload truncated")
    matrix = np.frombuffer(payload, dtype=np.float32).reshape(shape).copy()
    return AnswerIndex(
        answer_ids=ids,
        matrix=matrix,
        checkpoint_fingerprint=header["checkpoint_fingerprint"],
        built_at=header["built_at"],
    )


def query(
    index: AnswerIndex,
    model: Model,
    answers: dict[str, str],
    text: str,
    top_k: int,
    checkpoint_fingerprint: str | None = None,
    min_score: float | None = None,
) -> QueryResult:
    """Rank all cached answers for `text` by dot product.

    Ties order by lowest answer_id. `min_score` (when set) suppresses
    low-confidence results, so fewer than top_k entries may come back.
    """
    if not 1 <= top_k <= len(index.answer_ids):
        raise ContractError(f"top_k must be in [1, {len(index.answer_ids)}], got {top_k}")
    if checkpoint_fingerprint is not None and checkpoint_fingerprint != index.checkpoint_fingerprint:
        raise StaleIndexError(
            "answer index was built from a different checkpoint; rebuild it"
        )
    vec = model.embed_texts([text], "input").data[0]
    scores = index.matrix @ vec
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], index.answer_ids[i]))
    picked = order[:top_k]
    results = []
    for i in picked:
        s = float(scores[i])
        if min_score is not None and s < min_score:
            continue
        aid = index.answer_ids[i]
        results.append((aid, answers[aid], s))
    return QueryResult(results=results)


def record_feedback(rec: FeedbackRecord, answers: dict[str, str], log_path) -> int:
    """Append one feedback record; returns its position in the log.

    The record is serialized first and written in a single call, so a
    failed write never leaves a partial line.
    """
    if rec.answer_id not in answers:
        raise DataError(f"unknown answer_id {rec.answer_id!r}")
    line = json.dumps({
        "timestamp": rec.timestamp,
        "query": rec.query,
        "answer_id": rec.answer_id,
        "accepted": rec.accepted,
    }, ensure_ascii=False) + "\n"
    position = 0
    try:
        with open(log_path, "r", encoding="utf-8") as f:
            position = sum(1 for _ in f)
    except FileNotFoundError:
        pass
    with open(log_path, "a", encoding="utf-8") as f:
        f.write(line)  # one write call: no partial record on failure
        f.flush()
    return position


def export_feedback(log_path, out_path) -> int:
    """Accepted feedback records -> training rows {question, answer_id}."""
    n = 0
    with open(log_path, "r", encoding="utf-8") as src, open(out_path, "w", encoding="utf-8") as dst:
        for line in src:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("accepted"):
                dst.write(json.dumps(
                    {"question": rec["query"], "answer_id": rec["answer_id"]},
                    ensure_ascii=False,
                ) + "\n")
                n += 1
    return n


# ---------------------------------------------------------------------------
# HTTP API
# ---------------------------------------------------------------------------


def create_app(
    model: Model,
    index: AnswerIndex,
    answers: dict[str, str],
    feedback_path,
    checkpoint_fingerprint: str,
    min_score: float | None = None,
    static_dir=None,
):
    """FastAPI app exposing /api/query, /api/feedback and /api/health.

    Errors use a uniform {"error": {"code", "message"}} envelope. When
    `static_dir` is given the chat front end is served from / as static
    assets.
    """
    import threading

    from fastapi import FastAPI
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse
    from pydantic import BaseModel

    if index.checkpoint_fingerprint != checkpoint_fingerprint:
        raise StaleIndexError("refusing to serve: index/checkpoint fingerprints differ")

    app = FastAPI(title="faqrank", docs_url=None, redoc_url=None)
    write_lock = threading.Lock()

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(
            status_code=status, content={"error": {"code": code, "message": message}}
        )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request, exc):
        return error(400, "bad_request", str(exc.errors()[:1]))

    class QueryBody(BaseModel):
        text: str
        top_k: int = 3

    class FeedbackBody(BaseModel):
        query: str
        answer_id: str
        accepted: bool

    @app.post("/api/query")
    async def api_query(body: QueryBody):
        if not body.text.strip():
            return error(400, "bad_request", "'text' must be a non-empty string")
        try:
            out = query(
                index, model, answers, body.text, body.top_k,
                checkpoint_fingerprint=checkpoint_fingerprint, min_score=min_score,
            )
        except ContractError as exc:
            return error(400, "bad_request", str(exc))
        except StaleIndexError as exc:
            return error(409, "stale_index", str(exc))
        return {
            "results": [
                {"answer_id": aid, "text": text, "score": score}
                for aid, text, score in out.results
            ]
        }

    @app.post("/api/feedback")
    async def api_feedback(body: FeedbackBody):
        rec = FeedbackRecord(
            timestamp=time.time(), query=body.query,
            answer_id=body.answer_id, accepted=body.accepted,
        )
        try:
            with write_lock:
                position = record_feedback(rec, answers, feedback_path)
        except DataError as exc:
            return error(422, "unknown_answer", str(exc))
        except OSError as exc:
            return error(500, "io_error", str(exc))
        return {"position": position}

    @app.get("/api/health")
    async def api_health():
        return {
            "status": "ok",
            "checkpoint_fingerprint": checkpoint_fingerprint,
            "num_answers": len(index.answer_ids),
        }

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
