import concurrent.futures
import json

import numpy as np
import pytest

from faqrank.bpe import train_bpe
from faqrank.errors import ContractError, DataError, StaleIndexError
from faqrank.evaluation import predict
from faqrank.model import EncoderConfig, Model, init_params
from faqrank.serving import (
    FeedbackRecord,
    build_index,
    create_app,
    export_feedback,
    load_index,
    query,
    record_feedback,
    save_index,
)

ANSWERS = {
    "a00": "de winkel is open van negen tot zes",
    "a01": "een kaartje kost tien euro per rit",
    "a02": "de trein vertrekt elk half uur",
    "a03": "het station ligt midden in het centrum",
    "a04": "reserveren kan via de website of telefoon",
}


@pytest.fixture(scope="module")
def model():
    texts = list(ANSWERS.values()) + ["waar is het station", "wat kost een kaartje"]
    vocab = train_bpe(texts, vocab_size=200)
    cfg = EncoderConfig(
        vocab_size=vocab.size, embed_dim=16, attn_proj_dim=8, num_shared_layers=1,
        pooling_heads=2, tower_layers=1, final_dim=8, pos_period_1=7, pos_period_2=5,
        ffn_hidden_dim=16, dropout_rate=0.0, max_sequence_length=16,
    )
    return Model(config=cfg, params=init_params(cfg, seed=3), vocab=vocab)


@pytest.fixture(scope="module")
def index(model):
    return build_index(ANSWERS, model, checkpoint_fingerprint="fp-test")


def test_index_shape_and_order(index):
    assert index.answer_ids == sorted(ANSWERS)
    assert index.matrix.shape == (5, 8)


def test_index_rows_bit_equal_fresh_embeddings(index, model):
    for i, aid in enumerate(index.answer_ids):
        fresh = model.embed_texts([ANSWERS[aid]], "response").data[0]
        np.testing.assert_array_equal(index.matrix[i], fresh)


def test_index_rebuild_bit_identical(index, model):
    again = build_index(ANSWERS, model, checkpoint_fingerprint="fp-test")
    np.testing.assert_array_equal(index.matrix, again.matrix)


def test_index_empty_answers(model):
    with pytest.raises(DataError):
        build_index({}, model, "fp")


def test_index_save_load_round_trip(tmp_path, index):
    path = tmp_path / "answers.idx"
    save_index(path, index)
    loaded = load_index(path)
    assert loaded.answer_ids == index.answer_ids
    assert loaded.checkpoint_fingerprint == "fp-test"
    np.testing.assert_array_equal(loaded.matrix, index.matrix)


def test_query_full_ranking_matches_brute_force(index, model):
    out = query(index, model, ANSWERS, "waar is het station", top_k=5)
    assert {aid for aid, _, _ in out.results} == set(ANSWERS)
    vec = model.embed_texts(["waar is het station"], "input").data[0]
    scored = sorted(
        ((aid, float(index.matrix[i] @ vec)) for i, aid in enumerate(index.answer_ids)),
        key=lambda t: (-t[1], t[0]),
    )
    assert [aid for aid, _, _ in out.results] == [aid for aid, _ in scored]
    scores = [s for _, _, s in out.results]
    assert scores == sorted(scores, reverse=True)


def test_query_deterministic(index, model):
    a = query(index, model, ANSWERS, "wat kost een kaartje", top_k=3)
    b = query(index, model, ANSWERS, "wat kost een kaartje", top_k=3)
    assert a == b


def test_query_top_k_bounds(index, model):
    with pytest.raises(ContractError):
        query(index, model, ANSWERS, "vraag", top_k=0)
    with pytest.raises(ContractError):
        query(index, model, ANSWERS, "vraag", top_k=6)


def test_query_stale_fingerprint(index, model):
    with pytest.raises(StaleIndexError):
        query(index, model, ANSWERS, "vraag", top_k=1, checkpoint_fingerprint="other")


def test_query_top1_matches_eval_argmax(index, model):
    # serving and evaluation can never disagree
    for q in ("waar is het station", "wat kost een kaartje", "volledig nieuwe vraag"):
        top = query(index, model, ANSWERS, q, top_k=1).results[0][0]
        assert top == predict(model, [q], ANSWERS)[0]


def test_concurrent_queries_match_serial(index, model):
    questions = [f"vraag nummer {i} over de trein" for i in range(100)]
    serial = [query(index, model, ANSWERS, q, top_k=3) for q in questions]
    with concurrent.futures.ThreadPoolExecutor(max_workers=16) as pool:
        parallel = list(pool.map(lambda q: query(index, model, ANSWERS, q, top_k=3), questions))
    assert serial == parallel


def test_feedback_append_and_positions(tmp_path):
    log = tmp_path / "feedback.jsonl"
    r = FeedbackRecord(timestamp=1.0, query="vraag", answer_id="a00", accepted=True)
    assert record_feedback(r, ANSWERS, log) == 0
    assert record_feedback(r, ANSWERS, log) == 1
    assert len(log.read_text().splitlines()) == 2


def test_feedback_unknown_answer_rejected(tmp_path):
    log = tmp_path / "feedback.jsonl"
    with pytest.raises(DataError):
        record_feedback(
            FeedbackRecord(timestamp=1.0, query="q", answer_id="nope", accepted=True),
            ANSWERS, log,
        )
    assert not log.exists()


def test_feedback_export_accepted_only(tmp_path):
    log = tmp_path / "feedback.jsonl"
    for i, accepted in enumerate([True, False, True, True]):
        record_feedback(
            FeedbackRecord(timestamp=float(i), query=f"vraag {i}", answer_id="a02",
                           accepted=accepted),
            ANSWERS, log,
        )
    out = tmp_path / "rows.jsonl"
    n = export_feedback(log, out)
    assert n == 3
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    assert all(r["answer_id"] == "a02" for r in rows)
    assert [r["question"] for r in rows] == ["vraag 0", "vraag 2", "vraag 3"]


# ---------------------------------------------------------------------------
# HTTP surface
# ---------------------------------------------------------------------------


@pytest.fixture()
def client(tmp_path, model, index):
    from fastapi.testclient import TestClient

    app = create_app(
        model, index, ANSWERS, tmp_path / "feedback.jsonl",
        checkpoint_fingerprint="fp-test",
    )
    with TestClient(app) as c:
        yield c


def test_http_query(client):
    resp = client.post("/api/query", json={"text": "waar is het station", "top_k": 3})
    assert resp.status_code == 200
    results = resp.json()["results"]
    assert len(results) == 3
    assert {"answer_id", "text", "score"} <= set(results[0])
    assert results[0]["score"] >= results[1]["score"] >= results[2]["score"]


def test_http_query_validation(client):
    assert client.post("/api/query", json={"text": "", "top_k": 3}).status_code == 400
    resp = client.post("/api/query", json={"text": "x", "top_k": 99})
    assert resp.status_code == 400
    assert resp.json()["error"]["code"] == "bad_request"
    resp = client.post(
        "/api/query", content=b"{not json", headers={"content-type": "application/json"}
    )
    assert resp.status_code == 400
    assert resp.json()["error"]["code"] == "bad_request"


def test_http_feedback_and_export(client, tmp_path):
    resp = client.post(
        "/api/feedback", json={"query": "vraag", "answer_id": "a01", "accepted": True}
    )
    assert resp.status_code == 200
    assert resp.json() == {"position": 0}
    resp = client.post(
        "/api/feedback", json={"query": "vraag", "answer_id": "geen", "accepted": False}
    )
    assert resp.status_code == 422
    assert resp.json()["error"]["code"] == "unknown_answer"


def test_http_health(client):
    resp = client.get("/api/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert body["checkpoint_fingerprint"] == "fp-test"
    assert body["num_answers"] == 5


def test_create_app_rejects_stale_index(model, index, tmp_path):
    with pytest.raises(StaleIndexError):
        create_app(model, index, ANSWERS, tmp_path / "f.jsonl",
                   checkpoint_fingerprint="different")
