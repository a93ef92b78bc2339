import json

from faqrank.cli import main


def test_cli_pipeline_end_to_end(tmp_path, capsys):
    data = tmp_path / "data"
    ckpt = tmp_path / "ckpt"

    # demo corpora
    assert main([
        "synth", "--out-dir", str(data),
        "--general-pairs", "400", "--conversational-pairs", "120",
        "--faq-answers", "6", "--questions-per-answer", "4",
    ]) == 0

    # pair preparation
    assert main([
        "prepare", "general",
        "--in", str(data / "general_corpus.txt"),
        "--out", str(data / "general.jsonl"),
    ]) == 0
    assert main([
        "prepare", "conversational",
        "--in", str(data / "comments.jsonl"),
        "--out", str(data / "conv.jsonl"),
    ]) == 0
    assert main(["stats", "--pairs", str(data / "general.jsonl")]) == 0
    stats_out = capsys.readouterr().out
    assert '"count"' in stats_out

    # vocabulary
    assert main([
        "train-bpe", "--in", str(data / "general_corpus.txt"),
        "--out", str(data / "vocab.txt"), "--vocab-size", "300",
    ]) == 0

    # tiny two-stage pre-training
    assert main([
        "pretrain-general",
        "--pairs", str(data / "general.jsonl"), "--vocab", str(data / "vocab.txt"),
        "--ckpt-out", str(ckpt), "--epochs", "1", "--batch-size", "64",
        "--embed-dim", "16", "--layers", "1",
    ]) == 0
    assert (ckpt / "general-final.ckpt").exists()
    assert main([
        "pretrain-conversational",
        "--pairs", str(data / "conv.jsonl"), "--vocab", str(data / "vocab.txt"),
        "--ckpt-in", str(ckpt / "general-final.ckpt"), "--ckpt-out", str(ckpt),
        "--epochs", "1", "--batch-size", "32",
    ]) == 0

    # fine-tune on the FAQ
    assert main([
        "finetune",
        "--faq", str(data / "faq_rows.jsonl"), "--answers", str(data / "faq_answers.jsonl"),
        "--vocab", str(data / "vocab.txt"),
        "--ckpt-in", str(ckpt / "conversational-final.ckpt"), "--ckpt-out", str(ckpt),
        "--epochs", "2", "--batch-size", "6",
    ]) == 0
    final = ckpt / "finetune-final.ckpt"
    assert final.exists()

    # full-dataset evaluation
    assert main([
        "evaluate", "--faq", str(data / "faq_rows.jsonl"),
        "--answers", str(data / "faq_answers.jsonl"),
        "--vocab", str(data / "vocab.txt"), "--ckpt", str(final), "--full",
    ]) == 0
    out = capsys.readouterr().out.strip().splitlines()[-1]
    assert "accuracy_at_1" in out

    # split-based evaluation with report files
    assert main([
        "evaluate", "--faq", str(data / "faq_rows.jsonl"),
        "--answers", str(data / "faq_answers.jsonl"),
        "--vocab", str(data / "vocab.txt"), "--ckpt", str(final),
        "--splits", "1,2", "--csv", str(tmp_path / "table.csv"),
        "--report", str(tmp_path / "report.json"),
    ]) == 0
    assert (tmp_path / "table.csv").read_text().startswith("variant,split_1,split_2")
    report = json.loads((tmp_path / "report.json").read_text())
    assert "no_pretrain" in report["table"]

    # answer index
    assert main([
        "index", "build", "--ckpt", str(final), "--vocab", str(data / "vocab.txt"),
        "--answers", str(data / "faq_answers.jsonl"), "--out", str(tmp_path / "answers.idx"),
    ]) == 0
    assert (tmp_path / "answers.idx").exists()

    # feedback export
    log = tmp_path / "feedback.jsonl"
    log.write_text(
        '{"timestamp": 1.0, "query": "hoe", "answer_id": "a000", "accepted": true}\n'
        '{"timestamp": 2.0, "query": "wat", "answer_id": "a001", "accepted": false}\n'
    )
    assert main(["feedback", "export", "--log", str(log), "--out", str(tmp_path / "rows.jsonl")]) == 0
    rows = (tmp_path / "rows.jsonl").read_text().strip().splitlines()
    assert len(rows) == 1
    assert json.loads(rows[0]) == {"question": "hoe", "answer_id": "a000"}


def test_cli_reports_errors_cleanly(tmp_path, capsys):
    rc = main([
        "prepare", "conversational",
        "--in", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "out.jsonl"),
    ])
    assert rc == 1
    assert "error:" in capsys.readouterr().err
