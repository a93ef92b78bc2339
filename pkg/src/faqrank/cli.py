"""Command-line interface tying the pipeline together.

Typical flow:
  faqrank synth --out-dir data/            # demo corpora
  faqrank prepare general --in data/general_corpus.txt --out data/general.jsonl
  faqrank prepare conversational --in data/comments.jsonl --out data/conv.jsonl
  faqrank train-bpe --in data/general_corpus.txt --out data/vocab.txt
  faqrank pretrain-general --pairs data/general.jsonl --vocab data/vocab.txt --ckpt-out ckpt/
  faqrank pretrain-conversational --pairs data/conv.jsonl --vocab data/vocab.txt \\
      --ckpt-in ckpt/general-final.ckpt --ckpt-out ckpt/
  faqrank finetune --faq data/faq_rows.jsonl --answers data/faq_answers.jsonl \\
      --vocab data/vocab.txt --ckpt-in ckpt/conversational-final.ckpt --ckpt-out ckpt/
  faqrank evaluate --faq ... --answers ... --vocab ... --ckpt ... --splits 1,2,4,6,8,10
  faqrank index build --ckpt ... --vocab ... --answers ... --out answers.idx
  faqrank serve --ckpt ... --vocab ... --answers ... --index answers.idx --port 8000
  faqrank feedback export --log feedback.jsonl --out new_rows.jsonl
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bpe as bpe_mod
from .errors import FaqrankError
from .model import EncoderConfig, Model
from .pairs import (
    dataset_stats,
    make_conversational_pairs,
    make_general_pairs,
    read_comment_nodes,
    read_paragraphs,
    read_pairs,
    write_pairs,
)


def _load_model(vocab_path, ckpt_path) -> tuple[Model, str]:
    from .checkpoint import load_model

    vocab = bpe_mod.load_vocab(vocab_path)
    return load_model(ckpt_path, vocab)


def _fresh_or_loaded(args) -> Model:
    vocab = bpe_mod.load_vocab(args.vocab)
    if getattr(args, "ckpt_in", None):
        from .checkpoint import load_model

        model, _ = load_model(args.ckpt_in, vocab)
        return model
    overrides = {}
    if args.embed_dim:
        overrides = dict(
            embed_dim=args.embed_dim, final_dim=args.embed_dim,
            ffn_hidden_dim=2 * args.embed_dim,
        )
    if args.layers:
        overrides["num_shared_layers"] = args.layers
    return Model.fresh(vocab, seed=args.seed, **overrides)


def _train_args(p: argparse.ArgumentParser, with_ckpt_in: bool):
    p.add_argument("--pairs", required=True, help="JSON-lines pair file")
    p.add_argument("--vocab", required=True, help="BPE vocabulary file")
    if with_ckpt_in:
        p.add_argument("--ckpt-in", required=True, help="checkpoint to continue from")
    p.add_argument("--ckpt-out", required=True, help="directory for epoch checkpoints")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None,
                   help="fixed batch size overriding the stage default")
    p.add_argument("--peak-lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embed-dim", type=int, default=None,
                   help="fresh-model width (ignored with --ckpt-in)")
    p.add_argument("--layers", type=int, default=None,
                   help="fresh-model shared layer count (ignored with --ckpt-in)")
    p.add_argument("--metrics", default=None, help="JSON-lines metrics log path")


def _cmd_synth(args):
    from .synthetic import (
        synth_comment_nodes,
        synth_faq,
        synth_general_paragraphs,
        write_comment_nodes,
        write_faq,
        write_paragraphs,
    )

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_paragraphs(
        synth_general_paragraphs(args.general_pairs, seed=args.seed),
        out / "general_corpus.txt",
    )
    write_comment_nodes(
        synth_comment_nodes(args.conversational_pairs, seed=args.seed + 1),
        out / "comments.jsonl",
    )
    ds = synth_faq(args.faq_answers, args.questions_per_answer, seed=args.seed + 2)
    write_faq(ds, out / "faq_rows.jsonl", out / "faq_answers.jsonl")
    print(f"wrote demo corpora to {out}")


def _cmd_prepare(args):
    if args.kind == "general":
        paragraphs = read_paragraphs(args.inputs)
        pairs = make_general_pairs(paragraphs, min_chars=args.min_chars)
    else:
        nodes = read_comment_nodes(args.inputs[0])
        pairs = make_conversational_pairs(nodes)
    n = write_pairs(pairs, args.out)
    print(f"wrote {n} pairs to {args.out}")


def _cmd_stats(args):
    stats = dataset_stats(read_pairs(args.pairs))
    print(json.dumps(stats.summary(), indent=2))


def _cmd_train_bpe(args):
    corpus = read_paragraphs(args.inputs)
    vocab = bpe_mod.train_bpe(corpus, vocab_size=args.vocab_size)
    bpe_mod.save_vocab(vocab, args.out)
    print(f"trained {vocab.size}-token vocabulary -> {args.out}")


def _run_pretrain(args, stage: str):
    from .checkpoint import save_model
    from .training import TrainConfig, curriculum_schedule, run_stage

    model = _fresh_or_loaded(args)
    if stage == "general":
        epochs = args.epochs or 8
        if args.batch_size:
            schedule = [args.batch_size] * epochs
        elif epochs == 8 and not args.batch_size:
            schedule = curriculum_schedule(128, 2048, 8)
        else:
            schedule = [128] * epochs
        cfg = TrainConfig(stage="general", epochs=epochs, batch_schedule=schedule,
                          peak_lr=args.peak_lr, weight_decay=args.weight_decay,
                          seed=args.seed)
    else:
        epochs = args.epochs or 10
        k = args.batch_size or 2048
        cfg = TrainConfig(stage="conversational", epochs=epochs,
                          batch_schedule=[k] * epochs, peak_lr=args.peak_lr,
                          weight_decay=args.weight_decay, seed=args.seed)
    ckpt_dir = Path(args.ckpt_out)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    result = run_stage(read_pairs(args.pairs), model, cfg,
                       ckpt_dir=ckpt_dir, log_path=args.metrics)
    final = ckpt_dir / f"{stage}-final.ckpt"
    save_model(final, model)
    print(f"{stage}: {cfg.epochs} epochs, final mean loss "
          f"{result.epoch_mean_loss[-1]:.4f}, checkpoint {final}")


def _cmd_finetune(args):
    from .checkpoint import save_model
    from .evaluation import load_faq
    from .training import TrainConfig, finetune_faq

    model = _fresh_or_loaded(args)
    ds = load_faq(args.faq, args.answers)
    epochs = args.epochs or 40
    cfg = TrainConfig(stage="finetune", epochs=epochs,
                      batch_schedule=[args.batch_size or 16] * epochs,
                      peak_lr=args.peak_lr, weight_decay=args.weight_decay,
                      seed=args.seed)
    ckpt_dir = Path(args.ckpt_out)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    result = finetune_faq(ds.rows, ds.answers, model, cfg,
                          ckpt_dir=ckpt_dir, log_path=args.metrics)
    final = ckpt_dir / "finetune-final.ckpt"
    save_model(final, model)
    print(f"finetune: final mean loss {result.epoch_mean_loss[-1]:.4f}, "
          f"checkpoint {final}")


def _cmd_evaluate(args):
    from .evaluation import accuracy_at_1, load_faq, run_experiment

    ds = load_faq(args.faq, args.answers)
    model, _ = _load_model(args.vocab, args.ckpt)
    if args.full:
        acc = accuracy_at_1(model, ds.rows, ds.answers)
        print(json.dumps({"accuracy_at_1": acc, "rows": len(ds.rows)}))
        return
    splits = tuple(int(s) for s in args.splits.split(","))
    variants = {args.variant: model}
    if args.with_baseline:
        variants["baseline"] = None
    result = run_experiment(ds, variants, seed=args.seed, splits=splits)
    if args.csv:
        result.to_csv(args.csv)
    if args.report:
        result.to_json_report(args.report)
    print(json.dumps({"table": result.table}, indent=2))


def _cmd_index_build(args):
    from .checkpoint import load_model
    from .evaluation import load_faq
    from .serving import build_index, save_index

    vocab = bpe_mod.load_vocab(args.vocab)
    model, fingerprint = load_model(args.ckpt, vocab)
    ds = load_faq_answers_only(args.answers)
    index = build_index(ds, model, fingerprint)
    save_index(args.out, index)
    print(f"indexed {len(index.answer_ids)} answers -> {args.out}")


def load_faq_answers_only(answers_path) -> dict[str, str]:
    answers = {}
    with open(answers_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rec = json.loads(line)
                answers[str(rec["answer_id"])] = rec["text"]
    return answers


def _cmd_serve(args):
    import uvicorn

    from .checkpoint import load_model
    from .serving import build_index, create_app, load_index

    vocab = bpe_mod.load_vocab(args.vocab)
    model, fingerprint = load_model(args.ckpt, vocab)
    answers = load_faq_answers_only(args.answers)
    if args.index:
        index = load_index(args.index)
    else:
        index = build_index(answers, model, fingerprint)
    app = create_app(
        model, index, answers, args.feedback_log,
        checkpoint_fingerprint=fingerprint, min_score=args.min_score,
        static_dir=args.static if args.static else None,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")


def _cmd_feedback_export(args):
    from .serving import export_feedback

    n = export_feedback(args.log, args.out)
    print(f"exported {n} accepted records -> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faqrank", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate demo corpora")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--general-pairs", type=int, default=20000)
    p.add_argument("--conversational-pairs", type=int, default=2000)
    p.add_argument("--faq-answers", type=int, default=30)
    p.add_argument("--questions-per-answer", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("prepare", help="turn raw corpora into pair files")
    p.add_argument("kind", choices=["general", "conversational"])
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-chars", type=int, default=64)
    p.set_defaults(fn=_cmd_prepare)

    p = sub.add_parser("stats", help="pair counts and length histograms")
    p.add_argument("--pairs", required=True)
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("train-bpe", help="train the shared subword vocabulary")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=8000)
    p.set_defaults(fn=_cmd_train_bpe)

    p = sub.add_parser("pretrain-general", help="stage 1: general corpus")
    _train_args(p, with_ckpt_in=False)
    p.set_defaults(fn=lambda a: _run_pretrain(a, "general"))

    p = sub.add_parser("pretrain-conversational", help="stage 2: conversational corpus")
    _train_args(p, with_ckpt_in=True)
    p.set_defaults(fn=lambda a: _run_pretrain(a, "conversational"))

    p = sub.add_parser("finetune", help="stage 3: FAQ fine-tuning")
    p.add_argument("--faq", required=True)
    p.add_argument("--answers", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--ckpt-in", required=False, default=None)
    p.add_argument("--ckpt-out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--peak-lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--metrics", default=None)
    p.set_defaults(fn=_cmd_finetune)

    p = sub.add_parser("evaluate", help="split-based accuracy evaluation")
    p.add_argument("--faq", required=True)
    p.add_argument("--answers", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--splits", default="1,2,4,6,8,10")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", default="no_pretrain",
                   choices=["no_pretrain", "general_only", "conversational_only",
                            "general+conversational"],
                   help="row label for the given checkpoint")
    p.add_argument("--with-baseline", action="store_true",
                   help="also run the TF-IDF lexical baseline row")
    p.add_argument("--csv", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--full", action="store_true",
                   help="single accuracy@1 over all rows, no splits/fine-tuning")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("index", help="answer-embedding index")
    isub = p.add_subparsers(dest="index_command", required=True)
    b = isub.add_parser("build")
    b.add_argument("--ckpt", required=True)
    b.add_argument("--vocab", required=True)
    b.add_argument("--answers", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=_cmd_index_build)

    p = sub.add_parser("serve", help="HTTP retrieval service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--answers", required=True)
    p.add_argument("--index", default=None, help="prebuilt index (default: build in memory)")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--feedback-log", default="feedback.jsonl")
    p.add_argument("--min-score", type=float, default=None)
    p.add_argument("--static", default=None, help="serve a chat UI from this directory")
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("feedback", help="operator feedback log")
    fsub = p.add_subparsers(dest="feedback_command", required=True)
    e = fsub.add_parser("export")
    e.add_argument("--log", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=_cmd_feedback_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except (FaqrankError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
