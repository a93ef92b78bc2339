import numpy as np
import pytest

from faqrank.bpe import train_bpe
from faqrank.errors import ConfigError, ContractError, DataError, TrainingDivergedError
from faqrank.model import EncoderConfig, Model, init_params
from faqrank.numerics import Tensor
from faqrank.pairs import UtterancePair
from faqrank.training import (
    TrainConfig,
    assemble_faq_batches,
    batch_loss,
    curriculum_schedule,
    finetune_faq,
    in_batch_accuracy,
    lr_at,
    run_stage,
)

from oracles import per_row_nll

TOY_PAIRS = [
    UtterancePair("wat kost een kaartje", "een kaartje kost tien euro", "general"),
    UtterancePair("hoe laat vertrekt de trein", "de trein vertrekt om negen uur", "general"),
    UtterancePair("waar is het station", "het station is in het centrum", "general"),
    UtterancePair("wanneer sluit de winkel", "de winkel sluit om zes uur", "general"),
    UtterancePair("wie werkt er vandaag", "vandaag werkt de nieuwe collega", "general"),
    UtterancePair("welke kleur heeft de bus", "de bus is blauw met wit", "general"),
    UtterancePair("hoeveel mensen passen erin", "er passen veertig mensen in", "general"),
    UtterancePair("waarom is het gesloten", "het is gesloten wegens een storing", "general"),
]


def _toy_model(seed=0, **cfg_overrides):
    corpus = [p.input for p in TOY_PAIRS] + [p.response for p in TOY_PAIRS]
    vocab = train_bpe(corpus, vocab_size=140)
    kw = dict(
        vocab_size=vocab.size, embed_dim=16, attn_proj_dim=16, num_shared_layers=2,
        pooling_heads=2, tower_layers=2, final_dim=16, pos_period_1=7, pos_period_2=5,
        ffn_hidden_dim=32, dropout_rate=0.0, max_sequence_length=16,
    )
    kw.update(cfg_overrides)
    cfg = EncoderConfig(**kw)
    return Model(config=cfg, params=init_params(cfg, seed=seed), vocab=vocab)


# ---------------------------------------------------------------------------
# batch_loss
# ---------------------------------------------------------------------------


def test_batch_loss_single_pair_is_zero():
    assert batch_loss(Tensor(np.array([[3.7]], dtype=np.float32))).item() == pytest.approx(0.0)


def test_batch_loss_all_equal_is_ln_k():
    for k in (2, 3, 5):
        s = Tensor(np.full((k, k), 0.4, dtype=np.float32))
        assert batch_loss(s).item() == pytest.approx(np.log(k), rel=1e-6)


def test_batch_loss_matches_per_row_oracle():
    rng = np.random.default_rng(12)
    for _ in range(10):
        s = rng.standard_normal((4, 4)).astype(np.float32) * 3.0
        got = batch_loss(Tensor(s)).item()
        assert got == pytest.approx(per_row_nll(s), abs=1e-6)


def test_batch_loss_row_shift_invariance():
    rng = np.random.default_rng(13)
    s = rng.standard_normal((5, 5)).astype(np.float64)
    shifted = s + rng.standard_normal((5, 1))  # constant per row
    assert batch_loss(Tensor(s)).item() == pytest.approx(
        batch_loss(Tensor(shifted)).item(), rel=1e-9
    )


def test_batch_loss_nonnegative():
    rng = np.random.default_rng(14)
    for _ in range(20):
        s = rng.standard_normal((3, 3)) * 10
        assert batch_loss(Tensor(s)).item() >= 0.0


def test_batch_loss_rejects_non_square():
    with pytest.raises(ContractError):
        batch_loss(Tensor(np.zeros((2, 3), dtype=np.float32)))


def test_in_batch_accuracy():
    s = np.array([[2.0, 0.0], [0.5, 1.0]])
    assert in_batch_accuracy(s) == 1.0
    s = np.array([[0.0, 2.0], [1.0, 0.5]])
    assert in_batch_accuracy(s) == 0.0
    s = np.array([[2.0, 0.0], [1.0, 0.5]])
    assert in_batch_accuracy(s) == 0.5


# ---------------------------------------------------------------------------
# lr schedule
# ---------------------------------------------------------------------------


def _sched_cfg(peak=0.002, warmup=100, total=1000):
    return TrainConfig(
        stage="general", epochs=1, batch_schedule=[8],
        peak_lr=peak, warmup_steps=warmup, total_steps=total,
    )


def test_lr_endpoints_and_peak():
    cfg = _sched_cfg()
    assert lr_at(0, cfg) == 0.0
    assert lr_at(100, cfg) == pytest.approx(0.002)
    assert lr_at(1000, cfg) == 0.0


def test_lr_piecewise_linear():
    cfg = _sched_cfg()
    for step in range(0, 101):
        assert lr_at(step, cfg) == pytest.approx(0.002 * step / 100)
    for step in range(100, 1001):
        assert lr_at(step, cfg) == pytest.approx(0.002 * (1000 - step) / 900)


def test_lr_max_is_at_warmup():
    cfg = _sched_cfg()
    values = [lr_at(s, cfg) for s in range(0, 1001)]
    assert max(values) == lr_at(100, cfg)


def test_lr_out_of_range():
    cfg = _sched_cfg()
    with pytest.raises(ContractError):
        lr_at(-1, cfg)
    with pytest.raises(ContractError):
        lr_at(1001, cfg)


# ---------------------------------------------------------------------------
# curriculum
# ---------------------------------------------------------------------------


def test_curriculum_defaults():
    sched = curriculum_schedule(128, 2048, 8)
    assert sched == [128, 256, 256, 512, 512, 1024, 1024, 2048]
    assert sched[0] == 128 and sched[-1] == 2048


def test_curriculum_monotone_doubles_even_epochs():
    sched = curriculum_schedule(128, 2048, 8)
    for e in range(1, 8):
        ratio = sched[e] / sched[e - 1]
        if (e + 1) % 2 == 0:  # 1-based epoch e+1 is even
            assert ratio == 2
        else:
            assert ratio == 1


def test_curriculum_single_epoch():
    assert curriculum_schedule(64, 64, 1) == [64]
    with pytest.raises(ConfigError):
        curriculum_schedule(64, 128, 1)


def test_curriculum_infeasible():
    with pytest.raises(ConfigError):
        curriculum_schedule(128, 2048, 6)  # needs 4 doublings, only 3 even epochs
    with pytest.raises(ConfigError):
        curriculum_schedule(128, 384, 8)  # not a power of two


def test_conversational_defaults_shape():
    cfg = TrainConfig.conversational_defaults()
    assert cfg.epochs == 10
    assert cfg.batch_schedule == [2048] * 10
    # capped at the dataset size when resolved
    resolved = cfg.resolved_for(100)
    assert resolved.batch_schedule == [100] * 10


# ---------------------------------------------------------------------------
# run_stage
# ---------------------------------------------------------------------------


def test_run_stage_overfits_tiny_dataset():
    model = _toy_model(seed=1)
    epochs = 400  # one full batch per epoch; near-constant lr for the sanity check
    cfg = TrainConfig(
        stage="general", epochs=epochs, batch_schedule=[8] * epochs,
        peak_lr=1e-3, warmup_steps=0, total_steps=100_000,
        weight_decay=0.0, seed=7,
    )
    result = run_stage(TOY_PAIRS, model, cfg)
    assert result.epoch_mean_acc[-1] == 1.0, (
        f"in-batch accuracy stuck at {result.epoch_mean_acc[-1]}"
    )


def test_run_stage_deterministic():
    losses = []
    for _ in range(2):
        model = _toy_model(seed=2)
        cfg = TrainConfig(
            stage="general", epochs=3, batch_schedule=[4, 4, 8], peak_lr=1e-3, seed=5,
        )
        result = run_stage(TOY_PAIRS, model, cfg)
        losses.append(result.epoch_mean_loss)
    assert losses[0] == losses[1]


def test_run_stage_empty_stream():
    model = _toy_model()
    cfg = TrainConfig(stage="general", epochs=1, batch_schedule=[4])
    with pytest.raises(DataError):
        run_stage([], model, cfg)


def test_run_stage_writes_checkpoints_and_log(tmp_path):
    model = _toy_model(seed=3)
    cfg = TrainConfig(stage="general", epochs=2, batch_schedule=[4, 4], seed=1)
    log = tmp_path / "metrics.jsonl"
    run_stage(TOY_PAIRS, model, cfg, ckpt_dir=tmp_path, log_path=log)
    assert (tmp_path / "general-epoch001.ckpt").exists()
    assert (tmp_path / "general-epoch002.ckpt").exists()
    import json

    lines = [json.loads(l) for l in log.read_text().splitlines()]
    step_lines = [l for l in lines if "loss" in l]
    assert {"epoch", "step", "lr", "loss", "in_batch_acc"} <= set(step_lines[0])


def test_run_stage_aborts_on_divergence():
    model = _toy_model(seed=4)
    # score dot products overflow float32 -> non-finite kernel output
    model.params["tower.input.out.w"].data[:] = 1e30
    model.params["tower.response.out.w"].data[:] = 1e30
    cfg = TrainConfig(stage="general", epochs=1, batch_schedule=[8], peak_lr=1.0)
    with pytest.raises(TrainingDivergedError) as err:
        run_stage(TOY_PAIRS, model, cfg)
    assert "param_norms" in err.value.diagnostics


# ---------------------------------------------------------------------------
# FAQ fine-tuning
# ---------------------------------------------------------------------------

FAQ_ANSWERS = {
    "a0": "het antwoord over openingstijden van de winkel",
    "a1": "het antwoord over de prijs van een kaartje",
    "a2": "het antwoord over de vertrektijd van de trein",
}
FAQ_ROWS = [
    ("wanneer is de winkel open", "a0"),
    ("hoe laat gaat de winkel open", "a0"),
    ("wat kost een kaartje", "a1"),
    ("hoe duur is een kaartje", "a1"),
    ("hoe laat vertrekt de trein", "a2"),
    ("wanneer gaat de trein weg", "a2"),
]


def test_assemble_faq_batches_no_duplicate_ids():
    rng = np.random.default_rng(0)
    for k in (2, 3, 4, 6):
        batches = assemble_faq_batches(FAQ_ROWS, k, rng)
        flat = [i for b in batches for i in b]
        assert sorted(flat) == list(range(len(FAQ_ROWS)))
        for b in batches:
            ids = [FAQ_ROWS[i][1] for i in b]
            assert len(ids) == len(set(ids)), f"duplicate answer id in batch {b}"


def test_assemble_faq_batches_unique_ids_exact_chunks():
    rows = [(f"q{i}", f"id{i}") for i in range(76)]
    rng = np.random.default_rng(1)
    batches = assemble_faq_batches(rows, 16, rng)
    assert len(batches) == 5  # ceil(76/16)
    assert [len(b) for b in batches] == [16, 16, 16, 16, 12]


def test_finetune_rejects_dangling_answer_id():
    model = _toy_model()
    cfg = TrainConfig.finetune_defaults(epochs=1, batch_size=4)
    with pytest.raises(DataError):
        finetune_faq([("vraag", "nope")], FAQ_ANSWERS, model, cfg)


def test_finetune_overfits_toy_faq():
    from faqrank.evaluation import accuracy_at_1

    corpus = [q for q, _ in FAQ_ROWS] + list(FAQ_ANSWERS.values())
    vocab = train_bpe(corpus, vocab_size=160)
    cfg = EncoderConfig(
        vocab_size=vocab.size, embed_dim=16, attn_proj_dim=16, num_shared_layers=2,
        pooling_heads=2, tower_layers=2, final_dim=16, pos_period_1=7, pos_period_2=5,
        ffn_hidden_dim=32, dropout_rate=0.0, max_sequence_length=20,
    )
    model = Model(config=cfg, params=init_params(cfg, seed=5), vocab=vocab)
    tcfg = TrainConfig(
        stage="finetune", epochs=400, batch_schedule=[6] * 400,
        peak_lr=1e-3, warmup_steps=0, total_steps=100_000,
        weight_decay=0.0, seed=3,
    )
    finetune_faq(FAQ_ROWS, FAQ_ANSWERS, model, tcfg)
    acc = accuracy_at_1(model, FAQ_ROWS, FAQ_ANSWERS)
    assert acc == 1.0
