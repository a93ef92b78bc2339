"""Training loops: the in-batch-negative objective, the warmup/linear-decay
learning-rate schedule, the batch-size-doubling curriculum, and stage
runners for general/conversational pre-training and FAQ fine-tuning.

Every run is deterministic from its seed: one Generator drives shuffling,
batch assembly and dropout in a fixed order.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import numerics as nm
from .bpe import TokenSequence
from .checkpoint import save_model
from .errors import ConfigError, ContractError, DataError, NonFiniteError, TrainingDivergedError
from .model import Model, encode_batch
from .numerics import AdamState, GradTape, Tensor
from .pairs import UtterancePair


def batch_loss(scores: Tensor) -> Tensor:
    """Mean over rows of -log softmax(row)[diagonal].

    Row i holds the scores of input i against every response in the batch;
    the diagonal is the true pair, everything else an in-batch negative.
    """
    s = scores.data
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ContractError(f"score matrix must be square, got {s.shape}")
    return nm.neg(nm.mean_all(nm.take_diag(nm.log_softmax(scores))))


def in_batch_accuracy(scores: np.ndarray) -> float:
    """Fraction of rows whose diagonal entry is the row argmax."""
    return float(np.mean(scores.argmax(axis=1) == np.arange(scores.shape[0])))


def lr_at(step: int, cfg: "TrainConfig") -> float:
    """Linear 0 -> peak over the warmup, then linear peak -> 0 at the end."""
    if step < 0 or step > cfg.total_steps:
        raise ContractError(f"step {step} outside [0, {cfg.total_steps}]")
    if step <= cfg.warmup_steps:
        if cfg.warmup_steps == 0:
            return cfg.peak_lr
        return cfg.peak_lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    return cfg.peak_lr * (cfg.total_steps - step) / span


def curriculum_schedule(start_k: int = 128, end_k: int = 2048, epochs: int = 8) -> list[int]:
    """Per-epoch batch sizes, doubling at every second epoch.

    Epoch e (1-based) gets start_k * 2^(e // 2); the endpoints must be
    reachable, i.e. end_k = start_k * 2^(epochs // 2).
    """
    if start_k < 1 or end_k < start_k or epochs < 1:
        raise ConfigError("need start_k >= 1, end_k >= start_k, epochs >= 1")
    ratio = end_k / start_k
    doublings = int(round(math.log2(ratio)))
    if 2**doublings * start_k != end_k:
        raise ConfigError(f"end_k/start_k must be a power of two, got {ratio}")
    if doublings != epochs // 2:
        raise ConfigError(
            f"doubling at every second epoch over {epochs} epochs gives "
            f"{epochs // 2} doublings, but {start_k}->{end_k} needs {doublings}"
        )
    return [start_k * 2 ** (e // 2) for e in range(1, epochs + 1)]


@dataclass
class TrainConfig:
    stage: str  # general | conversational | finetune
    epochs: int
    batch_schedule: list[int]
    peak_lr: float = 1e-3
    warmup_steps: int | None = None  # None: min(10_000, 10% of total)
    total_steps: int | None = None  # None: computed from the data
    weight_decay: float = 1e-5
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    symmetric_loss: bool = False  # add the response->input direction

    def __post_init__(self):
        if self.stage not in ("general", "conversational", "finetune"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if len(self.batch_schedule) != self.epochs:
            raise ConfigError("batch_schedule length must equal epochs")
        if any(k < 1 for k in self.batch_schedule):
            raise ConfigError("every batch size must be >= 1")
        if self.peak_lr <= 0:
            raise ConfigError("peak_lr must be positive")
        if (
            self.warmup_steps is not None
            and self.total_steps is not None
            and self.warmup_steps > self.total_steps
        ):
            raise ConfigError("warmup_steps must not exceed total_steps")

    @classmethod
    def general_defaults(cls, **overrides) -> "TrainConfig":
        kw = dict(stage="general", epochs=8, batch_schedule=curriculum_schedule(128, 2048, 8))
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def conversational_defaults(cls, **overrides) -> "TrainConfig":
        kw = dict(stage="conversational", epochs=10, batch_schedule=[2048] * 10)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def finetune_defaults(cls, epochs: int = 40, batch_size: int = 16, **overrides) -> "TrainConfig":
        # fine-tuning protects pre-trained weights with peak_lr/10
        kw = dict(
            stage="finetune", epochs=epochs, batch_schedule=[batch_size] * epochs,
            peak_lr=1e-4,
        )
        kw.update(overrides)
        return cls(**kw)

    def resolved_for(self, n_items: int) -> "TrainConfig":
        """Cap batch sizes at the dataset size; fill in total/warmup steps."""
        schedule = [min(k, n_items) for k in self.batch_schedule]
        total = self.total_steps
        if total is None:
            total = sum(math.ceil(n_items / k) for k in schedule)
        warmup = self.warmup_steps
        if warmup is None:
            warmup = min(10_000, total // 10)
        if warmup > total:
            raise ConfigError(f"warmup {warmup} exceeds total steps {total}")
        return TrainConfig(**{
            **self.__dict__,
            "batch_schedule": schedule,
            "total_steps": total,
            "warmup_steps": warmup,
        })


@dataclass
class StepRecord:
    epoch: int
    step: int
    lr: float
    loss: float
    in_batch_acc: float


@dataclass
class StageResult:
    records: list[StepRecord] = field(default_factory=list)
    epoch_mean_loss: list[float] = field(default_factory=list)
    epoch_mean_acc: list[float] = field(default_factory=list)


class MetricsLog:
    """JSON-lines metrics writer; one record per step, one per epoch."""

    def __init__(self, path=None):
        self._f = open(path, "w", encoding="utf-8") if path else None

    def write(self, record: dict) -> None:
        if self._f is not None:
            self._f.write(json.dumps(record) + "\n")
            self._f.flush()

    def close(self) -> None:
        if self._f is not None:
            self._f.close()


def shuffled_batches(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded shuffle, then contiguous chunks; the final short batch is kept."""
    order = rng.permutation(n)
    return [order[start : start + k] for start in range(0, n, k)]


def assemble_faq_batches(
    rows: Sequence[tuple[str, str]],
    k: int,
    rng: np.random.Generator,
) -> list[list[int]]:
    """Batches of row indices with unique answer ids inside each batch.

    Greedy pass over a seeded shuffle; a row whose answer id is already in
    the open batch is deferred to later batches, so no trained batch ever
    pairs a question against its own answer as a negative.
    """
    pending = [int(i) for i in rng.permutation(len(rows))]
    batches: list[list[int]] = []
    while pending:
        batch: list[int] = []
        ids_in_batch: set[str] = set()
        deferred: list[int] = []
        for idx in pending:
            aid = rows[idx][1]
            if len(batch) < k and aid not in ids_in_batch:
                batch.append(idx)
                ids_in_batch.add(aid)
            else:
                deferred.append(idx)
        batches.append(batch)
        pending = deferred
    return batches


def _training_step(
    model: Model,
    inputs: list[TokenSequence],
    responses: list[TokenSequence],
    cfg: TrainConfig,
    state: AdamState,
    lr: float,
    rng: np.random.Generator,
) -> tuple[float, float]:
    with GradTape() as tape:
        x = encode_batch(inputs, "input", model.params, model.config, train_mode=True, rng=rng)
        r = encode_batch(responses, "response", model.params, model.config, train_mode=True, rng=rng)
        scores = nm.matmul(x, nm.swap_last2(r))
        loss = batch_loss(scores)
        if cfg.symmetric_loss:
            loss = nm.scale(nm.add(loss, batch_loss(nm.swap_last2(scores))), 0.5)
    loss_val = loss.item()
    if not np.isfinite(loss_val):
        raise NonFiniteError("loss is not finite")
    grads = nm.backward(tape, loss, model.params)
    nm.adam_step(
        model.params, grads, state, lr,
        weight_decay=cfg.weight_decay, betas=cfg.adam_betas, eps=cfg.adam_eps,
    )
    return loss_val, in_batch_accuracy(scores.data)


def _diagnostic_dump(model: Model, cfg: TrainConfig, epoch: int, step: int, lr: float) -> dict:
    return {
        "stage": cfg.stage,
        "epoch": epoch,
        "step": step,
        "lr": lr,
        "param_norms": {
            name: float(np.linalg.norm(p.data)) for name, p in sorted(model.params.items())
        },
    }


def _train_loop(
    model: Model,
    cfg: TrainConfig,
    inputs: list[TokenSequence],
    responses: list[TokenSequence],
    make_batches: Callable[[int, np.random.Generator], Iterable],
    ckpt_dir=None,
    log_path=None,
) -> StageResult:
    run_cfg = cfg.resolved_for(len(inputs))
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_params(model.params)
    log = MetricsLog(log_path)
    result = StageResult()
    step = 0
    start = time.monotonic()
    try:
        for epoch in range(1, run_cfg.epochs + 1):
            k = run_cfg.batch_schedule[epoch - 1]
            losses, accs = [], []
            for batch_idx in make_batches(k, rng):
                # the schedule is exactly 0 at its endpoints; step with a floor
                lr = max(
                    lr_at(min(step, run_cfg.total_steps), run_cfg),
                    run_cfg.peak_lr * 1e-6,
                )
                try:
                    loss_val, acc = _training_step(
                        model,
                        [inputs[i] for i in batch_idx],
                        [responses[i] for i in batch_idx],
                        run_cfg, state, lr, rng,
                    )
                except NonFiniteError as exc:
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch} step {step}",
                        diagnostics=_diagnostic_dump(model, cfg, epoch, step, lr),
                    ) from exc
                step += 1
                losses.append(loss_val)
                accs.append(acc)
                rec = StepRecord(epoch=epoch, step=step, lr=lr, loss=loss_val, in_batch_acc=acc)
                result.records.append(rec)
                log.write(rec.__dict__)
            mean_loss = float(np.mean(losses))
            mean_acc = float(np.mean(accs))
            result.epoch_mean_loss.append(mean_loss)
            result.epoch_mean_acc.append(mean_acc)
            log.write({
                "epoch": epoch, "step": step, "mean_loss": mean_loss,
                "mean_in_batch_acc": mean_acc,
                "elapsed_s": round(time.monotonic() - start, 3),
            })
            if ckpt_dir is not None:
                save_model(Path(ckpt_dir) / f"{cfg.stage}-epoch{epoch:03d}.ckpt", model)
    finally:
        log.close()
    return result


def run_stage(
    pairs: Iterable[UtterancePair],
    model: Model,
    cfg: TrainConfig,
    ckpt_dir=None,
    log_path=None,
) -> StageResult:
    """Train `model` in place over the pair stream for cfg.epochs epochs.

    Tokenization happens once up front. Each epoch reshuffles with the run
    seed and uses that epoch's batch size, capped at the dataset size.
    """
    pair_list = list(pairs)
    if not pair_list:
        raise DataError("cannot train on an empty pair stream")
    inputs = [model.tokenize(p.input) for p in pair_list]
    responses = [model.tokenize(p.response) for p in pair_list]
    n = len(pair_list)
    return _train_loop(
        model, cfg, inputs, responses,
        make_batches=lambda k, rng: shuffled_batches(n, k, rng),
        ckpt_dir=ckpt_dir, log_path=log_path,
    )


def finetune_faq(
    train_rows: Sequence[tuple[str, str]],
    answers: dict[str, str],
    model: Model,
    cfg: TrainConfig,
    ckpt_dir=None,
    log_path=None,
) -> StageResult:
    """Fine-tune on (question, answer_id) rows against the answers table.

    Each question is paired with its answer text and trained with the same
    in-batch-negative objective; batch assembly defers rows so that no
    batch contains two rows with the same answer id.
    """
    if not train_rows:
        raise DataError("no fine-tuning rows")
    for q, aid in train_rows:
        if aid not in answers:
            raise DataError(f"row {q!r} references unknown answer_id {aid!r}")
    train_rows = list(train_rows)
    questions = [model.tokenize(q) for q, _ in train_rows]
    answer_seqs = [model.tokenize(answers[aid]) for _, aid in train_rows]
    return _train_loop(
        model, cfg, questions, answer_seqs,
        make_batches=lambda k, rng: assemble_faq_batches(train_rows, k, rng),
        ckpt_dir=ckpt_dir, log_path=log_path,
    )
