"""Training and evaluation loops."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import Example, materialize, read_dataset
from .head import vqa_accuracy
from .model import GmaNet, batch_loss, forward
from .optim import Adamax
from .synthetic import synthetic_dataset
from .tensor import NonFiniteError, Tape, backward

log = logging.getLogger(__name__)

SCHEDULE_NOTE = (
    "lr = lr_base before warmup_epoch, lr_peak from warmup_epoch on (the warm-up is read as a "
    "step change), then multiplied by decay_factor once per decay_every epochs past decay_start"
)


class NonFiniteLoss(RuntimeError):
    pass


def lr_at_epoch(epoch: int, cfg: RunConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch < cfg.warmup_epoch:
        return cfg.lr_base
    halvings = max(0, (epoch - cfg.decay_start) // cfg.decay_every)
    return cfg.lr_peak * cfg.decay_factor**halvings


def load_examples(cfg: RunConfig) -> tuple[list[Example], list[Example]]:
    """Training and held-out examples from the configured files, or synthetic ones."""
    if cfg.train_data:
        raws, n_answers, _ = read_dataset(cfg.train_data)
        if n_answers != cfg.n_answers:
            raise ValueError(f"{cfg.train_data} has {n_answers} answers, config says {cfg.n_answers}")
        if cfg.val_data:
            val_raws, _, _ = read_dataset(cfg.val_data)
        else:
            val_raws = [r for r in raws if r.split != "train"]
            raws = [r for r in raws if r.split == "train"]
    else:
        allr = synthetic_dataset(cfg, cfg.seed)
        raws, val_raws = allr[: cfg.n_train], allr[cfg.n_train :]

    def build(rs):
        return [materialize(r, cfg.K1, cfg.K2, cfg.iou_threshold) for r in rs]

    return build(raws), build(val_raws)


def score_answers(answers: Sequence[int], examples: Sequence[Example], n_answers: int) -> dict:
    """Top-1 accuracy against labels and, when votes exist, mean consensus accuracy."""
    if not examples:
        raise ValueError("cannot evaluate on an empty dataset")
    if len(answers) != len(examples):
        raise ValueError(f"{len(answers)} answers for {len(examples)} examples")
    correct = 0
    consensus = []
    for ex, a in zip(examples, answers):
        if ex.label >= n_answers:
            raise ValueError(f"label {ex.label} outside the {n_answers}-answer vocabulary")
        correct += int(a == ex.label)
        if ex.votes is not None:
            consensus.append(vqa_accuracy(int(ex.votes[a])))
    out = {"n": len(examples), "accuracy": correct / len(examples)}
    if consensus:
        out["vqa_accuracy"] = float(np.mean(consensus))
    return out


def evaluate(net: GmaNet, cfg: RunConfig, examples: Sequence[Example], batch_size: int = 64) -> dict:
    """Eval-mode predictions of ``net`` scored by :func:`score_answers`."""
    if not examples:
        raise ValueError("cannot evaluate on an empty dataset")
    if net.head.n_answers != cfg.n_answers:
        raise ValueError("network and config disagree on the answer vocabulary size")
    answers = []
    for i in range(0, len(examples), batch_size):
        answers.extend(int(a) for a in forward(net, examples[i : i + batch_size], cfg).prediction.answer)
    return score_answers(answers, examples, cfg.n_answers)


def _dump_batch(out_dir: Path | None, epoch: int, step: int, batch: Sequence[Example]) -> str:
    info = {
        "epoch": epoch,
        "step": step,
        "examples": [
            {"image_id": ex.visual.image_id, "label": ex.label, "words": ex.question.words} for ex in batch
        ],
    }
    if out_dir is None:
        return json.dumps(info)
    path = out_dir / "nonfinite_batch.json"
    path.write_text(json.dumps(info, indent=1))
    return str(path)


def train_step(net: GmaNet, opt: Adamax, cfg: RunConfig, batch: Sequence[Example], rng, training: bool = True):
    opt.zero_grad()
    with Tape():
        fw = forward(net, batch, cfg, training=training, rng=rng)
        loss = batch_loss(fw, batch, cfg.n_answers)
        backward(loss)
    opt.step()
    return loss.item(), fw.prediction.answer


@dataclass
class TrainResult:
    net: GmaNet
    opt: Adamax
    metrics: list[dict] = field(default_factory=list)
    epoch: int = -1


def train(
    cfg: RunConfig,
    train_set: Sequence[Example] | None = None,
    val_set: Sequence[Example] | None = None,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> TrainResult:
    """Mini-batch Adamax training.

    Every epoch appends one JSON object to ``metrics.jsonl`` and rewrites
    ``checkpoint.gma`` in ``out_dir``.  Shuffling and dropout draw from a
    generator seeded by ``(seed, epoch)``, so a resumed run continues
    exactly as an uninterrupted one would.
    """
    if train_set is None:
        train_set, loaded_val = load_examples(cfg)
        val_set = loaded_val if val_set is None else val_set
    if not train_set:
        raise ValueError("empty training set")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    start = 0
    if resume is not None:
        ck = load_checkpoint(resume, cfg)
        net, start = ck.net, ck.epoch + 1
        opt = Adamax(net.parameters(), lr=lr_at_epoch(start, cfg))
        if ck.opt_state is not None:
            opt.state = ck.opt_state
    else:
        net = GmaNet.init(cfg)
        opt = Adamax(net.parameters(), lr=lr_at_epoch(0, cfg))

    log_path = out / "metrics.jsonl" if out is not None else None
    if log_path is not None and resume is None:
        header = {"type": "header", "config": cfg.to_dict(), "lr_schedule": SCHEDULE_NOTE}
        log_path.write_text(json.dumps(header, sort_keys=True) + "\n")

    result = TrainResult(net, opt)
    n = len(train_set)
    for epoch in range(start, cfg.epochs):
        opt.lr = lr_at_epoch(epoch, cfg)
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(n)
        total, hits = 0.0, 0
        for step, lo in enumerate(range(0, n, cfg.batch_size)):
            batch = [train_set[j] for j in order[lo : lo + cfg.batch_size]]
            try:
                loss, answers = train_step(net, opt, cfg, batch, rng)
            except NonFiniteError as exc:
                where = _dump_batch(out, epoch, step, batch)
                raise NonFiniteLoss(f"non-finite value at epoch {epoch} step {step} ({exc}); batch dumped to {where}") from exc
            if not np.isfinite(loss):
                where = _dump_batch(out, epoch, step, batch)
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch} step {step}; batch dumped to {where}")
            total += loss * len(batch)
            hits += int((answers == np.array([ex.label for ex in batch])).sum())
        record = {
            "type": "epoch",
            "epoch": epoch,
            "lr": opt.lr,
            "mean_loss": total / n,
            "train_acc_running": hits / n,
        }
        if cfg.log_train_acc:
            record["train_acc"] = evaluate(net, cfg, train_set)["accuracy"]
        if val_set:
            record["val_acc"] = evaluate(net, cfg, val_set)["accuracy"]
        result.metrics.append(record)
        result.epoch = epoch
        log.info("epoch %d %s", epoch, record)
        if out is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            save_checkpoint(out / "checkpoint.gma", net, cfg, opt.state, epoch)
        if cfg.stop_at_train_acc > 0 and record.get("train_acc", record["train_acc_running"]) >= cfg.stop_at_train_acc:
            break
    return result
