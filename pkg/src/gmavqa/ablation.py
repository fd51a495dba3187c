"""Seeded ablations over stack depth and graph-encoder variant."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DESK, RunConfig
from .train import train

log = logging.getLogger(__name__)

# (label, config overrides); every variant is trained end to end from scratch
STACK_VARIANTS = [("GMA-1", {"n_stack": 1}), ("GMA-2", {"n_stack": 2}), ("GMA-3", {"n_stack": 3})]
ENCODER_VARIANTS = [
    ("dual", {"n_stack": 3, "encoder": "dual"}),
    ("explicit", {"n_stack": 3, "encoder": "explicit"}),
    ("implicit", {"n_stack": 3, "encoder": "implicit"}),
]


@dataclass
class AblationRun:
    variant: str
    seed: int
    val_acc: float
    train_acc: float
    seconds: float


def run_variant(base: RunConfig, label: str, overrides: dict, seed: int) -> AblationRun:
    cfg = base.with_(seed=seed, log_train_acc=False, **overrides)
    t0 = time.perf_counter()
    result = train(cfg)
    last = result.metrics[-1]
    run = AblationRun(label, seed, last["val_acc"], last["train_acc_running"], time.perf_counter() - t0)
    log.info("%s seed %d: val %.4f (%.0fs)", label, seed, run.val_acc, run.seconds)
    return run


def run_ablation(variants, seeds, base: RunConfig = DESK, cache: dict | None = None) -> dict[str, list[AblationRun]]:
    """Train every variant on every seed.  ``cache`` maps (label, seed) to a run, letting
    the stacking and encoder ablations share their identical GMA-3 / dual runs."""
    cache = {} if cache is None else cache
    out: dict[str, list[AblationRun]] = {}
    for label, overrides in variants:
        runs = []
        for seed in seeds:
            key = (json.dumps(overrides, sort_keys=True), seed)
            if key not in cache:
                cache[key] = run_variant(base, label, overrides, seed)
            runs.append(cache[key])
        out[label] = runs
    return out


def mean_acc(runs: list[AblationRun]) -> float:
    return float(np.mean([r.val_acc for r in runs]))


def summarize(results: dict[str, list[AblationRun]]) -> str:
    lines = []
    for label, runs in results.items():
        accs = " ".join(f"{r.val_acc:.3f}" for r in runs)
        lines.append(f"{label:>9}: mean {100 * mean_acc(runs):6.2f}%  per-seed [{accs}]")
    return "\n".join(lines)


def save_results(path: str | Path, results: dict[str, list[AblationRun]]) -> None:
    doc = {k: [r.__dict__ for r in v] for k, v in results.items()}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))
