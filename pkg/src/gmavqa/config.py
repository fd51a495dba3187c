"""Run configuration and the flat ``key=value`` config file format."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class RunConfig:
    # graph sizes
    K1: int = 100
    K2: int = 14
    d: int = 2048
    n_stack: int = 3
    iou_threshold: float = 0.3
    # model
    tau_policy: str = "sqrt_d"  # sqrt_d | inv_sqrt_d | <positive float>
    similarity: str = "negated"  # negated | literal
    encoder: str = "dual"  # dual | explicit | implicit
    share_stacks: bool = False
    head_hidden: int = 2048
    n_answers: int = 3129
    d_word: int = 300
    d_roi: int = 2048
    dropout_word: float = 0.25
    dropout_question: float = 0.25
    dropout_image: float = 0.5
    dropout_reasoning: float = 0.5
    # optimisation
    lr_base: float = 5e-4
    lr_peak: float = 2e-3
    warmup_epoch: int = 4
    decay_start: int = 25
    decay_every: int = 2
    decay_factor: float = 0.5
    batch_size: int = 256
    epochs: int = 35
    stop_at_train_acc: float = 0.0  # >0 ends training once an epoch's train accuracy reaches it
    log_train_acc: bool = True  # eval-mode pass over the training set after each epoch
    seed: int = 0
    dtype: str = "float64"
    # synthetic task
    n_train: int = 2000
    n_val: int = 500
    synth_noise: float = 0.1
    synth_distractors: int = 1
    synth_categories: int = 16
    # files
    train_data: str = ""
    val_data: str = ""
    out_dir: str = "runs/default"

    def __post_init__(self):
        for name in ("K1", "K2", "d", "n_stack", "head_hidden", "n_answers", "d_word", "d_roi", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.d % 2:
            raise ValueError("d must be even (the Bi-GRU splits it across two directions)")
        if self.n_answers < 2:
            raise ValueError("n_answers must be at least 2")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in [0, 1]")
        if self.similarity not in ("negated", "literal"):
            raise ValueError(f"similarity must be negated or literal, got {self.similarity!r}")
        if self.encoder not in ("dual", "explicit", "implicit"):
            raise ValueError(f"encoder must be dual, explicit or implicit, got {self.encoder!r}")
        if self.synth_categories < 2:
            raise ValueError("synth_categories must be at least 2")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        for name in ("dropout_word", "dropout_question", "dropout_image", "dropout_reasoning"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")
        self.tau  # validates the policy

    @property
    def tau(self) -> float:
        if self.tau_policy == "inv_sqrt_d":
            return 1.0 / np.sqrt(self.d)
        if self.tau_policy == "sqrt_d":
            return float(np.sqrt(self.d))
        try:
            value = float(self.tau_policy)
        except ValueError:
            raise ValueError(f"bad tau_policy {self.tau_policy!r}") from None
        if not value > 0:
            raise ValueError("tau must be positive")
        return value

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


FULL = RunConfig()
DESK = RunConfig(
    K1=6, K2=5, d=16, batch_size=8, head_hidden=64, n_answers=10, d_roi=14, d_word=300,
    lr_base=2.5e-3, lr_peak=1e-2,
    dropout_word=0.0, dropout_question=0.0, dropout_image=0.0, dropout_reasoning=0.0,
)
PRESETS = {"full": FULL, "desk": DESK}


def _coerce(kind: type, raw: str):
    if kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(raw)


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def config_from_dict(values: dict, base: RunConfig | None = None) -> RunConfig:
    values = dict(values)
    preset = values.pop("preset", None)
    if base is None:
        if preset is not None and preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}")
        base = PRESETS[preset] if preset else FULL
    known = {f.name: f for f in fields(RunConfig)}
    changes = {}
    for key, raw in values.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        kind = _TYPES[known[key].type] if isinstance(known[key].type, str) else known[key].type
        changes[key] = _coerce(kind, raw) if isinstance(raw, str) else kind(raw)
    return replace(base, **changes)


def parse_config(text: str) -> RunConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    cfg = config_from_dict(values)
    seed = os.environ.get("GMA_SEED")
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    return cfg


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in cfg.to_dict().items())
