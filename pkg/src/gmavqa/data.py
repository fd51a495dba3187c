"""Examples and the JSON dataset file shared by ``synth``, ``train`` and ``eval``."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .question import DependencyParse, EmbeddingTable, QuestionLayout, Token, question_layout
from .visual import DetectionSet, VisualGraph, build_visual_graph

DATASET_FORMAT = "gma-dataset/1"


@dataclass
class Example:
    visual: VisualGraph
    question: QuestionLayout
    label: int
    votes: np.ndarray | None = None  # per-class annotator counts, when available

    def targets(self, n_answers: int) -> np.ndarray:
        if self.votes is not None:
            return np.minimum(1.0, np.asarray(self.votes, dtype=np.float64) / 3.0)
        t = np.zeros(n_answers)
        t[self.label] = 1.0
        return t


@dataclass
class RawExample:
    """File-level record; turned into an :class:`Example` by :func:`materialize`."""

    detections: DetectionSet
    parse: DependencyParse
    label: int
    split: str = "train"
    vectors: np.ndarray | None = None  # token embeddings, if not looked up from a table
    votes: list[int] | None = None

    def to_json(self) -> dict:
        doc = {
            "split": self.split,
            "label": int(self.label),
            "visual": self.detections.to_json(),
            "question": {
                "words": self.parse.words,
                "heads": [t.head for t in self.parse.tokens],
            },
        }
        if self.vectors is not None:
            doc["question"]["vectors"] = np.asarray(self.vectors).tolist()
        if self.votes is not None:
            doc["votes"] = list(self.votes)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "RawExample":
        q = doc["question"]
        tokens = [Token(i + 1, w, int(h)) for i, (w, h) in enumerate(zip(q["words"], q["heads"]))]
        vectors = np.asarray(q["vectors"], dtype=np.float64) if "vectors" in q else None
        return cls(DetectionSet.from_json(doc["visual"]), DependencyParse(tokens), int(doc["label"]),
                   doc.get("split", "train"), vectors, doc.get("votes"))


def materialize(raw: RawExample, K1: int, K2: int, iou_threshold: float,
                emb: EmbeddingTable | None = None) -> Example:
    vg = build_visual_graph(raw.detections, iou_threshold, K1)
    if raw.vectors is not None:
        vecs = raw.vectors
    elif emb is not None:
        vecs = emb.embed(raw.parse.words)
    else:
        raise ValueError("question has no stored vectors and no embedding table was given")
    lay = question_layout(raw.parse, vecs, K2)
    votes = None if raw.votes is None else np.asarray(raw.votes, dtype=np.float64)
    return Example(vg, lay, raw.label, votes)


def write_dataset(path: str | Path, raws: Sequence[RawExample], n_answers: int, meta: dict | None = None) -> None:
    doc = {"format": DATASET_FORMAT, "n_answers": n_answers, "meta": meta or {},
           "examples": [r.to_json() for r in raws]}
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def read_dataset(path: str | Path) -> tuple[list[RawExample], int, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != DATASET_FORMAT:
        raise ValueError(f"{path}: not a {DATASET_FORMAT} file")
    return [RawExample.from_json(e) for e in doc["examples"]], int(doc["n_answers"]), doc.get("meta", {})
