"""Visual graph construction from detector output."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"malformed box {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def normalized(self, width: float, height: float) -> np.ndarray:
        return np.array([self.x1 / width, self.y1 / height, self.x2 / width, self.y2 / height])


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 when the union is empty."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@dataclass
class Detection:
    box: BoundingBox
    feature: np.ndarray


@dataclass
class DetectionSet:
    image_id: str
    image_size: tuple[float, float]
    detections: list[Detection]

    def __post_init__(self):
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError(f"{self.image_id}: image size must be positive, got {self.image_size}")
        if self.detections:
            dims = {len(d.feature) for d in self.detections}
            if len(dims) != 1:
                raise ValueError(f"{self.image_id}: detections have mixed feature lengths {sorted(dims)}")

    @property
    def d_roi(self) -> int:
        return len(self.detections[0].feature)

    @classmethod
    def from_json(cls, doc: dict) -> "DetectionSet":
        try:
            dets = [Detection(BoundingBox(*map(float, d["bbox"])), np.asarray(d["feature"], dtype=np.float64))
                    for d in doc["detections"]]
            return cls(str(doc["image_id"]), tuple(float(v) for v in doc["image_size"]), dets)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed detection document: {exc!r}") from exc

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "image_size": list(self.image_size),
            "detections": [
                {"bbox": [d.box.x1, d.box.y1, d.box.x2, d.box.y2], "feature": d.feature.tolist()}
                for d in self.detections
            ],
        }


def read_detections(path: str | Path) -> list[DetectionSet]:
    """Load detection documents from a JSON file, a JSON-lines file or a directory of JSON files."""
    path = Path(path)
    if path.is_dir():
        return [DetectionSet.from_json(json.loads(p.read_text())) for p in sorted(path.glob("*.json"))]
    text = path.read_text()
    stripped = text.lstrip()
    if stripped.startswith("["):
        return [DetectionSet.from_json(d) for d in json.loads(text)]
    try:
        return [DetectionSet.from_json(json.loads(text))]
    except json.JSONDecodeError:
        return [DetectionSet.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass
class VisualGraph:
    nodes: Tensor  # K1 x (d_roi + 4)
    edges: np.ndarray  # K1 x K1, symmetric binary
    node_mask: np.ndarray  # K1 bool
    image_id: str = ""

    @property
    def size(self) -> int:
        return int(self.node_mask.sum())


def build_visual_graph(dets: DetectionSet, iou_threshold: float = 0.3, K1: int = 100) -> VisualGraph:
    """Nodes are RoI features with the normalized box appended; edges join
    pairs whose IoU is strictly above the threshold, plus self-loops."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou threshold must be in [0, 1], got {iou_threshold}")
    n = len(dets.detections)
    if n == 0:
        raise ValueError(f"{dets.image_id}: empty detection set")
    if n > K1:
        raise ValueError(f"{dets.image_id}: {n} detections exceed K1={K1}")
    w, h = dets.image_size
    feats = np.zeros((K1, dets.d_roi + 4))
    for i, d in enumerate(dets.detections):
        feats[i, : dets.d_roi] = d.feature
        feats[i, dets.d_roi:] = d.box.normalized(w, h)
    edges = np.zeros((K1, K1))
    boxes = [d.box for d in dets.detections]
    for i in range(n):
        edges[i, i] = 1.0
        for j in range(i + 1, n):
            if iou(boxes[i], boxes[j]) > iou_threshold:
                edges[i, j] = edges[j, i] = 1.0
    mask = np.zeros(K1, dtype=bool)
    mask[:n] = True
    return VisualGraph(Tensor(feats), edges, mask, dets.image_id)


def stack_visual(graphs: Sequence[VisualGraph]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenate graphs into block form: node rows, block-diagonal edges, mask."""
    feats = np.concatenate([g.nodes.data for g in graphs], axis=0)
    mask = np.concatenate([g.node_mask for g in graphs])
    edges = _block_diag([g.edges for g in graphs])
    return feats, edges, mask


def _block_diag(blocks: Sequence[np.ndarray]) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i : i + k, i : i + k] = b
        i += k
    return out
