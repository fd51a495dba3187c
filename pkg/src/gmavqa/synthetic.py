"""A desk-scale stand-in for VQA data with a planted cross-graph pairing.

Each visual node carries an identity key (the embedding of an object
category, distinct within an image, plus jitter) and an attribute vector
drawn around one of ``n_answers`` cluster centres.  Each question token
is a noisy copy of one visual node's key.  One target node is referenced
by more tokens than any other node, and the answer is the attribute
cluster of that node.  Categories and attributes are drawn independently,
so the question alone says nothing about the answer, and the image alone
does not say which node is asked about.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .data import RawExample
from .question import DependencyParse, Token
from .visual import BoundingBox, Detection, DetectionSet

IMAGE_SIZE = (100.0, 100.0)


@dataclass
class SyntheticExample:
    raw: RawExample
    pairing: np.ndarray  # visual node referenced by each question token
    target_node: int


def split_dims(d_roi: int) -> tuple[int, int]:
    """(key dims, attribute dims) of a synthetic RoI feature."""
    if d_roi < 4:
        raise ValueError("synthetic task needs d_roi >= 4")
    d_attr = max(2, (3 * d_roi) // 7)
    return d_roi - d_attr, d_attr


def cluster_centres(cfg: RunConfig, seed: int) -> np.ndarray:
    _, d_attr = split_dims(cfg.d_roi)
    return np.random.default_rng([seed, 7919]).normal(size=(cfg.n_answers, d_attr))


def category_keys(cfg: RunConfig, seed: int) -> np.ndarray:
    d_key, _ = split_dims(cfg.d_roi)
    return np.random.default_rng([seed, 6007]).normal(size=(cfg.synth_categories, d_key))


def _random_tree(rng, n: int) -> list[int]:
    """Heads (1-based, 0 = root) of a uniformly shuffled recursive tree."""
    order = rng.permutation(n)
    heads = [0] * n
    for k in range(1, n):
        heads[order[k]] = int(order[rng.integers(k)]) + 1
    return heads


def make_example(cfg: RunConfig, rng: np.random.Generator, label: int, centres: np.ndarray,
                 codebook: np.ndarray, noise: float, distractors: int) -> SyntheticExample:
    d_key, d_attr = split_dims(cfg.d_roi)
    if cfg.d_word < d_key:
        raise ValueError("d_word must be at least the key width")
    n_nodes = int(rng.integers(max(2, cfg.K1 // 2), min(cfg.K1, len(codebook)) + 1))
    cats = rng.choice(len(codebook), size=n_nodes, replace=False)
    keys = codebook[cats] + 0.1 * rng.normal(size=(n_nodes, d_key))
    clusters = rng.integers(cfg.n_answers, size=n_nodes)
    target = int(rng.integers(n_nodes))
    clusters[target] = label
    attrs = centres[clusters] + 0.1 * rng.normal(size=(n_nodes, d_attr))
    dets = []
    for i in range(n_nodes):
        cx, cy = rng.uniform(15, 85, size=2)
        w, h = rng.uniform(10, 40, size=2)
        box = BoundingBox(max(0.0, cx - w / 2), max(0.0, cy - h / 2), min(100.0, cx + w / 2), min(100.0, cy + h / 2))
        dets.append(Detection(box, np.concatenate([keys[i], attrs[i]])))

    length = int(rng.integers(2, cfg.K2 + 1))
    n_distract = min(distractors, (length - 1) // 2, n_nodes - 1)
    others = rng.permutation([i for i in range(n_nodes) if i != target])[:n_distract]
    refs = np.array([target] * (length - n_distract) + [int(o) for o in others])
    refs = refs[rng.permutation(length)]
    vectors = np.zeros((length, cfg.d_word))
    vectors[:, :d_key] = keys[refs] + noise * rng.normal(size=(length, d_key))
    heads = _random_tree(rng, length)
    parse = DependencyParse([Token(k + 1, f"obj{refs[k]}", heads[k]) for k in range(length)])
    raw = RawExample(DetectionSet("", IMAGE_SIZE, dets), parse, label, vectors=vectors)
    return SyntheticExample(raw, refs, target)


def generate_synthetic(cfg: RunConfig, seed: int, n: int | None = None, noise: float | None = None,
                       distractors: int | None = None) -> list[SyntheticExample]:
    """Deterministic in ``(cfg, seed)``; labels are balanced over the answer classes."""
    n = cfg.n_train + cfg.n_val if n is None else n
    noise = cfg.synth_noise if noise is None else noise
    distractors = cfg.synth_distractors if distractors is None else distractors
    centres = cluster_centres(cfg, seed)
    codebook = category_keys(cfg, seed)
    labels = np.random.default_rng([seed, 104729]).permutation(np.arange(n) % cfg.n_answers)
    out = []
    for i in range(n):
        ex = make_example(cfg, np.random.default_rng([seed, i]), int(labels[i]), centres, codebook, noise,
                          distractors)
        ex.raw.detections.image_id = f"synth-{seed}-{i}"
        out.append(ex)
    return out


def synthetic_dataset(cfg: RunConfig, seed: int) -> list[RawExample]:
    """``n_train`` training examples followed by ``n_val`` held-out ones."""
    exs = generate_synthetic(cfg, seed)
    for i, ex in enumerate(exs):
        ex.raw.split = "train" if i < cfg.n_train else "val"
    return [ex.raw for ex in exs]
