"""Question graph construction from CoNLL-U dependency parses."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .gru import GruParams, encode_batch
from .tensor import Tensor, slice_rows


class ConlluError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Token:
    index: int  # 1-based
    form: str
    head: int  # 0 = root


@dataclass
class DependencyParse:
    tokens: list[Token]
    comments: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def words(self) -> list[str]:
        return [t.form for t in self.tokens]

    def to_conllu(self) -> str:
        lines = [f"# {c}" for c in self.comments]
        for t in self.tokens:
            lines.append("\t".join([str(t.index), t.form, "_", "_", "_", "_", str(t.head), "dep" if t.head else "root", "_", "_"]))
        return "\n".join(lines) + "\n"


def _validate(tokens: list[Token], line_of: dict[int, int], first_line: int) -> None:
    n = len(tokens)
    for k, t in enumerate(tokens):
        if t.index != k + 1:
            raise ConlluError(f"token ids must run 1..n, got {t.index} at position {k + 1}", line_of[k])
        if not 0 <= t.head <= n:
            raise ConlluError(f"head {t.head} outside [0, {n}]", line_of[k])
        if t.head == t.index:
            raise ConlluError(f"token {t.index} is its own head", line_of[k])
    roots = [k for k, t in enumerate(tokens) if t.head == 0]
    if len(roots) != 1:
        where = line_of[roots[1]] if len(roots) > 1 else first_line
        raise ConlluError(f"sentence has {len(roots)} roots, expected exactly one", where)
    for k, t in enumerate(tokens):
        seen = set()
        cur = t.index
        while cur != 0:
            if cur in seen:
                raise ConlluError(f"cyclic head chain through token {t.index}", line_of[k])
            seen.add(cur)
            cur = tokens[cur - 1].head


def read_conllu(text: str) -> list[DependencyParse]:
    """Parse CoNLL-U text, keeping only the ID, FORM and HEAD columns.

    Multiword ranges (``3-4``) and empty nodes (``5.1``) are skipped.
    """
    parses: list[DependencyParse] = []
    tokens: list[Token] = []
    comments: list[str] = []
    line_of: dict[int, int] = {}
    first_line = 0

    def flush():
        nonlocal tokens, comments, line_of
        if tokens:
            _validate(tokens, line_of, first_line)
            parses.append(DependencyParse(tokens, comments))
        tokens, comments, line_of = [], [], {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        cols = line.split("\t")
        if len(cols) < 7:
            raise ConlluError(f"expected 10 tab-separated columns, found {len(cols)} (no HEAD column)", lineno)
        tid = cols[0]
        if "-" in tid or "." in tid:
            continue
        try:
            index = int(tid)
        except ValueError:
            raise ConlluError(f"bad token id {tid!r}", lineno) from None
        try:
            head = int(cols[6])
        except ValueError:
            raise ConlluError(f"bad HEAD value {cols[6]!r}", lineno) from None
        if not tokens:
            first_line = lineno
        line_of[len(tokens)] = lineno
        tokens.append(Token(index, cols[1], head))
    flush()
    return parses


def read_conllu_file(path: str | Path) -> list[DependencyParse]:
    return read_conllu(Path(path).read_text(encoding="utf-8"))


OOV_POLICIES = ("zero", "hashed", "error")


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    oov: str = "hashed"
    seed: int = 0

    def __post_init__(self):
        if self.oov not in OOV_POLICIES:
            raise ValueError(f"unknown OOV policy {self.oov!r}; choose from {OOV_POLICIES}")

    def __contains__(self, word: str) -> bool:
        return word in self.vectors or word.lower() in self.vectors

    def lookup(self, word: str) -> np.ndarray:
        vec = self.vectors.get(word)
        if vec is None:
            vec = self.vectors.get(word.lower())
        if vec is not None:
            return vec
        if self.oov == "zero":
            return np.zeros(self.dim)
        if self.oov == "error":
            raise KeyError(f"out-of-vocabulary word {word!r}")
        digest = hashlib.blake2b(word.lower().encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng([self.seed, int.from_bytes(digest, "little")])
        return rng.normal(0.0, 1.0 / np.sqrt(self.dim), size=self.dim)

    def embed(self, words: Sequence[str]) -> np.ndarray:
        return np.stack([self.lookup(w) for w in words]) if words else np.zeros((0, self.dim))


def load_embeddings(path: str | Path, oov: str = "hashed", seed: int = 0, dim: int | None = None) -> EmbeddingTable:
    """Read a GloVe-style text file: a word then ``dim`` reals per line."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values for {word!r}, found {len(values)}")
            try:
                vectors[word] = np.array(values, dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value in vector for {word!r}") from None
    if dim is None:
        raise ValueError(f"{path}: no embeddings found")
    return EmbeddingTable(dim, vectors, oov, seed)


@dataclass
class QuestionLayout:
    """Graph structure of one question before any learned embedding."""

    words: list[str]
    token_vectors: np.ndarray  # n_kept x d_word
    groups: list[list[int]]  # per kept token: 0-based positions of its word group
    edges: np.ndarray  # K2 x K2, head -> dependent, self-loops on valid nodes
    node_mask: np.ndarray  # K2 bool

    @property
    def K2(self) -> int:
        return self.node_mask.shape[0]

    def group_sequences(self) -> list[np.ndarray]:
        return [self.token_vectors[g] for g in self.groups]


def question_layout(parse: DependencyParse, token_vectors: np.ndarray, K2: int = 14) -> QuestionLayout:
    """Truncate to the first ``K2`` tokens and derive edges and word groups.

    A node's group is the word itself, its head and its direct dependents,
    in sentence order, restricted to kept tokens.
    """
    if len(parse) == 0:
        raise ValueError("empty parse")
    n = min(len(parse), K2)
    kept = parse.tokens[:n]
    edges = np.zeros((K2, K2))
    neighbours: list[set[int]] = [{i} for i in range(n)]
    for j, tok in enumerate(kept):
        edges[j, j] = 1.0
        h = tok.head - 1
        if 0 <= h < n:
            edges[h, j] = 1.0
            neighbours[j].add(h)
            neighbours[h].add(j)
    mask = np.zeros(K2, dtype=bool)
    mask[:n] = True
    vecs = np.asarray(token_vectors, dtype=np.float64)[:n]
    return QuestionLayout([t.form for t in kept], vecs, [sorted(s) for s in neighbours], edges, mask)


@dataclass
class QuestionGraph:
    nodes: Tensor  # K2 x d
    edges: np.ndarray
    node_mask: np.ndarray
    q: Tensor  # 1 x d
    layout: QuestionLayout | None = None


def encode_questions(layouts: Sequence[QuestionLayout], gru: GruParams, word_dropout=None) -> tuple[Tensor, Tensor]:
    """Run the Bi-GRU over every node group and every full sentence.

    Returns node features stacked as ``(B*K2) x d`` (padded rows hold the
    projection bias and must be masked) and question vectors ``B x d``.
    ``word_dropout`` optionally maps a token-vector array to a dropped copy.
    """
    seqs: list[np.ndarray] = []
    sentences: list[np.ndarray] = []
    for lay in layouts:
        vecs = lay.token_vectors if word_dropout is None else word_dropout(lay.token_vectors)
        groups = [vecs[g] for g in lay.groups]
        groups += [vecs[:0]] * (lay.K2 - len(groups))
        seqs.extend(groups)
        sentences.append(vecs)
    out = encode_batch(seqs + sentences, gru)
    n_nodes = len(seqs)
    return slice_rows(out, 0, n_nodes), slice_rows(out, n_nodes, n_nodes + len(sentences))


def build_question_graph(parse: DependencyParse, emb: EmbeddingTable, gru: GruParams, K2: int = 14) -> QuestionGraph:
    if len(parse) == 0:
        raise ValueError("empty parse")
    words = parse.words[:K2]
    if emb.oov == "error":
        missing = [w for w in parse.words if w not in emb]
        if missing:
            raise KeyError(f"out-of-vocabulary words {missing} under 'error' policy")
    vecs = emb.embed(parse.words)
    lay = question_layout(parse, vecs, K2)
    assert lay.words == words
    nodes, q = encode_questions([lay], gru)
    return QuestionGraph(nodes, lay.edges, lay.node_mask, q, lay)
