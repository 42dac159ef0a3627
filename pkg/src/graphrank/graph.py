"""Graph container, adjacency normalizations, synthetic generation and file IO.

Graphs are undirected, simple (no self-loops, no duplicate edges) and stored
in compressed sparse row form with both directions of every edge present.
All arrays are frozen after construction so graphs can be shared read-only
across threads.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    DanglingEdgeError,
    DegenerateGraphError,
    EmptySplitError,
    GraphParseError,
    InconsistentDimensionsError,
    LabelOutOfRangeError,
)

__all__ = [
    "Split",
    "SparseRowMatrix",
    "Graph",
    "SbmParams",
    "build_graph",
    "degrees",
    "sym_norm_adjacency",
    "row_norm_adjacency",
    "generate_sbm",
    "save_graph",
    "load_graph",
    "load_graph_dir",
]

GRAPH_FILES = ("edges.tsv", "features.csv", "labels.tsv", "splits.tsv", "meta.json")


class Split(IntEnum):
    TRAIN = 0
    VAL = 1
    TEST = 2


_SPLIT_NAMES = {Split.TRAIN: "train", Split.VAL: "val", Split.TEST: "test"}
_SPLIT_CODES = {v: k for k, v in _SPLIT_NAMES.items()}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseRowMatrix:
    """CSR matrix with real weights; column indices strictly increasing per row."""

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indptr", _frozen(np.asarray(self.indptr, dtype=np.int64)))
        object.__setattr__(self, "indices", _frozen(np.asarray(self.indices, dtype=np.int64)))
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.float64)))
        if self.indptr.shape != (self.n_rows + 1,):
            raise ValueError("indptr must have length n_rows + 1")
        if self.indices.shape != self.values.shape:
            raise ValueError("indices and values must have the same length")
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise ValueError("sparse values must be finite")
        if self.indices.size > 1:
            inside_row = np.ones(self.indices.size - 1, dtype=bool)
            boundaries = self.indptr[1:-1] - 1
            boundaries = boundaries[(boundaries >= 0) & (boundaries < inside_row.size)]
            inside_row[boundaries] = False
            if np.any(np.diff(self.indices)[inside_row] <= 0):
                raise ValueError("column indices must strictly increase within a row")

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    def entry(self, i: int, j: int) -> float:
        cols, vals = self.row(i)
        k = np.searchsorted(cols, j)
        if k < cols.size and cols[k] == j:
            return float(vals[k])
        return 0.0

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        for i in range(self.n_rows):
            cols, vals = self.row(i)
            out[i, cols] = vals
        return out


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable node/edge store with features, labels and a split assignment.

    The adjacency holds both directions of every undirected edge and never
    stores self-loops; normalizations re-add them per their own formulas.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indptr", _frozen(np.asarray(self.indptr, dtype=np.int64)))
        object.__setattr__(self, "indices", _frozen(np.asarray(self.indices, dtype=np.int64)))
        object.__setattr__(self, "features", _frozen(np.asarray(self.features, dtype=np.float64)))
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))
        object.__setattr__(self, "split", _frozen(np.asarray(self.split, dtype=np.int8)))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return self.indices.size // 2

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def split_ids(self, tag: Split) -> np.ndarray:
        return np.flatnonzero(self.split == int(tag))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n == other.n
            and self.num_classes == other.num_classes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.split, other.split)
        )


def _edges_to_csr(pairs: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical undirected pairs (u < v) to a sorted symmetric CSR layout."""
    if pairs.size == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(np.bincount(src, minlength=n))
    return indptr, dst


def build_graph(edge_list, n: int, features, labels, split=None,
                num_classes: int | None = None) -> Graph:
    """Assemble a Graph from raw parts, deduplicating and symmetrizing edges.

    Self-loops in the input are dropped with a warning. When ``split`` is
    omitted every node is tagged Test (structural/evaluation use); a supplied
    split must leave none of the three categories empty.
    """
    if n < 1:
        raise ValueError("graph needs at least one node")
    edges = np.asarray(list(edge_list) if not isinstance(edge_list, np.ndarray) else edge_list,
                       dtype=np.int64).reshape(-1, 2)
    if edges.size:
        bad = (edges < 0) | (edges >= n)
        if bad.any():
            u, v = edges[np.flatnonzero(bad.any(axis=1))[0]]
            raise DanglingEdgeError(f"edge ({u},{v}) has an endpoint outside [0, {n})")
        loops = edges[:, 0] == edges[:, 1]
        if loops.any():
            warnings.warn(f"dropping {int(loops.sum())} self-loop(s) from input edges",
                          stacklevel=2)
            edges = edges[~loops]
    lo = np.minimum(edges[:, 0], edges[:, 1]) if edges.size else np.zeros(0, np.int64)
    hi = np.maximum(edges[:, 0], edges[:, 1]) if edges.size else np.zeros(0, np.int64)
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0) if edges.size else edges.reshape(0, 2)
    indptr, indices = _edges_to_csr(pairs, n)

    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != n:
        raise InconsistentDimensionsError(
            f"feature matrix must have {n} rows, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features must be finite")

    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise InconsistentDimensionsError(f"labels must have length {n}")
    c = int(num_classes) if num_classes is not None else int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= c:
        raise LabelOutOfRangeError(
            f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")

    if split is None:
        split = np.full(n, int(Split.TEST), dtype=np.int8)
    else:
        split = np.asarray(split, dtype=np.int8)
        if split.shape != (n,):
            raise InconsistentDimensionsError(f"split must have length {n}")
        if split.min() < 0 or split.max() > 2:
            raise ValueError("split tags must be Train/Val/Test")
        for tag in Split:
            if not np.any(split == int(tag)):
                raise EmptySplitError(f"{_SPLIT_NAMES[tag]} split is empty")

    return Graph(n=n, indptr=indptr, indices=indices, features=features,
                 labels=labels, num_classes=c, split=split)


def degrees(g: Graph) -> np.ndarray:
    """Number of distinct neighbors per node (self-loops never stored)."""
    return np.diff(g.indptr)


def _with_self_loops(g: Graph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows/cols of A + I in CSR order plus the d+1 vector."""
    deg = degrees(g)
    rows = np.concatenate([np.repeat(np.arange(g.n), deg), np.arange(g.n)])
    cols = np.concatenate([g.indices, np.arange(g.n)])
    order = np.lexsort((cols, rows))
    return rows[order], cols[order], deg + 1


def sym_norm_adjacency(g: Graph) -> SparseRowMatrix:
    """Symmetrically normalized adjacency with self-loops.

    Entry (i, j) is 1/sqrt(dt_i * dt_j) with dt = degree + 1; an isolated
    node yields the identity row.
    """
    rows, cols, dt = _with_self_loops(g)
    values = 1.0 / np.sqrt(dt[rows].astype(np.float64) * dt[cols].astype(np.float64))
    indptr = np.zeros(g.n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(np.bincount(rows, minlength=g.n))
    return SparseRowMatrix(g.n, g.n, indptr, cols, values)


def row_norm_adjacency(g: Graph) -> SparseRowMatrix:
    """Row-normalized adjacency with self-loops: entry (i, j) = 1/(deg_i + 1).

    Every row sums to 1 and carries its diagonal entry, so products with it
    are convex combinations over closed neighborhoods.
    """
    rows, cols, dt = _with_self_loops(g)
    values = 1.0 / dt[rows].astype(np.float64)
    indptr = np.zeros(g.n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(np.bincount(rows, minlength=g.n))
    return SparseRowMatrix(g.n, g.n, indptr, cols, values)


# ---------------------------------------------------------------------------
# synthetic graphs


@dataclass(frozen=True)
class SbmParams:
    """Stochastic block model with Gaussian class-conditional features."""

    n: int
    c: int
    p_in: float
    p_out: float
    d: int = 16
    signal: float = 1.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < self.c:
            raise ValueError("need n >= c")
        if self.c < 2:
            raise ValueError("need at least two blocks")
        if not (0.0 <= self.p_in <= 1.0 and 0.0 <= self.p_out <= 1.0):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.d < 1:
            raise ValueError("feature dimension must be positive")
        if self.noise < 0 or self.signal < 0:
            raise ValueError("signal and noise must be nonnegative")

    @property
    def is_heterophilic(self) -> bool:
        return self.p_in < self.p_out


def generate_sbm(params: SbmParams,
                 split_fractions: tuple[float, float, float] = (0.4, 0.3, 0.3)) -> Graph:
    """Sample a block-model graph; deterministic for a fixed seed.

    Block labels are assigned round-robin, each unordered pair is Bernoulli
    with p_in inside a block and p_out across blocks, features are Gaussian
    around per-class means of norm ``signal`` with sd ``noise``, and the
    split is a seeded shuffle in the given fractions.
    """
    if abs(sum(split_fractions) - 1.0) > 1e-9 or any(f < 0 for f in split_fractions):
        raise ValueError("split fractions must be nonnegative and sum to 1")
    rng = np.random.default_rng(params.seed)
    n, c = params.n, params.c
    labels = np.arange(n, dtype=np.int64) % c

    prob = np.where(labels[:, None] == labels[None, :], params.p_in, params.p_out)
    draws = rng.random((n, n))
    upper = np.triu(draws < prob, k=1)
    src, dst = np.nonzero(upper)
    pairs = np.stack([src, dst], axis=1).astype(np.int64)

    means = rng.normal(size=(c, params.d))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    means = params.signal * means / norms
    features = means[labels] + params.noise * rng.normal(size=(n, params.d))

    perm = rng.permutation(n)
    n_train = int(round(split_fractions[0] * n))
    n_val = int(round(split_fractions[1] * n))
    split = np.full(n, int(Split.TEST), dtype=np.int8)
    split[perm[:n_train]] = int(Split.TRAIN)
    split[perm[n_train:n_train + n_val]] = int(Split.VAL)

    for tag in Split:
        if not np.any(split == int(tag)):
            raise DegenerateGraphError(f"{_SPLIT_NAMES[tag]} split is empty for n={n}")
    counts = np.bincount(labels, minlength=c)
    if (counts == 0).any():
        raise DegenerateGraphError("a block received no nodes")

    indptr, indices = _edges_to_csr(pairs, n)
    return Graph(n=n, indptr=indptr, indices=indices, features=features,
                 labels=labels, num_classes=c, split=split)


# ---------------------------------------------------------------------------
# file IO


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_graph(g: Graph, out_dir) -> Path:
    """Write edges.tsv, features.csv, labels.tsv, splits.tsv and meta.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "edges.tsv", "w") as fh:
        fh.write("# src\tdst\n")
        for i in range(g.n):
            for j in g.neighbors(i):
                if i < j:
                    fh.write(f"{i}\t{j}\n")
    with open(out / "features.csv", "w") as fh:
        for row in g.features:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    with open(out / "labels.tsv", "w") as fh:
        for i, y in enumerate(g.labels):
            fh.write(f"{i}\t{y}\n")
    with open(out / "splits.tsv", "w") as fh:
        for i, s in enumerate(g.split):
            fh.write(f"{i}\t{_SPLIT_NAMES[Split(int(s))]}\n")
    with open(out / "meta.json", "w") as fh:
        json.dump({"n": g.n, "d": g.feature_dim, "c": g.num_classes}, fh)
        fh.write("\n")
    return out


def _data_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def _parse_node_map(path, what: str) -> list[str]:
    """Parse 'node<TAB>value' lines covering node ids 0..n-1 exactly once."""
    entries: dict[int, str] = {}
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise GraphParseError(path, lineno, f"expected 'node<TAB>{what}'")
        try:
            node = int(parts[0])
        except ValueError:
            raise GraphParseError(path, lineno, f"bad node id {parts[0]!r}") from None
        if node < 0:
            raise GraphParseError(path, lineno, f"negative node id {node}")
        if node in entries:
            raise GraphParseError(path, lineno, f"duplicate entry for node {node}")
        entries[node] = parts[1]
    if not entries:
        raise InconsistentDimensionsError(f"{path}: no entries")
    n = max(entries) + 1
    missing = [i for i in range(n) if i not in entries]
    if missing:
        raise InconsistentDimensionsError(
            f"{path}: no {what} for node(s) {missing[:5]}{'...' if len(missing) > 5 else ''}")
    return [entries[i] for i in range(n)]


def load_graph(edge_path, feature_path, label_path, split_path,
               meta_path=None) -> Graph:
    """Load a graph from the four text files; meta.json cross-checks n/d/c.

    The labels file defines the node count; the other files must agree.
    """
    label_strs = _parse_node_map(label_path, "label")
    n = len(label_strs)
    try:
        labels = np.asarray([int(s) for s in label_strs], dtype=np.int64)
    except ValueError:
        raise InconsistentDimensionsError(f"{label_path}: non-integer label") from None

    features_rows: list[list[float]] = []
    width = None
    for lineno, line in _data_lines(feature_path):
        parts = line.split(",")
        try:
            row = [float(p) for p in parts]
        except ValueError:
            raise GraphParseError(feature_path, lineno, "bad real value") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise GraphParseError(feature_path, lineno,
                                  f"expected {width} values, got {len(row)}")
        features_rows.append(row)
    if len(features_rows) != n:
        raise InconsistentDimensionsError(
            f"{feature_path}: {len(features_rows)} rows for {n} labeled nodes")
    features = np.asarray(features_rows, dtype=np.float64)

    edges = []
    for lineno, line in _data_lines(edge_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise GraphParseError(edge_path, lineno, "expected 'src<TAB>dst'")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphParseError(edge_path, lineno, "bad node id") from None
        edges.append((u, v))

    split_strs = _parse_node_map(split_path, "split")
    if len(split_strs) != n:
        raise InconsistentDimensionsError(
            f"{split_path}: {len(split_strs)} rows for {n} labeled nodes")
    split = np.empty(n, dtype=np.int8)
    for i, s in enumerate(split_strs):
        if s not in _SPLIT_CODES:
            raise InconsistentDimensionsError(
                f"{split_path}: unknown split tag {s!r} for node {i}")
        split[i] = int(_SPLIT_CODES[s])

    num_classes = None
    if meta_path is not None and Path(meta_path).exists():
        meta = json.loads(Path(meta_path).read_text())
        num_classes = int(meta["c"])
        if int(meta["n"]) != n:
            raise InconsistentDimensionsError(
                f"meta.json says n={meta['n']} but files describe {n} nodes")
        if int(meta["d"]) != features.shape[1]:
            raise InconsistentDimensionsError(
                f"meta.json says d={meta['d']} but features have width {features.shape[1]}")

    return build_graph(edges, n, features, labels, split, num_classes=num_classes)


def load_graph_dir(graph_dir) -> Graph:
    d = Path(graph_dir)
    return load_graph(d / "edges.tsv", d / "features.csv", d / "labels.tsv",
                      d / "splits.tsv", d / "meta.json")
