"""Per-node priority attributes and their neighbor-aggregated enhancement.

Four attribute families are concatenated into a base matrix, then a closed
neighborhood average (row-normalized adjacency with self-loops) produces the
aggregated block; both halves together form the enhanced attributes fed to
the ranking classifier. The column schema is frozen and versioned so
persisted matrices stay interpretable.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import (
    NotADistributionError,
    RowCountMismatchError,
    SchemaMismatchError,
    ShapeMismatchError,
    WrongSourceError,
)
from .graph import Graph, SparseRowMatrix, degrees
from .kernels import spmm
from .models import PredictionBundle, PredictionSource

__all__ = [
    "SCHEMA_VERSION",
    "AttributeMatrix",
    "EnhancedAttributeMatrix",
    "entropy",
    "entropy_rows",
    "gini",
    "gini_rows",
    "deterministic_output_attrs",
    "probabilistic_output_attrs",
    "graph_node_attrs",
    "degree_attrs",
    "assemble_z1",
    "enhance",
    "neighbor_failure_rate",
    "base_schema",
    "variant_columns",
    "save_attributes",
    "load_attributes",
]

SCHEMA_VERSION = 1

VARIANTS = ("aw", "aw_ag", "aw_ag_en", "complete")


def base_schema(num_classes: int) -> tuple[str, ...]:
    """Frozen column order of the base attribute matrix (width 2c + 5)."""
    c = num_classes
    return tuple(
        [f"det_prob_{k}" for k in range(c)]
        + ["det_entropy", "det_gini", "mc_entropy"]
        + [f"mlp_prob_{k}" for k in range(c)]
        + ["mlp_entropy", "degree_norm"]
    )


@dataclass(frozen=True, eq=False)
class AttributeMatrix:
    """Base per-node attributes with the frozen column schema."""

    values: np.ndarray
    num_classes: int

    def __post_init__(self):
        expected = 2 * self.num_classes + 5
        if self.values.ndim != 2 or self.values.shape[1] != expected:
            raise ShapeMismatchError(
                f"base attributes must have width {expected}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeMismatchError("attributes must be finite")

    @property
    def names(self) -> tuple[str, ...]:
        return base_schema(self.num_classes)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


@dataclass(frozen=True, eq=False)
class EnhancedAttributeMatrix:
    """Base block and its closed-neighborhood aggregate, side by side."""

    values: np.ndarray
    num_classes: int
    provenance: str = "row_norm_adjacency"

    def __post_init__(self):
        expected = 2 * (2 * self.num_classes + 5)
        if self.values.ndim != 2 or self.values.shape[1] != expected:
            raise ShapeMismatchError(
                f"enhanced attributes must have width {expected}, got {self.values.shape}")

    @property
    def base_width(self) -> int:
        return self.values.shape[1] // 2

    @property
    def names(self) -> tuple[str, ...]:
        base = base_schema(self.num_classes)
        return base + tuple(f"agg_{n}" for n in base)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


def _check_distribution(dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 1:
        raise NotADistributionError("expected a 1-D probability vector")
    if (dist < 0).any() or not np.isfinite(dist).all():
        raise NotADistributionError("probabilities must be finite and nonnegative")
    if abs(dist.sum() - 1.0) > 1e-6:
        raise NotADistributionError(f"probabilities sum to {dist.sum()}, not 1")
    return dist


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Row-wise natural-log entropy; zero terms contribute nothing."""
    probs = np.asarray(probs, dtype=np.float64)
    safe = np.where(probs > 0, probs, 1.0)
    return -(probs * np.log(safe)).sum(axis=1)


def gini_rows(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    return 1.0 - (probs * probs).sum(axis=1)


def entropy(dist) -> float:
    """Shannon entropy (natural log) of a categorical distribution."""
    return float(entropy_rows(_check_distribution(dist)[None, :])[0])


def gini(dist) -> float:
    """Impurity 1 - sum(p^2) of a categorical distribution."""
    return float(gini_rows(_check_distribution(dist)[None, :])[0])


def _require_source(bundle: PredictionBundle, source: PredictionSource, op: str):
    if bundle.source is not source:
        raise WrongSourceError(
            f"{op} needs a {source.value} bundle, got {bundle.source.value}")


def deterministic_output_attrs(bundle: PredictionBundle) -> np.ndarray:
    """[p_1..p_c, entropy, gini] per node from the plain model output."""
    _require_source(bundle, PredictionSource.GCN_DETERMINISTIC, "deterministic attributes")
    return np.column_stack([bundle.probs,
                            entropy_rows(bundle.probs),
                            gini_rows(bundle.probs)])


def probabilistic_output_attrs(bundle: PredictionBundle) -> np.ndarray:
    """Entropy of the dropout-averaged distribution, one column."""
    _require_source(bundle, PredictionSource.GCN_MC_DROPOUT, "probabilistic attributes")
    return entropy_rows(bundle.probs)[:, None]


def graph_node_attrs(bundle: PredictionBundle) -> np.ndarray:
    """[q_1..q_c, entropy] per node from the model-agnostic MLP."""
    _require_source(bundle, PredictionSource.MLP, "graph node attributes")
    return np.column_stack([bundle.probs, entropy_rows(bundle.probs)])


def degree_attrs(g: Graph) -> np.ndarray:
    """Min-max normalized node degrees; all-equal degrees map to 0."""
    deg = degrees(g).astype(np.float64)
    lo, hi = deg.min(), deg.max()
    if hi == lo:
        return np.zeros((g.n, 1))
    return ((deg - lo) / (hi - lo))[:, None]


def assemble_z1(det: np.ndarray, prob: np.ndarray, mlp: np.ndarray,
                deg: np.ndarray) -> AttributeMatrix:
    """Concatenate the four families in schema order."""
    blocks = [np.asarray(b, dtype=np.float64) for b in (det, prob, mlp, deg)]
    rows = {b.shape[0] for b in blocks}
    if len(rows) != 1:
        raise RowCountMismatchError(f"attribute blocks disagree on rows: {sorted(rows)}")
    c = blocks[0].shape[1] - 2
    if c < 1 or blocks[2].shape[1] != c + 1 or blocks[1].shape[1] != 1 or blocks[3].shape[1] != 1:
        raise ShapeMismatchError(
            "expected widths (c+2, 1, c+1, 1), got "
            f"{tuple(b.shape[1] for b in blocks)}")
    values = np.column_stack(blocks)
    return AttributeMatrix(values=values, num_classes=c)


def enhance(z1: AttributeMatrix, a_prime: SparseRowMatrix) -> EnhancedAttributeMatrix:
    """Append the closed-neighborhood average of every base column.

    ``a_prime`` must be the row-stochastic self-looped adjacency so each
    aggregated row is a convex combination of base rows.
    """
    n = z1.values.shape[0]
    if a_prime.n_rows != n or a_prime.n_cols != n:
        raise ShapeMismatchError(
            f"aggregation matrix is {a_prime.n_rows}x{a_prime.n_cols} for {n} rows")
    sums = np.add.reduceat(a_prime.values, a_prime.indptr[:-1]) if a_prime.values.size \
        else np.zeros(n)
    if not np.all(np.abs(sums - 1.0) <= 1e-9):
        raise ShapeMismatchError("aggregation matrix rows must sum to 1")
    z2 = spmm(a_prime, z1.values)
    return EnhancedAttributeMatrix(values=np.hstack([z1.values, z2]),
                                   num_classes=z1.num_classes)


def neighbor_failure_rate(g: Graph, failures) -> np.ndarray:
    """Share of failing neighbors per node; isolated nodes score 0."""
    failures = np.asarray(failures, dtype=np.float64)
    if failures.shape != (g.n,):
        raise ShapeMismatchError(f"failures must have length {g.n}")
    deg = degrees(g)
    out = np.zeros(g.n)
    nonempty = deg > 0
    if g.indices.size:
        starts = g.indptr[:-1][nonempty]
        sums = np.add.reduceat(failures[g.indices], starts)
        out[nonempty] = sums / deg[nonempty]
    return out


def variant_columns(num_classes: int, variant: str) -> np.ndarray:
    """Column indices of the enhanced matrix used by an ablation variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    c = num_classes
    d1 = 2 * c + 5
    if variant == "aw":
        return np.arange(c + 3)          # model-aware block only
    if variant == "aw_ag":
        return np.arange(d1)             # plus model-agnostic block
    return np.arange(2 * d1)             # plus the aggregated block


# ---------------------------------------------------------------------------
# persistence


def save_attributes(matrix, path) -> None:
    kind = "zf" if isinstance(matrix, EnhancedAttributeMatrix) else "z1"
    with open(path, "w") as fh:
        fh.write(f"# graphrank-attributes v{SCHEMA_VERSION} "
                 f"classes={matrix.num_classes} kind={kind}\n")
        fh.write(",".join(matrix.names) + "\n")
        for row in matrix.values:
            fh.write(",".join(format(x, ".17g") for x in row) + "\n")


def load_attributes(path):
    with open(path) as fh:
        meta = fh.readline().strip()
        if not meta.startswith(f"# graphrank-attributes v{SCHEMA_VERSION}"):
            raise SchemaMismatchError(f"{path}: unknown attribute file version")
        fields = dict(part.split("=") for part in meta.split()[3:])
        c = int(fields["classes"])
        kind = fields["kind"]
        names = tuple(fh.readline().strip().split(","))
        values = np.asarray([[float(x) for x in line.strip().split(",")] for line in fh])
    if kind == "zf":
        out = EnhancedAttributeMatrix(values=values, num_classes=c)
    elif kind == "z1":
        out = AttributeMatrix(values=values, num_classes=c)
    else:
        raise SchemaMismatchError(f"{path}: unknown attribute kind {kind!r}")
    if names != out.names:
        raise SchemaMismatchError(f"{path}: header does not match the frozen schema")
    return out
