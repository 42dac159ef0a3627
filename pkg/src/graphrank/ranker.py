"""Ranking classifier and the budget-split prioritization loop.

The ranking model is a from-scratch second-order gradient-boosted tree
ensemble on logistic loss: each round fits one regression tree to the
gradient/hessian of the current margins using exact greedy split search,
with leaf values -G/(H + l2). There is no row or column subsampling, so
training is deterministic; score ties are broken by ascending node id.

A gradient-descent logistic regression with the same train/score interface
serves as the pluggable alternative classifier.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import (
    BudgetExceedsPoolError,
    EmptyValidationError,
    InsufficientDataError,
    WidthMismatchError,
)
from .graph import Graph, Split
from .models import PredictionBundle, classify_failures

__all__ = [
    "GbdtHyper",
    "LogisticHyper",
    "GradientBoostedClassifier",
    "LogisticRegressionRanker",
    "ConstantScoreClassifier",
    "LabeledPool",
    "SelectionResult",
    "GroundTruthOracle",
    "construct_training_set",
    "train_classifier",
    "score",
    "prioritize_iterative",
    "prioritize_single",
    "save_selection",
    "load_selection",
]


@dataclass(frozen=True)
class GbdtHyper:
    trees: int = 100
    max_depth: int = 4
    shrinkage: float = 0.1
    l2: float = 1.0
    min_child_weight: float = 1.0

    def __post_init__(self):
        if self.trees < 1 or self.max_depth < 1:
            raise ValueError("trees and max_depth must be positive")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in (0, 1]")
        if self.l2 < 0 or self.min_child_weight < 0:
            raise ValueError("l2 and min_child_weight must be nonnegative")


@dataclass(frozen=True)
class LogisticHyper:
    learning_rate: float = 1.0
    epochs: int = 400


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logistic_loss(margin: np.ndarray, y: np.ndarray) -> float:
    signed = np.where(y > 0, margin, -margin)
    return float(np.logaddexp(0.0, -signed).mean())


def _clamped_logit(rate: float) -> float:
    rate = min(max(rate, 0.01), 0.99)
    return float(np.log(rate / (1.0 - rate)))


@dataclass(eq=False)
class _TreeNode:
    feature: int = -1
    threshold: float = 0.0
    value: float = 0.0
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value}
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left.to_dict(), "right": self.right.to_dict()}


def _apply_tree(node: _TreeNode, x: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
    if node.is_leaf:
        out[rows] = node.value
        return
    go_left = x[rows, node.feature] < node.threshold
    _apply_tree(node.left, x, rows[go_left], out)
    _apply_tree(node.right, x, rows[~go_left], out)


def _build_tree(x: np.ndarray, sorted_idx: np.ndarray, gh: np.ndarray,
                hyper: GbdtHyper, depth: int, train_values: np.ndarray) -> _TreeNode:
    """Exact greedy tree growth on presorted per-feature row indices.

    ``sorted_idx[:, f]`` lists this node's rows in ascending order of feature
    f; ``gh`` stacks gradient and hessian as columns. Splits are scanned
    between distinct consecutive values; gain ties are broken by lowest
    feature index, then lowest threshold. The left branch takes rows with
    value strictly below the next distinct value, which keeps prediction-time
    routing identical to the training partition.
    """
    m, w = sorted_idx.shape
    col0 = sorted_idx[:, 0]
    g_total = float(gh[col0, 0].sum())
    h_total = float(gh[col0, 1].sum())

    def leaf() -> _TreeNode:
        value = -g_total / (h_total + hyper.l2)
        train_values[col0] = value
        return _TreeNode(value=value)

    if depth >= hyper.max_depth or m < 2:
        return leaf()

    cum = np.cumsum(gh[sorted_idx], axis=0)   # (m, w, 2)
    gs, hs = cum[..., 0], cum[..., 1]
    vals = x[sorted_idx, np.arange(w)[None, :]]

    gl, hl = gs[:-1], hs[:-1]
    gr = gs[-1] - gl
    hr = hs[-1] - hl
    valid = ((vals[1:] > vals[:-1])
             & (hl >= hyper.min_child_weight)
             & (hr >= hyper.min_child_weight))
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (gl * gl / (hl + hyper.l2) + gr * gr / (hr + hyper.l2)
                      - (gs[-1] * gs[-1]) / (hs[-1] + hyper.l2))
    gain = np.where(valid, gain, -np.inf)

    flat = int(np.argmax(gain.T))
    feature, pos = divmod(flat, m - 1)
    if not np.isfinite(gain[pos, feature]) or gain[pos, feature] <= 0.0:
        return leaf()

    threshold = float(vals[pos + 1, feature])
    left_mask = np.zeros(x.shape[0], dtype=bool)
    left_mask[sorted_idx[:pos + 1, feature]] = True
    sel = left_mask[sorted_idx]
    n_left = pos + 1
    left_idx = sorted_idx.T[sel.T].reshape(w, n_left).T
    right_idx = sorted_idx.T[~sel.T].reshape(w, m - n_left).T

    node = _TreeNode(feature=feature, threshold=threshold)
    node.left = _build_tree(x, left_idx, gh, hyper, depth + 1, train_values)
    node.right = _build_tree(x, right_idx, gh, hyper, depth + 1, train_values)
    return node


class RankingModel(Protocol):
    n_features: int
    is_constant: bool
    train_losses: list[float]

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RankingModel": ...

    def predict_scores(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(eq=False)
class GradientBoostedClassifier:
    """Boosted regression trees on logistic loss; scores are sigmoid margins."""

    hyper: GbdtHyper = field(default_factory=GbdtHyper)
    base_margin: float = 0.0
    trees: list = field(default_factory=list)
    n_features: int = 0
    is_constant: bool = False
    train_losses: list = field(default_factory=list)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GradientBoostedClassifier":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ValueError("features and labels disagree on rows")
        if x.shape[0] < 2:
            raise InsufficientDataError("need at least 2 training rows")
        m, w = x.shape
        self.n_features = w
        self.base_margin = _clamped_logit(float(y.mean()))
        self.trees = []
        self.train_losses = []
        if y.min() == y.max():
            # single-class pool: constant classifier at the clamped base rate
            self.is_constant = True
            self.train_losses = [_logistic_loss(np.full(m, self.base_margin), y)]
            return self
        self.is_constant = False

        sorted_idx = np.argsort(x, axis=0, kind="stable")
        margins = np.full(m, self.base_margin)
        for _ in range(self.hyper.trees):
            p = _sigmoid(margins)
            gh = np.column_stack([p - y, p * (1.0 - p)])
            train_values = np.zeros(m)
            root = _build_tree(x, sorted_idx, gh, self.hyper, 0, train_values)
            self.trees.append(root)
            margins = margins + self.hyper.shrinkage * train_values
            self.train_losses.append(_logistic_loss(margins, y))
        return self

    def predict_margin(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or (self.n_features and x.shape[1] != self.n_features):
            raise WidthMismatchError(
                f"rows have width {x.shape[1] if x.ndim == 2 else '?'}, "
                f"classifier was trained on {self.n_features}")
        margins = np.full(x.shape[0], self.base_margin)
        rows = np.arange(x.shape[0])
        buf = np.zeros(x.shape[0])
        for tree in self.trees:
            _apply_tree(tree, x, rows, buf)
            margins += self.hyper.shrinkage * buf
        return margins

    def predict_scores(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.predict_margin(x))


@dataclass(eq=False)
class LogisticRegressionRanker:
    """Full-batch gradient-descent logistic regression on standardized rows."""

    hyper: LogisticHyper = field(default_factory=LogisticHyper)
    weights: np.ndarray | None = None
    bias: float = 0.0
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    n_features: int = 0
    is_constant: bool = False
    train_losses: list = field(default_factory=list)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LogisticRegressionRanker":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape[0] < 2:
            raise InsufficientDataError("need at least 2 training rows")
        m, w = x.shape
        self.n_features = w
        self.mean = x.mean(axis=0)
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        self.scale = sd
        xs = (x - self.mean) / self.scale
        self.weights = np.zeros(w)
        self.bias = 0.0
        self.train_losses = []
        for _ in range(self.hyper.epochs):
            p = _sigmoid(xs @ self.weights + self.bias)
            err = p - y
            self.weights = self.weights - self.hyper.learning_rate * (xs.T @ err) / m
            self.bias = self.bias - self.hyper.learning_rate * float(err.mean())
            self.train_losses.append(_logistic_loss(xs @ self.weights + self.bias, y))
        return self

    def predict_scores(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.weights is None:
            return np.full(x.shape[0], 0.5)
        if x.shape[1] != self.n_features:
            raise WidthMismatchError(
                f"rows have width {x.shape[1]}, classifier was trained on {self.n_features}")
        xs = (x - self.mean) / self.scale
        return _sigmoid(xs @ self.weights + self.bias)


@dataclass(eq=False)
class ConstantScoreClassifier:
    """Degenerate ranking model emitting the clamped training base rate."""

    base_rate: float
    n_features: int
    is_constant: bool = True
    train_losses: list = field(default_factory=list)

    def predict_scores(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.n_features:
            raise WidthMismatchError(
                f"rows have width {x.shape[1]}, classifier was trained on {self.n_features}")
        return np.full(x.shape[0], self.base_rate)


# ---------------------------------------------------------------------------
# pools, oracles and the prioritization loop


@dataclass(frozen=True, eq=False)
class LabeledPool:
    """Attribute rows with binary failure labels for identified nodes."""

    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int8))
        object.__setattr__(self, "ids", np.asarray(self.ids, dtype=np.int64))
        if not (self.features.shape[0] == self.labels.shape[0] == self.ids.shape[0]):
            raise ValueError("pool arrays disagree on row count")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("pool labels must be binary")
        if np.unique(self.ids).size != self.ids.size:
            raise ValueError("pool ids must be unique")

    @property
    def size(self) -> int:
        return self.ids.size

    def extended(self, features: np.ndarray, labels: np.ndarray,
                 ids: np.ndarray) -> "LabeledPool":
        return LabeledPool(features=np.vstack([self.features, features]),
                           labels=np.concatenate([self.labels, labels]),
                           ids=np.concatenate([self.ids, ids]))


LabelOracle = Callable[[np.ndarray], np.ndarray]


class GroundTruthOracle:
    """Annotator backed by a precomputed failure vector; answers are stable."""

    def __init__(self, failures):
        self._failures = np.asarray(failures, dtype=np.int8)

    def __call__(self, ids: np.ndarray) -> np.ndarray:
        return self._failures[np.asarray(ids, dtype=np.int64)]


def construct_training_set(g: Graph, bundle: PredictionBundle, zf) -> LabeledPool:
    """Build the classifier training set from the validation split only.

    Nodes the target model was trained on are excluded; a validation node is
    labeled 1 exactly when the target model misclassifies it.
    """
    val_ids = g.split_ids(Split.VAL)
    if val_ids.size == 0:
        raise EmptyValidationError("validation split is empty")
    failures = classify_failures(bundle, g)
    rows = zf.values if hasattr(zf, "values") else np.asarray(zf, dtype=np.float64)
    return LabeledPool(features=rows[val_ids], labels=failures[val_ids], ids=val_ids)


def train_classifier(pool: LabeledPool, hyper=None, seed: int = 0,
                     backend: str = "gbdt"):
    """Fit the ranking model on a pool, canonicalizing row order by node id.

    The seed is accepted for interface parity; exact greedy training has no
    sampling, so results do not depend on it.
    """
    if pool.size < 2:
        raise InsufficientDataError(f"pool has {pool.size} row(s), need at least 2")
    order = np.argsort(pool.ids)
    x = pool.features[order]
    y = pool.labels[order].astype(np.float64)
    if y.min() == y.max():
        return ConstantScoreClassifier(base_rate=min(max(float(y.mean()), 0.01), 0.99),
                                       n_features=x.shape[1])
    if backend == "gbdt":
        model = GradientBoostedClassifier(hyper=hyper or GbdtHyper())
    elif backend == "logistic":
        model = LogisticRegressionRanker(hyper=hyper or LogisticHyper())
    else:
        raise ValueError(f"unknown classifier backend {backend!r}")
    return model.fit(x, y)


def score(clf, rows: np.ndarray) -> np.ndarray:
    """Priority scores in (0, 1) for attribute rows."""
    return clf.predict_scores(np.asarray(rows, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Ordered selection with per-round boundaries and selection-time scores."""

    ids: np.ndarray
    scores: np.ndarray
    round_sizes: tuple
    budget: int
    round_budget: int

    def __post_init__(self):
        object.__setattr__(self, "ids", np.asarray(self.ids, dtype=np.int64))
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        if sum(self.round_sizes) != self.ids.size:
            raise ValueError("round sizes do not partition the selection")

    def rounds(self):
        start = 0
        for r, size in enumerate(self.round_sizes):
            yield r, self.ids[start:start + size], self.scores[start:start + size]
            start += size


def _attr_rows(zf) -> np.ndarray:
    return zf.values if hasattr(zf, "values") else np.asarray(zf, dtype=np.float64)


def _ranked_candidates(clf, rows, ids, fallback_key):
    scores = clf.predict_scores(rows)
    if getattr(clf, "is_constant", False) and fallback_key is not None:
        order = np.lexsort((ids, -fallback_key[ids]))
    else:
        order = np.lexsort((ids, -scores))
    return order, scores


def prioritize_iterative(zf, pool: LabeledPool, unlabeled_ids, oracle: LabelOracle,
                         budget: int, round_budget: int, hyper=None, seed: int = 0,
                         backend: str = "gbdt", fallback_key=None) -> SelectionResult:
    """Budget-split selection loop: train, score, annotate, grow, repeat.

    Each round trains the classifier on the current pool, scores the
    remaining unlabeled nodes, takes the top min(round_budget, remaining
    budget), asks the oracle for their failure labels and moves them into the
    pool. Ties in score fall back to ascending node id. When the pool is
    single-class the ranking falls back to descending ``fallback_key``
    (callers pass the deterministic-entropy column).
    """
    rows_all = _attr_rows(zf)
    unlabeled = np.array(sorted(np.asarray(unlabeled_ids, dtype=np.int64)))
    if budget < 1 or round_budget < 1:
        raise ValueError("budget and round budget must be >= 1")
    if budget > unlabeled.size:
        raise BudgetExceedsPoolError(
            f"budget {budget} exceeds unlabeled pool of {unlabeled.size}")

    selected = []
    selected_scores = []
    round_sizes = []
    remaining = budget
    while remaining > 0:
        clf = train_classifier(pool, hyper=hyper, seed=seed, backend=backend)
        order, scores = _ranked_candidates(clf, rows_all[unlabeled], unlabeled, fallback_key)
        take = min(round_budget, remaining)
        chosen_pos = order[:take]
        chosen = unlabeled[chosen_pos]
        labels = np.asarray(oracle(chosen), dtype=np.int8)
        pool = pool.extended(rows_all[chosen], labels, chosen)
        keep = np.ones(unlabeled.size, dtype=bool)
        keep[chosen_pos] = False
        unlabeled = unlabeled[keep]
        selected.append(chosen)
        selected_scores.append(scores[chosen_pos])
        round_sizes.append(take)
        remaining -= take

    return SelectionResult(ids=np.concatenate(selected),
                           scores=np.concatenate(selected_scores),
                           round_sizes=tuple(round_sizes),
                           budget=budget, round_budget=round_budget)


def prioritize_single(zf, pool: LabeledPool, unlabeled_ids, budget: int,
                      hyper=None, seed: int = 0, backend: str = "gbdt",
                      fallback_key=None) -> SelectionResult:
    """One classifier fit, one ranking, top-budget prefix (no feedback loop)."""
    rows_all = _attr_rows(zf)
    unlabeled = np.array(sorted(np.asarray(unlabeled_ids, dtype=np.int64)))
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if budget > unlabeled.size:
        raise BudgetExceedsPoolError(
            f"budget {budget} exceeds unlabeled pool of {unlabeled.size}")
    clf = train_classifier(pool, hyper=hyper, seed=seed, backend=backend)
    order, scores = _ranked_candidates(clf, rows_all[unlabeled], unlabeled, fallback_key)
    chosen_pos = order[:budget]
    return SelectionResult(ids=unlabeled[chosen_pos], scores=scores[chosen_pos],
                           round_sizes=(budget,), budget=budget, round_budget=budget)


def save_selection(result: SelectionResult, path, hyper=None, seed: int = 0) -> None:
    rounds = [{"round": r, "selected_ids": ids.tolist(), "scores": scores.tolist()}
              for r, ids, scores in result.rounds()]
    payload = {
        "budget": result.budget,
        "round_budget": result.round_budget,
        "rounds": rounds,
        "classifier_hyper": vars(hyper) if hyper is not None else vars(GbdtHyper()),
        "seed": seed,
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_selection(path) -> SelectionResult:
    payload = json.loads(Path(path).read_text())
    ids = np.concatenate([np.asarray(r["selected_ids"], dtype=np.int64)
                          for r in payload["rounds"]])
    scores = np.concatenate([np.asarray(r["scores"]) for r in payload["rounds"]])
    sizes = tuple(len(r["selected_ids"]) for r in payload["rounds"])
    return SelectionResult(ids=ids, scores=scores, round_sizes=sizes,
                           budget=payload["budget"], round_budget=payload["round_budget"])
