"""Non-mutation baseline prioritizers, each a full ranking of unlabeled nodes.

Every method returns the unlabeled set ordered by descending priority score
with ties broken by ascending node id. The distance and neighbor-smoothing
kernels are the simplest faithful readings of their one-paragraph
descriptions and are configurable; they are not normative.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .attributes import entropy_rows, gini_rows
from .errors import (
    EmptySetError,
    InvalidLambdaError,
    KExceedsLabeledError,
    WrongSourceError,
)
from .graph import Graph, degrees
from .models import PredictionBundle, PredictionSource

__all__ = [
    "Ranking",
    "rank_random",
    "rank_entropy",
    "rank_deepgini",
    "rank_margin",
    "rank_dropout",
    "rank_datis",
    "rank_nns",
    "save_ranking",
    "load_ranking",
]


@dataclass(frozen=True, eq=False)
class Ranking:
    """Unlabeled ids by descending priority; scores aligned with the order."""

    method: str
    ids: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", np.asarray(self.ids, dtype=np.int64))
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        if self.ids.shape != self.scores.shape:
            raise ValueError("ids and scores must align")

    def top(self, budget: int) -> np.ndarray:
        return self.ids[:budget]

    def is_permutation_of(self, unlabeled_ids) -> bool:
        return np.array_equal(np.sort(self.ids),
                              np.sort(np.asarray(unlabeled_ids, dtype=np.int64)))


def _finalize(method: str, ids: np.ndarray, scores: np.ndarray) -> Ranking:
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((ids, -scores))
    return Ranking(method=method, ids=ids[order], scores=scores[order])


def _check_unlabeled(unlabeled_ids) -> np.ndarray:
    ids = np.asarray(unlabeled_ids, dtype=np.int64)
    if ids.size == 0:
        raise EmptySetError("cannot rank an empty node set")
    return ids


def rank_random(unlabeled_ids, seed: int) -> Ranking:
    """Seeded uniform shuffle; scores are the underlying uniform draws."""
    ids = _check_unlabeled(unlabeled_ids)
    scores = np.random.default_rng(seed).random(ids.size)
    return _finalize("random", ids, scores)


def rank_entropy(bundle: PredictionBundle, unlabeled_ids) -> Ranking:
    ids = _check_unlabeled(unlabeled_ids)
    return _finalize("entropy", ids, entropy_rows(bundle.probs[ids]))


def rank_deepgini(bundle: PredictionBundle, unlabeled_ids) -> Ranking:
    ids = _check_unlabeled(unlabeled_ids)
    return _finalize("deepgini", ids, gini_rows(bundle.probs[ids]))


def rank_margin(bundle: PredictionBundle, unlabeled_ids) -> Ranking:
    """Second-highest minus highest probability; closer to zero ranks first."""
    ids = _check_unlabeled(unlabeled_ids)
    part = np.sort(bundle.probs[ids], axis=1)
    scores = part[:, -2] - part[:, -1]
    return _finalize("margin", ids, scores)


def rank_dropout(bundle: PredictionBundle, unlabeled_ids) -> Ranking:
    """Entropy of the dropout-averaged distribution."""
    if bundle.source is not PredictionSource.GCN_MC_DROPOUT:
        raise WrongSourceError(
            f"dropout ranking needs an mc-dropout bundle, got {bundle.source.value}")
    ids = _check_unlabeled(unlabeled_ids)
    return _finalize("dropout", ids, entropy_rows(bundle.probs[ids]))


def rank_datis(representation: np.ndarray, labeled_ids, labeled_labels,
               bundle: PredictionBundle, unlabeled_ids, k: int = 10) -> Ranking:
    """Disagreement between a k-NN label-support vector and the prediction.

    Each of the k nearest labeled nodes (Euclidean distance over the chosen
    representation) contributes 1/(1 + dist) to its label's component; the
    normalized support s yields score 1 - <s, p>.
    """
    ids = _check_unlabeled(unlabeled_ids)
    labeled_ids = np.asarray(labeled_ids, dtype=np.int64)
    labeled_labels = np.asarray(labeled_labels, dtype=np.int64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > labeled_ids.size:
        raise KExceedsLabeledError(f"k={k} but only {labeled_ids.size} labeled nodes")
    rep = np.asarray(representation, dtype=np.float64)
    u = rep[ids]
    l = rep[labeled_ids]
    sq = np.maximum(
        (u * u).sum(axis=1)[:, None] - 2.0 * (u @ l.T) + (l * l).sum(axis=1)[None, :],
        0.0)
    dist = np.sqrt(sq)
    c = bundle.num_classes
    scores = np.empty(ids.size)
    for row in range(ids.size):
        nearest = np.argpartition(dist[row], k - 1)[:k]
        support = np.zeros(c)
        contrib = 1.0 / (1.0 + dist[row, nearest])
        np.add.at(support, labeled_labels[nearest], contrib)
        support /= support.sum()
        scores[row] = 1.0 - float(support @ bundle.probs[ids[row]])
    return _finalize("datis", ids, scores)


def rank_nns(bundle: PredictionBundle, g: Graph, unlabeled_ids,
             lam: float = 0.5) -> Ranking:
    """Impurity of the neighbor-smoothed distribution.

    p' = (1 - lam) * p + lam * mean over neighbors; isolated nodes keep p.
    """
    if not 0.0 <= lam <= 1.0:
        raise InvalidLambdaError(f"lambda must lie in [0, 1], got {lam}")
    ids = _check_unlabeled(unlabeled_ids)
    deg = degrees(g)
    neighbor_mean = bundle.probs.copy()
    has_neighbors = deg > 0
    if g.indices.size:
        starts = g.indptr[:-1][has_neighbors]
        sums = np.add.reduceat(bundle.probs[g.indices], starts, axis=0)
        neighbor_mean[has_neighbors] = sums / deg[has_neighbors, None]
    smoothed = (1.0 - lam) * bundle.probs + lam * neighbor_mean
    return _finalize("nns", ids, gini_rows(smoothed[ids]))


def save_ranking(ranking: Ranking, path) -> None:
    with open(path, "w") as fh:
        fh.write("node_id,score\n")
        for i, s in zip(ranking.ids, ranking.scores):
            fh.write(f"{i},{format(s, '.17g')}\n")


def load_ranking(path, method: str = "external") -> Ranking:
    ids, scores = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "node_id,score":
            raise ValueError(f"{path}: expected 'node_id,score' header")
        for line in fh:
            node, score = line.strip().split(",")
            ids.append(int(node))
            scores.append(float(score))
    scores_arr = np.asarray(scores)
    if scores_arr.size > 1 and (np.diff(scores_arr) > 1e-12).any():
        raise ValueError(f"{path}: scores must be non-increasing")
    return Ranking(method=method, ids=np.asarray(ids, dtype=np.int64), scores=scores_arr)
