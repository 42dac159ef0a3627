"""Failure-detection metrics, significance statistics and the method harness.

TRC at budget b is detected failures over min(b, total failures); ATRC is
the mean TRC over a grid of budgets spanning one tenth to all of the total
failures. Single-ranking methods are prefix-evaluated across the grid; the
iterative method is re-run per budget because its round budget is a fraction
of the given budget.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .attributes import (
    assemble_z1,
    degree_attrs,
    deterministic_output_attrs,
    enhance,
    graph_node_attrs,
    probabilistic_output_attrs,
    variant_columns,
)
from .baselines import (
    Ranking,
    load_ranking,
    rank_datis,
    rank_deepgini,
    rank_dropout,
    rank_entropy,
    rank_margin,
    rank_nns,
    rank_random,
)
from .errors import (
    EmptyGridError,
    EmptyGroupError,
    MissingArtifactsError,
    TooFewFailuresError,
    UnknownMethodError,
    ZeroFailuresError,
    ZeroVarianceError,
)
from .graph import Graph, Split, row_norm_adjacency
from .models import (
    PredictionBundle,
    TrainConfig,
    classify_failures,
    gcn_forward_deterministic,
    gcn_mc_dropout,
    mlp_forward,
    train_gcn,
    train_mlp,
)
from .ranker import (
    GbdtHyper,
    GroundTruthOracle,
    LabeledPool,
    SelectionResult,
    construct_training_set,
    prioritize_iterative,
    prioritize_single,
)

__all__ = [
    "trc",
    "budget_grid",
    "atrc",
    "mann_whitney_u",
    "cohens_d",
    "StatsResult",
    "significance",
    "attribute_distributions",
    "repair_retrain",
    "validation_accuracy",
    "augmented_validation_accuracy",
    "SeedArtifacts",
    "build_seed_artifacts",
    "artifacts_from_files",
    "derived_seeds",
    "MethodOptions",
    "EvalReport",
    "RANKING_METHODS",
    "evaluate_method",
]


def trc(selected_ids, failure_ids, budget: int) -> float:
    """Detected failures over min(budget, total failures)."""
    selected = np.asarray(selected_ids, dtype=np.int64)
    failures = np.asarray(failure_ids, dtype=np.int64)
    if selected.size != budget:
        raise ValueError(f"selection has {selected.size} ids for budget {budget}")
    tf = failures.size
    if tf == 0:
        raise ZeroFailuresError("no failures in the unlabeled pool; TRC undefined")
    df = np.isin(selected, failures).sum()
    return float(df) / float(min(budget, tf))


def budget_grid(total_failures: int, steps: int = 10) -> list[int]:
    """Budgets i * TF / steps for i = 1..steps, rounded half-up, deduplicated."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if total_failures < steps:
        raise TooFewFailuresError(
            f"{total_failures} failures cannot support {steps} budget steps")
    grid = []
    for i in range(1, steps + 1):
        b = int(math.floor(i * total_failures / steps + 0.5))
        b = max(b, 1)
        if not grid or b > grid[-1]:
            grid.append(b)
    return grid


def atrc(per_budget_trcs) -> float:
    values = np.asarray(per_budget_trcs, dtype=np.float64)
    if values.size == 0:
        raise EmptyGridError("no TRC values to average")
    return float(values.mean())


# ---------------------------------------------------------------------------
# significance statistics


@dataclass(frozen=True)
class StatsResult:
    p_value: float
    effect_size: float
    n_a: int
    n_b: int


def _midranks(pooled: np.ndarray) -> np.ndarray:
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(pooled.size)
    sorted_vals = pooled[order]
    i = 0
    while i < pooled.size:
        j = i
        while j + 1 < pooled.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _u_statistic(ranks: np.ndarray, subset, n: int) -> float:
    return float(ranks[list(subset)].sum()) - n * (n + 1) / 2.0


def mann_whitney_u(a, b) -> float:
    """Two-sided Mann-Whitney p-value.

    Exact enumeration of all arrangements when both groups have at most 8
    values; otherwise the normal approximation with tie correction and a
    continuity correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptyGroupError("both groups must be nonempty")
    n, m = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u_obs = _u_statistic(ranks, range(n), n)
    center = n * m / 2.0

    if n <= 8 and m <= 8:
        dev = abs(u_obs - center)
        rank_list = ranks.tolist()
        offset = n * (n + 1) / 2.0 + center
        hits = total = 0
        for subset in combinations(range(n + m), n):
            total += 1
            if abs(sum(rank_list[i] for i in subset) - offset) >= dev - 1e-12:
                hits += 1
        return hits / total

    # tie-corrected normal approximation
    _, counts = np.unique(pooled, return_counts=True)
    nm = n + m
    tie_term = float(((counts ** 3) - counts).sum()) / (nm * (nm - 1))
    sigma_sq = n * m / 12.0 * ((nm + 1) - tie_term)
    if sigma_sq <= 0:
        return 1.0
    dev = abs(u_obs - center)
    z = max(dev - 0.5, 0.0) / math.sqrt(sigma_sq)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def cohens_d(a, b) -> float:
    """Standardized mean difference with the pooled (n-1) deviation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise EmptyGroupError("each group needs at least 2 values")
    var_a = a.var(ddof=1)
    var_b = b.var(ddof=1)
    pooled = ((a.size - 1) * var_a + (b.size - 1) * var_b) / (a.size + b.size - 2)
    if pooled == 0.0:
        raise ZeroVarianceError("both groups are constant; effect size undefined")
    return float((a.mean() - b.mean()) / math.sqrt(pooled))


def significance(a, b) -> StatsResult:
    return StatsResult(p_value=mann_whitney_u(a, b), effect_size=cohens_d(a, b),
                       n_a=len(a), n_b=len(b))


# ---------------------------------------------------------------------------
# score-distribution diagnostics


def attribute_distributions(metric, failures, bins: int = 20):
    """Per-bin proportions of a metric for failure vs correct nodes.

    Returns a list of (bin_lo, bin_hi, failure_prop, correct_prop) rows;
    each group's proportions sum to 1. A constant metric occupies one bin.
    """
    metric = np.asarray(metric, dtype=np.float64)
    failures = np.asarray(failures).astype(bool)
    if metric.shape != failures.shape:
        raise ValueError("metric and failure mask must align")
    lo, hi = float(metric.min()), float(metric.max())
    if hi == lo:
        row = (lo, hi, 1.0 if failures.any() else 0.0,
               1.0 if (~failures).any() else 0.0)
        return [row]
    edges = np.linspace(lo, hi, bins + 1)
    rows = []
    for group_mask in (failures, ~failures):
        counts, _ = np.histogram(metric[group_mask], bins=edges)
        total = counts.sum()
        rows.append(counts / total if total else counts.astype(np.float64))
    return [(float(edges[i]), float(edges[i + 1]), float(rows[0][i]), float(rows[1][i]))
            for i in range(bins)]


# ---------------------------------------------------------------------------
# repair by retraining


def validation_accuracy(g: Graph, cfg: TrainConfig) -> float:
    """Train from scratch with cfg and report validation accuracy."""
    val_ids = g.split_ids(Split.VAL)
    bundle = gcn_forward_deterministic(train_gcn(g, cfg), g)
    return float((bundle.predicted[val_ids] == g.labels[val_ids]).mean())


def augmented_validation_accuracy(g: Graph, ids: np.ndarray, cfg: TrainConfig) -> float:
    """Validation accuracy after moving the selected test nodes into training."""
    split = np.array(g.split, dtype=np.int8)
    split[ids] = int(Split.TRAIN)
    augmented = Graph(n=g.n, indptr=g.indptr, indices=g.indices, features=g.features,
                      labels=g.labels, num_classes=g.num_classes, split=split)
    return validation_accuracy(augmented, cfg)


def repair_retrain(g: Graph, selection, cfg: TrainConfig) -> float:
    """Validation-accuracy change from adding selected test nodes to training.

    Both models are trained from scratch with the same config and seed, so an
    empty selection yields exactly zero.
    """
    ids = selection.ids if isinstance(selection, SelectionResult) else \
        np.asarray(selection, dtype=np.int64)
    if np.unique(ids).size != ids.size:
        raise ValueError("selection contains duplicate ids")
    if ids.size == 0:
        return 0.0
    if not np.all(g.split[ids] == int(Split.TEST)):
        raise ValueError("selection must be drawn from the test split")
    return augmented_validation_accuracy(g, ids, cfg) - validation_accuracy(g, cfg)


# ---------------------------------------------------------------------------
# per-seed pipeline artifacts


@dataclass(frozen=True, eq=False)
class SeedArtifacts:
    """Everything one pipeline seed produces for method evaluation."""

    seed: int
    det: PredictionBundle
    mc: PredictionBundle
    mlp_bundle: PredictionBundle | None
    z1: object
    zf: object
    failures: np.ndarray
    unlabeled_ids: np.ndarray
    pool: LabeledPool

    @property
    def unlabeled_failure_ids(self) -> np.ndarray:
        return self.unlabeled_ids[self.failures[self.unlabeled_ids] == 1]

    @property
    def failure_rate(self) -> float:
        return float(self.failures[self.unlabeled_ids].mean())


def derived_seeds(seed: int, count: int = 4) -> list[int]:
    """Independent integer seeds derived from one pipeline seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def build_seed_artifacts(g: Graph, seed: int, gcn_cfg: TrainConfig,
                         mlp_cfg: TrainConfig, mc_passes: int = 10,
                         mc_rate: float = 0.5, mc_average: str = "logits") -> SeedArtifacts:
    """Train both models and derive attributes/pool for one pipeline seed."""
    gcn_seed, mlp_seed, mc_seed, _ = derived_seeds(seed)
    gcn = train_gcn(g, replace(gcn_cfg, seed=gcn_seed))
    det = gcn_forward_deterministic(gcn, g)
    mc = gcn_mc_dropout(gcn, g, passes=mc_passes, rate=mc_rate, seed=mc_seed,
                        average=mc_average)
    mlp = train_mlp(g, replace(mlp_cfg, seed=mlp_seed))
    mlp_bundle = mlp_forward(mlp, g.features)

    z1 = assemble_z1(deterministic_output_attrs(det),
                     probabilistic_output_attrs(mc),
                     graph_node_attrs(mlp_bundle),
                     degree_attrs(g))
    zf = enhance(z1, row_norm_adjacency(g))
    failures = classify_failures(det, g)
    pool = construct_training_set(g, det, zf)
    return SeedArtifacts(seed=seed, det=det, mc=mc, mlp_bundle=mlp_bundle,
                         z1=z1, zf=zf, failures=failures,
                         unlabeled_ids=g.split_ids(Split.TEST), pool=pool)


def artifacts_from_files(g: Graph, seed: int, det_bundle: PredictionBundle,
                         mc_bundle: PredictionBundle, zf) -> SeedArtifacts:
    """Rebuild seed artifacts from persisted predictions and attributes."""
    from .attributes import AttributeMatrix

    z1 = AttributeMatrix(values=zf.values[:, :zf.base_width].copy(),
                         num_classes=zf.num_classes)
    failures = classify_failures(det_bundle, g)
    pool = construct_training_set(g, det_bundle, zf)
    return SeedArtifacts(seed=seed, det=det_bundle, mc=mc_bundle, mlp_bundle=None,
                         z1=z1, zf=zf, failures=failures,
                         unlabeled_ids=g.split_ids(Split.TEST), pool=pool)


# ---------------------------------------------------------------------------
# method registry and evaluation


RANKING_METHODS = ("random", "entropy", "margin", "deepgini", "dropout",
                   "datis", "nns", "oracle")


@dataclass(frozen=True)
class MethodOptions:
    rounds: int = 10
    hyper: GbdtHyper = field(default_factory=GbdtHyper)
    backend: str = "gbdt"
    variant: str = "complete"
    datis_k: int = 10
    datis_representation: str = "features"
    nns_lambda: float = 0.5


def _oracle_ranking(art: SeedArtifacts) -> Ranking:
    ids = np.sort(art.unlabeled_ids)
    scores = art.failures[ids].astype(np.float64)
    order = np.lexsort((ids, -scores))
    return Ranking(method="oracle", ids=ids[order], scores=scores[order])


def produce_ranking(method: str, g: Graph, art: SeedArtifacts,
                    options: MethodOptions, external_path=None) -> Ranking:
    """Run one single-ranking method on one seed's artifacts."""
    ids = art.unlabeled_ids
    if method == "random":
        return rank_random(ids, seed=derived_seeds(art.seed)[3])
    if method == "entropy":
        return rank_entropy(art.det, ids)
    if method == "margin":
        return rank_margin(art.det, ids)
    if method == "deepgini":
        return rank_deepgini(art.det, ids)
    if method == "dropout":
        return rank_dropout(art.mc, ids)
    if method == "datis":
        labeled = np.concatenate([g.split_ids(Split.TRAIN), g.split_ids(Split.VAL)])
        return rank_datis(g.features, labeled, g.labels[labeled], art.det, ids,
                          k=options.datis_k)
    if method == "nns":
        return rank_nns(art.det, g, ids, lam=options.nns_lambda)
    if method == "oracle":
        return _oracle_ranking(art)
    if method == "external":
        if external_path is None:
            raise MissingArtifactsError("external method requires a ranking file")
        ranking = load_ranking(external_path)
        if not ranking.is_permutation_of(ids):
            raise ValueError(f"{external_path}: not a permutation of the unlabeled set")
        return ranking
    raise UnknownMethodError(f"unknown method {method!r}")


def graphrank_selection(art: SeedArtifacts, budget: int, options: MethodOptions,
                        pool: LabeledPool | None = None) -> SelectionResult:
    """Variant-aware prioritization at one budget.

    The complete variant runs the iterative loop with a round budget of one
    tenth (rounded up) of the given budget; ablation variants run the
    single-shot ranking on their column subset.
    """
    cols = variant_columns(art.z1.num_classes, options.variant)
    rows = art.zf.values[:, cols]
    pool = pool if pool is not None else art.pool
    sliced = LabeledPool(pool.features[:, cols], pool.labels, pool.ids)
    fallback = art.z1.column("det_entropy")
    if options.variant == "complete":
        oracle = GroundTruthOracle(art.failures)
        round_budget = max(1, math.ceil(budget / options.rounds))
        return prioritize_iterative(rows, sliced, art.unlabeled_ids, oracle,
                                    budget, round_budget, hyper=options.hyper,
                                    seed=art.seed, backend=options.backend,
                                    fallback_key=fallback)
    return prioritize_single(rows, sliced, art.unlabeled_ids, budget,
                             hyper=options.hyper, seed=art.seed,
                             backend=options.backend, fallback_key=fallback)


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-method evaluation summary across seeds."""

    method: str
    seeds: tuple
    total_failures: tuple
    budget_fractions: tuple
    budgets: tuple            # per seed, aligned with fractions
    df: tuple                 # seed-averaged detected failures per fraction
    trc_curve: tuple          # seed-averaged TRC per fraction
    per_seed_atrc: tuple
    atrc_mean: float
    atrc_sd: float
    wall_clock_s: float

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seeds": list(self.seeds),
            "total_failures": list(self.total_failures),
            "budget_fractions": list(self.budget_fractions),
            "budgets": [list(b) for b in self.budgets],
            "df": list(self.df),
            "trc_curve": list(self.trc_curve),
            "per_seed_atrc": list(self.per_seed_atrc),
            "atrc_mean": self.atrc_mean,
            "atrc_sd": self.atrc_sd,
            "timing": {"wall_clock_s": self.wall_clock_s},
        }


def evaluate_method(method: str, g: Graph, artifacts, steps: int = 10,
                    options: MethodOptions | None = None, external_path=None,
                    rankings=None) -> EvalReport:
    """Evaluate one method over the budget grid for every seed's artifacts.

    ``rankings`` optionally supplies precomputed rankings keyed by seed (the
    CLI uses persisted files); otherwise rankings are produced in-process.
    """
    options = options or MethodOptions()
    started = time.perf_counter()
    per_seed_trcs = []
    per_seed_dfs = []
    budgets_by_seed = []
    tfs = []
    for art in artifacts:
        fail_ids = art.unlabeled_failure_ids
        tf = fail_ids.size
        if tf == 0:
            raise ZeroFailuresError(f"seed {art.seed}: no failures in unlabeled pool")
        grid = budget_grid(tf, steps)
        tfs.append(tf)
        budgets_by_seed.append(grid)

        if method == "graphrank":
            selected_per_budget = [graphrank_selection(art, b, options).ids for b in grid]
        else:
            if rankings is not None:
                ranking = rankings[art.seed]
            else:
                ranking = produce_ranking(method, g, art, options, external_path)
            selected_per_budget = [ranking.top(b) for b in grid]

        dfs = [float(np.isin(sel, fail_ids).sum()) for sel in selected_per_budget]
        trcs = [trc(sel, fail_ids, b) for sel, b in zip(selected_per_budget, grid)]
        per_seed_dfs.append(dfs)
        per_seed_trcs.append(trcs)

    trc_matrix = np.asarray(per_seed_trcs)
    df_matrix = np.asarray(per_seed_dfs)
    per_seed_atrc = [atrc(row) for row in trc_matrix]
    fractions = tuple((i + 1) / steps for i in range(steps))
    return EvalReport(
        method=method,
        seeds=tuple(a.seed for a in artifacts),
        total_failures=tuple(tfs),
        budget_fractions=fractions,
        budgets=tuple(tuple(b) for b in budgets_by_seed),
        df=tuple(df_matrix.mean(axis=0).tolist()),
        trc_curve=tuple(trc_matrix.mean(axis=0).tolist()),
        per_seed_atrc=tuple(per_seed_atrc),
        atrc_mean=float(np.mean(per_seed_atrc)),
        atrc_sd=float(np.std(per_seed_atrc, ddof=1)) if len(per_seed_atrc) > 1 else 0.0,
        wall_clock_s=time.perf_counter() - started,
    )
