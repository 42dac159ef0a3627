import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from graphrank.errors import (
    BudgetExceedsPoolError,
    EmptyValidationError,
    InsufficientDataError,
    WidthMismatchError,
)
from graphrank.graph import Split, build_graph
from graphrank.models import PredictionBundle, PredictionSource
from graphrank.ranker import (
    ConstantScoreClassifier,
    GbdtHyper,
    GradientBoostedClassifier,
    GroundTruthOracle,
    LabeledPool,
    LogisticHyper,
    LogisticRegressionRanker,
    construct_training_set,
    load_selection,
    prioritize_iterative,
    prioritize_single,
    save_selection,
    score,
    train_classifier,
)
from graphrank.ranker import _sigmoid


def _toy_1d(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, 1))
    y = (x[:, 0] >= 0).astype(np.float64)
    return x, y


# --- slow reference implementation used as the split-search oracle ----------

def _reference_tree(x, rows, grad, hess, hyper, depth):
    g_tot = grad[rows].sum()
    h_tot = hess[rows].sum()
    if depth >= hyper.max_depth or rows.size < 2:
        return ("leaf", -g_tot / (h_tot + hyper.l2))
    best = (-np.inf, None, None)
    for f in range(x.shape[1]):
        order = rows[np.argsort(x[rows, f], kind="stable")]
        vals = x[order, f]
        gl = hl = 0.0
        for pos in range(rows.size - 1):
            gl += grad[order[pos]]
            hl += hess[order[pos]]
            if vals[pos + 1] <= vals[pos]:
                continue
            gr, hr = g_tot - gl, h_tot - hl
            if hl < hyper.min_child_weight or hr < hyper.min_child_weight:
                continue
            gain = 0.5 * (gl * gl / (hl + hyper.l2) + gr * gr / (hr + hyper.l2)
                          - g_tot * g_tot / (h_tot + hyper.l2))
            if gain > best[0]:
                best = (gain, f, vals[pos + 1])
    if best[1] is None or best[0] <= 0:
        return ("leaf", -g_tot / (h_tot + hyper.l2))
    _, f, thr = best
    left = rows[x[rows, f] < thr]
    right = rows[x[rows, f] >= thr]
    return ("split", f, thr,
            _reference_tree(x, left, grad, hess, hyper, depth + 1),
            _reference_tree(x, right, grad, hess, hyper, depth + 1))


def _reference_apply(node, x, row):
    while node[0] == "split":
        node = node[3] if x[row, node[1]] < node[2] else node[4]
    return node[1]


class TestBoostedClassifier:
    def test_separable_toy_perfect_accuracy(self):
        x, y = _toy_1d()
        clf = GradientBoostedClassifier(hyper=GbdtHyper(trees=30, max_depth=3)).fit(x, y)
        preds = (clf.predict_scores(x) > 0.5).astype(float)
        assert (preds == y).all()

    def test_all_zero_labels_scores_below_half(self):
        x = np.random.default_rng(1).normal(size=(20, 3))
        clf = train_classifier(LabeledPool(x, np.zeros(20), np.arange(20)))
        assert isinstance(clf, ConstantScoreClassifier)
        assert (clf.predict_scores(x) < 0.5).all()

    def test_deterministic_refit(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(120, 5))
        y = (x[:, 0] + 0.3 * rng.normal(size=120) > 0).astype(float)
        a = GradientBoostedClassifier(hyper=GbdtHyper(trees=20)).fit(x, y)
        b = GradientBoostedClassifier(hyper=GbdtHyper(trees=20)).fit(x, y)
        assert_array_equal(a.predict_margin(x), b.predict_margin(x))

    def test_loss_non_increasing(self):
        rng = np.random.default_rng(3)
        for trial in range(5):
            x = rng.normal(size=(80, 4))
            y = rng.integers(0, 2, size=80).astype(float)
            clf = GradientBoostedClassifier(hyper=GbdtHyper(trees=40)).fit(x, y)
            losses = np.asarray(clf.train_losses)
            assert (np.diff(losses) <= 1e-12).all()

    def test_pool_permutation_invariance(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(60, 4))
        y = (x[:, 1] > 0).astype(float)
        ids = rng.permutation(1000)[:60]
        pool = LabeledPool(x, y, ids)
        perm = rng.permutation(60)
        shuffled = LabeledPool(x[perm], y[perm], ids[perm])
        a = train_classifier(pool, hyper=GbdtHyper(trees=15))
        b = train_classifier(shuffled, hyper=GbdtHyper(trees=15))
        assert_array_equal(a.predict_scores(x), b.predict_scores(x))

    def test_empty_ensemble_base_zero(self):
        clf = GradientBoostedClassifier(base_margin=0.0, n_features=2)
        assert_allclose(clf.predict_scores(np.zeros((3, 2))), np.full(3, 0.5))

    def test_monotone_single_split_ordering(self):
        x, y = _toy_1d(n=100, seed=5)
        clf = GradientBoostedClassifier(hyper=GbdtHyper(trees=1, max_depth=1)).fit(x, y)
        scores = clf.predict_scores(x)
        order = np.argsort(x[:, 0])
        assert (np.diff(scores[order]) >= 0).all()

    def test_duplicate_rows_same_score(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(40, 3))
        x[7] = x[21]
        y = rng.integers(0, 2, 40).astype(float)
        clf = GradientBoostedClassifier(hyper=GbdtHyper(trees=10)).fit(x, y)
        s = clf.predict_scores(x)
        assert s[7] == s[21]

    def test_width_mismatch(self):
        x, y = _toy_1d(n=50)
        clf = GradientBoostedClassifier(hyper=GbdtHyper(trees=2)).fit(x, y)
        with pytest.raises(WidthMismatchError):
            clf.predict_scores(np.zeros((3, 4)))

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            GradientBoostedClassifier().fit(np.zeros((1, 2)), np.zeros(1))

    def test_matches_reference_split_search(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(50, 3))
        x[:, 1] = np.round(x[:, 1], 1)  # force ties along one feature
        y = (x[:, 0] * x[:, 1] > 0).astype(float)
        hyper = GbdtHyper(trees=3, max_depth=3)
        clf = GradientBoostedClassifier(hyper=hyper).fit(x, y)

        margins = np.full(50, clf.base_margin)
        for _ in range(hyper.trees):
            p = _sigmoid(margins)
            grad, hess = p - y, p * (1 - p)
            root = _reference_tree(x, np.arange(50), grad, hess, hyper, 0)
            margins = margins + hyper.shrinkage * np.array(
                [_reference_apply(root, x, i) for i in range(50)])
        assert_allclose(clf.predict_margin(x), margins, atol=1e-12)


class TestLogisticRanker:
    def test_separable_toy(self):
        # gradient descent needs a positive margin to place the boundary
        x, y = _toy_1d()
        near = np.abs(x[:, 0]) < 0.02
        x[near, 0] += np.sign(x[near, 0] + 1e-12) * 0.02
        y = (x[:, 0] >= 0).astype(np.float64)
        clf = LogisticRegressionRanker(hyper=LogisticHyper()).fit(x, y)
        preds = (clf.predict_scores(x) > 0.5).astype(float)
        assert (preds == y).mean() == 1.0

    def test_zero_epochs_gives_half(self):
        x, y = _toy_1d(n=30)
        clf = LogisticRegressionRanker(hyper=LogisticHyper(epochs=0)).fit(x, y)
        assert_allclose(clf.predict_scores(x), np.full(30, 0.5))

    def test_pluggable_backend(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(40, 3))
        y = (x[:, 0] > 0).astype(np.int8)
        pool = LabeledPool(x, y, np.arange(40))
        clf = train_classifier(pool, hyper=LogisticHyper(), backend="logistic")
        assert isinstance(clf, LogisticRegressionRanker)
        assert score(clf, x).shape == (40,)


class TestConstructTrainingSet:
    def _graph(self, n=30, val_error=0.0, seed=0):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 3, n)
        split = np.zeros(n, dtype=np.int8)
        split[10:20] = int(Split.VAL)
        split[20:] = int(Split.TEST)
        g = build_graph([(0, 1)], n, rng.normal(size=(n, 2)), labels,
                        split=split, num_classes=3)
        predicted = labels.copy()
        val_ids = g.split_ids(Split.VAL)
        wrong = val_ids[:int(round(val_error * val_ids.size))]
        predicted[wrong] = (predicted[wrong] + 1) % 3
        probs = np.eye(3)[predicted]
        bundle = PredictionBundle.from_probs(probs, PredictionSource.GCN_DETERMINISTIC)
        zf = rng.normal(size=(n, 6))
        return g, bundle, zf

    def test_perfect_model_all_zero(self):
        g, bundle, zf = self._graph()
        pool = construct_training_set(g, bundle, zf)
        assert pool.labels.sum() == 0

    def test_error_rate_matches(self):
        g, bundle, zf = self._graph(val_error=0.2)
        pool = construct_training_set(g, bundle, zf)
        assert pool.labels.mean() == pytest.approx(0.2)

    def test_excludes_train_split(self):
        g, bundle, zf = self._graph(val_error=0.5)
        pool = construct_training_set(g, bundle, zf)
        train_ids = set(g.split_ids(Split.TRAIN).tolist())
        assert not train_ids.intersection(pool.ids.tolist())
        assert_array_equal(np.sort(pool.ids), g.split_ids(Split.VAL))

    def test_empty_validation(self):
        rng = np.random.default_rng(1)
        g = build_graph([(0, 1)], 4, rng.normal(size=(4, 2)), [0, 1, 0, 1],
                        num_classes=2)  # all-test split
        bundle = PredictionBundle.from_probs(np.eye(2)[g.labels],
                                             PredictionSource.GCN_DETERMINISTIC)
        with pytest.raises(EmptyValidationError):
            construct_training_set(g, bundle, rng.normal(size=(4, 3)))


class TestPrioritization:
    def _instance(self, n=400, seed=0):
        rng = np.random.default_rng(seed)
        attrs = rng.normal(size=(n, 6))
        failures = (attrs[:, 0] + 0.5 * rng.normal(size=n) > 0.6).astype(np.int8)
        pool_ids = np.arange(0, n, 2)
        unlabeled = np.setdiff1d(np.arange(n), pool_ids)
        pool = LabeledPool(attrs[pool_ids], failures[pool_ids], pool_ids)
        return attrs, pool, unlabeled, GroundTruthOracle(failures)

    HYPER = GbdtHyper(trees=10, max_depth=3)

    def test_round_structure_even_budget(self):
        attrs, pool, unlabeled, oracle = self._instance()
        sel = prioritize_iterative(attrs, pool, unlabeled, oracle, 100, 10,
                                   hyper=self.HYPER)
        assert sel.round_sizes == (10,) * 10
        assert sel.ids.size == 100

    def test_round_structure_tail_round(self):
        attrs, pool, unlabeled, oracle = self._instance()
        sel = prioritize_iterative(attrs, pool, unlabeled, oracle, 95, 10,
                                   hyper=self.HYPER)
        assert sel.round_sizes == (10,) * 9 + (5,)

    def test_bookkeeping_invariants(self):
        attrs, pool, unlabeled, oracle = self._instance(seed=3)
        initial_pool_ids = set(pool.ids.tolist())
        sel = prioritize_iterative(attrs, pool, unlabeled, oracle, 95, 10,
                                   hyper=self.HYPER)
        chosen = set(sel.ids.tolist())
        assert len(chosen) == 95
        assert chosen.isdisjoint(initial_pool_ids)
        assert chosen.issubset(set(unlabeled.tolist()))

    def test_single_round_when_round_budget_covers(self):
        attrs, pool, unlabeled, oracle = self._instance(seed=4)
        it = prioritize_iterative(attrs, pool, unlabeled, oracle, 30, 50,
                                  hyper=self.HYPER)
        single = prioritize_single(attrs, pool, unlabeled, 30, hyper=self.HYPER)
        assert it.round_sizes == (30,)
        assert_array_equal(it.ids, single.ids)

    def test_budget_exceeds_pool(self):
        attrs, pool, unlabeled, oracle = self._instance()
        with pytest.raises(BudgetExceedsPoolError):
            prioritize_iterative(attrs, pool, unlabeled, oracle, unlabeled.size + 1,
                                 10, hyper=self.HYPER)

    def test_prefix_property_single(self):
        attrs, pool, unlabeled, _ = self._instance(seed=5)
        a = prioritize_single(attrs, pool, unlabeled, 20, hyper=self.HYPER)
        b = prioritize_single(attrs, pool, unlabeled, 35, hyper=self.HYPER)
        assert_array_equal(a.ids, b.ids[:20])

    def test_column_slice_variant(self):
        attrs, pool, unlabeled, _ = self._instance(seed=6)
        cols = np.arange(3)
        sliced_pool = LabeledPool(pool.features[:, cols], pool.labels, pool.ids)
        sel = prioritize_single(attrs[:, cols], sliced_pool, unlabeled, 10,
                                hyper=self.HYPER)
        assert sel.ids.size == 10

    def test_degenerate_pool_falls_back_to_key(self):
        attrs, _, unlabeled, oracle = self._instance(seed=7)
        ids = np.arange(0, 20)
        pool = LabeledPool(attrs[ids], np.zeros(ids.size), ids)
        key = np.linspace(0, 1, attrs.shape[0])
        sel = prioritize_single(attrs, pool, np.arange(300, 320), 5,
                                hyper=self.HYPER, fallback_key=key)
        assert_array_equal(sel.ids, [319, 318, 317, 316, 315])

    def test_tie_break_ascending_id(self):
        attrs = np.zeros((40, 2))  # identical rows give identical scores
        ids = np.arange(20)
        labels = np.zeros(20, dtype=np.int8)
        labels[:10] = 1
        attrs[:20, 0] = labels  # pool separable but unlabeled all equal
        pool = LabeledPool(attrs[ids], labels, ids)
        sel = prioritize_single(attrs, pool, np.arange(20, 40), 5,
                                hyper=GbdtHyper(trees=3, max_depth=2))
        assert_array_equal(sel.ids, [20, 21, 22, 23, 24])

    def test_perfect_classifier_reaches_trc_one(self):
        # one attribute column equals the failure indicator, so the trained
        # classifier separates perfectly and every budget <= TF scores TRC 1
        from graphrank.evaluation import budget_grid, trc

        rng = np.random.default_rng(9)
        n = 300
        attrs = rng.normal(size=(n, 4))
        failures = (rng.random(n) < 0.4).astype(np.int8)
        attrs[:, 2] = failures
        pool_ids = np.arange(0, n, 2)
        unlabeled = np.setdiff1d(np.arange(n), pool_ids)
        pool = LabeledPool(attrs[pool_ids], failures[pool_ids], pool_ids)
        fail_ids = unlabeled[failures[unlabeled] == 1]
        for b in budget_grid(fail_ids.size, steps=5):
            sel = prioritize_single(attrs, pool, unlabeled, b, hyper=self.HYPER)
            assert trc(sel.ids, fail_ids, b) == 1.0

    def test_selection_json_round_trip(self, tmp_path):
        attrs, pool, unlabeled, oracle = self._instance(seed=8)
        sel = prioritize_iterative(attrs, pool, unlabeled, oracle, 25, 10,
                                   hyper=self.HYPER)
        save_selection(sel, tmp_path / "sel.json", hyper=self.HYPER, seed=8)
        loaded = load_selection(tmp_path / "sel.json")
        assert_array_equal(loaded.ids, sel.ids)
        assert loaded.round_sizes == sel.round_sizes
        assert loaded.budget == sel.budget
