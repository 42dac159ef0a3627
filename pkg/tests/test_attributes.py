import json
import math
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from graphrank.attributes import (
    AttributeMatrix,
    assemble_z1,
    base_schema,
    degree_attrs,
    deterministic_output_attrs,
    enhance,
    entropy,
    gini,
    graph_node_attrs,
    load_attributes,
    neighbor_failure_rate,
    probabilistic_output_attrs,
    save_attributes,
    variant_columns,
)
from graphrank.errors import (
    NotADistributionError,
    RowCountMismatchError,
    SchemaMismatchError,
    ShapeMismatchError,
    WrongSourceError,
)
from graphrank.graph import build_graph, row_norm_adjacency
from graphrank.models import (
    PredictionBundle,
    PredictionSource,
    TrainConfig,
    gcn_forward_deterministic,
    gcn_mc_dropout,
    mlp_forward,
    train_gcn,
    train_mlp,
)

DATA = Path(__file__).parent / "data"


def _bundle(probs, source):
    return PredictionBundle.from_probs(np.asarray(probs, dtype=np.float64), source)


class TestEntropyGini:
    def test_one_hot(self):
        assert entropy([1.0, 0.0, 0.0]) == 0.0
        assert gini([1.0, 0.0, 0.0]) == 0.0

    def test_uniform_maxima(self):
        assert entropy([0.25] * 4) == pytest.approx(math.log(4.0), abs=1e-12)
        assert gini([0.25] * 4) == pytest.approx(0.75, abs=1e-12)

    def test_hand_values(self):
        dist = [0.5, 0.3, 0.2]
        expected_entropy = -sum(p * math.log(p) for p in dist)
        assert expected_entropy == pytest.approx(1.029653, abs=1e-6)
        assert entropy(dist) == pytest.approx(expected_entropy, abs=1e-12)
        assert gini(dist) == pytest.approx(0.62, abs=1e-12)

    def test_not_a_distribution(self):
        with pytest.raises(NotADistributionError):
            entropy([0.5, 0.6])
        with pytest.raises(NotADistributionError):
            gini([-0.1, 1.1])

    def test_same_ordering_two_classes(self):
        rng = np.random.default_rng(0)
        p = rng.random(40)
        dists = np.column_stack([p, 1 - p])
        ent = [entropy(d) for d in dists]
        gin = [gini(d) for d in dists]
        assert_array_equal(np.argsort(ent), np.argsort(gin))


class TestAttributeBlocks:
    def test_deterministic_one_hot_row(self):
        out = deterministic_output_attrs(_bundle([[0, 1, 0]], PredictionSource.GCN_DETERMINISTIC))
        assert_allclose(out, [[0, 1, 0, 0, 0]])

    def test_deterministic_uniform_row(self):
        out = deterministic_output_attrs(
            _bundle([[1 / 3] * 3], PredictionSource.GCN_DETERMINISTIC))
        assert_allclose(out[0, 3], math.log(3.0), rtol=1e-12)
        assert_allclose(out[0, 4], 2 / 3, rtol=1e-12)

    def test_deterministic_width(self):
        for c in (2, 5, 7):
            probs = np.full((3, c), 1.0 / c)
            out = deterministic_output_attrs(_bundle(probs, PredictionSource.GCN_DETERMINISTIC))
            assert out.shape == (3, c + 2)

    def test_wrong_source(self):
        mc = _bundle([[0.5, 0.5]], PredictionSource.GCN_MC_DROPOUT)
        with pytest.raises(WrongSourceError):
            deterministic_output_attrs(mc)
        det = _bundle([[0.5, 0.5]], PredictionSource.GCN_DETERMINISTIC)
        with pytest.raises(WrongSourceError):
            probabilistic_output_attrs(det)
        with pytest.raises(WrongSourceError):
            graph_node_attrs(det)

    def test_probabilistic_uniform(self):
        out = probabilistic_output_attrs(_bundle([[0.25] * 4], PredictionSource.GCN_MC_DROPOUT))
        assert_allclose(out, [[math.log(4.0)]])

    def test_probabilistic_rate_zero_matches_deterministic_entropy(self, small_sbm):
        cfg = TrainConfig(epochs=40, learning_rate=0.05, hidden=8, dropout=0.0, seed=1)
        model = train_gcn(small_sbm, cfg)
        det = gcn_forward_deterministic(model, small_sbm)
        mc = gcn_mc_dropout(model, small_sbm, passes=4, rate=0.0, seed=2)
        det_attrs = deterministic_output_attrs(det)
        assert_array_equal(probabilistic_output_attrs(mc)[:, 0],
                           det_attrs[:, small_sbm.num_classes])

    def test_probabilistic_golden_regression(self, sbm_50, sbm50_mc_bundle):
        values = probabilistic_output_attrs(sbm50_mc_bundle)[:, 0]
        # independent spot check of three rows with plain python arithmetic
        for i in (3, 17, 41):
            expected = -sum(p * math.log(p) for p in sbm50_mc_bundle.probs[i] if p > 0)
            assert values[i] == pytest.approx(expected, abs=1e-12)
        golden = json.loads((DATA / "mc_entropy_sbm50.json").read_text())
        assert_allclose(values, np.asarray(golden), atol=1e-12)

    def test_graph_node_rows(self):
        out = graph_node_attrs(_bundle([[0.5, 0.5]], PredictionSource.MLP))
        assert_allclose(out, [[0.5, 0.5, math.log(2.0)]])
        out = graph_node_attrs(_bundle([[1.0, 0.0]], PredictionSource.MLP))
        assert_allclose(out, [[1.0, 0.0, 0.0]])

    def test_graph_node_edge_invariance(self, small_sbm):
        cfg = TrainConfig(epochs=30, learning_rate=0.05, hidden=8, dropout=0.0, seed=4)
        rewired = build_graph([(0, 1)], small_sbm.n, small_sbm.features, small_sbm.labels,
                              split=small_sbm.split, num_classes=small_sbm.num_classes)
        a = graph_node_attrs(mlp_forward(train_mlp(small_sbm, cfg), small_sbm.features))
        b = graph_node_attrs(mlp_forward(train_mlp(rewired, cfg), rewired.features))
        assert_array_equal(a, b)


class TestDegreeAttrs:
    def test_min_max(self):
        g = build_graph([(0, 1), (1, 2), (1, 3), (2, 3), (2, 4), (2, 0), (2, 5), (2, 6)], 7,
                        np.zeros((7, 1)), [0] * 7, num_classes=2)
        # degrees: node1=3, node2=6 ... check direct formula instead of graph shape
        out = degree_attrs(g)
        deg = np.diff(g.indptr)
        expected = (deg - deg.min()) / (deg.max() - deg.min())
        assert_allclose(out[:, 0], expected)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_hand_degrees(self):
        # star from 0 into {1,2,3,4,5} trimmed so degrees become 1, 3, 5
        edges = [(0, 1), (1, 2), (1, 3), (2, 3), (2, 4), (2, 5), (2, 0), (2, 1)]
        g = build_graph(edges, 6, np.zeros((6, 1)), [0] * 6, num_classes=2)
        deg = np.diff(g.indptr)
        out = degree_attrs(g)[:, 0]
        assert_allclose(out, (deg - deg.min()) / (deg.max() - deg.min()))

    def test_regular_graph_all_zero(self):
        ring = [(i, (i + 1) % 6) for i in range(6)]
        g = build_graph(ring, 6, np.zeros((6, 1)), [0] * 6, num_classes=2)
        assert_array_equal(degree_attrs(g), np.zeros((6, 1)))


class TestAssembleZ1:
    def _blocks(self, n, c, rng):
        det = np.column_stack([np.full((n, c), 1.0 / c),
                               np.full(n, math.log(c)), np.full(n, 1 - 1 / c)])
        prob = rng.random((n, 1))
        mlp = np.column_stack([np.full((n, c), 1.0 / c), np.full(n, math.log(c))])
        deg = rng.random((n, 1))
        return det, prob, mlp, deg

    def test_width_formula(self):
        rng = np.random.default_rng(0)
        for c in (3, 7):
            z1 = assemble_z1(*self._blocks(4, c, rng))
            assert z1.width == 2 * c + 5

    def test_row_count_mismatch(self):
        rng = np.random.default_rng(1)
        det, prob, mlp, deg = self._blocks(4, 3, rng)
        with pytest.raises(RowCountMismatchError):
            assemble_z1(det, prob[:3], mlp, deg)

    def test_gini_column_round_trip(self, small_sbm):
        cfg = TrainConfig(epochs=40, learning_rate=0.05, hidden=8, dropout=0.0, seed=5)
        model = train_gcn(small_sbm, cfg)
        det_bundle = gcn_forward_deterministic(model, small_sbm)
        mc = gcn_mc_dropout(model, small_sbm, passes=3, rate=0.5, seed=5)
        mlp_bundle = mlp_forward(train_mlp(small_sbm, cfg), small_sbm.features)
        z1 = assemble_z1(deterministic_output_attrs(det_bundle),
                         probabilistic_output_attrs(mc),
                         graph_node_attrs(mlp_bundle),
                         degree_attrs(small_sbm))
        per_node = np.array([gini(row) for row in det_bundle.probs])
        assert_allclose(z1.column("det_gini"), per_node, atol=1e-12)


class TestEnhance:
    def _z1_from(self, values, c=1):
        # wrap an arbitrary single column into a full-width z1 for aggregation
        n = len(values)
        det = np.zeros((n, c + 2))
        det[:, 0] = 1.0
        z1 = assemble_z1(det, np.asarray(values, dtype=np.float64)[:, None],
                         np.column_stack([np.ones((n, c)), np.zeros(n)]),
                         np.zeros((n, 1)))
        return z1

    def test_edgeless_graph_identity(self):
        g = build_graph([], 3, np.zeros((3, 1)), [0, 0, 0], num_classes=2)
        rng = np.random.default_rng(2)
        z1 = AttributeMatrix(values=rng.random((3, 9)), num_classes=2)
        zf = enhance(z1, row_norm_adjacency(g))
        assert_array_equal(zf.values[:, 9:], z1.values)

    def test_constant_column_fixed(self, path_graph):
        z1 = self._z1_from([4.0, 4.0, 4.0])
        zf = enhance(z1, row_norm_adjacency(path_graph))
        col = z1.names.index("mc_entropy")
        assert_allclose(zf.values[:, z1.width + col], np.full(3, 4.0), atol=1e-12)

    def test_path_hand_aggregation(self, path_graph):
        z1 = self._z1_from([0.0, 3.0, 6.0])
        zf = enhance(z1, row_norm_adjacency(path_graph))
        col = z1.names.index("mc_entropy")
        assert_allclose(zf.values[:, z1.width + col], [1.5, 3.0, 4.5], atol=1e-12)

    def test_left_block_bitwise(self, path_graph):
        rng = np.random.default_rng(3)
        z1 = AttributeMatrix(values=rng.random((3, 9)), num_classes=2)
        zf = enhance(z1, row_norm_adjacency(path_graph))
        assert_array_equal(zf.values[:, :9], z1.values)

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(4)
        edges = rng.integers(0, 12, size=(30, 2))
        edges = edges[edges[:, 0] != edges[:, 1]]
        g = build_graph(edges, 12, np.zeros((12, 1)), [0] * 12, num_classes=2)
        z1 = AttributeMatrix(values=rng.normal(size=(12, 9)), num_classes=2)
        zf = enhance(z1, row_norm_adjacency(g))
        z2 = zf.values[:, 9:]
        for j in range(9):
            assert z2[:, j].min() >= z1.values[:, j].min() - 1e-12
            assert z2[:, j].max() <= z1.values[:, j].max() + 1e-12

    def test_shape_mismatch(self, path_graph):
        z1 = AttributeMatrix(values=np.zeros((4, 9)), num_classes=2)
        with pytest.raises(ShapeMismatchError):
            enhance(z1, row_norm_adjacency(path_graph))


class TestNeighborFailureRate:
    def test_all_neighbors_fail(self, path_graph):
        assert neighbor_failure_rate(path_graph, [1, 0, 1])[1] == 1.0

    def test_isolated_node_zero(self):
        g = build_graph([(0, 1)], 3, np.zeros((3, 1)), [0] * 3, num_classes=2)
        assert neighbor_failure_rate(g, [1, 1, 1])[2] == 0.0

    def test_path_hand_case(self, path_graph):
        assert_allclose(neighbor_failure_rate(path_graph, [1, 0, 1]), [0.0, 1.0, 0.0])


class TestVariants:
    def test_widths(self):
        c = 4
        assert variant_columns(c, "aw").size == c + 3
        assert variant_columns(c, "aw_ag").size == 2 * c + 5
        assert variant_columns(c, "aw_ag_en").size == 2 * (2 * c + 5)
        assert variant_columns(c, "complete").size == 2 * (2 * c + 5)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            variant_columns(3, "nope")


class TestAttributeIO:
    def test_round_trip(self, tmp_path, path_graph):
        rng = np.random.default_rng(5)
        z1 = AttributeMatrix(values=rng.random((3, 9)), num_classes=2)
        zf = enhance(z1, row_norm_adjacency(path_graph))
        save_attributes(zf, tmp_path / "attrs.csv")
        loaded = load_attributes(tmp_path / "attrs.csv")
        assert_array_equal(loaded.values, zf.values)
        assert loaded.names == zf.names

    def test_schema_mismatch(self, tmp_path):
        z1 = AttributeMatrix(values=np.zeros((2, 9)), num_classes=2)
        save_attributes(z1, tmp_path / "attrs.csv")
        text = (tmp_path / "attrs.csv").read_text().replace("det_gini", "det_ginni")
        (tmp_path / "attrs.csv").write_text(text)
        with pytest.raises(SchemaMismatchError):
            load_attributes(tmp_path / "attrs.csv")

    def test_schema_names_frozen(self):
        assert base_schema(2) == ("det_prob_0", "det_prob_1", "det_entropy", "det_gini",
                                  "mc_entropy", "mlp_prob_0", "mlp_prob_1", "mlp_entropy",
                                  "degree_norm")
