import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from graphrank.errors import (
    DanglingEdgeError,
    EmptySplitError,
    GraphParseError,
    InconsistentDimensionsError,
    LabelOutOfRangeError,
)
from graphrank.graph import (
    SbmParams,
    Split,
    build_graph,
    degrees,
    generate_sbm,
    load_graph_dir,
    row_norm_adjacency,
    save_graph,
    sym_norm_adjacency,
)


def _tiny(edges, n, labels=None):
    labels = labels if labels is not None else [0] * n
    return build_graph(edges, n, features=np.zeros((n, 2)), labels=labels,
                       num_classes=2)


class TestBuildGraph:
    def test_symmetrization(self):
        g = _tiny([(0, 1)], 2)
        assert_array_equal(g.neighbors(0), [1])
        assert_array_equal(g.neighbors(1), [0])

    def test_dedup(self):
        g = _tiny([(0, 1), (1, 0), (0, 1)], 2)
        assert g.num_edges == 1

    def test_dangling_edge(self):
        with pytest.raises(DanglingEdgeError):
            _tiny([(0, 5)], 3)

    def test_label_out_of_range(self):
        with pytest.raises(LabelOutOfRangeError):
            build_graph([(0, 1)], 2, np.zeros((2, 1)), [0, 3], num_classes=2)

    def test_empty_split_rejected(self):
        with pytest.raises(EmptySplitError):
            build_graph([(0, 1)], 3, np.zeros((3, 1)), [0, 0, 0],
                        split=[Split.TRAIN, Split.TRAIN, Split.VAL])

    def test_self_loops_dropped_with_warning(self):
        with pytest.warns(UserWarning):
            g = _tiny([(0, 0), (0, 1)], 2)
        assert g.num_edges == 1

    def test_adjacency_sorted_within_rows(self):
        g = _tiny([(2, 0), (2, 1), (2, 3)], 4)
        assert_array_equal(g.neighbors(2), [0, 1, 3])


class TestDegrees:
    def test_isolated(self):
        assert degrees(_tiny([], 1))[0] == 0

    def test_path(self, path_graph):
        assert_array_equal(degrees(path_graph), [1, 2, 1])

    def test_complete_four(self):
        edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        assert_array_equal(degrees(_tiny(edges, 4)), [3, 3, 3, 3])

    def test_degree_sum_is_twice_edges(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 30))
            m = int(rng.integers(0, n * 2))
            edges = rng.integers(0, n, size=(m, 2))
            edges = edges[edges[:, 0] != edges[:, 1]]
            g = _tiny(edges, n)
            assert degrees(g).sum() == 2 * g.num_edges


class TestSymNorm:
    def test_isolated_node(self):
        a = sym_norm_adjacency(_tiny([], 1))
        assert_allclose(a.to_dense(), [[1.0]])

    def test_single_edge(self):
        a = sym_norm_adjacency(_tiny([(0, 1)], 2))
        assert_allclose(a.to_dense(), [[0.5, 0.5], [0.5, 0.5]])

    def test_path_entries(self, path_graph):
        a = sym_norm_adjacency(path_graph)
        assert_allclose(a.entry(1, 1), 1.0 / 3.0, rtol=1e-12)
        assert_allclose(a.entry(0, 1), 1.0 / np.sqrt(6.0), rtol=1e-12)

    def test_symmetric_exactly(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            n = int(rng.integers(2, 25))
            edges = rng.integers(0, n, size=(n * 2, 2))
            edges = edges[edges[:, 0] != edges[:, 1]]
            a = sym_norm_adjacency(_tiny(edges, n))
            for i in range(n):
                cols, _ = a.row(i)
                for j in cols:
                    assert a.entry(i, int(j)) == a.entry(int(j), i)


class TestRowNorm:
    def test_isolated_node(self):
        a = row_norm_adjacency(_tiny([], 1))
        assert_allclose(a.to_dense(), [[1.0]])

    def test_path_middle_row(self, path_graph):
        a = row_norm_adjacency(path_graph)
        dense = a.to_dense()
        assert_allclose(dense[1], [1 / 3, 1 / 3, 1 / 3])

    def test_star_center(self):
        a = row_norm_adjacency(_tiny([(0, i) for i in range(1, 5)], 5))
        assert_allclose(a.to_dense()[0], np.full(5, 0.2))

    def test_rows_sum_to_one_with_diagonal(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            n = int(rng.integers(1, 30))
            edges = rng.integers(0, n, size=(n, 2))
            edges = edges[edges[:, 0] != edges[:, 1]]
            g = _tiny(edges, n)
            a = row_norm_adjacency(g)
            deg = degrees(g)
            for i in range(n):
                cols, vals = a.row(i)
                assert vals.sum() == pytest.approx(1.0, abs=1e-12)
                assert cols.size == deg[i] + 1
                assert i in cols


class TestSbm:
    def test_disjoint_cliques(self):
        g = generate_sbm(SbmParams(n=4, c=2, p_in=1.0, p_out=0.0, d=2, seed=0),
                         split_fractions=(0.5, 0.25, 0.25))
        # round-robin labels put 0,2 in one block and 1,3 in the other
        assert_array_equal(g.neighbors(0), [2])
        assert_array_equal(g.neighbors(1), [3])

    def test_deterministic(self):
        p = SbmParams(n=80, c=3, p_in=0.2, p_out=0.05, d=4, seed=42)
        assert generate_sbm(p) == generate_sbm(p)

    def test_homophilic_edge_fraction(self):
        ratios = []
        for seed in range(10):
            g = generate_sbm(SbmParams(n=2000, c=5, p_in=0.01, p_out=0.001, d=2, seed=seed))
            src = np.repeat(np.arange(g.n), degrees(g))
            same = g.labels[src] == g.labels[g.indices]
            ratios.append(same.mean())
        assert np.mean(ratios) > 0.6

    def test_uniform_mixing_matches_class_count(self):
        fracs = []
        for seed in range(20):
            g = generate_sbm(SbmParams(n=2000, c=4, p_in=0.005, p_out=0.005, d=2, seed=seed))
            src = np.repeat(np.arange(g.n), degrees(g))
            fracs.append((g.labels[src] == g.labels[g.indices]).mean())
        assert abs(np.mean(fracs) - 0.25) < 0.05

    def test_split_fractions(self):
        g = generate_sbm(SbmParams(n=1000, c=2, p_in=0.02, p_out=0.01, d=2, seed=1))
        counts = [int((g.split == int(t)).sum()) for t in Split]
        assert counts == [400, 300, 300]

    def test_heterophilic_flag(self):
        assert SbmParams(n=10, c=2, p_in=0.1, p_out=0.5, d=2).is_heterophilic

    def test_degenerate_split_rejected(self):
        from graphrank.errors import DegenerateGraphError

        with pytest.raises(DegenerateGraphError):
            generate_sbm(SbmParams(n=100, c=2, p_in=0.2, p_out=0.05, d=2, seed=0),
                         split_fractions=(0.999, 0.0005, 0.0005))


class TestGraphIO:
    def test_round_trip(self, tmp_path, small_sbm):
        save_graph(small_sbm, tmp_path)
        assert load_graph_dir(tmp_path) == small_sbm

    def test_saved_files_exact_set(self, tmp_path, small_sbm):
        save_graph(small_sbm, tmp_path)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["edges.tsv", "features.csv", "labels.tsv", "meta.json", "splits.tsv"]

    def test_malformed_edge_line(self, tmp_path, small_sbm):
        save_graph(small_sbm, tmp_path)
        edge_path = tmp_path / "edges.tsv"
        lines = edge_path.read_text().splitlines()
        lines[3] = "0,"
        edge_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(GraphParseError) as err:
            load_graph_dir(tmp_path)
        assert err.value.line == 4

    def test_short_feature_file(self, tmp_path, small_sbm):
        save_graph(small_sbm, tmp_path)
        feat = tmp_path / "features.csv"
        lines = feat.read_text().splitlines()
        feat.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(InconsistentDimensionsError):
            load_graph_dir(tmp_path)

    def test_meta_mismatch(self, tmp_path, small_sbm):
        save_graph(small_sbm, tmp_path)
        (tmp_path / "meta.json").write_text('{"n": 999, "d": 8, "c": 2}')
        with pytest.raises(InconsistentDimensionsError):
            load_graph_dir(tmp_path)
