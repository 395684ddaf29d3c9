import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghnet.sparse import CsrMatrix, build_csr, degrees, k_hop_propagate, spmm, sym_normalize


def dense_sym_normalize(a: np.ndarray, with_self_loop: bool) -> np.ndarray:
    """Independent dense reference for the normalized filter."""
    a = a.copy()
    if with_self_loop:
        a = a + np.eye(len(a))
    d = a.sum(axis=1)
    inv = np.zeros(len(a))
    inv[d > 0] = d[d > 0] ** -0.5
    return inv[:, None] * a * inv[None, :]


def random_adjacency(rng: np.random.Generator, n: int, p: float) -> CsrMatrix:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return build_csr(np.stack([iu[keep], ju[keep]], axis=1), n)


edge_lists = st.lists(
    st.tuples(st.integers(0, 7), st.integers(0, 7)), min_size=0, max_size=25
)


class TestBuildCsr:
    def test_single_edge_symmetrized(self):
        a = build_csr([(0, 1)], 2)
        assert np.array_equal(a.to_dense(), [[0.0, 1.0], [1.0, 0.0]])

    def test_dedup_and_self_loop_dropped(self):
        a = build_csr([(0, 1), (1, 0), (2, 2)], 3)
        expected = np.zeros((3, 3))
        expected[0, 1] = expected[1, 0] = 1.0
        assert np.array_equal(a.to_dense(), expected)
        assert a.nnz == 2  # node 2 isolated

    def test_out_of_range_names_edge(self):
        with pytest.raises(ValueError, match=r"\(1, 9\)"):
            build_csr([(0, 1), (1, 9)], 4)
        with pytest.raises(ValueError, match="out of range"):
            build_csr([(-1, 0)], 4)

    def test_empty_edge_list(self):
        a = build_csr([], 3)
        assert a.nnz == 0
        assert a.row_offsets.tolist() == [0, 0, 0, 0]

    @given(edges=edge_lists, data=st.data())
    def test_idempotent_under_shuffle(self, edges, data):
        reference = build_csr(edges, 8)
        shuffled = data.draw(st.permutations(edges))
        other = build_csr(shuffled, 8)
        assert np.array_equal(reference.row_offsets, other.row_offsets)
        assert np.array_equal(reference.col_indices, other.col_indices)
        assert np.array_equal(reference.values, other.values)


class TestCsrInvariants:
    def test_rejects_unsorted_columns(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            CsrMatrix(1, 3, np.array([0, 2]), np.array([2, 1]), np.ones(2))

    def test_rejects_bad_offsets(self):
        with pytest.raises(ValueError):
            CsrMatrix(2, 2, np.array([0, 1]), np.array([0]), np.ones(1))

    def test_immutable(self):
        a = build_csr([(0, 1)], 2)
        with pytest.raises(ValueError):
            a.values[0] = 5.0


class TestSymNormalize:
    def test_single_edge_with_self_loop_all_half(self):
        a = build_csr([(0, 1)], 2)
        out = sym_normalize(a, with_self_loop=True).to_dense()
        assert np.allclose(out, 0.5, atol=1e-15)
        assert np.allclose(out, dense_sym_normalize(a.to_dense(), True), atol=1e-15)

    def test_single_edge_without_self_loop(self):
        a = build_csr([(0, 1)], 2)
        out = sym_normalize(a, with_self_loop=False).to_dense()
        assert np.allclose(out, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)
        assert np.allclose(out, dense_sym_normalize(a.to_dense(), False), atol=1e-15)

    def test_isolated_node_row_stays_empty(self):
        a = build_csr([(0, 1)], 3)
        s = sym_normalize(a, with_self_loop=False)
        assert s.row_offsets[2] == s.row_offsets[3]
        assert degrees(a)[2] == 0.0

    def test_isolated_node_with_self_loop(self):
        a = build_csr([(0, 1)], 3)
        s = sym_normalize(a, with_self_loop=True)
        assert s.to_dense()[2, 2] == 1.0

    def test_non_square_rejected(self):
        m = CsrMatrix(2, 3, np.array([0, 1, 2]), np.array([0, 1]), np.ones(2))
        with pytest.raises(ValueError, match="square"):
            sym_normalize(m, True)

    @given(edges=edge_lists, with_self_loop=st.booleans())
    def test_matches_dense_reference(self, edges, with_self_loop):
        a = build_csr(edges, 8)
        out = sym_normalize(a, with_self_loop).to_dense()
        assert np.allclose(out, dense_sym_normalize(a.to_dense(), with_self_loop), atol=1e-12)

    @given(edges=edge_lists, with_self_loop=st.booleans())
    def test_output_symmetric(self, edges, with_self_loop):
        out = sym_normalize(build_csr(edges, 8), with_self_loop).to_dense()
        assert np.abs(out - out.T).max() <= 1e-12

    def test_regular_graph_rows_sum_to_one(self):
        # cycle (2-regular) and complete graph (d-regular)
        n = 9
        cycle = build_csr([(i, (i + 1) % n) for i in range(n)], n)
        complete = build_csr([(i, j) for i in range(n) for j in range(i + 1, n)], n)
        for graph in (cycle, complete):
            s = sym_normalize(graph, with_self_loop=False)
            assert np.abs(s.to_dense().sum(axis=1) - 1.0).max() <= 1e-12

    def test_spectral_radius_bounded(self):
        # 200 power-iteration steps on random graphs up to 200 nodes
        rng = np.random.default_rng(3)
        for n, p in [(20, 0.2), (80, 0.05), (200, 0.02), (150, 0.3)]:
            s = sym_normalize(random_adjacency(rng, n, p), with_self_loop=True)
            dense = s.to_dense()
            v = rng.standard_normal((n, 1))
            v /= np.linalg.norm(v)
            estimate = 0.0
            for _ in range(200):
                w = dense @ v
                estimate = np.linalg.norm(w)
                if estimate == 0.0:
                    break
                v = w / estimate
            assert estimate <= 1.0 + 1e-9


class TestSpmm:
    def test_identity(self):
        n = 4
        eye = CsrMatrix(n, n, np.arange(n + 1), np.arange(n), np.ones(n))
        h = np.random.default_rng(0).standard_normal((n, 3))
        assert np.array_equal(spmm(eye, h), h)

    def test_edge_filter_swaps_rows(self):
        s = sym_normalize(build_csr([(0, 1)], 2), with_self_loop=False)
        h = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(spmm(s, h), h[::-1])

    def test_zero_row_gives_zero_output(self):
        s = sym_normalize(build_csr([(0, 1)], 3), with_self_loop=False)
        out = spmm(s, np.ones((3, 2)))
        assert np.array_equal(out[2], np.zeros(2))

    def test_dimension_mismatch(self):
        s = build_csr([(0, 1)], 2)
        with pytest.raises(ValueError, match="mismatch"):
            spmm(s, np.ones((3, 2)))


class TestKHopPropagate:
    def test_k1_equals_spmm(self):
        rng = np.random.default_rng(1)
        s = sym_normalize(random_adjacency(rng, 10, 0.3), False)
        h = rng.standard_normal((10, 4))
        assert np.array_equal(k_hop_propagate(s, h, 1), spmm(s, h))

    def test_single_edge_two_hops_is_identity(self):
        # S^2 = I for the one-edge graph
        s = sym_normalize(build_csr([(0, 1)], 2), with_self_loop=False)
        h = np.array([[1.0, -2.0], [0.5, 3.0]])
        assert np.allclose(k_hop_propagate(s, h, 2), h, atol=1e-15)

    def test_triangle_preserves_constant_column(self):
        s = sym_normalize(build_csr([(0, 1), (1, 2), (0, 2)], 3), False)
        ones = np.ones((3, 1))
        for k in range(1, 6):
            assert np.allclose(k_hop_propagate(s, ones, k), ones, atol=1e-12)

    def test_k_zero_rejected(self):
        s = sym_normalize(build_csr([(0, 1)], 2), False)
        with pytest.raises(ValueError, match="k must be >= 1"):
            k_hop_propagate(s, np.ones((2, 1)), 0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), k=st.integers(1, 5))
    def test_matches_dense_matrix_power(self, seed, k):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 51))
        s = sym_normalize(random_adjacency(rng, n, float(rng.uniform(0.05, 0.5))), False)
        h = rng.uniform(-2.0, 2.0, size=(n, int(rng.integers(1, 5))))
        reference = np.linalg.matrix_power(s.to_dense(), k) @ h
        assert np.abs(k_hop_propagate(s, h, k) - reference).max() < 1e-9


class TestTranspose:
    def test_matches_dense_transpose(self):
        rng = np.random.default_rng(5)
        a = random_adjacency(rng, 12, 0.3)
        s = sym_normalize(a, True)
        assert np.array_equal(s.transpose().to_dense(), s.to_dense().T)
