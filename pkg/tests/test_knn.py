import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphamr.errors import ContractError
from graphamr.knn import (
    brute_force_knn_graph,
    build_ball_tree,
    build_knn_graph,
    export_edges,
    knn_all,
    query_knn,
)


def brute_query(X, q, k, exclude=None):
    d = np.sqrt(((X - q) ** 2).sum(axis=1))
    if exclude is not None:
        d[exclude] = np.inf
    order = np.lexsort((np.arange(len(X)), d))[:k]
    return [(int(i), float(d[i])) for i in order]


# --- tree -------------------------------------------------------------------

def test_small_set_is_single_leaf():
    X = np.random.default_rng(0).normal(size=(10, 3))
    t = build_ball_tree(X, leaf_size=32)
    assert t.n_nodes == 1 and t.is_leaf(0)
    c = X.mean(axis=0)
    assert t.radius[0] == pytest.approx(np.sqrt(((X - c) ** 2).sum(axis=1)).max())


def test_duplicates_give_zero_radius():
    X = np.ones((100, 2))
    t = build_ball_tree(X, leaf_size=8)
    assert (t.radius == 0).all()
    assert len(query_knn(t, X[0], 3, exclude=0)) == 3


def test_radius_invariant_exhaustive():
    X = np.random.default_rng(1).normal(size=(200, 5))
    t = build_ball_tree(X, leaf_size=8)
    for node in range(t.n_nodes):
        d = np.sqrt(((X[t.members(node)] - t.centroid[node]) ** 2).sum(axis=1))
        assert (d <= t.radius[node] + 1e-12).all()


def test_leaves_partition_points():
    X = np.random.default_rng(2).normal(size=(333, 4))
    t = build_ball_tree(X, leaf_size=16)
    pts = np.concatenate([t.members(l) for l in t.leaves()])
    assert sorted(pts.tolist()) == list(range(333))
    assert max(len(t.members(l)) for l in t.leaves()) <= 16


def test_lower_median_goes_left():
    X = np.arange(5.0).reshape(-1, 1)
    t = build_ball_tree(X, leaf_size=1)
    assert sorted(t.members(t.left[0]).tolist()) == [0, 1, 2]


def test_empty_tree_rejected():
    with pytest.raises(ContractError):
        build_ball_tree(np.zeros((0, 3)))


def test_deterministic_build():
    X = np.random.default_rng(3).normal(size=(300, 6))
    a, b = build_ball_tree(X), build_ball_tree(X.copy())
    np.testing.assert_array_equal(a.order, b.order)
    np.testing.assert_array_equal(a.radius, b.radius)


# --- queries --------------------------------------------------------------------

def test_collinear_query():
    X = np.array([[0.0], [1.0], [3.0]])
    t = build_ball_tree(X)
    assert query_knn(t, X[0], 1, exclude=0) == [(1, 1.0)]


def test_query_at_stored_point_excluded():
    X = np.random.default_rng(4).normal(size=(50, 3))
    t = build_ball_tree(X, leaf_size=4)
    got = query_knn(t, X[17], 1, exclude=17)
    assert got == brute_query(X, X[17], 1, exclude=17)


def test_k_too_large():
    t = build_ball_tree(np.zeros((3, 2)))
    with pytest.raises(ContractError):
        query_knn(t, np.zeros(2), 3, exclude=0)
    with pytest.raises(ContractError):
        query_knn(t, np.zeros(2), 4)


def test_query_matches_brute_force_d32():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(1000, 32))
    t = build_ball_tree(X)
    for q in rng.normal(size=(50, 32)):
        got = query_knn(t, q, 10)
        want = brute_query(X, q, 10)
        assert [i for i, _ in got] == [i for i, _ in want]
        np.testing.assert_allclose([d for _, d in got], [d for _, d in want], rtol=1e-12)


def test_ties_go_to_lower_index():
    X = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1], [5, 5]])
    t = build_ball_tree(X, leaf_size=1)
    assert [i for i, _ in query_knn(t, np.zeros(2), 3)] == [0, 1, 2]


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 60), st.integers(1, 5), st.integers(1, 8), st.integers(0, 10_000))
def test_query_exact_on_lattice(n, d, leaf, seed):
    # integer lattice points produce many exact distance ties
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 3, size=(n, d)).astype(float)
    t = build_ball_tree(X, leaf_size=leaf)
    k = int(rng.integers(1, n))
    i = int(rng.integers(n))
    assert query_knn(t, X[i], k, exclude=i) == brute_query(X, X[i], k, exclude=i)


def test_pruning_on_clustered_data():
    rng = np.random.default_rng(6)
    centers = rng.normal(scale=20, size=(20, 8))
    X = centers[rng.integers(0, 20, 10_000)] + rng.normal(size=(10_000, 8))
    t = build_ball_tree(X)
    counts = []
    for i in rng.choice(10_000, 20, replace=False):
        t.distance_evals = 0
        query_knn(t, X[i], 10, exclude=int(i))
        counts.append(t.distance_evals)
    assert max(counts) < 10_000
    t.distance_evals = 0
    knn_all(t, 10)
    assert t.distance_evals < 10_000 * 10_000


# --- graph ------------------------------------------------------------------------

def test_collinear_graph():
    g = build_knn_graph(np.array([[0.0], [1.0], [3.0]]), k=1)
    assert g.edge_set() == {(0, 1), (1, 0), (2, 1)}


def test_graph_matches_brute_force_500():
    X = np.random.default_rng(7).normal(size=(500, 16))
    assert build_knn_graph(X, 10).edge_set() == brute_force_knn_graph(X, 10).edge_set()


@settings(max_examples=15, deadline=None)
@given(st.integers(5, 80), st.integers(1, 4), st.integers(0, 10_000))
def test_graph_matches_brute_force_with_ties(n, k, seed):
    X = np.random.default_rng(seed).integers(0, 4, size=(n, 2)).astype(float)
    a, b = build_knn_graph(X, k, leaf_size=3), brute_force_knn_graph(X, k)
    np.testing.assert_array_equal(a.dst, b.dst)
    np.testing.assert_allclose(a.distance, b.distance, atol=1e-12)


def test_degree_and_no_self_loops():
    g = build_knn_graph(np.random.default_rng(8).normal(size=(120, 4)), k=7)
    assert (g.out_degree() == 7).all()
    assert not (g.src == g.dst).any()


def test_n_must_exceed_k():
    with pytest.raises(ContractError):
        build_knn_graph(np.zeros((5, 2)), k=5)


def test_neighbourhoods_symmetric_with_self_loops():
    g = build_knn_graph(np.random.default_rng(9).normal(size=(40, 3)), k=3)
    A = g.dense_support()
    assert (A == A.T).all() and A.diagonal().all()
    for s, d in g.edge_set():
        assert A[s, d] and A[d, s]


def test_export_edges(tmp_path):
    g = build_knn_graph(np.array([[0.0], [1.0], [3.0]]), k=1)
    export_edges(tmp_path / "e.csv", g)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "src,dst,distance"
    assert lines[1:] == ["0,1,1.0", "1,0,1.0", "2,1,2.0"]
