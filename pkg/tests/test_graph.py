import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fiberann.dataset import make_dataset
from fiberann.graph import (
    GraphFormatError,
    ProximityGraph,
    alpha_prune,
    build_alpha_knn,
    build_knn,
    export_graph,
    import_graph,
    neighbors,
    prune_node,
    symmetrize,
)

from .conftest import circle_dataset, graph, random_dataset


def knn_oracle(X, k):
    """O(n^2) scan with exact float sums; ties to the lower id."""
    n = len(X)
    rows = []
    for i in range(n):
        sims = [(-math.fsum(a * b for a, b in zip(X[i], X[j])), j) for j in range(n) if j != i]
        rows.append(sorted(j for _, j in sorted(sims)[:k]))
    return rows


def test_collinear_points_link_to_unique_nearest():
    ds = make_dataset(np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]), [{}] * 3, ["f"])
    assert build_knn(ds, 1).adjacency() == [[1], [2], [1]]


def test_k_equals_n_minus_one_is_complete(rng):
    ds = random_dataset(rng, 7, 3)
    assert build_knn(ds, 6).adjacency() == [[j for j in range(7) if j != i] for i in range(7)]


def test_duplicate_vectors_pair_up(rng):
    X = rng.normal(size=(9, 4))
    X[7] = X[4]
    ds = make_dataset(X, [{}] * 9, ["f"])
    adj = build_knn(ds, 1).adjacency()
    assert adj[4] == [7] and adj[7] == [4]


def test_knn_rejects_bad_k(rng):
    ds = random_dataset(rng, 5, 3)
    with pytest.raises(ValueError):
        build_knn(ds, 5)
    with pytest.raises(ValueError):
        build_knn(ds, 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 80), d=st.integers(1, 8), data=st.data())
def test_knn_matches_quadratic_oracle(seed, n, d, data):
    k = data.draw(st.integers(1, n - 1))
    ds = random_dataset(np.random.default_rng(seed), n, d)
    g = build_knn(ds, k, block=7)
    assert (g.degrees() == k).all()
    assert g.adjacency() == knn_oracle(ds.vectors.tolist(), k)


def test_symmetrize_examples():
    assert symmetrize(graph([[1], []])).adjacency() == [[1], [0]]
    sym = graph([[1, 2], [0], [0]])
    assert symmetrize(sym) == sym
    star = graph([[]] + [[0]] * 5)
    assert len(symmetrize(star).neighbors(0)) == 5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sets(st.integers(0, 19), max_size=6), min_size=20, max_size=20))
def test_symmetrize_is_symmetric_superset(rows):
    g = graph([sorted(r - {i}) for i, r in enumerate(rows)])
    s = symmetrize(g)
    edges = {(i, j) for i in range(s.n) for j in s.neighbors(i).tolist()}
    assert all((j, i) in edges for i, j in edges)
    assert all((i, j) in edges for i in range(g.n) for j in g.neighbors(i).tolist())
    assert all(list(s.neighbors(i)) == sorted(s.neighbors(i)) for i in range(s.n))


def _prune_oracle(i, cand, X, R_max, alpha):
    def dist(a, b):
        return 1.0 - float(np.dot(X[a], X[b]))

    order = sorted(cand, key=lambda p: (dist(i, p), p))
    kept = []
    for p in order:
        if all(dist(i, p) < alpha * dist(q, p) for q in kept):
            kept.append(p)
        if len(kept) == R_max:
            break
    return kept


def test_prune_one_dimensional_example():
    dists = [0.1, 0.11, 0.5]
    ds = circle_dataset([0.0] + [math.acos(1 - d) for d in dists])
    expected = _prune_oracle(0, [1, 2, 3], ds.vectors, R_max=2, alpha=1.2)
    got = prune_node(0, np.array([1, 2, 3]), ds, R_max=2, alpha=1.2).tolist()
    assert got == expected
    assert got[0] == 1  # nearest candidate is always kept
    d_12 = 1 - math.cos(math.acos(1 - 0.11) - math.acos(1 - 0.1))
    assert (2 in got) == (0.11 < 1.2 * d_12)


def test_prune_leaves_small_nodes_alone(rng):
    ds = random_dataset(rng, 30, 4)
    g = symmetrize(build_knn(ds, 4))
    R_max = int(np.median(g.degrees()))
    pruned = alpha_prune(g, ds, R_max, 1.2)
    for i in range(g.n):
        before, after = g.neighbors(i).tolist(), pruned.neighbors(i).tolist()
        if len(before) <= R_max:
            assert after == before
        else:
            assert len(after) <= R_max
            assert set(after) <= set(before)
            assert sorted(_prune_oracle(i, before, ds.vectors, R_max, 1.2)) == after


def test_prune_rejects_bad_alpha(rng):
    ds = random_dataset(rng, 10, 3)
    with pytest.raises(ValueError):
        alpha_prune(build_knn(ds, 2), ds, 4, 1.0)
    with pytest.raises(ValueError):
        build_alpha_knn(ds, k=4, R_max=3)


def test_neighbors_contract():
    g = graph([[1], [0], []])
    assert neighbors(g, 2).tolist() == []
    assert neighbors(g, 0).tolist() == neighbors(g, 0).tolist() == [1]
    with pytest.raises(IndexError):
        neighbors(g, 3)


def test_graph_validation():
    with pytest.raises(GraphFormatError, match="self-loop"):
        graph([[0]])
    with pytest.raises(GraphFormatError, match="duplicate"):
        graph([[1, 1], []])
    with pytest.raises(GraphFormatError, match="out of range"):
        graph([[2], []])


def test_fgra_roundtrip(tmp_path):
    g = graph([[1, 4], [0, 2, 3], [1], [1], [0]])
    export_graph(g, tmp_path / "g.fgra")
    back = import_graph(tmp_path / "g.fgra")
    assert back == g
    assert back.adjacency() == g.adjacency()


def test_fgra_keeps_file_row_order(tmp_path):
    p = tmp_path / "g.fgra"
    p.write_bytes(b"FGRA" + np.array([2, 1, 1, 1, 0], "<u4").tobytes())
    assert import_graph(p).adjacency() == [[1], [0]]
    p.write_bytes(b"FGRA" + np.array([3, 2, 2, 1, 0, 0], "<u4").tobytes())
    assert import_graph(p).neighbors(0).tolist() == [2, 1]


def test_empty_graph_roundtrip(tmp_path):
    g = ProximityGraph.from_lists([])
    export_graph(g, tmp_path / "g.fgra")
    back = import_graph(tmp_path / "g.fgra")
    assert back.n == 0 and back.n_edges == 0


@pytest.mark.parametrize(
    "payload, msg",
    [
        (b"FGR", "truncated"),
        (b"XGRA" + bytes(4), "magic"),
        (b"FGRA" + np.array([2, 1, 2, 0], "<u4").tobytes(), ">= n"),
        (b"FGRA" + np.array([2, 1, 1], "<u4").tobytes(), "truncated"),
        (b"FGRA" + np.array([1, 0, 9], "<u4").tobytes(), "trailing"),
    ],
)
def test_fgra_errors(tmp_path, payload, msg):
    (tmp_path / "g.fgra").write_bytes(payload)
    with pytest.raises(GraphFormatError, match=msg):
        import_graph(tmp_path / "g.fgra")


def test_tiny_build_stats_and_determinism(tmp_path, rng):
    ds = random_dataset(rng, 10, 4)
    g = build_alpha_knn(ds, k=3, R_max=6)
    st_ = g.stats()
    assert st_["mean_degree"] >= 3
    assert st_["memory_bytes"] == 4 * (g.n_edges + g.n)
    export_graph(g, tmp_path / "a.fgra")
    export_graph(build_alpha_knn(ds, k=3, R_max=6), tmp_path / "b.fgra")
    assert (tmp_path / "a.fgra").read_bytes() == (tmp_path / "b.fgra").read_bytes()
