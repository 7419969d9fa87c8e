import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fiberann.atlas import (
    AnchorAtlas,
    AnchorParams,
    AtlasFormatError,
    build_atlas,
    candidate_clusters,
    cluster_matches,
    default_n_clusters,
    index_metadata,
    load_atlas,
    lloyd_kmeans,
    rank_clusters,
    save_atlas,
    select_anchors,
)
from fiberann.dataset import FilterPredicate, make_dataset

from .conftest import random_dataset


def test_default_cluster_count():
    assert default_n_clusters(1) == 1
    assert default_n_clusters(20000) == 142
    assert default_n_clusters(10) == 4


def test_k_equals_n_gives_singletons(rng):
    ds = random_dataset(rng, 12, 5)
    atlas = build_atlas(ds, K=12)
    assert sorted(atlas.assignment.tolist()) == list(range(12))
    assert all(len(ids) == 1 for ids in atlas.members.values())


def test_single_cluster_index(rng):
    ds = random_dataset(rng, 30, 3, missing=0.2)
    atlas = build_atlas(ds, K=1)
    pairs = {(f, v) for row in ds.metadata for f, v in row.items()}
    assert set(atlas.cluster_index) == pairs
    assert all(cs == {0} for cs in atlas.cluster_index.values())


def _two_means(X, iters=100):
    """Plain two-mean Lloyd run to convergence from the two farthest points."""
    d = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    i, j = np.unravel_index(np.argmax(d), d.shape)
    c = X[[i, j]].copy()
    for _ in range(iters):
        lab = np.argmin(((X[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
        new = np.stack([X[lab == t].mean(0) for t in range(2)])
        if np.allclose(new, c):
            break
        c = new
    return float(((X - c[lab]) ** 2).sum())


def test_two_blobs_match_independent_two_means(rng):
    a = rng.normal(size=(40, 3)) * 0.05 + [1, 0, 0]
    b = rng.normal(size=(40, 3)) * 0.05 + [0, 1, 0]
    ds = make_dataset(np.vstack([a, b]), [{}] * 80, ["f"])
    _, labels, inertia = lloyd_kmeans(ds.vectors, 2, rng_seed=3)
    assert inertia == pytest.approx(_two_means(ds.vectors), rel=1e-6)
    assert len(set(labels[:40])) == 1 and len(set(labels[40:])) == 1
    assert labels[0] != labels[40]


def test_centroids_are_unit_and_float32(rng):
    atlas = build_atlas(random_dataset(rng, 50, 6), K=5)
    np.testing.assert_allclose(np.linalg.norm(atlas.centroids, axis=1), 1.0, atol=1e-6)
    assert np.array_equal(atlas.centroids, atlas.centroids.astype(np.float32).astype(np.float64))


def test_bad_cluster_count(rng):
    ds = random_dataset(rng, 5, 2)
    with pytest.raises(ValueError):
        build_atlas(ds, K=6)
    with pytest.raises(ValueError):
        build_atlas(ds, K=0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 80), missing=st.floats(0, 0.9), data=st.data())
def test_storage_bound(seed, n, missing, data):
    ds = random_dataset(np.random.default_rng(seed), n, 3, fields=("a", "b", "c"),
                        n_values=(2, 4, 9), missing=missing)
    K = data.draw(st.integers(1, n))
    labels = np.random.default_rng(seed).integers(K, size=n)
    members, index = index_metadata(ds, labels)
    atlas = AnchorAtlas(np.eye(K, 3), labels, members, index)
    m, c = atlas.storage_entries()
    assert m == int(ds.populated_counts().sum())
    assert c <= m


def test_candidate_clusters_examples():
    meta = [{"colour": "Black"}, {"colour": "Red"}, {"colour": "Black"}, {"colour": "Blue"}]
    ds = make_dataset(np.eye(4), meta)
    atlas = AnchorAtlas(np.eye(3, 4), np.array([0, 0, 2, 1]), *index_metadata(ds, np.array([0, 0, 2, 1])))
    assert candidate_clusters(atlas, FilterPredicate({"colour": "Black"})) == {0, 2}
    assert candidate_clusters(atlas, FilterPredicate({"colour": "Green"})) == set()
    assert candidate_clusters(atlas, FilterPredicate({"size": "M"})) == set()


def _toy(rng):
    meta = [{"a": f"a{rng.integers(2)}", "b": f"b{rng.integers(3)}"} for _ in range(20)]
    ds = make_dataset(rng.normal(size=(20, 4)), meta)
    labels = rng.integers(3, size=20)
    return ds, AnchorAtlas(np.eye(3, 4), labels, *index_metadata(ds, labels))


def test_candidate_clusters_match_scan(rng):
    for _ in range(20):
        ds, atlas = _toy(rng)
        p = FilterPredicate({"a": "a1", "b": ["b0", "b2"]})
        scan = set()
        for c in range(3):
            ids = [i for i in range(20) if atlas.assignment[i] == c]
            if all(any(ds.metadata[i].get(f) in allowed for i in ids) for f, allowed in p.clauses.items()):
                scan.add(c)
        assert candidate_clusters(atlas, p) == scan
        for c in range(3):
            want = [i for i in range(20) if atlas.assignment[i] == c
                    and ds.metadata[i]["a"] == "a1" and ds.metadata[i]["b"] in ("b0", "b2")]
            assert cluster_matches(atlas, ds, c, p).tolist() == want


def _grid_atlas(n_clusters, per_cluster, matching):
    """Cluster c sits on axis c; ``matching[c]`` of its points carry tag=yes."""
    d = n_clusters
    X, meta, labels = [], [], []
    for c in range(n_clusters):
        for j in range(per_cluster):
            v = np.full(d, 0.01)
            v[c] = 1.0 + 0.01 * j
            X.append(v)
            meta.append({"tag": "yes" if j < matching[c] else "no"})
            labels.append(c)
    ds = make_dataset(np.array(X), meta)
    labels = np.array(labels)
    return ds, AnchorAtlas(np.eye(d), labels, *index_metadata(ds, labels))


def test_select_anchors_exhausted():
    ds, atlas = _grid_atlas(3, 4, [2, 2, 2])
    seeds, used = select_anchors(atlas, ds, np.eye(3)[0], FilterPredicate({"tag": "yes"}), {0, 1, 2},
                                 AnchorParams())
    assert seeds == [] and used == set()


def test_select_anchors_budget_not_binding():
    ds, atlas = _grid_atlas(3, 5, [0, 3, 0])
    seeds, used = select_anchors(atlas, ds, np.eye(3)[2], FilterPredicate({"tag": "yes"}), set(),
                                 AnchorParams(n_s=10, C_max=5))
    assert sorted(seeds) == [5, 6, 7] and used == {1}


def test_select_anchors_cluster_budget():
    ds, atlas = _grid_atlas(5, 4, [4] * 5)
    q = np.array([0.1, 0.5, 0.2, 0.9, 0.3])
    q /= np.linalg.norm(q)
    seeds, used = select_anchors(atlas, ds, q, FilterPredicate({"tag": "yes"}), set(),
                                 AnchorParams(n_s=100, C_max=2))
    scan = sorted(range(5), key=lambda c: (-float(atlas.centroids[c] @ q), c))[:2]
    assert used == set(scan) == {3, 1}
    assert {int(atlas.assignment[s]) for s in seeds} == set(scan)
    assert rank_clusters(atlas, q, range(5)) == sorted(range(5), key=lambda c: (-q[c], c))


def test_select_anchors_seeds_match_and_are_distinct(rng):
    ds = random_dataset(rng, 200, 6)
    atlas = build_atlas(ds, K=12)
    p = FilterPredicate({"a": "a1"})
    processed: set[int] = set()
    seen: list[int] = []
    while True:
        seeds, used = select_anchors(atlas, ds, ds.vectors[0], p, processed, AnchorParams(n_s=7, C_max=2), rng)
        if not used:
            break
        assert used.isdisjoint(processed)
        assert len(seeds) <= 7 and len(set(seeds)) == len(seeds)
        assert all(ds.metadata[s]["a"] == "a1" for s in seeds)
        processed |= used
        seen += seeds
    assert processed == candidate_clusters(atlas, p)


def test_fatl_roundtrip(tmp_path, rng):
    ds = random_dataset(rng, 40, 5, missing=0.3)
    atlas = build_atlas(ds, K=6)
    save_atlas(atlas, tmp_path / "a.fatl")
    back = load_atlas(tmp_path / "a.fatl", ds)
    assert np.array_equal(back.centroids, atlas.centroids)
    assert np.array_equal(back.assignment, atlas.assignment)
    assert back.cluster_index == atlas.cluster_index
    assert {k: v.tolist() for k, v in back.members.items()} == {k: v.tolist() for k, v in atlas.members.items()}


def test_fatl_errors(tmp_path, rng):
    ds = random_dataset(rng, 10, 3)
    atlas = build_atlas(ds, K=2)
    save_atlas(atlas, tmp_path / "a.fatl")
    data = (tmp_path / "a.fatl").read_bytes()
    (tmp_path / "bad.fatl").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(AtlasFormatError, match="magic"):
        load_atlas(tmp_path / "bad.fatl", ds)
    (tmp_path / "short.fatl").write_bytes(data[:-4])
    with pytest.raises(AtlasFormatError):
        load_atlas(tmp_path / "short.fatl", ds)
    with pytest.raises(AtlasFormatError, match="dimension"):
        load_atlas(tmp_path / "a.fatl", random_dataset(rng, 10, 4))


def test_atlas_build_deterministic(rng):
    ds = random_dataset(rng, 100, 5)
    a, b = build_atlas(ds, K=8, rng_seed=4), build_atlas(ds, K=8, rng_seed=4)
    assert np.array_equal(a.centroids, b.centroids)
    assert np.array_equal(a.assignment, b.assignment)
