"""Anchor atlas: k-means clusters with per-cluster metadata members and an
inverted (field, value) -> clusters index, used to seed filtered walks."""

from __future__ import annotations

import math
import struct
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from sklearn.cluster import kmeans_plusplus

from .dataset import Dataset, FilterPredicate, matches

FATL_MAGIC = b"FATL"


class AtlasFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AnchorParams:
    n_s: int = 10
    C_max: int = 5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_s < 1 or self.C_max < 1:
            raise ValueError("n_s and C_max must be >= 1")


@dataclass(eq=False)
class AnchorAtlas:
    centroids: np.ndarray  # (K, d), unit norm, float32-representable
    assignment: np.ndarray  # (n,) cluster id per point
    members: dict[tuple[int, str, str], np.ndarray]
    cluster_index: dict[tuple[str, str], frozenset]

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def storage_entries(self) -> tuple[int, int]:
        """(members entries, cluster_index entries)."""
        return (
            sum(len(v) for v in self.members.values()),
            sum(len(v) for v in self.cluster_index.values()),
        )


def default_n_clusters(n: int) -> int:
    return max(1, math.ceil(math.sqrt(n)))


def lloyd_kmeans(
    X: np.ndarray, K: int, rng_seed: int, max_iters: int = 50, tol: float = 1e-4
) -> tuple[np.ndarray, np.ndarray, float]:
    """Euclidean Lloyd iterations from a k-means++ start.

    Stops after ``max_iters`` or when the relative objective improvement drops
    below ``tol``. Returns ``(centers, labels, inertia)``.
    """
    n = X.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"K={K} must be in [1, n={n}]")
    centers, _ = kmeans_plusplus(X, K, random_state=rng_seed)
    sq = (X * X).sum(axis=1)
    prev = np.inf
    labels = np.zeros(n, dtype=np.int64)
    inertia = np.inf
    for _ in range(max(1, max_iters)):
        d2 = sq[:, None] - 2.0 * X @ centers.T + (centers * centers).sum(axis=1)[None, :]
        labels = np.argmin(d2, axis=1)
        inertia = float(np.maximum(d2[np.arange(n), labels], 0.0).sum())
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            # re-seed empty clusters at the worst-served points
            worst = np.argsort(-d2[np.arange(n), labels], kind="stable")[: empty.size]
            new[empty] = X[worst]
        centers = new
        if prev < np.inf and prev - inertia <= tol * prev:
            break
        prev = inertia
    d2 = sq[:, None] - 2.0 * X @ centers.T + (centers * centers).sum(axis=1)[None, :]
    labels = np.argmin(d2, axis=1)
    inertia = float(np.maximum(d2[np.arange(n), labels], 0.0).sum())
    return centers, labels, inertia


def index_metadata(
    ds: Dataset, assignment: np.ndarray
) -> tuple[dict[tuple[int, str, str], np.ndarray], dict[tuple[str, str], frozenset]]:
    """One pass over metadata building ``members`` and ``cluster_index``."""
    members: dict[tuple[int, str, str], list[int]] = defaultdict(list)
    posting: dict[tuple[str, str], set] = defaultdict(set)
    for i, row in enumerate(ds.metadata):
        c = int(assignment[i])
        for f, v in row.items():
            members[(c, f, v)].append(i)
            posting[(f, v)].add(c)
    return (
        {key: np.asarray(ids, dtype=np.int64) for key, ids in members.items()},
        {key: frozenset(cs) for key, cs in posting.items()},
    )


def _unit(centers: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (centers / norms).astype(np.float32).astype(np.float64)


def build_atlas(ds: Dataset, K: int | None = None, rng_seed: int = 0, max_iters: int = 50) -> AnchorAtlas:
    if K is None:
        K = default_n_clusters(ds.n)
    if K < 1 or K > ds.n:
        raise ValueError(f"K={K} must be in [1, n={ds.n}]")
    centers, labels, _ = lloyd_kmeans(ds.vectors, K, rng_seed, max_iters)
    members, cluster_index = index_metadata(ds, labels)
    return AnchorAtlas(_unit(centers), labels.astype(np.int64), members, cluster_index)


def candidate_clusters(atlas: AnchorAtlas, predicate: FilterPredicate) -> set[int]:
    """Clusters holding at least one point for every clause (may over-approximate
    the clusters holding a full-conjunction match)."""
    out: set[int] | None = None
    for f, allowed in predicate.clauses.items():
        clause: set[int] = set()
        for v in allowed:
            clause |= atlas.cluster_index.get((f, v), frozenset())
        out = clause if out is None else out & clause
        if not out:
            return set()
    return out or set()


def cluster_matches(atlas: AnchorAtlas, ds: Dataset, c: int, predicate: FilterPredicate) -> np.ndarray:
    """Ascending ids in cluster ``c`` satisfying the whole conjunction."""
    acc: np.ndarray | None = None
    for f, allowed in predicate.clauses.items():
        parts = [atlas.members[(c, f, v)] for v in allowed if (c, f, v) in atlas.members]
        clause = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
        acc = clause if acc is None else np.intersect1d(acc, clause, assume_unique=True)
        if acc.size == 0:
            break
    if acc is None:
        return np.zeros(0, dtype=np.int64)
    return np.asarray([i for i in acc.tolist() if matches(ds, predicate, i)], dtype=np.int64)


def rank_clusters(atlas: AnchorAtlas, q: np.ndarray, clusters: Iterable[int]) -> list[int]:
    cs = np.asarray(sorted(clusters), dtype=np.int64)
    if cs.size == 0:
        return []
    scores = atlas.centroids[cs] @ q
    return cs[np.lexsort((cs, -scores))].tolist()


def select_anchors(
    atlas: AnchorAtlas,
    ds: Dataset,
    q: np.ndarray,
    predicate: FilterPredicate,
    processed: set[int],
    params: AnchorParams,
    rng: np.random.Generator | None = None,
) -> tuple[list[int], set[int]]:
    """Draw up to ``n_s`` filter-matching seeds from the best unprocessed clusters.

    Every consulted cluster is reported as used, including ones that held no
    full-conjunction match, so a caller's restart loop always makes progress.
    """
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    ranked = rank_clusters(atlas, q, candidate_clusters(atlas, predicate) - processed)
    seeds: list[int] = []
    used: set[int] = set()
    for c in ranked[: params.C_max]:
        if len(seeds) >= params.n_s:
            break
        pool = cluster_matches(atlas, ds, c, predicate)
        take = min(params.n_s - len(seeds), len(pool))
        if take:
            seeds.extend(rng.choice(pool, size=take, replace=False).tolist())
        used.add(c)
    return seeds, used


# -- FATL persistence -------------------------------------------------------


def save_atlas(atlas: AnchorAtlas, path: str | Path) -> None:
    K, d = atlas.centroids.shape
    with open(path, "wb") as fh:
        fh.write(FATL_MAGIC + struct.pack("<II", K, d))
        fh.write(np.ascontiguousarray(atlas.centroids, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(atlas.assignment, dtype="<u4").tobytes())


def load_atlas(path: str | Path, ds: Dataset) -> AnchorAtlas:
    """Read centroids and assignment; members and the inverted index are rebuilt from ``ds``."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != FATL_MAGIC:
        raise AtlasFormatError(f"{path}: bad magic or truncated header")
    K, d = struct.unpack_from("<II", data, 4)
    off = 12 + 4 * K * d
    if len(data) < off or (len(data) - off) % 4:
        raise AtlasFormatError(f"{path}: truncated file")
    if d != ds.d:
        raise AtlasFormatError(f"{path}: dimension {d} does not match dataset d={ds.d}")
    centroids = np.frombuffer(data, dtype="<f4", count=K * d, offset=12).reshape(K, d).astype(np.float64)
    assignment = np.frombuffer(data, dtype="<u4", offset=off).astype(np.int64)
    if len(assignment) != ds.n:
        raise AtlasFormatError(f"{path}: {len(assignment)} assignments for n={ds.n} points")
    if assignment.size and int(assignment.max()) >= K:
        raise AtlasFormatError(f"{path}: cluster id out of range")
    members, cluster_index = index_metadata(ds, assignment)
    return AnchorAtlas(centroids, assignment, members, cluster_index)
