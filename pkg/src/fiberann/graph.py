"""alpha-kNN proximity graph: directed kNN, symmetrization, selective alpha-RNG pruning."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset

FGRA_MAGIC = b"FGRA"


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProximityGraph:
    """Immutable adjacency in CSR form; row ``i`` is ``indices[indptr[i]:indptr[i+1]]``."""

    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_lists(cls, adjacency: Sequence[Sequence[int]]) -> "ProximityGraph":
        indptr = np.zeros(len(adjacency) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(a) for a in adjacency])
        if len(adjacency) and indptr[-1]:
            indices = np.concatenate([np.asarray(a, dtype=np.int64) for a in adjacency])
        else:
            indices = np.zeros(0, dtype=np.int64)
        g = cls(indptr, indices)
        g.validate()
        return g

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        return int(self.indptr[-1])

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def adjacency(self) -> list[list[int]]:
        return [self.neighbors(i).tolist() for i in range(self.n)]

    def neighbors(self, x: int) -> np.ndarray:
        if not 0 <= x < self.n:
            raise IndexError(f"node {x} out of range for graph with {self.n} nodes")
        return self.indices[self.indptr[x] : self.indptr[x + 1]]

    def validate(self) -> None:
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.n):
            raise GraphFormatError("neighbor id out of range")
        for i in range(self.n):
            row = self.neighbors(i)
            if np.any(row == i):
                raise GraphFormatError(f"self-loop at node {i}")
            if len(np.unique(row)) != len(row):
                raise GraphFormatError(f"duplicate neighbor at node {i}")

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ProximityGraph)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def stats(self) -> dict[str, float]:
        deg = self.degrees()
        return {
            "edges": self.n_edges,
            "mean_degree": float(deg.mean()) if self.n else 0.0,
            "min_degree": int(deg.min()) if self.n else 0,
            "max_degree": int(deg.max()) if self.n else 0,
            # u32 per stored neighbor plus the per-node degree word, as in FGRA
            "memory_bytes": 4 * (self.n_edges + self.n),
        }


def _sorted_rows(rows: list[np.ndarray]) -> ProximityGraph:
    return ProximityGraph.from_lists([np.sort(r) for r in rows])


def build_knn(ds: Dataset, k: int, block: int = 1024) -> ProximityGraph:
    """Exact directed kNN under cosine similarity; ties go to the lower id."""
    n = ds.n
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than n={n}")
    X = ds.vectors
    rows: list[np.ndarray] = []
    for start in range(0, n, block):
        stop = min(start + block, n)
        sims = X[start:stop] @ X.T
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        # kth-largest threshold; keep every candidate tied at the boundary
        thr = -np.partition(-sims, k - 1, axis=1)[:, k - 1]
        for r in range(stop - start):
            cand = np.flatnonzero(sims[r] >= thr[r])
            order = np.lexsort((cand, -sims[r, cand]))
            rows.append(cand[order[:k]])
    return _sorted_rows(rows)


def symmetrize(g: ProximityGraph) -> ProximityGraph:
    """Add every missing reverse edge."""
    n = g.n
    src = np.repeat(np.arange(n, dtype=np.int64), g.degrees())
    keys = np.unique(np.concatenate([src * n + g.indices, g.indices * n + src]))
    counts = np.bincount(keys // n, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(counts)
    return ProximityGraph(indptr, keys % n)


def prune_node(i: int, cand: np.ndarray, ds: Dataset, R_max: int, alpha: float) -> np.ndarray:
    """alpha-RNG selection for one node; returns the kept ids in selection order."""
    X = ds.vectors
    d_i = 1.0 - X[cand] @ X[i]
    order = np.lexsort((cand, d_i))
    cand, d_i = cand[order], d_i[order]
    pair = 1.0 - X[cand] @ X[cand].T
    kept: list[int] = []
    for p in range(len(cand)):
        if not kept or np.all(d_i[p] < alpha * pair[kept, p]):
            kept.append(p)
            if len(kept) >= R_max:
                break
    return cand[kept]


def alpha_prune(g: ProximityGraph, ds: Dataset, R_max: int, alpha: float) -> ProximityGraph:
    """Cap over-degree nodes with alpha-RNG selection; others are left untouched."""
    if alpha <= 1:
        raise ValueError("alpha must be > 1")
    if R_max < 1:
        raise ValueError("R_max must be >= 1")
    rows = []
    for i in range(g.n):
        nb = g.neighbors(i)
        rows.append(nb if len(nb) <= R_max else prune_node(i, nb, ds, R_max, alpha))
    return _sorted_rows(rows)


def build_alpha_knn(ds: Dataset, k: int = 64, R_max: int = 128, alpha: float = 1.2) -> ProximityGraph:
    if R_max < k:
        raise ValueError("R_max must be >= k")
    return alpha_prune(symmetrize(build_knn(ds, k)), ds, R_max, alpha)


def neighbors(g: ProximityGraph, x: int) -> np.ndarray:
    return g.neighbors(x)


# -- FGRA persistence -------------------------------------------------------


def export_graph(g: ProximityGraph, path: str | Path) -> None:
    deg = g.degrees()
    buf = bytearray(FGRA_MAGIC + struct.pack("<I", g.n))
    for i in range(g.n):
        buf += struct.pack("<I", int(deg[i]))
        buf += np.asarray(g.neighbors(i), dtype="<u4").tobytes()
    Path(path).write_bytes(bytes(buf))


def import_graph(path: str | Path) -> ProximityGraph:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise GraphFormatError(f"{path}: truncated header")
    if data[:4] != FGRA_MAGIC:
        raise GraphFormatError(f"{path}: bad magic {data[:4]!r}")
    (n,) = struct.unpack_from("<I", data, 4)
    words = np.frombuffer(data, dtype="<u4", offset=8, count=(len(data) - 8) // 4)
    if (len(data) - 8) % 4:
        raise GraphFormatError(f"{path}: truncated file")
    rows = []
    pos = 0
    for i in range(n):
        if pos >= len(words):
            raise GraphFormatError(f"{path}: truncated at node {i}")
        deg = int(words[pos])
        row = words[pos + 1 : pos + 1 + deg]
        if len(row) != deg:
            raise GraphFormatError(f"{path}: truncated at node {i}")
        if deg and int(row.max()) >= n:
            raise GraphFormatError(f"{path}: node {i} has neighbor id {int(row.max())} >= n={n}")
        rows.append(row.astype(np.int64))
        pos += 1 + deg
    if pos != len(words):
        raise GraphFormatError(f"{path}: {len(words) - pos} trailing words")
    return ProximityGraph.from_lists(rows)
