"""scikit-learn style front-end over graph construction, the anchor atlas and
filtered search, so the pieces compose with ``get_params``/``clone``/pipelines."""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_predicate, check_metadata, check_positive_int, check_query, check_vectors
from .atlas import AnchorAtlas, AnchorParams, build_atlas
from .dataset import Dataset, FilterPredicate, make_dataset
from .graph import ProximityGraph, build_alpha_knn
from .search import QueryResult, SearchParams, filtered_search


def _dataset(X, metadata, field_names=None) -> Dataset:
    X = check_vectors(X)
    return make_dataset(X, check_metadata(metadata, X.shape[0]), field_names)


def adjacency_matrix(g: ProximityGraph) -> sparse.csr_matrix:
    data = np.ones(g.n_edges, dtype=np.int8)
    return sparse.csr_matrix((data, g.indices, g.indptr), shape=(g.n, g.n))


class AlphaKNNGraph(BaseEstimator):
    """Symmetrized kNN graph with selective alpha-RNG degree capping.

    ``fit_transform`` returns the adjacency as a sparse CSR matrix, mirroring
    :func:`sklearn.neighbors.kneighbors_graph`.
    """

    def __init__(self, n_neighbors: int = 64, max_degree: int = 128, alpha: float = 1.2):
        self.n_neighbors = n_neighbors
        self.max_degree = max_degree
        self.alpha = alpha

    def fit(self, X, y=None):
        check_positive_int(self.n_neighbors, "n_neighbors")
        check_positive_int(self.max_degree, "max_degree", self.n_neighbors)
        if not self.alpha > 1:
            raise ValueError("alpha must be > 1")
        ds = X if isinstance(X, Dataset) else _dataset(X, None)
        self.graph_ = build_alpha_knn(ds, self.n_neighbors, self.max_degree, self.alpha)
        self.n_features_in_ = ds.d
        return self

    def fit_transform(self, X, y=None) -> sparse.csr_matrix:
        return self.fit(X).adjacency_matrix()

    def adjacency_matrix(self) -> sparse.csr_matrix:
        check_is_fitted(self, "graph_")
        return adjacency_matrix(self.graph_)


class AtlasKMeans(ClusterMixin, BaseEstimator):
    """k-means anchor atlas; ``metadata`` passed to ``fit`` fills the member lists
    and inverted cluster index."""

    def __init__(self, n_clusters: int | None = None, max_iter: int = 50, random_state: int = 0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None, metadata: Sequence[Mapping[str, str]] | None = None):
        ds = X if isinstance(X, Dataset) else _dataset(X, metadata)
        if self.n_clusters is not None:
            check_positive_int(self.n_clusters, "n_clusters")
        self.atlas_ = build_atlas(ds, self.n_clusters, self.random_state, self.max_iter)
        self.cluster_centers_ = self.atlas_.centroids
        self.labels_ = self.atlas_.assignment
        self.n_features_in_ = ds.d
        return self

    def predict(self, X) -> np.ndarray:
        """Cluster with the most similar (unit-norm) centroid."""
        check_is_fitted(self, "atlas_")
        X = check_vectors(X, d=self.n_features_in_)
        X = X / np.linalg.norm(X, axis=1, keepdims=True)
        return np.argmax(X @ self.cluster_centers_.T, axis=1)


class FilteredANNIndex(BaseEstimator):
    """Filtered approximate nearest-neighbor index.

    Parameters mirror the graph build (``n_neighbors``, ``max_degree``,
    ``alpha``), the atlas (``n_clusters``, ``random_state``) and the search
    (``walk``, ``beam_width``, ``frontier_width``, ``stall_budget``,
    ``max_hops``, ``jump_budget``, ``seed_budget``, ``cluster_budget``).
    ``beam_width=None`` picks 2 for the guided walk and 40 for the beam walk.
    """

    def __init__(
        self,
        n_neighbors: int = 64,
        max_degree: int = 128,
        alpha: float = 1.2,
        n_clusters: int | None = None,
        walk: str = "guided",
        beam_width: int | None = None,
        frontier_width: int = 5,
        stall_budget: float = 100,
        max_hops: float = 100,
        jump_budget: int = 3,
        seed_budget: int = 10,
        cluster_budget: int = 5,
        k: int = 25,
        random_state: int = 0,
    ):
        self.n_neighbors = n_neighbors
        self.max_degree = max_degree
        self.alpha = alpha
        self.n_clusters = n_clusters
        self.walk = walk
        self.beam_width = beam_width
        self.frontier_width = frontier_width
        self.stall_budget = stall_budget
        self.max_hops = max_hops
        self.jump_budget = jump_budget
        self.seed_budget = seed_budget
        self.cluster_budget = cluster_budget
        self.k = k
        self.random_state = random_state

    def fit(self, X, y=None, metadata=None, field_names: Sequence[str] | None = None):
        ds = X if isinstance(X, Dataset) else _dataset(X, metadata, field_names)
        graph = AlphaKNNGraph(self.n_neighbors, self.max_degree, self.alpha).fit(ds).graph_
        atlas = AtlasKMeans(self.n_clusters, random_state=self.random_state).fit(ds).atlas_
        return self._set_index(ds, graph, atlas)

    def fit_from(self, dataset: Dataset, graph: ProximityGraph, atlas: AnchorAtlas):
        """Attach prebuilt components (e.g. an imported graph) instead of building them."""
        if graph.n != dataset.n or len(atlas.assignment) != dataset.n:
            raise ValueError("graph, atlas and dataset sizes disagree")
        return self._set_index(dataset, graph, atlas)

    def _set_index(self, ds, graph, atlas):
        self.search_params()  # validate early
        self.dataset_, self.graph_, self.atlas_ = ds, graph, atlas
        self.n_features_in_ = ds.d
        return self

    def search_params(self, k: int | None = None) -> SearchParams:
        B = self.beam_width
        if B is None:
            B = 2 if self.walk == "guided" else 40
        return SearchParams(
            k=self.k if k is None else k,
            J=self.jump_budget,
            walk_kind=self.walk,
            B=B,
            K_f=self.frontier_width,
            T=self.stall_budget,
            max_hops=self.max_hops,
            anchor=AnchorParams(self.seed_budget, self.cluster_budget, self.random_state),
        )

    def query(self, q, predicate: FilterPredicate | Mapping, k: int | None = None, query_id: int = 0) -> QueryResult:
        check_is_fitted(self, "dataset_")
        q = check_query(q, self.n_features_in_)
        return filtered_search(q, as_predicate(predicate), self.search_params(k),
                               self.dataset_, self.graph_, self.atlas_, query_id=query_id)

    def kneighbors(self, X, predicates, n_neighbors: int | None = None, return_distance: bool = True):
        """Filtered neighbors for each row of ``X``.

        Rows with fewer than ``n_neighbors`` matches are padded with index -1
        and distance ``inf``. Distances are cosine distances.
        """
        check_is_fitted(self, "dataset_")
        X = check_vectors(X, d=self.n_features_in_)
        if isinstance(predicates, (FilterPredicate, Mapping)):
            predicates = [predicates] * X.shape[0]
        if len(predicates) != X.shape[0]:
            raise ValueError("need one predicate per query row")
        k = self.k if n_neighbors is None else check_positive_int(n_neighbors, "n_neighbors")
        ind = np.full((X.shape[0], k), -1, dtype=np.int64)
        dist = np.full((X.shape[0], k), math.inf)
        for i, (x, p) in enumerate(zip(X, predicates)):
            res = self.query(x, p, k, query_id=i)
            for j, (idx, sim) in enumerate(res.top_k):
                ind[i, j] = idx
                dist[i, j] = 1.0 - sim
        return (dist, ind) if return_distance else ind
