"""Filtered approximate nearest-neighbor search over proximity graphs.

Walks start from an anchor atlas of metadata-aware k-means clusters, switch
between filtered descent and full-graph beam search on the drift signal, and
every walk's stall point is classified into a failure regime.
"""

from .atlas import AnchorAtlas, AnchorParams, build_atlas, candidate_clusters, select_anchors
from .dataset import Dataset, FilterPredicate, QueryRecord, fiber_ids, load_dataset, make_dataset, matches, selectivity
from .diagnostics import Regime, StallRecord, bin_by_selectivity, classify_stall, regime_summary
from .estimators import AlphaKNNGraph, AtlasKMeans, FilteredANNIndex
from .evaluation import brute_force_topk, gen_synthetic, post_filter_baseline, recall_at_k, run_benchmark
from .graph import ProximityGraph, alpha_prune, build_alpha_knn, build_knn, export_graph, import_graph, symmetrize
from .search import QueryResult, SearchParams, WalkOutcome, beam_walk, filtered_search, guided_walk
from .signals import NodeSignals, boundary_improving_set, drift, fiber_density, node_signals, potential

__version__ = "0.1.0"
