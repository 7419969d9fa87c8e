"""Local fiber signals at a node: potential, fiber density, drift, boundary-improving set.

Every function accepts an optional ``cache`` (node id -> potential) that a walk
owns; lookups read through it and fill it on a miss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import MutableMapping

import numpy as np

from .dataset import Dataset, FilterPredicate, matches
from .graph import ProximityGraph

PotentialCache = MutableMapping[int, float]


@dataclass(frozen=True)
class NodeSignals:
    node: int
    potential: float
    fiber_density: float
    drift: float | None
    filtered_neighbor_count: int
    boundary_improving_count: int


def potential(q: np.ndarray, x: int, ds: Dataset, cache: PotentialCache | None = None) -> float:
    if cache is not None and x in cache:
        return cache[x]
    v = 1.0 - float(ds.vectors[x] @ q)
    if cache is not None:
        cache[x] = v
    return v


def _potentials(q, ids, ds, cache) -> np.ndarray:
    return np.asarray([potential(q, int(y), ds, cache) for y in ids], dtype=np.float64)


def _fiber_mask(ids: np.ndarray, ds: Dataset, predicate: FilterPredicate) -> np.ndarray:
    return np.fromiter((matches(ds, predicate, int(y)) for y in ids), dtype=bool, count=len(ids))


def fiber_density(x: int, g: ProximityGraph, ds: Dataset, predicate: FilterPredicate) -> float:
    nb = g.neighbors(x)
    if len(nb) == 0:
        return 0.0
    return int(_fiber_mask(nb, ds, predicate).sum()) / len(nb)


def drift(
    q: np.ndarray,
    x: int,
    g: ProximityGraph,
    ds: Dataset,
    predicate: FilterPredicate,
    cache: PotentialCache | None = None,
) -> float | None:
    """Mean potential change over filtered neighbors; ``None`` when there are none."""
    nb = g.neighbors(x)
    fib = nb[_fiber_mask(nb, ds, predicate)]
    if len(fib) == 0:
        return None
    vx = potential(q, x, ds, cache)
    return float(np.mean(_potentials(q, fib, ds, cache) - vx))


def boundary_improving_set(
    q: np.ndarray,
    x: int,
    g: ProximityGraph,
    ds: Dataset,
    predicate: FilterPredicate,
    cache: PotentialCache | None = None,
) -> list[int]:
    nb = g.neighbors(x)
    outside = nb[~_fiber_mask(nb, ds, predicate)]
    vx = potential(q, x, ds, cache)
    return outside[_potentials(q, outside, ds, cache) < vx].tolist()


def node_signals(
    q: np.ndarray,
    x: int,
    g: ProximityGraph,
    ds: Dataset,
    predicate: FilterPredicate,
    cache: PotentialCache | None = None,
    fiber: np.ndarray | None = None,
) -> NodeSignals:
    """All signals at ``x`` in one neighbor pass.

    ``fiber`` is an optional precomputed boolean mask over all points, used in
    place of per-neighbor :func:`matches` calls.
    """
    nb = g.neighbors(x)
    vx = potential(q, x, ds, cache)
    if len(nb) == 0:
        return NodeSignals(x, vx, 0.0, None, 0, 0)
    inside = fiber[nb] if fiber is not None else _fiber_mask(nb, ds, predicate)
    vy = _potentials(q, nb, ds, cache)
    n_in = int(inside.sum())
    return NodeSignals(
        node=x,
        potential=vx,
        fiber_density=n_in / len(nb),
        drift=float(np.mean(vy[inside] - vx)) if n_in else None,
        filtered_neighbor_count=n_in,
        boundary_improving_count=int(np.sum(~inside & (vy < vx))),
    )
