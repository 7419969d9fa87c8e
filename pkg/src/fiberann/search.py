"""Filtered top-k search: anchor-restart outer loop around a beam walk or a
drift-guided two-phase walk."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .atlas import AnchorAtlas, AnchorParams, select_anchors
from .dataset import Dataset, FilterPredicate
from .diagnostics import StallRecord
from .graph import ProximityGraph
from .signals import node_signals

WALK_KINDS = ("beam", "guided")


@dataclass(frozen=True)
class SearchParams:
    k: int = 25
    J: int = 3
    walk_kind: str = "guided"
    B: int = 2
    K_f: int = 5
    T: float = 100
    max_hops: float = 100
    anchor: AnchorParams = field(default_factory=AnchorParams)

    def __post_init__(self) -> None:
        if self.walk_kind not in WALK_KINDS:
            raise ValueError(f"walk_kind must be one of {WALK_KINDS}")
        if self.k < 1 or self.J < 0 or self.B < 1 or self.K_f < 1 or self.T < 1 or self.max_hops < 1:
            raise ValueError("invalid search parameters: need k, B, K_f, T, max_hops >= 1 and J >= 0")


@dataclass
class WalkOutcome:
    results: dict[int, float]
    expansions: int
    termination: str
    stall: StallRecord | None
    phase_hops: tuple[int, int]
    seeds: list[int] = field(default_factory=list)


@dataclass
class QueryResult:
    top_k: list[tuple[int, float]]
    walks_used: int
    per_walk: list[WalkOutcome]
    # ids of the running top-k after each walk, for restart-recovery statistics
    top_k_after_walk: list[list[int]] = field(default_factory=list)

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.top_k]

    @property
    def hops(self) -> int:
        return sum(w.expansions for w in self.per_walk)


def top_k_items(results: dict[int, float], k: int) -> list[tuple[int, float]]:
    """Best ``k`` by similarity, ties to the lower id."""
    return heapq.nsmallest(k, results.items(), key=lambda it: (-it[1], it[0]))


class _WalkState:
    """Potential cache, seen/expanded bookkeeping and collected results for one walk."""

    def __init__(self, q, ds: Dataset, fiber: np.ndarray, k: int):
        self.q = q
        self.ds = ds
        self.fiber = fiber
        self.k = k
        self.V: dict[int, float] = {}
        self.expanded: set[int] = set()
        self.results: dict[int, float] = {}
        self._topk: list[float] = []  # min-heap of the k best similarities

    def score(self, ids: list[int]) -> None:
        if not ids:
            return
        vals = 1.0 - self.ds.vectors[ids] @ self.q
        self.V.update(zip(ids, vals.tolist()))

    def unseen(self, nb: np.ndarray) -> list[int]:
        V = self.V
        return [y for y in nb.tolist() if y not in V]

    def collect(self, y: int) -> None:
        sim = 1.0 - self.V[y]
        self.results[y] = sim
        if len(self._topk) < self.k:
            heapq.heappush(self._topk, sim)
        elif sim > self._topk[0]:
            heapq.heapreplace(self._topk, sim)

    def kth_potential(self) -> float | None:
        """Potential of the k-th best result, or None while fewer than k are held."""
        if len(self._topk) < self.k:
            return None
        return 1.0 - self._topk[0]

    def init_seeds(self, seeds) -> list[int]:
        seeds = list(dict.fromkeys(int(s) for s in seeds))
        self.score([s for s in seeds if s not in self.V])
        for s in seeds:
            if self.fiber[s]:
                self.collect(s)
        return seeds


def _stall(state: _WalkState, g, predicate, x, termination, sigma, query_id) -> StallRecord | None:
    if x is None:
        return None
    sig = node_signals(state.q, x, g, state.ds, predicate, cache=state.V, fiber=state.fiber)
    return StallRecord(
        node=x,
        potential=sig.potential,
        fiber_density=sig.fiber_density,
        drift=sig.drift,
        boundary_improving_count=sig.boundary_improving_count,
        termination=termination,
        selectivity=sigma,
        query_id=query_id,
    )


def beam_walk(
    q: np.ndarray,
    seeds,
    predicate: FilterPredicate | None,
    B: int,
    ds: Dataset,
    g: ProximityGraph,
    max_hops: float = math.inf,
    *,
    fiber: np.ndarray | None = None,
    query_id: int = -1,
) -> WalkOutcome:
    """Standard beam search on the full graph, passively collecting matching nodes.

    ``predicate=None`` collects every visited node (unfiltered search).
    """
    if fiber is None:
        fiber = ds.mask(predicate)
    st = _WalkState(q, ds, fiber, k=1)
    seeds = st.init_seeds(seeds)
    if not seeds:
        raise ValueError("beam_walk needs at least one seed")
    V = st.V
    cands = sorted((V[s], s) for s in seeds)[:B]
    hops = 0
    last = None
    while True:
        x = next((y for _, y in cands if y not in st.expanded), None)
        if x is None:
            termination = "converged"
            break
        if hops >= max_hops:
            termination = "max_hops"
            break
        st.expanded.add(x)
        hops += 1
        last = x
        new = st.unseen(g.neighbors(x))
        st.score(new)
        for y in new:
            if fiber[y]:
                st.collect(y)
        cands.extend((V[y], y) for y in new)
        cands.sort()
        del cands[B:]
    sigma = float(fiber.mean()) if len(fiber) else 0.0
    stall = _stall(st, g, predicate, last, termination, sigma, query_id) if predicate is not None else None
    return WalkOutcome(st.results, hops, termination, stall, (0, hops), seeds)


def guided_walk(
    q: np.ndarray,
    seeds,
    predicate: FilterPredicate,
    B: int,
    K_f: int,
    T: float,
    max_hops: float,
    ds: Dataset,
    g: ProximityGraph,
    k: int = 25,
    *,
    fiber: np.ndarray | None = None,
    query_id: int = -1,
) -> WalkOutcome:
    """Two-phase walk: filtered descent while drift is negative (phase 1),
    full-graph beam otherwise (phase 2), switching back when the fiber produces.
    """
    if fiber is None:
        fiber = ds.mask(predicate)
    st = _WalkState(q, ds, fiber, k)
    seeds = st.init_seeds(seeds)
    if not seeds:
        raise ValueError("guided_walk needs at least one seed")
    V, expanded = st.V, st.expanded

    frontier = [(V[s], s) for s in seeds]
    heapq.heapify(frontier)
    beam: list[tuple[float, int]] = []  # unexpanded only, ascending potential
    phase = 1
    stall = 0
    hops = [0, 0]
    last = None
    from_exhaustion = False  # phase 2 entered because the frontier ran dry
    termination = "max_hops"

    while hops[0] + hops[1] < max_hops:
        if phase == 1:
            x = None
            while frontier:
                _, y = heapq.heappop(frontier)
                if y not in expanded:
                    x = y
                    break
            if x is None:
                phase = 2
                beam = sorted((v, y) for y, v in V.items() if y not in expanded)[:B]
                from_exhaustion = True
                continue
        else:
            if not beam:
                termination = "frontier_exhausted_then_converged" if from_exhaustion else "converged"
                break
            vx, x = beam.pop(0)
            vk = st.kth_potential()
            if vk is not None and vx > vk:
                termination = "early_stop"
                break
            if stall >= T:
                termination = "stall_budget"
                break

        expanded.add(x)
        hops[phase - 1] += 1
        last = x
        if phase == 2:
            from_exhaustion = False
        nb = g.neighbors(x)
        new = st.unseen(nb)
        st.score(new)
        new_filtered = 0
        for y in new:
            if fiber[y]:
                st.collect(y)
                new_filtered += 1

        vx = V[x]
        fib_nb = [y for y in nb.tolist() if fiber[y]]
        drift = sum(V[y] for y in fib_nb) / len(fib_nb) - vx if fib_nb else None
        stall = 0 if new_filtered > 0 else stall + 1
        descending = drift is not None and drift < 0

        if phase == 1:
            if descending:
                cands = sorted((V[y], y) for y in fib_nb if V[y] < vx and y not in expanded)
                for c in cands[:K_f]:
                    heapq.heappush(frontier, c)
            else:
                phase = 2
                pool = {y for y in nb.tolist() if y not in expanded}
                pool.update(y for _, y in frontier if y not in expanded)
                beam = sorted((V[y], y) for y in pool)[:B]
                frontier = []
        else:
            beam.extend((V[y], y) for y in new)
            beam.sort()
            del beam[B:]
            if descending and new_filtered > 0:
                rebuilt = [(v, y) for v, y in beam if fiber[y]]
                if rebuilt:
                    frontier = rebuilt
                    heapq.heapify(frontier)
                    phase = 1
                    beam = []

    sigma = float(fiber.mean()) if len(fiber) else 0.0
    rec = _stall(st, g, predicate, last, termination, sigma, query_id)
    return WalkOutcome(st.results, hops[0] + hops[1], termination, rec, (hops[0], hops[1]), seeds)


def filtered_search(
    q: np.ndarray,
    predicate: FilterPredicate,
    params: SearchParams,
    ds: Dataset,
    g: ProximityGraph,
    atlas: AnchorAtlas,
    *,
    query_id: int = 0,
) -> QueryResult:
    """Approximate filtered top-k with up to ``J + 1`` anchor-seeded walks."""
    ds.check_predicate(predicate)
    fiber = ds.mask(predicate)
    rng = np.random.default_rng([params.anchor.rng_seed, max(query_id, 0)])
    results: dict[int, float] = {}
    processed: set[int] = set()
    per_walk: list[WalkOutcome] = []
    after: list[list[int]] = []
    for _ in range(params.J + 1):
        seeds: list[int] = []
        while not seeds:
            seeds, used = select_anchors(atlas, ds, q, predicate, processed, params.anchor, rng)
            processed |= used
            if not used:
                break
        if not seeds:
            break
        if params.walk_kind == "guided":
            out = guided_walk(
                q, seeds, predicate, params.B, params.K_f, params.T, params.max_hops, ds, g,
                params.k, fiber=fiber, query_id=query_id,
            )
        else:
            out = beam_walk(q, seeds, predicate, params.B, ds, g, params.max_hops,
                            fiber=fiber, query_id=query_id)
        for y, sim in out.results.items():
            if sim > results.get(y, -math.inf):
                results[y] = sim
        per_walk.append(out)
        after.append([i for i, _ in top_k_items(results, params.k)])
        if len(results) >= params.k:
            break
    return QueryResult(top_k_items(results, params.k), len(per_walk), per_walk, after)
