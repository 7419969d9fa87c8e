"""Ground truth, recall, the post-filter baseline, a synthetic benchmark generator
and the benchmark runner."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .atlas import AnchorAtlas, AnchorParams
from .dataset import Dataset, FilterPredicate, QueryRecord, make_dataset
from .diagnostics import (
    DEFAULT_EDGES,
    Regime,
    StallRecord,
    TERMINATIONS,
    bin_by_selectivity,
    bin_index,
    bin_labels,
    regime_summary,
    write_rows,
    write_stalls,
)
from .graph import ProximityGraph
from .search import QueryResult, SearchParams, beam_walk, filtered_search, top_k_items

# -- oracle and metric ------------------------------------------------------


@dataclass(frozen=True)
class TruthRow:
    ids: list[int]
    sims: list[float]


def brute_force_topk(q: np.ndarray, predicate: FilterPredicate, k: int, ds: Dataset) -> TruthRow:
    """Exact filtered top-k by dot product, ties to the lower id."""
    ids = np.flatnonzero(ds.mask(predicate))
    if ids.size == 0:
        return TruthRow([], [])
    sims = ds.vectors[ids] @ q
    order = np.lexsort((ids, -sims))[:k]
    return TruthRow(ids[order].tolist(), sims[order].tolist())


def recall_at_k(returned: Sequence[int], truth: TruthRow | Sequence[int], k: int) -> float:
    true_ids = truth.ids if isinstance(truth, TruthRow) else list(truth)
    true_ids = true_ids[:k]
    if not true_ids:
        return 1.0
    return len(set(returned) & set(true_ids)) / min(k, len(true_ids))


def write_truth(path: str | Path, truth: Sequence[TruthRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(truth):
            fh.write(json.dumps({"query_id": i, "ids": row.ids, "sims": row.sims}) + "\n")


def read_truth(path: str | Path) -> list[TruthRow]:
    rows: dict[int, TruthRow] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                rows[int(obj["query_id"])] = TruthRow(list(obj["ids"]), list(obj["sims"]))
    return [rows[i] for i in sorted(rows)]


# -- post-filter baseline ---------------------------------------------------


def entry_point(ds: Dataset) -> int:
    """Point most similar to the dataset mean direction (a medoid-like fixed entry)."""
    mean = ds.vectors.mean(axis=0)
    return int(np.argmax(ds.vectors @ mean))


def post_filter_baseline(
    q: np.ndarray,
    predicate: FilterPredicate,
    k: int,
    multiplier: int,
    ds: Dataset,
    g: ProximityGraph,
    *,
    entry: int | None = None,
    max_hops: float = np.inf,
) -> list[int]:
    """Unfiltered beam walk retrieving ``k * multiplier`` candidates, then filter."""
    if multiplier < 1:
        raise ValueError("multiplier must be >= 1")
    if ds.n == 0:
        return []
    width = k * multiplier
    start = entry_point(ds) if entry is None else entry
    out = beam_walk(q, [start], None, width, ds, g, max_hops)
    pool = top_k_items(out.results, width)
    return [i for i, _ in pool if all(
        ds.metadata[i].get(f) in allowed for f, allowed in predicate.clauses.items()
    )][:k]


# -- synthetic benchmark ----------------------------------------------------


@dataclass(frozen=True)
class FieldSpec:
    name: str
    n_values: int
    zipf_a: float = 1.1
    correlated: bool = False  # value tied to the mixture component
    corr_strength: float = 0.85
    missing_rate: float = 0.0


@dataclass(frozen=True)
class ClusterSpec:
    n_components: int = 64
    spread: float = 0.15  # per-dimension std of the within-component noise
    query_spread: float = 0.15


DEFAULT_FIELDS = (
    FieldSpec("category", 60, zipf_a=1.1, correlated=True),
    FieldSpec("colour", 40, zipf_a=1.0),
    FieldSpec("brand", 400, zipf_a=1.2, missing_rate=0.1),
)


@dataclass
class SyntheticBench:
    dataset: Dataset
    queries: list[QueryRecord]
    truth: list[TruthRow]
    components: np.ndarray


def _zipf_probs(m: int, a: float) -> np.ndarray:
    w = 1.0 / np.arange(1, m + 1) ** a
    return w / w.sum()


def _predicate_pool(ds: Dataset, rng: np.random.Generator, n_pairs: int) -> list[FilterPredicate]:
    pool: list[FilterPredicate] = []
    for f in ds.field_names:
        vals = sorted(ds.vocab[f])
        pool.extend(FilterPredicate({f: v}) for v in vals)
        for _ in range(n_pairs // 4 if len(vals) >= 2 else 0):
            a, b = rng.choice(len(vals), size=2, replace=False)
            pool.append(FilterPredicate({f: [vals[a], vals[b]]}))
    fields = ds.field_names
    for _ in range(n_pairs):
        if len(fields) < 2:
            break
        f1, f2 = (fields[i] for i in rng.choice(len(fields), size=2, replace=False))
        i = int(rng.integers(ds.n))
        row = ds.metadata[i]
        if f1 in row and f2 in row:
            pool.append(FilterPredicate({f1: row[f1], f2: row[f2]}))
    return list(dict.fromkeys(pool))


def gen_synthetic(
    n: int,
    d: int,
    fields: Sequence[FieldSpec] = DEFAULT_FIELDS,
    clusters: ClusterSpec = ClusterSpec(),
    rng_seed: int = 0,
    n_queries: int = 500,
    k: int = 25,
    edges: Sequence[float] = DEFAULT_EDGES,
    bins: Sequence[int] | None = None,
) -> SyntheticBench:
    """Gaussian-mixture unit vectors with Zipf categorical metadata.

    Queries are drawn near mixture means, cycling through the requested
    selectivity bins (all of them by default); a bin with no available
    predicate raises ``ValueError``.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(rng_seed)
    C = clusters.n_components
    means = rng.normal(size=(C, d))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    comp = rng.integers(C, size=n)
    X = means[comp] + rng.normal(scale=clusters.spread, size=(n, d))

    meta: list[dict[str, str]] = [{} for _ in range(n)]
    for spec in fields:
        p = _zipf_probs(spec.n_values, spec.zipf_a)
        vals = rng.choice(spec.n_values, size=n, p=p)
        if spec.correlated:
            home = rng.choice(spec.n_values, size=C, p=p)
            tied = rng.random(n) < spec.corr_strength
            vals = np.where(tied, home[comp], vals)
        present = rng.random(n) >= spec.missing_rate
        for i in np.flatnonzero(present):
            meta[i][spec.name] = f"{spec.name}_{vals[i]}"
    ds = make_dataset(X, meta, [f.name for f in fields])

    pool = _predicate_pool(ds, rng, n_pairs=400)
    by_bin: dict[int, list[FilterPredicate]] = {}
    for p in pool:
        sigma = float(ds.mask(p).mean())
        if sigma > 0:
            by_bin.setdefault(bin_index(sigma, edges), []).append(p)
    wanted = list(range(len(edges) + 1)) if bins is None else list(bins)
    missing = [b for b in wanted if not by_bin.get(b)]
    if missing:
        labels = bin_labels(edges)
        raise ValueError(f"infeasible spec: no predicate in selectivity bins {[labels[b] for b in missing]}")

    queries = []
    for j in range(n_queries):
        cands = by_bin[wanted[j % len(wanted)]]
        pred = cands[int(rng.integers(len(cands)))]
        c = int(rng.integers(C))
        v = means[c] + rng.normal(scale=clusters.query_spread, size=d)
        v = v / np.linalg.norm(v)
        v = v.astype(np.float32).astype(np.float64)
        queries.append(QueryRecord(v, pred, k))
    truth = [brute_force_topk(qr.vector, qr.predicate, qr.k, ds) for qr in queries]
    return SyntheticBench(ds, queries, truth, comp)


# -- benchmark runner -------------------------------------------------------


@dataclass
class QueryOutcome:
    query_id: int
    ids: list[int]
    recall: float
    selectivity: float
    walks: int
    hops: int
    latency: float
    recall_after_walk: list[float] = field(default_factory=list)
    stalls: list[StallRecord] = field(default_factory=list)


@dataclass
class MethodReport:
    method: str
    queries: int
    mean_recall: float
    frac_recall_ge_0_8: float
    frac_recall_eq_1: float
    zero_recall: float
    mean_latency_ms: float
    mean_walks: float
    resolved_in_1_walk: float
    mean_hops: float
    recall_after_walk: list[float | None]
    outcomes: list[QueryOutcome] = field(repr=False, default_factory=list)

    def summary(self, with_latency: bool = True) -> dict:
        row = {
            "method": self.method,
            "queries": self.queries,
            "mean_recall": self.mean_recall,
            "frac_recall_ge_0_8": self.frac_recall_ge_0_8,
            "frac_recall_eq_1": self.frac_recall_eq_1,
            "zero_recall": self.zero_recall,
            "mean_walks": self.mean_walks,
            "resolved_in_1_walk": self.resolved_in_1_walk,
            "mean_hops": self.mean_hops,
        }
        for j, r in enumerate(self.recall_after_walk, 1):
            row[f"recall_after_walk_{j}"] = r
        if with_latency:
            row["mean_latency_ms"] = self.mean_latency_ms
        return row


@dataclass
class BenchReport:
    methods: dict[str, MethodReport]
    stalls: list[StallRecord]
    bins: list[dict]
    regimes: list[dict]

    def to_json(self) -> dict:
        return {
            "methods": {m: r.summary() for m, r in self.methods.items()},
            "bins": self.bins,
            "regimes": self.regimes,
        }


@dataclass(frozen=True)
class Method:
    name: str
    params: SearchParams | None = None  # None selects the post-filter baseline
    multiplier: int = 20


def _run_query(method: Method, qid: int, qr: QueryRecord, truth: TruthRow, ds, g, atlas) -> QueryOutcome:
    sigma = float(ds.mask(qr.predicate).mean()) if ds.n else 0.0
    t0 = time.perf_counter()
    if method.params is None:
        ids = post_filter_baseline(qr.vector, qr.predicate, qr.k, method.multiplier, ds, g)
        elapsed = time.perf_counter() - t0
        rec = recall_at_k(ids, truth, qr.k)
        return QueryOutcome(qid, ids, rec, sigma, 1, 0, elapsed, [rec])
    params = method.params
    if params.k != qr.k:
        params = replace(params, k=qr.k)
    res: QueryResult = filtered_search(qr.vector, qr.predicate, params, ds, g, atlas, query_id=qid)
    elapsed = time.perf_counter() - t0
    return QueryOutcome(
        query_id=qid,
        ids=res.ids,
        recall=recall_at_k(res.ids, truth, qr.k),
        selectivity=sigma,
        walks=res.walks_used,
        hops=res.hops,
        latency=elapsed,
        recall_after_walk=[recall_at_k(ids, truth, qr.k) for ids in res.top_k_after_walk],
        stalls=[w.stall for w in res.per_walk if w.stall is not None],
    )


def _aggregate(name: str, outs: list[QueryOutcome], max_walks: int) -> MethodReport:
    m = len(outs)
    rec = np.array([o.recall for o in outs]) if m else np.zeros(0)
    after: list[float | None] = []
    for j in range(1, max_walks + 1):
        sub = [o.recall_after_walk[j - 1] for o in outs if o.walks >= j and len(o.recall_after_walk) >= j]
        after.append(float(np.mean(sub)) if sub else None)
    mean = (lambda xs: float(np.mean(xs)) if m else 0.0)
    return MethodReport(
        method=name,
        queries=m,
        mean_recall=mean(rec),
        frac_recall_ge_0_8=mean(rec >= 0.8),
        frac_recall_eq_1=mean(rec == 1.0),
        zero_recall=mean(rec == 0.0),
        mean_latency_ms=1000 * mean([o.latency for o in outs]),
        mean_walks=mean([o.walks for o in outs]),
        resolved_in_1_walk=mean([o.walks == 1 for o in outs]),
        mean_hops=mean([o.hops for o in outs]),
        recall_after_walk=after,
        outcomes=outs,
    )


def restart_gain(report: MethodReport) -> tuple[int, float]:
    """Among queries needing >= 2 walks: (count, mean final recall - mean walk-1 recall)."""
    multi = [o for o in report.outcomes if o.walks >= 2]
    if not multi:
        return 0, 0.0
    return len(multi), float(
        np.mean([o.recall_after_walk[-1] for o in multi]) - np.mean([o.recall_after_walk[0] for o in multi])
    )


def run_benchmark(
    ds: Dataset,
    g: ProximityGraph,
    atlas: AnchorAtlas,
    queries: Sequence[QueryRecord],
    truth: Sequence[TruthRow],
    methods: Sequence[Method],
    *,
    diagnostics_method: str | None = None,
    edges: Sequence[float] = DEFAULT_EDGES,
    threads: int = 1,
    progress: Callable[[str], None] | None = None,
) -> BenchReport:
    """Run every method over the batch; stall tables come from ``diagnostics_method``
    (default: the first guided method, else the first searching method)."""
    if len(queries) != len(truth):
        raise ValueError("queries and truth are not aligned")
    reports: dict[str, MethodReport] = {}
    for method in methods:
        if progress:
            progress(f"running {method.name} on {len(queries)} queries")

        def one(i: int, method=method) -> QueryOutcome:
            return _run_query(method, i, queries[i], truth[i], ds, g, atlas)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outs = list(pool.map(one, range(len(queries))))
        else:
            outs = [one(i) for i in range(len(queries))]
        max_walks = method.params.J + 1 if method.params is not None else 1
        reports[method.name] = _aggregate(method.name, outs, max_walks)

    if diagnostics_method is None:
        searching = [m for m in methods if m.params is not None]
        guided = [m for m in searching if m.params.walk_kind == "guided"]
        diagnostics_method = (guided or searching or [None])[0]
        diagnostics_method = diagnostics_method.name if diagnostics_method else None
    stalls: list[StallRecord] = []
    bins: list[dict] = []
    regimes: list[dict] = []
    if diagnostics_method is not None:
        diag = reports[diagnostics_method]
        stalls = [s for o in diag.outcomes for s in o.stalls if s.selectivity > 0]
        bins = _bin_table(diag.outcomes, stalls, edges)
        regimes = regime_summary(stalls, {o.query_id: o.recall for o in diag.outcomes})
    return BenchReport(reports, stalls, bins, regimes)


def _bin_table(outcomes: list[QueryOutcome], stalls: list[StallRecord], edges) -> list[dict]:
    labels = bin_labels(edges)
    by_stall = {row["bin_index"]: row for row in bin_by_selectivity(stalls, edges)}
    rows = []
    for b, label in enumerate(labels):
        qs = [o for o in outcomes if o.selectivity > 0 and bin_index(o.selectivity, edges) == b]
        if not qs and b not in by_stall:
            continue
        row = {
            "bin": label,
            "queries": len(qs),
            "recall": float(np.mean([o.recall for o in qs])) if qs else None,
            "hops": float(np.mean([o.hops for o in qs])) if qs else None,
            "walks": float(np.mean([o.walks for o in qs])) if qs else None,
            "stalls": by_stall.get(b, {}).get("count", 0),
        }
        for key in [r.value for r in Regime] + list(TERMINATIONS):
            row[key] = by_stall.get(b, {}).get(key)
        rows.append(row)
    return rows


BIN_COLUMNS = ("bin", "queries", "recall", "hops", "walks", "stalls",
               *[r.value for r in Regime], *TERMINATIONS)
REGIME_COLUMNS = ("regime", "count", "fiber_density", "boundary_improving", "drift",
                  "drift_undefined", "potential", "recall")


def write_report(report: BenchReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, report.csv, stalls.csv, bins.csv and regimes.csv.

    Every file except report.json is free of timing fields, so reruns with the
    same seed reproduce them byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in
             ("report.json", "report.csv", "stalls.csv", "bins.csv", "regimes.csv")}
    paths["report.json"].write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    rows = [r.summary(with_latency=False) for r in report.methods.values()]
    cols: list[str] = []
    for r in rows:
        cols.extend(c for c in r if c not in cols)
    write_rows(paths["report.csv"], cols, rows)
    write_stalls(paths["stalls.csv"], report.stalls)
    write_rows(paths["bins.csv"], BIN_COLUMNS, report.bins)
    write_rows(paths["regimes.csv"], REGIME_COLUMNS, report.regimes)
    return paths


def default_methods(anchor: AnchorParams = AnchorParams()) -> list[Method]:
    """Guided (B=2), beam (B=40) and post-filter (x20), the standard comparison."""
    return [
        Method("guided", SearchParams(walk_kind="guided", B=2, anchor=anchor)),
        Method("beam", SearchParams(walk_kind="beam", B=40, anchor=anchor)),
        Method("post_filter", None, 20),
    ]
