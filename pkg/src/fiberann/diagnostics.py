"""Stall-point records, regime classification and the per-bin / per-regime tables."""

from __future__ import annotations

import bisect
import csv
import enum
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

DEFAULT_EDGES = (0.001, 0.01, 0.05, 0.20)
TERMINATIONS = (
    "early_stop",
    "stall_budget",
    "max_hops",
    "converged",
    "frontier_exhausted_then_converged",
)
STALL_COLUMNS = (
    "query_id",
    "node",
    "potential",
    "fiber_density",
    "drift",
    "boundary_improving",
    "termination",
    "selectivity",
    "regime",
)


class Regime(str, enum.Enum):
    TOPOLOGICAL_CUT = "topological_cut"
    GEOMETRIC_FOLD = "geometric_fold"
    GENUINE_BASIN = "genuine_basin"


@dataclass(frozen=True)
class StallRecord:
    node: int
    potential: float
    fiber_density: float
    drift: float | None
    boundary_improving_count: int
    termination: str
    selectivity: float
    query_id: int = -1

    def __post_init__(self) -> None:
        if not 0.0 <= self.fiber_density <= 1.0:
            raise ValueError("fiber_density must lie in [0, 1]")
        if self.boundary_improving_count < 0:
            raise ValueError("boundary_improving_count must be >= 0")


def classify_stall(rec: StallRecord) -> Regime:
    """Cut if the local fiber density is under half the global selectivity,
    else fold if some non-matching neighbor improves the potential, else basin."""
    if rec.selectivity <= 0:
        raise ValueError("cannot classify a stall for an empty fiber (selectivity 0)")
    if rec.fiber_density < rec.selectivity / 2:
        return Regime.TOPOLOGICAL_CUT
    if rec.boundary_improving_count > 0:
        return Regime.GEOMETRIC_FOLD
    return Regime.GENUINE_BASIN


def bin_labels(edges: Sequence[float] = DEFAULT_EDGES) -> list[str]:
    pct = [f"{100 * e:g}%" for e in edges]
    labels = [f"<{pct[0]}"]
    labels += [f"{a}-{b}" for a, b in zip(pct, pct[1:])]
    labels.append(f">{pct[-1]}")
    return labels


def bin_index(sigma: float, edges: Sequence[float] = DEFAULT_EDGES) -> int:
    return bisect.bisect_right(edges, sigma)


def _check_edges(edges: Sequence[float]) -> None:
    if not edges or any(not 0 < e < 1 for e in edges):
        raise ValueError("bin edges must lie strictly inside (0, 1)")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing")


def bin_by_selectivity(
    records: Iterable[StallRecord], edges: Sequence[float] = DEFAULT_EDGES
) -> list[dict]:
    """One row per non-empty selectivity bin with regime and termination fractions."""
    _check_edges(edges)
    labels = bin_labels(edges)
    groups: dict[int, list[StallRecord]] = defaultdict(list)
    for r in records:
        groups[bin_index(r.selectivity, edges)].append(r)
    rows = []
    for b in sorted(groups):
        recs = groups[b]
        regimes = Counter(classify_stall(r) for r in recs)
        terms = Counter(r.termination for r in recs)
        row = {"bin": labels[b], "bin_index": b, "count": len(recs)}
        for reg in Regime:
            row[reg.value] = regimes[reg] / len(recs)
        for t in TERMINATIONS:
            row[t] = terms[t] / len(recs)
        rows.append(row)
    return rows


def regime_summary(
    records: Iterable[StallRecord], recall_by_query: Mapping[int, float] | None = None
) -> list[dict]:
    """Per-regime counts and means; undefined drifts are left out of the drift mean."""
    groups: dict[Regime, list[StallRecord]] = defaultdict(list)
    for r in records:
        groups[classify_stall(r)].append(r)
    rows = []
    for reg in Regime:
        recs = groups.get(reg)
        if not recs:
            continue
        drifts = [r.drift for r in recs if r.drift is not None]
        row = {
            "regime": reg.value,
            "count": len(recs),
            "fiber_density": sum(r.fiber_density for r in recs) / len(recs),
            "boundary_improving": sum(r.boundary_improving_count for r in recs) / len(recs),
            "drift": sum(drifts) / len(drifts) if drifts else None,
            "drift_undefined": len(recs) - len(drifts),
            "potential": sum(r.potential for r in recs) / len(recs),
        }
        if recall_by_query is not None:
            row["recall"] = sum(recall_by_query[r.query_id] for r in recs) / len(recs)
        rows.append(row)
    return rows


# -- CSV emission -----------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def write_rows(path: str | Path, columns: Sequence[str], rows: Iterable[Mapping]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def stall_rows(records: Iterable[StallRecord]) -> list[dict]:
    return [
        {
            "query_id": r.query_id,
            "node": r.node,
            "potential": r.potential,
            "fiber_density": r.fiber_density,
            "drift": r.drift,
            "boundary_improving": r.boundary_improving_count,
            "termination": r.termination,
            "selectivity": r.selectivity,
            "regime": classify_stall(r).value,
        }
        for r in records
    ]


def write_stalls(path: str | Path, records: Iterable[StallRecord]) -> None:
    write_rows(path, STALL_COLUMNS, stall_rows(records))


def read_stalls(path: str | Path) -> list[StallRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            StallRecord(
                node=int(row["node"]),
                potential=float(row["potential"]),
                fiber_density=float(row["fiber_density"]),
                drift=float(row["drift"]) if row["drift"] else None,
                boundary_improving_count=int(row["boundary_improving"]),
                termination=row["termination"],
                selectivity=float(row["selectivity"]),
                query_id=int(row["query_id"]),
            )
            for row in csv.DictReader(fh)
        ]
