from __future__ import annotations

import re
from collections import OrderedDict

import numpy as np
import pytest

from fiberann.dataset import Dataset, make_dataset
from fiberann.graph import ProximityGraph


def random_dataset(rng: np.random.Generator, n: int, d: int, *, fields=("a", "b"), n_values=(3, 5),
                   missing: float = 0.0) -> Dataset:
    X = rng.normal(size=(n, d))
    meta = []
    for _ in range(n):
        row = {}
        for f, m in zip(fields, n_values):
            if rng.random() >= missing:
                row[f] = f"{f}{rng.integers(m)}"
        meta.append(row)
    return make_dataset(X, meta, list(fields))


def circle_dataset(angles, metadata=None) -> Dataset:
    """Points on the unit circle; cosine distance is then a function of angle gaps."""
    angles = np.asarray(angles, dtype=np.float64)
    X = np.column_stack([np.cos(angles), np.sin(angles)])
    meta = metadata if metadata is not None else [{} for _ in angles]
    fields = sorted({f for row in meta for f in row}) or ["tag"]
    return make_dataset(X, meta, fields)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def graph(adj) -> ProximityGraph:
    return ProximityGraph.from_lists([list(a) for a in adj])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------

_CRITERIA: "OrderedDict[str, list[tuple[str, str, str]]]" = OrderedDict()
_NAME = re.compile(r"test_criterion_(\d+)_(\w+?)(?:\[(.*)\])?$")


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    m = _NAME.search(report.nodeid.split("::")[-1])
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        key = f"{int(m.group(1)):>2} {m.group(2).replace('_', ' ')}"
        detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
        _CRITERIA.setdefault(key, []).append((m.group(3) or "", report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key, parts in _CRITERIA.items():
        ok = all(outcome == "passed" for _, outcome, _ in parts)
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}")
        for part, outcome, detail in parts:
            label = f"[{part}] {outcome}: " if part else ""
            if label or detail:
                terminalreporter.write_line(f"    {label}{detail}")
