"""Vector + metadata storage, filter predicates and file ingestion."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

FVEC_MAGIC = b"FANN"
_HEADER = struct.Struct("<4sII")

# float32 rows already this close to unit norm are stored verbatim, which makes
# normalization idempotent bit-for-bit.
_UNIT_TOL = 4 * float(np.finfo(np.float32).eps)


class DatasetFormatError(ValueError):
    """Raised for malformed vector, metadata or query files."""


@dataclass(frozen=True, init=False)
class FilterPredicate:
    """Conjunction of ``field in allowed-values`` clauses."""

    clauses: Mapping[str, frozenset]

    def __init__(self, clauses: Mapping[str, Iterable[str] | str]):
        if not clauses:
            raise ValueError("a predicate needs at least one clause")
        norm = {}
        for f, allowed in clauses.items():
            values = frozenset([allowed] if isinstance(allowed, str) else allowed)
            if not values:
                raise ValueError(f"clause on field {f!r} has an empty allowed set")
            if not all(isinstance(v, str) for v in values):
                raise ValueError(f"clause on field {f!r} has non-string values")
            norm[str(f)] = values
        object.__setattr__(self, "clauses", MappingProxyType(dict(sorted(norm.items()))))

    def __len__(self) -> int:
        return len(self.clauses)

    def __hash__(self) -> int:
        return hash(tuple(self.clauses.items()))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FilterPredicate) and dict(self.clauses) == dict(other.clauses)

    def __repr__(self) -> str:
        body = ", ".join(f"{f}∈{sorted(v)}" for f, v in self.clauses.items())
        return f"FilterPredicate({body})"

    def __reduce__(self):
        return (FilterPredicate, (self.to_json(),))

    def to_json(self) -> dict[str, list[str]]:
        return {f: sorted(v) for f, v in self.clauses.items()}


@dataclass
class Dataset:
    """Unit-norm vectors plus one sparse metadata row per point.

    ``vectors`` is float64 holding float32-representable values; ``codes`` is
    the integer-encoded metadata (-1 where a field is unpopulated) used by the
    vectorized :meth:`mask`.
    """

    vectors: np.ndarray
    metadata: list[dict[str, str]]
    field_names: list[str]
    vocab: dict[str, dict[str, int]] = field(init=False, repr=False)
    codes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        if len(self.metadata) != self.vectors.shape[0]:
            raise DatasetFormatError(
                f"row-count mismatch: {self.vectors.shape[0]} vectors, "
                f"{len(self.metadata)} metadata rows"
            )
        declared = set(self.field_names)
        for i, row in enumerate(self.metadata):
            for f, v in row.items():
                if f not in declared:
                    raise DatasetFormatError(f"point {i}: undeclared field {f!r}")
                if not isinstance(v, str):
                    raise DatasetFormatError(f"point {i}: field {f!r} value must be a string")
        self.vocab = {f: {} for f in self.field_names}
        self.codes = np.full((self.n, len(self.field_names)), -1, dtype=np.int32)
        for j, f in enumerate(self.field_names):
            voc = self.vocab[f]
            col = self.codes[:, j]
            for i, row in enumerate(self.metadata):
                v = row.get(f)
                if v is not None:
                    col[i] = voc.setdefault(v, len(voc))

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def populated_counts(self) -> np.ndarray:
        """Per-point number of populated fields (F_i)."""
        return (self.codes >= 0).sum(axis=1)

    def check_predicate(self, predicate: FilterPredicate) -> None:
        unknown = set(predicate.clauses) - set(self.field_names)
        if unknown:
            raise ValueError(f"predicate references undeclared fields {sorted(unknown)}")

    def mask(self, predicate: FilterPredicate | None) -> np.ndarray:
        """Boolean fiber indicator over all points; ``None`` matches everything."""
        if predicate is None:
            return np.ones(self.n, dtype=bool)
        out = np.ones(self.n, dtype=bool)
        for f, allowed in predicate.clauses.items():
            if f not in self.vocab:
                return np.zeros(self.n, dtype=bool)
            wanted = [self.vocab[f][v] for v in allowed if v in self.vocab[f]]
            col = self.codes[:, self.field_names.index(f)]
            out &= np.isin(col, wanted)
        return out


def normalize_rows(raw: np.ndarray) -> np.ndarray:
    """L2-normalize rows, rounding to float32 precision; zero rows are rejected."""
    raw = np.asarray(raw, dtype=np.float32).astype(np.float64)
    norms = np.linalg.norm(raw, axis=1)
    bad = np.flatnonzero(~(norms > 0))
    if bad.size:
        raise DatasetFormatError(f"zero-norm vector at row {int(bad[0])}")
    keep = np.abs(norms - 1.0) <= _UNIT_TOL
    scaled = (raw / norms[:, None]).astype(np.float32).astype(np.float64)
    return np.where(keep[:, None], raw, scaled)


def make_dataset(
    vectors: np.ndarray,
    metadata: Sequence[Mapping[str, str]],
    field_names: Sequence[str] | None = None,
) -> Dataset:
    """Build a :class:`Dataset` from in-memory arrays, normalizing the vectors."""
    rows = [dict(r) for r in metadata]
    if field_names is None:
        field_names = _fields_in_order(rows)
    vectors = np.asarray(vectors)
    if vectors.ndim != 2:
        raise ValueError("vectors must be a 2-D array")
    if len(rows) != vectors.shape[0]:
        raise DatasetFormatError(
            f"row-count mismatch: {vectors.shape[0]} vectors, {len(rows)} metadata rows"
        )
    return Dataset(normalize_rows(vectors), rows, list(field_names))


def _fields_in_order(rows: Iterable[Mapping[str, str]]) -> list[str]:
    seen: dict[str, None] = {}
    for r in rows:
        for f in r:
            seen.setdefault(f, None)
    return list(seen)


# -- file formats -----------------------------------------------------------


def write_fvec(path: str | Path, vectors: np.ndarray) -> None:
    arr = np.ascontiguousarray(vectors, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("vectors must be a 2-D array")
    n, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FVEC_MAGIC, n, d))
        fh.write(arr.tobytes())


def read_fvec(path: str | Path) -> np.ndarray:
    """Read an FVEC file into an ``(n, d)`` float32 array (no normalization)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, n, d = _HEADER.unpack_from(data)
    if magic != FVEC_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * n * d
    if len(data) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(n, d).copy()


def read_metadata(path: str | Path) -> list[dict[str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            if not isinstance(obj, dict):
                raise DatasetFormatError(f"{path}:{lineno}: expected a JSON object")
            for f, v in obj.items():
                if not isinstance(v, str):
                    raise DatasetFormatError(
                        f"{path}:{lineno}: field {f!r} must be a string, got {type(v).__name__}"
                    )
            rows.append(obj)
    return rows


def write_metadata(path: str | Path, metadata: Iterable[Mapping[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in metadata:
            fh.write(json.dumps(dict(row), sort_keys=True) + "\n")


def load_dataset(
    vectors_path: str | Path,
    metadata_path: str | Path,
    field_names: Sequence[str] | None = None,
) -> Dataset:
    """Load an FVEC vector file and its JSON Lines metadata."""
    return make_dataset(read_fvec(vectors_path), read_metadata(metadata_path), field_names)


def save_dataset(ds: Dataset, vectors_path: str | Path, metadata_path: str | Path) -> None:
    write_fvec(vectors_path, ds.vectors)
    write_metadata(metadata_path, ds.metadata)


@dataclass(frozen=True)
class QueryRecord:
    vector: np.ndarray
    predicate: FilterPredicate
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


def read_queries(path: str | Path) -> list[QueryRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                vec = normalize_rows(np.asarray([obj["vector"]], dtype=np.float64))[0]
                out.append(QueryRecord(vec, FilterPredicate(obj["filter"]), int(obj["k"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_queries(path: str | Path, queries: Iterable[QueryRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qr in queries:
            rec = {
                "vector": [float(x) for x in np.asarray(qr.vector, dtype=np.float32)],
                "filter": qr.predicate.to_json(),
                "k": int(qr.k),
            }
            fh.write(json.dumps(rec) + "\n")


# -- predicate evaluation ---------------------------------------------------


def matches(ds: Dataset, predicate: FilterPredicate, id: int) -> bool:
    row = ds.metadata[id]
    for f, allowed in predicate.clauses.items():
        v = row.get(f)
        if v is None or v not in allowed:
            return False
    return True


def fiber_ids(ds: Dataset, predicate: FilterPredicate) -> list[int]:
    return np.flatnonzero(ds.mask(predicate)).tolist()


def selectivity(ds: Dataset, predicate: FilterPredicate) -> float:
    if ds.n == 0:
        return 0.0
    return int(ds.mask(predicate).sum()) / ds.n
