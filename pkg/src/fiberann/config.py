"""Run configuration: a ``key = value`` text file with command-line overrides."""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from .atlas import AnchorParams
from .search import SearchParams


@dataclass
class Config:
    # paths
    vectors: str = "vectors.fvec"
    metadata: str = "metadata.jsonl"
    queries: str = "queries.jsonl"
    truth: str = "truth.jsonl"
    graph: str = "graph.fgra"
    atlas: str = "atlas.fatl"
    out: str = "out"
    # run
    seed: int = 0
    threads: int = 1
    walk: str = "guided"
    # graph build
    knn_k: int = 64
    R_max: int = 128
    alpha: float = 1.2  # not reported in the source experiments; DiskANN's customary value
    # atlas
    n_clusters: int = 0  # 0 selects ceil(sqrt(n))
    kmeans_iters: int = 50
    # search
    top_k: int = 25
    J: int = 3
    C_max: int = 5
    n_s: int = 10
    beam_B: int = 40
    guided_B: int = 2
    K_f: int = 5
    T: float = 100
    max_hops: float = 100
    post_multiplier: int = 20
    # diagnostic preset
    diag_B: int = 4
    diag_max_hops: float = 500
    # synthetic generator
    gen_n: int = 20000
    gen_d: int = 32
    gen_queries: int = 1000

    def anchor_params(self) -> AnchorParams:
        return AnchorParams(self.n_s, self.C_max, derive_seed(self.seed, "anchor"))

    def search_params(self, walk: str | None = None, *, diagnostic: bool = False) -> SearchParams:
        walk = walk or self.walk
        B = self.guided_B if walk == "guided" else self.beam_B
        hops = self.max_hops
        if diagnostic:
            B, hops = self.diag_B, self.diag_max_hops
        return SearchParams(
            k=self.top_k, J=self.J, walk_kind=walk, B=B, K_f=self.K_f,
            T=self.T, max_hops=hops, anchor=self.anchor_params(),
        )

    def atlas_seed(self) -> int:
        return derive_seed(self.seed, "atlas")

    def gen_seed(self) -> int:
        return derive_seed(self.seed, "synthetic")


def derive_seed(root: int, label: str) -> int:
    """Purpose-labelled child seed of ``root``."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(label.encode())])
    return int(ss.generate_state(1)[0])


def _coerce(field: dataclasses.Field, raw: str) -> Any:
    kind = field.type if isinstance(field.type, str) else field.type.__name__
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)  # accepts "inf"
    return raw


def parse_config_text(text: str) -> dict[str, Any]:
    known = {f.name: f for f in fields(Config)}
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(known[key], value.strip().strip('"'))
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> Config:
    values: dict[str, Any] = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return Config(**values)


def dump_config(cfg: Config) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(Config))
