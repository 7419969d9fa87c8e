"""Command-line entry point: ``fiberann <command> [--config FILE] [--flags]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

from ._validation import check_query
from .atlas import build_atlas, load_atlas, save_atlas
from .config import Config, dump_config, load_config
from .dataset import FilterPredicate, QueryRecord, load_dataset, read_queries, save_dataset, write_queries
from .evaluation import (
    Method,
    gen_synthetic,
    read_truth,
    run_benchmark,
    write_report,
    write_truth,
)
from .graph import build_alpha_knn, export_graph, import_graph
from .search import filtered_search


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _dataset(cfg: Config):
    return load_dataset(cfg.vectors, cfg.metadata)


def _n_clusters(cfg: Config) -> int | None:
    return cfg.n_clusters or None


def _index(cfg: Config, ds):
    g = import_graph(cfg.graph) if Path(cfg.graph).exists() else None
    if g is None:
        _log(f"graph file {cfg.graph} not found; building in memory")
        g = build_alpha_knn(ds, cfg.knn_k, cfg.R_max, cfg.alpha)
    if g.n != ds.n:
        raise ValueError(f"graph has {g.n} nodes, dataset has {ds.n} points")
    if Path(cfg.atlas).exists():
        atlas = load_atlas(cfg.atlas, ds)
    else:
        _log(f"atlas file {cfg.atlas} not found; building in memory")
        atlas = build_atlas(ds, _n_clusters(cfg), cfg.atlas_seed(), cfg.kmeans_iters)
    return g, atlas


def cmd_build_graph(cfg: Config) -> dict:
    ds = _dataset(cfg)
    g = build_alpha_knn(ds, cfg.knn_k, cfg.R_max, cfg.alpha)
    export_graph(g, cfg.graph)
    return {"graph": cfg.graph, **g.stats()}


def cmd_build_atlas(cfg: Config) -> dict:
    ds = _dataset(cfg)
    atlas = build_atlas(ds, _n_clusters(cfg), cfg.atlas_seed(), cfg.kmeans_iters)
    save_atlas(atlas, cfg.atlas)
    members, index = atlas.storage_entries()
    bound = int(ds.populated_counts().sum())
    return {
        "atlas": cfg.atlas,
        "K": atlas.K,
        "members_entries": members,
        "cluster_index_entries": index,
        "populated_fields": bound,
        "storage_bound_ok": members == bound and index <= bound,
    }


def _query_result_json(res, qid: int) -> dict:
    return {
        "query_id": qid,
        "ids": res.ids,
        "similarities": [s for _, s in res.top_k],
        "walks_used": res.walks_used,
        "terminations": [w.termination for w in res.per_walk],
    }


def cmd_query(cfg: Config, query_json: str | None = None) -> list[dict]:
    ds = _dataset(cfg)
    g, atlas = _index(cfg, ds)
    if query_json is not None:
        obj = json.loads(query_json)
        vec = check_query(obj["vector"], ds.d)
        queries = [QueryRecord(vec, FilterPredicate(obj["filter"]), int(obj.get("k", cfg.top_k)))]
    else:
        queries = read_queries(cfg.queries)
    out = []
    for i, qr in enumerate(queries):
        check_query(qr.vector, ds.d)
        params = replace(cfg.search_params(), k=qr.k)
        res = filtered_search(qr.vector, qr.predicate, params, ds, g, atlas, query_id=i)
        out.append(_query_result_json(res, i))
    return out


def _bench(cfg: Config, methods: list[Method]) -> dict:
    ds = _dataset(cfg)
    g, atlas = _index(cfg, ds)
    queries = read_queries(cfg.queries)
    truth = read_truth(cfg.truth)
    report = run_benchmark(ds, g, atlas, queries, truth, methods, threads=cfg.threads, progress=_log)
    paths = write_report(report, cfg.out)
    return {"outputs": {k: str(v) for k, v in paths.items()},
            "methods": {m: r.summary() for m, r in report.methods.items()}}


def cmd_bench(cfg: Config) -> dict:
    return _bench(cfg, [
        Method("guided", cfg.search_params("guided")),
        Method("beam", cfg.search_params("beam")),
        Method("post_filter", None, cfg.post_multiplier),
    ])


def cmd_diagnose(cfg: Config) -> dict:
    return _bench(cfg, [Method("guided", cfg.search_params("guided", diagnostic=True))])


def cmd_gen(cfg: Config) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    bench = gen_synthetic(cfg.gen_n, cfg.gen_d, rng_seed=cfg.gen_seed(),
                          n_queries=cfg.gen_queries, k=cfg.top_k)
    paths = {name: out / name for name in ("vectors.fvec", "metadata.jsonl", "queries.jsonl", "truth.jsonl")}
    save_dataset(bench.dataset, paths["vectors.fvec"], paths["metadata.jsonl"])
    write_queries(paths["queries.jsonl"], bench.queries)
    write_truth(paths["truth.jsonl"], bench.truth)
    return {"n": bench.dataset.n, "d": bench.dataset.d, "queries": len(bench.queries),
            **{k: str(v) for k, v in paths.items()}}


COMMANDS = {
    "build-graph": cmd_build_graph,
    "build-atlas": cmd_build_atlas,
    "query": cmd_query,
    "bench": cmd_bench,
    "diagnose": cmd_diagnose,
    "gen-synthetic": cmd_gen,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fiberann", description="Filtered ANN search with anchor restarts")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value config file; flags override it")
    parser.add_argument("--query-json", help="single query object for the query command")
    parser.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    for f in fields(Config):
        flag = "--" + f.name.replace("_", "-")
        kind = {"int": int, "float": float}.get(f.type, str)
        extra = {"choices": ["beam", "guided"]} if f.name == "walk" else {}
        parser.add_argument(flag, dest=f.name, type=kind, default=None, help=f"default: {f.default}", **extra)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {f.name: getattr(args, f.name) for f in fields(Config)}
    try:
        cfg = load_config(args.config, overrides)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        if args.command == "query":
            result = cmd_query(cfg, args.query_json)
            for row in result:
                print(json.dumps(row))
        else:
            print(json.dumps(COMMANDS[args.command](cfg), sort_keys=True))
    except Exception as exc:  # one machine-parsable line per failure
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
