"""Command-line front end: generate workloads, run simulations, sweep grids.

Exit codes: 0 success, 1 simulation error (bad config/trace semantics),
2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from multiprocessing import Pool

import numpy as np

from .config import RunConfig, format_config, parse_config_file
from .cost_model import GIB_PER_S, MIB, MalformedProfile
from .policies import POLICY_NAMES, UnknownPolicy
from .simulator import ConfigError, TraceError, run
from .workload import (
    PRESETS,
    TraceSpec,
    generate_corpus,
    generate_trace,
    read_corpus,
    read_trace,
    write_corpus,
    write_trace,
)

_GIB = 1024.0**3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragsim",
        description="Simulate prefix-aware KV caching for retrieval-augmented serving",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="synthesize a corpus and request trace")
    gen.add_argument("--preset", default="mmlu", choices=sorted(PRESETS))
    gen.add_argument("--num-docs", type=int, default=None)
    gen.add_argument("--doc-mean-tokens", type=float, default=None)
    gen.add_argument("--zipf-s", type=float, default=None)
    gen.add_argument("--rate", type=float, default=0.8, help="arrival rate (req/s)")
    gen.add_argument("--duration", type=float, default=3600.0, help="trace length (s)")
    gen.add_argument("--k", type=int, default=2)
    gen.add_argument("--prompt-tokens", type=int, default=32)
    gen.add_argument("--query-pool", type=int, default=None,
                     help="distinct questions to shuffle (default: fresh draw per request)")
    gen.add_argument("--query-zipf", type=float, default=0.0)
    gen.add_argument("--drift-interval", type=float, default=600.0, help="seconds")
    gen.add_argument("--drift-fraction", type=float, default=0.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-trace", default="trace.jsonl")
    gen.add_argument("--out-corpus", default="corpus.csv")

    runp = sub.add_parser("run", help="simulate one trace")
    runp.add_argument("--trace", required=True)
    runp.add_argument("--corpus", required=True)
    runp.add_argument("--config", default=None, help="key=value config file")
    runp.add_argument("--report", default="report.json")
    runp.add_argument("--per-request", default=None, help="write per-request CSV here")
    _add_override_flags(runp)

    sweep = sub.add_parser("sweep", help="grid over policies x capacities x seeds")
    sweep.add_argument("--trace", required=True)
    sweep.add_argument("--corpus", required=True)
    sweep.add_argument("--config", default=None)
    sweep.add_argument("--policies", default="pgdsf,gdsf,lru,lfu")
    sweep.add_argument("--host-capacities", required=True, help="comma-separated token budgets")
    sweep.add_argument("--seeds", default="0")
    sweep.add_argument("--workers", type=int, default=1)
    sweep.add_argument("--out", default="sweep.csv")
    _add_override_flags(sweep)

    return parser


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--policy", choices=POLICY_NAMES, default=None)
    parser.add_argument("--gpu-capacity", type=int, default=None, help="tokens")
    parser.add_argument("--host-capacity", type=int, default=None, help="tokens")
    parser.add_argument("--gpu-capacity-gib", type=float, default=None)
    parser.add_argument("--host-capacity-gib", type=float, default=None)
    parser.add_argument("--kv-mib-per-token", type=float, default=None)
    parser.add_argument("--pcie-gib-per-s", type=float, default=None)
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--max-prefill-bs", type=int, default=None)
    parser.add_argument("--reorder", choices=("on", "off"), default=None)
    parser.add_argument("--window", type=int, default=None)
    parser.add_argument("--dsp", choices=("on", "off"), default=None)
    parser.add_argument("--stages", type=int, default=None)
    parser.add_argument("--stage-interval", type=float, default=None, help="ms")
    parser.add_argument("--convergence-stage", type=int, default=None)
    parser.add_argument("--profile", default=None, help="alpha,beta,time_ms CSV")
    parser.add_argument("--decode-ms", type=float, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--validate", action="store_true")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config is not None:
        values.update(parse_config_file(args.config))
    if args.kv_mib_per_token is not None:
        values["kv_bytes_per_token"] = args.kv_mib_per_token * MIB
    if args.pcie_gib_per_s is not None:
        values["pcie_bandwidth_bytes_per_ms"] = args.pcie_gib_per_s * GIB_PER_S
    kv_bytes = values.get("kv_bytes_per_token", RunConfig.kv_bytes_per_token)
    if args.gpu_capacity_gib is not None:
        values["gpu_capacity_tokens"] = int(args.gpu_capacity_gib * _GIB / kv_bytes)
    if args.host_capacity_gib is not None:
        values["host_capacity_tokens"] = int(args.host_capacity_gib * _GIB / kv_bytes)
    direct = {
        "policy": args.policy,
        "gpu_capacity_tokens": args.gpu_capacity,
        "host_capacity_tokens": args.host_capacity,
        "k": args.k,
        "max_prefill_bs": args.max_prefill_bs,
        "reorder_window": args.window,
        "stage_count": args.stages,
        "stage_interval_ms": args.stage_interval,
        "convergence_stage": args.convergence_stage,
        "profile_path": args.profile,
        "decode_ms_per_token": args.decode_ms,
        "seed": args.seed,
    }
    for key, value in direct.items():
        if value is not None:
            values[key] = value
    if args.reorder is not None:
        values["reorder"] = args.reorder == "on"
    if args.dsp is not None:
        values["dsp"] = args.dsp == "on"
    if args.validate:
        values["validate"] = True
    valid = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - valid
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**values)


def _cmd_generate(args: argparse.Namespace) -> int:
    spec = PRESETS[args.preset]
    overrides = {}
    if args.num_docs is not None:
        overrides["num_docs"] = args.num_docs
    if args.doc_mean_tokens is not None:
        overrides["length_mean"] = args.doc_mean_tokens
    if args.zipf_s is not None:
        overrides["zipf_s"] = args.zipf_s
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    trace_spec = TraceSpec(
        duration_s=args.duration,
        arrival_rate=args.rate,
        k=args.k,
        prompt_tokens=args.prompt_tokens,
        query_pool=args.query_pool,
        query_zipf_s=args.query_zipf,
        drift_interval_s=args.drift_interval,
        drift_fraction=args.drift_fraction,
        seed=args.seed,
    )
    rng = np.random.default_rng(np.random.SeedSequence([args.seed]))
    corpus = generate_corpus(spec, rng)
    trace = generate_trace(corpus, trace_spec, rng)
    write_corpus(corpus, args.out_corpus)
    write_trace(trace, args.out_trace)
    print(f"wrote {len(trace)} requests to {args.out_trace}, "
          f"{corpus.num_docs} documents to {args.out_corpus}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    trace = read_trace(args.trace)
    corpus = read_corpus(args.corpus)
    if config.gpu_capacity_tokens > config.host_capacity_tokens > 0:
        print(
            f"warning: GPU capacity ({config.gpu_capacity_tokens}) exceeds host "
            f"capacity ({config.host_capacity_tokens})",
            file=sys.stderr,
        )
    print("# effective config")
    print(format_config(config))
    report = run(config, trace, corpus.size_map())
    with open(args.report, "w") as fp:
        fp.write(report.to_json(config) + "\n")
    if args.per_request is not None:
        with open(args.per_request, "w") as fp:
            fp.write(report.per_request_csv())
    agg = report.aggregates()
    print(
        f"requests={agg['requests']} mean_ttft={agg['mean_ttft_ms']:.2f}ms "
        f"hit_rate={agg['doc_hit_rate']:.4f} report={args.report}"
    )
    return 0


def _sweep_cell(cell: tuple) -> dict:
    trace_path, corpus_path, config = cell
    trace = read_trace(trace_path)
    corpus = read_corpus(corpus_path)
    report = run(config, trace, corpus.size_map())
    agg = report.aggregates()
    return {
        "policy": config.policy,
        "host_capacity_tokens": config.host_capacity_tokens,
        "seed": config.seed,
        "doc_hit_rate": agg["doc_hit_rate"],
        "mean_ttft_ms": agg["mean_ttft_ms"],
        "p99_ttft_ms": agg["p99_ttft_ms"],
        "gpu_evictions": agg["gpu_evictions"],
        "swap_outs": agg["swap_outs"],
    }


def _cmd_sweep(args: argparse.Namespace) -> int:
    base = _config_from_args(args)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    for p in policies:
        if p not in POLICY_NAMES:
            raise UnknownPolicy(f"unknown policy {p!r} in sweep grid")
    capacities = [int(c) for c in args.host_capacities.split(",") if c.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    cells = [
        (
            args.trace,
            args.corpus,
            dataclasses.replace(base, policy=p, host_capacity_tokens=c, seed=s),
        )
        for p in policies
        for c in capacities
        for s in seeds
    ]
    if args.workers > 1:
        with Pool(processes=args.workers) as pool:
            rows = pool.map(_sweep_cell, cells)
    else:
        rows = [_sweep_cell(cell) for cell in cells]
    rows.sort(key=lambda r: (r["policy"], r["host_capacity_tokens"], r["seed"]))
    fields = list(rows[0].keys())
    with open(args.out, "w", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} sweep rows to {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_sweep(args)
    except (ConfigError, TraceError, UnknownPolicy, MalformedProfile, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
