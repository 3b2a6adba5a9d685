#!/usr/bin/env python3
"""Replacement-policy ablation: hit rate and mean TTFT across host capacities.

Runs the four policies over a shared question-shuffled trace (skewed corpus,
drifting question pool) at several host-memory budgets and writes the
comparison table. The prefix-aware policy should lead on both metrics.
"""

import argparse
import csv
import dataclasses

import numpy as np

from ragsim import RunConfig, TraceSpec, generate_corpus, generate_trace, run
from ragsim.cost_model import MIB
from ragsim.policies import POLICY_NAMES
from ragsim.workload import PRESETS


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--preset", default="mmlu", choices=sorted(PRESETS))
    parser.add_argument("--num-docs", type=int, default=1500)
    parser.add_argument("--rate", type=float, default=0.8)
    parser.add_argument("--duration", type=float, default=3600.0)
    parser.add_argument("--query-pool", type=int, default=400)
    parser.add_argument("--query-zipf", type=float, default=1.1)
    parser.add_argument("--drift-fraction", type=float, default=0.3)
    parser.add_argument("--gpu-capacity", type=int, default=10240)
    parser.add_argument("--host-capacities", default="12288,20480,32768,49152,73728")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--out", default="policy_sweep.csv")
    args = parser.parse_args()

    corpus_spec = dataclasses.replace(PRESETS[args.preset], num_docs=args.num_docs)
    capacities = [int(c) for c in args.host_capacities.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]

    rows = []
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        corpus = generate_corpus(corpus_spec, rng)
        trace = generate_trace(
            corpus,
            TraceSpec(
                duration_s=args.duration,
                arrival_rate=args.rate,
                seed=seed,
                query_pool=args.query_pool,
                query_zipf_s=args.query_zipf,
                drift_interval_s=300.0,
                drift_fraction=args.drift_fraction,
            ),
            rng,
        )
        sizes = corpus.size_map()
        for capacity in capacities:
            for policy in POLICY_NAMES:
                config = RunConfig(
                    gpu_capacity_tokens=args.gpu_capacity,
                    host_capacity_tokens=capacity,
                    policy=policy,
                    seed=seed,
                    profile_base_ms=20.0,
                    profile_per_token_ms=0.015,
                    profile_attention_ms=1e-5,
                    kv_bytes_per_token=0.5 * MIB,
                )
                agg = run(config, trace, sizes).aggregates()
                rows.append(
                    {
                        "seed": seed,
                        "host_capacity_tokens": capacity,
                        "policy": policy,
                        "doc_hit_rate": round(agg["doc_hit_rate"], 4),
                        "mean_ttft_ms": round(agg["mean_ttft_ms"], 2),
                    }
                )
                print(rows[-1])

    with open(args.out, "w", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")


if __name__ == "__main__":
    main()
