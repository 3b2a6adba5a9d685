#!/usr/bin/env python3
"""Speculative-pipelining ablation over retrieval lengths.

Sweeps the per-stage retrieval interval (standing in for vector-search
depth) and reports mean TTFT and non-overlapping retrieval time with and
without speculation on identical traces.
"""

import argparse
import dataclasses

import numpy as np

from ragsim import RunConfig, TraceSpec, generate_corpus, generate_trace, run
from ragsim.cost_model import MIB
from ragsim.workload import PRESETS


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--num-docs", type=int, default=1500)
    parser.add_argument("--rate", type=float, default=0.25)
    parser.add_argument("--duration", type=float, default=500.0)
    parser.add_argument("--gpu-capacity", type=int, default=10240)
    parser.add_argument("--host-capacity", type=int, default=32768)
    parser.add_argument("--stage-intervals", default="25,50,100,200")
    parser.add_argument("--convergence-stage", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(np.random.SeedSequence([args.seed]))
    corpus = generate_corpus(
        dataclasses.replace(PRESETS["mmlu"], num_docs=args.num_docs), rng
    )
    trace = generate_trace(
        corpus,
        TraceSpec(
            duration_s=args.duration,
            arrival_rate=args.rate,
            seed=args.seed,
            query_pool=300,
            query_zipf_s=1.1,
            drift_interval_s=300.0,
            drift_fraction=0.3,
        ),
        rng,
    )
    sizes = corpus.size_map()

    print(f"{'interval':>9} {'ttft off':>10} {'ttft on':>10} {'overlap':>9} "
          f"{'nonovl off':>11} {'nonovl on':>10} {'ratio':>6}")
    for interval in (float(x) for x in args.stage_intervals.split(",")):
        base = dict(
            gpu_capacity_tokens=args.gpu_capacity,
            host_capacity_tokens=args.host_capacity,
            stage_count=4,
            stage_interval_ms=interval,
            convergence_stage=args.convergence_stage,
            prefill_chunk_ms=min(25.0, interval),
            profile_base_ms=20.0,
            profile_per_token_ms=0.015,
            profile_attention_ms=1e-5,
            kv_bytes_per_token=0.5 * MIB,
            seed=args.seed,
        )
        off = run(RunConfig(dsp=False, **base), trace, sizes).aggregates()
        on = run(RunConfig(dsp=True, **base), trace, sizes).aggregates()
        ratio = off["mean_non_overlap_ms"] / max(on["mean_non_overlap_ms"], 1e-9)
        print(
            f"{interval:9.0f} {off['mean_ttft_ms']:10.1f} {on['mean_ttft_ms']:10.1f} "
            f"{on['mean_overlap_ms']:9.1f} {off['mean_non_overlap_ms']:11.1f} "
            f"{on['mean_non_overlap_ms']:10.1f} {ratio:6.2f}"
        )


if __name__ == "__main__":
    main()
