#!/usr/bin/env python3
"""Cache-aware reordering ablation under queue saturation.

Finds the FIFO saturation rate, then compares mean TTFT with reordering on
and off at a configurable multiple of that rate.
"""

import argparse
import dataclasses

import numpy as np

from ragsim import RunConfig, TraceSpec, generate_corpus, generate_trace, run
from ragsim.cost_model import MIB
from ragsim.simulator import measure_throughput, scale_trace
from ragsim.workload import PRESETS


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--num-docs", type=int, default=1500)
    parser.add_argument("--duration", type=float, default=400.0)
    parser.add_argument("--gpu-capacity", type=int, default=10240)
    parser.add_argument("--host-capacity", type=int, default=20480)
    parser.add_argument("--window", type=int, default=64)
    parser.add_argument("--overload", type=float, default=1.2)
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
            arrival_rate=1.0,
            seed=args.seed,
            query_pool=400,
            query_zipf_s=1.1,
            drift_interval_s=300.0,
            drift_fraction=0.3,
        ),
        rng,
    )
    sizes = corpus.size_map()

    common = dict(
        gpu_capacity_tokens=args.gpu_capacity,
        host_capacity_tokens=args.host_capacity,
        profile_base_ms=20.0,
        profile_per_token_ms=0.015,
        profile_attention_ms=1e-5,
        kv_bytes_per_token=0.5 * MIB,
        seed=args.seed,
    )
    fifo = RunConfig(reorder=False, **common)
    saturation = measure_throughput(
        fifo, trace, sizes, slo_multiplier=5.0, min_rate=0.5, max_rate=16.0, iterations=8
    )
    rate = args.overload * saturation
    base_rate = len(trace) / (max(r.arrival_ms for r in trace) / 1000.0)
    overloaded = scale_trace(trace, base_rate / rate)

    ttft_fifo = run(fifo, overloaded, sizes).aggregates()["mean_ttft_ms"]
    reordered = RunConfig(reorder=True, reorder_window=args.window, **common)
    ttft_reorder = run(reordered, overloaded, sizes).aggregates()["mean_ttft_ms"]

    print(f"saturation rate (fifo): {saturation:.3f} req/s")
    print(f"overloaded rate:        {rate:.3f} req/s")
    print(f"mean TTFT fifo:         {ttft_fifo:.1f} ms")
    print(f"mean TTFT reordered:    {ttft_reorder:.1f} ms")
    print(f"reduction:              {(1 - ttft_reorder / ttft_fifo) * 100:.1f}%")


if __name__ == "__main__":
    main()
