"""Synthetic corpus and request-trace generation.

Document popularity follows a Zipf law over ranked documents, matching the
heavily skewed retrieval patterns of QA workloads (a few percent of
documents absorb most retrievals). Document lengths are lognormal, arrivals
are Poisson, and each request draws k distinct documents by popularity
without replacement, keeping draw order as relevance order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .simulator import Request

__all__ = [
    "CorpusSpec",
    "TraceSpec",
    "Corpus",
    "generate_corpus",
    "generate_trace",
    "draw_doc_sequences",
    "PRESETS",
    "write_trace",
    "read_trace",
    "write_corpus",
    "read_corpus",
]


@dataclass(frozen=True)
class CorpusSpec:
    num_docs: int = 10000
    length_mean: float = 600.0     # mean document length in tokens
    length_sigma: float = 0.5      # lognormal shape
    min_tokens: int = 16
    max_tokens: int = 4096
    zipf_s: float = 0.97           # popularity exponent over rank

    def __post_init__(self) -> None:
        if self.num_docs < 1:
            raise ValueError("need at least one document")
        if self.length_mean <= 0 or self.min_tokens < 1:
            raise ValueError("document lengths must be positive")
        if self.zipf_s < 0:
            raise ValueError("zipf exponent must be non-negative")


@dataclass(frozen=True)
class TraceSpec:
    duration_s: float = 600.0
    arrival_rate: float = 1.0      # requests per second
    k: int = 2                     # documents retrieved per request
    prompt_tokens: int = 32
    output_mean: float = 6.0       # geometric mean output length
    output_cap: int = 128
    # distinct questions to shuffle requests from; None draws a fresh
    # document sequence per request instead of repeating exact sequences
    query_pool: int | None = None
    # popularity skew across questions (0 = uniform shuffle)
    query_zipf_s: float = 0.0
    # question-stream churn: every interval, this fraction of the pool is
    # replaced by freshly drawn questions (0 keeps the pool fixed)
    drift_interval_s: float = 600.0
    drift_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.arrival_rate <= 0 or self.duration_s <= 0:
            raise ValueError("rate and duration must be positive")
        if self.k < 1 or self.prompt_tokens < 1:
            raise ValueError("k and prompt length must be at least 1")
        if self.output_mean < 1:
            raise ValueError("output mean must be at least 1 token")
        if self.query_pool is not None and self.query_pool < 1:
            raise ValueError("query pool must be positive when set")
        if not 0.0 <= self.drift_fraction <= 1.0 or self.drift_interval_s <= 0:
            raise ValueError("drift fraction must be in [0, 1] with a positive interval")


@dataclass(frozen=True, eq=False)
class Corpus:
    """Document token sizes and normalized popularity weights, indexed by id."""

    sizes: np.ndarray
    weights: np.ndarray

    @property
    def num_docs(self) -> int:
        return len(self.sizes)

    def size_map(self) -> dict[int, int]:
        return {i: int(s) for i, s in enumerate(self.sizes)}


# Zipf exponents are calibrated empirically so the MMLU-like preset puts
# ~60% of retrievals on the top 3% of documents; the NQ-like preset is
# qualitatively milder. Lengths are wide lognormals (encyclopedia articles
# span orders of magnitude); "wiki_full" keeps the measured 3718-token
# average of full wiki articles, the others scale lengths down for
# desk-size caches.
PRESETS: dict[str, CorpusSpec] = {
    "mmlu": CorpusSpec(num_docs=10000, zipf_s=0.97, length_sigma=1.5),
    "nq": CorpusSpec(num_docs=10000, zipf_s=0.85, length_sigma=1.5),
    "uniform": CorpusSpec(num_docs=10000, zipf_s=0.0),
    "wiki_full": CorpusSpec(num_docs=10000, length_mean=3718.0, length_sigma=1.2, zipf_s=0.97),
}


def generate_corpus(spec: CorpusSpec, rng: np.random.Generator) -> Corpus:
    mu = np.log(spec.length_mean) - spec.length_sigma**2 / 2.0
    lengths = rng.lognormal(mean=mu, sigma=spec.length_sigma, size=spec.num_docs)
    sizes = np.clip(np.rint(lengths), spec.min_tokens, spec.max_tokens).astype(np.int64)
    ranks = np.arange(1, spec.num_docs + 1, dtype=np.float64)
    weights = ranks**-spec.zipf_s
    weights /= weights.sum()
    return Corpus(sizes=sizes, weights=weights)


def draw_doc_sequences(
    rng: np.random.Generator,
    weights: np.ndarray,
    n_requests: int,
    k: int,
) -> np.ndarray:
    """Draw ``n_requests`` sequences of k distinct documents by popularity.

    Vectorized rejection sampling: each slot is drawn by weight for all
    requests at once, then redrawn where it collides with an earlier slot.
    """
    if k > len(weights):
        raise ValueError(f"k={k} exceeds corpus size {len(weights)}")
    n_docs = len(weights)
    out = np.empty((n_requests, k), dtype=np.int64)
    for slot in range(k):
        draw = rng.choice(n_docs, size=n_requests, p=weights)
        if slot > 0:
            clash = (out[:, :slot] == draw[:, None]).any(axis=1)
            while clash.any():
                idx = np.flatnonzero(clash)
                draw[idx] = rng.choice(n_docs, size=len(idx), p=weights)
                clash[idx] = (out[idx, :slot] == draw[idx, None]).any(axis=1)
        out[:, slot] = draw
    return out


def generate_trace(corpus: Corpus, spec: TraceSpec, rng: np.random.Generator) -> list[Request]:
    """Poisson arrivals over the duration, popularity-skewed top-k draws,
    geometric output lengths with a short tail.

    With ``query_pool`` set, a fixed pool of distinct questions (each with a
    popularity-drawn document sequence) is sampled and shuffled, so exact
    sequences recur across the trace the way repeated questions do.
    """
    arrivals: list[float] = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / spec.arrival_rate)
        if t >= spec.duration_s:
            break
        arrivals.append(t * 1000.0)
    n = len(arrivals)
    if spec.query_pool is not None:
        pool = draw_doc_sequences(rng, corpus.weights, spec.query_pool, spec.k)
        ranks = np.arange(1, spec.query_pool + 1, dtype=np.float64)
        qweights = ranks**-spec.query_zipf_s
        qweights /= qweights.sum()
        window = 0
        churn = int(round(spec.drift_fraction * spec.query_pool))
        docs = np.empty((n, spec.k), dtype=np.int64)
        for i, at_ms in enumerate(arrivals):
            w = int(at_ms / (spec.drift_interval_s * 1000.0))
            while window < w and churn:
                # a replaced question inherits its slot's popularity rank
                window += 1
                slots = rng.choice(spec.query_pool, size=churn, replace=False)
                pool[slots] = draw_doc_sequences(rng, corpus.weights, churn, spec.k)
            docs[i] = pool[int(rng.choice(spec.query_pool, p=qweights))]
    else:
        docs = draw_doc_sequences(rng, corpus.weights, n, spec.k)
    outputs = np.minimum(rng.geometric(1.0 / spec.output_mean, size=n), spec.output_cap)
    return [
        Request(
            id=i,
            arrival_ms=arrivals[i],
            prompt_tokens=spec.prompt_tokens,
            doc_sequence=tuple(int(d) for d in docs[i]),
            output_tokens=int(outputs[i]),
        )
        for i in range(n)
    ]


# ----------------------------------------------------------------------
# file formats
# ----------------------------------------------------------------------


def write_trace(trace: list[Request], path: str) -> None:
    with open(path, "w") as fp:
        for req in trace:
            fp.write(
                json.dumps(
                    {
                        "id": req.id,
                        "arrival_ms": req.arrival_ms,
                        "prompt_tokens": req.prompt_tokens,
                        "docs": list(req.doc_sequence),
                        "output_tokens": req.output_tokens,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_trace(path: str) -> list[Request]:
    trace: list[Request] = []
    with open(path) as fp:
        for line in fp:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            trace.append(
                Request(
                    id=int(rec["id"]),
                    arrival_ms=float(rec["arrival_ms"]),
                    prompt_tokens=int(rec["prompt_tokens"]),
                    doc_sequence=tuple(int(d) for d in rec["docs"]),
                    output_tokens=int(rec["output_tokens"]),
                )
            )
    return trace


def write_corpus(corpus: Corpus, path: str) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["doc_id", "token_size", "weight"])
        for i in range(corpus.num_docs):
            writer.writerow([i, int(corpus.sizes[i]), repr(float(corpus.weights[i]))])


def read_corpus(path: str) -> Corpus:
    sizes: list[int] = []
    weights: list[float] = []
    with open(path, newline="") as fp:
        reader = csv.DictReader(fp)
        for row in reader:
            if int(row["doc_id"]) != len(sizes):
                raise ValueError(f"corpus file {path} has non-contiguous doc ids")
            sizes.append(int(row["token_size"]))
            weights.append(float(row["weight"]))
    return Corpus(sizes=np.array(sizes, dtype=np.int64), weights=np.array(weights))
