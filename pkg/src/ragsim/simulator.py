"""Discrete-event engine for the full request lifecycle.

Each request flows through: Poisson arrival -> staged vector search (with
optional speculative prefills) -> prefix-cache lookup -> cache-aware queue
admission -> host-to-GPU transfer for host-resident prefix state -> chunked
prefill -> per-token decode -> cache insertion and statistics update.

The GPU is a single deterministic server: one generation's iterations run
at a time (prefill chunks, then decode steps), and a stale speculation is
terminated only at an iteration boundary. Events at equal timestamps are
ordered StageComplete < PrefillIterationDone < DecodeDone < Arrival, then
by insertion serial, so a run is a pure function of (config, trace, seed).
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Mapping

import numpy as np

from .config import RunConfig, format_config
from .cost_model import interpolate, transfer_time
from .policies import make_policy
from .scheduler import ReorderQueue
from .speculation import (
    SpeculationOutcome,
    SpeculationState,
    StagedRetrieval,
    finalize,
    generate_stages,
    on_stage_complete,
)
from .tree import InsufficientEvictableCapacity, KnowledgeTree, Tier

__all__ = [
    "ConfigError",
    "TraceError",
    "Request",
    "Generation",
    "GenState",
    "RequestRecord",
    "SimReport",
    "SimulationEngine",
    "run",
    "measure_throughput",
    "scale_trace",
]


class ConfigError(Exception):
    pass


class TraceError(Exception):
    pass


@dataclass(frozen=True)
class Request:
    id: int
    arrival_ms: float
    prompt_tokens: int
    doc_sequence: tuple[int, ...]
    output_tokens: int


# event-kind precedence at equal timestamps
_STAGE, _PREFILL, _DECODE, _ARRIVAL = 0, 1, 2, 3


class GenState(Enum):
    QUEUED = "queued"
    PREFILLING = "prefilling"
    DECODING = "decoding"
    FINISHED = "finished"
    ABORTED = "aborted"


@dataclass(eq=False)
class Generation:
    """One prefill+decode attempt for a (request, document sequence) pair."""

    request: Request
    docs: tuple[int, ...]
    speculative: bool
    enqueued_ms: float
    state: GenState = GenState.QUEUED
    confirmed: bool = False
    terminated: bool = False
    committed: bool = False
    # admission-time cache view
    matched_nodes: list = field(default_factory=list)
    gpu_hit_tokens: int = 0
    host_hit_tokens: int = 0
    miss_tokens: int = 0
    alpha: int = 0
    beta: int = 0
    reserved: int = 0
    pinned: bool = False
    # timing
    start_ms: float = 0.0
    transfer_ms: float = 0.0
    prefill_ms: float = 0.0
    chunk_ms: float = 0.0
    chunks_left: int = 0
    prefill_end_ms: float = 0.0
    decode_left: int = 0
    finish_ms: float = 0.0
    executed_ms: float = 0.0


@dataclass
class _RequestState:
    request: Request
    staged: StagedRetrieval
    spec: SpeculationState
    retrieval_end_ms: float = 0.0
    confirmed_gen: Generation | None = None
    speculations: int = 0
    terminations: int = 0
    wasted_ms: float = 0.0
    done: bool = False


@dataclass
class RequestRecord:
    id: int
    arrival_ms: float
    ttft_ms: float
    completion_ms: float
    retrieval_ms: float
    queue_ms: float
    transfer_ms: float
    prefill_ms: float
    prompt_tokens: int
    doc_tokens: int
    gpu_hit_tokens: int
    host_hit_tokens: int
    miss_tokens: int
    hit_docs: int
    total_docs: int
    overlap_ms: float
    non_overlap_ms: float
    speculations: int
    terminations: int
    wasted_ms: float


_CSV_COLUMNS = ("id", "ttft_ms", "gpu_hit_tokens", "host_hit_tokens", "miss_tokens", "overlap_ms")


@dataclass
class SimReport:
    """Per-request records plus cache/engine counters for one run."""

    records: list[RequestRecord]
    gpu_evictions: int
    host_evictions: int
    swap_outs: int
    swap_out_tokens: int
    dropped_evictions: int
    throughput_at_slo: float | None = None

    def aggregates(self) -> dict:
        n = len(self.records)
        ttfts = sorted(r.ttft_ms for r in self.records)
        hit_docs = sum(r.hit_docs for r in self.records)
        total_docs = sum(r.total_docs for r in self.records)
        agg = {
            "requests": n,
            "mean_ttft_ms": _mean(ttfts),
            "median_ttft_ms": _percentile(ttfts, 0.5),
            "p99_ttft_ms": _percentile(ttfts, 0.99),
            "doc_hit_rate": hit_docs / total_docs if total_docs else 0.0,
            "mean_queue_ms": _mean([r.queue_ms for r in self.records]),
            "mean_retrieval_ms": _mean([r.retrieval_ms for r in self.records]),
            "mean_overlap_ms": _mean([r.overlap_ms for r in self.records]),
            "mean_non_overlap_ms": _mean([r.non_overlap_ms for r in self.records]),
            "gpu_evictions": self.gpu_evictions,
            "host_evictions": self.host_evictions,
            "swap_outs": self.swap_outs,
            "swap_out_tokens": self.swap_out_tokens,
            "dropped_evictions": self.dropped_evictions,
            "speculations": sum(r.speculations for r in self.records),
            "terminations": sum(r.terminations for r in self.records),
            "wasted_speculative_ms": sum(r.wasted_ms for r in self.records),
        }
        if self.throughput_at_slo is not None:
            agg["throughput_at_slo"] = self.throughput_at_slo
        return agg

    def to_json(self, config: RunConfig | None = None) -> str:
        payload: dict = {"aggregates": self.aggregates()}
        if config is not None:
            payload["config"] = {
                line.split(" = ")[0]: line.split(" = ", 1)[1]
                for line in format_config(config).splitlines()
            }
        return json.dumps(payload, sort_keys=True, indent=2)

    def per_request_csv(self) -> str:
        lines = [",".join(_CSV_COLUMNS)]
        for r in self.records:
            lines.append(
                f"{r.id},{r.ttft_ms!r},{r.gpu_hit_tokens},{r.host_hit_tokens},"
                f"{r.miss_tokens},{r.overlap_ms!r}"
            )
        return "\n".join(lines) + "\n"


def _mean(xs: Iterable[float]) -> float:
    xs = list(xs)
    return sum(xs) / len(xs) if xs else 0.0


def _percentile(sorted_xs: list[float], q: float) -> float:
    if not sorted_xs:
        return 0.0
    idx = min(len(sorted_xs) - 1, max(0, math.ceil(q * len(sorted_xs)) - 1))
    return sorted_xs[idx]


StageProvider = Callable[[Request], StagedRetrieval]


def validate_inputs(config: RunConfig, trace: list[Request], sizes: Mapping[int, int]) -> None:
    if config.gpu_capacity_tokens <= 0:
        raise ConfigError("GPU capacity must be positive")
    if config.host_capacity_tokens < 0:
        raise ConfigError("host capacity must be non-negative")
    if config.k < 1:
        raise ConfigError("k must be at least 1")
    if config.stage_count < 1:
        raise ConfigError("need at least one retrieval stage")
    if not 1 <= config.convergence_stage <= config.stage_count:
        raise ConfigError(
            f"convergence stage {config.convergence_stage} outside 1..{config.stage_count}"
        )
    if config.max_prefill_bs < 1:
        raise ConfigError("max_prefill_bs must be at least 1")
    if config.stage_interval_ms < 0 or config.decode_ms_per_token < 0:
        raise ConfigError("latencies must be non-negative")
    if config.prefill_chunk_ms <= 0:
        raise ConfigError("prefill_chunk_ms must be positive")
    last = -math.inf
    for req in trace:
        if req.arrival_ms < last:
            raise TraceError(f"trace not sorted by arrival at request {req.id}")
        last = req.arrival_ms
        if req.prompt_tokens < 1 or req.output_tokens < 1:
            raise TraceError(f"request {req.id} needs positive prompt and output lengths")
        if len(req.doc_sequence) != config.k:
            raise TraceError(
                f"request {req.id} retrieves {len(req.doc_sequence)} docs, configured k={config.k}"
            )
        if len(set(req.doc_sequence)) != len(req.doc_sequence):
            raise TraceError(f"request {req.id} repeats a document")
        footprint = req.prompt_tokens
        for doc in req.doc_sequence:
            if doc not in sizes:
                raise TraceError(f"request {req.id} references unknown document {doc}")
            footprint += sizes[doc]
        if footprint > config.gpu_capacity_tokens:
            raise ConfigError(
                f"request {req.id} needs {footprint} GPU tokens but capacity is "
                f"{config.gpu_capacity_tokens}"
            )


class SimulationEngine:
    """Single-threaded deterministic engine over one (config, trace) pair."""

    def __init__(
        self,
        config: RunConfig,
        trace: list[Request],
        sizes: Mapping[int, int],
        stage_provider: StageProvider | None = None,
    ) -> None:
        validate_inputs(config, trace, sizes)
        self.config = config
        self.trace = trace
        self.sizes = sizes
        self.profile = config.cost_profile()
        self.transfer = config.transfer_model()
        self.tree = KnowledgeTree(
            config.gpu_capacity_tokens,
            config.host_capacity_tokens,
            policy=make_policy(config.policy),
            frequency_decay=config.frequency_decay,
        )
        self.queue = ReorderQueue(window=config.reorder_window, reorder=config.reorder)
        self._stage_provider = stage_provider or self._default_stages
        self._corpus_ids = np.array(sorted(sizes), dtype=np.int64)
        self._heap: list[tuple] = []
        self._serial = 0
        self._now = 0.0
        self._gpu: Generation | None = None
        self._states: dict[int, _RequestState] = {}
        self._records: list[RequestRecord] = []

    # ------------------------------------------------------------------
    # event plumbing
    # ------------------------------------------------------------------

    def _schedule(self, at_ms: float, kind: int, req_id: int, payload) -> None:
        self._serial += 1
        heapq.heappush(self._heap, (at_ms, kind, req_id, self._serial, payload))

    def _default_stages(self, req: Request) -> StagedRetrieval:
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, req.id]))
        return generate_stages(
            req.doc_sequence,
            self.config.stage_count,
            self.config.convergence_stage,
            self._corpus_ids,
            rng,
            self.config.stage_interval_ms,
        )

    def run(self) -> SimReport:
        for req in self.trace:
            self._schedule(req.arrival_ms, _ARRIVAL, req.id, req)
        stride = max(1, self.config.validate_every)
        handled = 0
        while self._heap:
            at_ms, kind, req_id, _, payload = heapq.heappop(self._heap)
            if self.config.validate:
                assert at_ms >= self._now, "event processed out of timestamp order"
            self._now = at_ms
            if kind == _ARRIVAL:
                self._on_arrival(payload)
            elif kind == _STAGE:
                self._on_stage(req_id, payload)
            elif kind == _PREFILL:
                self._on_prefill_iteration(payload)
            else:
                self._on_decode_iteration(payload)
            handled += 1
            if self.config.validate and handled % stride == 0:
                self.tree.check_invariants()
        if self.config.validate:
            self.tree.check_invariants()
        leftovers = [rid for rid, rs in self._states.items() if not rs.done]
        if leftovers:
            raise RuntimeError(f"requests never completed: {leftovers}")
        self._records.sort(key=lambda r: r.id)
        return SimReport(
            records=self._records,
            gpu_evictions=self.tree.gpu_evictions,
            host_evictions=self.tree.host_evictions,
            swap_outs=self.tree.swap_out_count,
            swap_out_tokens=self.tree.swap_out_tokens,
            dropped_evictions=self.tree.dropped_evictions,
        )

    # ------------------------------------------------------------------
    # handlers
    # ------------------------------------------------------------------

    def _on_arrival(self, req: Request) -> None:
        staged = self._stage_provider(req)
        if staged.final_docs != req.doc_sequence:
            raise TraceError(f"staged retrieval for request {req.id} does not end at ground truth")
        rs = _RequestState(request=req, staged=staged, spec=SpeculationState(req.id))
        self._states[req.id] = rs
        self._schedule(self._now + staged.stage_interval_ms, _STAGE, req.id, 0)

    def _on_stage(self, req_id: int, stage_idx: int) -> None:
        rs = self._states[req_id]
        is_final = stage_idx == rs.staged.num_stages - 1
        if not is_final:
            if self.config.dsp:
                docs = rs.staged.stages[stage_idx]
                on_stage_complete(rs.spec, docs, _PoolAdapter(self, rs), self.config.max_prefill_bs)
            self._schedule(self._now + rs.staged.stage_interval_ms, _STAGE, req_id, stage_idx + 1)
        else:
            rs.retrieval_end_ms = self._now
            outcome = finalize(rs.spec, rs.staged.final_docs)
            if outcome is SpeculationOutcome.CONFIRMED:
                gen = rs.spec.active
                gen.confirmed = True
                rs.confirmed_gen = gen
                if gen.state in (GenState.DECODING, GenState.FINISHED) and not gen.committed:
                    self._commit(gen)
                if gen.state is GenState.FINISHED:
                    self._complete_request(rs)
            else:
                stale = rs.spec.active
                if stale is not None:
                    self._terminate(stale)
                    rs.spec.active = None
                gen = Generation(
                    request=rs.request,
                    docs=rs.staged.final_docs,
                    speculative=False,
                    enqueued_ms=self._now,
                )
                rs.confirmed_gen = gen
                self.queue.push(gen, gen.docs, rs.request.prompt_tokens, self._queue_lookup)
        self._kick()

    def _on_prefill_iteration(self, gen: Generation) -> None:
        gen.executed_ms += gen.chunk_ms
        gen.chunks_left -= 1
        if gen.terminated:
            self._abort(gen)
            self._gpu = None
        elif gen.chunks_left > 0:
            self._schedule(self._now + gen.chunk_ms, _PREFILL, gen.request.id, gen)
        else:
            gen.prefill_end_ms = self._now
            gen.state = GenState.DECODING
            gen.decode_left = gen.request.output_tokens
            if not gen.speculative or gen.confirmed:
                self._commit(gen)
            self._schedule(
                self._now + self.config.decode_ms_per_token, _DECODE, gen.request.id, gen
            )
        self._kick()

    def _on_decode_iteration(self, gen: Generation) -> None:
        gen.executed_ms += self.config.decode_ms_per_token
        if gen.terminated:
            self._abort(gen)
            self._gpu = None
        else:
            gen.decode_left -= 1
            if gen.decode_left > 0:
                self._schedule(
                    self._now + self.config.decode_ms_per_token, _DECODE, gen.request.id, gen
                )
            else:
                gen.state = GenState.FINISHED
                gen.finish_ms = self._now
                self._gpu = None
                if not gen.speculative or gen.confirmed:
                    self._complete_request(self._states[gen.request.id])
                # an unconfirmed speculation parks here until retrieval resolves
        self._kick()

    # ------------------------------------------------------------------
    # GPU admission and lifecycle
    # ------------------------------------------------------------------

    def _queue_lookup(self, docs: tuple[int, ...], prompt_tokens: int) -> tuple[int, int]:
        match = self.tree.lookup(docs)
        miss = sum(self.sizes[d] for d in match.miss_docs)
        return match.hit_tokens, miss + prompt_tokens

    def _kick(self) -> None:
        while self._gpu is None and len(self.queue) > 0:
            self.queue.rescan(self._queue_lookup)
            if self.config.validate and self.queue.reorder:
                now = self.queue.decisions
                overdue = [e for e in self.queue if e.deadline_seq <= now]
                expected = min(overdue, key=lambda e: (e.enqueue_seq, e.serial), default=None)
            else:
                expected = None
            entry = self.queue.pick_next()
            gen: Generation = entry.item
            if expected is not None:
                # overdue requests must be served oldest-first, before any
                # priority-ranked newcomer: the no-starvation guarantee
                assert entry is expected, (
                    f"request {gen.request.id} selected ahead of an overdue request"
                )
            try:
                self._admit(gen)
            except InsufficientEvictableCapacity:
                # pinned paths and reservations of in-flight generations block
                # admission; retry after the next capacity-freeing event
                self.queue.requeue(entry)
                break

    def _admit(self, gen: Generation) -> None:
        match = self.tree.lookup(gen.docs)
        miss_tokens = sum(self.sizes[d] for d in match.miss_docs)
        prompt = gen.request.prompt_tokens
        host_nodes = [n for n in match.matched_nodes if n.tier is Tier.HOST]
        promote_tokens = sum(n.size for n in host_nodes)
        need = promote_tokens + miss_tokens + prompt
        self.tree.pin(match.matched_nodes)
        try:
            if self.tree.gpu_free < need:
                self.tree.evict_gpu(need - self.tree.gpu_free)
        except InsufficientEvictableCapacity:
            self.tree.unpin(match.matched_nodes)
            raise
        moved = self.tree.load_to_gpu(host_nodes)
        self.tree.reserve_gpu(miss_tokens + prompt)
        gen.matched_nodes = match.matched_nodes
        gen.gpu_hit_tokens = match.gpu_hit_tokens
        gen.host_hit_tokens = match.host_hit_tokens
        gen.miss_tokens = miss_tokens + prompt
        gen.alpha = match.hit_tokens
        gen.beta = miss_tokens + prompt
        gen.reserved = miss_tokens + prompt
        gen.pinned = True
        gen.transfer_ms = transfer_time(self.transfer, moved)
        gen.prefill_ms = interpolate(self.profile, gen.alpha, gen.beta)
        total = gen.transfer_ms + gen.prefill_ms
        chunks = max(1, math.ceil(total / self.config.prefill_chunk_ms)) if total > 0 else 1
        gen.chunk_ms = total / chunks
        gen.chunks_left = chunks
        gen.start_ms = self._now
        gen.state = GenState.PREFILLING
        self._gpu = gen
        self._schedule(self._now + gen.chunk_ms, _PREFILL, gen.request.id, gen)

    def _commit(self, gen: Generation) -> None:
        """Insert the computed path and refresh statistics at prefill completion
        (or at confirmation, for a speculation that finished earlier)."""
        self.tree.release_gpu(gen.reserved)
        gen.reserved = 0
        doc_sizes = [self.sizes[d] for d in gen.docs]
        path = self.tree.insert_path(gen.docs, doc_sizes)
        cached_count = len(gen.matched_nodes)
        for i, node in enumerate(path):
            self.tree.update_node(
                node, i < cached_count, gen.alpha, gen.beta, self.profile
            )
        if gen.pinned:
            self.tree.unpin(gen.matched_nodes)
            gen.pinned = False
        gen.committed = True
        if self.config.validate:
            total = gen.request.prompt_tokens + sum(doc_sizes)
            assert gen.alpha + gen.beta == total, "token accounting drift at commit"

    def _terminate(self, gen: Generation) -> None:
        rs = self._states[gen.request.id]
        if gen.state is GenState.QUEUED:
            self.queue.remove(gen)
            gen.state = GenState.ABORTED
            rs.terminations += 1
        elif gen.state in (GenState.PREFILLING, GenState.DECODING):
            gen.terminated = True
            rs.terminations += 1
        elif gen.state is GenState.FINISHED:
            self._abort(gen)
            rs.terminations += 1

    def _abort(self, gen: Generation) -> None:
        assert not gen.committed, "cannot abort a committed generation"
        rs = self._states[gen.request.id]
        if gen.reserved:
            self.tree.release_gpu(gen.reserved)
            gen.reserved = 0
        if gen.pinned:
            self.tree.unpin(gen.matched_nodes)
            gen.pinned = False
        gen.state = GenState.ABORTED
        rs.wasted_ms += gen.executed_ms

    def _complete_request(self, rs: _RequestState) -> None:
        if rs.done:
            return
        rs.done = True
        gen = rs.confirmed_gen
        req = rs.request
        retrieval_ms = rs.retrieval_end_ms - req.arrival_ms
        ttft = max(gen.prefill_end_ms, rs.retrieval_end_ms) - req.arrival_ms
        overlap = max(0.0, min(gen.finish_ms, rs.retrieval_end_ms) - gen.start_ms)
        non_overlap = retrieval_ms - overlap
        if self.config.validate:
            assert 0.0 <= overlap <= retrieval_ms + 1e-9, "overlap outside retrieval window"
            assert ttft >= 0.0
            # the unhidden portion of retrieval is always on the critical path
            assert ttft >= non_overlap - 1e-9, "TTFT below non-overlapped retrieval"
        self._records.append(
            RequestRecord(
                id=req.id,
                arrival_ms=req.arrival_ms,
                ttft_ms=ttft,
                completion_ms=max(gen.finish_ms, rs.retrieval_end_ms) - req.arrival_ms,
                retrieval_ms=retrieval_ms,
                queue_ms=gen.start_ms - gen.enqueued_ms,
                transfer_ms=gen.transfer_ms,
                prefill_ms=gen.prefill_ms,
                prompt_tokens=req.prompt_tokens,
                doc_tokens=sum(self.sizes[d] for d in req.doc_sequence),
                gpu_hit_tokens=gen.gpu_hit_tokens,
                host_hit_tokens=gen.host_hit_tokens,
                miss_tokens=gen.miss_tokens,
                hit_docs=len(gen.matched_nodes),
                total_docs=len(req.doc_sequence),
                overlap_ms=overlap,
                non_overlap_ms=non_overlap,
                speculations=rs.speculations,
                terminations=rs.terminations,
                wasted_ms=rs.wasted_ms,
            )
        )


class _PoolAdapter:
    """Engine-facing prefill pool handed to the speculation controller."""

    def __init__(self, engine: SimulationEngine, rs: _RequestState) -> None:
        self.engine = engine
        self.rs = rs

    def size(self) -> int:
        busy = self.engine._gpu
        prefilling = 1 if busy is not None and busy.state is GenState.PREFILLING else 0
        return len(self.engine.queue) + prefilling

    def insert(self, request_id: int, docs: tuple[int, ...]):
        if self.engine.config.validate:
            assert self.size() < self.engine.config.max_prefill_bs, (
                "speculative insert would exceed the prefill pool bound"
            )
        gen = Generation(
            request=self.rs.request,
            docs=docs,
            speculative=True,
            enqueued_ms=self.engine._now,
        )
        self.rs.speculations += 1
        self.engine.queue.push(gen, docs, self.rs.request.prompt_tokens, self.engine._queue_lookup)
        return gen

    def terminate(self, gen: Generation) -> None:
        self.engine._terminate(gen)


def run(
    config: RunConfig,
    trace: list[Request],
    sizes: Mapping[int, int],
    stage_provider: StageProvider | None = None,
) -> SimReport:
    """Simulate one trace; deterministic for a given (config, trace, seed)."""
    return SimulationEngine(config, trace, sizes, stage_provider=stage_provider).run()


def scale_trace(trace: list[Request], factor: float) -> list[Request]:
    """Stretch or compress arrival times; factor > 1 slows the arrival rate."""
    return [replace(req, arrival_ms=req.arrival_ms * factor) for req in trace]


def measure_throughput(
    config: RunConfig,
    trace: list[Request],
    sizes: Mapping[int, int],
    slo_multiplier: float,
    min_rate: float,
    max_rate: float,
    iterations: int = 12,
) -> float:
    """Highest arrival rate whose mean TTFT stays within ``slo_multiplier``
    times the mean TTFT at ``min_rate``, by bisection over rescaled traces."""
    if not trace:
        raise TraceError("cannot measure throughput on an empty trace")
    if min_rate <= 0 or max_rate < min_rate:
        raise ConfigError("need 0 < min_rate <= max_rate")
    span_ms = max(r.arrival_ms for r in trace) or 1.0
    base_rate = len(trace) / (span_ms / 1000.0)

    def mean_ttft(rate: float) -> float:
        scaled = scale_trace(trace, base_rate / rate)
        report = run(config, scaled, sizes)
        return report.aggregates()["mean_ttft_ms"]

    slo = slo_multiplier * mean_ttft(min_rate)
    if mean_ttft(max_rate) <= slo:
        return max_rate
    lo, hi = min_rate, max_rate
    for _ in range(iterations):
        mid = (lo + hi) / 2.0
        if mean_ttft(mid) <= slo:
            lo = mid
        else:
            hi = mid
    return lo
