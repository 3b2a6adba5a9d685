"""Staged vector search and the speculative-pipelining controller.

Vector search is modeled as a sequence of stages, each emitting a candidate
top-k document sequence after a fixed interval; the final stage emits the
ground truth. While search runs, the controller may launch a speculative
prefill from the current candidates so generation overlaps retrieval. A
stage that changes the candidates marks the in-flight speculation for
termination (effective at its next iteration boundary) and starts a new one
only if the prefill pool has headroom, which keeps speculation from adding
load when the engine is already busy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Protocol

import numpy as np

__all__ = [
    "StagedRetrieval",
    "SpeculationOutcome",
    "SpeculationState",
    "PrefillPool",
    "next_stage",
    "on_stage_complete",
    "finalize",
    "generate_stages",
]


@dataclass(frozen=True)
class StagedRetrieval:
    """Per-stage candidate top-k sequences; the last stage is the ground truth."""

    stages: tuple[tuple[int, ...], ...]
    stage_interval_ms: float

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("need at least one retrieval stage")
        if self.stage_interval_ms < 0:
            raise ValueError("stage interval must be non-negative")
        k = len(self.stages[-1])
        if any(len(s) != k for s in self.stages):
            raise ValueError("top-k must be consistent across stages")

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def total_ms(self) -> float:
        return self.num_stages * self.stage_interval_ms

    @property
    def final_docs(self) -> tuple[int, ...]:
        return self.stages[-1]


class SpeculationOutcome(Enum):
    PENDING = "pending"
    CONFIRMED = "confirmed"
    WASTED = "wasted"


@dataclass
class SpeculationState:
    """Controller state for one request's retrieval/speculation lifecycle."""

    request_id: int
    current_docs: tuple[int, ...] = ()
    active: Any = None  # handle of the live speculative generation, if any
    outcome: SpeculationOutcome = SpeculationOutcome.PENDING
    speculations: int = 0
    terminations: int = 0
    actions: list[str] = field(default_factory=list)


class PrefillPool(Protocol):
    """What the controller needs from the engine's prefill pool."""

    def size(self) -> int: ...

    def insert(self, request_id: int, docs: tuple[int, ...]) -> Any: ...

    def terminate(self, handle: Any) -> None: ...


def next_stage(staged: StagedRetrieval, stage_index: int) -> tuple[int, ...]:
    """Candidate top-k after ``stage_index`` (0-based) completes."""
    if not 0 <= stage_index < staged.num_stages:
        raise IndexError(f"stage {stage_index} out of range ({staged.num_stages} stages)")
    return staged.stages[stage_index]


def on_stage_complete(
    state: SpeculationState,
    new_docs: tuple[int, ...],
    pool: PrefillPool,
    max_prefill_bs: int,
) -> list[str]:
    """Apply one intermediate stage result; returns the actions taken.

    Unchanged candidates leave the previous generation running. Changed
    candidates terminate it (after its current iteration) and start a new
    speculation only while ``pool.size() < max_prefill_bs``.
    """
    new_docs = tuple(new_docs)
    actions: list[str] = []
    if new_docs != state.current_docs:
        if state.active is not None:
            pool.terminate(state.active)
            state.active = None
            state.terminations += 1
            actions.append("terminate")
        if pool.size() < max_prefill_bs:
            state.active = pool.insert(state.request_id, new_docs)
            state.speculations += 1
            actions.append("speculate")
        else:
            actions.append("defer")
    else:
        actions.append("hold")
    state.current_docs = new_docs
    state.actions.extend(actions)
    return actions


def finalize(state: SpeculationState, final_docs: tuple[int, ...]) -> SpeculationOutcome:
    """Resolve the request once retrieval completes.

    The live speculation is confirmed when its documents match the final
    top-k; otherwise it is wasted and the caller must run a fresh generation
    with the final documents.
    """
    final_docs = tuple(final_docs)
    if state.active is not None and tuple(getattr(state.active, "docs", ())) == final_docs:
        state.outcome = SpeculationOutcome.CONFIRMED
        state.actions.append("confirm")
    else:
        state.outcome = SpeculationOutcome.WASTED
        state.actions.append("regenerate")
    state.current_docs = final_docs
    return state.outcome


def generate_stages(
    ground_truth: tuple[int, ...],
    num_stages: int,
    convergence_stage: int,
    corpus_ids: np.ndarray,
    rng: np.random.Generator,
    stage_interval_ms: float,
) -> StagedRetrieval:
    """Synthesize a staged retrieval whose candidates settle at ``convergence_stage``.

    Stages before convergence carry the ground truth with one random
    perturbation (swap two ranks, or substitute one document from the
    corpus); stages at and after convergence equal the ground truth.
    """
    ground_truth = tuple(ground_truth)
    if not 1 <= convergence_stage <= num_stages:
        raise ValueError(f"convergence stage {convergence_stage} outside 1..{num_stages}")
    stages: list[tuple[int, ...]] = []
    for stage in range(1, num_stages + 1):
        if stage >= convergence_stage:
            stages.append(ground_truth)
        else:
            stages.append(_perturb(ground_truth, corpus_ids, rng))
    return StagedRetrieval(tuple(stages), stage_interval_ms)


def _perturb(
    docs: tuple[int, ...],
    corpus_ids: np.ndarray,
    rng: np.random.Generator,
) -> tuple[int, ...]:
    out = list(docs)
    k = len(out)
    if k >= 2 and rng.random() < 0.5:
        i, j = rng.choice(k, size=2, replace=False)
        out[i], out[j] = out[j], out[i]
        return tuple(out)
    pos = int(rng.integers(k))
    present = set(out)
    for _ in range(16):
        candidate = int(corpus_ids[int(rng.integers(len(corpus_ids)))])
        if candidate not in present:
            out[pos] = candidate
            return tuple(out)
    # tiny corpus fallback: leave the sequence unperturbed
    return tuple(out)
