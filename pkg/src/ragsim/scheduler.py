"""Cache-aware reordering of the pending prefill queue.

Requests are picked by the ratio of cached context to required compute
(``cached_length / computation_length``): serving large-cached-context
requests first realizes their cache benefit before eviction destroys it,
and short-compute requests disturb the cache least. A per-request deadline
measured in scheduling decisions bounds how long any request can be
passed over, preventing starvation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

__all__ = ["PendingRequest", "order_priority", "ReorderQueue"]

# lookup callback: (doc_sequence, prompt_tokens) -> (cached_tokens, compute_tokens)
LookupFn = Callable[[tuple[int, ...], int], tuple[int, int]]


@dataclass
class PendingRequest:
    """One queued prefill with its cache-affinity score inputs."""

    item: Any
    doc_sequence: tuple[int, ...]
    prompt_tokens: int
    cached_length: int
    computation_length: int
    enqueue_seq: int
    deadline_seq: int
    serial: int = 0


def order_priority(pending: PendingRequest) -> float:
    """Cached tokens per token of required compute; higher is served first."""
    return pending.cached_length / pending.computation_length


class ReorderQueue:
    """Priority queue over pending prefills with a starvation window.

    ``window`` counts scheduling decisions, not wall-clock time: a request
    enqueued after ``n`` decisions is forcibly selected no later than
    decision ``n + window``. With ``reorder=False`` the queue degenerates
    to FIFO.
    """

    def __init__(self, window: int = 32, reorder: bool = True) -> None:
        if window < 1:
            raise ValueError("window must be at least 1")
        self.window = window
        self.reorder = reorder
        self._entries: list[PendingRequest] = []
        self._decisions = 0
        self._serial = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    @property
    def decisions(self) -> int:
        return self._decisions

    def push(
        self,
        item: Any,
        doc_sequence: tuple[int, ...],
        prompt_tokens: int,
        lookup: LookupFn,
    ) -> PendingRequest:
        cached, compute = lookup(doc_sequence, prompt_tokens)
        entry = PendingRequest(
            item=item,
            doc_sequence=tuple(doc_sequence),
            prompt_tokens=prompt_tokens,
            cached_length=cached,
            computation_length=compute,
            enqueue_seq=self._decisions,
            deadline_seq=self._decisions + self.window,
            serial=self._serial,
        )
        self._serial += 1
        self._entries.append(entry)
        return entry

    def requeue(self, entry: PendingRequest) -> None:
        """Return an entry whose admission failed; it keeps its deadline."""
        self._entries.append(entry)

    def remove(self, item: Any) -> PendingRequest | None:
        for i, entry in enumerate(self._entries):
            if entry.item is item:
                return self._entries.pop(i)
        return None

    def rescan(self, lookup: LookupFn) -> None:
        """Refresh every entry's cached/compute lengths against the live cache."""
        for entry in self._entries:
            cached, compute = lookup(entry.doc_sequence, entry.prompt_tokens)
            entry.cached_length = cached
            entry.computation_length = compute

    def pick_next(self) -> PendingRequest:
        """Pop the next request to admit.

        Overdue requests (deadline reached) are served oldest-first; otherwise
        the highest OrderPriority wins, ties broken FIFO.
        """
        if not self._entries:
            raise IndexError("pick_next on empty queue")
        now = self._decisions
        if self.reorder:
            overdue = [e for e in self._entries if e.deadline_seq <= now]
            if overdue:
                chosen = min(overdue, key=lambda e: (e.enqueue_seq, e.serial))
            else:
                chosen = min(
                    self._entries,
                    key=lambda e: (-order_priority(e), e.enqueue_seq, e.serial),
                )
        else:
            chosen = min(self._entries, key=lambda e: (e.enqueue_seq, e.serial))
        self._entries.remove(chosen)
        self._decisions += 1
        return chosen
