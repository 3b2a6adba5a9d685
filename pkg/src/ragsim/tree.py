"""Prefix tree over document-id sequences with two-tier KV placement.

Each node represents one document's cached KV state; the path from the root
to a node is the exact document order those tensors were computed under, so
lookups are longest-prefix matches. Nodes live in one of two tiers (GPU or
host) with the structural rule that GPU-resident nodes form a prefix-closed
top segment of the tree: a node may only be in GPU memory if its parent is.

Eviction removes minimum-priority *tier leaves* (nodes whose children are
not in the same tier). A node's first GPU eviction copies its state to host
memory; the host keeps that copy until the node is evicted from the cache
entirely, so later GPU evictions of the same node are zero-copy drops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .cost_model import CostProfile, interpolate
from .policies import PgdsfPolicy, ReplacementPolicy

__all__ = [
    "Tier",
    "CacheError",
    "InsufficientEvictableCapacity",
    "UnbalancedPin",
    "TierState",
    "KnowledgeNode",
    "PrefixMatch",
    "KnowledgeTree",
    "ROOT_DOC",
]

# sentinel document id for the shared system-prompt root
ROOT_DOC = -1


class Tier(Enum):
    GPU = "gpu"
    HOST = "host"
    FREE = "free"


class CacheError(Exception):
    pass


class InsufficientEvictableCapacity(CacheError):
    """Pinned or absent nodes prevent reclaiming the requested token count."""


class UnbalancedPin(CacheError):
    """unpin() without a matching pin()."""


@dataclass
class TierState:
    """Token budget, occupancy, and the tier's logical clock."""

    capacity: int
    used: int = 0
    clock: float = 0.0

    @property
    def free(self) -> int:
        return self.capacity - self.used


@dataclass(eq=False)
class KnowledgeNode:
    """Metadata for one document's cached KV state.

    ``total_cost`` accumulates per-non-cached-token compute time samples
    (ms/token); ``avg_cost`` is their mean. ``priority`` is the policy score
    as of the last access, computed against ``clock_at_update``.
    """

    doc: int
    size: int
    parent: KnowledgeNode | None = None
    children: dict[int, KnowledgeNode] = field(default_factory=dict)
    tier: Tier = Tier.GPU
    has_host_copy: bool = False
    frequency: float = 0.0
    total_cost: float = 0.0
    num_computed: int = 0
    avg_cost: float = 0.0
    priority: float = 0.0
    clock_at_update: float = 0.0
    last_access: int = 0
    pin_count: int = 0
    host_copies_made: int = 0
    # creation order; the same document can appear under several prefixes,
    # so (size, doc) alone does not totally order eviction ties
    serial: int = 0

    @property
    def pinned(self) -> bool:
        return self.pin_count > 0

    def __repr__(self) -> str:
        return (
            f"KnowledgeNode(doc={self.doc}, size={self.size}, tier={self.tier.value}, "
            f"freq={self.frequency:g}, priority={self.priority:g})"
        )


@dataclass
class PrefixMatch:
    """Longest cached prefix of a query sequence, with a tier breakdown.

    ``matched_nodes`` follows query order from the root; ``miss_docs`` is the
    unmatched suffix. Host tokens count nodes resident *only* in host memory.
    """

    matched_nodes: list[KnowledgeNode]
    gpu_hit_tokens: int
    host_hit_tokens: int
    miss_docs: list[int]

    @property
    def hit_tokens(self) -> int:
        return self.gpu_hit_tokens + self.host_hit_tokens

    @property
    def hit_docs(self) -> int:
        return len(self.matched_nodes)


class KnowledgeTree:
    """Two-tier prefix cache with priority-based replacement.

    Single-writer: all mutation happens on one control thread. Lookups never
    mutate; access statistics are updated explicitly via ``update_node``.
    """

    def __init__(
        self,
        gpu_capacity: int,
        host_capacity: int,
        policy: ReplacementPolicy | None = None,
        frequency_decay: float = 1.0,
    ) -> None:
        if gpu_capacity <= 0:
            raise ValueError("gpu capacity must be positive")
        if host_capacity < 0:
            raise ValueError("host capacity must be non-negative")
        if not 0.0 < frequency_decay <= 1.0:
            raise ValueError("frequency_decay must be in (0, 1]")
        self.policy = policy if policy is not None else PgdsfPolicy()
        self.frequency_decay = frequency_decay
        self.gpu = TierState(gpu_capacity)
        self.host = TierState(host_capacity)
        # The root holds the shared system prompt, modeled as a zero-size
        # anchor that is never evicted.
        self.root = KnowledgeNode(doc=ROOT_DOC, size=0, pin_count=1)
        self._gpu_leaves: set[KnowledgeNode] = {self.root}
        self._host_leaves: set[KnowledgeNode] = set()
        self._access_seq = 0
        self._node_serial = 0
        self._reserved = 0
        self.gpu_evictions = 0
        self.host_evictions = 0
        self.swap_out_count = 0
        self.swap_out_tokens = 0
        self.dropped_evictions = 0

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def lookup(self, doc_sequence: list[int] | tuple[int, ...]) -> PrefixMatch:
        """Walk children from the root; stop at the first absent document."""
        matched: list[KnowledgeNode] = []
        gpu_tokens = 0
        host_tokens = 0
        node = self.root
        idx = 0
        for doc in doc_sequence:
            child = node.children.get(doc)
            if child is None:
                break
            matched.append(child)
            if child.tier is Tier.GPU:
                gpu_tokens += child.size
            else:
                host_tokens += child.size
            node = child
            idx += 1
        return PrefixMatch(matched, gpu_tokens, host_tokens, list(doc_sequence[idx:]))

    def nodes(self) -> list[KnowledgeNode]:
        """All document nodes in deterministic depth-first order."""
        out: list[KnowledgeNode] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node is not self.root:
                out.append(node)
            for doc in sorted(node.children, reverse=True):
                stack.append(node.children[doc])
        return out

    @property
    def gpu_free(self) -> int:
        return self.gpu.free

    @property
    def host_free(self) -> int:
        return self.host.free

    # ------------------------------------------------------------------
    # access statistics
    # ------------------------------------------------------------------

    def update_node(
        self,
        node: KnowledgeNode,
        is_cached: bool,
        alpha: int,
        beta: int,
        profile: CostProfile | None = None,
    ) -> None:
        """Record one retrieval of ``node`` by a request with ``alpha`` cached
        and ``beta`` non-cached tokens.

        A non-cached access adds one amortized cost sample ``T(alpha, beta) /
        beta``; a cached access only bumps the frequency. Either way the
        priority is recomputed against the node's current tier clock.
        """
        self._access_seq += 1
        node.last_access = self._access_seq
        node.frequency = node.frequency * self.frequency_decay + 1.0
        if not is_cached:
            if beta <= 0:
                raise ValueError("non-cached update requires beta > 0")
            if profile is None:
                raise ValueError("non-cached update requires a cost profile")
            estimated = interpolate(profile, alpha, beta)
            node.total_cost += estimated / beta
            node.num_computed += 1
            node.avg_cost = node.total_cost / node.num_computed
        clock = self._tier_state(node.tier).clock
        node.clock_at_update = clock
        node.priority = self.policy.score(node, clock)

    # ------------------------------------------------------------------
    # placement
    # ------------------------------------------------------------------

    def insert_path(
        self,
        doc_sequence: list[int] | tuple[int, ...],
        sizes: list[int] | tuple[int, ...],
    ) -> list[KnowledgeNode]:
        """Extend the tree along ``doc_sequence``, creating missing nodes in GPU.

        Returns the full node path in query order. Existing nodes are left
        untouched; GPU space is reclaimed as needed for the new nodes.
        """
        if len(doc_sequence) != len(sizes):
            raise ValueError("doc_sequence and sizes must have equal length")
        path: list[KnowledgeNode] = []
        node = self.root
        try:
            for doc, size in zip(doc_sequence, sizes):
                child = node.children.get(doc)
                if child is None:
                    if size <= 0:
                        raise ValueError(f"document {doc} must have positive size")
                    if self.gpu.free < size:
                        self.evict_gpu(size - self.gpu.free)
                    self._node_serial += 1
                    child = KnowledgeNode(
                        doc=doc, size=size, parent=node, serial=self._node_serial
                    )
                    node.children[doc] = child
                    self.gpu.used += size
                    self._on_enter_gpu(child)
                elif child.tier is Tier.HOST:
                    # a path node demoted since it was last seen must come back
                    # up before we hang new GPU nodes beneath it
                    if self.gpu.free < child.size:
                        self.evict_gpu(child.size - self.gpu.free)
                    self.load_to_gpu([child])
                # eviction for deeper path nodes must not reclaim this one
                child.pin_count += 1
                path.append(child)
                node = child
        finally:
            for visited in path:
                visited.pin_count -= 1
        return path

    def load_to_gpu(self, nodes: list[KnowledgeNode]) -> int:
        """Promote host-resident ``nodes`` (in root-to-leaf order) into GPU.

        The host copy is retained, so a later GPU eviction is a zero-copy
        drop. Returns the token count moved across the bus. The caller must
        have ensured GPU headroom.
        """
        moved = 0
        for node in nodes:
            if node.tier is not Tier.HOST:
                continue
            if node.parent is not None and node.parent.tier is not Tier.GPU:
                raise CacheError(f"cannot promote {node!r} under a non-GPU parent")
            if self.gpu.free < node.size:
                raise InsufficientEvictableCapacity(
                    f"no GPU headroom to load {node.size} tokens (free={self.gpu.free})"
                )
            self._on_leave_host(node)
            node.tier = Tier.GPU
            self.gpu.used += node.size
            self._on_enter_gpu(node)
            moved += node.size
        return moved

    def reserve_gpu(self, tokens: int) -> None:
        """Claim transient GPU space for a request's working tokens."""
        if tokens < 0:
            raise ValueError("reservation must be non-negative")
        if self.gpu.free < tokens:
            self.evict_gpu(tokens - self.gpu.free)
        self.gpu.used += tokens
        self._reserved += tokens

    def release_gpu(self, tokens: int) -> None:
        if tokens < 0 or tokens > self._reserved:
            raise ValueError(f"cannot release {tokens} of {self._reserved} reserved tokens")
        self.gpu.used -= tokens
        self._reserved -= tokens

    # ------------------------------------------------------------------
    # eviction
    # ------------------------------------------------------------------

    def evict_gpu(self, required_size: int) -> list[KnowledgeNode]:
        """Demote minimum-priority GPU leaves until ``required_size`` tokens free up.

        The GPU clock rises to the maximum evicted priority. A first eviction
        copies the node's state to host memory (charged to the swap counters);
        repeat evictions of a node that still has a host copy drop the GPU
        copy with no transfer.
        """
        evicted: list[KnowledgeNode] = []
        freed = 0
        while freed < required_size:
            victim = self._min_leaf(self._gpu_leaves)
            if victim is None:
                raise InsufficientEvictableCapacity(
                    f"need {required_size - freed} more GPU tokens but all "
                    f"{len(self._gpu_leaves)} leaf nodes are pinned or absent"
                )
            self.gpu.clock = max(self.gpu.clock, victim.priority)
            self._demote_from_gpu(victim)
            self.gpu_evictions += 1
            evicted.append(victim)
            freed += victim.size
        return evicted

    def evict_host(self, required_size: int) -> list[KnowledgeNode]:
        """Free minimum-priority host leaves until ``required_size`` tokens free up.

        Evicted nodes leave the cache entirely: their metadata is pruned and
        their statistics are discarded. The host clock rises per the evicted
        priorities.
        """
        evicted: list[KnowledgeNode] = []
        freed = 0
        while freed < required_size:
            victim = self._min_leaf(self._host_leaves)
            if victim is None:
                raise InsufficientEvictableCapacity(
                    f"need {required_size - freed} more host tokens but no "
                    f"unpinned host leaf is available"
                )
            self.host.clock = max(self.host.clock, victim.priority)
            self._free_from_host(victim)
            self.host_evictions += 1
            evicted.append(victim)
            freed += victim.size
        return evicted

    # ------------------------------------------------------------------
    # pinning
    # ------------------------------------------------------------------

    def pin(self, nodes: list[KnowledgeNode]) -> None:
        for node in nodes:
            node.pin_count += 1

    def unpin(self, nodes: list[KnowledgeNode]) -> None:
        for node in nodes:
            if node.pin_count <= 0 or (node is self.root and node.pin_count <= 1):
                raise UnbalancedPin(f"unpin without matching pin for {node!r}")
            node.pin_count -= 1

    # ------------------------------------------------------------------
    # internals
    # ------------------------------------------------------------------

    def _tier_state(self, tier: Tier) -> TierState:
        return self.gpu if tier is Tier.GPU else self.host

    def _min_leaf(self, leaves: set[KnowledgeNode]) -> KnowledgeNode | None:
        candidates = [n for n in leaves if not n.pinned]
        if not candidates:
            return None
        return min(candidates, key=self.policy.eviction_key)

    def _has_child_in(self, node: KnowledgeNode, tier: Tier) -> bool:
        return any(c.tier is tier for c in node.children.values())

    def _on_enter_gpu(self, node: KnowledgeNode) -> None:
        if not self._has_child_in(node, Tier.GPU):
            self._gpu_leaves.add(node)
        parent = node.parent
        if parent is not None and parent in self._gpu_leaves:
            self._gpu_leaves.discard(parent)

    def _on_leave_gpu(self, node: KnowledgeNode) -> None:
        self._gpu_leaves.discard(node)
        parent = node.parent
        if (
            parent is not None
            and parent.tier is Tier.GPU
            and not any(c.tier is Tier.GPU for c in parent.children.values() if c is not node)
        ):
            self._gpu_leaves.add(parent)

    def _on_enter_host(self, node: KnowledgeNode) -> None:
        if not self._has_child_in(node, Tier.HOST):
            self._host_leaves.add(node)
        parent = node.parent
        if parent is not None and parent in self._host_leaves:
            self._host_leaves.discard(parent)

    def _on_leave_host(self, node: KnowledgeNode) -> None:
        self._host_leaves.discard(node)
        parent = node.parent
        if (
            parent is not None
            and parent.tier is Tier.HOST
            and not any(c.tier is Tier.HOST for c in parent.children.values() if c is not node)
        ):
            self._host_leaves.add(parent)

    def _demote_from_gpu(self, node: KnowledgeNode) -> None:
        self.gpu.used -= node.size
        self._on_leave_gpu(node)
        if node.has_host_copy:
            # swap-out-only-once: the host already holds this state
            node.tier = Tier.HOST
            self._on_enter_host(node)
            return
        if self.host.free < node.size:
            try:
                self.evict_host(node.size - self.host.free)
            except InsufficientEvictableCapacity:
                # Host cannot absorb the node; drop it outright, along with
                # any host-resident descendants it would otherwise orphan.
                self._drop_subtree(node)
                self.dropped_evictions += 1
                return
        node.tier = Tier.HOST
        node.has_host_copy = True
        node.host_copies_made += 1
        self.host.used += node.size
        self.swap_out_count += 1
        self.swap_out_tokens += node.size
        self._on_enter_host(node)

    def _free_from_host(self, node: KnowledgeNode) -> None:
        self.host.used -= node.size
        self._on_leave_host(node)
        node.tier = Tier.FREE
        node.has_host_copy = False
        self._prune(node)

    def _drop_subtree(self, node: KnowledgeNode) -> None:
        # node has already left GPU accounting; descendants are host-resident
        # by the hierarchy rule and lose their copies with it.
        descendants: list[KnowledgeNode] = []
        stack = list(node.children.values())
        while stack:
            child = stack.pop()
            stack.extend(child.children.values())
            if child.pinned:
                raise InsufficientEvictableCapacity(f"cannot drop pinned descendant {child!r}")
            descendants.append(child)
        for child in descendants:
            if child.tier is Tier.HOST:
                self.host.used -= child.size
                self._host_leaves.discard(child)
                child.tier = Tier.FREE
                child.has_host_copy = False
        node.tier = Tier.FREE
        node.has_host_copy = False
        node.children.clear()
        self._prune(node)

    def _prune(self, node: KnowledgeNode) -> None:
        parent = node.parent
        if parent is not None:
            parent.children.pop(node.doc, None)
        node.parent = None

    # ------------------------------------------------------------------
    # diagnostics
    # ------------------------------------------------------------------

    def snapshot(self) -> str:
        """Deterministic one-node-per-line dump for golden-file comparisons."""
        lines: list[str] = []

        def visit(node: KnowledgeNode, depth: int) -> None:
            lines.append(
                f"{depth}\t{node.doc}\t{node.tier.value}\t{node.size}\t"
                f"{node.frequency:.10g}\t{node.avg_cost:.10g}\t{node.priority:.10g}"
            )
            for doc in sorted(node.children):
                visit(node.children[doc], depth + 1)

        visit(self.root, 0)
        return "\n".join(lines)

    def check_invariants(self) -> None:
        """Assert structural invariants; called by the simulator in validate mode."""
        gpu_tokens = 0
        host_tokens = 0
        gpu_leaves: set[KnowledgeNode] = set()
        host_leaves: set[KnowledgeNode] = set()
        stack = [self.root]
        while stack:
            node = stack.pop()
            stack.extend(node.children.values())
            parent = node.parent
            if node.tier is Tier.GPU:
                gpu_tokens += node.size
                if parent is not None:
                    assert parent.tier is Tier.GPU, f"GPU node {node!r} under non-GPU parent"
                if not self._has_child_in(node, Tier.GPU):
                    gpu_leaves.add(node)
            elif node.tier is Tier.HOST:
                assert node.has_host_copy, f"host node {node!r} without host copy"
                assert parent is not None and parent.tier in (Tier.GPU, Tier.HOST), (
                    f"host node {node!r} under freed parent"
                )
                if not self._has_child_in(node, Tier.HOST):
                    host_leaves.add(node)
            else:
                raise AssertionError(f"freed node {node!r} still attached to the tree")
            if node.has_host_copy:
                host_tokens += node.size
            assert node.host_copies_made <= 1, (
                f"{node!r} copied to host more than once per residency"
            )
            if node.num_computed > 0:
                assert node.avg_cost == node.total_cost / node.num_computed
            expected = self.policy.score(node, node.clock_at_update)
            assert node.priority == expected, (
                f"stored priority {node.priority!r} != recomputed {expected!r} for {node!r}"
            )
        assert gpu_tokens + self._reserved == self.gpu.used, "GPU accounting drift"
        assert host_tokens == self.host.used, "host accounting drift"
        assert 0 <= self.gpu.used <= self.gpu.capacity, "GPU capacity violated"
        assert 0 <= self.host.used <= self.host.capacity, "host capacity violated"
        assert gpu_leaves == self._gpu_leaves, "GPU leaf set drift"
        assert host_leaves == self._host_leaves, "host leaf set drift"
