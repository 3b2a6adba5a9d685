"""Shared fixtures and brute-force oracles."""

from __future__ import annotations

import pytest

from ragsim.cost_model import CostProfile
from ragsim.tree import KnowledgeNode, KnowledgeTree, Tier


@pytest.fixture
def flat_profile() -> CostProfile:
    """Constant 7 ms everywhere."""
    return CostProfile((0, 100), (0, 100), ((7.0, 7.0), (7.0, 7.0)))


def linear_profile(max_tokens: int = 8192) -> CostProfile:
    """T(alpha, beta) = beta exactly (bilinear over a linear surface is exact)."""
    return CostProfile(
        (0, max_tokens),
        (0, max_tokens),
        ((0.0, float(max_tokens)), (0.0, float(max_tokens))),
    )


def build_tree(
    shape: dict[int, list[int]],
    sizes: dict[int, int],
    priorities: dict[int, float],
    tiers: dict[int, Tier] | None = None,
    gpu_capacity: int = 10**9,
    host_capacity: int = 10**9,
    policy=None,
) -> KnowledgeTree:
    """Construct a tree directly from an adjacency map.

    ``shape`` maps parent doc id -> child doc ids, with -1 as the root.
    Tier defaults to GPU for every node; host-tier nodes get a host copy.
    """
    kwargs = {"policy": policy} if policy is not None else {}
    tree = KnowledgeTree(gpu_capacity, host_capacity, **kwargs)
    tiers = tiers or {}
    by_doc: dict[int, KnowledgeNode] = {-1: tree.root}
    pending = [(-1, child) for child in shape.get(-1, [])]
    while pending:
        parent_doc, doc = pending.pop(0)
        parent = by_doc[parent_doc]
        tree._node_serial += 1
        node = KnowledgeNode(doc=doc, size=sizes[doc], parent=parent, serial=tree._node_serial)
        # back the requested priority with consistent stats: one access whose
        # amortized cost equals the priority (clock = 0)
        p = priorities.get(doc, 0.0)
        node.frequency = 1.0
        node.total_cost = p
        node.num_computed = 1
        node.avg_cost = p
        node.priority = p
        parent.children[doc] = node
        by_doc[doc] = node
        tier = tiers.get(doc, Tier.GPU)
        if tier is Tier.GPU:
            tree.gpu.used += node.size
            tree._on_enter_gpu(node)
        else:
            node.tier = Tier.HOST
            node.has_host_copy = True
            node.host_copies_made = 1
            tree.host.used += node.size
            tree._on_enter_host(node)
        pending.extend((doc, child) for child in shape.get(doc, []))
    return tree


def oracle_evict_gpu(tree: KnowledgeTree, required: int) -> list[int]:
    """Reference eviction order: rescan all GPU leaves, take the global
    minimum by the policy's eviction key, repeat. Returns doc ids."""
    key = tree.policy.eviction_key
    chosen: list[int] = []
    freed = 0
    removed: set[int] = set()

    def gpu_leaves() -> list[KnowledgeNode]:
        out = []
        stack = [tree.root]
        while stack:
            node = stack.pop()
            stack.extend(node.children.values())
            if node is tree.root or node.doc in removed or node.tier is not Tier.GPU:
                continue
            if node.pinned:
                continue
            if any(
                c.tier is Tier.GPU and c.doc not in removed for c in node.children.values()
            ):
                continue
            out.append(node)
        return out

    while freed < required:
        leaves = gpu_leaves()
        if not leaves:
            raise RuntimeError("oracle ran out of evictable leaves")
        victim = min(leaves, key=key)
        chosen.append(victim.doc)
        removed.add(victim.doc)
        freed += victim.size
    return chosen
