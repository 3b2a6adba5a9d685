"""Replacement-policy scoring for knowledge-tree nodes.

Every policy assigns a node a scalar ``priority`` when the node is accessed;
eviction always removes the leaf with the lowest priority. The prefix-aware
default scores nodes by ``clock + avg_cost * frequency`` where ``avg_cost``
is the amortized compute time per non-cached token. The baselines reuse the
same tree but score differently:

* ``gdsf``   -- clock + frequency (recomputation cost proportional to size,
  so the per-token cost term cancels to a constant)
* ``lru``    -- global access sequence number
* ``lfu``    -- raw frequency, ties broken by least-recent access
"""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .tree import KnowledgeNode

__all__ = [
    "UnknownPolicy",
    "ReplacementPolicy",
    "PgdsfPolicy",
    "GdsfPolicy",
    "LruPolicy",
    "LfuPolicy",
    "make_policy",
    "POLICY_NAMES",
]

POLICY_NAMES = ("pgdsf", "gdsf", "lru", "lfu")


class UnknownPolicy(ValueError):
    """Raised for a policy name outside POLICY_NAMES."""


class ReplacementPolicy:
    name = "base"

    def score(self, node: KnowledgeNode, clock: float) -> float:
        raise NotImplementedError

    def eviction_key(self, node: KnowledgeNode) -> tuple:
        # Equal priorities: evict the larger node first (frees more memory per
        # step), then the lower document id; node creation order breaks the
        # residual tie when one document is cached under several prefixes.
        return (node.priority, -node.size, node.doc, node.serial)


class PgdsfPolicy(ReplacementPolicy):
    name = "pgdsf"

    def score(self, node: KnowledgeNode, clock: float) -> float:
        return clock + node.avg_cost * node.frequency


class GdsfPolicy(ReplacementPolicy):
    name = "gdsf"

    def score(self, node: KnowledgeNode, clock: float) -> float:
        return clock + node.frequency


class LruPolicy(ReplacementPolicy):
    name = "lru"

    def score(self, node: KnowledgeNode, clock: float) -> float:
        return float(node.last_access)


class LfuPolicy(ReplacementPolicy):
    name = "lfu"

    def score(self, node: KnowledgeNode, clock: float) -> float:
        return node.frequency

    def eviction_key(self, node: KnowledgeNode) -> tuple:
        # Frequency ties fall back to least-recently-used.
        return (node.priority, node.last_access, -node.size, node.doc, node.serial)


def make_policy(name: str) -> ReplacementPolicy:
    policies = {
        "pgdsf": PgdsfPolicy,
        "gdsf": GdsfPolicy,
        "lru": LruPolicy,
        "lfu": LfuPolicy,
    }
    try:
        return policies[name]()
    except KeyError:
        raise UnknownPolicy(f"unknown policy {name!r}, expected one of {POLICY_NAMES}") from None
