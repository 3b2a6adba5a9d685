"""Trace-driven simulator for multilevel KV-cache management in
retrieval-augmented LLM serving."""

from .config import RunConfig
from .cost_model import CostProfile, TransferModel, interpolate, synthetic_profile, transfer_time
from .policies import make_policy
from .scheduler import ReorderQueue, order_priority
from .simulator import Request, SimReport, SimulationEngine, measure_throughput, run
from .speculation import StagedRetrieval, generate_stages
from .tree import KnowledgeTree, PrefixMatch, Tier
from .workload import CorpusSpec, TraceSpec, generate_corpus, generate_trace

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "CostProfile",
    "TransferModel",
    "interpolate",
    "synthetic_profile",
    "transfer_time",
    "make_policy",
    "ReorderQueue",
    "order_priority",
    "Request",
    "SimReport",
    "SimulationEngine",
    "measure_throughput",
    "run",
    "StagedRetrieval",
    "generate_stages",
    "KnowledgeTree",
    "PrefixMatch",
    "Tier",
    "CorpusSpec",
    "TraceSpec",
    "generate_corpus",
    "generate_trace",
]
