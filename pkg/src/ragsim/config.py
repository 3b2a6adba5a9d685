"""Run configuration: one flat dataclass covering cache sizing, policy,
scheduling, speculation, and timing knobs, with a key=value file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .cost_model import (
    DEFAULT_GRID,
    GIB_PER_S,
    MIB,
    CostProfile,
    TransferModel,
    load_profile_csv,
    synthetic_profile,
)

__all__ = ["RunConfig", "parse_config_file", "format_config"]


@dataclass
class RunConfig:
    # cache sizing (tokens); host may be 0 to disable the second tier
    gpu_capacity_tokens: int = 16384
    host_capacity_tokens: int = 65536
    policy: str = "pgdsf"              # pgdsf | gdsf | lru | lfu
    frequency_decay: float = 1.0       # 1.0 = plain counting since start

    # request shape and scheduling
    k: int = 2                         # documents per request
    reorder: bool = True               # cache-aware queue reordering
    reorder_window: int = 32           # starvation window, in decisions
    max_prefill_bs: int = 4            # pool bound gating speculative prefills

    # staged retrieval / speculative pipelining
    dsp: bool = False
    stage_count: int = 4
    stage_interval_ms: float = 25.0
    convergence_stage: int = 2         # stage at which candidates settle

    # prefill latency model: profiled grid file, or synthetic surface params
    profile_path: str | None = None
    profile_base_ms: float = 5.0
    profile_per_token_ms: float = 0.05
    profile_attention_ms: float = 5e-5
    profile_grid: tuple[int, ...] = DEFAULT_GRID

    # transfer + decode timing
    kv_bytes_per_token: float = 0.5 * MIB
    pcie_bandwidth_bytes_per_ms: float = 16.0 * GIB_PER_S
    decode_ms_per_token: float = 20.0
    prefill_chunk_ms: float = 50.0     # iteration granularity for termination

    seed: int = 0
    validate: bool = False             # run invariant checks during the simulation
    validate_every: int = 1            # full structural scan every N-th event

    def cost_profile(self) -> CostProfile:
        if self.profile_path is not None:
            return load_profile_csv(self.profile_path)
        return synthetic_profile(
            alpha_grid=self.profile_grid,
            beta_grid=self.profile_grid,
            base_ms=self.profile_base_ms,
            per_token_ms=self.profile_per_token_ms,
            attention_ms=self.profile_attention_ms,
        )

    def transfer_model(self) -> TransferModel:
        return TransferModel(
            bandwidth_bytes_per_ms=self.pcie_bandwidth_bytes_per_ms,
            kv_bytes_per_token=self.kv_bytes_per_token,
        )


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    field = _FIELD_TYPES[name]
    text = raw.strip()
    if field.type in ("bool",):
        if text.lower() in ("1", "true", "on", "yes"):
            return True
        if text.lower() in ("0", "false", "off", "no"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if field.type == "int":
        return int(text)
    if field.type == "float":
        return float(text)
    if field.type == "str | None":
        return None if text.lower() in ("", "none") else text
    if field.type == "str":
        return text
    if field.type == "tuple[int, ...]":
        return tuple(int(x) for x in text.split(",") if x.strip())
    raise ValueError(f"{name}: unsupported config field type {field.type}")


def parse_config_file(path: str) -> dict:
    """Read a flat ``key = value`` file; '#' starts a comment."""
    values: dict = {}
    with open(path) as fp:
        for lineno, line in enumerate(fp, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, raw = line.split("=", 1)
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw)
    return values


def format_config(config: RunConfig) -> str:
    """Effective-config block; feeding it back reproduces the run."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines)
