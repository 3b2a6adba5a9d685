"""Prefill-latency and KV-transfer cost models.

The central object is a profiled latency grid ``T(alpha, beta)`` giving the
prefill time for a request with ``alpha`` cached tokens and ``beta``
non-cached tokens. Queries between knots are answered by bilinear
interpolation; queries outside the grid are clamped to the grid boundary.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass

__all__ = [
    "MalformedProfile",
    "CostProfile",
    "TransferModel",
    "interpolate",
    "transfer_time",
    "synthetic_profile",
    "load_profile_csv",
    "save_profile_csv",
    "DEFAULT_GRID",
    "MIB",
    "GIB_PER_S",
]

DEFAULT_GRID = (0, 256, 512, 1024, 2048, 4096)

MIB = 1024.0 * 1024.0
# bytes per millisecond for a 1 GiB/s link
GIB_PER_S = 1024.0**3 / 1000.0


class MalformedProfile(ValueError):
    """Raised when a latency grid violates its structural invariants."""


@dataclass(frozen=True)
class CostProfile:
    """Prefill-latency grid: ``times[i][j] = T(alpha_grid[i], beta_grid[j])`` in ms.

    Both grids must be strictly ascending with at least two points. Latencies
    must be non-negative and non-decreasing in beta for a fixed alpha (more
    non-cached tokens never make prefill cheaper).
    """

    alpha_grid: tuple[int, ...]
    beta_grid: tuple[int, ...]
    times: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        for name, grid in (("alpha", self.alpha_grid), ("beta", self.beta_grid)):
            if len(grid) < 2:
                raise MalformedProfile(f"{name} grid needs at least 2 points, got {len(grid)}")
            if any(a >= b for a, b in zip(grid, grid[1:])):
                raise MalformedProfile(f"{name} grid must be strictly ascending: {grid}")
        if len(self.times) != len(self.alpha_grid):
            raise MalformedProfile("times row count must match alpha grid")
        for i, row in enumerate(self.times):
            if len(row) != len(self.beta_grid):
                raise MalformedProfile(f"times row {i} length must match beta grid")
            if any(t < 0 for t in row):
                raise MalformedProfile(f"negative latency in row {i}")
            if any(a > b for a, b in zip(row, row[1:])):
                raise MalformedProfile(f"latency must be non-decreasing in beta (row {i})")


@dataclass(frozen=True)
class TransferModel:
    """Host<->GPU copy model: ``bandwidth`` in bytes/ms, KV footprint in bytes/token."""

    bandwidth_bytes_per_ms: float = 16.0 * GIB_PER_S
    kv_bytes_per_token: float = 0.5 * MIB

    def __post_init__(self) -> None:
        if self.bandwidth_bytes_per_ms <= 0:
            raise ValueError("bandwidth must be positive")
        if self.kv_bytes_per_token <= 0:
            raise ValueError("kv_bytes_per_token must be positive")


def _bracket(grid: tuple[int, ...], x: float) -> tuple[int, int, float]:
    """Locate ``x`` in ``grid``: (lo index, hi index, blend weight in [0, 1])."""
    if x <= grid[0]:
        return 0, 0, 0.0
    if x >= grid[-1]:
        last = len(grid) - 1
        return last, last, 0.0
    lo = bisect_right(grid, x) - 1
    if grid[lo] == x:
        return lo, lo, 0.0
    hi = lo + 1
    return lo, hi, (x - grid[lo]) / (grid[hi] - grid[lo])


def _blend(lo_val: float, hi_val: float, w: float) -> float:
    if w == 0.0:
        return lo_val
    if w == 1.0:
        return hi_val
    return lo_val + w * (hi_val - lo_val)


def interpolate(profile: CostProfile, alpha: float, beta: float) -> float:
    """Estimate prefill latency at (alpha cached, beta non-cached) tokens.

    Two linear blends along alpha at the bracketing beta knots, then one
    blend along beta. Exact at grid knots; out-of-grid inputs are clamped
    to the grid extremes.
    """
    ai, aj, aw = _bracket(profile.alpha_grid, alpha)
    bi, bj, bw = _bracket(profile.beta_grid, beta)
    t_low = _blend(profile.times[ai][bi], profile.times[aj][bi], aw)
    t_high = _blend(profile.times[ai][bj], profile.times[aj][bj], aw)
    return _blend(t_low, t_high, bw)


def transfer_time(model: TransferModel, tokens: int) -> float:
    """Milliseconds to move ``tokens`` worth of KV state across the bus."""
    if tokens < 0:
        raise ValueError(f"token count must be non-negative, got {tokens}")
    return tokens * model.kv_bytes_per_token / model.bandwidth_bytes_per_ms


def synthetic_profile(
    alpha_grid: tuple[int, ...] = DEFAULT_GRID,
    beta_grid: tuple[int, ...] = DEFAULT_GRID,
    base_ms: float = 5.0,
    per_token_ms: float = 0.05,
    attention_ms: float = 5e-5,
) -> CostProfile:
    """Analytic stand-in for an offline-profiled grid.

    ``T = base + per_token * beta + attention * beta * (alpha + beta)``: a
    fixed launch overhead, linear work per new token, and a quadratic
    attention term over the full context, so full-prefill cost grows
    superlinearly with sequence length.
    """
    if min(base_ms, per_token_ms, attention_ms) < 0:
        raise ValueError("profile coefficients must be non-negative")
    times = tuple(
        tuple(base_ms + per_token_ms * b + attention_ms * b * (a + b) for b in beta_grid)
        for a in alpha_grid
    )
    return CostProfile(tuple(alpha_grid), tuple(beta_grid), times)


def save_profile_csv(profile: CostProfile, path: str) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["alpha", "beta", "time_ms"])
        for i, a in enumerate(profile.alpha_grid):
            for j, b in enumerate(profile.beta_grid):
                writer.writerow([a, b, repr(profile.times[i][j])])


def load_profile_csv(path: str) -> CostProfile:
    """Read a knot-per-row grid file; the knots must form a full cartesian product."""
    cells: dict[tuple[int, int], float] = {}
    with open(path, newline="") as fp:
        reader = csv.DictReader(fp)
        if reader.fieldnames != ["alpha", "beta", "time_ms"]:
            raise MalformedProfile(f"expected header alpha,beta,time_ms in {path}")
        for row in reader:
            key = (int(row["alpha"]), int(row["beta"]))
            if key in cells:
                raise MalformedProfile(f"duplicate knot {key} in {path}")
            cells[key] = float(row["time_ms"])
    alphas = tuple(sorted({a for a, _ in cells}))
    betas = tuple(sorted({b for _, b in cells}))
    if len(cells) != len(alphas) * len(betas):
        raise MalformedProfile(f"grid in {path} is not a full cartesian product")
    times = tuple(tuple(cells[(a, b)] for b in betas) for a in alphas)
    return CostProfile(alphas, betas, times)
