import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import RegularGridInterpolator

from ragsim.cost_model import (
    GIB_PER_S,
    MIB,
    CostProfile,
    MalformedProfile,
    TransferModel,
    interpolate,
    load_profile_csv,
    save_profile_csv,
    synthetic_profile,
    transfer_time,
)

HAND_GRID = CostProfile((0, 100), (0, 100), ((0.0, 10.0), (2.0, 14.0)))


class TestInterpolate:
    def test_hand_computed_midpoint(self):
        # alpha blend at beta=0: 0 -> 2 gives 1; at beta=100: 10 -> 14 gives 12;
        # beta blend: 1 + 0.5 * (12 - 1) = 6.5
        assert interpolate(HAND_GRID, 50, 50) == pytest.approx(6.5, abs=1e-9)

    @pytest.mark.parametrize("i", [0, 1])
    @pytest.mark.parametrize("j", [0, 1])
    def test_exact_at_knots(self, i, j):
        a = HAND_GRID.alpha_grid[i]
        b = HAND_GRID.beta_grid[j]
        assert interpolate(HAND_GRID, a, b) == HAND_GRID.times[i][j]

    def test_exact_at_knots_dense_grid(self):
        profile = synthetic_profile()
        for i, a in enumerate(profile.alpha_grid):
            for j, b in enumerate(profile.beta_grid):
                assert interpolate(profile, a, b) == profile.times[i][j]

    def test_constant_field(self, flat_profile):
        for a, b in [(0, 0), (3, 99), (50, 50), (100, 100), (500, 7)]:
            assert interpolate(flat_profile, a, b) == 7.0

    def test_clamps_outside_grid(self):
        assert interpolate(HAND_GRID, 1000, 1000) == 14.0
        assert interpolate(HAND_GRID, 1000, 0) == 2.0
        assert interpolate(HAND_GRID, 0, 1000) == 10.0

    def test_continuity_at_interior_knot(self):
        profile = synthetic_profile()
        a, b = 512, 1024
        eps = 1e-6
        center = interpolate(profile, a, b)
        for da, db in [(eps, 0), (-eps, 0), (0, eps), (0, -eps)]:
            assert interpolate(profile, a + da, b + db) == pytest.approx(center, abs=1e-3)

    @given(
        a=st.floats(min_value=0, max_value=4096),
        b=st.floats(min_value=0, max_value=4096),
    )
    @settings(max_examples=200, deadline=None)
    def test_within_surrounding_knots_and_matches_scipy(self, a, b):
        profile = synthetic_profile()
        got = interpolate(profile, a, b)
        alphas = np.array(profile.alpha_grid, dtype=float)
        betas = np.array(profile.beta_grid, dtype=float)
        values = np.array(profile.times)
        ref = RegularGridInterpolator((alphas, betas), values, method="linear")
        assert got == pytest.approx(float(ref([[a, b]])[0]), rel=1e-9, abs=1e-9)
        ia = np.searchsorted(alphas, a, side="right") - 1
        ib = np.searchsorted(betas, b, side="right") - 1
        ia2 = min(ia + 1, len(alphas) - 1)
        ib2 = min(ib + 1, len(betas) - 1)
        corners = [values[x][y] for x in (ia, ia2) for y in (ib, ib2)]
        assert min(corners) - 1e-9 <= got <= max(corners) + 1e-9


class TestProfileValidation:
    def test_rejects_short_grid(self):
        with pytest.raises(MalformedProfile):
            CostProfile((0,), (0, 1), ((1.0, 1.0),))

    def test_rejects_unsorted_grid(self):
        with pytest.raises(MalformedProfile):
            CostProfile((100, 0), (0, 100), ((1.0, 1.0), (1.0, 1.0)))

    def test_rejects_negative_latency(self):
        with pytest.raises(MalformedProfile):
            CostProfile((0, 1), (0, 1), ((0.0, -1.0), (0.0, 1.0)))

    def test_rejects_decreasing_in_beta(self):
        with pytest.raises(MalformedProfile):
            CostProfile((0, 1), (0, 1), ((2.0, 1.0), (2.0, 2.0)))

    def test_rejects_ragged_rows(self):
        with pytest.raises(MalformedProfile):
            CostProfile((0, 1), (0, 1), ((1.0,), (1.0, 2.0)))


class TestTransferTime:
    def test_zero_tokens(self):
        assert transfer_time(TransferModel(), 0) == 0.0

    def test_llama7b_scale(self):
        # 1000 tokens at 0.5 MiB/token over a 16 GiB/s link
        model = TransferModel(
            bandwidth_bytes_per_ms=16.0 * GIB_PER_S, kv_bytes_per_token=0.5 * MIB
        )
        assert transfer_time(model, 1000) == pytest.approx(30.517578125, abs=1e-9)

    def test_linear(self):
        model = TransferModel()
        assert transfer_time(model, 2000) == pytest.approx(2 * transfer_time(model, 1000))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            transfer_time(TransferModel(), -1)

    def test_rejects_bad_model(self):
        with pytest.raises(ValueError):
            TransferModel(bandwidth_bytes_per_ms=0.0)


class TestSyntheticProfile:
    def test_constant_when_linear_terms_zero(self):
        profile = synthetic_profile(base_ms=3.0, per_token_ms=0.0, attention_ms=0.0)
        assert all(t == 3.0 for row in profile.times for t in row)

    def test_zero_alpha_column_is_full_prefill(self):
        c0, c1, c2 = 2.0, 0.1, 1e-4
        profile = synthetic_profile(base_ms=c0, per_token_ms=c1, attention_ms=c2)
        for j, b in enumerate(profile.beta_grid):
            assert profile.times[0][j] == pytest.approx(c0 + c1 * b + c2 * b * b)

    def test_full_vs_incremental_gap_grows(self):
        # cost of recomputing everything vs only the 32 prompt tokens
        profile = synthetic_profile()
        ratios = []
        for n in (256, 512, 1024, 2048, 4096):
            full = interpolate(profile, 0, n)
            incremental = interpolate(profile, n - 32, 32)
            ratios.append(full / incremental)
        assert all(r2 > r1 for r1, r2 in zip(ratios, ratios[1:]))

    def test_rejects_negative_coefficients(self):
        with pytest.raises(ValueError):
            synthetic_profile(base_ms=-1.0)


class TestProfileCsv:
    def test_round_trip(self, tmp_path):
        profile = synthetic_profile(alpha_grid=(0, 128, 256), beta_grid=(0, 64))
        path = tmp_path / "profile.csv"
        save_profile_csv(profile, str(path))
        loaded = load_profile_csv(str(path))
        assert loaded == profile

    def test_rejects_incomplete_grid(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("alpha,beta,time_ms\n0,0,1.0\n0,10,2.0\n10,0,1.5\n")
        with pytest.raises(MalformedProfile):
            load_profile_csv(str(path))

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,t\n0,0,1.0\n")
        with pytest.raises(MalformedProfile):
            load_profile_csv(str(path))


def test_interpolation_feeds_priority_math():
    # T = 10 ms over beta = 5 non-cached tokens costs 2 ms/token
    profile = CostProfile((0, 10), (0, 10), ((10.0, 10.0), (10.0, 10.0)))
    assert interpolate(profile, 0, 5) / 5 == pytest.approx(2.0)


def test_math_isfinite_everywhere():
    profile = synthetic_profile()
    for a in (0, 1, 100, 5000):
        for b in (0, 1, 100, 5000):
            assert math.isfinite(interpolate(profile, a, b))
