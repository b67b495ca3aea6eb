import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedmob.channel import (ChannelParams, ChannelState, CompressionSpec, PrivacySpec,
                            capacity, compress, perturb_gradient, prepare_update,
                            sample_channel)

PARAMS = ChannelParams(beta_mean=1.0, p_max=1.0, sigma_w2=1.0)


class TestSampleChannel:
    def test_same_seed_same_block_identical(self):
        a = sample_channel(PARAMS, 3, seed=42)
        b = sample_channel(PARAMS, 3, seed=42)
        assert a == b

    def test_block_fading_holds_within_block(self):
        params = ChannelParams(beta_mean=1.0, p_max=1.0, sigma_w2=1.0, block_length=2)
        assert sample_channel(params, 0, seed=7) == sample_channel(params, 1, seed=7)
        assert sample_channel(params, 2, seed=7) != sample_channel(params, 0, seed=7)

    def test_seed_key_tuples_supported(self):
        a = sample_channel(PARAMS, 0, seed=(5, 4, 17))
        b = sample_channel(PARAMS, 0, seed=(5, 4, 17))
        c = sample_channel(PARAMS, 0, seed=(5, 4, 18))
        assert a == b and a != c

    def test_unit_mean_exponential(self):
        # 1e5 draws: sample mean of |h|^2 within 2% of 1.0
        draws = np.array([sample_channel(PARAMS, r, seed=123).h_mag2
                          for r in range(100_000)])
        assert abs(draws.mean() - 1.0) < 0.02

    def test_power_pinned_to_max(self):
        state = sample_channel(PARAMS, 0, seed=1)
        assert state.power == PARAMS.p_max
        assert state.beta == PARAMS.beta_mean


class TestCapacity:
    def test_snr_anchors_exact(self):
        for snr, expect in [(0.0, 0.0), (1.0, 1.0), (3.0, 2.0)]:
            state = ChannelState(beta=1.0, h_mag2=snr, power=1.0)
            assert capacity(state, PARAMS) == expect

    def test_log2_of_five(self):
        params = ChannelParams(beta_mean=2.0, p_max=0.5, sigma_w2=0.25)
        state = ChannelState(beta=2.0, h_mag2=1.0, power=0.5)
        assert capacity(state, params) == pytest.approx(math.log2(5.0), abs=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            capacity(ChannelState(beta=1.0, h_mag2=float("inf"), power=1.0), PARAMS)

    @settings(max_examples=200, deadline=None)
    @given(p=st.floats(0, 100), b=st.floats(0.01, 100), h=st.floats(0, 100),
           bump=st.floats(0.001, 10))
    def test_monotone_in_each_argument(self, p, b, h, bump):
        base = capacity(ChannelState(beta=b, h_mag2=h, power=p), PARAMS)
        assert capacity(ChannelState(beta=b, h_mag2=h, power=p + bump), PARAMS) >= base
        assert capacity(ChannelState(beta=b + bump, h_mag2=h, power=p), PARAMS) >= base
        assert capacity(ChannelState(beta=b, h_mag2=h + bump, power=p), PARAMS) >= base


class TestPerturb:
    def test_zero_variance_is_identity(self):
        g = np.array([1.0, 2.0, 3.0])
        out = perturb_gradient(g, PrivacySpec(sigma_p2=0.0), np.random.default_rng(0))
        assert np.array_equal(out, g)

    def test_disabled_returns_input_bitwise(self):
        g = np.array([0.1, -0.5, 2.5])
        out = perturb_gradient(g, PrivacySpec(sigma_p2=4.0, enabled=False),
                               np.random.default_rng(0))
        assert np.array_equal(out, g)

    def test_monte_carlo_variance(self):
        # 1e5 perturbations of the zero vector, sigma^2 = 4: per-coordinate
        # sample variance within 3%
        rng = np.random.default_rng(99)
        spec = PrivacySpec(sigma_p2=4.0)
        draws = np.stack([perturb_gradient(np.zeros(3), spec, rng)
                          for _ in range(100_000)])
        var = draws.var(axis=0)
        assert np.all(np.abs(var - 4.0) < 0.12)


class TestCompress:
    def test_mode_none_identity(self):
        g = np.array([3.0, -1.0, 2.0])
        assert np.array_equal(compress(g, CompressionSpec(mode="none")), g)

    def test_keep_fraction_one_identity(self):
        g = np.array([3.0, -1.0, 2.0, 0.5])
        spec = CompressionSpec(mode="top-fraction", keep_fraction=1.0)
        assert np.array_equal(compress(g, spec), g)

    def test_top_half_keeps_largest_magnitudes(self):
        spec = CompressionSpec(mode="top-fraction", keep_fraction=0.5)
        out = compress(np.array([3.0, -1.0, 2.0, 0.5]), spec)
        assert np.array_equal(out, [3.0, 0.0, 2.0, 0.0])

    def test_ties_break_to_lowest_index(self):
        spec = CompressionSpec(mode="top-fraction", keep_fraction=0.5)
        out = compress(np.array([1.0, -1.0, 1.0]), spec)  # k = ceil(1.5) = 2
        assert np.array_equal(out, [1.0, -1.0, 0.0])

    def test_empty_vector_rejected(self):
        with pytest.raises(ValueError):
            compress(np.array([]), CompressionSpec(mode="none"))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=32),
           st.floats(0.01, 1.0))
    def test_norm_never_grows(self, values, keep):
        g = np.asarray(values)
        spec = CompressionSpec(mode="top-fraction", keep_fraction=keep)
        assert np.linalg.norm(compress(g, spec)) <= np.linalg.norm(g) + 1e-9

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=32),
           st.booleans(), st.floats(0.01, 1.0))
    def test_support_size_exact(self, magnitudes, flip, keep):
        g = np.asarray(magnitudes) * (-1.0 if flip else 1.0)
        spec = CompressionSpec(mode="top-fraction", keep_fraction=keep)
        out = compress(g, spec)
        assert np.count_nonzero(out) == math.ceil(keep * g.size)


class TestSpecs:
    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            ChannelParams(beta_mean=0.0, p_max=1.0, sigma_w2=1.0)
        with pytest.raises(ValueError):
            ChannelParams(beta_mean=1.0, p_max=1.0, sigma_w2=1.0, block_length=0)
        with pytest.raises(ValueError):
            CompressionSpec(mode="top-fraction", keep_fraction=0.0)
        with pytest.raises(ValueError):
            PrivacySpec(sigma_p2=-1.0)

    def test_prepare_update_orderings(self):
        g = np.array([5.0, 0.1, -4.0, 0.2])
        privacy = PrivacySpec(sigma_p2=1.0)
        comp = CompressionSpec(mode="top-fraction", keep_fraction=0.5)
        first = prepare_update(g, privacy, comp, np.random.default_rng(3),
                               noise_first=True)
        second = prepare_update(g, privacy, comp, np.random.default_rng(3),
                                noise_first=False)
        # noise-first may promote small coordinates; compress-first zeroes two
        assert np.count_nonzero(first) == 2
        assert np.count_nonzero(second) == 4  # noise lands on zeroed slots too
