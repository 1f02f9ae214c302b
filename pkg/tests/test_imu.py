import numpy as np
import pytest

from conftest import shifted_imu_pair, smooth_trajectory
from evseen.imu import (
    ImuSequence,
    KalmanParams,
    build_pyramid,
    kalman_denoise,
    match_score,
    register,
    register_exhaustive,
)


def two_loop_score(s, t, b, l):
    """Deliberately naive re-implementation of the alignment score."""
    start_t = max(0, b)
    start_s = start_t - b
    total = 0.0
    for i in range(l):
        for ch in range(6):
            total += abs(s[start_s + i, ch] - t[start_t + i, ch])
    return total / (l * 6)


class TestKalman:
    def test_constant_fixed_point(self):
        seq = ImuSequence(np.full((200, 6), 3.25))
        out = kalman_denoise(seq, KalmanParams(1e-2, 0.5))
        assert (out.samples == 3.25).all()

    def test_white_noise_variance_reduction(self):
        rng = np.random.default_rng(5)
        seq = ImuSequence(rng.normal(0, 1, (10_000, 6)))
        out = kalman_denoise(seq, KalmanParams(1e-4, 1.0))
        assert out.samples.var() < 0.2 * seq.samples.var()

    def test_ramp_tracked_exactly_after_burn_in(self):
        slope = 0.01
        ramp = np.tile(np.arange(500.0)[:, None] * slope, (1, 6))
        out = kalman_denoise(ImuSequence(ramp))
        assert np.abs(out.samples[100:] - ramp[100:]).max() < 1e-3

    def test_measurement_noise_to_zero_recovers_input(self):
        rng = np.random.default_rng(1)
        seq = ImuSequence(rng.normal(0, 1, (50, 6)))
        out = kalman_denoise(seq, KalmanParams(1e-3, 1e-12))
        assert np.abs(out.samples - seq.samples).max() < 1e-6

    def test_length_preserved(self):
        seq = ImuSequence(np.zeros((77, 6)))
        assert len(kalman_denoise(seq)) == 77

    def test_param_validation(self):
        with pytest.raises(ValueError):
            KalmanParams(0.0, 1.0)
        with pytest.raises(ValueError):
            KalmanParams(1.0, -1.0)


class TestPyramid:
    def test_exact_division_lengths(self):
        seq = ImuSequence(np.random.default_rng(0).normal(size=(64, 6)))
        levels = build_pyramid(seq, 4)
        assert [lv.data.shape[0] for lv in levels] == [64, 16, 4]
        assert [lv.pool_factor for lv in levels] == [1, 4, 16]

    def test_block_means_hand_computed(self):
        data = np.tile(np.arange(1.0, 9.0)[:, None], (1, 6))
        levels = build_pyramid(ImuSequence(data), 2)
        assert np.allclose(levels[1].data[:, 0], [1.5, 3.5, 5.5, 7.5])
        assert np.allclose(levels[2].data[:, 0], [2.5, 6.5])

    def test_block_mean_consistency(self):
        rng = np.random.default_rng(7)
        seq = ImuSequence(rng.normal(size=(132, 6)))
        levels = build_pyramid(seq, 5)
        manual = seq.samples[:130].reshape(26, 5, 6).mean(axis=1)
        assert np.abs(levels[1].data - manual).max() < 1e-9
        manual2 = manual[:25].reshape(5, 5, 6).mean(axis=1)
        assert np.abs(levels[2].data - manual2).max() < 1e-9

    def test_constant_stays_constant(self):
        seq = ImuSequence(np.full((100, 6), 2.0))
        for level in build_pyramid(seq, 3):
            assert np.allclose(level.data, 2.0)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            build_pyramid(ImuSequence(np.zeros((15, 6))), 4)


class TestMatchScore:
    def test_identical(self):
        s = np.random.default_rng(0).normal(size=(50, 6))
        assert match_score(s, s, 0, 50) == 0.0

    def test_constant_offset(self):
        s = np.random.default_rng(0).normal(size=(50, 6))
        assert match_score(s, s + 1.0, 0, 50) == pytest.approx(1.0)

    def test_against_two_loop_oracle(self):
        rng = np.random.default_rng(42)
        s = rng.normal(size=(40, 6))
        t = rng.normal(size=(35, 6))
        for b, l in [(0, 20), (5, 30), (-8, 25), (10, 25)]:
            assert match_score(s, t, b, l) == pytest.approx(two_loop_score(s, t, b, l), abs=1e-9)

    def test_out_of_bounds_rejected(self):
        s = np.zeros((10, 6))
        with pytest.raises(ValueError):
            match_score(s, s, 8, 5)


class TestRegister:
    def test_exact_copy(self):
        rng = np.random.default_rng(3)
        seq = ImuSequence(smooth_trajectory(rng, 4000))
        reg = register(seq, ImuSequence(seq.samples.copy()))
        assert reg.bias_samples == 0
        assert reg.length == 4000
        assert reg.score == 0.0

    def test_known_delay_137(self):
        source, target, shift = shifted_imu_pair(20, n=20_000, shift=137, sigma=1e-3)
        reg = register(source, target)
        assert abs(reg.bias_samples - 137) <= 1
        assert abs(reg.bias_us - 137_000) <= 1000

    def test_oracle_equivalence_small(self):
        for seed in range(5):
            source, target, shift = shifted_imu_pair(seed, n=4000, sigma=0.005)
            hier = register(source, target)
            ref = register_exhaustive(source, target)
            assert abs(hier.bias_samples - ref.bias_samples) <= 1
            assert hier.score == pytest.approx(ref.score, rel=1e-9)
            assert hier.evaluations < ref.evaluations

    def test_exhaustive_matches_two_loop_argmin_tiny(self):
        # independent brute force over every (b, l) cell on a tiny pair
        rng = np.random.default_rng(9)
        master = smooth_trajectory(rng, 400)
        s = ImuSequence(master[50:250] + rng.normal(0, 0.01, (200, 6)))
        t = ImuSequence(master[20:220] + rng.normal(0, 0.01, (200, 6)))
        ref = register_exhaustive(s, t, l_min_fraction=0.5)
        best = None
        l_min = 100
        for b in range(-(200 - l_min), 200 - l_min + 1):
            start_t = max(0, b)
            start_s = start_t - b
            overlap = min(200 - start_s, 200 - start_t)
            for l in range(l_min, overlap + 1):
                score = two_loop_score(s.samples, t.samples, b, l)
                key = (score, -l, abs(b), b)
                if best is None or key < best[0]:
                    best = (key, b, l)
        assert ref.bias_samples == best[1]
        assert ref.length == best[2]
        assert ref.score == pytest.approx(best[0][0], abs=1e-9)

    def test_symmetry(self):
        source, target, _ = shifted_imu_pair(31, n=5000, sigma=0.01)
        fwd = register(source, target)
        rev = register(target, source)
        assert fwd.bias_samples == -rev.bias_samples
        assert fwd.length == rev.length
        assert fwd.score == pytest.approx(rev.score, rel=1e-9)

    def test_shift_equivariance_noiseless(self):
        rng = np.random.default_rng(8)
        master = smooth_trajectory(rng, 6000)
        source = ImuSequence(master[1000:5000])
        target = ImuSequence(master[800:4800])
        base = register(source, target).bias_samples
        k = 64
        padded = np.vstack([np.tile(master[800], (k, 1)), master[800:4800]])
        shifted = register(source, ImuSequence(padded)).bias_samples
        assert shifted == base + k

    def test_scale_argmin_invariance(self):
        source, target, _ = shifted_imu_pair(12, n=4000, sigma=0.01)
        a = register(source, target)
        b = register(
            ImuSequence(source.samples * 3.5), ImuSequence(target.samples * 3.5)
        )
        assert (a.bias_samples, a.length) == (b.bias_samples, b.length)
        assert b.score == pytest.approx(3.5 * a.score, rel=1e-9)

    def test_evaluation_budget(self):
        pool, radius = 32, 2
        source, target, _ = shifted_imu_pair(4, n=8000, sigma=0.01)
        reg = register(source, target, pool, radius)
        n2s = 8000 // pool**2
        n2t = n2s
        l2_min = int(np.ceil(0.5 * n2s))
        coarse_biases = (n2s - l2_min) + (n2t - l2_min) + 1
        coarse_lengths = n2s - l2_min + 1
        local_biases = 2 * radius * pool + 1
        n1 = 8000 // pool
        l1_min = int(np.ceil(0.5 * n1))
        bound = (
            coarse_biases * coarse_lengths
            + local_biases * (n1 - l1_min + 1)
            + local_biases * (8000 - 4000 + 1)
        )
        assert reg.evaluations <= bound

    def test_bias_us_conversion(self):
        source, target, _ = shifted_imu_pair(2, n=4000, shift=250, sigma=0.005)
        reg = register(source, target)
        assert reg.bias_us == reg.bias_samples * 1000

    def test_rate_mismatch_rejected(self):
        a = ImuSequence(np.zeros((2000, 6)), rate_hz=1000.0)
        b = ImuSequence(np.zeros((2000, 6)), rate_hz=500.0)
        with pytest.raises(ValueError):
            register(a, b)

    def test_parameter_validation(self):
        rng = np.random.default_rng(0)
        a = ImuSequence(rng.normal(size=(1100, 6)))
        b = ImuSequence(rng.normal(size=(1100, 6)))
        with pytest.raises(ValueError):
            register(a, b, l_min_fraction=1.5)
        with pytest.raises(ValueError):
            register(a, b, search_radius=0)
        with pytest.raises(ValueError):
            register(ImuSequence(np.zeros((100, 6))), b, pool_factor=32)
