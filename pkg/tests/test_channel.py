import json

import numpy as np
import pytest

from wavelab.channel import (
    ArrayConfig,
    Frame,
    PathParams,
    add_awgn,
    apply_channel,
    build_channel,
    channel_from_json,
    channel_to_json,
    fractional_delay_taps,
    sample_random_channel,
    steering_vector,
)


def brute_force_channel(channel, tx):
    """Direct double-sum oracle for integer-delay channels."""
    mt, n_in = tx.samples.shape
    n_max = channel.max_integer_delay()
    y = np.zeros(n_in + n_max, dtype=complex)
    for path, n_l in zip(channel.paths, channel.integer_delays()):
        a = steering_vector(path.aod, channel.array)
        for n in range(n_in + n_max):
            if 0 <= n - n_l < n_in:
                ramp = np.exp(2j * np.pi * path.doppler_hz * n / channel.sample_rate)
                y[n] += path.gain * ramp * (a.conj() @ tx.samples[:, n - n_l])
    return y


def one_path_channel(mt=2, gain=1.0, delay=0.0, doppler=0.0, aod=0.0, rate=1e6):
    array = ArrayConfig(num_tx_antennas=mt)
    return build_channel(array, [PathParams(gain, delay, doppler, aod)], rate)


class TestSteeringVector:
    def test_zero_frequency_is_all_ones(self):
        a = steering_vector(0.0, ArrayConfig(4))
        assert np.allclose(a, np.ones(4))

    def test_quarter_turn(self):
        # exp(j*pi*m*0.5) for m = 0..3
        a = steering_vector(0.5, ArrayConfig(4))
        assert np.allclose(a, [1, 1j, -1, -1j], atol=1e-15)

    def test_first_element_always_one(self):
        for aod in (-1.0, -0.3, 0.0, 0.77):
            assert steering_vector(aod, ArrayConfig(8))[0] == 1.0

    def test_geometric_series_null(self):
        array = ArrayConfig(64)
        a1 = steering_vector(0.0, array)
        a2 = steering_vector(2.0 / 64, array)
        assert abs(a1.conj() @ a2) / 64 < 1e-12

    def test_orthogonality_on_beam_grid(self):
        mt = 16
        array = ArrayConfig(mt)
        grid = -1.0 + 2.0 * np.arange(mt) / mt
        vecs = np.stack([steering_vector(w, array) for w in grid])
        gram = vecs.conj() @ vecs.T
        off = gram - np.diag(np.diag(gram))
        assert np.max(np.abs(off)) < 1e-9

    def test_domain_error(self):
        with pytest.raises(ValueError):
            steering_vector(1.0, ArrayConfig(4))
        with pytest.raises(ValueError):
            steering_vector(-1.0001, ArrayConfig(4))


class TestBuildChannel:
    def test_single_static_path(self):
        ch = one_path_channel()
        assert ch.delay_spread() == 0.0
        assert ch.doppler_spread() == 0.0

    def test_integer_delays_and_spread(self):
        array = ArrayConfig(2)
        paths = [PathParams(1.0, 0.0, 0.0, 0.0), PathParams(1.0, 1e-6, 0.0, 0.5)]
        ch = build_channel(array, paths, sample_rate=100e6)
        assert list(ch.integer_delays()) == [0, 100]
        assert ch.delay_spread() == pytest.approx(1e-6)

    def test_doppler_spread_is_max_minus_min(self):
        array = ArrayConfig(2)
        paths = [PathParams(1.0, 0.0, f, 0.1 * i) for i, f in enumerate([-500.0, 0.0, 1500.0])]
        ch = build_channel(array, paths, sample_rate=1e6)
        assert ch.doppler_spread() == 2000.0

    def test_fractional_residues(self):
        ch = one_path_channel(delay=10.3 / 1e6)
        assert ch.integer_delays()[0] == 10
        assert ch.fractional_residues()[0] == pytest.approx(0.3, abs=1e-9)

    def test_empty_path_list_rejected(self):
        with pytest.raises(ValueError):
            build_channel(ArrayConfig(2), [], 1e6)


class TestRandomChannel:
    def test_single_path_gain_is_unit(self):
        ch = sample_random_channel(ArrayConfig(8), 1, (0, 1e-6), (-100, 100), 7,
                                   sample_rate=1e6)
        assert abs(ch.paths[0].gain) == pytest.approx(1.0)

    def test_gain_normalization(self):
        ch = sample_random_channel(ArrayConfig(16), 5, (0, 1e-6), (0, 0), 3,
                                   sample_rate=1e6)
        total = sum(abs(p.gain) ** 2 for p in ch.paths)
        assert total == pytest.approx(1.0, rel=1e-12)

    def test_deterministic_under_seed(self):
        kw = dict(delay_range=(0, 2e-6), doppler_range=(-1e3, 1e3), sample_rate=1e7)
        a = sample_random_channel(ArrayConfig(32), 4, rng_seed=11, **kw)
        b = sample_random_channel(ArrayConfig(32), 4, rng_seed=11, **kw)
        assert a == b

    def test_aod_separation(self):
        ch = sample_random_channel(ArrayConfig(64), 3, (0, 1e-6), (0, 0), 5,
                                   sample_rate=1e6)
        aods = [p.aod for p in ch.paths]
        for i in range(3):
            for j in range(i + 1, 3):
                assert abs(aods[i] - aods[j]) >= 2.0 / 64

    def test_impossible_separation_raises(self):
        with pytest.raises(ValueError, match="reduce the path count"):
            sample_random_channel(ArrayConfig(2), 4, (0, 1e-6), (0, 0), 1,
                                  sample_rate=1e6)


class TestApplyChannel:
    def test_single_path_all_ones_steering(self):
        ch = one_path_channel(mt=2)
        x = np.full((2, 64), 0.5 - 0.25j)
        y = apply_channel(ch, Frame(x, 1e6))
        assert np.allclose(y.row(), 2 * x[0], atol=1e-15)

    def test_doppler_ramp(self):
        ch = one_path_channel(mt=2, doppler=1000.0, rate=1e6)
        c = 0.3 + 0.4j
        x = np.full((2, 128), c)
        y = apply_channel(ch, Frame(x, 1e6))
        n = np.arange(128)
        assert np.allclose(y.row(), 2 * c * np.exp(2j * np.pi * 1e-3 * n), atol=1e-12)

    def test_beamforming_isolates_one_path(self):
        # Orthogonal steering vectors: [1, 1] and [1, -1].
        array = ArrayConfig(2)
        paths = [PathParams(0.8 + 0.1j, 0.0, 0.0, 0.0),
                 PathParams(0.5 - 0.3j, 3e-6, 500.0, -1.0)]
        ch = build_channel(array, paths, sample_rate=1e6)
        rng = np.random.default_rng(0)
        s = rng.standard_normal(50) + 1j * rng.standard_normal(50)
        f = steering_vector(0.0, array) / np.sqrt(2)
        tx = Frame(np.outer(f, s), 1e6)
        y = apply_channel(ch, tx)
        oracle = brute_force_channel(ch, tx)
        assert np.allclose(y.row(), oracle, atol=1e-12)
        # only the first path survives: y = gain * sqrt(2) * s
        expected = paths[0].gain * np.sqrt(2) * s
        assert np.allclose(y.row()[:50], expected, atol=1e-12)

    def test_matches_brute_force_multipath(self):
        array = ArrayConfig(4)
        rng = np.random.default_rng(42)
        paths = [PathParams(rng.standard_normal() + 1j * rng.standard_normal(),
                            d / 1e6, f, a)
                 for d, f, a in [(0, 0.0, -0.5), (2, 700.0, 0.25), (5, -300.0, 0.75)]]
        ch = build_channel(array, paths, sample_rate=1e6)
        x = rng.standard_normal((4, 40)) + 1j * rng.standard_normal((4, 40))
        tx = Frame(x, 1e6)
        assert np.allclose(apply_channel(ch, tx).row(),
                           brute_force_channel(ch, tx), atol=1e-12)

    def test_linearity(self):
        ch = one_path_channel(mt=3, delay=4e-6, doppler=250.0, aod=0.3)
        rng = np.random.default_rng(1)
        x1 = rng.standard_normal((3, 32)) + 1j * rng.standard_normal((3, 32))
        x2 = rng.standard_normal((3, 32)) + 1j * rng.standard_normal((3, 32))
        lhs = apply_channel(ch, Frame(x1 + x2, 1e6)).row()
        rhs = apply_channel(ch, Frame(x1, 1e6)).row() + apply_channel(ch, Frame(x2, 1e6)).row()
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))

    def test_superposition_over_paths(self):
        array = ArrayConfig(4)
        rng = np.random.default_rng(2)
        paths = [PathParams(0.7, 1e-6, 100.0, -0.4), PathParams(0.3j, 6e-6, -80.0, 0.6)]
        ch = build_channel(array, paths, sample_rate=1e6)
        x = rng.standard_normal((4, 48)) + 1j * rng.standard_normal((4, 48))
        tx = Frame(x, 1e6)
        full = apply_channel(ch, tx).row()
        partial = np.zeros_like(full)
        for p in paths:
            single = apply_channel(build_channel(array, [p], 1e6), tx).row()
            partial[:len(single)] += single
        assert np.max(np.abs(full - partial)) <= 1e-12 * np.max(np.abs(full))

    def test_time_invariance_without_doppler(self):
        ch = one_path_channel(mt=2, delay=7e-6, aod=0.2)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 30)) + 1j * rng.standard_normal((2, 30))
        shift = 5
        xs = np.concatenate([np.zeros((2, shift)), x], axis=1)
        y = apply_channel(ch, Frame(x, 1e6)).row()
        ys = apply_channel(ch, Frame(xs, 1e6)).row()
        assert np.allclose(ys[shift:shift + len(y)], y, atol=1e-15)
        assert np.allclose(ys[:shift], 0.0)

    def test_rejects_mismatches(self):
        ch = one_path_channel(mt=2)
        with pytest.raises(ValueError):
            apply_channel(ch, Frame(np.ones((3, 8)), 1e6))
        with pytest.raises(ValueError):
            apply_channel(ch, Frame(np.ones((2, 8)), 2e6))


class TestFractionalDelay:
    def test_zero_delay_is_impulse(self):
        taps = fractional_delay_taps(0.0, half_length=8)
        expected = np.zeros(17)
        expected[8] = 1.0
        assert np.allclose(taps, expected, atol=1e-15)

    def test_half_sample_symmetry(self):
        taps = fractional_delay_taps(0.5, half_length=6)
        # symmetric about k = 0.5: tap(k) == tap(1 - k) wherever both exist,
        # i.e. the sub-array over k in [-5, 6] is a palindrome
        assert np.allclose(taps[1:], taps[1:][::-1], atol=1e-15)
        assert abs(taps[0]) < 1e-2

    def test_unit_sum(self):
        for d in (0.0, 0.1, 0.37, 0.5, 0.93):
            assert fractional_delay_taps(d).sum() == pytest.approx(1.0, abs=1e-12)

    def test_compose_identity_after_trim(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(256)
        h = 16
        y = np.convolve(x, fractional_delay_taps(0.0, half_length=h))
        assert np.max(np.abs(y[h:h + 256] - x)) < 1e-9

    def test_interpolates_bandlimited_signal(self):
        # Delaying a slow complex tone by d approximates the analytic shift.
        n = np.arange(512)
        x = np.exp(2j * np.pi * 0.05 * n)
        d = 0.3
        h = 32
        y = np.convolve(x, fractional_delay_taps(d, half_length=h))
        expected = np.exp(2j * np.pi * 0.05 * (n - d - h))
        mid = slice(2 * h, 512 - 2 * h)
        assert np.max(np.abs(y[mid] - expected[mid])) < 1e-4

    def test_preconditions(self):
        with pytest.raises(ValueError):
            fractional_delay_taps(1.0)
        with pytest.raises(ValueError):
            fractional_delay_taps(-0.1)
        with pytest.raises(ValueError):
            fractional_delay_taps(0.5, half_length=0)

    def test_fractional_path_through_channel(self):
        # A 10.3-sample path delay lands between taps 10 and 11.
        ch = one_path_channel(mt=1, delay=10.3 / 1e6)
        n = np.arange(400)
        x = np.exp(2j * np.pi * 0.02 * n)[np.newaxis, :]
        y = apply_channel(ch, Frame(x, 1e6)).row()
        expected = np.exp(2j * np.pi * 0.02 * (n - 10.3))
        mid = slice(80, 320)
        assert np.max(np.abs(y[mid] - expected[mid])) < 1e-4


class TestAwgn:
    def test_infinite_snr_sentinel(self):
        f = Frame(np.ones((1, 16)), 1e6)
        out = add_awgn(f, float("inf"), 0)
        assert np.array_equal(out.samples, f.samples)

    def test_deterministic_under_seed(self):
        f = Frame(np.ones((1, 64)), 1e6)
        a = add_awgn(f, 10.0, 123)
        b = add_awgn(f, 10.0, 123)
        assert np.array_equal(a.samples, b.samples)

    def test_noise_variance_law_of_large_numbers(self):
        n = 10 ** 6
        f = Frame(np.ones((1, n)), 1e6)
        noisy = add_awgn(f, 0.0, 9)
        measured = np.mean(np.abs(noisy.row() - 1.0) ** 2)
        assert abs(measured - 1.0) < 0.05

    def test_empty_frame_rejected(self):
        with pytest.raises(ValueError):
            Frame(np.zeros((1, 0)), 1e6)


class TestSerialization:
    def test_round_trip_and_field_names(self):
        ch = sample_random_channel(ArrayConfig(8, 0.5), 3, (0, 1e-6), (-500, 500), 17,
                                   sample_rate=1e7)
        doc = channel_to_json(ch)
        assert set(doc) == {"array", "sample_rate_hz", "paths"}
        assert set(doc["array"]) == {"mt", "spacing"}
        assert set(doc["paths"][0]) == {"gain_re", "gain_im", "delay_s", "doppler_hz", "aod"}
        # survives a real JSON encode/decode
        restored = channel_from_json(json.loads(json.dumps(doc)))
        assert restored == ch
