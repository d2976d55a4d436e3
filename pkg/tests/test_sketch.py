import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from quantastream.errors import ConfigError, SequenceError
from quantastream.sensor import BitPlane
from quantastream.sketch import (
    ExposureLadder,
    Sketch,
    effective_window,
    flop_budget,
    new_sketch,
    quantize_u8,
)


def feed(sketch, bits_per_frame):
    for t, bits in enumerate(bits_per_frame):
        sketch.update(BitPlane(bits, timestamp=t))


def uniform_plane(shape, bit):
    return np.full(shape, bit, dtype=np.uint8)


def closed_form(bits, alpha, r0=0.0):
    """Direct exponentially-weighted summation oracle (float64)."""
    t = len(bits)
    weights = alpha * (1.0 - alpha) ** (t - 1.0 - np.arange(t))
    return (1.0 - alpha) ** t * r0 + weights @ np.asarray(bits, dtype=np.float64)


class TestLadder:
    def test_default_geometry(self):
        ladder = ExposureLadder.default()
        assert ladder.channels == 8
        assert ladder.windows[0] == 4096.0
        assert ladder.windows[-1] == 16.0
        ratios = [a / b for a, b in zip(ladder.windows, ladder.windows[1:])]
        assert_allclose(ratios, ratios[0], rtol=1e-9)

    def test_dyadic_preset(self):
        ladder = ExposureLadder.dyadic()
        assert ladder.channels == 9
        assert ladder.windows == tuple(float(2**e) for e in range(12, 3, -1))

    def test_validation(self):
        with pytest.raises(ConfigError):
            ExposureLadder(())
        with pytest.raises(ConfigError):
            ExposureLadder((16.0, 4096.0))     # wrong order
        with pytest.raises(ConfigError):
            ExposureLadder((32.0, 32.0))       # duplicates
        with pytest.raises(ConfigError):
            ExposureLadder((4.0, 0.5))         # below one frame


class TestEffectiveWindow:
    def test_values(self):
        assert effective_window(1.0 / 4096.0) == 4096.0
        assert effective_window(1.0) == 1.0
        assert effective_window(1.0 / 16.0) == 16.0

    @pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
    def test_domain(self, alpha):
        with pytest.raises(ValueError):
            effective_window(alpha)


class TestUpdatePoll:
    def test_initial_polls(self):
        sk = new_sketch(ExposureLadder.default(), 4, 4, r0=0.0)
        stack = sk.poll()
        assert stack.timestamp == 0
        assert stack.quantized.sum() == 0
        sk1 = Sketch(ExposureLadder.default(), 4, 4, r0=1.0)
        assert (sk1.poll().quantized == 255).all()

    def test_all_ones_sixteen_frames(self):
        # R(16) = 1 - (15/16)^16 for alpha = 1/16, frozen from exact evaluation
        sk = Sketch(ExposureLadder((16.0,)), 3, 3)
        feed(sk, [uniform_plane((3, 3), 1)] * 16)
        state = sk.poll(include_raw=True).raw
        assert_allclose(state, 0.6439258695482072, rtol=1e-12)

    def test_all_zeros_decays(self):
        sk = Sketch(ExposureLadder((16.0,)), 2, 2, r0=1.0)
        feed(sk, [uniform_plane((2, 2), 0)] * 50)
        state = sk.poll(include_raw=True).raw
        assert_allclose(state, (15.0 / 16.0) ** 50, rtol=1e-12)
        feed2 = [uniform_plane((2, 2), 0)] * 400
        for t, bits in enumerate(feed2):
            sk.update(BitPlane(bits, timestamp=50 + t))
        assert sk.poll(include_raw=True).raw.max() < 1e-8

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(0)
        t_len = 10_000
        h, w = 5, 8
        bits = rng.integers(0, 2, size=(t_len, h, w), dtype=np.uint8)
        ladder = ExposureLadder.default()
        sk = Sketch(ladder, w, h)
        feed(sk, list(bits))
        raw = sk.poll(include_raw=True).raw
        for k, alpha in enumerate(ladder.alphas):
            expect = np.apply_along_axis(closed_form, 0, bits, alpha)
            assert np.abs(raw[k] - expect).max() <= 1e-6

    def test_out_of_order_rejected(self):
        sk = Sketch(ExposureLadder.default(), 4, 4)
        sk.update(BitPlane(uniform_plane((4, 4), 1), timestamp=0))
        with pytest.raises(SequenceError):
            sk.update(BitPlane(uniform_plane((4, 4), 1), timestamp=0))
        with pytest.raises(SequenceError):
            sk.update(BitPlane(uniform_plane((4, 4), 1), timestamp=5))

    def test_shape_mismatch_rejected(self):
        sk = Sketch(ExposureLadder.default(), 4, 4)
        with pytest.raises(ValueError, match="shape"):
            sk.update(BitPlane(uniform_plane((4, 5), 1), timestamp=0))

    def test_poll_idempotent_without_updates(self):
        sk = Sketch(ExposureLadder.default(), 4, 4)
        feed(sk, [uniform_plane((4, 4), 1)] * 3)
        a, b = sk.poll(include_raw=True), sk.poll(include_raw=True)
        assert a.timestamp == b.timestamp == 3
        assert_array_equal(a.quantized, b.quantized)
        assert_array_equal(a.raw, b.raw)

    def test_poll_snapshot_is_a_copy(self):
        sk = Sketch(ExposureLadder.default(), 4, 4)
        stack = sk.poll(include_raw=True)
        sk.update(BitPlane(uniform_plane((4, 4), 1), timestamp=0))
        assert stack.raw.sum() == 0.0


class TestQuantization:
    def test_half_rounds_away_from_zero(self):
        sk = Sketch(ExposureLadder.default(), 2, 2, r0=0.5)
        assert (sk.poll().quantized == 128).all()

    def test_rule_on_grid(self):
        vals = np.array([0.0, 0.5 / 255.0, 1.0 / 255.0, 0.999, 1.0])
        assert_array_equal(quantize_u8(vals), [0, 1, 1, 255, 255])

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=64))
    def test_error_bound(self, values):
        arr = np.array(values)
        q = quantize_u8(arr)
        assert np.all(np.abs(q / 255.0 - arr) <= 0.5 / 255.0 + 1e-12)


class TestInvariants:
    @given(seed=st.integers(0, 2**32 - 1), r0=st.floats(0.0, 1.0))
    @settings(max_examples=25, deadline=None)
    def test_boundedness(self, seed, r0):
        rng = np.random.default_rng(seed)
        sk = Sketch(ExposureLadder.default(), 4, 4, r0=r0)
        for t in range(200):
            sk.update(BitPlane(rng.integers(0, 2, size=(4, 4), dtype=np.uint8), timestamp=t))
        raw = sk.poll(include_raw=True).raw
        assert raw.min() >= 0.0 and raw.max() <= 1.0

    def test_steady_state_mean(self):
        # time-average of each channel approaches p within the stationary
        # 3-sigma band sqrt(alpha p (1-p) / (2 - alpha)) after 10 W burn-in
        p = 0.3
        ladder = ExposureLadder.geometric(4, 16.0, 256.0)
        sk = Sketch(ladder, 1, 1)
        rng = np.random.default_rng(42)
        burn = 10 * 256
        tail = []
        for t in range(burn + 4000):
            sk.update(BitPlane(np.array([[rng.random() < p]], dtype=np.uint8), timestamp=t))
            if t >= burn:
                tail.append(sk.poll(include_raw=True).raw[:, 0, 0])
        means = np.mean(tail, axis=0)
        for mean, alpha in zip(means, ladder.alphas):
            tol = 3.0 * np.sqrt(alpha * p * (1 - p) / (2 - alpha))
            assert abs(mean - p) <= tol


class TestFlopBudget:
    def test_exact_count_random_stream(self):
        rng = np.random.default_rng(1)
        ladder = ExposureLadder.default()
        sk = Sketch(ladder, 8, 8)
        total_ones = 0
        frames = 500
        for t in range(frames):
            bits = rng.integers(0, 2, size=(8, 8), dtype=np.uint8)
            total_ones += int(bits.sum())
            sk.update(BitPlane(bits, timestamp=t))
        assert sk.op_counter == ladder.channels * (frames * 64 + total_ones)
        assert flop_budget(sk, frames) <= 2 * ladder.channels

    def test_all_zero_stream_multiplies_only(self):
        ladder = ExposureLadder.default()
        sk = Sketch(ladder, 4, 4)
        feed(sk, [uniform_plane((4, 4), 0)] * 100)
        assert flop_budget(sk, 100) == ladder.channels

    def test_single_channel_budget(self):
        sk = Sketch(ExposureLadder((16.0,)), 4, 4)
        feed(sk, [uniform_plane((4, 4), 1)] * 100)
        assert flop_budget(sk, 100) == 2.0

    def test_zero_frames_rejected(self):
        sk = Sketch(ExposureLadder.default(), 4, 4)
        with pytest.raises(ValueError):
            flop_budget(sk, 0)


class TestSnapshotAtomicity:
    def test_concurrent_polls_see_single_frame_state(self):
        # uniform input: every pixel follows the same scalar recursion, so
        # a torn snapshot shows up as a mismatch with the reference at its
        # own timestamp
        ladder = ExposureLadder.default()
        h = w = 8
        frames = 4000
        rng = np.random.default_rng(3)
        bit_seq = rng.integers(0, 2, size=frames, dtype=np.uint8)
        alphas = np.asarray(ladder.alphas)
        ref = np.empty((frames + 1, ladder.channels))
        r = np.zeros(ladder.channels)
        ref[0] = r
        for t in range(frames):
            r = r * (1.0 - alphas)
            if bit_seq[t]:
                r = r + alphas
            ref[t + 1] = r

        sk = Sketch(ladder, w, h)
        ones = uniform_plane((h, w), 1)
        zeros = uniform_plane((h, w), 0)
        failures = []
        done = threading.Event()

        def producer():
            for t in range(frames):
                sk.update(BitPlane(ones if bit_seq[t] else zeros, timestamp=t))
            done.set()

        def poller():
            while not done.is_set():
                stack = sk.poll(include_raw=True)
                if not (stack.raw == ref[stack.timestamp][:, None, None]).all():
                    failures.append(stack.timestamp)

        threads = [threading.Thread(target=producer)] + [
            threading.Thread(target=poller) for _ in range(2)
        ]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert failures == []
        assert sk.t == frames
