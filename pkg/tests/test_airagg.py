"""Analog superposition, receive combining, and the linear estimator."""

import numpy as np
import pytest

from airfd.airagg import (
    EstimatedKnowledge,
    ReceiverPlan,
    estimate_global,
    split_class_blocks,
    superpose_and_combine,
)
from airfd.channel import ChannelState
from airfd.rng import substream


def random_unit_vector(rng, n):
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


def random_complex(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


class TestSuperposeAndCombine:
    def test_all_zero_inputs_give_zero_output(self):
        channel = ChannelState(coefficients=np.ones((2, 3), dtype=complex))
        w = np.array([1.0, 0.0, 0.0], dtype=complex)
        out = superpose_and_combine(
            np.zeros((2, 4), dtype=complex), channel, w, np.zeros((4, 3), dtype=complex)
        )
        assert np.all(out == 0)

    def test_identity_channel_passes_signal_through(self):
        channel = ChannelState(coefficients=np.ones((1, 1), dtype=complex))
        w = np.array([1.0], dtype=complex)
        signal = np.array([[1.0 + 2.0j, -0.5, 0.25j, 3.0]])
        out = superpose_and_combine(signal, channel, w, np.zeros((4, 1), dtype=complex))
        assert np.allclose(out, signal[0], atol=1e-15)

    def test_matches_naive_triple_loop_oracle(self):
        rng = substream(21, "agg-oracle")
        m, n, d = 3, 2, 8
        channel = ChannelState(coefficients=random_complex(rng, (m, n)))
        w = random_unit_vector(rng, n)
        signals = random_complex(rng, (m, d))
        noise = random_complex(rng, (d, n))
        out = superpose_and_combine(signals, channel, w, noise)
        # Independent evaluation with explicit loops over slots, devices, antennas.
        expected = np.zeros(d, dtype=complex)
        for slot in range(d):
            acc = 0.0 + 0.0j
            for i in range(m):
                gain = 0.0 + 0.0j
                for a in range(n):
                    gain += np.conj(w[a]) * channel.coefficients[i, a]
                acc += gain * signals[i, slot]
            for a in range(n):
                acc += np.conj(w[a]) * noise[slot, a]
            expected[slot] = acc
        assert np.allclose(out, expected, atol=1e-12)

    def test_linearity_in_signals(self):
        rng = substream(22, "agg-linear")
        m, n, d = 4, 3, 6
        channel = ChannelState(coefficients=random_complex(rng, (m, n)))
        w = random_unit_vector(rng, n)
        s1 = random_complex(rng, (m, d))
        s2 = random_complex(rng, (m, d))
        alpha, beta = 1.7 - 0.3j, -0.8 + 2.1j
        zero_noise = np.zeros((d, n), dtype=complex)
        combined = superpose_and_combine(alpha * s1 + beta * s2, channel, w, zero_noise)
        separate = alpha * superpose_and_combine(
            s1, channel, w, zero_noise
        ) + beta * superpose_and_combine(s2, channel, w, zero_noise)
        assert np.allclose(combined, separate, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        channel = ChannelState(coefficients=np.ones((2, 3), dtype=complex))
        w = np.array([1.0, 0.0, 0.0], dtype=complex)
        with pytest.raises(ValueError):
            superpose_and_combine(
                np.zeros((3, 4), dtype=complex), channel, w,
                np.zeros((4, 3), dtype=complex),
            )
        with pytest.raises(ValueError):
            superpose_and_combine(
                np.zeros((2, 4), dtype=complex), channel, w,
                np.zeros((5, 3), dtype=complex),
            )
        with pytest.raises(ValueError):
            superpose_and_combine(
                np.zeros((2, 4), dtype=complex), channel, 2.0 * w,
                np.zeros((4, 3), dtype=complex),
            )


class TestSplitClassBlocks:
    def test_round_trip(self):
        combined = np.arange(9, dtype=complex)
        blocks = split_class_blocks(combined, 3)
        assert blocks.shape == (3, 3)
        assert np.array_equal(blocks.ravel(), combined)

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            split_class_blocks(np.zeros(8, dtype=complex), 3)


class TestEstimateGlobal:
    def test_offset_only_when_blocks_zero(self):
        m, k = 3, 2
        rng = substream(23, "est")
        w = random_unit_vector(rng, 4)
        counts = rng.integers(1, 10, size=(m, k))
        weights = counts / counts.sum(axis=0)
        means = rng.uniform(0.1, 0.9, size=(m, k))
        plan = ReceiverPlan(
            beamformer=w, denormalizers=np.array([2.0, 3.0]), offsets=weights
        )
        est = estimate_global(np.zeros((k, k), dtype=complex), plan, means)
        expected_offsets = (weights * means).sum(axis=0)
        for kk in range(k):
            assert np.allclose(est.complex_estimates[kk], expected_offsets[kk])

    def test_matches_hand_expansion_two_by_two(self):
        # M=2, K=2 instance expanded symbolically by hand:
        # r_hat^k[d] = r^k[d]/lam^k + a_1^k m_1^k + a_2^k m_2^k.
        blocks = np.array([[1.0 + 1.0j, 2.0], [0.5j, -1.0]])
        lam = np.array([2.0, 4.0])
        offsets = np.array([[0.25, 0.5], [0.75, 0.5]])
        means = np.array([[0.2, 0.4], [0.6, 0.8]])
        plan = ReceiverPlan(
            beamformer=np.array([1.0 + 0j]), denormalizers=lam, offsets=offsets
        )
        est = estimate_global(blocks, plan, means)
        hand = np.array(
            [
                [
                    (1.0 + 1.0j) / 2.0 + 0.25 * 0.2 + 0.75 * 0.6,
                    2.0 / 2.0 + 0.25 * 0.2 + 0.75 * 0.6,
                ],
                [
                    0.5j / 4.0 + 0.5 * 0.4 + 0.5 * 0.8,
                    -1.0 / 4.0 + 0.5 * 0.4 + 0.5 * 0.8,
                ],
            ]
        )
        assert np.allclose(est.complex_estimates, hand, atol=1e-14)
        assert np.array_equal(est.real_view, est.complex_estimates.real)

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            ReceiverPlan(
                beamformer=np.array([1.0 + 0j]),
                denormalizers=np.array([0.0]),
                offsets=np.zeros((1, 1)),
            )
        with pytest.raises(ValueError):
            ReceiverPlan(
                beamformer=np.array([0.7 + 0j]),
                denormalizers=np.array([1.0]),
                offsets=np.zeros((1, 1)),
            )

    def test_estimated_knowledge_real_view_consistency(self):
        est = np.array([[1.0 + 1.0j]])
        with pytest.raises(ValueError):
            EstimatedKnowledge(complex_estimates=est, real_view=np.array([[2.0]]))
