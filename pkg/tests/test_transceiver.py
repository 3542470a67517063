"""Tests for per-round uplink planning: closed-form scalars, equalizers, the
optimized round plan, and the uniform/orthogonal baselines."""

import numpy as np
import pytest

from airfd.airagg import (
    ReceiverPlan,
    estimate_global,
    split_class_blocks,
    superpose_and_combine,
)
from airfd.channel import ChannelState
from airfd.knowledge import (
    DatasetPartition,
    KnowledgeSet,
    TransmitPlan,
    assemble_transmit_signal,
    global_target,
    normalize_knowledge,
)
from airfd.transceiver import (
    PlanDegeneracyError,
    PlanDiagnostics,
    TransceiverPlan,
    build_relaxation,
    dump_plan,
    optimal_equalizers,
    optimal_postprocessing,
    optimize_round,
    orthogonal_receive,
    relaxation_objective,
    transmit_active_mask,
    uniform_baseline,
)


def random_channel(rng, m, n, scale=1.0):
    parts = rng.standard_normal((m, n, 2)) * np.sqrt(0.5)
    return ChannelState(coefficients=scale * (parts[..., 0] + 1j * parts[..., 1]))


def random_partition(rng, m, k, low=5, high=40):
    return DatasetPartition(counts=rng.integers(low, high, size=(m, k)))


def random_knowledge(rng, m, k):
    q = rng.dirichlet(np.ones(k), size=(m, k))
    means = q.mean(axis=2)
    stds = np.sqrt(np.mean((q - means[:, :, None]) ** 2, axis=2))
    return KnowledgeSet(q=q, means=means, stds=stds)


def random_beamformer(rng, n):
    parts = rng.standard_normal((n, 2))
    w = parts[:, 0] + 1j * parts[:, 1]
    return w / np.linalg.norm(w)


def bottleneck_scan(w, channel, stds, partition, peaks):
    """Linear-scan oracle for the per-class denormalizer minimum."""
    m, k = partition.counts.shape
    gains = np.abs(channel.coefficients @ np.conj(w))
    best_val = np.full(k, np.inf)
    best_idx = np.full(k, -1)
    for kk in range(k):
        for i in range(m):
            if partition.counts[i, kk] == 0 or stds[i, kk] < 1e-8:
                continue
            val = (
                partition.class_totals[kk]
                * gains[i]
                * np.sqrt(peaks[i])
                / (partition.counts[i, kk] * stds[i, kk])
            )
            if val < best_val[kk]:
                best_val[kk] = val
                best_idx[kk] = i
    return best_val, best_idx


def completion_score(w, channel, stds, partition, peaks):
    """Aggregation-noise figure of a beamformer completed by the closed forms:
    sum over devices and classes of (B_i^k / B_i) / lambda^k(w)^2."""
    post = optimal_postprocessing(w, channel, stds, partition, peaks)
    weights = partition.counts / partition.per_wd_totals[:, None]
    return float(np.sum(weights / post.denormalizers[None, :] ** 2))


def straggler_instance(rng, m, k, n, ratio=100.0):
    """Instance whose weakest device holds a dominant share of every class."""
    channel = random_channel(rng, m, n)
    coef = channel.coefficients.copy()
    coef[0] *= 0.05  # device 0 is the common bottleneck
    channel = ChannelState(coefficients=coef)
    counts = rng.integers(10, 30, size=(m, k))
    counts[0] = counts[0] * int(ratio)
    partition = DatasetPartition(counts=counts)
    knowledge = random_knowledge(rng, m, k)
    peaks = np.full(m, 1e-3)
    return channel, knowledge, partition, peaks


class TestTransmitActiveMask:
    def test_counts_and_degeneracy_combine(self):
        partition = DatasetPartition(counts=np.array([[3, 0], [2, 5]]))
        stds = np.array([[0.1, 0.2], [1e-12, 0.3]])
        mask = transmit_active_mask(partition, stds)
        assert mask.tolist() == [[True, False], [False, True]]

    def test_shape_mismatch_rejected(self):
        partition = DatasetPartition(counts=np.array([[3, 1], [2, 5]]))
        with pytest.raises(ValueError, match="shape"):
            transmit_active_mask(partition, np.ones((3, 2)))


class TestBuildRelaxation:
    def test_constraint_vectors_match_loop(self):
        rng = np.random.default_rng(11)
        m, k, n = 4, 3, 2
        channel = random_channel(rng, m, n)
        partition = random_partition(rng, m, k)
        knowledge = random_knowledge(rng, m, k)
        peaks = rng.uniform(0.5, 2.0, m)
        problem = build_relaxation(channel, knowledge.stds, partition, peaks)
        for kk in range(k):
            for i in range(m):
                v = (
                    np.sqrt(peaks[i])
                    / (partition.counts[i, kk] * knowledge.stds[i, kk])
                ) * channel.coefficients[i]
                np.testing.assert_allclose(
                    problem.constraint_matrices[kk, i],
                    np.outer(v, np.conj(v)),
                    rtol=1e-12,
                    atol=1e-15,
                )
        expected_weights = np.array(
            [
                sum(
                    partition.counts[i, kk] / partition.per_wd_totals[i]
                    for i in range(m)
                )
                / partition.class_totals[kk]
                for kk in range(k)
            ]
        )
        np.testing.assert_allclose(problem.class_weights, expected_weights, rtol=1e-12)

    def test_inactive_entries_masked_and_zero(self):
        rng = np.random.default_rng(12)
        counts = np.array([[5, 0], [4, 6], [3, 2]])
        partition = DatasetPartition(counts=counts)
        channel = random_channel(rng, 3, 2)
        knowledge = random_knowledge(rng, 3, 2)
        peaks = np.ones(3)
        problem = build_relaxation(channel, knowledge.stds, partition, peaks)
        assert not problem.active_mask[1, 0]
        assert np.all(problem.constraint_matrices[1, 0] == 0)

    def test_objective_matches_loop(self):
        rng = np.random.default_rng(13)
        channel = random_channel(rng, 4, 3)
        partition = random_partition(rng, 4, 2)
        knowledge = random_knowledge(rng, 4, 2)
        peaks = np.ones(4)
        problem = build_relaxation(channel, knowledge.stds, partition, peaks)
        w = random_beamformer(rng, 3)
        expected = 0.0
        for kk in range(problem.num_classes):
            worst = min(
                float(np.real(np.conj(w) @ problem.constraint_matrices[kk, j] @ w))
                for j in range(problem.num_wds)
                if problem.active_mask[kk, j]
            )
            expected += problem.class_weights[kk] * (-worst)
        assert relaxation_objective(w, problem) == pytest.approx(expected, rel=1e-12)


class TestOptimalPostprocessing:
    def test_single_wd(self):
        rng = np.random.default_rng(21)
        channel = random_channel(rng, 1, 3)
        partition = DatasetPartition(counts=np.array([[7, 11]]))
        knowledge = random_knowledge(rng, 1, 2)
        peaks = np.array([2.5])
        w = random_beamformer(rng, 3)
        post = optimal_postprocessing(w, channel, knowledge.stds, partition, peaks)
        gain = abs(np.conj(w) @ channel.coefficients[0])
        expected = gain * np.sqrt(peaks[0]) / knowledge.stds[0]
        np.testing.assert_allclose(post.denormalizers, expected, rtol=1e-12)
        np.testing.assert_allclose(post.offsets, np.ones((1, 2)))
        assert post.straggler_indices.tolist() == [0, 0]

    def test_two_identical_wds(self):
        rng = np.random.default_rng(22)
        h = random_channel(rng, 1, 2).coefficients[0]
        channel = ChannelState(coefficients=np.stack([h, h]))
        partition = DatasetPartition(counts=np.array([[6, 4], [6, 4]]))
        q = rng.dirichlet(np.ones(2), size=(1, 2))
        knowledge = KnowledgeSet(
            q=np.concatenate([q, q]),
            means=np.concatenate([q.mean(axis=2)] * 2),
            stds=np.concatenate(
                [np.sqrt(np.mean((q - q.mean(axis=2)[:, :, None]) ** 2, axis=2))] * 2
            ),
        )
        peaks = np.array([1.0, 1.0])
        w = random_beamformer(rng, 2)
        post = optimal_postprocessing(w, channel, knowledge.stds, partition, peaks)
        gain = abs(np.conj(w) @ h)
        expected = (
            partition.class_totals
            * gain
            * 1.0
            / (partition.counts[0] * knowledge.stds[0])
        )
        np.testing.assert_allclose(post.denormalizers, expected, rtol=1e-12)
        np.testing.assert_allclose(post.offsets, np.full((2, 2), 0.5))
        assert post.straggler_indices.tolist() == [0, 0]  # tie -> lowest index

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(23)
        for trial in range(5):
            channel = random_channel(rng, 5, 3)
            partition = random_partition(rng, 5, 3)
            knowledge = random_knowledge(rng, 5, 3)
            peaks = rng.uniform(0.2, 3.0, 5)
            w = random_beamformer(rng, 3)
            post = optimal_postprocessing(
                w, channel, knowledge.stds, partition, peaks
            )
            vals, idx = bottleneck_scan(
                w, channel, knowledge.stds, partition, peaks
            )
            np.testing.assert_allclose(post.denormalizers, vals, rtol=1e-12)
            assert post.straggler_indices.tolist() == idx.tolist()

    def test_nulled_device_raises(self):
        rng = np.random.default_rng(24)
        channel = random_channel(rng, 3, 2)
        h0 = channel.coefficients[0]
        v = np.array([np.conj(h0[1]), -np.conj(h0[0])])
        w = v / np.linalg.norm(v)
        assert abs(np.conj(w) @ h0) < 1e-15
        partition = random_partition(rng, 3, 2)
        knowledge = random_knowledge(rng, 3, 2)
        with pytest.raises(PlanDegeneracyError, match=r"\[0\]"):
            optimal_postprocessing(
                w, channel, knowledge.stds, partition, np.ones(3)
            )


class TestOptimalEqualizers:
    def plan_parts(self, rng, m=6, k=4, n=3):
        channel = random_channel(rng, m, n)
        partition = random_partition(rng, m, k)
        knowledge = random_knowledge(rng, m, k)
        peaks = rng.uniform(0.5, 2.0, m)
        w = random_beamformer(rng, n)
        post = optimal_postprocessing(w, channel, knowledge.stds, partition, peaks)
        eq = optimal_equalizers(
            w, channel, post.denormalizers, knowledge.stds, partition
        )
        return channel, partition, knowledge, peaks, w, post, eq

    def test_straggler_saturation_and_strict_interior(self):
        rng = np.random.default_rng(31)
        channel, partition, knowledge, peaks, w, post, eq = self.plan_parts(rng)
        power = eq.real**2 + eq.imag**2
        for kk in range(partition.num_classes):
            s = post.straggler_indices[kk]
            assert power[s, kk] == pytest.approx(peaks[s], rel=1e-12)
            for i in range(partition.num_wds):
                if i != s:
                    assert power[i, kk] < peaks[i]

    def test_scalar_case(self):
        channel = ChannelState(coefficients=np.array([[0.3 + 0.0j]]))
        partition = DatasetPartition(counts=np.array([[9]]))
        stds = np.array([[0.12]])
        peaks = np.array([4.0])
        w = np.array([1.0 + 0.0j])
        post = optimal_postprocessing(w, channel, stds, partition, peaks)
        eq = optimal_equalizers(w, channel, post.denormalizers, stds, partition)
        assert eq[0, 0] == pytest.approx(post.denormalizers[0] * 0.12 / 0.3, rel=1e-12)
        assert abs(eq[0, 0]) == pytest.approx(2.0, rel=1e-12)  # saturates sqrt(P)

    def test_effective_gain_identity(self):
        rng = np.random.default_rng(32)
        channel, partition, knowledge, peaks, w, post, eq = self.plan_parts(
            rng, m=5, k=3
        )
        combined = channel.coefficients @ np.conj(w)
        gains = (
            combined[:, None]
            * eq
            / (post.denormalizers[None, :] * knowledge.stds)
        )
        target = partition.counts / partition.class_totals[None, :]
        assert np.max(np.abs(gains - target)) <= 1e-10

    def test_inactive_entries_zero(self):
        rng = np.random.default_rng(33)
        counts = np.array([[5, 0], [4, 6]])
        partition = DatasetPartition(counts=counts)
        channel = random_channel(rng, 2, 2)
        knowledge = random_knowledge(rng, 2, 2)
        peaks = np.ones(2)
        w = random_beamformer(rng, 2)
        post = optimal_postprocessing(w, channel, knowledge.stds, partition, peaks)
        eq = optimal_equalizers(
            w, channel, post.denormalizers, knowledge.stds, partition
        )
        assert eq[0, 1] == 0.0 + 0.0j


class TestOptimizeRound:
    def test_single_wd_matched_filter(self):
        rng = np.random.default_rng(41)
        channel = random_channel(rng, 1, 3)
        partition = DatasetPartition(counts=np.array([[8, 5]]))
        knowledge = random_knowledge(rng, 1, 2)
        plan = optimize_round(channel, knowledge.stds, partition, np.array([1.0]))
        h = channel.coefficients[0]
        alignment = abs(np.conj(plan.beamformer) @ h) / np.linalg.norm(h)
        assert alignment >= 1.0 - 1e-6
        assert plan.tag == "optimal"
        assert plan.diagnostics.eig1 >= 0.999

    def test_single_antenna_trivial_combining(self):
        rng = np.random.default_rng(42)
        channel = random_channel(rng, 3, 1)
        partition = random_partition(rng, 3, 2)
        knowledge = random_knowledge(rng, 3, 2)
        peaks = np.ones(3)
        plan = optimize_round(channel, knowledge.stds, partition, peaks)
        assert plan.beamformer.shape == (1,)
        assert plan.beamformer[0] == pytest.approx(1.0 + 0.0j, abs=1e-9)
        post = optimal_postprocessing(
            np.array([1.0 + 0.0j]), channel, knowledge.stds, partition, peaks
        )
        np.testing.assert_allclose(
            plan.receive.denormalizers, post.denormalizers, rtol=1e-8
        )

    def test_dominates_random_search(self):
        rng = np.random.default_rng(43)
        channel, knowledge, partition, peaks = straggler_instance(rng, 3, 2, 2)
        plan = optimize_round(channel, knowledge.stds, partition, peaks)
        own = completion_score(
            plan.beamformer, channel, knowledge.stds, partition, peaks
        )
        best_random = np.inf
        for _ in range(10_000):
            w = random_beamformer(rng, 2)
            best_random = min(
                best_random,
                completion_score(w, channel, knowledge.stds, partition, peaks),
            )
        assert own <= best_random * (1.0 + 1e-6)

    def test_relaxation_lower_bounds_any_fixed_beamformer(self):
        rng = np.random.default_rng(44)
        channel = random_channel(rng, 5, 3)
        partition = random_partition(rng, 5, 3)
        knowledge = random_knowledge(rng, 5, 3)
        peaks = np.ones(5)
        plan = optimize_round(channel, knowledge.stds, partition, peaks)
        problem = build_relaxation(channel, knowledge.stds, partition, peaks)
        for _ in range(20):
            w = random_beamformer(rng, 3)
            assert plan.diagnostics.relaxation_objective <= relaxation_objective(
                w, problem
            ) + 1e-9 * abs(plan.diagnostics.relaxation_objective)

    def test_deterministic(self):
        rng = np.random.default_rng(45)
        channel = random_channel(rng, 4, 2)
        partition = random_partition(rng, 4, 2)
        knowledge = random_knowledge(rng, 4, 2)
        peaks = np.ones(4)
        plan_a = optimize_round(channel, knowledge.stds, partition, peaks)
        plan_b = optimize_round(channel, knowledge.stds, partition, peaks)
        assert np.array_equal(plan_a.beamformer, plan_b.beamformer)
        assert np.array_equal(plan_a.transmit.equalizers, plan_b.transmit.equalizers)
        assert dump_plan(plan_a) == dump_plan(plan_b)

    def test_per_device_phase_invariance(self):
        rng = np.random.default_rng(46)
        channel = random_channel(rng, 4, 3)
        partition = random_partition(rng, 4, 2)
        knowledge = random_knowledge(rng, 4, 2)
        peaks = rng.uniform(0.5, 2.0, 4)
        plan = optimize_round(channel, knowledge.stds, partition, peaks)
        phases = np.exp(1j * rng.uniform(0, 2 * np.pi, 4))
        rotated = ChannelState(coefficients=channel.coefficients * phases[:, None])
        plan_rot = optimize_round(rotated, knowledge.stds, partition, peaks)
        np.testing.assert_allclose(
            plan_rot.receive.denormalizers,
            plan.receive.denormalizers,
            rtol=1e-8,
        )
        np.testing.assert_allclose(
            np.abs(plan_rot.transmit.equalizers),
            np.abs(plan.transmit.equalizers),
            rtol=1e-8,
            atol=1e-15,
        )
        assert plan_rot.diagnostics.relaxation_objective == pytest.approx(
            plan.diagnostics.relaxation_objective, rel=1e-8
        )

    def test_bottleneck_regime_rank_one(self):
        rng = np.random.default_rng(47)
        channel, knowledge, partition, peaks = straggler_instance(rng, 8, 3, 4)
        plan = optimize_round(channel, knowledge.stds, partition, peaks)
        assert plan.diagnostics.eig1 >= 0.99
        assert plan.diagnostics.eig2 <= 1e-3
        assert not plan.diagnostics.degenerate_rank
        assert plan.diagnostics.solver_iterations < 200


class TestUniformBaseline:
    def test_single_antenna_same_combining_as_optimal(self):
        rng = np.random.default_rng(51)
        channel = random_channel(rng, 3, 1)
        partition = random_partition(rng, 3, 2)
        knowledge = random_knowledge(rng, 3, 2)
        peaks = np.ones(3)
        uni = uniform_baseline(channel, knowledge.stds, partition, peaks)
        opt = optimize_round(channel, knowledge.stds, partition, peaks)
        np.testing.assert_allclose(uni.beamformer, opt.beamformer, atol=1e-9)
        assert uni.tag == "uniform"
        assert np.all(uni.straggler_indices == -1)

    def test_symmetric_instance_effective_gains_are_weights(self):
        rng = np.random.default_rng(52)
        h = random_channel(rng, 1, 2).coefficients[0]
        channel = ChannelState(coefficients=np.stack([h, h]))
        partition = DatasetPartition(counts=np.array([[6, 4], [6, 4]]))
        q = rng.dirichlet(np.ones(2), size=(1, 2))
        means = q.mean(axis=2)
        stds = np.sqrt(np.mean((q - means[:, :, None]) ** 2, axis=2))
        knowledge = KnowledgeSet(
            q=np.concatenate([q, q]),
            means=np.concatenate([means] * 2),
            stds=np.concatenate([stds] * 2),
        )
        plan = uniform_baseline(channel, knowledge.stds, partition, np.ones(2))
        combined = channel.coefficients @ np.conj(plan.beamformer)
        gains = (
            combined[:, None]
            * plan.transmit.equalizers
            / (plan.receive.denormalizers[None, :] * knowledge.stds)
        )
        np.testing.assert_allclose(gains, np.full((2, 2), 0.5), rtol=1e-12)

    def test_peak_power_uploads(self):
        rng = np.random.default_rng(53)
        channel = random_channel(rng, 5, 3)
        partition = random_partition(rng, 5, 3)
        knowledge = random_knowledge(rng, 5, 3)
        peaks = rng.uniform(0.5, 2.0, 5)
        plan = uniform_baseline(channel, knowledge.stds, partition, peaks)
        power = plan.transmit.equalizers.real**2 + plan.transmit.equalizers.imag**2
        np.testing.assert_allclose(power, np.broadcast_to(peaks[:, None], power.shape), rtol=1e-12)

    def test_optimized_beamformer_dominates_uniform(self):
        rng = np.random.default_rng(54)
        for trial in range(10):
            channel = random_channel(rng, 5, 3)
            partition = random_partition(rng, 5, 3)
            knowledge = random_knowledge(rng, 5, 3)
            peaks = np.full(5, 1.0)
            plan = optimize_round(channel, knowledge.stds, partition, peaks)
            own = completion_score(
                plan.beamformer, channel, knowledge.stds, partition, peaks
            )
            w_uni = np.full(3, 1.0 / np.sqrt(3.0), dtype=np.complex128)
            uni = completion_score(
                w_uni, channel, knowledge.stds, partition, peaks
            )
            assert own <= uni * (1.0 + 1e-9)


class TestOrthogonalBaseline:
    def test_noiseless_exact_recovery(self):
        rng = np.random.default_rng(61)
        m, k, n = 4, 3, 2
        channel = random_channel(rng, m, n)
        partition = random_partition(rng, m, k)
        knowledge = random_knowledge(rng, m, k)
        peaks = np.full(m, 1e-3)
        est = orthogonal_receive(
            channel, knowledge, partition, peaks, np.zeros((m, k, k, n))
        )
        target = global_target(knowledge, partition)
        assert np.max(np.abs(est.real_view - target)) <= 1e-12
        assert np.max(np.abs(est.complex_estimates.imag)) <= 1e-12

    def test_single_wd_matches_superposed_path(self):
        rng = np.random.default_rng(62)
        m, k, n = 1, 3, 2
        channel = random_channel(rng, m, n)
        partition = DatasetPartition(counts=rng.integers(5, 20, size=(1, k)))
        knowledge = random_knowledge(rng, m, k)
        peaks = np.array([2.0])
        h = channel.coefficients[0]
        w = h / np.linalg.norm(h)
        post = optimal_postprocessing(w, channel, knowledge.stds, partition, peaks)
        eq = optimal_equalizers(
            w, channel, post.denormalizers, knowledge.stds, partition
        )
        noise = rng.standard_normal((k * k, n)) + 1j * rng.standard_normal((k * k, n))
        blocks = np.stack(
            [
                normalize_knowledge(
                    knowledge.q[0, kk], knowledge.means[0, kk], knowledge.stds[0, kk]
                )
                for kk in range(k)
            ]
        )
        signal = assemble_transmit_signal(blocks, eq[0])
        combined = superpose_and_combine(signal[None, :], channel, w, noise)
        plan = ReceiverPlan(
            beamformer=w, denormalizers=post.denormalizers, offsets=post.offsets
        )
        est_air = estimate_global(
            split_class_blocks(combined, k), plan, knowledge.means
        )
        est_orth = orthogonal_receive(
            channel, knowledge, partition, peaks, noise.reshape(m, k, k, n)
        )
        scale = np.max(np.abs(est_air.complex_estimates))
        assert (
            np.max(np.abs(est_air.complex_estimates - est_orth.complex_estimates))
            <= 1e-9 * scale
        )

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(63)
        m, k, n = 4, 3, 2
        channel = random_channel(rng, m, n)
        partition = random_partition(rng, m, k)
        knowledge = random_knowledge(rng, m, k)
        peaks = rng.uniform(0.5, 2.0, m)
        noise = rng.standard_normal((m, k, k, n)) + 1j * rng.standard_normal(
            (m, k, k, n)
        )
        est = orthogonal_receive(channel, knowledge, partition, peaks, noise)
        expected = np.zeros((k, k), dtype=np.complex128)
        for kk in range(k):
            for i in range(m):
                h = channel.coefficients[i]
                w_i = h / np.linalg.norm(h)
                x = (
                    knowledge.q[i, kk] - knowledge.means[i, kk]
                ) / knowledge.stds[i, kk]
                amplitude = np.linalg.norm(h) * np.sqrt(peaks[i])
                y = amplitude * x + noise[i, kk] @ np.conj(w_i)
                q_tilde = knowledge.stds[i, kk] * (y / amplitude) + knowledge.means[
                    i, kk
                ]
                expected[kk] += (
                    partition.counts[i, kk] / partition.class_totals[kk]
                ) * q_tilde
        np.testing.assert_allclose(est.complex_estimates, expected, rtol=1e-10)

    def test_degenerate_knowledge_carried_by_mean(self):
        rng = np.random.default_rng(64)
        m, k, n = 2, 2, 2
        channel = random_channel(rng, m, n)
        partition = DatasetPartition(counts=np.array([[5, 5], [5, 5]]))
        q = rng.dirichlet(np.ones(k), size=(m, k))
        q[0, 0] = np.full(k, 1.0 / k)  # exactly constant -> zero std
        means = q.mean(axis=2)
        stds = np.sqrt(np.mean((q - means[:, :, None]) ** 2, axis=2))
        knowledge = KnowledgeSet(q=q, means=means, stds=stds)
        est = orthogonal_receive(
            channel, knowledge, partition, np.ones(m), np.zeros((m, k, k, n))
        )
        target = global_target(knowledge, partition)
        assert np.max(np.abs(est.real_view - target)) <= 1e-12


class TestPlanTypeAndDump:
    def build_plan(self):
        rng = np.random.default_rng(71)
        channel = random_channel(rng, 3, 2)
        partition = random_partition(rng, 3, 2)
        knowledge = random_knowledge(rng, 3, 2)
        return optimize_round(channel, knowledge.stds, partition, np.ones(3))

    def test_bad_tag_rejected(self):
        plan = self.build_plan()
        with pytest.raises(ValueError, match="tag"):
            TransceiverPlan(
                transmit=plan.transmit,
                receive=plan.receive,
                tag="bogus",
                straggler_indices=plan.straggler_indices,
                diagnostics=plan.diagnostics,
            )

    def test_bad_straggler_shape_rejected(self):
        plan = self.build_plan()
        with pytest.raises(ValueError, match="straggler"):
            TransceiverPlan(
                transmit=plan.transmit,
                receive=plan.receive,
                tag="optimal",
                straggler_indices=np.array([0]),
                diagnostics=plan.diagnostics,
            )

    def test_dump_contains_fields_and_is_deterministic(self):
        plan = self.build_plan()
        text = dump_plan(plan)
        assert text.startswith("plan tag=optimal")
        assert "beamformer" in text and "denormalizers" in text
        assert "equalizers wd=2" in text
        assert dump_plan(plan) == text
