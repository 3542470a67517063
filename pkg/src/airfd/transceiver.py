"""Per-round uplink planning: the relaxed receive-beamformer design, its
closed-form completion (transmit equalizers, denormalizers, and mean-offset
weights), and two baselines — uniform combining with peak-power uploads, and a
fully orthogonal per-device uplink combined digitally at the server.

The planning channel may be an imperfect estimate; the resulting plan is
applied to whatever true channel the aggregation step actually sees.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .airagg import EstimatedKnowledge, ReceiverPlan
from .channel import ChannelState
from .knowledge import (
    Q_HAT_FLOOR,
    DatasetPartition,
    KnowledgeSet,
    TransmitPlan,
)
from .sdp_solver import SdpProblem, extract_principal_eigenpair, solve

__all__ = [
    "PLAN_TAGS",
    "PlanDegeneracyError",
    "PlanDiagnostics",
    "PostprocessingResult",
    "TransceiverPlan",
    "transmit_active_mask",
    "build_relaxation",
    "relaxation_objective",
    "optimal_postprocessing",
    "optimal_equalizers",
    "optimize_round",
    "uniform_baseline",
    "orthogonal_receive",
    "dump_plan",
]

PLAN_TAGS = ("optimal", "uniform", "custom")


class PlanDegeneracyError(RuntimeError):
    """A combining vector nulls the signal of a device that must transmit.

    The bottleneck denormalizer of that device's class would be zero, so no
    finite equalizer can align its contribution.
    """


class PostprocessingResult(NamedTuple):
    """Server-side scalars completing a beamformer into a full receive plan.

    Attributes:
        denormalizers: (K,) positive per-class scalars lambda^k.
        offsets: (M, K) mean-offset weights a_i^k = B_i^k / B^k.
        straggler_indices: (K,) index of the device attaining each class's
            bottleneck minimum (lowest index on exact ties).
    """

    denormalizers: np.ndarray
    offsets: np.ndarray
    straggler_indices: np.ndarray


@dataclass(frozen=True)
class PlanDiagnostics:
    """How a plan was produced, for per-round reporting.

    Attributes:
        eig1: Largest eigenvalue of the relaxation solution (1.0 when the
            beamformer was fixed rather than optimized).
        eig2: Second-largest eigenvalue (0.0 when fixed).
        relaxation_objective: Weighted negated-bottleneck objective value of
            the plan's beamformer.
        solver_iterations: Interior-point iterations spent (0 when fixed).
        degenerate_rank: True when the top two eigenvalues were too close for
            a well-separated principal direction.
    """

    eig1: float
    eig2: float
    relaxation_objective: float
    solver_iterations: int
    degenerate_rank: bool


@dataclass(frozen=True)
class TransceiverPlan:
    """A complete uplink plan: device-side equalizers plus server-side
    combining and estimation scalars.

    Attributes:
        transmit: Per-device, per-class complex equalizers under peak power.
        receive: Beamformer, denormalizers, and mean-offset weights.
        tag: One of PLAN_TAGS recording which policy produced the plan.
        straggler_indices: (K,) bottleneck device per class; -1 where the
            policy has no bottleneck structure.
        diagnostics: Solver-side facts (eigenvalues, objective, iterations).
    """

    transmit: TransmitPlan
    receive: ReceiverPlan
    tag: str
    straggler_indices: np.ndarray
    diagnostics: PlanDiagnostics

    def __post_init__(self) -> None:
        if self.tag not in PLAN_TAGS:
            raise ValueError(f"tag must be one of {PLAN_TAGS}, got {self.tag!r}")
        m, k = self.transmit.equalizers.shape
        if self.receive.offsets.shape != (m, k):
            raise ValueError(
                "transmit equalizers and receive offsets disagree on (M, K)"
            )
        idx = np.asarray(self.straggler_indices, dtype=np.int64)
        if idx.shape != (k,):
            raise ValueError(f"straggler_indices must have shape ({k},)")
        if np.any(idx < -1) or np.any(idx >= m):
            raise ValueError("straggler_indices must lie in [-1, M)")
        idx = idx.copy()
        idx.setflags(write=False)
        object.__setattr__(self, "straggler_indices", idx)

    @property
    def beamformer(self) -> np.ndarray:
        return self.receive.beamformer


def transmit_active_mask(
    partition: DatasetPartition, knowledge_stds: np.ndarray
) -> np.ndarray:
    """(M, K) bool: device i transmits a class-k block iff it holds class-k
    samples AND its knowledge vector is non-degenerate.

    A degenerate vector (std below the usable floor) equals its own mean to
    within the floor, so its entire content is carried by the mean-offset term
    and its normalized signal is omitted; the device still contributes its
    mean weight a_i^k.
    """
    stds = np.asarray(knowledge_stds, dtype=np.float64)
    if stds.shape != partition.counts.shape:
        raise ValueError("knowledge_stds must have the partition's (M, K) shape")
    return partition.active_mask & (stds >= Q_HAT_FLOOR)


def build_relaxation(
    channel: ChannelState,
    knowledge_stds: np.ndarray,
    partition: DatasetPartition,
    peak_powers: np.ndarray,
) -> SdpProblem:
    """Assemble the relaxed beamformer-selection problem for one round.

    Each transmitting (class k, device j) pair contributes the rank-one
    constraint matrix built from the scaled channel vector

        v_j^k = (sqrt(P_j) / (B_j^k q_hat_j^k)) h_j,

    so that |w^H v_j^k|^2 is the squared bottleneck gain the class-k
    denormalizer is limited by. Class k is weighted by
    (sum_i B_i^k / B_i) / B^k, the weight its inverse squared denormalizer
    carries in the aggregation-error objective.
    """
    stds = np.asarray(knowledge_stds, dtype=np.float64)
    peaks = np.asarray(peak_powers, dtype=np.float64)
    m, k = partition.counts.shape
    n = channel.num_antennas
    if channel.num_wds != m:
        raise ValueError("channel and partition disagree on the device count")
    if stds.shape != (m, k):
        raise ValueError("knowledge_stds must have the partition's (M, K) shape")
    if peaks.shape != (m,) or np.any(peaks <= 0):
        raise ValueError("peak_powers must be (M,) positive")

    active = transmit_active_mask(partition, stds)  # (M, K)
    denom = np.where(active, partition.counts * stds, 1.0)
    scale = np.where(active, np.sqrt(peaks)[:, None] / denom, 0.0)  # (M, K)
    vecs = scale.T[:, :, None] * channel.coefficients[None, :, :]  # (K, M, N)
    mats = vecs[:, :, :, None] * np.conj(vecs[:, :, None, :])  # (K, M, N, N)

    class_weights = (
        partition.counts / partition.per_wd_totals[:, None]
    ).sum(axis=0) / partition.class_totals
    return SdpProblem(
        dim=n,
        class_weights=class_weights,
        constraint_matrices=mats,
        active_mask=active.T.copy(),
    )


def relaxation_objective(beamformer: np.ndarray, problem: SdpProblem) -> float:
    """Objective value of a fixed unit beamformer: the weighted sum over
    classes of the negated smallest active squared constraint gain."""
    w = np.asarray(beamformer, dtype=np.complex128)
    if w.shape != (problem.dim,):
        raise ValueError(f"beamformer must have shape ({problem.dim},)")
    # gain[k, j] = w^H mats[k, j] w, real for Hermitian matrices.
    gains = np.real(
        np.einsum("a,kjab,b->kj", np.conj(w), problem.constraint_matrices, w)
    )
    worst = np.min(np.where(problem.active_mask, gains, np.inf), axis=1)
    return float(problem.class_weights @ (-worst))


def _combined_gains(channel: ChannelState, beamformer: np.ndarray) -> np.ndarray:
    """Per-device combined channel scalars w^H h_i, shape (M,)."""
    w = np.asarray(beamformer, dtype=np.complex128)
    if w.shape != (channel.num_antennas,):
        raise ValueError("beamformer length must match the antenna count")
    return channel.coefficients @ np.conj(w)


def _bottleneck_expressions(
    gains_abs: np.ndarray,
    active: np.ndarray,
    partition: DatasetPartition,
    knowledge_stds: np.ndarray,
    peak_powers: np.ndarray,
) -> np.ndarray:
    """Per-(device, class) denormalizer candidates
    B^k |w^H h_i| sqrt(P_i) / (B_i^k q_hat_i^k); +inf where not transmitting."""
    denom = np.where(active, partition.counts * knowledge_stds, 1.0)
    expr = (
        partition.class_totals[None, :]
        * gains_abs[:, None]
        * np.sqrt(peak_powers)[:, None]
        / denom
    )
    return np.where(active, expr, np.inf)


def optimal_postprocessing(
    beamformer: np.ndarray,
    channel: ChannelState,
    knowledge_stds: np.ndarray,
    partition: DatasetPartition,
    peak_powers: np.ndarray,
) -> PostprocessingResult:
    """Bottleneck-optimal server scalars for a given combining vector.

    The class-k denormalizer is the largest value every transmitting device
    can support at its peak power:

        lambda^k = min_i B^k |w^H h_i| sqrt(P_i) / (B_i^k q_hat_i^k),

    attained by the class's bottleneck device (lowest index on ties), and the
    mean-offset weights are the aggregation weights a_i^k = B_i^k / B^k.

    Raises:
        PlanDegeneracyError: some transmitting device has w^H h_i = 0.
    """
    stds = np.asarray(knowledge_stds, dtype=np.float64)
    peaks = np.asarray(peak_powers, dtype=np.float64)
    active = transmit_active_mask(partition, stds)
    gains = np.abs(_combined_gains(channel, beamformer))
    nulled = (gains == 0.0) & active.any(axis=1)
    if np.any(nulled):
        raise PlanDegeneracyError(
            f"combining vector nulls transmitting device(s) {np.flatnonzero(nulled).tolist()}"
        )
    expr = _bottleneck_expressions(gains, active, partition, stds, peaks)
    straggler_indices = np.argmin(expr, axis=0)  # first minimum = lowest index
    denormalizers = expr[straggler_indices, np.arange(expr.shape[1])]
    offsets = partition.counts / partition.class_totals[None, :]
    return PostprocessingResult(
        denormalizers=denormalizers,
        offsets=offsets,
        straggler_indices=straggler_indices.astype(np.int64),
    )


def optimal_equalizers(
    beamformer: np.ndarray,
    channel: ChannelState,
    denormalizers: np.ndarray,
    knowledge_stds: np.ndarray,
    partition: DatasetPartition,
) -> np.ndarray:
    """Channel-inverting transmit equalizers aligned to the denormalizers.

        P_i^k = B_i^k lambda^k q_hat_i^k (w^H h_i)^H / (B^k |w^H h_i|^2),

    zero where the device does not transmit. With denormalizers from
    optimal_postprocessing on the same inputs, each class's bottleneck device
    lands exactly on its power budget and every effective gain
    w^H h_i P_i^k / (lambda^k q_hat_i^k) equals the real weight B_i^k / B^k.

    Raises:
        PlanDegeneracyError: some transmitting device has w^H h_i = 0.
    """
    stds = np.asarray(knowledge_stds, dtype=np.float64)
    lams = np.asarray(denormalizers, dtype=np.float64)
    active = transmit_active_mask(partition, stds)
    combined = _combined_gains(channel, beamformer)
    power_gain = combined.real**2 + combined.imag**2
    nulled = (power_gain == 0.0) & active.any(axis=1)
    if np.any(nulled):
        raise PlanDegeneracyError(
            f"combining vector nulls transmitting device(s) {np.flatnonzero(nulled).tolist()}"
        )
    denom = np.where(
        active,
        partition.class_totals[None, :] * power_gain[:, None],
        1.0,
    )
    numer = partition.counts * lams[None, :] * stds * np.conj(combined)[:, None]
    return np.where(active, numer / denom, 0.0 + 0.0j)


def optimize_round(
    channel: ChannelState,
    knowledge_stds: np.ndarray,
    partition: DatasetPartition,
    peak_powers: np.ndarray,
    tol: float = 1e-8,
    max_iterations: int = 200,
) -> TransceiverPlan:
    """Full per-round plan: solve the relaxed beamformer problem, recover the
    combining vector from the principal eigenvector, and complete it with the
    closed-form scalars and equalizers.

    Deterministic given inputs and tolerance. Solver non-convergence
    propagates; a near-degenerate principal direction is flagged in the
    diagnostics rather than raised.
    """
    peaks = np.asarray(peak_powers, dtype=np.float64)
    problem = build_relaxation(channel, knowledge_stds, partition, peaks)
    solution = solve(problem, tol=tol, max_iterations=max_iterations)
    pair = extract_principal_eigenpair(solution.W)
    eigvals = np.linalg.eigvalsh(solution.W)
    eig2 = float(eigvals[-2]) if problem.dim > 1 else 0.0
    post = optimal_postprocessing(
        pair.vector, channel, knowledge_stds, partition, peaks
    )
    equalizers = optimal_equalizers(
        pair.vector, channel, post.denormalizers, knowledge_stds, partition
    )
    return TransceiverPlan(
        transmit=TransmitPlan(equalizers=equalizers, peak_powers=peaks),
        receive=ReceiverPlan(
            beamformer=pair.vector,
            denormalizers=post.denormalizers,
            offsets=post.offsets,
        ),
        tag="optimal",
        straggler_indices=post.straggler_indices,
        diagnostics=PlanDiagnostics(
            eig1=float(eigvals[-1]),
            eig2=eig2,
            relaxation_objective=float(solution.objective),
            solver_iterations=solution.iterations,
            degenerate_rank=pair.degenerate,
        ),
    )


def uniform_baseline(
    channel: ChannelState,
    knowledge_stds: np.ndarray,
    partition: DatasetPartition,
    peak_powers: np.ndarray,
) -> TransceiverPlan:
    """Non-optimized reference plan: uniform combining across antennas, every
    transmitting device at peak power with its phase aligned to the combined
    channel, and per-class denormalizers set to the mean (rather than the
    minimum) of the per-device bottleneck expressions.
    """
    stds = np.asarray(knowledge_stds, dtype=np.float64)
    peaks = np.asarray(peak_powers, dtype=np.float64)
    n = channel.num_antennas
    w = np.full(n, 1.0 / np.sqrt(n), dtype=np.complex128)
    active = transmit_active_mask(partition, stds)
    combined = _combined_gains(channel, w)
    gains = np.abs(combined)
    # Phase-align each upload so contributions add constructively; a zero
    # combined gain (measure-zero) falls back to an unrotated upload.
    phases = np.where(gains > 0.0, np.conj(combined) / np.where(gains > 0.0, gains, 1.0), 1.0)
    equalizers = np.where(active, np.sqrt(peaks)[:, None] * phases[:, None], 0.0 + 0.0j)

    expr = _bottleneck_expressions(gains, active, partition, stds, peaks)
    finite = np.where(active, expr, 0.0)
    denormalizers = finite.sum(axis=0) / active.sum(axis=0)
    offsets = partition.counts / partition.class_totals[None, :]

    problem = build_relaxation(channel, stds, partition, peaks)
    return TransceiverPlan(
        transmit=TransmitPlan(equalizers=equalizers, peak_powers=peaks),
        receive=ReceiverPlan(
            beamformer=w, denormalizers=denormalizers, offsets=offsets
        ),
        tag="uniform",
        straggler_indices=np.full(partition.num_classes, -1, dtype=np.int64),
        diagnostics=PlanDiagnostics(
            eig1=1.0,
            eig2=0.0,
            relaxation_objective=relaxation_objective(w, problem),
            solver_iterations=0,
            degenerate_rank=False,
        ),
    )


def orthogonal_receive(
    channel: ChannelState,
    knowledge: KnowledgeSet,
    partition: DatasetPartition,
    peak_powers: np.ndarray,
    noise: np.ndarray,
) -> EstimatedKnowledge:
    """Orthogonal-uplink baseline: each device's normalized blocks pass through
    dedicated channel uses (M*K^2 in total), are matched-filter combined and
    denormalized per device, then digitally weighted into the global estimate.

    Device i uploads each class block at peak power, phase-free because the
    matched filter h_i / ||h_i|| makes the combined gain ||h_i|| real. The
    server recovers per-device knowledge q_hat_i^k x + mean offset and applies
    the sample-count weights.

    Args:
        channel: True channel the uploads experience.
        knowledge: All devices' knowledge vectors and statistics.
        partition: Sample counts (weights and activity).
        peak_powers: (M,) per-device budgets.
        noise: (M, K, K, N) receiver noise, one length-N vector per device,
            class block, and entry slot.

    Returns:
        EstimatedKnowledge over the K classes.
    """
    peaks = np.asarray(peak_powers, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.complex128)
    m, k = partition.counts.shape
    n = channel.num_antennas
    if knowledge.num_wds != m or knowledge.num_classes != k:
        raise ValueError("knowledge and partition disagree on (M, K)")
    if channel.num_wds != m:
        raise ValueError("channel and partition disagree on the device count")
    if peaks.shape != (m,) or np.any(peaks <= 0):
        raise ValueError("peak_powers must be (M,) positive")
    if noise.shape != (m, k, k, n):
        raise ValueError(f"noise must have shape ({m}, {k}, {k}, {n})")

    norms = np.linalg.norm(channel.coefficients, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("a device's channel vector is identically zero")

    active = transmit_active_mask(partition, knowledge.stds)
    safe_stds = np.where(active, knowledge.stds, 1.0)
    signals = np.where(
        active[:, :, None],
        (knowledge.q - knowledge.means[:, :, None]) / safe_stds[:, :, None],
        0.0,
    )  # (M, K, K) normalized blocks, zero where nothing is sent

    scale = norms * np.sqrt(peaks)  # combined signal amplitude per device
    combined_noise = np.einsum(
        "ikdn,in->ikd", noise, np.conj(channel.coefficients) / norms[:, None]
    )
    received = scale[:, None, None] * signals + combined_noise
    per_wd = (
        knowledge.stds[:, :, None] * (received / scale[:, None, None])
        + knowledge.means[:, :, None]
    )  # (M, K, K) per-device complex knowledge estimates
    weights = partition.counts / partition.class_totals[None, :]
    estimates = np.einsum("ik,ikd->kd", weights, per_wd)
    return EstimatedKnowledge(
        complex_estimates=estimates,
        real_view=estimates.real,
        round_index=knowledge.round_index,
    )


def dump_plan(plan: TransceiverPlan) -> str:
    """Deterministic text dump of a plan for golden-file comparison."""
    lines = [f"plan tag={plan.tag}"]
    w = plan.receive.beamformer
    lines.append(
        "beamformer " + " ".join(f"{z.real!r} {z.imag!r}" for z in w)
    )
    lines.append(
        "denormalizers "
        + " ".join(repr(float(v)) for v in plan.receive.denormalizers)
    )
    lines.append(
        "stragglers " + " ".join(str(int(v)) for v in plan.straggler_indices)
    )
    d = plan.diagnostics
    lines.append(
        f"diagnostics eig1={d.eig1!r} eig2={d.eig2!r} "
        f"objective={d.relaxation_objective!r} iterations={d.solver_iterations}"
    )
    for i, row in enumerate(plan.transmit.equalizers):
        lines.append(
            f"equalizers wd={i} "
            + " ".join(f"{z.real!r} {z.imag!r}" for z in row)
        )
    return "\n".join(lines) + "\n"
