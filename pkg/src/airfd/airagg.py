"""Analog multiple-access aggregation: superposition of the devices' transmit
signals over the fading uplink, receive combining with a unit-norm beamformer,
class-block slicing, and the linear estimator that denormalizes the combined
signal into an estimate of the global knowledge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelState

__all__ = [
    "ReceiverPlan",
    "EstimatedKnowledge",
    "superpose_and_combine",
    "split_class_blocks",
    "estimate_global",
]


@dataclass(frozen=True)
class ReceiverPlan:
    """Server-side combining and estimation parameters.

    Attributes:
        beamformer: Length-N complex combining vector w, unit 2-norm.
        denormalizers: (K,) positive scalars; block k is divided by
            denormalizers[k] before the mean offsets are added back.
        offsets: (M, K) real weights on each device's mean in the offset term.
    """

    beamformer: np.ndarray
    denormalizers: np.ndarray
    offsets: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.beamformer, dtype=np.complex128)
        lam = np.asarray(self.denormalizers, dtype=np.float64)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError("beamformer must be a vector")
        if abs(np.linalg.norm(w) - 1.0) > 1e-10:
            raise ValueError("beamformer must have unit 2-norm")
        if lam.ndim != 1 or np.any(lam <= 0):
            raise ValueError("denormalizers must be positive scalars")
        if offsets.ndim != 2 or offsets.shape[1] != lam.shape[0]:
            raise ValueError("offsets must be (M, K) matching the denormalizers")
        for arr in (w, lam, offsets):
            arr.setflags(write=False)
        object.__setattr__(self, "beamformer", w)
        object.__setattr__(self, "denormalizers", lam)
        object.__setattr__(self, "offsets", offsets)

    @property
    def num_classes(self) -> int:
        return self.denormalizers.shape[0]


@dataclass(frozen=True)
class EstimatedKnowledge:
    """The estimator output: per-class complex estimates and their real parts.

    Attributes:
        complex_estimates: (K, K) complex; row k estimates the global class-k
            soft-prediction vector.
        real_view: Elementwise real part of complex_estimates — the view the
            learner consumes (the signal component is real by construction;
            the imaginary part is pure noise).
        round_index: Round the estimate belongs to.
    """

    complex_estimates: np.ndarray
    real_view: np.ndarray
    round_index: int = 0

    def __post_init__(self) -> None:
        est = np.asarray(self.complex_estimates, dtype=np.complex128)
        real = np.asarray(self.real_view, dtype=np.float64)
        if est.ndim != 2 or est.shape[0] != est.shape[1]:
            raise ValueError("complex_estimates must be (K, K)")
        if real.shape != est.shape or not np.array_equal(real, est.real):
            raise ValueError("real_view must be the elementwise real part")
        est.setflags(write=False)
        real.setflags(write=False)
        object.__setattr__(self, "complex_estimates", est)
        object.__setattr__(self, "real_view", real)


def superpose_and_combine(
    signals: np.ndarray,
    channel: ChannelState,
    beamformer: np.ndarray,
    noise: np.ndarray,
) -> np.ndarray:
    """Receive the superposed transmissions and combine across antennas.

    For each time slot d: y_hat[d] = sum_i w^H h_i * signals[i, d] + w^H n[d].

    Args:
        signals: (M, K**2) complex; row i is device i's transmit signal.
        channel: Block-fading state with (M, N) coefficients.
        beamformer: Length-N unit-norm combining vector w.
        noise: (K**2, N) complex receiver noise, one vector per time slot.

    Returns:
        Length-K**2 complex combined signal y_hat.
    """
    signals = np.asarray(signals, dtype=np.complex128)
    w = np.asarray(beamformer, dtype=np.complex128)
    noise = np.asarray(noise, dtype=np.complex128)
    coef = channel.coefficients
    if signals.ndim != 2 or signals.shape[0] != coef.shape[0]:
        raise ValueError("signals must be (M, D) matching the channel's M")
    if w.shape != (coef.shape[1],):
        raise ValueError("beamformer length must match the antenna count")
    if abs(np.linalg.norm(w) - 1.0) > 1e-10:
        raise ValueError("beamformer must have unit 2-norm")
    if noise.shape != (signals.shape[1], coef.shape[1]):
        raise ValueError("noise must be (D, N): one length-N vector per slot")
    effective_gains = coef @ np.conj(w)  # w^H h_i for every device
    return signals.T @ effective_gains + noise @ np.conj(w)


def split_class_blocks(combined: np.ndarray, num_classes: int) -> np.ndarray:
    """Slice the length-K**2 combined signal into K class blocks of length K."""
    combined = np.asarray(combined)
    if combined.shape != (num_classes * num_classes,):
        raise ValueError(
            f"combined signal must have length {num_classes * num_classes}"
        )
    return combined.reshape(num_classes, num_classes)


def estimate_global(
    blocks: np.ndarray,
    plan: ReceiverPlan,
    means: np.ndarray,
    round_index: int = 0,
) -> EstimatedKnowledge:
    """Denormalize the combined class blocks into global-knowledge estimates.

    r_hat^k = blocks[k] / denormalizers[k] + sum_i offsets[i, k] * means[i, k] * 1.

    Args:
        blocks: (K, K) complex; row k is the combined class-k block.
        plan: Receiver plan supplying denormalizers and mean offsets.
        means: (M, K) per-device knowledge means (uploaded error-free).
        round_index: Stamped onto the returned estimate.

    Returns:
        EstimatedKnowledge with complex estimates and their real view.
    """
    blocks = np.asarray(blocks, dtype=np.complex128)
    means = np.asarray(means, dtype=np.float64)
    k = plan.num_classes
    if blocks.shape != (k, k):
        raise ValueError(f"blocks must be ({k}, {k}), got {blocks.shape}")
    if means.shape != plan.offsets.shape:
        raise ValueError("means must have the same (M, K) shape as the offsets")
    offset_per_class = np.sum(plan.offsets * means, axis=0)  # (K,)
    estimates = blocks / plan.denormalizers[:, None] + offset_per_class[:, None]
    return EstimatedKnowledge(
        complex_estimates=estimates,
        real_view=estimates.real,
        round_index=round_index,
    )
