"""Per-device soft-prediction knowledge: per-class averages, normalization
statistics, transmit-signal assembly, and the ideal error-free global target.

Every "knowledge vector" is a length-K probability vector: the average of
softmax outputs over one device's samples of one class. Before transmission it
is normalized to zero mean and unit population second moment so that a complex
equalizer scaling sets the per-block transmit power exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Q_HAT_FLOOR",
    "DatasetPartition",
    "KnowledgeSet",
    "TransmitPlan",
    "local_knowledge",
    "knowledge_stats",
    "normalize_knowledge",
    "assemble_transmit_signal",
    "global_target",
]

# Below this population std a knowledge vector is treated as degenerate
# (numerically constant): its normalized signal is exactly zero and its content
# is fully carried by the mean offset, so the pipeline skips the block instead
# of dividing by ~0. The floor value itself is valid.
Q_HAT_FLOOR = 1e-8


class DegenerateKnowledgeError(ValueError):
    """Raised when a knowledge vector's std is below the usable floor."""


@dataclass(frozen=True)
class DatasetPartition:
    """Sample counts of M devices over K classes.

    Attributes:
        counts: (M, K) nonnegative ints; counts[i, k] = B_i^k.
        dirichlet_param: Concentration used to draw the split, or None for IID.
    """

    counts: np.ndarray
    dirichlet_param: float | None = None

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError(f"counts must be (M, K), got shape {counts.shape}")
        if not np.issubdtype(counts.dtype, np.integer):
            raise ValueError("counts must be integers")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        counts = counts.astype(np.int64).copy()
        if np.any(counts.sum(axis=0) <= 0):
            raise ValueError("every class must have at least one sample overall")
        if np.any(counts.sum(axis=1) <= 0):
            raise ValueError("every device must hold at least one sample")
        if self.dirichlet_param is not None and self.dirichlet_param <= 0:
            raise ValueError("dirichlet_param must be positive when present")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def num_wds(self) -> int:
        return self.counts.shape[0]

    @property
    def num_classes(self) -> int:
        return self.counts.shape[1]

    @property
    def class_totals(self) -> np.ndarray:
        """B^k = sum_i B_i^k, shape (K,)."""
        return self.counts.sum(axis=0)

    @property
    def per_wd_totals(self) -> np.ndarray:
        """B_i = sum_k B_i^k, shape (M,)."""
        return self.counts.sum(axis=1)

    @property
    def active_mask(self) -> np.ndarray:
        """(M, K) bool: device i participates in class k iff B_i^k > 0."""
        return self.counts > 0

    def class_weights(self) -> np.ndarray:
        """(M, K) aggregation weights B_i^k / B^k (rows of zero where inactive)."""
        return self.counts / self.class_totals[None, :]


@dataclass(frozen=True)
class KnowledgeSet:
    """All devices' per-class knowledge with its normalization statistics.

    Attributes:
        q: (M, K, K) array; q[i, k] is device i's class-k knowledge vector.
        means: (M, K) per-vector means q_bar.
        stds: (M, K) per-vector population stds q_hat (nonnegative).
        round_index: Round the knowledge was generated in.
    """

    q: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    round_index: int = 0

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        stds = np.asarray(self.stds, dtype=np.float64)
        if q.ndim != 3 or q.shape[1] != q.shape[2]:
            raise ValueError(f"q must be (M, K, K), got shape {q.shape}")
        m, k = q.shape[0], q.shape[1]
        if means.shape != (m, k) or stds.shape != (m, k):
            raise ValueError("means/stds must both have shape (M, K)")
        if np.any(q < -1e-12) or np.any(np.abs(q.sum(axis=2) - 1.0) > 1e-10):
            raise ValueError("each knowledge vector must be a probability vector")
        if np.any(stds < 0):
            raise ValueError("stds must be nonnegative")
        for arr in (q, means, stds):
            arr.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def num_wds(self) -> int:
        return self.q.shape[0]

    @property
    def num_classes(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class TransmitPlan:
    """Per-device, per-class complex equalizers under peak-power limits.

    Attributes:
        equalizers: (M, K) complex; equalizers[i, k] scales device i's
            normalized class-k block. Squared magnitude = transmit power.
        peak_powers: (M,) positive per-device power budgets (watts).
    """

    equalizers: np.ndarray
    peak_powers: np.ndarray

    def __post_init__(self) -> None:
        eq = np.asarray(self.equalizers, dtype=np.complex128)
        peak = np.asarray(self.peak_powers, dtype=np.float64)
        if eq.ndim != 2:
            raise ValueError(f"equalizers must be (M, K), got shape {eq.shape}")
        if peak.shape != (eq.shape[0],):
            raise ValueError("peak_powers must have shape (M,)")
        if np.any(peak <= 0):
            raise ValueError("peak powers must be positive")
        # Tiny headroom absorbs the round-trip rounding of a peak-power design.
        power = eq.real**2 + eq.imag**2
        if np.any(power > peak[:, None] * (1.0 + 1e-9)):
            raise ValueError("equalizer power exceeds the peak-power budget")
        eq.setflags(write=False)
        peak.setflags(write=False)
        object.__setattr__(self, "equalizers", eq)
        object.__setattr__(self, "peak_powers", peak)


def local_knowledge(outputs_by_class: list[np.ndarray], counts_row: np.ndarray) -> np.ndarray:
    """Average soft predictions per class for one device.

    Args:
        outputs_by_class: Length-K list; entry k is a (B_i^k, K) array of
            softmax outputs of the device's class-k samples (an empty array
            where the device holds none).
        counts_row: Length-K sample counts B_i^k for consistency checking.

    Returns:
        (K, K) array whose row k is the class-k knowledge vector. Rows of
        classes with zero samples are filled with the uniform vector (they are
        excluded from aggregation by their zero weight).
    """
    counts_row = np.asarray(counts_row)
    num_classes = len(outputs_by_class)
    if counts_row.shape != (num_classes,):
        raise ValueError("counts_row length must match the number of classes")
    result = np.full((num_classes, num_classes), 1.0 / num_classes)
    for k, outputs in enumerate(outputs_by_class):
        outputs = np.asarray(outputs, dtype=np.float64)
        if counts_row[k] > 0:
            if outputs.size == 0:
                raise ValueError(
                    f"class {k} reports {counts_row[k]} samples but no outputs"
                )
            if outputs.shape != (counts_row[k], num_classes):
                raise ValueError(
                    f"class {k} outputs must have shape ({counts_row[k]}, {num_classes})"
                )
            result[k] = outputs.mean(axis=0)
    return result


def knowledge_stats(q_vec: np.ndarray) -> tuple[float, float]:
    """Population mean and std of one knowledge vector.

    q_bar = (1/K) sum_d q[d];  q_hat**2 = (1/K) sum_d (q[d] - q_bar)**2.
    """
    q_vec = np.asarray(q_vec, dtype=np.float64)
    if q_vec.ndim != 1 or q_vec.size < 1:
        raise ValueError("knowledge vector must be 1-D and non-empty")
    mean = float(q_vec.mean())
    std = float(np.sqrt(np.mean((q_vec - mean) ** 2)))
    return mean, std


def normalize_knowledge(q_vec: np.ndarray, q_bar: float, q_hat: float) -> np.ndarray:
    """Zero-mean, unit-second-moment normalization x = (q - q_bar) / q_hat.

    Raises:
        DegenerateKnowledgeError: if q_hat is below the usable floor (a
            numerically constant vector); callers skip transmitting such a
            block — its content is carried exactly by the mean-offset term.
    """
    if q_hat < Q_HAT_FLOOR:
        raise DegenerateKnowledgeError(
            f"knowledge std {q_hat:.3e} is below the floor {Q_HAT_FLOOR:.0e}"
        )
    q_vec = np.asarray(q_vec, dtype=np.float64)
    return (q_vec - q_bar) / q_hat


def assemble_transmit_signal(
    normalized_blocks: np.ndarray, equalizers_row: np.ndarray
) -> np.ndarray:
    """Concatenate the K equalized class blocks into one length-K**2 signal.

    Args:
        normalized_blocks: (K, K) real array; row k is the normalized class-k
            knowledge x_i^k.
        equalizers_row: Length-K complex equalizers of this device.

    Returns:
        Complex vector of length K**2; entries of block k all carry squared
        magnitude |P_i^k|**2 on average over the block.
    """
    blocks = np.asarray(normalized_blocks, dtype=np.float64)
    eq = np.asarray(equalizers_row, dtype=np.complex128)
    if blocks.ndim != 2 or blocks.shape[0] != blocks.shape[1]:
        raise ValueError(f"normalized_blocks must be (K, K), got {blocks.shape}")
    if eq.shape != (blocks.shape[0],):
        raise ValueError("equalizers_row length must match the class count")
    return (eq[:, None] * blocks).reshape(-1)


def global_target(knowledge: KnowledgeSet, partition: DatasetPartition) -> np.ndarray:
    """Ideal aggregation target: q^k = sum_i (B_i^k / B^k) q_i^k.

    Returns:
        (K, K) array whose row k is the global class-k soft-prediction vector —
        a convex combination of the devices' knowledge, hence a probability
        vector. Invariant under permuting device order.
    """
    if knowledge.num_wds != partition.num_wds:
        raise ValueError("knowledge and partition disagree on the device count")
    if knowledge.num_classes != partition.num_classes:
        raise ValueError("knowledge and partition disagree on the class count")
    weights = partition.class_weights()  # (M, K)
    # target[k, d] = sum_i weights[i, k] * q[i, k, d]
    return np.einsum("ik,ikd->kd", weights, knowledge.q)
