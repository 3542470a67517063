"""Experiment driver: dataset synthesis and partitioning, configuration
handling, the full multi-round distillation loop for every method, and CSV
emission.

The driver compares four ways of sharing knowledge each round:

- ``proposed``   — superposed uplink with the optimized receive plan,
- ``uniform``    — superposed uplink with the non-adaptive baseline plan,
- ``orthogonal`` — per-device uplink slots with matched-filter reception,
- ``error_free`` — the exact aggregation target, bypassing the channel.

All randomness is drawn from named substreams of one experiment seed, so a
rerun with the same configuration produces byte-identical CSV files, and all
methods within a trial see the same data, fading, noise, and initial models.
"""

from __future__ import annotations

import argparse
import configparser
import io
import os
import time
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .airagg import estimate_global, split_class_blocks, superpose_and_combine
from .channel import (
    ChannelConfig,
    ChannelState,
    path_loss,
    perturb_csi,
    sample_channel,
    sample_distances,
    sample_noise,
    scale_coefficients,
)
from .knowledge import (
    DatasetPartition,
    KnowledgeSet,
    assemble_transmit_signal,
    global_target,
    local_knowledge,
)
from .learner import (
    Architecture,
    LearnerConfig,
    ModelParams,
    evaluate_accuracy,
    forward_batch,
    init_params,
    loss_and_grad,
    train_round,
)
from .metrics import (
    BoundConfig,
    RoundMetrics,
    a2_coefficient,
    csv_header,
    p2_objective,
    phi1,
    phi2_sq_all,
    phi2_sq_analytic,
    phi2_sq_monte_carlo,
)
from .oracles import (
    beamformer_grid_search,
    finite_difference_gradient,
    naive_aggregate,
)
from .rng import substream
from .transceiver import (
    build_relaxation,
    optimize_round,
    orthogonal_receive,
    relaxation_objective,
    transmit_active_mask,
    uniform_baseline,
)

METHODS = ("proposed", "uniform", "orthogonal", "error_free")

# Airtime of one transmitted scalar, used only for reporting in the summary.
AIRTIME_PER_SCALAR_S = 3.6e-6


# ---------------------------------------------------------------------------
# Dataset synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic Gaussian-mixture dataset parameters.

    Attributes:
        num_samples: Training samples to draw (labels balanced globally).
        feature_dim: Feature dimension F.
        num_classes: Class count K (>= 2).
        separation: Pairwise distance between any two class means; 0 makes
            the classes statistically indistinguishable.
        test_samples: Size of the held-out evaluation set.
    """

    num_samples: int
    feature_dim: int
    num_classes: int
    separation: float
    test_samples: int = 500

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_samples < self.num_classes:
            raise ValueError("need at least one sample per class")
        if self.test_samples < 1:
            raise ValueError("test_samples must be >= 1")
        if self.separation < 0:
            raise ValueError("separation must be nonnegative")
        if self.feature_dim < self.num_classes - 1:
            raise ValueError(
                "feature_dim must be >= num_classes - 1 so that equidistant "
                "class means exist"
            )


class Dataset(NamedTuple):
    features: np.ndarray  # (S, F) float64
    labels: np.ndarray  # (S,) int64


def class_means(spec: DatasetSpec) -> np.ndarray:
    """K points in R^F with every pairwise distance exactly `separation`.

    The vertices of a regular simplex are built in the zero-sum subspace of
    R^K through an orthonormal (Helmert) basis, scaled, and zero-padded to F
    dimensions. Requires F >= K - 1.
    """
    k, f = spec.num_classes, spec.feature_dim
    basis = np.zeros((k - 1, k))
    for j in range(1, k):
        basis[j - 1, :j] = 1.0
        basis[j - 1, j] = -float(j)
        basis[j - 1] /= np.sqrt(j * (j + 1.0))
    # Column c of `basis` holds the (K-1) coordinates of vertex c; vertices of
    # the embedded standard simplex are sqrt(2) apart.
    means = np.zeros((k, f))
    means[:, : k - 1] = (spec.separation / np.sqrt(2.0)) * basis.T
    return means


def synthesize_dataset(spec: DatasetSpec, rng: np.random.Generator) -> Dataset:
    """Draw a balanced labeled sample: class k is N(mu_k, I).

    The label sequence is deterministic (class-sorted, sizes as equal as the
    total allows); only the features consume randomness.
    """
    k = spec.num_classes
    base, extra = divmod(spec.num_samples, k)
    sizes = np.full(k, base, dtype=np.int64)
    sizes[:extra] += 1
    labels = np.repeat(np.arange(k, dtype=np.int64), sizes)
    means = class_means(spec)
    features = means[labels] + rng.standard_normal(
        (spec.num_samples, spec.feature_dim)
    )
    return Dataset(features=features, labels=labels)


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of `total` items matching `proportions`; the sum is
    exact, remainders go to the largest fractional parts (ties: lowest index).
    """
    scaled = proportions * total
    alloc = np.floor(scaled).astype(np.int64)
    remainder = total - int(alloc.sum())
    if remainder > 0:
        order = np.argsort(-(scaled - alloc), kind="stable")
        alloc[order[:remainder]] += 1
    return alloc


def partition(
    dataset: Dataset,
    mode: str,
    num_wds: int,
    concentration: float,
    rng: np.random.Generator,
) -> tuple[DatasetPartition, list[np.ndarray]]:
    """Assign every sample to one of `num_wds` devices.

    Modes:
        "iid"       — per class, shuffled samples are dealt round-robin with a
                      rotating start, giving near-equal device totals and
                      class mixes (exactly equal whenever the counts divide).
        "dirichlet" — per class, device proportions are drawn from
                      Dir(concentration * 1_M) and realized by largest-
                      remainder rounding, producing label skew.

    A device that ends up with zero samples is repaired by taking one sample
    of the most-held class from the currently largest device, so every device
    can participate in training.

    Returns:
        (DatasetPartition, assignment) where assignment[i] holds the sorted
        dataset indices of device i.
    """
    if mode not in ("iid", "dirichlet"):
        raise ValueError(f"unknown partition mode: {mode!r}")
    labels = dataset.labels
    num_classes = int(labels.max()) + 1
    if labels.shape[0] < num_wds:
        raise ValueError(
            f"cannot spread {labels.shape[0]} samples over {num_wds} devices"
        )
    per_wd: list[list[np.ndarray]] = [[] for _ in range(num_wds)]
    pointer = 0
    for k in range(num_classes):
        idx = rng.permutation(np.flatnonzero(labels == k))
        if mode == "iid":
            dest = (pointer + np.arange(idx.size)) % num_wds
            pointer = (pointer + idx.size) % num_wds
            for i in range(num_wds):
                per_wd[i].append(idx[dest == i])
        else:
            proportions = rng.dirichlet(np.full(num_wds, concentration))
            alloc = _largest_remainder(proportions, idx.size)
            bounds = np.concatenate(([0], np.cumsum(alloc)))
            for i in range(num_wds):
                per_wd[i].append(idx[bounds[i] : bounds[i + 1]])

    assignment = [np.sort(np.concatenate(parts)) for parts in per_wd]
    # Repair empty devices so every one of them can train and transmit.
    while True:
        sizes = np.array([a.size for a in assignment])
        empty = np.flatnonzero(sizes == 0)
        if empty.size == 0:
            break
        donor = int(np.argmax(sizes))
        moved, rest = assignment[donor][-1], assignment[donor][:-1]
        assignment[donor] = rest
        assignment[int(empty[0])] = np.array([moved], dtype=np.int64)

    counts = np.zeros((num_wds, num_classes), dtype=np.int64)
    for i, idx in enumerate(assignment):
        counts[i] = np.bincount(labels[idx], minlength=num_classes)
    part = DatasetPartition(
        counts=counts,
        dirichlet_param=concentration if mode == "dirichlet" else None,
    )
    return part, assignment


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run needs.

    Attributes:
        channel: Uplink parameters (device count M lives here).
        learner: Per-device training hyperparameters (round count T included).
        bound: Smoothness/variance constants used only for reported bounds.
        dataset: Synthetic dataset parameters.
        partition_mode: "iid" or "dirichlet".
        dirichlet_param: Concentration of the label-skew draw.
        methods: Non-empty subset of METHODS, evaluated per trial.
        trials: Independent repetitions (fresh data/placement per trial).
        seed: Root seed; every random draw is a named substream of it.
        output_dir: Where CSVs and the summary are written.
        hidden_dim: Hidden width of every device model.
        peak_power: Per-device transmit power budget P_i (same for all).
        eval_every: Test-accuracy cadence in rounds (the last round is always
            evaluated; rows between evaluations repeat the latest value).
    """

    channel: ChannelConfig
    learner: LearnerConfig
    bound: BoundConfig
    dataset: DatasetSpec
    partition_mode: str
    dirichlet_param: float
    methods: tuple[str, ...]
    trials: int
    seed: int
    output_dir: str
    hidden_dim: int = 32
    peak_power: float = 1e-3
    eval_every: int = 1

    def __post_init__(self) -> None:
        if self.partition_mode not in ("iid", "dirichlet"):
            raise ValueError(f"unknown partition mode: {self.partition_mode!r}")
        if self.dirichlet_param <= 0:
            raise ValueError("dirichlet_param must be positive")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods: {unknown}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must not repeat")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.peak_power <= 0:
            raise ValueError("peak_power must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


DEFAULT_CONFIG = """\
[experiment]
seed = 7
trials = 5
methods = proposed,uniform,error_free
output_dir = results
eval_every = 1

[dataset]
num_samples = 900
feature_dim = 8
num_classes = 3
separation = 2.5
test_samples = 600

[partition]
mode = dirichlet
dirichlet_param = 0.5

[channel]
num_wds = 10
num_antennas = 5
noise_variance = 2e-16
carrier_freq = 915e6
pathloss_exponent = 4.0
antenna_gain_ps = 1.0
antenna_gain_wd = 1.0
distance_min = 100.0
distance_max = 200.0
csi_quality = 1.0
peak_power = 1e-3

[learner]
hidden_dim = 32
distill_weight = 3.0
init_lr = 0.15
rounds = 200
local_epochs = 1
lr_cap = inf
"""

BOUND_DEFAULTS = """\
[bound]
l1 = 1.0
l2 = 1.0
s_bound = 1.0
f_max = 1.0
"""


def default_parser() -> configparser.ConfigParser:
    """The built-in defaults as a mutable key-value structure."""
    parser = configparser.ConfigParser()
    parser.read_string(DEFAULT_CONFIG)
    parser.read_string(BOUND_DEFAULTS)
    return parser


def load_config_file(path: str | None) -> configparser.ConfigParser:
    """Defaults overlaid with the file at `path` (if given)."""
    parser = default_parser()
    if path is not None:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle)
    return parser


def config_from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    """Build the typed configuration from flat key-value sections."""
    exp, dat = parser["experiment"], parser["dataset"]
    par, cha, lrn = parser["partition"], parser["channel"], parser["learner"]
    bnd = parser["bound"]
    channel = ChannelConfig(
        num_wds=cha.getint("num_wds"),
        num_antennas=cha.getint("num_antennas"),
        noise_variance=cha.getfloat("noise_variance"),
        carrier_freq=cha.getfloat("carrier_freq"),
        pathloss_exponent=cha.getfloat("pathloss_exponent"),
        antenna_gain_ps=cha.getfloat("antenna_gain_ps"),
        antenna_gain_wd=cha.getfloat("antenna_gain_wd"),
        distance_range=(cha.getfloat("distance_min"), cha.getfloat("distance_max")),
        csi_quality=cha.getfloat("csi_quality"),
    )
    learner = LearnerConfig(
        distill_weight=lrn.getfloat("distill_weight"),
        init_lr=lrn.getfloat("init_lr"),
        rounds=lrn.getint("rounds"),
        local_epochs=lrn.getint("local_epochs"),
        lr_cap=lrn.getfloat("lr_cap"),
    )
    bound = BoundConfig(
        l1=bnd.getfloat("l1"),
        l2=bnd.getfloat("l2"),
        s_bound=bnd.getfloat("s_bound"),
        f_max=bnd.getfloat("f_max"),
    )
    dataset = DatasetSpec(
        num_samples=dat.getint("num_samples"),
        feature_dim=dat.getint("feature_dim"),
        num_classes=dat.getint("num_classes"),
        separation=dat.getfloat("separation"),
        test_samples=dat.getint("test_samples"),
    )
    methods = tuple(m.strip() for m in exp["methods"].split(",") if m.strip())
    return ExperimentConfig(
        channel=channel,
        learner=learner,
        bound=bound,
        dataset=dataset,
        partition_mode=par["mode"].strip(),
        dirichlet_param=par.getfloat("dirichlet_param"),
        methods=methods,
        trials=exp.getint("trials"),
        seed=exp.getint("seed"),
        output_dir=exp["output_dir"].strip(),
        hidden_dim=lrn.getint("hidden_dim"),
        peak_power=cha.getfloat("peak_power"),
        eval_every=exp.getint("eval_every"),
    )


def config_to_parser(config: ExperimentConfig) -> configparser.ConfigParser:
    """Inverse of config_from_parser; floats use repr so dumps round-trip."""
    parser = default_parser()
    exp, dat = parser["experiment"], parser["dataset"]
    par, cha, lrn = parser["partition"], parser["channel"], parser["learner"]
    bnd = parser["bound"]
    exp["seed"] = str(config.seed)
    exp["trials"] = str(config.trials)
    exp["methods"] = ",".join(config.methods)
    exp["output_dir"] = config.output_dir
    exp["eval_every"] = str(config.eval_every)
    dat["num_samples"] = str(config.dataset.num_samples)
    dat["feature_dim"] = str(config.dataset.feature_dim)
    dat["num_classes"] = str(config.dataset.num_classes)
    dat["separation"] = repr(float(config.dataset.separation))
    dat["test_samples"] = str(config.dataset.test_samples)
    par["mode"] = config.partition_mode
    par["dirichlet_param"] = repr(float(config.dirichlet_param))
    cha["num_wds"] = str(config.channel.num_wds)
    cha["num_antennas"] = str(config.channel.num_antennas)
    cha["noise_variance"] = repr(float(config.channel.noise_variance))
    cha["carrier_freq"] = repr(float(config.channel.carrier_freq))
    cha["pathloss_exponent"] = repr(float(config.channel.pathloss_exponent))
    cha["antenna_gain_ps"] = repr(float(config.channel.antenna_gain_ps))
    cha["antenna_gain_wd"] = repr(float(config.channel.antenna_gain_wd))
    cha["distance_min"] = repr(float(config.channel.distance_range[0]))
    cha["distance_max"] = repr(float(config.channel.distance_range[1]))
    cha["csi_quality"] = repr(float(config.channel.csi_quality))
    cha["peak_power"] = repr(float(config.peak_power))
    lrn["hidden_dim"] = str(config.hidden_dim)
    lrn["distill_weight"] = repr(float(config.learner.distill_weight))
    lrn["init_lr"] = repr(float(config.learner.init_lr))
    lrn["rounds"] = str(config.learner.rounds)
    lrn["local_epochs"] = str(config.learner.local_epochs)
    lrn["lr_cap"] = repr(float(config.learner.lr_cap))
    bnd["l1"] = repr(float(config.bound.l1))
    bnd["l2"] = repr(float(config.bound.l2))
    bnd["s_bound"] = repr(float(config.bound.s_bound))
    bnd["f_max"] = repr(float(config.bound.f_max))
    return parser


def dump_config(config: ExperimentConfig) -> str:
    """The resolved configuration as reloadable key-value text."""
    buffer = io.StringIO()
    config_to_parser(config).write(buffer)
    return buffer.getvalue()


# ---------------------------------------------------------------------------
# Round-level building blocks
# ---------------------------------------------------------------------------


def generate_knowledge(
    params_by_wd: list[ModelParams],
    features_by_wd: list[np.ndarray],
    labels_by_wd: list[np.ndarray],
    part: DatasetPartition,
    round_index: int,
) -> KnowledgeSet:
    """Every device's per-class average soft predictions plus statistics."""
    num_classes = part.num_classes
    q = np.empty((part.num_wds, num_classes, num_classes))
    for i, params in enumerate(params_by_wd):
        probs = forward_batch(params, features_by_wd[i])
        outputs_by_class = [
            probs[labels_by_wd[i] == k] for k in range(num_classes)
        ]
        q[i] = local_knowledge(outputs_by_class, part.counts[i])
    means = q.mean(axis=2)
    stds = np.sqrt(np.mean((q - means[:, :, None]) ** 2, axis=2))
    return KnowledgeSet(q=q, means=means, stds=stds, round_index=round_index)


def aggregate_over_air(
    knowledge: KnowledgeSet,
    part: DatasetPartition,
    plan,
    true_channel,
    noise: np.ndarray,
) -> np.ndarray:
    """One superposed uplink round under `plan`, through the true channel.

    Devices transmit their normalized, equalized knowledge blocks
    simultaneously; the server combines antennas, denormalizes, and restores
    the mean offsets. Blocks below the usable-variance floor stay silent (the
    equalizer is zero there) and contribute through their offsets alone.

    Returns:
        (K, K) real array; row k estimates the global class-k knowledge.
    """
    mask = transmit_active_mask(part, knowledge.stds)
    centered = knowledge.q - knowledge.means[:, :, None]
    normalized = np.zeros_like(centered)
    np.divide(
        centered,
        knowledge.stds[:, :, None],
        out=normalized,
        where=mask[:, :, None],
    )
    signals = np.stack(
        [
            assemble_transmit_signal(normalized[i], plan.transmit.equalizers[i])
            for i in range(part.num_wds)
        ]
    )
    combined = superpose_and_combine(signals, true_channel, plan.beamformer, noise)
    blocks = split_class_blocks(combined, part.num_classes)
    estimate = estimate_global(
        blocks, plan.receive, knowledge.means, knowledge.round_index
    )
    return estimate.real_view


class CommunicationCost(NamedTuple):
    """Exact per-round and total uplink scalar counts for one method."""

    channel_uses_per_round: int
    scalars_per_round: int
    total_scalars: int


def communication_accounting(
    method: str, num_wds: int, num_classes: int, model_dim: int, rounds: int
) -> CommunicationCost:
    """Uplink cost model.

    Superposed methods spend K^2 channel uses per round regardless of the
    device count, plus 2MK error-free statistic scalars (means and stds) and
    MK signaling scalars. The orthogonal method spends M*K^2 uses; a
    parameter-averaging scheme would spend M*model_dim (reported for scale
    only); the error-free method is a hypothetical with no uplink.
    """
    m, k, d = int(num_wds), int(num_classes), int(model_dim)
    if method in ("proposed", "uniform"):
        uses = k * k
        scalars = k * k + 2 * m * k + m * k
    elif method == "orthogonal":
        uses = m * k * k
        scalars = uses
    elif method == "error_free":
        uses = 0
        scalars = 0
    elif method == "fl":
        uses = m * d
        scalars = uses
    else:
        raise ValueError(f"unknown method: {method!r}")
    return CommunicationCost(uses, scalars, scalars * int(rounds))


# ---------------------------------------------------------------------------
# The experiment loop
# ---------------------------------------------------------------------------


class TrialAbort(NamedTuple):
    trial: int
    message: str


class ExperimentResult(NamedTuple):
    """Everything run_experiment produced, for tests and callers.

    csv_paths/summary_path point at the written files; rows holds the same
    records in memory; final_accuracies[method] lists the mean end-of-run
    test accuracy of each completed trial; final_params[method][j][i] is
    device i's final model in the j-th completed trial.
    """

    csv_paths: dict[str, str]
    summary_path: str
    rows: dict[str, list[RoundMetrics]]
    final_accuracies: dict[str, list[float]]
    final_params: dict[str, list[list[ModelParams]]]
    completed_trials: list[int]
    aborts: list[TrialAbort]


def _run_trial(
    config: ExperimentConfig,
    arch: Architecture,
    peaks: np.ndarray,
    a2: float,
    trial: int,
):
    """All configured methods on one trial's data and channel draws."""
    seed = config.seed
    spec = config.dataset
    cha = config.channel
    lrn = config.learner
    num_wds, num_classes = cha.num_wds, spec.num_classes
    rounds, zeta = lrn.rounds, cha.csi_quality
    noise_var = cha.noise_variance

    train = synthesize_dataset(spec, substream(seed, "data", trial))
    test = synthesize_dataset(
        replace(spec, num_samples=spec.test_samples),
        substream(seed, "testdata", trial),
    )
    part, assignment = partition(
        train,
        config.partition_mode,
        num_wds,
        config.dirichlet_param,
        substream(seed, "partition", trial),
    )
    features_by_wd = [train.features[idx] for idx in assignment]
    labels_by_wd = [train.labels[idx] for idx in assignment]
    distances = sample_distances(cha, substream(seed, "distance", trial))
    amplitudes = np.sqrt([path_loss(d, cha) for d in distances])
    unit_config = replace(
        cha, pathloss_exponent=0.0, antenna_gain_ps=1.0, antenna_gain_wd=1.0
    )
    initial = [
        init_params(arch, substream(seed, "init", trial, i))
        for i in range(num_wds)
    ]

    rows: dict[str, list[RoundMetrics]] = {m: [] for m in config.methods}
    accuracy: dict[str, float] = {}
    finals: dict[str, list[ModelParams]] = {}
    plan_seconds: dict[str, float] = {m: 0.0 for m in config.methods}

    for method in config.methods:
        params = list(initial)
        last_acc = 0.0
        for t in range(rounds):
            knowledge = generate_knowledge(
                params, features_by_wd, labels_by_wd, part, t
            )
            fading = sample_channel(
                unit_config, distances, substream(seed, "fading", trial, t), t
            )
            true_channel = scale_coefficients(fading, amplitudes)

            plan = None
            if method == "error_free":
                target = global_target(knowledge, part)
            elif method == "orthogonal":
                noise = sample_noise(
                    cha.num_antennas,
                    num_wds * num_classes * num_classes,
                    noise_var,
                    substream(seed, "orthnoise", trial, t),
                ).reshape(num_wds, num_classes, num_classes, cha.num_antennas)
                target = orthogonal_receive(
                    true_channel, knowledge, part, peaks, noise
                ).real_view
            else:
                perceived = scale_coefficients(
                    perturb_csi(fading, zeta, substream(seed, "csi", trial, t)),
                    amplitudes,
                )
                start = time.perf_counter()
                if method == "proposed":
                    plan = optimize_round(perceived, knowledge.stds, part, peaks)
                else:
                    plan = uniform_baseline(perceived, knowledge.stds, part, peaks)
                plan_seconds[method] += time.perf_counter() - start
                noise = sample_noise(
                    cha.num_antennas,
                    num_classes * num_classes,
                    noise_var,
                    substream(seed, "noise", trial, t),
                )
                target = aggregate_over_air(
                    knowledge, part, plan, true_channel, noise
                )

            batch_rng = (
                substream(seed, "batch", trial, t) if lrn.local_epochs > 1 else None
            )
            losses = np.empty(num_wds)
            for i in range(num_wds):
                params[i], losses[i] = train_round(
                    params[i],
                    features_by_wd[i],
                    labels_by_wd[i],
                    target,
                    lrn,
                    t,
                    batch_rng,
                )
            if t % config.eval_every == 0 or t == rounds - 1:
                last_acc = float(
                    np.mean(
                        [
                            evaluate_accuracy(p, test.features, test.labels)
                            for p in params
                        ]
                    )
                )

            if plan is None:
                phi1_max = phi1_mean = phi2_mean = p2_val = p4_val = 0.0
                eig1, eig2 = 1.0, 0.0
            else:
                phi1_values = phi1(plan, true_channel, knowledge, part)
                phi1_max = float(phi1_values.max())
                phi1_mean = float(phi1_values.mean())
                phi2_mean = float(
                    phi2_sq_all(plan.receive.denormalizers, part, noise_var).mean()
                )
                p2_val = p2_objective(
                    plan.beamformer,
                    true_channel,
                    knowledge.stds,
                    part,
                    peaks,
                    noise_var,
                    a2,
                    rounds,
                )
                p4_val = plan.diagnostics.relaxation_objective
                eig1, eig2 = plan.diagnostics.eig1, plan.diagnostics.eig2
            rows[method].append(
                RoundMetrics(
                    trial=trial,
                    round_index=t,
                    plan_tag=method,
                    num_antennas=cha.num_antennas,
                    num_wds=num_wds,
                    num_classes=num_classes,
                    zeta=zeta,
                    phi1_max=phi1_max,
                    phi1_mean=phi1_mean,
                    phi2_sq_mean=phi2_mean,
                    p2_objective=p2_val,
                    p4_objective=p4_val,
                    eig1=eig1,
                    eig2=eig2,
                    train_loss_mean=float(losses.mean()),
                    test_acc_mean=last_acc,
                )
            )
        accuracy[method] = last_acc
        finals[method] = params
    return rows, accuracy, finals, plan_seconds


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every configured method on every trial and write the outputs.

    Trials are independent; a failure inside one aborts that trial alone (its
    rows are dropped, a diagnostic is recorded) and the remaining trials run.
    Rerunning with an identical configuration rewrites byte-identical CSVs;
    wall-clock timing appears only in the summary file.
    """
    arch = Architecture(
        feature_dim=config.dataset.feature_dim,
        hidden_dim=config.hidden_dim,
        num_classes=config.dataset.num_classes,
    )
    peaks = np.full(config.channel.num_wds, config.peak_power)
    a2 = a2_coefficient(config.bound, config.learner)

    rows: dict[str, list[RoundMetrics]] = {m: [] for m in config.methods}
    final_accuracies: dict[str, list[float]] = {m: [] for m in config.methods}
    final_params: dict[str, list[list[ModelParams]]] = {
        m: [] for m in config.methods
    }
    plan_seconds: dict[str, float] = {m: 0.0 for m in config.methods}
    completed: list[int] = []
    aborts: list[TrialAbort] = []

    wall_start = time.perf_counter()
    for trial in range(config.trials):
        try:
            trial_rows, trial_acc, trial_finals, trial_times = _run_trial(
                config, arch, peaks, a2, trial
            )
        except Exception as exc:  # deliberate: record and move to next trial
            aborts.append(TrialAbort(trial, f"{type(exc).__name__}: {exc}"))
            continue
        for method in config.methods:
            rows[method].extend(trial_rows[method])
            final_accuracies[method].append(trial_acc[method])
            final_params[method].append(trial_finals[method])
            plan_seconds[method] += trial_times[method]
        completed.append(trial)
    total_wall = time.perf_counter() - wall_start

    os.makedirs(config.output_dir, exist_ok=True)
    csv_paths: dict[str, str] = {}
    for method in config.methods:
        path = os.path.join(config.output_dir, f"{method}.csv")
        lines = [csv_header()] + [r.to_csv_row() for r in rows[method]]
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write("\n".join(lines) + "\n")
        csv_paths[method] = path

    summary_path = os.path.join(config.output_dir, "summary.txt")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(_summarize(config, arch, final_accuracies, plan_seconds,
                                completed, aborts, total_wall))

    return ExperimentResult(
        csv_paths=csv_paths,
        summary_path=summary_path,
        rows=rows,
        final_accuracies=final_accuracies,
        final_params=final_params,
        completed_trials=completed,
        aborts=aborts,
    )


def _summarize(
    config: ExperimentConfig,
    arch: Architecture,
    final_accuracies: dict[str, list[float]],
    plan_seconds: dict[str, float],
    completed: list[int],
    aborts: list[TrialAbort],
    total_wall: float,
) -> str:
    """Human-readable run report (the only place wall-clock numbers go)."""
    cha, lrn = config.channel, config.learner
    lines = ["run summary", "===========", ""]
    lines.append(dump_config(config).rstrip())
    lines.append("")
    lines.append(f"model parameters per device: {arch.param_count}")
    lines.append(
        f"trials completed: {len(completed)} of {config.trials}; "
        f"total wall time {total_wall:.3f} s"
    )
    lines.append("")
    lines.append("per-method results")
    lines.append("------------------")
    plan_rounds = len(completed) * lrn.rounds
    for method in config.methods:
        accs = final_accuracies[method]
        mean_acc = float(np.mean(accs)) if accs else float("nan")
        cost = communication_accounting(
            method, cha.num_wds, config.dataset.num_classes,
            arch.param_count, lrn.rounds,
        )
        lines.append(
            f"method={method} trials={len(accs)} "
            f"mean_final_accuracy={mean_acc:.4f}"
        )
        lines.append(
            f"  uplink per round: {cost.channel_uses_per_round} channel uses, "
            f"{cost.scalars_per_round} scalars; total {cost.total_scalars} "
            f"scalars = {cost.total_scalars * AIRTIME_PER_SCALAR_S:.6f} s airtime"
        )
        if method in ("proposed", "uniform") and plan_rounds:
            lines.append(
                f"  mean plan construction time: "
                f"{1e3 * plan_seconds[method] / plan_rounds:.3f} ms/round"
            )
    reference = communication_accounting(
        "fl", cha.num_wds, config.dataset.num_classes,
        arch.param_count, lrn.rounds,
    )
    lines.append(
        f"parameter-averaging reference upload: {reference.scalars_per_round} "
        f"scalars/round at this model size"
    )
    lines.append("")
    lines.append("aborts")
    lines.append("------")
    if aborts:
        lines.extend(f"trial {a.trial}: {a.message}" for a in aborts)
    else:
        lines.append("(none)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Self-check suite (the `verify` subcommand)
# ---------------------------------------------------------------------------


def _verify_instance(seed: int, index: int) -> list[tuple[str, bool, str]]:
    """One battery of independent cross-checks on random instances."""
    checks: list[tuple[str, bool, str]] = []
    rng = substream(seed, "verify", index)
    num_wds, num_classes, num_antennas = 4, 3, 3

    parts = rng.standard_normal((num_wds, num_antennas, 2)) * np.sqrt(0.5)
    channel = ChannelState(coefficients=parts[..., 0] + 1j * parts[..., 1])
    part = DatasetPartition(
        counts=rng.integers(5, 40, size=(num_wds, num_classes))
    )
    q = rng.dirichlet(np.ones(num_classes), size=(num_wds, num_classes))
    means = q.mean(axis=2)
    stds = np.sqrt(np.mean((q - means[:, :, None]) ** 2, axis=2))
    knowledge = KnowledgeSet(q=q, means=means, stds=stds)
    peaks = np.full(num_wds, 1.0)

    plan = optimize_round(channel, stds, part, peaks)

    # Noiseless end-to-end aggregation must reproduce the exact target.
    zero_noise = np.zeros(
        (num_classes * num_classes, num_antennas), dtype=np.complex128
    )
    estimate = aggregate_over_air(knowledge, part, plan, channel, zero_noise)
    gap = float(np.max(np.abs(estimate - global_target(knowledge, part))))
    checks.append(("noiseless_aggregation_exact", gap <= 1e-9, f"max err {gap:.2e}"))

    # The combining path agrees with an entry-by-entry evaluation.
    signals = 0.1 * (
        rng.standard_normal((num_wds, 6)) + 1j * rng.standard_normal((num_wds, 6))
    )
    noise = 0.01 * (
        rng.standard_normal((6, num_antennas))
        + 1j * rng.standard_normal((6, num_antennas))
    )
    fast = superpose_and_combine(signals, channel, plan.beamformer, noise)
    slow = naive_aggregate(signals, channel.coefficients, plan.beamformer, noise)
    gap = float(np.max(np.abs(fast - slow)))
    checks.append(("combining_matches_loops", gap <= 1e-9, f"max err {gap:.2e}"))

    # Every class's bottleneck device transmits at exactly its power budget,
    # and nobody exceeds theirs.
    eq = plan.transmit.equalizers
    power = eq.real**2 + eq.imag**2
    bottleneck = plan.straggler_indices
    sat = float(
        np.max(
            np.abs(
                power[bottleneck, np.arange(num_classes)] / peaks[bottleneck] - 1.0
            )
        )
    )
    over = float(np.max(power / peaks[:, None] - 1.0))
    ok = sat <= 1e-9 and over <= 1e-9
    checks.append(
        ("power_budget_saturated", ok, f"bottleneck gap {sat:.2e}, excess {over:.2e}")
    )

    # Optimized beamformer vs exhaustive search on a two-antenna instance.
    small_channel = ChannelState(
        coefficients=channel.coefficients[:3, :2].copy()
    )
    small_part = DatasetPartition(counts=part.counts[:3, :2].copy())
    small_stds = stds[:3, :2]
    small_peaks = peaks[:3]
    small_plan = optimize_round(small_channel, small_stds, small_part, small_peaks)
    problem = build_relaxation(small_channel, small_stds, small_part, small_peaks)
    own = relaxation_objective(small_plan.beamformer, problem)
    best = beamformer_grid_search(problem, coarse_theta=200, coarse_phi=400)
    rel = (own - best) / max(abs(best), 1e-30)
    checks.append(
        ("beamformer_matches_grid_search", rel <= 1e-3, f"rel excess {rel:.2e}")
    )

    # Training gradient vs finite differences.
    arch = Architecture(feature_dim=5, hidden_dim=6, num_classes=num_classes)
    model = init_params(arch, rng)
    features = rng.standard_normal((12, 5))
    labels = rng.integers(0, num_classes, size=12)
    shared = rng.dirichlet(np.ones(num_classes), size=num_classes)
    _, grad = loss_and_grad(model, features, labels, shared, 0.7)
    numeric = finite_difference_gradient(
        lambda theta: loss_and_grad(
            ModelParams(theta=theta, arch=arch), features, labels, shared, 0.7
        )[0],
        model.theta,
    )
    rel = float(
        np.linalg.norm(grad - numeric) / max(np.linalg.norm(numeric), 1e-30)
    )
    checks.append(("gradient_matches_numeric", rel <= 1e-4, f"rel err {rel:.2e}"))

    # Closed-form noise error vs simulation through the receiver.
    analytic = phi2_sq_analytic(plan.receive.denormalizers, part.counts[0], 0.05)
    simulated = phi2_sq_monte_carlo(
        plan.beamformer,
        plan.receive.denormalizers,
        part.counts[0],
        0.05,
        substream(seed, "verify-noise", index),
        draws=20_000,
    )
    rel = abs(simulated - analytic) / analytic
    checks.append(("noise_error_matches_simulation", rel <= 0.02, f"rel err {rel:.2e}"))
    return checks


def run_verify(seed: int, trials: int) -> int:
    """Cross-check the implementation against its independent oracles."""
    failures = 0
    for index in range(trials):
        for name, ok, detail in _verify_instance(seed, index):
            print(f"[{index}] {name}: {'ok' if ok else 'FAIL'} ({detail})")
            failures += 0 if ok else 1
    print(
        f"verify: {trials} instance batteries, "
        f"{'all checks passed' if failures == 0 else f'{failures} FAILURES'}"
    )
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# Command-line interface
# ---------------------------------------------------------------------------


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airfd",
        description="Federated distillation over a shared uplink: experiments "
        "and self-checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the configured experiment")
    run_p.add_argument("--config", help="key-value config file (sections)")
    run_p.add_argument("--seed", type=int, help="root seed override")
    run_p.add_argument("--out", help="output directory override")
    run_p.add_argument(
        "--methods", help="comma-separated subset of " + ",".join(METHODS)
    )
    run_p.add_argument("--trials", type=int, help="trial count override")
    run_p.add_argument("--antennas", type=int, help="receive antenna count")
    run_p.add_argument(
        "--zeta", type=float, help="channel-estimate quality in [0, 1]"
    )
    run_p.add_argument(
        "--gamma", type=float, help="distillation regularizer weight"
    )
    run_p.add_argument(
        "--dump-effective-config",
        action="store_true",
        help="print the resolved configuration and exit",
    )

    verify_p = sub.add_parser("verify", help="run the oracle cross-check suite")
    verify_p.add_argument("--seed", type=int, default=0)
    verify_p.add_argument("--trials", type=int, default=3)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    if args.command == "verify":
        return run_verify(args.seed, args.trials)

    parser = load_config_file(args.config)
    overrides = {
        ("experiment", "seed"): args.seed,
        ("experiment", "output_dir"): args.out,
        ("experiment", "methods"): args.methods,
        ("experiment", "trials"): args.trials,
        ("channel", "num_antennas"): args.antennas,
        ("channel", "csi_quality"): args.zeta,
        ("learner", "distill_weight"): args.gamma,
    }
    for (section, key), value in overrides.items():
        if value is not None:
            parser[section][key] = str(value)
    config = config_from_parser(parser)
    if args.dump_effective_config:
        print(dump_config(config), end="")
        return 0

    result = run_experiment(config)
    for method in config.methods:
        accs = result.final_accuracies[method]
        mean_acc = float(np.mean(accs)) if accs else float("nan")
        print(
            f"{method}: {len(accs)} trials, mean final accuracy {mean_acc:.4f}, "
            f"rows in {result.csv_paths[method]}"
        )
    print(f"summary: {result.summary_path}")
    for abort in result.aborts:
        print(f"ABORTED trial {abort.trial}: {abort.message}")
    return 1 if result.aborts else 0


if __name__ == "__main__":
    raise SystemExit(main())
