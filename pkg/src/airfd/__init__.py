"""Over-the-air federated distillation: channel simulation, analog knowledge
aggregation, closed-form transceiver design, an in-house semidefinite-program
beamforming optimizer, a desk-scale learner, error metrics, and an experiment
CLI.

Modules:
    rng         — deterministic tagged substreams for every random draw
    channel     — fading, path loss, receiver noise, channel-estimate quality
    knowledge   — per-class soft predictions, normalization, transmit blocks
    airagg      — superposed uplink combining and global-knowledge estimation
    sdp_solver  — dense primal-dual interior-point semidefinite solver
    transceiver — per-round beamformer, power, and denormalizer optimization
    learner     — two-layer softmax classifier with a distillation term
    metrics     — error functionals, objectives, bound evaluation, CSV rows
    oracles     — independent cross-checks (grid search, loops, differences)
    expcli      — datasets, partitions, configuration, experiments, CLI
"""

from . import (
    airagg,
    channel,
    expcli,
    knowledge,
    learner,
    metrics,
    oracles,
    rng,
    sdp_solver,
    transceiver,
)

__all__ = [
    "airagg",
    "channel",
    "expcli",
    "knowledge",
    "learner",
    "metrics",
    "oracles",
    "rng",
    "sdp_solver",
    "transceiver",
]

__version__ = "0.1.0"
