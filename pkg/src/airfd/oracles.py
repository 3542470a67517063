"""Independent reference implementations used to cross-check the fast paths.

Everything here is deliberately written the slow, obvious way (explicit loops,
exhaustive search, finite differences) and shares no code with the modules it
checks. The test suite and the ``verify`` command compare the two routes.
"""

from __future__ import annotations

import numpy as np

from .sdp_solver import SdpProblem

__all__ = [
    "beamformer_grid_search",
    "naive_aggregate",
    "finite_difference_gradient",
]


def beamformer_grid_search(
    problem: SdpProblem,
    coarse_theta: int = 1000,
    coarse_phi: int = 1000,
    refine_rounds: int = 3,
    refine_points: int = 121,
) -> float:
    """Exhaustive rank-one search of the beamforming objective for dim == 2.

    Any unit beamformer in C^2 is, up to a physically irrelevant global phase,
    w = [cos(theta), sin(theta) e^{i phi}] with theta in [0, pi/2] and phi in
    [0, 2 pi). The objective sum_k c_k * (-min_j w^H H_j^k w) is evaluated on
    a coarse theta x phi grid and the best cell is refined a few times. The
    returned value is the grid minimum — an upper bound on the true optimum
    that tightens as the grid is refined.
    """
    if problem.dim != 2:
        raise ValueError("grid search is implemented for dim == 2 only")
    entries = []  # per class: list of (h00, h11, re01, im01)
    for k in range(problem.num_classes):
        rows = []
        for j in range(problem.num_wds):
            if not problem.active_mask[k, j]:
                continue
            h = problem.constraint_matrices[k, j]
            rows.append(
                (float(h[0, 0].real), float(h[1, 1].real), float(h[0, 1].real), float(h[0, 1].imag))
            )
        entries.append(rows)
    weights = problem.class_weights

    def evaluate(theta: np.ndarray, phi: np.ndarray) -> tuple[float, int, int]:
        cos2 = np.cos(theta) ** 2
        sincos = np.sin(theta) * np.cos(theta)
        sin2 = np.sin(theta) ** 2
        cphi, sphi = np.cos(phi), np.sin(phi)
        objective = np.zeros((theta.size, phi.size))
        for k, rows in enumerate(entries):
            class_min = np.full((theta.size, phi.size), np.inf)
            for h00, h11, re01, im01 in rows:
                val = (
                    (cos2 * h00 + sin2 * h11)[:, None]
                    + 2.0 * sincos[:, None] * (re01 * cphi - im01 * sphi)[None, :]
                )
                np.minimum(class_min, val, out=class_min)
            objective -= weights[k] * class_min
        flat = int(np.argmin(objective))
        it, ip = divmod(flat, phi.size)
        return float(objective[it, ip]), it, ip

    theta = np.linspace(0.0, np.pi / 2, coarse_theta)
    phi = np.linspace(0.0, 2.0 * np.pi, coarse_phi, endpoint=False)
    best, it, ip = evaluate(theta, phi)
    dt = theta[1] - theta[0]
    dp = phi[1] - phi[0]
    center_t, center_p = theta[it], phi[ip]
    for _ in range(refine_rounds):
        theta = np.linspace(
            max(0.0, center_t - dt), min(np.pi / 2, center_t + dt), refine_points
        )
        phi = np.linspace(center_p - dp, center_p + dp, refine_points)
        value, it, ip = evaluate(theta, phi)
        if value < best:
            best = value
        center_t, center_p = theta[it], phi[ip]
        dt = theta[1] - theta[0]
        dp = phi[1] - phi[0]
    return best


def naive_aggregate(
    signals: np.ndarray, coefficients: np.ndarray, beamformer: np.ndarray, noise: np.ndarray
) -> np.ndarray:
    """Entry-by-entry multi-antenna superposition and combining.

    signals: (M, D) per-device baseband symbols; coefficients: (M, N);
    noise: (D, N). Returns the length-D combined vector
    w^H (sum_i h_i s_i[d] + n[d]) computed with explicit Python loops.
    """
    num_wds, length = signals.shape
    num_antennas = coefficients.shape[1]
    out = np.zeros(length, dtype=np.complex128)
    for d in range(length):
        received = np.zeros(num_antennas, dtype=np.complex128)
        for i in range(num_wds):
            for a in range(num_antennas):
                received[a] += coefficients[i, a] * signals[i, d]
        for a in range(num_antennas):
            received[a] += noise[d, a]
        acc = 0.0 + 0.0j
        for a in range(num_antennas):
            acc += np.conj(beamformer[a]) * received[a]
        out[d] = acc
    return out


def finite_difference_gradient(fn, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a vector."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for idx in range(theta.size):
        bump = np.zeros_like(theta)
        bump[idx] = step
        grad[idx] = (fn(theta + bump) - fn(theta - bump)) / (2.0 * step)
    return grad
