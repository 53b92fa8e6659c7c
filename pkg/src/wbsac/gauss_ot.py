"""Factorized Gaussian policies and their optimal-transport geometry.

All functions accept a single distribution (``mean.shape == (d,)``) or a
batch of them (``mean.shape == (..., d)``); reductions run over the last
axis. Nothing here mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))
HALF_LOG_2PIE = 0.5 * float(np.log(2.0 * np.pi * np.e))

TANH_EPS = 1e-6
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0


@dataclass(frozen=True, eq=False)
class DiagGaussian:
    """Gaussian with diagonal covariance, parameterized by per-dimension std."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.ndim == 0 or mean.shape[-1] < 1:
            raise ValueError("DiagGaussian needs at least one dimension")
        if mean.shape != std.shape:
            raise ValueError(f"mean shape {mean.shape} != std shape {std.shape}")
        if not np.all(std > 0):
            raise ValueError("std must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def equals(self, other: "DiagGaussian") -> bool:
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)


@dataclass(frozen=True)
class BarycenterWeights:
    """Pair of barycenter weights; only ``xi_o`` is stored so they sum to one exactly."""

    xi_o: float

    def __post_init__(self):
        xi_o = float(self.xi_o)
        if not 0.0 <= xi_o <= 1.0:
            raise ValueError(f"xi_o must lie in [0, 1], got {xi_o}")
        object.__setattr__(self, "xi_o", xi_o)

    @property
    def xi_p(self) -> float:
        return 1.0 - self.xi_o


def make_diag_gaussian(mean, log_std, log_std_min=LOG_STD_MIN, log_std_max=LOG_STD_MAX) -> DiagGaussian:
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    if mean.shape != log_std.shape:
        raise ValueError(f"mean shape {mean.shape} != log_std shape {log_std.shape}")
    if not log_std_min < log_std_max:
        raise ValueError("log_std_min must be below log_std_max")
    return DiagGaussian(mean, np.exp(np.clip(log_std, log_std_min, log_std_max)))


def sample_reparameterized(dist: DiagGaussian, noise):
    """Return ``(pre_squash, tanh(pre_squash))`` for ``pre = mean + std * noise``."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] != dist.dim:
        raise ValueError(f"noise has {noise.shape[-1]} dims, distribution has {dist.dim}")
    pre = dist.mean + dist.std * noise
    return pre, np.tanh(pre)


def log_prob_squashed(dist: DiagGaussian, pre_squash, tanh_eps=TANH_EPS):
    """Log-density of ``tanh(pre_squash)`` under the squashed distribution.

    Includes the change-of-variables term ``-log(1 - tanh(u)^2 + eps)``.
    """
    pre = np.asarray(pre_squash, dtype=np.float64)
    if pre.shape[-1] != dist.dim:
        raise ValueError(f"action has {pre.shape[-1]} dims, distribution has {dist.dim}")
    z = (pre - dist.mean) / dist.std
    gauss = -0.5 * z * z - np.log(dist.std) - 0.5 * LOG_2PI
    correction = np.log(1.0 - np.tanh(pre) ** 2 + tanh_eps)
    return np.sum(gauss - correction, axis=-1)


def differential_entropy(dist: DiagGaussian):
    """Entropy of the pre-squash Gaussian, in nats."""
    return dist.dim * HALF_LOG_2PIE + np.sum(np.log(dist.std), axis=-1)


def _check_same_dim(p: DiagGaussian, q: DiagGaussian):
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")


def w2_squared_diag(p: DiagGaussian, q: DiagGaussian):
    """Squared 2-Wasserstein distance between diagonal Gaussians.

    For commuting covariances the Bures term reduces to the squared
    difference of standard deviations.
    """
    _check_same_dim(p, q)
    return np.sum((p.mean - q.mean) ** 2 + (p.std - q.std) ** 2, axis=-1)


def wasserstein_barycenter(p: DiagGaussian, o: DiagGaussian, w: BarycenterWeights) -> DiagGaussian:
    """Weighted W2 barycenter of two diagonal Gaussians.

    Means are averaged; so are covariance square roots, which for diagonal
    covariances are the standard deviations themselves.
    """
    _check_same_dim(p, o)
    if w.xi_o == 0.0:
        return p
    if w.xi_o == 1.0:
        return o
    xi_p, xi_o = w.xi_p, w.xi_o
    return DiagGaussian(xi_p * p.mean + xi_o * o.mean, xi_p * p.std + xi_o * o.std)


def barycenter_objective(candidate: DiagGaussian, p: DiagGaussian, o: DiagGaussian, w: BarycenterWeights):
    return w.xi_p * w2_squared_diag(candidate, p) + w.xi_o * w2_squared_diag(candidate, o)


def entropy_bound_slack(p: DiagGaussian, o: DiagGaussian, w: BarycenterWeights):
    """Entropy of the barycenter minus the weighted entropies of its inputs.

    Non-negative for every input (concavity of log); zero when the inputs
    coincide or one weight vanishes.
    """
    e = wasserstein_barycenter(p, o, w)
    return differential_entropy(e) - (w.xi_p * differential_entropy(p) + w.xi_o * differential_entropy(o))
