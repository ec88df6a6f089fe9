"""Synthetic client population.

Clients are generated on demand as ``theta_u = theta* + xi_u``; the pool is
implicit and sampling is with replacement.  Both the heterogeneity ``xi_u``
and the reward noise are Gaussians truncated at :data:`TRUNCATION` standard
deviations, so they are sub-Gaussian and bounded at the same time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

TRUNCATION = 4.0
# averages over more pulls than this are drawn from their Gaussian limit
EXACT_PULL_LIMIT = 64


def truncated_variance_factor(c: float = TRUNCATION) -> float:
    """Variance of a standard normal conditioned on ``|Z| <= c``."""
    mass = 2.0 * norm.cdf(c) - 1.0
    return 1.0 - 2.0 * c * norm.pdf(c) / mass


def truncated_normal(rng, scale, size) -> np.ndarray:
    """Zero-mean Gaussian with std ``scale`` (before truncation), rejected outside 4 sd."""
    scale = np.broadcast_to(np.asarray(scale, dtype=float), size)
    z = np.asarray(rng.normal(0.0, 1.0, size=size), dtype=float)
    bad = np.abs(z) > TRUNCATION
    while np.any(bad):
        z[bad] = rng.normal(0.0, 1.0, size=int(bad.sum()))
        bad = np.abs(z) > TRUNCATION
    return z * scale


@dataclass
class ClipCounter:
    clipped: int = 0
    total: int = 0

    @property
    def rate(self) -> float:
        return self.clipped / self.total if self.total else 0.0


@dataclass
class PopulationSpec:
    """Population of heterogeneous clients around ``theta_star``.

    Attributes:
        theta_star: global parameter, ``||theta_star|| <= 1``.
        sigma: heterogeneity scale; each coordinate of ``xi_u`` has scale ``sigma / sqrt(d)``.
        reward_noise: scale of the per-pull reward noise.
        B: hard reward bound; observations are clipped to ``[-B, B]``.
        population_size: nominal number of users, reported only.
    """

    theta_star: np.ndarray
    sigma: float = 0.1
    reward_noise: float = 0.25
    B: float = 2.0
    population_size: int = 100_000
    clips: ClipCounter = field(default_factory=ClipCounter, compare=False)

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, dtype=float).ravel()
        if np.linalg.norm(self.theta_star) > 1.0 + 1e-9:
            raise ValueError("theta_star must have norm at most 1")
        if self.sigma < 0 or self.reward_noise < 0:
            raise ValueError("noise scales must be non-negative")
        if not 0 <= self.reward_noise <= 1:
            raise ValueError("reward_noise must lie in [0, 1]")
        if not self.B > 0:
            raise ValueError("B must be positive")

    @property
    def d(self) -> int:
        return self.theta_star.size


@dataclass(frozen=True)
class Client:
    theta_u: np.ndarray


def sample_client_params(count: int, spec: PopulationSpec, rng) -> np.ndarray:
    """(count, d) array of fresh local parameters."""
    if count < 1:
        raise ValueError("need at least one client")
    if spec.sigma == 0:
        return np.tile(spec.theta_star, (count, 1))
    xi = truncated_normal(rng, spec.sigma / math.sqrt(spec.d), (count, spec.d))
    return spec.theta_star + xi


def sample_clients(count: int, spec: PopulationSpec, rng) -> list[Client]:
    return [Client(row) for row in sample_client_params(count, spec, rng)]


def observe_reward(client: Client | np.ndarray, action, spec: PopulationSpec, rng) -> float:
    """One noisy, clipped reward for ``client`` playing ``action``."""
    theta_u = client.theta_u if isinstance(client, Client) else np.asarray(client, dtype=float)
    x = np.asarray(action, dtype=float)
    if np.linalg.norm(x) > 1.0 + 1e-9:
        raise ValueError("action must have norm at most 1")
    y = float(theta_u @ x) + float(truncated_normal(rng, spec.reward_noise, (1,))[0])
    spec.clips.total += 1
    if abs(y) > spec.B:
        spec.clips.clipped += 1
        y = math.copysign(spec.B, y)
    return y


_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(201)


def clipped_moments(m: np.ndarray, noise: float, B: float):
    """Mean, variance and clip probability of ``clip(m + noise * Z, -B, B)`` for truncated ``Z``."""
    z = TRUNCATION * _NODES
    w = _WEIGHTS * norm.pdf(z)
    w = w / w.sum()
    y = np.asarray(m, dtype=float)[..., None] + noise * z
    yc = np.clip(y, -B, B)
    mean = yc @ w
    var = np.maximum((yc * yc) @ w - mean * mean, 0.0)
    p_clip = np.clip((np.abs(y) > B) @ w, 0.0, 1.0)
    return mean, var, p_clip


def average_local_rewards(theta_u: np.ndarray, actions: np.ndarray, pulls: np.ndarray,
                          spec: PopulationSpec, rng) -> np.ndarray:
    """Per-client, per-action averages of ``pulls`` reward observations.

    Args:
        theta_u: (n, d) client parameters.
        actions: (s, d) support actions.
        pulls: length-s pull counts, all at least 1.

    Returns:
        (n, s) array of averaged rewards, each within ``[-B, B]``.

    Averages of more than :data:`EXACT_PULL_LIMIT` pulls are drawn from their
    Gaussian limit with exact per-pull moments (clamped to the attainable
    range) instead of pull by pull.
    """
    theta_u = np.atleast_2d(theta_u)
    pulls = np.asarray(pulls, dtype=np.int64)
    if np.any(pulls < 1):
        raise ValueError("pull counts must be >= 1")
    means = theta_u @ np.atleast_2d(actions).T
    n, s = means.shape
    out = np.empty((n, s))
    noise = spec.reward_noise
    reach = TRUNCATION * noise
    safe = np.abs(means) + reach <= spec.B
    large = np.broadcast_to(pulls > EXACT_PULL_LIMIT, (n, s))
    fast = safe & large
    if np.any(fast):
        counts = np.broadcast_to(pulls, (n, s))[fast]
        sd = noise * math.sqrt(truncated_variance_factor()) / np.sqrt(counts)
        m = means[fast]
        draw = m + np.asarray(rng.normal(0.0, 1.0, size=m.size), dtype=float) * sd
        out[fast] = np.clip(draw, m - reach, m + reach)
        spec.clips.total += int(counts.sum())
    small = ~large
    if np.any(small):
        for j in np.flatnonzero(pulls <= EXACT_PULL_LIMIT):
            c = int(pulls[j])
            y = means[:, j][:, None] + truncated_normal(rng, noise, (n, c))
            spec.clips.clipped += int(np.count_nonzero(np.abs(y) > spec.B))
            spec.clips.total += n * c
            out[:, j] = np.clip(y, -spec.B, spec.B).mean(axis=1)
    edge = large & ~safe
    if np.any(edge):
        # clipping can bind: Gaussian limit with the exact clipped moments
        counts = np.broadcast_to(pulls, (n, s))[edge]
        mean, var, p_clip = clipped_moments(means[edge], noise, spec.B)
        draw = mean + np.asarray(rng.normal(0.0, 1.0, size=mean.size), dtype=float) * np.sqrt(var / counts)
        out[edge] = np.clip(draw, -spec.B, spec.B)
        spec.clips.clipped += int(np.asarray(rng.binomial(counts, p_clip)).sum())
        spec.clips.total += int(counts.sum())
    return out


def average_local_reward(client: Client | np.ndarray, action, pull_count: int,
                         spec: PopulationSpec, rng) -> float:
    """Mean of ``pull_count`` independent observations of one client on one action."""
    theta_u = client.theta_u if isinstance(client, Client) else np.asarray(client, dtype=float)
    return float(average_local_rewards(theta_u[None], np.atleast_2d(action),
                                       np.array([pull_count]), spec, rng)[0, 0])


def scalar_rewards(theta_star: np.ndarray, action, count: int, spec: PopulationSpec, rng) -> np.ndarray:
    """``count`` observations ``<theta*, x> + eta`` from fresh clients (each pull its own client)."""
    m = float(np.asarray(theta_star) @ np.asarray(action, dtype=float))
    y = m + truncated_normal(rng, spec.reward_noise, (count,))
    spec.clips.clipped += int(np.count_nonzero(np.abs(y) > spec.B))
    spec.clips.total += count
    return np.clip(y, -spec.B, spec.B)
