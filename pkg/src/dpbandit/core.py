"""Phased-elimination learners.

``run_dpdpe`` runs the distributed learner: each phase plays a near-G-optimal
design, collects per-action reward averages from a fresh, geometrically
growing batch of clients, privatizes them, fits least squares and drops
actions that are confidently worse than the empirical best.  ``run_dppe`` is
the single-population variant where every pull is answered by its own client
and the privatizer aggregates per-action sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .accounting import PhaseRecord, RunMetrics
from .design import DecisionSet, compute_near_g_optimal, allocate_pulls, support_bound
from .population import PopulationSpec, average_local_rewards, sample_client_params, scalar_rewards
from .privatizers import AggregatedFeedback, Privatizer


@dataclass(frozen=True)
class BanditConfig:
    """Learner settings shared by both algorithms.

    Attributes:
        T: horizon in rounds.
        alpha: client growth exponent; phase ``l`` samples ``ceil(2^(alpha l))`` clients.
        sigma: heterogeneity scale used in the confidence width.
        beta: confidence parameter; ``None`` means ``1 / (k T)``.
        h1: first phase budget; ``None`` picks the algorithm default.
        fixed_clients: sample this many clients every phase instead of the growing schedule.
        slack: design target ``g(pi) <= slack * d``.
        singleton_shortcut: once one action remains, play it to the horizon
            without further phases, clients or communication.
    """

    T: int
    alpha: float = 0.8
    sigma: float = 0.1
    beta: float | None = None
    h1: int | None = None
    fixed_clients: int | None = None
    slack: float = 2.0
    singleton_shortcut: bool = False

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.beta is not None and not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.h1 is not None and self.h1 < 1:
            raise ValueError("h1 must be >= 1")
        if self.fixed_clients is not None and self.fixed_clients < 1:
            raise ValueError("fixed_clients must be >= 1")
        if self.slack < 1:
            raise ValueError("slack must be >= 1")

    def beta_for(self, k: int) -> float:
        return self.beta if self.beta is not None else 1.0 / (k * self.T)


@dataclass
class PhaseState:
    l: int
    h: int
    t: int
    active: np.ndarray
    estimate: np.ndarray | None = None
    width: float | None = None


@dataclass(frozen=True)
class EstimatorInputs:
    V: np.ndarray
    G: np.ndarray


def client_count(alpha: float, l: int) -> int:
    # the tolerance keeps exact powers such as 2^(0.5*2) from rounding up
    return max(1, math.ceil(2.0 ** (alpha * l) - 1e-9))


def confidence_width(d: int, n_clients: int, h: int, sigma: float, sigma_n: float, beta: float) -> float:
    """Elimination threshold combining design, client-sampling and privacy noise."""
    return ((math.sqrt(2.0 * d / (n_clients * h)) + sigma / math.sqrt(n_clients) + sigma_n)
            * math.sqrt(2.0 * math.log(1.0 / beta)))


def confidence_width_pe(d: int, h: int, sigma_n: float, beta: float) -> float:
    """Two-term threshold used by the single-population learner."""
    return (math.sqrt(2.0 * d / h) + sigma_n) * math.sqrt(2.0 * math.log(1.0 / beta))


def estimator_inputs(actions: np.ndarray, pulls: np.ndarray, feedback, mode: str = "average") -> EstimatorInputs:
    """Build ``V = sum T(x) x x^T`` and ``G``.

    In ``average`` mode ``G = sum T(x) x y(x)``; in ``sum`` mode the feedback
    already aggregates the pulls and ``G = sum x y(x)``.
    """
    x = np.atleast_2d(np.asarray(actions, dtype=float))
    t = np.asarray(pulls, dtype=float)
    y = feedback.values if isinstance(feedback, AggregatedFeedback) else np.asarray(feedback, dtype=float)
    if y.shape != (x.shape[0],):
        raise ValueError(f"feedback has shape {y.shape}, expected ({x.shape[0]},)")
    V = (x * t[:, None]).T @ x
    if mode == "average":
        G = x.T @ (t * y)
    elif mode == "sum":
        G = x.T @ y
    else:
        raise ValueError(f"unknown feedback mode {mode!r}")
    return EstimatorInputs(V, G)


def least_squares(inputs: EstimatorInputs, rel_tol: float = 1e-10) -> np.ndarray:
    """Minimum-norm solution of ``V theta = G``; zero outside the span of ``V``."""
    eigval, eigvec = np.linalg.eigh(inputs.V)
    top = eigval.max(initial=0.0)
    if top <= 0:
        raise np.linalg.LinAlgError("V is zero")
    keep = eigval > rel_tol * top
    coef = eigvec.T @ inputs.G
    resid = np.linalg.norm(coef[~keep])
    if resid > 1e-6 * max(1.0, np.linalg.norm(inputs.G)):
        raise np.linalg.LinAlgError("G has a component outside the span of V")
    return eigvec[:, keep] @ (coef[keep] / eigval[keep])


def eliminate(actions: np.ndarray, active: np.ndarray, estimate: np.ndarray, width: float) -> np.ndarray:
    """Keep active actions whose estimated gap to the empirical best is at most ``2 * width``."""
    active = np.asarray(active)
    if active.size == 0:
        raise ValueError("active set is empty")
    values = np.asarray(actions)[active] @ np.asarray(estimate)
    return active[values.max() - values <= 2.0 * width]


def _play(metrics: RunMetrics, gaps: np.ndarray, support: np.ndarray, pulls: np.ndarray, budget: int) -> int:
    """Play each support action its allotted rounds, stopping after ``budget``; returns rounds played."""
    played = 0
    for idx, count in zip(support, pulls):
        c = int(min(count, budget - played))
        if c <= 0:
            break
        metrics.record_block(c, gaps[idx])
        played += c
    return played


def _finish(metrics, population, clip_start, active):
    clipped = population.clips.clipped - clip_start[0]
    total = population.clips.total - clip_start[1]
    metrics.clip_rate = clipped / total if total else 0.0
    metrics.final_active = [int(i) for i in active]


def _run(config: BanditConfig, actions, population: PopulationSpec, privatizer: Privatizer, rng,
         distributed: bool, trace: list | None):
    actions = DecisionSet(actions).actions
    k, d = actions.shape
    if population.d != d:
        raise ValueError(f"theta_star has dimension {population.d}, actions have {d}")
    S = support_bound(d)
    h = config.h1 if config.h1 is not None else (2 if distributed else S)
    if config.T < h:
        raise ValueError(f"T={config.T} is shorter than the first phase budget h1={h}")
    beta = config.beta_for(k)
    client_rng, reward_rng, privacy_rng = rng.spawn(3)

    theta = population.theta_star
    means = actions @ theta
    best = int(np.argmax(means))
    gaps = np.maximum(means[best] - means, 0.0)
    metrics = RunMetrics(T=config.T, comm_unit=privatizer.comm_unit)
    clip_start = (population.clips.clipped, population.clips.total)

    active = np.arange(k)
    t, l = 0, 1
    while t < config.T:
        state = PhaseState(l=l, h=h, t=t + 1, active=active.copy())
        if best not in active:
            metrics.best_retained = False
        if active.size == 1 and config.singleton_shortcut:
            played = _play(metrics, gaps, active, np.array([config.T - t]), config.T - t)
            metrics.phase_log.append(PhaseRecord(l, h, played, 0, 1, 0.0, 1, t + 1, t + played))
            t += played
            if trace is not None:
                trace.append(state)
            break

        design = compute_near_g_optimal(actions[active], slack=config.slack)
        local_support = design.support
        support = active[local_support]
        pulls = allocate_pulls(design.weights[local_support], h)
        budget = config.T - t
        played = _play(metrics, gaps, support, pulls, budget)
        record = PhaseRecord(l, h, played, 0, support.size, math.nan, active.size, t + 1, t + played)
        metrics.phase_log.append(record)
        t += played
        if trace is not None:
            trace.append(state)
        if played < pulls.sum() or t >= config.T:
            # truncated or final phase: its estimate would never be used
            break

        x = actions[support]
        if distributed:
            n = config.fixed_clients if config.fixed_clients is not None else client_count(config.alpha, l)
            theta_u = sample_client_params(n, population, client_rng)
            reports = average_local_rewards(theta_u, x, pulls, population, reward_rng)
            feedback, units = privatizer.average(reports, privacy_rng)
            inputs = estimator_inputs(x, pulls, feedback, "average")
            sigma_n = privatizer.sigma_n(s=support.size, n_clients=n, d=d, S=S)
            width = confidence_width(d, n, h, config.sigma, sigma_n, beta)
            record.clients = n
            record.comm_units = metrics.record_phase_comm(support.size, n, units)
        else:
            sums = np.empty(support.size)
            comm = 0
            for j, count in enumerate(pulls):
                y = scalar_rewards(theta, x[j], int(count), population, reward_rng)
                sums[j], units = privatizer.sum(y, privacy_rng)
                comm += metrics.record_phase_comm(1, int(count), units)
            inputs = estimator_inputs(x, pulls, sums, "sum")
            sigma_n = privatizer.sigma_n_pe(s=support.size, h=h, d=d)
            width = confidence_width_pe(d, h, sigma_n, beta)
            record.clients = int(pulls.sum())
            record.comm_units = comm

        estimate = least_squares(inputs)
        record.width = width
        state.estimate, state.width = estimate, width
        active = eliminate(actions, active, estimate, width)
        h *= 2
        l += 1

    _finish(metrics, population, clip_start, active)
    return metrics


def run_dpdpe(config: BanditConfig, actions, population: PopulationSpec, privatizer: Privatizer, rng,
              trace: list | None = None) -> RunMetrics:
    """Distributed private phased elimination.

    Args:
        config: learner settings; ``config.fixed_clients`` turns this into the
            fixed-client baseline.
        actions: (k, d) decision set.
        population: client population around ``theta_star``.
        privatizer: feedback aggregation under the chosen trust model.
        rng: generator; split internally into client, reward and privacy streams.
        trace: optional list that receives one :class:`PhaseState` per phase.
    """
    return _run(config, actions, population, privatizer, rng, True, trace)


def run_dppe(config: BanditConfig, actions, population: PopulationSpec, privatizer: Privatizer, rng,
             trace: list | None = None) -> RunMetrics:
    """Private phased elimination where each pull comes from a fresh client.

    Rewards are ``<theta*, x> + eta``; ``population.sigma`` is ignored.
    """
    return _run(config, actions, population, privatizer, rng, False, trace)
