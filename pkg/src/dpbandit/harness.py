"""Experiment runner: configs, presets, seeded replicate runs and outputs."""

from __future__ import annotations

import dataclasses
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .accounting import (CSV_HEADER, PHASE_HEADER, RunInfo, RunMetrics, format_csv,
                         metric_lines, phase_rows)
from .core import BanditConfig, run_dpdpe, run_dppe
from .population import PopulationSpec
from .privatizers import PrivacyModel, PrivacyParams, make_privatizer
from .rng import make_rng

ALGORITHMS = ("DPDPE", "DPPE", "DPE-FixedU")


class ExperimentError(RuntimeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"run with seed {seed} failed: {type(cause).__name__}: {cause}")
        self.seed = seed


def parse_seeds(value) -> list[int]:
    """Accept an int, a list, or a string such as ``"0-19"`` or ``"1,2,5-7"``."""
    if isinstance(value, (int, np.integer)):
        return [int(value)]
    if isinstance(value, (list, tuple, range)):
        return [int(v) for v in value]
    seeds = []
    for part in str(value).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


@dataclass
class ExperimentConfig:
    """One experiment: a fixed instance run under several seeds.

    ``beta=None`` means ``1 / (k T)``.  ``fixed_clients=None`` with
    ``algorithm='DPE-FixedU'`` matches the communication of the growing
    schedule automatically.
    """

    algorithm: str = "DPDPE"
    model: str = "none"
    epsilon: float = 1.0
    delta: float = 0.25
    alpha: float = 0.8
    d: int = 5
    k: int = 50
    T: int = 100_000
    sigma: float = 0.1
    B: float = 2.0
    reward_noise: float = 0.25
    beta: float | None = None
    h1: int | None = None
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    instance_seed: int = 0
    population_size: int = 100_000
    fixed_clients: int | None = None
    singleton_shortcut: bool = False
    csv_points: int | None = None
    out: str | None = None

    def __post_init__(self):
        self.seeds = parse_seeds(self.seeds)
        self.model = PrivacyModel.parse(self.model).value
        self.validate()

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.d < 1 or self.k < 1:
            raise ValueError("d and k must be positive")
        if self.csv_points is not None and self.csv_points < 1:
            raise ValueError("csv_points must be positive")
        self.bandit_config()
        self.privacy_params()
        h1 = self.h1 if self.h1 is not None else (2 if self.algorithm != "DPPE" else None)
        if h1 is not None and self.T < h1:
            raise ValueError(f"T={self.T} is shorter than h1={h1}")

    def bandit_config(self) -> BanditConfig:
        return BanditConfig(T=int(self.T), alpha=self.alpha, sigma=self.sigma, beta=self.beta,
                            h1=self.h1, fixed_clients=self.fixed_clients,
                            singleton_shortcut=self.singleton_shortcut)

    def privacy_params(self) -> PrivacyParams:
        return PrivacyParams(self.model, self.epsilon, self.delta, self.B)

    def label(self) -> str:
        return f"{self.algorithm}-{self.model}-eps{self.epsilon:g}-alpha{self.alpha:g}"


CONFIG_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def load_config(path) -> dict:
    """Read a flat YAML mapping of :class:`ExperimentConfig` keys."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("config file must hold a flat key: value mapping")
    unknown = set(data) - CONFIG_KEYS - {"preset", "workers", "epsilons", "alphas", "models"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return data


def make_instance(d: int, k: int, instance_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Actions and ``theta*`` drawn uniformly from the unit sphere."""
    rng = make_rng(instance_seed)
    actions = rng.normal(size=(k, d))
    actions /= np.linalg.norm(actions, axis=1, keepdims=True)
    theta = rng.normal(size=d)
    theta /= np.linalg.norm(theta)
    return actions, theta


def run_single(config: ExperimentConfig, seed: int) -> tuple[RunInfo, RunMetrics]:
    actions, theta = make_instance(config.d, config.k, config.instance_seed)
    population = PopulationSpec(theta, sigma=config.sigma, reward_noise=config.reward_noise,
                                B=config.B, population_size=config.population_size)
    privatizer = make_privatizer(config.privacy_params())
    runner = run_dppe if config.algorithm == "DPPE" else run_dpdpe
    metrics = runner(config.bandit_config(), actions, population, privatizer, make_rng(seed))
    info = RunInfo(f"{config.label()}-seed{seed}", int(seed), config.model, float(config.epsilon),
                   float(config.delta), float(config.alpha), config.d, config.k, int(config.T))
    return info, metrics


def _guarded(config: ExperimentConfig, seed: int):
    try:
        return run_single(config, seed)
    except Exception as exc:
        raise ExperimentError(seed, exc) from exc


def default_workers() -> int:
    env = os.environ.get("DPBANDIT_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def fixedu_from_schedule(schedule) -> int:
    """Client count ``ceil(sum s_l n_l / sum s_l)`` that spends the same reals."""
    schedule = list(schedule)
    if not schedule:
        raise ValueError("empty schedule")
    total_support = sum(s for s, _ in schedule)
    return max(1, math.ceil(sum(s * n for s, n in schedule) / total_support - 1e-9))


def match_fixedu_budget(config: ExperimentConfig) -> int:
    """Dry-run the growing-client learner on the first seed and read off its schedule."""
    dry = dataclasses.replace(config, algorithm="DPDPE", fixed_clients=None, seeds=config.seeds[:1])
    _, metrics = run_single(dry, dry.seeds[0])
    schedule = [(p.support, p.clients) for p in metrics.phase_log if p.clients > 0]
    if not schedule:
        raise ValueError("horizon too short for a single completed phase")
    return fixedu_from_schedule(schedule)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[tuple[RunInfo, RunMetrics]]

    @property
    def final_regrets(self) -> np.ndarray:
        return np.array([m.final_regret for _, m in self.runs])

    @property
    def comm_costs(self) -> np.ndarray:
        return np.array([m.comm_cost for _, m in self.runs], dtype=float)

    def summary(self) -> dict:
        r, c = self.final_regrets, self.comm_costs
        ddof = 1 if len(r) > 1 else 0
        cfg = self.config
        return {
            "label": cfg.label(), "algorithm": cfg.algorithm, "model": cfg.model,
            "epsilon": float(cfg.epsilon), "delta": float(cfg.delta), "alpha": float(cfg.alpha),
            "d": cfg.d, "k": cfg.k, "T": int(cfg.T), "seeds": len(r),
            "regret_mean": float(r.mean()), "regret_std": float(r.std(ddof=ddof)),
            "comm_mean": float(c.mean()), "comm_std": float(c.std(ddof=ddof)),
            "comm_unit": self.runs[0][1].comm_unit,
            "clip_rate_mean": float(np.mean([m.clip_rate for _, m in self.runs])),
            "best_retained": int(sum(m.best_retained for _, m in self.runs)),
        }

    def runs_csv(self) -> str:
        lines = [",".join(CSV_HEADER) + "\n"]
        for info, metrics in self.runs:
            lines.extend(metric_lines(info, metrics, self.config.csv_points))
        return "".join(lines)

    def phases_csv(self) -> str:
        rows = []
        for info, metrics in self.runs:
            rows.extend(phase_rows(info, metrics))
        return format_csv(PHASE_HEADER, rows)


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    """Run every seed; results are ordered by seed regardless of scheduling."""
    config.validate()
    if config.algorithm == "DPE-FixedU" and config.fixed_clients is None:
        config = dataclasses.replace(config, fixed_clients=match_fixedu_budget(config))
    workers = default_workers() if workers is None else max(1, int(workers))
    seeds = list(config.seeds)
    if workers == 1 or len(seeds) == 1:
        runs = [_guarded(config, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            futures = [pool.submit(_guarded, config, s) for s in seeds]
            runs = [f.result() for f in futures]
    return ExperimentResult(config, runs)


SUMMARY_HEADER = ("label", "algorithm", "model", "epsilon", "delta", "alpha", "d", "k", "T", "seeds",
                  "regret_mean", "regret_std", "comm_mean", "comm_std", "comm_unit",
                  "clip_rate_mean", "best_retained")


def summary_text(results: list[ExperimentResult]) -> str:
    lines = [f"{'experiment':<40} {'seeds':>5} {'final regret':>24} {'communication':>30}"]
    for res in results:
        s = res.summary()
        lines.append(f"{s['label']:<40} {s['seeds']:>5} "
                     f"{s['regret_mean']:>12.2f} +- {s['regret_std']:<9.2f} "
                     f"{s['comm_mean']:>14.4g} +- {s['comm_std']:<9.3g} {s['comm_unit']}")
    return "\n".join(lines) + "\n"


def write_outputs(results: list[ExperimentResult], out_dir) -> Path:
    """Write runs.csv, phases.csv, summary.csv and summary.txt under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = "".join(r.runs_csv() if i == 0 else r.runs_csv().split("\n", 1)[1]
                   for i, r in enumerate(results))
    phases = "".join(r.phases_csv() if i == 0 else r.phases_csv().split("\n", 1)[1]
                     for i, r in enumerate(results))
    (out / "runs.csv").write_text(runs)
    (out / "phases.csv").write_text(phases)
    summary_rows = [tuple(r.summary()[k] for k in SUMMARY_HEADER) for r in results]
    (out / "summary.csv").write_text(format_csv(SUMMARY_HEADER, summary_rows))
    (out / "summary.txt").write_text(summary_text(results))
    return out


def expand_grid(base: ExperimentConfig, models=None, epsilons=None, alphas=None) -> list[ExperimentConfig]:
    """Cartesian product over privacy model, epsilon and alpha."""
    models = models or [base.model]
    epsilons = epsilons or [base.epsilon]
    alphas = alphas or [base.alpha]
    return [dataclasses.replace(base, model=m, epsilon=float(e), alpha=float(a))
            for m, e, a in itertools.product(models, epsilons, alphas)]


DESK = dict(d=5, k=50, T=100_000, sigma=0.1, alpha=0.8, delta=0.25, seeds=list(range(20)))


def preset_configs(name: str, **overrides) -> list[ExperimentConfig]:
    """Desk-scale versions of the three comparison experiments."""
    base = ExperimentConfig(**{**DESK, **overrides})
    if name == "epsilon-sweep":
        return expand_grid(base, models=["central", "local", "shuffle"], epsilons=[1.0, 5.0, 10.0])
    if name == "trust-models":
        return expand_grid(dataclasses.replace(base, epsilon=10.0),
                           models=["none", "central", "local", "shuffle"])
    if name == "fixed-clients":
        dpe = dataclasses.replace(base, model="none", algorithm="DPDPE")
        return [dpe, dataclasses.replace(dpe, algorithm="DPE-FixedU",
                                         fixed_clients=match_fixedu_budget(dpe))]
    raise ValueError(f"unknown preset {name!r}; expected epsilon-sweep, trust-models or fixed-clients")


PRESETS = ("epsilon-sweep", "trust-models", "fixed-clients")
