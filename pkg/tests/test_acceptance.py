"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from dpbandit.core import BanditConfig, run_dpdpe
from dpbandit.design import compute_near_g_optimal, support_bound
from dpbandit.harness import ExperimentConfig, preset_configs, run_experiment, write_outputs
from dpbandit.population import PopulationSpec
from dpbandit.privatizers import (PrivacyParams, Privatizer, scalar_shuffle_sum, scalar_shuffle_variance_bound,
                                  shuffle_params, shuffle_privatize, shuffle_variance_bound, sigma_central,
                                  sigma_local)
from dpbandit.rng import ZeroNoiseRNG, make_rng

WORKERS = None  # honours DPBANDIT_WORKERS


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


_cache = {}


def results(name: str, **overrides):
    key = (name, tuple(sorted(overrides.items())))
    if key not in _cache:
        _cache[key] = {(c.algorithm, c.model, c.epsilon): run_experiment(c, workers=WORKERS)
                       for c in preset_configs(name, **overrides)}
    return _cache[key]


def test_criterion_01_noise_scales():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    int_mismatch = 0
    for _ in range(100):
        eps = rng.uniform(0.05, 14.9)
        delta = math.exp(rng.uniform(math.log(1e-8), math.log(0.49)))
        s = int(rng.integers(1, 200))
        n = int(10 ** rng.uniform(0, 7))
        B = rng.uniform(0.1, 5.0)
        c = 2.0 * B * np.sqrt(2.0 * s * np.log(1.25 / delta)) / eps
        worst = max(worst, rel_err(sigma_central(B, s, delta, eps, n), c / n),
                    rel_err(sigma_local(B, s, delta, eps), c))
        eh = eps / 18.0 / np.sqrt(np.log(2.0 / delta))
        lt = np.log(4.0 * s / delta)
        g = max(int(np.ceil(eh * np.sqrt(n) / 6.0 / np.sqrt(5.0 * lt))), int(np.ceil(np.sqrt(s))), 10)
        b = int(np.ceil(180.0 * g ** 2 * lt / (eh ** 2 * n)))
        p = 90.0 * g ** 2 * lt / (b * eh ** 2 * n)
        sp = shuffle_params(eps, delta, s, n)
        int_mismatch += (sp.g != g) + (sp.b != b)
        worst = max(worst, rel_err(sp.eps_hat, eh), rel_err(sp.p, p))
    elapsed = time.perf_counter() - start
    report(1, worst < 1e-12 and int_mismatch == 0 and elapsed < 1.0,
           f"max rel err {worst:.2e}, integer mismatches {int_mismatch}, {elapsed:.2f}s")


def test_criterion_02_shuffle_analyzer():
    start = time.perf_counter()
    rng = make_rng(202)
    s, n, eps, delta, B = 4, 16, 10.0, 0.25, 1.0
    params = PrivacyParams("shuffle", eps, delta, B)
    reports = rng.uniform(-B, B, size=(n, s))
    out = np.array([shuffle_privatize(reports, params, rng)[0].values for _ in range(10_000)])
    bound = shuffle_variance_bound(shuffle_params(eps, delta, s, n, delta2=B * math.sqrt(s)))
    std = out.std(axis=0, ddof=1)
    dev = np.abs(out.mean(axis=0) - reports.mean(axis=0))
    elapsed = time.perf_counter() - start
    ok = bool(np.all(dev < 3 * std / 100) and np.all(std ** 2 <= 1.1 * bound) and elapsed < 30)
    report(2, ok, f"max |bias|/(3 std/100) {np.max(dev / (3 * std / 100)):.2f}, "
                  f"max var/bound {np.max(std ** 2) / bound:.3f}, {elapsed:.1f}s")


def test_criterion_03_scalar_protocol():
    start = time.perf_counter()
    rng = make_rng(303)
    n, eps, delta, B = 16, 10.0, 0.25, 1.0
    values = rng.uniform(-B, B, size=n)
    out = np.array([scalar_shuffle_sum(values, eps, delta, B, rng) for _ in range(10_000)])
    bound = scalar_shuffle_variance_bound(eps, delta, B)
    std = out.std(ddof=1)
    dev = abs(out.mean() - values.sum())
    elapsed = time.perf_counter() - start
    ok = dev < 3 * std / 100 and std ** 2 <= 1.1 * bound and elapsed < 30
    report(3, ok, f"|bias|/(3 std/100) {dev / (3 * std / 100):.2f}, var/bound {std ** 2 / bound:.3f}, "
                  f"{elapsed:.1f}s")


def independent_g(actions, weights):
    V = (actions * weights[:, None]).T @ actions
    Vp = np.linalg.pinv(V, hermitian=True)
    return float(np.max(np.einsum("ij,jk,ik->i", actions, Vp, actions)))


def test_criterion_04_design_quality():
    start = time.perf_counter()
    rng = np.random.default_rng(404)
    failures = 0
    for i in range(100):
        d = (2, 5, 10)[i % 3]
        k = (10, 50)[(i // 3) % 2]
        actions = rng.normal(size=(k, d))
        actions /= np.linalg.norm(actions, axis=1, keepdims=True)
        design = compute_near_g_optimal(actions)
        g = independent_g(actions, design.weights)
        d_eff = np.linalg.matrix_rank(actions)
        ok = d_eff - 1e-9 <= g <= 2 * d_eff + 1e-9 and design.support.size <= support_bound(d)
        failures += not ok
    elapsed = time.perf_counter() - start
    report(4, failures == 0 and elapsed < 10, f"{failures} invalid designs of 100, {elapsed:.2f}s")


def test_criterion_05_zero_noise_recovery():
    start = time.perf_counter()
    rng = np.random.default_rng(505)
    actions = rng.normal(size=(40, 4))
    actions /= np.linalg.norm(actions, axis=1, keepdims=True)
    theta = rng.normal(size=4)
    theta /= np.linalg.norm(theta)
    trace = []
    run_dpdpe(BanditConfig(T=10_000, sigma=0.0), actions, PopulationSpec(theta, sigma=0.0, reward_noise=0.0),
              Privatizer(), ZeroNoiseRNG(), trace=trace)
    first = trace[0]
    err = float(np.max(np.abs(first.estimate - theta)))
    means = actions @ theta
    gaps = means.max() - means
    survivors = set(trace[1].active.tolist())
    wrong = [i for i in np.flatnonzero(gaps > 4 * first.width) if i in survivors]
    elapsed = time.perf_counter() - start
    report(5, err < 1e-9 and not wrong and elapsed < 1.0,
           f"|theta_1 - theta*| {err:.1e}, {len(wrong)} far actions kept, W_1 {first.width:.3f}, {elapsed:.2f}s")


def test_criterion_06_elimination_safety():
    cfg = ExperimentConfig(model="none", d=5, k=50, T=100_000, sigma=0.1, seeds=list(range(100)), csv_points=10)
    res = run_experiment(cfg, workers=WORKERS)
    kept = sum(bool(m.best_retained) for _, m in res.runs)
    report(6, kept >= 95, f"best action retained in {kept}/100 runs")


def _increase_significant(lower_eps, higher_eps) -> float:
    """p-value for regret at the larger epsilon exceeding regret at the smaller one."""
    if np.array_equal(np.sort(lower_eps), np.sort(higher_eps)):
        return 1.0
    return float(stats.mannwhitneyu(higher_eps, lower_eps, alternative="greater").pvalue)


def test_criterion_07_epsilon_trend():
    res = results("epsilon-sweep")
    notes, ok = [], True
    for model in ("central", "local", "shuffle"):
        r = [res[("DPDPE", model, e)].final_regrets for e in (1.0, 5.0, 10.0)]
        p = min(_increase_significant(r[0], r[1]), _increase_significant(r[1], r[2]))
        ok &= p >= 0.05
        notes.append(f"{model} " + "/".join(f"{x.mean():.0f}" for x in r) + f" (min p {p:.2f})")
    means = {m: res[("DPDPE", m, 10.0)].final_regrets.mean() for m in ("central", "local", "shuffle")}
    order = means["local"] > means["shuffle"] >= means["central"]
    close = means["shuffle"] <= 1.15 * means["central"]
    report(7, ok and order and close,
           "; ".join(notes) + f"; ordering {'holds' if order else 'fails'}, "
           f"shuffle/central {means['shuffle'] / means['central']:.2f}")


def test_criterion_08_privacy_for_free():
    res = results("trust-models")
    base = res[("DPDPE", "none", 10.0)].final_regrets.mean()
    ratio = {m: res[("DPDPE", m, 10.0)].final_regrets.mean() / base for m in ("central", "local", "shuffle")}
    ok = abs(ratio["central"] - 1) <= 0.2 and abs(ratio["shuffle"] - 1) <= 0.2 and ratio["local"] >= 1.5
    report(8, ok, f"regret relative to non-private {base:.0f}: "
                  + ", ".join(f"{m} {v:.2f}x" for m, v in ratio.items()))


def test_criterion_09_fixed_clients():
    res = results("fixed-clients")
    dpe, fixed = res[("DPDPE", "none", 1.0)], res[("DPE-FixedU", "none", 1.0)]
    a, b = dpe.final_regrets, fixed.final_regrets
    ok = a.mean() < b.mean()
    report(9, ok, f"DPE {a.mean():.0f} vs FixedU(U={fixed.config.fixed_clients}) {b.mean():.0f}; "
                  f"paired wins {int(np.sum(a < b))}/{a.size}; comm {dpe.comm_costs.mean():.0f} vs "
                  f"{fixed.comm_costs.mean():.0f}")


def _slope(model, epsilon):
    horizons = (10_000, 100_000, 1_000_000)
    costs = []
    for T in horizons:
        cfg = ExperimentConfig(model=model, epsilon=epsilon, d=5, k=50, alpha=0.8, T=T, seeds=list(range(5)),
                               csv_points=10)
        costs.append(run_experiment(cfg, workers=WORKERS).comm_costs.mean())
    return float(np.polyfit(np.log(horizons), np.log(costs), 1)[0]), costs


def test_criterion_10_communication_scaling():
    reals, rc = _slope("none", 10.0)
    bits, bc = _slope("shuffle", 10.0)
    ok = abs(reals - 0.8) <= 0.1 and abs(bits - 1.2) <= 0.15
    report(10, ok, f"reals slope {reals:.3f} ({', '.join(f'{c:.3g}' for c in rc)}), "
                   f"shuffle bits slope {bits:.3f} ({', '.join(f'{c:.3g}' for c in bc)})")


def test_criterion_11_determinism(tmp_path):
    cfgs = preset_configs("trust-models", seeds=[42, 7])
    for name in ("a", "b"):
        write_outputs([run_experiment(c, workers=WORKERS) for c in cfgs], tmp_path / name)
    files = ("runs.csv", "phases.csv", "summary.csv", "summary.txt")
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    size = (tmp_path / "a" / "runs.csv").stat().st_size
    report(11, same, f"{len(files)} output files byte-identical across re-runs ({size} bytes of runs.csv)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
