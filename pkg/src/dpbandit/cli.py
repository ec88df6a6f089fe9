"""Command-line entry point: ``dpbandit {run,sweep,check-design,check-privacy,version}``."""

from __future__ import annotations

import argparse
import math
import sys
import time

import numpy as np

from . import __version__
from .design import compute_near_g_optimal, support_bound
from .harness import (PRESETS, ExperimentConfig, default_workers, expand_grid, load_config,
                      preset_configs, run_experiment, summary_text, write_outputs)
from .privatizers import (PrivacyParams, central_privatize, local_privatize, scalar_shuffle_sum,
                          scalar_shuffle_variance_bound, shuffle_params, shuffle_privatize,
                          shuffle_variance_bound, sigma_central, sigma_local)
from .rng import make_rng

# flag name -> config key; flags win over the config file
_OVERRIDES = {"seed": "seeds", "seeds": "seeds", "model": "model", "epsilon": "epsilon",
              "delta": "delta", "alpha": "alpha", "out": "out", "algorithm": "algorithm",
              "T": "T", "d": "d", "k": "k", "sigma": "sigma", "csv_points": "csv_points",
              "instance_seed": "instance_seed"}


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat YAML file of experiment keys")
    p.add_argument("--preset", choices=PRESETS, help="desk-scale comparison experiment")
    p.add_argument("--algorithm", choices=["DPDPE", "DPPE", "DPE-FixedU"])
    p.add_argument("--model", choices=["none", "central", "local", "shuffle"])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--T", "-T", type=int, dest="T")
    p.add_argument("--d", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int, help="single seed")
    p.add_argument("--seeds", help="seed list such as 0-19 or 1,4,9")
    p.add_argument("--instance-seed", type=int, dest="instance_seed")
    p.add_argument("--csv-points", type=int, dest="csv_points", help="cap on CSV rows per run")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="parallel runs (default: $DPBANDIT_WORKERS or CPU count)")


def _settings(args) -> dict:
    settings = load_config(args.config) if args.config else {}
    for flag, key in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings[key] = value
    return settings


def _workers(args, settings) -> int:
    if args.workers is not None:
        return args.workers
    if "workers" in settings:
        return int(settings["workers"])
    return default_workers()


def _execute(configs, workers, out) -> int:
    results = []
    for cfg in configs:
        start = time.perf_counter()
        results.append(run_experiment(cfg, workers=workers))
        print(f"finished {cfg.label()} ({len(cfg.seeds)} seeds, {time.perf_counter() - start:.1f}s)",
              file=sys.stderr)
    print(summary_text(results), end="")
    if out:
        path = write_outputs(results, out)
        print(f"wrote {path}/runs.csv, phases.csv, summary.csv, summary.txt", file=sys.stderr)
    return 0


def _split(settings: dict):
    grid = {k: settings.pop(k) for k in ("models", "epsilons", "alphas") if k in settings}
    preset = settings.pop("preset", None)
    workers = settings.pop("workers", None)
    return grid, preset, workers


def cmd_run(args) -> int:
    settings = _settings(args)
    workers = _workers(args, settings)
    grid, preset, _ = _split(settings)
    preset = args.preset or preset
    out = settings.pop("out", None)
    if preset:
        configs = preset_configs(preset, **settings)
    else:
        if grid:
            raise SystemExit("grid keys (models/epsilons/alphas) need the sweep subcommand")
        configs = [ExperimentConfig(**settings)]
    return _execute(configs, workers, out)


def _floats(text):
    return [float(v) for v in text.split(",")] if text else None


def cmd_sweep(args) -> int:
    settings = _settings(args)
    workers = _workers(args, settings)
    grid, preset, _ = _split(settings)
    out = settings.pop("out", None)
    if args.preset or preset:
        return _execute(preset_configs(args.preset or preset, **settings), workers, out)
    models = args.models.split(",") if args.models else grid.get("models")
    epsilons = _floats(args.epsilons) or grid.get("epsilons")
    alphas = _floats(args.alphas) or grid.get("alphas")
    configs = expand_grid(ExperimentConfig(**settings), models, epsilons, alphas)
    return _execute(configs, workers, out)


def cmd_check_design(args) -> int:
    rng = make_rng(args.seed)
    worst = 0.0
    print(f"{'d':>3} {'k':>5} {'g/d_eff':>9} {'support':>8} {'bound':>6} {'ms':>8}")
    ok = True
    for d in args.dims:
        for k in args.ks:
            for _ in range(args.trials):
                a = rng.normal(size=(k, d))
                a /= np.linalg.norm(a, axis=1, keepdims=True)
                start = time.perf_counter()
                design = compute_near_g_optimal(a)
                ms = 1e3 * (time.perf_counter() - start)
                ratio = design.g_value / design.d_eff
                bound = support_bound(d)
                ok &= design.d_eff * (1 - 1e-9) <= design.g_value <= 2 * design.d_eff * (1 + 1e-9)
                ok &= design.support.size <= bound
                worst = max(worst, ratio)
            print(f"{d:>3} {k:>5} {ratio:>9.4f} {design.support.size:>8} {bound:>6} {ms:>8.2f}")
    print(f"worst g/d_eff = {worst:.4f}; {'all designs valid' if ok else 'INVALID design found'}")
    return 0 if ok else 1


def _mc_report(name, outputs, truth, var_bound):
    outputs = np.asarray(outputs)
    n = outputs.shape[0]
    mean, std = outputs.mean(axis=0), outputs.std(axis=0, ddof=1)
    bias_ok = np.all(np.abs(mean - truth) < 3 * std / math.sqrt(n))
    var_ok = np.all(std ** 2 <= 1.1 * var_bound)
    print(f"{name:<16} max|bias|={np.max(np.abs(mean - truth)):.4g} "
          f"max var={np.max(std ** 2):.4g} bound={var_bound:.4g} "
          f"{'ok' if bias_ok and var_ok else 'FAIL'}")
    return bool(bias_ok and var_ok)


def cmd_check_privacy(args) -> int:
    rng = make_rng(args.seed)
    s, n, eps, delta, B = args.s, args.n, args.epsilon, args.delta, args.B
    reports = rng.uniform(-B, B, size=(n, s))
    truth = reports.mean(axis=0)
    params = PrivacyParams("central", eps, delta, B)
    ok = _mc_report("central", [central_privatize(reports, params, rng).values for _ in range(args.trials)],
                    truth, sigma_central(B, s, delta, eps, n) ** 2)
    params = PrivacyParams("local", eps, delta, B)
    ok &= _mc_report("local", [local_privatize(reports, params, rng).values for _ in range(args.trials)],
                     truth, sigma_local(B, s, delta, eps) ** 2 / n)
    params = PrivacyParams("shuffle", eps, delta, B)
    sp = shuffle_params(eps, delta, s, n, delta2=B * math.sqrt(s))
    ok &= _mc_report("shuffle", [shuffle_privatize(reports, params, rng)[0].values for _ in range(args.trials)],
                     truth, shuffle_variance_bound(sp))
    values = reports[:, 0]
    ok &= _mc_report("scalar shuffle", [[scalar_shuffle_sum(values, eps, delta, B, rng)] for _ in range(args.trials)],
                     values.sum(), scalar_shuffle_variance_bound(eps, delta, B))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpbandit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment (or a preset)")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid over privacy model, epsilon and alpha")
    _add_experiment_flags(p)
    p.add_argument("--models", help="comma-separated privacy models")
    p.add_argument("--epsilons", help="comma-separated epsilons")
    p.add_argument("--alphas", help="comma-separated alphas")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check-design", help="design quality on random action sets")
    p.add_argument("--dims", type=int, nargs="+", default=[2, 5, 10])
    p.add_argument("--ks", type=int, nargs="+", default=[10, 50])
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_design)

    p = sub.add_parser("check-privacy", help="Monte Carlo bias and variance of the privatizers")
    p.add_argument("--s", type=int, default=4)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--epsilon", type=float, default=10.0)
    p.add_argument("--delta", type=float, default=0.25)
    p.add_argument("--B", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_privacy)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=lambda args: print(__version__) or 0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
