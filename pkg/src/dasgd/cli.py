"""Command-line front end: run experiments from JSON configs.

Subcommands
    train    one algorithm, one config -> trajectory CSV + summary JSON
    compare  all three algorithms under matched sampling -> joined CSV
    bound    seed-averaged measurement vs. the convergence bound -> JSON
    perf     time model table + delay/tau recommendation -> CSV + JSON
    sweep    cartesian grid over list-valued config keys -> summary CSV

Configs are flat JSON; unknown keys are an error. Values given with
``--set key=value`` override the file (flag > DASGD_OUT_DIR env for the
output directory > file > default). Exit codes: 0 success, 2 config or
validation error, 3 diverged run.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import os
import sys

import numpy as np

from . import engine, perfmodel, theory
from .core import Constant, HyperParams, OneCycle, RngStream
from .objectives import (
    LogisticObjective,
    NoisyQuadratic,
    TinyMlpObjective,
    estimate_L,
    estimate_variance,
    load_dataset_csv,
)

ENV_OUT_DIR = "DASGD_OUT_DIR"


class ConfigError(ValueError):
    pass


_HYPER_KEYS = {"eta", "tau", "d", "xi", "M", "B_l", "K", "seed"}
_SCHEDULE_KEYS = {"lr_schedule", "lr_lo", "lr_hi", "lr_up_fraction"}
_OBJECTIVE_KEYS = {
    "objective", "dim", "noise_sigma", "l_min", "l_max", "init_offset",
    "dataset_seed", "dataset_size", "reg", "hidden", "dataset_csv",
}
_RUN_KEYS = {"algorithm", "out_dir", "n_threads"}
_BOUND_KEYS = {"seeds", "n_seeds", "use_warmup_term"}
_ALL_KEYS = _HYPER_KEYS | _SCHEDULE_KEYS | _OBJECTIVE_KEYS | _RUN_KEYS | _BOUND_KEYS

_DEFAULTS = {
    "algorithm": "dasgd",
    "objective": "quadratic",
    "eta": 0.05,
    "tau": 4,
    "d": 1,
    "xi": 0.25,
    "M": 4,
    "B_l": 32,
    "K": 500,
    "seed": 0,
    "n_threads": 1,
}


def load_config(path, overrides) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    for key, value in overrides:
        config[key] = value
    unknown = sorted(set(config) - _ALL_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    merged = dict(_DEFAULTS)
    merged.update(config)
    return merged


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings are convenient: --set algorithm=local
    return key, value


def build_params(config) -> HyperParams:
    schedule = None
    kind = config.get("lr_schedule")
    if kind == "onecycle":
        try:
            schedule = OneCycle(
                lo=float(config["lr_lo"]),
                hi=float(config["lr_hi"]),
                up_fraction=float(config.get("lr_up_fraction", 0.3)),
            )
        except KeyError as exc:
            raise ConfigError(f"onecycle schedule needs {exc} in the config")
    elif kind == "constant":
        schedule = Constant(float(config["eta"]))
    elif kind is not None:
        raise ConfigError(f"unknown lr_schedule {kind!r}")
    try:
        return HyperParams(
            eta=float(config["eta"]),
            tau=int(config["tau"]),
            d=int(config["d"]),
            xi=float(config["xi"]),
            M=int(config["M"]),
            B_l=int(config["B_l"]),
            K=int(config["K"]),
            seed=int(config["seed"]),
            lr_schedule=schedule,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_objective(config):
    kind = config["objective"]
    if kind == "quadratic":
        dim = int(config.get("dim", 4))
        eigs = np.linspace(float(config.get("l_min", 0.25)),
                           float(config.get("l_max", 1.0)), dim)
        offset = float(config.get("init_offset", 1.0))
        x0 = offset * np.ones(dim) / np.sqrt(dim)
        return NoisyQuadratic.diagonal(
            eigs, noise_sigma=float(config.get("noise_sigma", 0.0)), x0=x0)
    if kind == "logistic":
        if "dataset_csv" in config:
            X, y = load_dataset_csv(config["dataset_csv"])
            return LogisticObjective(features=X, labels=y,
                                     reg=float(config.get("reg", 1e-2)))
        return LogisticObjective(
            dim=int(config.get("dim", 10)),
            n_samples=int(config.get("dataset_size", 512)),
            reg=float(config.get("reg", 1e-2)),
            dataset_seed=int(config.get("dataset_seed", 0)),
        )
    if kind == "mlp":
        return TinyMlpObjective(
            in_dim=int(config.get("dim", 4)),
            hidden=int(config.get("hidden", 8)),
            n_samples=int(config.get("dataset_size", 256)),
            reg=float(config.get("reg", 1e-3)),
            dataset_seed=int(config.get("dataset_seed", 0)),
        )
    raise ConfigError(f"unknown objective {kind!r}")


_RUNNERS = {
    "dasgd": engine.run_dasgd,
    "local": engine.run_local_sgd,
    "minibatch": engine.run_minibatch,
}


def resolve_out_dir(args, config) -> str:
    out = args.out or os.environ.get(ENV_OUT_DIR) or config.get("out_dir") or "."
    os.makedirs(out, exist_ok=True)
    return out


def cmd_train(args) -> int:
    config = load_config(args.config, args.set or [])
    algorithm = config["algorithm"]
    if algorithm not in _RUNNERS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    params = build_params(config)
    objective = build_objective(config)
    trajectory = _RUNNERS[algorithm](params, objective,
                                     n_threads=int(config["n_threads"]))
    out = resolve_out_dir(args, config)
    csv_path = os.path.join(out, f"{algorithm}_trajectory.csv")
    json_path = os.path.join(out, f"{algorithm}_summary.json")
    engine.write_trajectory_csv(trajectory, csv_path)
    engine.write_summary_json(trajectory, json_path)
    print(csv_path)
    print(json_path)
    return 0


def cmd_compare(args) -> int:
    config = load_config(args.config, args.set or [])
    params = build_params(config)
    objective = build_objective(config)
    n_threads = int(config["n_threads"])
    out = resolve_out_dir(args, config)
    lines = ["algorithm,step,loss,grad_norm_sq,dispersion,lr"]
    summaries = {}
    for algorithm in ("minibatch", "local", "dasgd"):
        trajectory = _RUNNERS[algorithm](params, objective, n_threads=n_threads)
        for k in range(trajectory.steps):
            lines.append(
                f"{algorithm},{k},{float(trajectory.loss[k])!r},"
                f"{float(trajectory.grad_norm_sq[k])!r},"
                f"{float(trajectory.dispersion[k])!r},"
                f"{float(trajectory.lr[k])!r}"
            )
        summaries[algorithm] = engine.summary_dict(trajectory)
    csv_path = os.path.join(out, "compare.csv")
    json_path = os.path.join(out, "compare_summary.json")
    engine._atomic_write(csv_path, "\n".join(lines) + "\n")
    engine._atomic_write(json_path,
                         json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    print(csv_path)
    print(json_path)
    return 0


def _assumption_params(config, params, objective) -> theory.AssumptionParams:
    G0 = (theory.warmup_gradient_term(params, objective)
          if config.get("use_warmup_term") else 0.0)
    if isinstance(objective, NoisyQuadratic):
        base = theory.AssumptionParams.from_quadratic(objective)
        return dataclasses.replace(base, G0=G0)
    # measured constants for objectives without closed forms
    rng = RngStream(int(config["seed"]), purpose="probe").generator()
    x0 = objective.initial_point()
    L = estimate_L(objective, n_pairs=2000, radius=1.0, rng=rng)
    probes = [x0] + [x0 + 0.5 * rng.standard_normal(objective.dim)
                     for _ in range(5)]
    sigma_sq, beta = estimate_variance(
        objective, probes, n_samples=64, batch_size=params.B_l, rng=rng)
    if objective.f_inf_hint is None:
        raise ConfigError(
            f"objective {objective.name!r} has no known lower bound")
    return theory.AssumptionParams(
        L=L, beta=beta, sigma_sq=sigma_sq,
        F1=objective.full_loss(x0), F_inf=objective.f_inf_hint, G0=G0)


def cmd_bound(args) -> int:
    config = load_config(args.config, args.set or [])
    params = build_params(config)
    objective = build_objective(config)
    if "seeds" in config:
        seeds = [int(s) for s in config["seeds"]]
    else:
        n = int(config.get("n_seeds", 16))
        seeds = list(range(params.seed, params.seed + n))
    ap = _assumption_params(config, params, objective)
    trajectories = theory.seed_averaged_trajectories(params, objective, seeds)
    report = theory.empirical_vs_bound(trajectories, ap, params, params.eta)
    out = resolve_out_dir(args, config)
    path = os.path.join(out, "bound.json")
    engine._atomic_write(
        path, json.dumps(report.to_dict(ap, params), indent=2, sort_keys=True) + "\n")
    print(path)
    print(f"empirical={report.empirical!r} bound={report.bound!r} "
          f"satisfied={report.satisfied}")
    return 0


def cmd_perf(args) -> int:
    rec = perfmodel.recommend(args.model, args.hardware, args.scheme)
    inputs = perfmodel.catalog_inputs(args.model, args.hardware, args.scheme,
                                      B_l=args.local_batch, n_s=args.samples)
    m_values = args.m or [2 ** i for i in range(9)]
    rows = perfmodel.perf_table(inputs, m_values, rec.tau, rec.d)
    out = args.out or os.environ.get(ENV_OUT_DIR) or "."
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, f"perf_{rec.model}_{rec.hardware}_{rec.scheme}.csv")
    json_path = os.path.join(out, f"recommendation_{rec.model}_{rec.hardware}_{rec.scheme}.json")
    perfmodel.write_perf_csv(rows, csv_path)
    perfmodel.write_recommendation_json(rec, json_path)
    print(csv_path)
    print(json_path)
    print(f"model={rec.model} hardware={rec.hardware} scheme={rec.scheme} "
          f"d={rec.d} tau={rec.tau} feasible={rec.feasible}")
    return 0


_SWEEPABLE = sorted(_HYPER_KEYS | {"noise_sigma"})


def cmd_sweep(args) -> int:
    config = load_config(args.config, args.set or [])
    swept = [k for k in _SWEEPABLE if isinstance(config.get(k), list)]
    if not swept:
        raise ConfigError(
            f"sweep needs at least one list-valued key among {_SWEEPABLE}")
    grids = [config[k] for k in swept]
    algorithm = config["algorithm"]
    if algorithm not in _RUNNERS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    out = resolve_out_dir(args, config)
    header = swept + ["algorithm", "final_loss", "avg_grad_norm_sq", "steps"]
    lines = [",".join(header)]
    for combo in itertools.product(*grids):
        point = dict(config)
        point.update(dict(zip(swept, combo)))
        try:
            params = build_params(point)
        except ConfigError as exc:
            print(f"skipping {dict(zip(swept, combo))}: {exc}", file=sys.stderr)
            continue
        objective = build_objective(point)
        trajectory = _RUNNERS[algorithm](params, objective)
        values = [json.dumps(v) for v in combo]
        lines.append(",".join(
            values + [algorithm, repr(trajectory.final_loss),
                      repr(trajectory.avg_grad_norm_sq), str(trajectory.steps)]))
    path = os.path.join(out, "sweep.csv")
    engine._atomic_write(path, "\n".join(lines) + "\n")
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dasgd",
        description="multi-worker SGD simulator, bound calculator, time model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to flat JSON config")
        p.add_argument("--set", action="append", type=parse_override,
                       metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", help="output directory (overrides config/env)")
        p.set_defaults(func=func)
        return p

    add_config_command("train", cmd_train,
                       "run one algorithm, write trajectory CSV + summary JSON")
    add_config_command("compare", cmd_compare,
                       "run all three algorithms with matched sampling")
    add_config_command("bound", cmd_bound,
                       "seed-averaged gradient norm vs. convergence bound")
    add_config_command("sweep", cmd_sweep,
                       "cartesian sweep over list-valued config keys")

    perf = sub.add_parser("perf", help="time model table and delay recommendation")
    perf.add_argument("model", help="catalog model, e.g. resnet50")
    perf.add_argument("hardware", help="catalog hardware: titan or k80")
    perf.add_argument("scheme", nargs="?", default="tree",
                      choices=list(perfmodel.SCHEMES))
    perf.add_argument("--m", type=int, nargs="+",
                      help="worker counts (default 1 2 4 ... 256)")
    perf.add_argument("--local-batch", type=int, default=64)
    perf.add_argument("--samples", type=int, default=50_000,
                      help="dataset size used for epoch-time scaling")
    perf.add_argument("--out", help="output directory (overrides env)")
    perf.set_defaults(func=cmd_perf)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except engine.Diverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, theory.CapUndefined, KeyError, ValueError) as exc:
        message = exc.args[0] if exc.args else exc
        print(f"error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
