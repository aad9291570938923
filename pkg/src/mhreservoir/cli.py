"""Command-line interface: generate, run, sweep, report.

All commands read one JSON config file whose defaults reproduce the
evaluation protocol end to end; every hyperparameter is a named key.
Outputs are deterministic given identical inputs (timestamps appear only
in provenance fields). Exit codes: 0 success, 2 user/config error,
3 numerical/runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dynsys import (IntegratorConfig, SystemKind, SystemSpec,
                     build_continual_dataset, load_dataset, save_dataset)
from .errors import (ConfigError, DegenerateDataError, DivergenceError,
                     IntegrityError, NumericalError)
from .experiment import (PAPER_LAMBDAS, ExperimentConfig, Setting, aggregate,
                         run_experiment, split_seed, sweep_lambda, sweep_threshold)
from .ioutil import fstr, read_json, write_json
from .multihead import LearnerConfig
from .reservoir import ReservoirConfig

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
RUN_SCHEMA_VERSION = 1

_SYSTEM_LABELS = {"vanderpol": "VdP", "lorenz63": "L63", "lorenz96": "L96"}
_SETTING_LABELS = {
    "single_task": "Single-task",
    "multi_task": "Multi-task",
    "continual": "Continual",
    "naive_continual": "Naive continual",
}
_SETTING_ORDER = ["single_task", "multi_task", "continual", "naive_continual"]

_REQUIRED = object()


# ---------------------------------------------------------------------------
# Config file parsing and emission
# ---------------------------------------------------------------------------

def _get(section: dict, name: str, conv, default=_REQUIRED, where: str = ""):
    if name not in section:
        if default is _REQUIRED:
            raise ConfigError(f"missing config field {where}{name}")
        return default
    try:
        return conv(section[name])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {where}{name}: "
                          f"{section[name]!r} ({exc})") from None


def _check_unknown(section: dict, known: set[str], where: str) -> None:
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown config field(s) {sorted(unknown)} in {where}")


def _env_spec(system: str, entry: dict, lorenz96_dim: int, index: int) -> SystemSpec:
    where = f"environments[{index}]."
    kind = SystemKind(system)
    if kind is SystemKind.VAN_DER_POL:
        _check_unknown(entry, {"mu"}, where[:-1])
        return SystemSpec.van_der_pol(_get(entry, "mu", float, where=where))
    if kind is SystemKind.LORENZ63:
        _check_unknown(entry, {"rho", "sigma", "beta"}, where[:-1])
        return SystemSpec.lorenz63(_get(entry, "rho", float, where=where),
                                   _get(entry, "sigma", float, where=where),
                                   _get(entry, "beta", float, where=where))
    _check_unknown(entry, {"forcing"}, where[:-1])
    return SystemSpec.lorenz96(_get(entry, "forcing", float, where=where),
                               dim=lorenz96_dim)


def config_from_dict(obj: dict) -> ExperimentConfig:
    """Parse and validate a config mapping; raises ConfigError with the field."""
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    _check_unknown(obj, {"schema_version", "system", "environments", "lorenz96_dim",
                         "integrator", "reservoir", "learner", "num_seeds",
                         "setting", "per_env_standardization"}, "config root")
    if _get(obj, "schema_version", int, CONFIG_SCHEMA_VERSION) != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {obj['schema_version']}")
    system = _get(obj, "system", str)
    if system not in _SYSTEM_LABELS:
        raise ConfigError(f"unknown system {system!r}; "
                          f"expected one of {sorted(_SYSTEM_LABELS)}")
    lorenz96_dim = _get(obj, "lorenz96_dim", int, 40)
    from .experiment import PAPER_ENVIRONMENTS
    env_entries = obj.get("environments", PAPER_ENVIRONMENTS[system])
    if not isinstance(env_entries, list) or not env_entries:
        raise ConfigError("environments must be a non-empty list")
    try:
        specs = tuple(_env_spec(system, dict(e), lorenz96_dim, i)
                      for i, e in enumerate(env_entries))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    integ = dict(obj.get("integrator", {}))
    _check_unknown(integ, {"dt_out", "substeps", "transient_steps",
                           "steps_per_sequence", "sequences_per_env", "rng_seed"},
                   "integrator")
    res = dict(obj.get("reservoir", {}))
    _check_unknown(res, {"size", "spectral_radius", "sparsity", "input_scale", "seed"},
                   "reservoir")
    lrn = dict(obj.get("learner", {}))
    _check_unknown(lrn, {"num_heads", "num_active", "drift_threshold", "cue_len",
                         "test_init_len", "test_select_len", "lambda", "seed",
                         "allow_untrained_at_test"}, "learner")
    setting_name = _get(obj, "setting", str, "continual")
    try:
        setting = Setting(setting_name)
    except ValueError:
        raise ConfigError(f"unknown setting {setting_name!r}; expected one of "
                          f"{[s.value for s in Setting]}") from None
    try:
        return ExperimentConfig(
            specs=specs,
            integrator=IntegratorConfig(
                dt_out=_get(integ, "dt_out", float, 0.05, "integrator."),
                substeps=_get(integ, "substeps", int, 10, "integrator."),
                transient_steps=_get(integ, "transient_steps", int, 100, "integrator."),
                steps_per_sequence=_get(integ, "steps_per_sequence", int, 200,
                                        "integrator."),
                sequences_per_env=_get(integ, "sequences_per_env", int, 10,
                                       "integrator."),
                rng_seed=_get(integ, "rng_seed", int, 0, "integrator.")),
            reservoir=ReservoirConfig(
                size=_get(res, "size", int, 1000, "reservoir."),
                spectral_radius=_get(res, "spectral_radius", float, 0.6, "reservoir."),
                sparsity=_get(res, "sparsity", float, 0.01, "reservoir."),
                input_scale=_get(res, "input_scale", float, 1.0, "reservoir."),
                seed=_get(res, "seed", int, 0, "reservoir.")),
            learner=LearnerConfig(
                num_heads=_get(lrn, "num_heads", int, 10, "learner."),
                num_active=_get(lrn, "num_active", int, 1, "learner."),
                drift_threshold=_get(lrn, "drift_threshold", float, 2.0, "learner."),
                cue_len=_get(lrn, "cue_len", int, 10, "learner."),
                test_init_len=_get(lrn, "test_init_len", int, 5, "learner."),
                test_select_len=_get(lrn, "test_select_len", int, 5, "learner."),
                lam=_get(lrn, "lambda", float, PAPER_LAMBDAS[system], "learner."),
                seed=_get(lrn, "seed", int, 0, "learner."),
                allow_untrained_at_test=_get(lrn, "allow_untrained_at_test", bool,
                                             False, "learner.")),
            num_seeds=_get(obj, "num_seeds", int, 10),
            setting=setting,
            per_env_standardization=_get(obj, "per_env_standardization", bool, False),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical config mapping (floats as decimal strings); round-trips."""
    env_entries = []
    for spec in cfg.specs:
        env_entries.append({k: fstr(v) for k, v in sorted(spec.params.items())})
    out = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "system": cfg.system,
        "environments": env_entries,
        "integrator": {
            "dt_out": fstr(cfg.integrator.dt_out),
            "substeps": cfg.integrator.substeps,
            "transient_steps": cfg.integrator.transient_steps,
            "steps_per_sequence": cfg.integrator.steps_per_sequence,
            "sequences_per_env": cfg.integrator.sequences_per_env,
            "rng_seed": cfg.integrator.rng_seed,
        },
        "reservoir": {
            "size": cfg.reservoir.size,
            "spectral_radius": fstr(cfg.reservoir.spectral_radius),
            "sparsity": fstr(cfg.reservoir.sparsity),
            "input_scale": fstr(cfg.reservoir.input_scale),
            "seed": cfg.reservoir.seed,
        },
        "learner": {
            "num_heads": cfg.learner.num_heads,
            "num_active": cfg.learner.num_active,
            "drift_threshold": fstr(cfg.learner.drift_threshold),
            "cue_len": cfg.learner.cue_len,
            "test_init_len": cfg.learner.test_init_len,
            "test_select_len": cfg.learner.test_select_len,
            "lambda": fstr(cfg.learner.lam),
            "seed": cfg.learner.seed,
            "allow_untrained_at_test": cfg.learner.allow_untrained_at_test,
        },
        "num_seeds": cfg.num_seeds,
        "setting": cfg.setting.value,
        "per_env_standardization": cfg.per_env_standardization,
    }
    if cfg.system == "lorenz96":
        out["lorenz96_dim"] = cfg.specs[0].dim
    return out


def load_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = read_json(path)
    except ValueError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return config_from_dict(obj)


def _provenance(cfg: ExperimentConfig, seeds: list[int] | None = None) -> dict:
    prov = {
        "tool": "mhreservoir",
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if seeds is not None:
        prov["seeds"] = seeds
    return prov


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(config_path: str, out_dir: str) -> int:
    cfg = load_config(config_path)
    datasets = build_continual_dataset(
        list(cfg.specs), cfg.integrator,
        per_env_standardization=cfg.per_env_standardization)
    save_dataset(out_dir, datasets, list(cfg.specs), cfg.integrator,
                 provenance=_provenance(cfg))
    logger.info("wrote dataset with %d environments to %s", len(datasets), out_dir)
    return 0


def _check_data_compatibility(cfg: ExperimentConfig, data_dir: str) -> None:
    """The dataset manifest must describe the same system and integrator."""
    _, specs, icfg = load_dataset(data_dir)
    if tuple(specs) != cfg.specs:
        raise ConfigError(f"dataset in {data_dir} has different environments "
                          f"than the config")
    if dataclasses.replace(icfg, rng_seed=cfg.integrator.rng_seed) != cfg.integrator:
        raise ConfigError(f"dataset in {data_dir} was generated with a different "
                          f"integrator configuration than the config")


def cmd_run(config_path: str, data_dir: str, out_dir: str, seed_offset: int = 0,
            resume: str | None = None, checkpoint_every: int | None = None) -> int:
    cfg = load_config(config_path)
    _check_data_compatibility(cfg, data_dir)
    if resume is not None and cfg.setting is Setting.SINGLE_TASK:
        raise ConfigError("--resume is not supported for the single_task setting")

    out = Path(out_dir)
    records_dir = out / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    seeds = [seed_offset + i for i in range(cfg.num_seeds)]

    results = []
    for i, seed in enumerate(seeds):
        kwargs = {}
        if i == 0:
            kwargs["checkpoint_dir"] = out / "checkpoint"
            if cfg.setting is not Setting.SINGLE_TASK:
                if resume is not None:
                    kwargs["resume_from"] = resume
                if checkpoint_every is not None:
                    kwargs["checkpoint_every"] = checkpoint_every
        result = run_experiment(cfg, seed, **kwargs)
        results.append(result)
        write_json(records_dir / f"seed{seed}.json", {
            "seed": seed,
            "per_env_mse": [float(v) for v in result.per_env_mse],
            "drift_events": list(result.drift_events),
            "head_assignment": {str(k): list(v)
                                for k, v in result.head_assignment.items()},
        })
        logger.info("seed %d: per-env MSE %s", seed,
                    np.array2string(result.per_env_mse, precision=6))

    agg = aggregate(results)
    lines = ["system,setting,env,mean_mse,sem_mse"]
    for k in range(len(cfg.specs)):
        lines.append(f"{cfg.system},{cfg.setting.value},{k + 1},"
                     f"{fstr(agg.mean_mse[k])},{fstr(agg.sem_mse[k])}")
    (out / "aggregate.csv").write_text("\n".join(lines) + "\n")

    write_json(out / "manifest.json", {
        "schema_version": RUN_SCHEMA_VERSION,
        "config": config_to_dict(cfg),
        "provenance": _provenance(cfg, seeds=seeds),
    })
    return 0


def cmd_sweep(config_path: str, sweep_name: str, values: list[float],
              out_dir: str) -> int:
    cfg = load_config(config_path)
    if not values:
        raise ConfigError("sweep needs at least one value")
    unique = sorted(set(values))
    if len(unique) != len(values):
        logger.warning("duplicate sweep values removed: %d -> %d",
                       len(values), len(unique))
    if sweep_name == "threshold":
        points = sweep_threshold(cfg, unique)
        metric = "detection_accuracy"
    elif sweep_name == "lambda":
        points = sweep_lambda(cfg, unique)
        metric = "validation_mse"
    else:
        raise ConfigError(f"unknown sweep {sweep_name!r}; "
                          f"expected 'threshold' or 'lambda'")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"system,sweep,value,{metric}_mean,{metric}_sem"]
    for p in points:
        lines.append(f"{cfg.system},{sweep_name},{fstr(p.value)},"
                     f"{fstr(p.mean)},{fstr(p.sem)}")
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    write_json(out / "manifest.json", {
        "schema_version": RUN_SCHEMA_VERSION,
        "config": config_to_dict(cfg),
        "sweep": {"name": sweep_name, "values": [fstr(v) for v in unique]},
        "provenance": _provenance(cfg),
    })
    return 0


def _sig4(x: float) -> str:
    return f"{x:.4g}"


def _sig2(x: float) -> str:
    return f"{x:.2g}"


def cmd_report(run_dirs: list[str], out_dir: str) -> int:
    """Merge run directories into one comparison table (MSE scaled by 10^3)."""
    rows = []
    env_counts = set()
    for run_dir in run_dirs:
        run = Path(run_dir)
        if not (run / "manifest.json").exists():
            raise ConfigError(f"{run_dir} is not a run directory (no manifest.json)")
        manifest = read_json(run / "manifest.json")
        system = manifest["config"]["system"]
        setting = manifest["config"]["setting"]
        records = sorted((run / "records").glob("seed*.json"),
                         key=lambda p: int(p.stem[4:]))
        if not records:
            raise ConfigError(f"{run_dir} contains no per-seed records")
        per_seed = [(int(read_json(p)["seed"]),
                     [float(v) for v in read_json(p)["per_env_mse"]])
                    for p in records]
        env_counts.add(len(per_seed[0][1]))
        rows.append((system, setting, per_seed))
    if len(env_counts) != 1:
        raise ConfigError(f"run directories have inconsistent environment counts: "
                          f"{sorted(env_counts)}")
    n_env = env_counts.pop()

    rows.sort(key=lambda r: (r[0], _SETTING_ORDER.index(r[1])))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    header = ["Dataset", "Setting"] + [f"Env {k + 1}" for k in range(n_env)]
    md = ["| " + " | ".join(header) + " |",
          "| " + " | ".join(["---"] * len(header)) + " |"]
    csv_lines = ["dataset,setting," +
                 ",".join(f"env{k + 1}_mean,env{k + 1}_sem" for k in range(n_env))]
    long_lines = ["dataset,setting,env,seed,mse"]
    for system, setting, per_seed in rows:
        stacked = np.array([mse for _, mse in per_seed])
        mean = stacked.mean(axis=0)
        n = stacked.shape[0]
        sem = np.zeros(n_env) if n == 1 else stacked.std(axis=0, ddof=1) / np.sqrt(n)
        cells = [f"{_sig4(m * 1e3)} ({_sig2(s * 1e3)})" for m, s in zip(mean, sem)]
        md.append("| " + " | ".join(
            [_SYSTEM_LABELS[system], _SETTING_LABELS[setting]] + cells) + " |")
        csv_lines.append(",".join(
            [system, setting] +
            [f"{fstr(m)},{fstr(s)}" for m, s in zip(mean, sem)]))
        for seed, mses in per_seed:
            for k, v in enumerate(mses):
                long_lines.append(f"{system},{setting},{k + 1},{seed},{fstr(v)}")

    (out / "report.md").write_text(
        "# One-step-ahead prediction MSE (units of 1e-3; SEM in brackets)\n\n"
        + "\n".join(md) + "\n")
    (out / "report.csv").write_text("\n".join(csv_lines) + "\n")
    (out / "report_long.csv").write_text("\n".join(long_lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mhreservoir",
        description="Competitive multi-head reservoir computing for continual "
                    "learning of dynamical systems")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="simulate and write a dataset directory")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)

    run = sub.add_parser("run", help="run the configured setting over all seeds")
    run.add_argument("--config", required=True)
    run.add_argument("--data", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed-offset", type=int, default=0)
    run.add_argument("--resume", default=None,
                     help="checkpoint directory to resume the first seed from")
    run.add_argument("--checkpoint-every", type=int, default=None,
                     help="write a mid-stream checkpoint every N training sequences")

    swp = sub.add_parser("sweep", help="hyperparameter sweep on validation data")
    swp.add_argument("--config", required=True)
    swp.add_argument("--sweep", required=True, choices=["threshold", "lambda"])
    swp.add_argument("--values", required=True, nargs="+", type=float)
    swp.add_argument("--out", required=True)

    rep = sub.add_parser("report", help="merge run directories into one table")
    rep.add_argument("run_dirs", nargs="+")
    rep.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    # The output directory (only) may be overridden by environment variable.
    out_override = os.environ.get("MHRESERVOIR_OUT")

    try:
        if args.command == "generate":
            return cmd_generate(args.config, out_override or args.out)
        if args.command == "run":
            return cmd_run(args.config, args.data, out_override or args.out,
                           seed_offset=args.seed_offset, resume=args.resume,
                           checkpoint_every=args.checkpoint_every)
        if args.command == "sweep":
            return cmd_sweep(args.config, args.sweep, args.values,
                             out_override or args.out)
        if args.command == "report":
            return cmd_report(args.run_dirs, out_override or args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DegenerateDataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, NumericalError, IntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
