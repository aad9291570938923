"""Evaluation protocol: continual / single-task / multi-task runs and sweeps.

Each experiment seed derives independent data, reservoir, and learner seeds,
runs the configured training setting over the environment stream, and scores
per-environment one-step-ahead test MSE. Sweeps rerun the protocol on a
separate validation stream to pick the drift threshold and regularization.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynsys import (EnvironmentDataset, IntegratorConfig, SystemKind, SystemSpec,
                     build_continual_dataset, train_split_count)
from .errors import ConfigError
from .ioutil import read_json, write_json
from .multihead import (LearnerConfig, MultiHeadLearner, load_checkpoint,
                        save_checkpoint)
from .reservoir import ReservoirConfig, embed, init_reservoir, solve_regularized

# Seed-stream namespaces: the main protocol and the validation stream used
# by hyperparameter sweeps draw from disjoint deterministic streams.
STREAM_MAIN = 0
STREAM_VALIDATION = 1

PAPER_LAMBDAS = {"vanderpol": 1e-6, "lorenz63": 1e-6, "lorenz96": 5.0}

PAPER_ENVIRONMENTS = {
    "vanderpol": [{"mu": 0.5}, {"mu": 1.0}, {"mu": 2.0}, {"mu": 4.0}],
    "lorenz63": [
        {"rho": 28.0, "sigma": 10.0, "beta": 2.66},
        {"rho": 36.0, "sigma": 8.5, "beta": 3.5},
        {"rho": 35.0, "sigma": 21.0, "beta": 1.0},
        {"rho": 60.0, "sigma": 20.0, "beta": 8.0},
    ],
    "lorenz96": [{"forcing": 5.0}, {"forcing": 10.0}, {"forcing": 20.0},
                 {"forcing": 50.0}],
}


class Setting(enum.Enum):
    CONTINUAL = "continual"
    SINGLE_TASK = "single_task"
    MULTI_TASK = "multi_task"
    NAIVE_CONTINUAL = "naive_continual"


@dataclass(frozen=True)
class ExperimentConfig:
    specs: tuple[SystemSpec, ...]
    integrator: IntegratorConfig
    reservoir: ReservoirConfig
    learner: LearnerConfig
    num_seeds: int = 10
    setting: Setting = Setting.CONTINUAL
    per_env_standardization: bool = False

    def __post_init__(self):
        if not self.specs:
            raise ValueError("environment list must be non-empty")
        if self.num_seeds < 1:
            raise ValueError("num_seeds must be at least 1")

    @property
    def system(self) -> str:
        return self.specs[0].kind.value


@dataclass(frozen=True)
class RunResult:
    per_env_mse: np.ndarray             # (K,)
    drift_events: tuple[int, ...]       # training-sequence indices
    head_assignment: dict[int, tuple[int, ...]]  # env -> active heads at env end
    seed: int


@dataclass(frozen=True)
class AggregateResult:
    mean_mse: np.ndarray
    sem_mse: np.ndarray


@dataclass(frozen=True)
class SweepPoint:
    value: float
    mean: float
    sem: float
    per_seed: tuple[float, ...]


def default_experiment_config(system: str, setting: Setting = Setting.CONTINUAL,
                              num_seeds: int = 10, lorenz96_dim: int = 40
                              ) -> ExperimentConfig:
    """The default protocol for one system family (all hyperparameters named)."""
    if system not in PAPER_ENVIRONMENTS:
        raise ValueError(f"unknown system {system!r}; "
                         f"expected one of {sorted(PAPER_ENVIRONMENTS)}")
    kind = SystemKind(system)
    specs = []
    for params in PAPER_ENVIRONMENTS[system]:
        if kind is SystemKind.LORENZ96:
            specs.append(SystemSpec.lorenz96(params["forcing"], dim=lorenz96_dim))
        else:
            specs.append(SystemSpec(kind, dict(params),
                                    2 if kind is SystemKind.VAN_DER_POL else 3))
    return ExperimentConfig(
        specs=tuple(specs),
        integrator=IntegratorConfig(),
        reservoir=ReservoirConfig(),
        learner=LearnerConfig(lam=PAPER_LAMBDAS[system]),
        num_seeds=num_seeds,
        setting=setting,
    )


def split_seed(experiment_seed: int, stream: int = STREAM_MAIN) -> tuple[int, int, int]:
    """Derive (data_seed, reservoir_seed, learner_seed) from one experiment seed.

    Uses numpy's SeedSequence with the stream id as spawn key, so experiment
    seeds are independent of each other and the validation stream never
    overlaps the main one.
    """
    ss = np.random.SeedSequence(entropy=experiment_seed, spawn_key=(stream,))
    data_seed, reservoir_seed, learner_seed = (int(s) for s in ss.generate_state(3))
    return data_seed, reservoir_seed, learner_seed


def _build_datasets(cfg: ExperimentConfig, data_seed: int) -> list[EnvironmentDataset]:
    integrator = dataclasses.replace(cfg.integrator, rng_seed=data_seed)
    return build_continual_dataset(list(cfg.specs), integrator,
                                   per_env_standardization=cfg.per_env_standardization)


def _evaluate_env(learner: MultiHeadLearner, dataset: EnvironmentDataset) -> float:
    """Mean test MSE of one environment, head chosen per sequence from its cue."""
    cue = learner.cfg.test_init_len + learner.cfg.test_select_len
    mses = []
    for traj in dataset.test:
        head = learner.select_head_for_test(traj.data[:cue])
        mses.append(learner.evaluate_sequence(traj.data, head))
    return float(np.mean(mses))


# -- run-state checkpointing (training position + drift history) -------------

def save_run_state(learner: MultiHeadLearner, drift_events: list[int],
                   head_assignment: dict[int, tuple[int, ...]],
                   out_dir: Path | str) -> Path:
    out = save_checkpoint(learner, out_dir)
    write_json(out / "progress.json", {
        "drift_events": list(drift_events),
        "head_assignment": {str(k): list(v) for k, v in head_assignment.items()},
    })
    return out


def load_run_state(in_dir: Path | str
                   ) -> tuple[MultiHeadLearner, list[int], dict[int, tuple[int, ...]]]:
    in_dir = Path(in_dir)
    learner = load_checkpoint(in_dir)
    progress = read_json(in_dir / "progress.json")
    drift_events = [int(i) for i in progress["drift_events"]]
    head_assignment = {int(k): tuple(int(l) for l in v)
                       for k, v in progress["head_assignment"].items()}
    return learner, drift_events, head_assignment


def _stream_training(cfg: ExperimentConfig, seed: int, seed_stream: int,
                     lcfg: LearnerConfig,
                     checkpoint_dir: Path | str | None = None,
                     checkpoint_every: int | None = None,
                     resume_from: Path | str | None = None
                     ) -> tuple[MultiHeadLearner, list[EnvironmentDataset],
                                list[int], dict[int, tuple[int, ...]]]:
    """Train a learner over the full environment-ordered sequence stream."""
    data_seed, res_seed, learn_seed = split_seed(seed, seed_stream)
    datasets = _build_datasets(cfg, data_seed)
    stream = [traj for ds in datasets for traj in ds.train]
    env_ends = np.cumsum([len(ds.train) for ds in datasets])

    if resume_from is not None:
        learner, drift_events, head_assignment = load_run_state(resume_from)
        expected_rcfg = dataclasses.replace(cfg.reservoir, seed=res_seed)
        expected_lcfg = dataclasses.replace(lcfg, seed=learn_seed)
        if (learner.rcfg, learner.cfg, learner.d) != \
                (expected_rcfg, expected_lcfg, cfg.specs[0].dim):
            raise ConfigError("checkpoint configuration does not match this run; "
                              "refusing to resume")
        if learner.sequences_seen > len(stream):
            raise ValueError(f"checkpoint has seen {learner.sequences_seen} sequences "
                             f"but the stream only has {len(stream)}")
    else:
        rcfg = dataclasses.replace(cfg.reservoir, seed=res_seed)
        learner = MultiHeadLearner(rcfg, dataclasses.replace(lcfg, seed=learn_seed),
                                   cfg.specs[0].dim)
        drift_events, head_assignment = [], {}

    for i in range(learner.sequences_seen, len(stream)):
        report = learner.train_on_sequence(stream[i].data)
        if report.drift:
            drift_events.append(i)
        env = int(np.searchsorted(env_ends, i, side="right"))
        if i + 1 == env_ends[env]:
            head_assignment[env] = report.active
        if (checkpoint_dir is not None and checkpoint_every
                and (i + 1) % checkpoint_every == 0 and i + 1 < len(stream)):
            save_run_state(learner, drift_events, head_assignment, checkpoint_dir)

    if checkpoint_dir is not None:
        save_run_state(learner, drift_events, head_assignment, checkpoint_dir)
    return learner, datasets, drift_events, head_assignment


_SINGLE_HEAD = dict(num_heads=1, num_active=1, drift_threshold=math.inf)


def run_continual(cfg: ExperimentConfig, seed: int, *,
                  seed_stream: int = STREAM_MAIN,
                  checkpoint_dir: Path | str | None = None,
                  checkpoint_every: int | None = None,
                  resume_from: Path | str | None = None) -> RunResult:
    """Stream every environment's training sequences once, then test."""
    learner, datasets, drift_events, head_assignment = _stream_training(
        cfg, seed, seed_stream, cfg.learner,
        checkpoint_dir=checkpoint_dir, checkpoint_every=checkpoint_every,
        resume_from=resume_from)
    per_env = np.array([_evaluate_env(learner, ds) for ds in datasets])
    return RunResult(per_env_mse=per_env, drift_events=tuple(drift_events),
                     head_assignment=head_assignment, seed=seed)


def run_single_task(cfg: ExperimentConfig, seed: int, *,
                    seed_stream: int = STREAM_MAIN,
                    checkpoint_dir: Path | str | None = None) -> RunResult:
    """Upper bound: an independent single-head learner per environment."""
    data_seed, res_seed, learn_seed = split_seed(seed, seed_stream)
    datasets = _build_datasets(cfg, data_seed)
    rcfg = dataclasses.replace(cfg.reservoir, seed=res_seed)
    lcfg = dataclasses.replace(cfg.learner, seed=learn_seed, **_SINGLE_HEAD)
    per_env, head_assignment = [], {}
    for k, ds in enumerate(datasets):
        if not ds.train:
            raise ValueError(f"environment {k} has no training sequences")
        learner = MultiHeadLearner(rcfg, lcfg, cfg.specs[0].dim)
        for traj in ds.train:
            learner.train_on_sequence(traj.data)
        per_env.append(_evaluate_env(learner, ds))
        head_assignment[k] = (0,)
        if checkpoint_dir is not None:
            save_run_state(learner, [], {k: (0,)}, Path(checkpoint_dir) / f"env{k}")
    return RunResult(per_env_mse=np.array(per_env), drift_events=(),
                     head_assignment=head_assignment, seed=seed)


def run_multi_task(cfg: ExperimentConfig, seed: int, *,
                   seed_stream: int = STREAM_MAIN,
                   checkpoint_dir: Path | str | None = None,
                   checkpoint_every: int | None = None,
                   resume_from: Path | str | None = None) -> RunResult:
    """Lower bound: one head absorbs all environments' training data.

    The sufficient statistics are additive and order-independent, so joint
    training is realized by streaming the same sequences through a single
    head; see run_naive_continual.
    """
    lcfg = dataclasses.replace(cfg.learner, **_SINGLE_HEAD)
    learner, datasets, _, _ = _stream_training(
        cfg, seed, seed_stream, lcfg,
        checkpoint_dir=checkpoint_dir, checkpoint_every=checkpoint_every,
        resume_from=resume_from)
    per_env = np.array([_evaluate_env(learner, ds) for ds in datasets])
    return RunResult(per_env_mse=per_env, drift_events=(),
                     head_assignment={k: (0,) for k in range(len(datasets))}, seed=seed)


def run_naive_continual(cfg: ExperimentConfig, seed: int, *,
                        seed_stream: int = STREAM_MAIN,
                        checkpoint_dir: Path | str | None = None,
                        checkpoint_every: int | None = None,
                        resume_from: Path | str | None = None) -> RunResult:
    """Forgetting control: a single head updated through the whole stream.

    Because head updates are additive, this coincides exactly with
    run_multi_task; the separate setting exists to make the interference
    baseline explicit in reports.
    """
    return run_multi_task(cfg, seed, seed_stream=seed_stream,
                          checkpoint_dir=checkpoint_dir,
                          checkpoint_every=checkpoint_every,
                          resume_from=resume_from)


_RUNNERS = {
    Setting.CONTINUAL: run_continual,
    Setting.SINGLE_TASK: run_single_task,
    Setting.MULTI_TASK: run_multi_task,
    Setting.NAIVE_CONTINUAL: run_naive_continual,
}


def run_experiment(cfg: ExperimentConfig, seed: int, **kwargs) -> RunResult:
    return _RUNNERS[cfg.setting](cfg, seed, **kwargs)


def aggregate(results: list[RunResult]) -> AggregateResult:
    """Per-environment mean and standard error of the mean over seeds."""
    if not results:
        raise ValueError("need at least one run result")
    stacked = np.stack([r.per_env_mse for r in results])
    if len({r.per_env_mse.shape for r in results}) != 1:
        raise ValueError("results have inconsistent environment counts")
    mean = stacked.mean(axis=0)
    n = stacked.shape[0]
    sem = np.zeros_like(mean) if n == 1 else stacked.std(axis=0, ddof=1) / math.sqrt(n)
    return AggregateResult(mean_mse=mean, sem_mse=sem)


# -- hyperparameter sweeps on the validation stream ---------------------------

def detection_accuracy(cfg: ExperimentConfig, seed: int, theta: float, *,
                       seed_stream: int = STREAM_VALIDATION) -> float:
    """Fraction of training sequences with the correct drift decision.

    A decision is correct when the drift flag matches whether the sequence
    is the first of a new environment.
    """
    sweep_cfg = dataclasses.replace(
        cfg, learner=dataclasses.replace(cfg.learner, drift_threshold=theta))
    result = run_continual(sweep_cfg, seed, seed_stream=seed_stream)
    per_env = train_split_count(cfg.integrator.sequences_per_env)
    n_train = per_env * len(cfg.specs)
    boundaries = {per_env * k for k in range(1, len(cfg.specs))}
    flagged = set(result.drift_events)
    correct = sum(1 for i in range(n_train) if (i in flagged) == (i in boundaries))
    return correct / n_train


def _mean_sem(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    sem = 0.0 if arr.size == 1 else float(arr.std(ddof=1) / math.sqrt(arr.size))
    return float(arr.mean()), sem


def sweep_threshold(cfg: ExperimentConfig, thetas: list[float]) -> list[SweepPoint]:
    """Detection accuracy per threshold, mean and SEM over num_seeds runs."""
    if any(t <= 1 for t in thetas):
        raise ValueError("threshold values must exceed 1")
    points = []
    for theta in thetas:
        accs = [detection_accuracy(cfg, seed, theta) for seed in range(cfg.num_seeds)]
        mean, sem = _mean_sem(accs)
        points.append(SweepPoint(value=float(theta), mean=mean, sem=sem,
                                 per_seed=tuple(accs)))
    return points


def sweep_lambda(cfg: ExperimentConfig, lambdas: list[float]) -> list[SweepPoint]:
    """Single-task validation MSE (mean over environments) per regularization.

    The accumulated statistics (A, B) and the embedded test states do not
    depend on the regularization, so each environment is embedded once and
    only the solve is repeated per lambda. This matches run_single_task
    exactly for any fixed lambda.
    """
    if any(lam <= 0 for lam in lambdas):
        raise ValueError("lambda values must be positive")
    per_lambda: dict[float, list[float]] = {lam: [] for lam in lambdas}
    d = cfg.specs[0].dim
    cue = cfg.learner.cue_len
    for seed in range(cfg.num_seeds):
        data_seed, res_seed, _ = split_seed(seed, STREAM_VALIDATION)
        datasets = _build_datasets(cfg, data_seed)
        weights = init_reservoir(dataclasses.replace(cfg.reservoir, seed=res_seed), d)
        env_mse = {lam: [] for lam in lambdas}
        for ds in datasets:
            A = np.zeros((cfg.reservoir.size, cfg.reservoir.size))
            B = np.zeros((cfg.reservoir.size, d))
            for traj in ds.train:
                states = embed(weights, traj.data)
                H, X = states[cue - 1:-1], traj.data[cue:]
                A += H.T @ H
                B += H.T @ X
            test_pairs = []
            for traj in ds.test:
                states = embed(weights, traj.data)
                test_pairs.append((states[cue - 1:-1], traj.data[cue:]))
            for lam in lambdas:
                W = solve_regularized(A, B, lam)
                mses = [float(np.mean((H @ W.T - X) ** 2)) for H, X in test_pairs]
                env_mse[lam].append(float(np.mean(mses)))
        for lam in lambdas:
            per_lambda[lam].append(float(np.mean(env_mse[lam])))
    points = []
    for lam in lambdas:
        mean, sem = _mean_sem(per_lambda[lam])
        points.append(SweepPoint(value=float(lam), mean=mean, sem=sem,
                                 per_seed=tuple(per_lambda[lam])))
    return points
