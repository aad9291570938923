"""Dynamical systems, fixed-step RK4 integration, and multi-environment datasets.

Three system families are supported: the Van der Pol oscillator (limit
cycle, damping mu), the Lorenz-63 attractor (rho, sigma, beta), and the
Lorenz-96 atmosphere model (forcing F, free dimension D). An *environment*
is one parameterization of a family; a continual dataset is an ordered
collection of environments sharing a single joint standardization.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateDataError, DivergenceError
from .ioutil import fstr, fstr_list, read_f64, read_json, write_f64, write_json

DATASET_SCHEMA_VERSION = 1


class SystemKind(enum.Enum):
    VAN_DER_POL = "vanderpol"
    LORENZ63 = "lorenz63"
    LORENZ96 = "lorenz96"


@dataclass(frozen=True)
class SystemSpec:
    """One parameterized dynamical system (an environment)."""

    kind: SystemKind
    params: dict[str, float]
    dim: int

    def __post_init__(self):
        expected = {
            SystemKind.VAN_DER_POL: {"mu"},
            SystemKind.LORENZ63: {"rho", "sigma", "beta"},
            SystemKind.LORENZ96: {"forcing"},
        }[self.kind]
        if set(self.params) != expected:
            raise ValueError(f"{self.kind.value} expects parameters {sorted(expected)}, "
                             f"got {sorted(self.params)}")
        if not all(np.isfinite(v) for v in self.params.values()):
            raise ValueError("all system parameters must be finite")
        if self.kind is SystemKind.VAN_DER_POL and self.dim != 2:
            raise ValueError("Van der Pol state dimension must be 2")
        if self.kind is SystemKind.LORENZ63 and self.dim != 3:
            raise ValueError("Lorenz-63 state dimension must be 3")
        # D >= 4 keeps the i-2 neighbor distinct from i and i+1.
        if self.kind is SystemKind.LORENZ96 and self.dim < 4:
            raise ValueError("Lorenz-96 dimension must be at least 4")

    @classmethod
    def van_der_pol(cls, mu: float) -> "SystemSpec":
        return cls(SystemKind.VAN_DER_POL, {"mu": float(mu)}, 2)

    @classmethod
    def lorenz63(cls, rho: float, sigma: float, beta: float) -> "SystemSpec":
        return cls(SystemKind.LORENZ63,
                   {"rho": float(rho), "sigma": float(sigma), "beta": float(beta)}, 3)

    @classmethod
    def lorenz96(cls, forcing: float, dim: int = 40) -> "SystemSpec":
        return cls(SystemKind.LORENZ96, {"forcing": float(forcing)}, int(dim))


@dataclass(frozen=True)
class IntegratorConfig:
    dt_out: float = 0.05
    substeps: int = 10
    transient_steps: int = 100
    steps_per_sequence: int = 200
    sequences_per_env: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.dt_out <= 0:
            raise ValueError("dt_out must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")
        if min(self.transient_steps, self.steps_per_sequence, self.sequences_per_env) < 0:
            raise ValueError("step counts must be non-negative")


@dataclass(frozen=True)
class Trajectory:
    """One sequence of state vectors; env_id is metadata the learner never sees."""

    data: np.ndarray  # (T, d)
    env_id: int


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray  # (d,)
    std: np.ndarray   # (d,), strictly positive

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


@dataclass(frozen=True)
class EnvironmentDataset:
    train: list[Trajectory]
    test: list[Trajectory]
    standardization: StandardizationStats

    @property
    def all_trajectories(self) -> list[Trajectory]:
        return list(self.train) + list(self.test)


def derivative(spec: SystemSpec, state: np.ndarray) -> np.ndarray:
    """Time derivative of the system state.

    `state` may carry leading batch axes; the last axis is the state
    dimension. Lorenz-96 neighbor indices wrap cyclically.
    """
    state = np.asarray(state, dtype=np.float64)
    if state.shape[-1] != spec.dim:
        raise ValueError(f"state has dimension {state.shape[-1]}, spec requires {spec.dim}")

    if spec.kind is SystemKind.VAN_DER_POL:
        mu = spec.params["mu"]
        x, v = state[..., 0], state[..., 1]
        return np.stack([v, mu * (1.0 - x * x) * v - x], axis=-1)

    if spec.kind is SystemKind.LORENZ63:
        rho, sigma, beta = (spec.params[k] for k in ("rho", "sigma", "beta"))
        x, y, z = state[..., 0], state[..., 1], state[..., 2]
        return np.stack([sigma * (y - x), x * (rho - z) - y, x * y - beta * z], axis=-1)

    forcing = spec.params["forcing"]
    xp1 = np.roll(state, -1, axis=-1)
    xm1 = np.roll(state, 1, axis=-1)
    xm2 = np.roll(state, 2, axis=-1)
    return (xp1 - xm2) * xm1 - state + forcing


def _rk4_output_step(spec: SystemSpec, state: np.ndarray, dt_out: float,
                     substeps: int) -> np.ndarray:
    """Advance one output interval with `substeps` classical RK4 steps."""
    h = dt_out / substeps
    for _ in range(substeps):
        k1 = derivative(spec, state)
        k2 = derivative(spec, state + 0.5 * h * k1)
        k3 = derivative(spec, state + 0.5 * h * k2)
        k4 = derivative(spec, state + h * k3)
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return state


def _integrate_batch(spec: SystemSpec, x0: np.ndarray, cfg: IntegratorConfig) -> np.ndarray:
    """Integrate a batch of initial states; returns (n, steps_per_sequence, d).

    Output sample 0 is x0 itself; samples are spaced dt_out apart and the
    first transient_steps of them are dropped.
    """
    n = x0.shape[0]
    total = cfg.transient_steps + cfg.steps_per_sequence
    out = np.empty((n, total, spec.dim), dtype=np.float64)
    state = np.asarray(x0, dtype=np.float64)
    with np.errstate(all="ignore"):
        for t in range(total):
            out[:, t] = state
            if not np.isfinite(state).all():
                raise DivergenceError(t)
            if t < total - 1:
                state = _rk4_output_step(spec, state, cfg.dt_out, cfg.substeps)
    return out[:, cfg.transient_steps:]


def integrate(spec: SystemSpec, x0: np.ndarray, cfg: IntegratorConfig) -> Trajectory:
    """Integrate from one initial state; transients removed."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (spec.dim,):
        raise ValueError(f"x0 has shape {x0.shape}, spec requires ({spec.dim},)")
    data = _integrate_batch(spec, x0[None, :], cfg)[0]
    return Trajectory(data=data, env_id=0)


def _initial_states(spec: SystemSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    # Van der Pol / Lorenz-63 start in the unit cube; Lorenz-96 starts near
    # its x_i = F fixed point. The transient cut absorbs the approach to
    # the attractor in both cases.
    if spec.kind is SystemKind.LORENZ96:
        center = spec.params["forcing"]
        return rng.uniform(center - 1.0, center + 1.0, size=(n, spec.dim))
    return rng.uniform(-1.0, 1.0, size=(n, spec.dim))


def generate_environment(spec: SystemSpec, cfg: IntegratorConfig,
                         env_id: int = 0) -> list[Trajectory]:
    """sequences_per_env trajectories from independent uniform initial states."""
    rng = np.random.default_rng(cfg.rng_seed)
    x0 = _initial_states(spec, cfg.sequences_per_env, rng)
    data = _integrate_batch(spec, x0, cfg)
    return [Trajectory(data=data[i], env_id=env_id) for i in range(cfg.sequences_per_env)]


def train_split_count(n: int) -> int:
    """Training share of n sequences: 7 of the default 10 (70%, at least 1)."""
    if n <= 1:
        return n
    return max(1, round(n * 0.7))


def _pooled_stats(groups: list[np.ndarray]) -> StandardizationStats:
    pooled = np.concatenate(groups, axis=0)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    zero = np.flatnonzero(std == 0.0)
    if zero.size:
        raise DegenerateDataError(
            f"zero variance in dimension(s) {zero.tolist()}; cannot standardize")
    return StandardizationStats(mean=mean, std=std)


def build_continual_dataset(specs: list[SystemSpec], cfg: IntegratorConfig,
                            per_env_standardization: bool = False
                            ) -> list[EnvironmentDataset]:
    """Generate every environment, standardize, and split 7/3 per environment.

    Standardization is joint over all environments by default, mirroring how
    the data for the evaluation protocol is preprocessed; set
    per_env_standardization=True to standardize each environment against its
    own statistics instead.
    """
    if not specs:
        raise ValueError("need at least one environment spec")
    kind, dim = specs[0].kind, specs[0].dim
    if any(s.kind is not kind or s.dim != dim for s in specs):
        raise ValueError("all environment specs must share the same kind and dimension")

    # Independent, reproducible per-environment streams derived from one seed.
    env_seeds = [int(ss.generate_state(1)[0])
                 for ss in np.random.SeedSequence(cfg.rng_seed).spawn(len(specs))]
    raw: list[list[Trajectory]] = []
    for k, (spec, env_seed) in enumerate(zip(specs, env_seeds)):
        env_cfg = dataclasses.replace(cfg, rng_seed=env_seed)
        raw.append(generate_environment(spec, env_cfg, env_id=k))

    if not per_env_standardization:
        joint = _pooled_stats([t.data for env in raw for t in env])

    datasets = []
    for k, trajectories in enumerate(raw):
        stats = _pooled_stats([t.data for t in trajectories]) \
            if per_env_standardization else joint
        scaled = [Trajectory(data=stats.apply(t.data), env_id=k) for t in trajectories]
        n_train = train_split_count(len(scaled))
        datasets.append(EnvironmentDataset(train=scaled[:n_train], test=scaled[n_train:],
                                           standardization=stats))
    return datasets


# ---------------------------------------------------------------------------
# Dataset directory format: manifest.json + env{k}_{train|test}_{n}.f64 files
# (raw little-endian float64, row-major, one (T, d) matrix per sequence).
# ---------------------------------------------------------------------------

def _spec_to_manifest(spec: SystemSpec) -> dict:
    return {name: fstr(value) for name, value in sorted(spec.params.items())}


def _spec_from_manifest(kind: SystemKind, params: dict, dim: int) -> SystemSpec:
    return SystemSpec(kind=kind, params={k: float(v) for k, v in params.items()}, dim=dim)


def save_dataset(out_dir: Path | str, datasets: list[EnvironmentDataset],
                 specs: list[SystemSpec], cfg: IntegratorConfig,
                 provenance: dict | None = None) -> Path:
    """Write a dataset directory; returns the directory path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if len(datasets) != len(specs):
        raise ValueError("one dataset per spec required")

    manifest = {
        "schema_version": DATASET_SCHEMA_VERSION,
        "system": specs[0].kind.value,
        "dim": specs[0].dim,
        "environments": [_spec_to_manifest(s) for s in specs],
        "integrator": {
            "dt_out": fstr(cfg.dt_out),
            "substeps": cfg.substeps,
            "transient_steps": cfg.transient_steps,
            "steps_per_sequence": cfg.steps_per_sequence,
            "sequences_per_env": cfg.sequences_per_env,
            "rng_seed": cfg.rng_seed,
        },
        "standardization": [
            {"mean": fstr_list(ds.standardization.mean),
             "std": fstr_list(ds.standardization.std)}
            for ds in datasets
        ],
        "split": [{"train": len(ds.train), "test": len(ds.test)} for ds in datasets],
    }
    if provenance is not None:
        manifest["provenance"] = provenance
    write_json(out / "manifest.json", manifest)

    for k, ds in enumerate(datasets):
        for split, trajectories in (("train", ds.train), ("test", ds.test)):
            for n, traj in enumerate(trajectories):
                write_f64(out / f"env{k}_{split}_{n}.f64", traj.data)
    return out


def load_dataset(in_dir: Path | str
                 ) -> tuple[list[EnvironmentDataset], list[SystemSpec], IntegratorConfig]:
    in_dir = Path(in_dir)
    manifest = read_json(in_dir / "manifest.json")
    if manifest.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise ConfigError(f"unsupported dataset schema_version "
                          f"{manifest.get('schema_version')}")
    kind = SystemKind(manifest["system"])
    dim = int(manifest["dim"])
    specs = [_spec_from_manifest(kind, p, dim) for p in manifest["environments"]]
    icfg = manifest["integrator"]
    cfg = IntegratorConfig(
        dt_out=float(icfg["dt_out"]), substeps=int(icfg["substeps"]),
        transient_steps=int(icfg["transient_steps"]),
        steps_per_sequence=int(icfg["steps_per_sequence"]),
        sequences_per_env=int(icfg["sequences_per_env"]), rng_seed=int(icfg["rng_seed"]))

    datasets = []
    T = cfg.steps_per_sequence
    for k, spec in enumerate(specs):
        stats_entry = manifest["standardization"][k]
        stats = StandardizationStats(
            mean=np.array([float(v) for v in stats_entry["mean"]]),
            std=np.array([float(v) for v in stats_entry["std"]]))
        split = manifest["split"][k]
        loaded = {}
        for name, count in (("train", split["train"]), ("test", split["test"])):
            loaded[name] = [
                Trajectory(data=read_f64(in_dir / f"env{k}_{name}_{n}.f64", (T, dim))[0],
                           env_id=k)
                for n in range(count)
            ]
        datasets.append(EnvironmentDataset(train=loaded["train"], test=loaded["test"],
                                           standardization=stats))
    return datasets, specs, cfg
