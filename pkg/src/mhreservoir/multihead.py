"""Competitive multi-head learner: L readout heads over one fixed reservoir.

Per training sequence, all heads are scored by one-step-ahead MSE. A jump in
a previously active head's MSE beyond a ratio threshold signals a new
environment, which activates fresh (never-before-active) heads; otherwise
the lowest-MSE heads activate. Only active heads receive the incremental
ridge update, so the remaining heads are untouched by construction and
cannot forget what they learned.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IntegrityError
from .federated import HeadAccumulator
from .ioutil import fstr, read_f64, read_json, write_f64, write_json
from .reservoir import (ReservoirConfig, ReservoirWeights, embed, init_reservoir,
                        load_reservoir, save_reservoir)

logger = logging.getLogger(__name__)

LEARNER_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class LearnerConfig:
    num_heads: int = 10
    num_active: int = 1
    drift_threshold: float = 2.0
    cue_len: int = 10
    test_init_len: int = 5
    test_select_len: int = 5
    lam: float = 1e-6
    seed: int = 0
    # Heads that never trained keep W_o = 0; by default they are not
    # considered when picking a prediction head at test time.
    allow_untrained_at_test: bool = False

    def __post_init__(self):
        if self.num_heads < 1:
            raise ValueError("need at least one head")
        if not 1 <= self.num_active <= self.num_heads:
            raise ValueError("num_active must be in [1, num_heads]")
        if not self.drift_threshold > 1:
            raise ValueError("drift_threshold must exceed 1")
        if self.cue_len < 1 or self.test_init_len < 1 or self.test_select_len < 1:
            raise ValueError("cue and test window lengths must be positive")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")


@dataclass(frozen=True)
class TrainStepReport:
    drift: bool
    active: tuple[int, ...]
    mse: np.ndarray  # per-head MSE scored before the update


class MultiHeadLearner:
    """Algorithm state: reservoir weights, L accumulators, activation sets."""

    def __init__(self, rcfg: ReservoirConfig, lcfg: LearnerConfig, d: int,
                 weights: ReservoirWeights | None = None):
        self.rcfg = rcfg
        self.cfg = lcfg
        self.d = d
        self.weights = weights if weights is not None else init_reservoir(rcfg, d)
        self.heads = [HeadAccumulator(rcfg.size, d, lcfg.lam)
                      for _ in range(lcfg.num_heads)]
        self.mse_last = np.full(lcfg.num_heads, np.nan)
        self.active: set[int] = set()
        self.prev_active: set[int] = set()
        self.never_active: set[int] = set(range(lcfg.num_heads))
        self.sequences_seen = 0
        self._rng = np.random.default_rng(lcfg.seed)

    # -- scoring ------------------------------------------------------------

    def _regression_pairs(self, seq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Teacher-forced (states, next-step targets) with the cue excluded.

        Returns H = [h_c .. h_{T-1}] and X = [x_{c+1} .. x_T] for c = cue_len;
        the first cue_len states only wash in the hidden state.
        """
        seq = np.asarray(seq, dtype=np.float64)
        c = self.cfg.cue_len
        if seq.ndim != 2 or seq.shape[0] < c + 2:
            raise ValueError(f"sequence must have at least cue_len + 2 = {c + 2} steps, "
                             f"got shape {seq.shape}")
        states = embed(self.weights, seq)
        return states[c - 1:-1], seq[c:]

    @staticmethod
    def _head_mse(H: np.ndarray, X: np.ndarray, W_o: np.ndarray) -> float:
        err = H @ W_o.T - X
        return float(np.mean(err * err))

    def _score_from_pairs(self, H: np.ndarray, X: np.ndarray) -> np.ndarray:
        return np.array([self._head_mse(H, X, head.W_o) for head in self.heads])

    def score_heads(self, seq: np.ndarray) -> np.ndarray:
        """One-step-ahead MSE of every head on a sequence (no update).

        Squared errors are averaged over both prediction steps and data
        dimensions, so scores are comparable across systems of different
        dimension.
        """
        return self._score_from_pairs(*self._regression_pairs(seq))

    # -- Algorithm steps ----------------------------------------------------

    def detect_drift(self, mse: np.ndarray) -> bool:
        """True iff a previously active head's MSE jumped past the threshold."""
        theta = self.cfg.drift_threshold
        for l in self.prev_active:
            last = self.mse_last[l]
            if not np.isfinite(last):
                continue
            ratio = mse[l] / last if last > 0 else (math.inf if mse[l] > 0 else 0.0)
            if ratio > theta:
                return True
        return False

    def select_active(self, mse: np.ndarray, drift: bool) -> set[int]:
        """Active heads for this sequence.

        On drift: a seeded uniform draw from the never-active pool, topping
        up from the lowest-MSE heads if the pool runs short. Otherwise: the
        lowest-MSE heads overall, ties broken toward lower indices.
        """
        k = self.cfg.num_active
        by_mse = [int(l) for l in np.argsort(mse, kind="stable")]
        if not drift:
            return set(by_mse[:k])
        pool = sorted(self.never_active)
        if len(pool) >= k:
            picked = self._rng.choice(len(pool), size=k, replace=False)
            return {pool[i] for i in picked}
        logger.warning(
            "head capacity exhausted: %d never-active head(s) left but %d needed; "
            "reusing lowest-MSE heads", len(pool), k)
        chosen = set(pool)
        for l in by_mse:
            if len(chosen) >= k:
                break
            chosen.add(l)
        return chosen

    def train_on_sequence(self, seq: np.ndarray) -> TrainStepReport:
        """Score, detect drift, select active heads, and update them."""
        H, X = self._regression_pairs(seq)
        mse = self._score_from_pairs(H, X)
        drift = self.detect_drift(mse)
        active = self.select_active(mse, drift)
        for l in sorted(active):
            self.heads[l].accumulate(H, X)
            self.heads[l].solve()
        self.mse_last = mse.copy()
        self.prev_active = set(active)
        self.never_active -= active
        self.active = set(active)
        self.sequences_seen += 1
        return TrainStepReport(drift=drift, active=tuple(sorted(active)), mse=mse)

    # -- evaluation ---------------------------------------------------------

    def select_head_for_test(self, prefix: np.ndarray) -> int:
        """Pick the prediction head from a short cue.

        The first test_init_len steps only initialize the hidden state; the
        following test_select_len steps are scored one-step-ahead and the
        best head wins (ties toward lower index).
        """
        prefix = np.asarray(prefix, dtype=np.float64)
        want = self.cfg.test_init_len + self.cfg.test_select_len
        if prefix.shape[0] != want:
            raise ValueError(f"cue must have test_init_len + test_select_len = {want} "
                             f"steps, got {prefix.shape[0]}")
        eligible = [l for l in range(self.cfg.num_heads)
                    if self.cfg.allow_untrained_at_test or l not in self.never_active]
        if not eligible:
            raise ValueError("no trained heads available for test-time selection")
        states = embed(self.weights, prefix)
        i = self.cfg.test_init_len
        H = states[i - 1:-1]
        X = prefix[i:]
        scores = np.full(self.cfg.num_heads, np.inf)
        for l in eligible:
            scores[l] = self._head_mse(H, X, self.heads[l].W_o)
        return int(np.argmin(scores))

    def evaluate_sequence(self, seq: np.ndarray, head: int) -> float:
        """Teacher-forced one-step-ahead MSE of one head, cue excluded."""
        H, X = self._regression_pairs(seq)
        return self._head_mse(H, X, self.heads[head].W_o)

    def memory_footprint(self) -> int:
        """Bytes of float64 head storage: 8 L (M^2 + M d)."""
        L, M = self.cfg.num_heads, self.rcfg.size
        if self.d < 1:
            raise ValueError("input dimension must be at least 1")
        return 8 * (L * M * M + L * M * self.d)


def new_learner(rcfg: ReservoirConfig, lcfg: LearnerConfig, d: int) -> MultiHeadLearner:
    return MultiHeadLearner(rcfg, lcfg, d)


# ---------------------------------------------------------------------------
# Checkpoint directory: learner.json + reservoir.json + head{l}.f64 files
# (A then B per head, raw little-endian float64, row-major). Readouts are
# re-solved from (A, B) on load; the reservoir regenerates from its seed.
# ---------------------------------------------------------------------------

def save_checkpoint(learner: MultiHeadLearner, out_dir: Path | str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_reservoir(out / "reservoir.json", learner.rcfg, learner.d)
    cfg = learner.cfg
    write_json(out / "learner.json", {
        "schema_version": LEARNER_SCHEMA_VERSION,
        "config": {
            "num_heads": cfg.num_heads,
            "num_active": cfg.num_active,
            "drift_threshold": fstr(cfg.drift_threshold),
            "cue_len": cfg.cue_len,
            "test_init_len": cfg.test_init_len,
            "test_select_len": cfg.test_select_len,
            "lambda": fstr(cfg.lam),
            "seed": cfg.seed,
            "allow_untrained_at_test": cfg.allow_untrained_at_test,
        },
        "d": learner.d,
        "sequences_seen": learner.sequences_seen,
        "active": sorted(learner.active),
        "prev_active": sorted(learner.prev_active),
        "never_active": sorted(learner.never_active),
        "mse_last": [fstr(v) for v in learner.mse_last],
        "update_counts": [h.update_count for h in learner.heads],
        "rng_state": learner._rng.bit_generator.state,
    })
    for l, head in enumerate(learner.heads):
        write_f64(out / f"head{l}.f64", head.A, head.B)
    return out


def load_checkpoint(in_dir: Path | str) -> MultiHeadLearner:
    in_dir = Path(in_dir)
    obj = read_json(in_dir / "learner.json")
    if obj.get("schema_version") != LEARNER_SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported learner schema_version {obj.get('schema_version')}; "
            f"regenerate the checkpoint with this version of the tool")
    rcfg, d_res = load_reservoir(in_dir / "reservoir.json")
    c = obj["config"]
    lcfg = LearnerConfig(
        num_heads=int(c["num_heads"]), num_active=int(c["num_active"]),
        drift_threshold=float(c["drift_threshold"]), cue_len=int(c["cue_len"]),
        test_init_len=int(c["test_init_len"]), test_select_len=int(c["test_select_len"]),
        lam=float(c["lambda"]), seed=int(c["seed"]),
        allow_untrained_at_test=bool(c["allow_untrained_at_test"]))
    d = int(obj["d"])
    if d != d_res:
        raise IntegrityError(f"learner d={d} disagrees with reservoir d={d_res}")

    learner = MultiHeadLearner(rcfg, lcfg, d)
    learner.sequences_seen = int(obj["sequences_seen"])
    learner.active = {int(l) for l in obj["active"]}
    learner.prev_active = {int(l) for l in obj["prev_active"]}
    learner.never_active = {int(l) for l in obj["never_active"]}
    learner.mse_last = np.array([float(v) for v in obj["mse_last"]])
    learner._rng.bit_generator.state = obj["rng_state"]
    M = rcfg.size
    for l, head in enumerate(learner.heads):
        A, B = read_f64(in_dir / f"head{l}.f64", (M, M), (M, d))
        head.A = A
        head.B = B
        head.update_count = int(obj["update_counts"][l])
        if head.update_count > 0:
            head.solve()
    return learner
