"""Fixed-weight echo-state reservoir: init, sequence embedding, ridge readout.

The recurrent matrix W_h is sparse-random and rescaled to an exact target
spectral radius; the input matrix W_i is dense uniform. Both are fixed at
construction and never trained. Only linear readouts W_o are fitted, in
closed form via ridge regression.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import ConfigError, NumericalError
from .ioutil import fstr, read_json, write_json

RESERVOIR_SCHEMA_VERSION = 1

# Arnoldi iteration settings for the spectral-radius estimate.
_EIG_TOL = 1e-9
_EIG_MAXITER = 10_000
_DENSE_EIG_CUTOFF = 8  # ARPACK needs k < N-1; go dense below this size
_INIT_ATTEMPTS = 10


@dataclass(frozen=True)
class ReservoirConfig:
    size: int = 1000
    spectral_radius: float = 0.6
    sparsity: float = 0.01
    input_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("reservoir size must be at least 1")
        if self.spectral_radius <= 0:
            raise ValueError("spectral_radius must be positive")
        if not 0 < self.sparsity <= 1:
            raise ValueError("sparsity must be in (0, 1]")


@dataclass(frozen=True)
class ReservoirWeights:
    """Fixed weights; arrays are marked read-only at construction."""

    W_h: scipy.sparse.csr_matrix  # (M, M)
    W_i: np.ndarray               # (M, d)
    d: int

    @property
    def size(self) -> int:
        return self.W_h.shape[0]


def _spectral_radius(W: scipy.sparse.csr_matrix, v0: np.ndarray) -> float:
    """Largest |eigenvalue| via sparse Arnoldi iteration; dense fallback.

    v0 is supplied by the caller so the estimate (and therefore reservoir
    construction) is fully deterministic.
    """
    n = W.shape[0]
    if n < _DENSE_EIG_CUTOFF:
        return float(np.abs(np.linalg.eigvals(W.toarray())).max())
    try:
        vals = scipy.sparse.linalg.eigs(W, k=1, which="LM", v0=v0,
                                        tol=_EIG_TOL, maxiter=_EIG_MAXITER,
                                        return_eigenvectors=False)
        rho = float(np.abs(vals[0]))
    except (scipy.sparse.linalg.ArpackNoConvergence, scipy.sparse.linalg.ArpackError):
        rho = float(np.abs(np.linalg.eigvals(W.toarray())).max())
    return rho


def init_reservoir(cfg: ReservoirConfig, d: int) -> ReservoirWeights:
    """Sample fixed reservoir weights from cfg.seed.

    W_h entries are nonzero independently with probability cfg.sparsity,
    drawn uniform on [-1, 1], then the matrix is rescaled so its spectral
    radius equals cfg.spectral_radius. W_i is dense uniform on
    [-input_scale, input_scale]. Deterministic: same (cfg, d) gives
    bit-identical weights.
    """
    if d < 1:
        raise ValueError("input dimension d must be at least 1")
    M = cfg.size
    rng = np.random.default_rng(cfg.seed)

    W_h = None
    for _ in range(_INIT_ATTEMPTS):
        mask = rng.random((M, M)) < cfg.sparsity
        values = rng.uniform(-1.0, 1.0, size=(M, M))
        candidate = scipy.sparse.csr_matrix(np.where(mask, values, 0.0))
        v0 = rng.standard_normal(M)
        rho = _spectral_radius(candidate, v0)
        if np.isfinite(rho) and rho > 1e-12:
            W_h = candidate * (cfg.spectral_radius / rho)
            break
    if W_h is None:
        raise NumericalError(
            f"could not sample a matrix with nonzero spectral radius "
            f"in {_INIT_ATTEMPTS} attempts (size={M}, sparsity={cfg.sparsity})")

    W_i = rng.uniform(-cfg.input_scale, cfg.input_scale, size=(M, d))
    for arr in (W_h.data, W_h.indices, W_h.indptr, W_i):
        arr.flags.writeable = False
    return ReservoirWeights(W_h=W_h, W_i=W_i, d=d)


def step(w: ReservoirWeights, h: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One recurrence step: tanh(W_h h + W_i x)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (w.d,):
        raise ValueError(f"input has shape {x.shape}, expected ({w.d},)")
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (w.size,):
        raise ValueError(f"hidden state has shape {h.shape}, expected ({w.size},)")
    return np.tanh(w.W_h @ h + w.W_i @ x)


def embed(w: ReservoirWeights, seq: np.ndarray, h0: np.ndarray | None = None) -> np.ndarray:
    """Hidden states h_1..h_T from iterating `step` over the sequence rows.

    h0 defaults to the zero vector. Returns a (T, M) array; row t is the
    state after consuming seq[t].
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or (seq.shape[0] > 0 and seq.shape[1] != w.d):
        raise ValueError(f"sequence has shape {seq.shape}, expected (T, {w.d})")
    T = seq.shape[0]
    h = np.zeros(w.size) if h0 is None else np.asarray(h0, dtype=np.float64)
    states = np.empty((T, w.size), dtype=np.float64)
    inputs = seq @ w.W_i.T  # (T, M), one BLAS call for all input projections
    for t in range(T):
        h = np.tanh(w.W_h @ h + inputs[t])
        states[t] = h
    return states


def solve_regularized(A: np.ndarray, B: np.ndarray, lam: float) -> np.ndarray:
    """Solve (A + lam I) W^T = B for W (the readout, shape (d, M)).

    Cholesky on the shifted Gram matrix, falling back to a pivoted solve.
    """
    G = A + lam * np.eye(A.shape[0])
    try:
        c, low = scipy.linalg.cho_factor(G, check_finite=False)
        sol = scipy.linalg.cho_solve((c, low), B, check_finite=False)
    except scipy.linalg.LinAlgError:
        try:
            sol = np.linalg.solve(G, B)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"regularized system is singular (lambda={lam!r}); "
                f"increase lambda") from exc
    return sol.T


def ridge_solve(H: np.ndarray, X: np.ndarray, lam: float) -> np.ndarray:
    """Batch ridge regression: W_o = ((H^T H + lam I)^-1 H^T X)^T."""
    H = np.asarray(H, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if H.ndim != 2 or X.ndim != 2 or H.shape[0] != X.shape[0]:
        raise ValueError(f"incompatible shapes H{H.shape}, X{X.shape}")
    n, M = H.shape
    if n < 1:
        raise ValueError("need at least one sample row")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0 and n < M:
        raise ValueError("lambda must be positive when rows < reservoir size")
    return solve_regularized(H.T @ H, H.T @ X, lam)


def save_reservoir(path: Path | str, cfg: ReservoirConfig, d: int) -> None:
    """Reservoir checkpoint: config and seed only; weights regenerate from seed."""
    write_json(Path(path), {
        "schema_version": RESERVOIR_SCHEMA_VERSION,
        "size": cfg.size,
        "spectral_radius": fstr(cfg.spectral_radius),
        "sparsity": fstr(cfg.sparsity),
        "input_scale": fstr(cfg.input_scale),
        "seed": cfg.seed,
        "d": d,
    })


def load_reservoir(path: Path | str) -> tuple[ReservoirConfig, int]:
    obj = read_json(Path(path))
    if obj.get("schema_version") != RESERVOIR_SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported reservoir schema_version {obj.get('schema_version')}; "
            f"regenerate the checkpoint with this version of the tool")
    cfg = ReservoirConfig(size=int(obj["size"]),
                          spectral_radius=float(obj["spectral_radius"]),
                          sparsity=float(obj["sparsity"]),
                          input_scale=float(obj["input_scale"]),
                          seed=int(obj["seed"]))
    return cfg, int(obj["d"])
