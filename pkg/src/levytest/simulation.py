"""
Workload sample paths observed at Poisson epochs.

Compound Poisson input is simulated exactly (event driven), so zero
observations are exact.  Gamma-subordinator input uses a Lindley recursion on
a fine time grid; the floor at zero gives an exact atom under the
discretisation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import _kernels
from .models import CompoundPoissonExp, GammaSubordinator, LevyInputModel, ModelError
from .streams import map_blocks

Init = Union[str, float]

#: Default warm-up time for stationary starts without an exact sampler.
DEFAULT_WARMUP = 20.0


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``init`` is ``"empty"``, ``"stationary"`` or a fixed nonnegative initial
    workload.  ``grid_step`` only matters for Gamma input and defaults to
    ``1e-3 / xi``.
    """

    xi: float
    n: int
    init: Init = "stationary"
    grid_step: Optional[float] = None
    warmup: float = DEFAULT_WARMUP
    seed: int = 0

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError(f"xi must be positive, got {self.xi!r}")
        if int(self.n) < 1:
            raise ValueError(f"n must be >= 1, got {self.n!r}")
        if self.grid_step is not None and not self.grid_step > 0:
            raise ValueError(f"grid_step must be positive, got {self.grid_step!r}")
        if isinstance(self.init, str):
            if self.init not in ("empty", "stationary"):
                raise ValueError(f"init must be 'empty', 'stationary' or a number, got {self.init!r}")
        elif not float(self.init) >= 0:
            raise ValueError("a fixed initial workload must be nonnegative")

    @property
    def step(self) -> float:
        return self.grid_step if self.grid_step is not None else 1e-3 / self.xi


@dataclass
class SamplePath:
    """Workload ``V_0..V_n`` at epochs ``0 = S_0 < S_1 < ... < S_n``."""

    values: np.ndarray
    epochs: np.ndarray
    model: dict = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def n(self) -> int:
        return len(self.values) - 1

    @property
    def zero_indicators(self) -> np.ndarray:
        """``Y_1..Y_n`` with ``Y_i = 1{V_i == 0}``."""
        return self.values[1:] == 0.0

    def to_csv(self, fh=None) -> Optional[str]:
        """Write ``index,epoch,value,is_zero`` rows (index 0 is the initial state)."""
        own = fh is None
        buf = io.StringIO() if own else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "epoch", "value", "is_zero"])
        for i, (t, v) in enumerate(zip(self.epochs, self.values)):
            w.writerow([i, repr(float(t)), repr(float(v)), int(v == 0.0)])
        return buf.getvalue() if own else None

    @classmethod
    def from_csv(cls, fh) -> "SamplePath":
        """Parse the format written by :meth:`to_csv`; ``#`` lines are skipped."""
        rows = [line for line in fh if line.strip() and not line.lstrip().startswith("#")]
        reader = csv.reader(rows)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "epoch", "value", "is_zero"]:
            raise ValueError("line 1: expected header 'index,epoch,value,is_zero'")
        epochs, values = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                if len(row) != 4:
                    raise ValueError(f"expected 4 fields, got {len(row)}")
                idx, t, v, z = int(row[0]), float(row[1]), float(row[2]), int(row[3])
                if idx != len(values):
                    raise ValueError(f"index {idx} out of sequence")
                if v < 0 or z not in (0, 1) or (z == 1) != (v == 0.0):
                    raise ValueError("inconsistent value/is_zero pair")
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            epochs.append(t)
            values.append(v)
        if not values:
            raise ValueError("no observations in CSV")
        return cls(np.asarray(values), np.asarray(epochs))


@dataclass(frozen=True)
class QbpSample:
    """Completed quasi busy periods and the number of leading samples discarded."""

    durations: np.ndarray
    offset: int

    def __len__(self):
        return len(self.durations)


# ---------------------------------------------------------------------------


def _stationary_draws(model: LevyInputModel, rng: np.random.Generator, count: int, warmup: float,
                      step: float) -> np.ndarray:
    if not model.is_stable:
        raise ModelError("a stationary initial workload requires a stable model")
    if isinstance(model, CompoundPoissonExp):
        busy = rng.random(count) < model.rho
        sizes = rng.exponential(1.0 / (model.mu - model.lam), count) if model.lam > 0 else np.zeros(count)
        return np.where(busy, sizes, 0.0)
    if isinstance(model, GammaSubordinator):
        return _kernels.gamma_warmup(rng, model.beta, model.gamma, step, warmup, count)
    raise ModelError(f"no simulator for model kind {model.kind!r}")


def sample_stationary_initial(model: LevyInputModel, seed=None, warmup: float = DEFAULT_WARMUP,
                              grid_step: float = 1e-3) -> float:
    """One draw from the stationary workload law.

    Compound Poisson with Exp(mu) jobs: ``0`` with probability ``1 - rho``,
    otherwise Exp(``mu - lam``).  Other models run from empty for ``warmup``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return float(_stationary_draws(model, rng, 1, warmup, grid_step)[0])


def _initial(model, config: SimConfig, rng, count):
    if config.init == "empty":
        return np.zeros(count)
    if config.init == "stationary":
        return _stationary_draws(model, rng, count, config.warmup, config.step)
    return np.full(count, float(config.init))


def _run_kernel(model, config: SimConfig, rng, v0, n):
    count = len(v0)
    values = np.empty((count, n + 1))
    epochs = np.empty((count, n + 1))
    if isinstance(model, CompoundPoissonExp):
        _kernels.cp_paths(rng, model.lam, model.mu, config.xi, v0, values, epochs)
    elif isinstance(model, GammaSubordinator):
        _kernels.gamma_paths(rng, model.beta, model.gamma, config.xi, config.step, v0, values, epochs)
    else:
        raise ModelError(f"no simulator for model kind {model.kind!r}")
    return values, epochs


def simulate_block(model: LevyInputModel, config: SimConfig, rng: np.random.Generator,
                   count: int, n: Optional[int] = None):
    """Simulate ``count`` independent paths; returns ``(values, epochs)`` of shape ``(count, n+1)``."""
    n = config.n if n is None else n
    v0 = _initial(model, config, rng, count)
    return _run_kernel(model, config, rng, v0, n)


def simulate_path(model: LevyInputModel, config: SimConfig) -> SamplePath:
    """Simulate one sample path; identical ``(model, config)`` gives identical output."""
    rng = np.random.default_rng(config.seed)
    values, epochs = simulate_block(model, config, rng, 1)
    return SamplePath(values[0], epochs[0], model=model.to_dict(), seed=config.seed)


def simulate_paths(model: LevyInputModel, config: SimConfig, reps: int, n_jobs: int = 1):
    """``reps`` replications as arrays ``(values, epochs)``; independent of ``n_jobs``."""
    blocks = map_blocks(lambda rng, c: simulate_block(model, config, rng, c), reps, config.seed, n_jobs)
    return np.concatenate([b[0] for b in blocks]), np.concatenate([b[1] for b in blocks])


def extract_qbps(path) -> QbpSample:
    """Quasi busy periods of a path (a :class:`SamplePath` or the array ``Y_1..Y_n``).

    Samples up to and including the first zero are discarded; a trailing
    incomplete period is dropped.  Without any zero the sample is empty and
    ``offset = n``.
    """
    y = path.zero_indicators if isinstance(path, SamplePath) else np.asarray(path, dtype=bool)
    idx = np.flatnonzero(y) + 1
    if idx.size == 0:
        return QbpSample(np.empty(0, dtype=np.int64), int(y.size))
    return QbpSample(np.diff(idx).astype(np.int64), int(idx[0]))


def mc_zero_probs(model: LevyInputModel, xi: float, kmax: int, reps: int, seed: int = 0,
                  n_jobs: int = 1):
    """Estimates of ``P(V_k = 0 | V_0 = 0)`` for ``k = 1..kmax`` with binomial SEs."""
    config = SimConfig(xi=xi, n=kmax, init="empty", seed=seed)

    def block(rng, count):
        values, _ = simulate_block(model, config, rng, count)
        return (values[:, 1:] == 0.0).sum(axis=0)

    hits = np.sum(map_blocks(block, reps, seed, n_jobs), axis=0)
    est = hits / reps
    return est, np.sqrt(est * (1 - est) / reps)


def mc_zero_prob(model: LevyInputModel, xi: float, k: int, reps: int, seed: int = 0, n_jobs: int = 1):
    """Monte Carlo ``(estimate, standard error)`` of ``P(V_k = 0 | V_0 = 0)``."""
    est, se = mc_zero_probs(model, xi, k, reps, seed, n_jobs)
    return float(est[-1]), float(se[-1])


def mc_qbp_histogram(model: LevyInputModel, xi: float, K: int, reps: int, seed: int = 0,
                     n_jobs: int = 1):
    """Empirical law of the first return ``R`` to zero from ``V_0 = 0``.

    Returns ``(freq, se)`` of length ``K`` where entries ``0..K-2`` are
    ``P(R = k)`` for ``k = 1..K-1`` and the last entry is ``P(R >= K)``.
    """
    config = SimConfig(xi=xi, n=K - 1, init="empty", seed=seed)

    def block(rng, count):
        values, _ = simulate_block(model, config, rng, count)
        z = values[:, 1:] == 0.0
        first = np.where(z.any(axis=1), z.argmax(axis=1), K - 1)
        return np.bincount(first, minlength=K)

    counts = np.sum(map_blocks(block, reps, seed, n_jobs), axis=0)
    freq = counts / reps
    return freq, np.sqrt(freq * (1 - freq) / reps)
