"""
Experiment configuration, CSV output and the simulation study behind the figures.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import _kernels
from .clrt import (CLRTest, ClrtParams, NaiveMeanTest, brownian_approx, gamma1, gamma_n_sequence, mean_increment,
                   path_increments, second_moment_and_sigma)
from .models import ModelError, model_from_dict
from .qbp import QBPTest
from .simulation import SimConfig, simulate_block
from .streams import map_blocks

DEFAULT_MODEL0 = {"kind": "cp_exp", "lambda": 0.6, "mu": 10.0}
DEFAULT_MODEL1 = {"kind": "cp_exp", "lambda": 0.8, "mu": 10.0}
DEFAULT_XI_GRID = [0.5, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
DEFAULT_N_GRID = list(range(1, 31))
DEFAULT_X_GRID = [2, 3, 4, 5, 6, 7, 8]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully specified experiment; every field is echoed into CSV metadata."""

    model0: dict = field(default_factory=lambda: dict(DEFAULT_MODEL0))
    model1: dict = field(default_factory=lambda: dict(DEFAULT_MODEL1))
    xi: float = 3.0
    xi_grid: tuple = tuple(DEFAULT_XI_GRID)
    test: str = "clrt"
    alpha: float = 0.05
    x: Optional[float] = None
    reps: int = 10_000
    truncate_n: int = 1000
    seed: int = 0
    K: int = 15
    gamma_source: str = "gamma20"
    gamma_n_reps: int = 200_000
    fig1_reps: int = 2_000_000
    n_grid: tuple = tuple(DEFAULT_N_GRID)
    x_grid: tuple = tuple(DEFAULT_X_GRID)
    sigma_reps: int = 400
    sigma_length: int = 5000
    converge_reps: int = 100_000
    alphas: tuple = (0.5, 1.0, 2.0)
    grid_step: Optional[float] = None

    def __post_init__(self):
        for name in ("model0", "model1"):
            try:
                model_from_dict(getattr(self, name))
            except (ModelError, AttributeError, TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from None
        _positive(self, "xi")
        _positive(self, "alpha")
        if not self.alpha < 1:
            raise ConfigError("alpha: must be below 1")
        if self.test not in ("qbpt", "clrt", "naive"):
            raise ConfigError(f"test: expected qbpt, clrt or naive, got {self.test!r}")
        if self.gamma_source not in ("gamma1", "gamma20"):
            raise ConfigError(f"gamma_source: expected gamma1 or gamma20, got {self.gamma_source!r}")
        for name in ("reps", "truncate_n", "K", "gamma_n_reps", "fig1_reps", "sigma_reps", "sigma_length",
                     "converge_reps"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name}: expected a positive integer, got {v!r}")
        if self.x is not None:
            _positive(self, "x")
        if self.grid_step is not None:
            _positive(self, "grid_step")
        for name in ("xi_grid", "n_grid", "x_grid", "alphas"):
            vals = getattr(self, name)
            if not len(vals) or any(not float(v) > 0 for v in vals):
                raise ConfigError(f"{name}: expected a nonempty list of positive numbers")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        kw = {}
        for k, v in data.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "ExperimentConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def models(self):
        return model_from_dict(self.model0), model_from_dict(self.model1)


def _positive(cfg, name):
    v = getattr(cfg, name)
    try:
        ok = float(v) > 0 and math.isfinite(float(v))
    except (TypeError, ValueError):
        ok = False
    if not ok:
        raise ConfigError(f"{name}: expected a positive number, got {v!r}")


# ---------------------------------------------------------------------------
# CSV


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".12g")
    return str(v)


def write_csv(fh, header: Sequence[str], rows: Iterable[Sequence], meta: Mapping[str, Any]) -> None:
    """Write ``#`` metadata rows, then the header and the data rows."""
    for k in sorted(meta):
        v = meta[k]
        if isinstance(v, (dict, list, tuple)):
            v = json.dumps(v, sort_keys=True, separators=(",", ":"))
        fh.write(f"# {k}={fmt(v) if not isinstance(v, str) else v}\n")
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])


def csv_string(header, rows, meta) -> str:
    buf = io.StringIO()
    write_csv(buf, header, rows, meta)
    return buf.getvalue()


def base_meta(cfg: ExperimentConfig, **extra) -> dict:
    meta = {"config_hash": cfg.hash, "seed": cfg.seed, "truncate_n": cfg.truncate_n, "K": cfg.K,
            "config": cfg.to_dict(), "series_tol": 1e-12, "quad_tol": 1e-10, "lundberg_tol": 1e-10}
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# thresholds and test runs


def clrt_gamma(cfg: ExperimentConfig, xi: float, n_jobs: int = 1) -> tuple[float, float]:
    """Lundberg coefficient used for the CLRT threshold, with its standard error."""
    m0, m1 = cfg.models
    params = ClrtParams(m0, m1, xi)
    if params.degenerate:
        return math.nan, 0.0
    if cfg.gamma_source == "gamma1":
        return gamma1(params), 0.0
    est = gamma_n_sequence(params, [20], reps=cfg.gamma_n_reps, seed=cfg.seed, n_jobs=n_jobs)
    return float(est.gamma[0]), float(est.se[0])


@dataclass(frozen=True)
class TestOutcomes:
    """Per-path outcomes under one hypothesis."""

    qbpt_reject: np.ndarray
    qbpt_n: np.ndarray
    clrt_reject: np.ndarray
    clrt_n: np.ndarray
    clrt_max: np.ndarray
    path_mean: np.ndarray


def run_tests(cfg: ExperimentConfig, xi: float, hyp: int, qbpt: QBPTest, clrt: CLRTest, reps: Optional[int] = None,
              n_jobs: int = 1) -> TestOutcomes:
    """Simulate stationary paths under hypothesis ``hyp`` and apply both sequential tests."""
    model = cfg.models[hyp]
    reps = cfg.reps if reps is None else reps
    n = cfg.truncate_n
    sim = SimConfig(xi=xi, n=n, init="stationary", grid_step=cfg.grid_step)

    def block(rng, count):
        values, _ = simulate_block(model, sim, rng, count)
        qn, _, qv = qbpt._scan(values)
        Z = path_increments(values, clrt.params_)
        cmax = np.max(np.cumsum(Z, axis=1), axis=1)
        cn = np.empty(count, dtype=np.int64)
        cl = np.empty(count)
        _kernels.first_crossing(np.ascontiguousarray(Z), clrt.threshold_, cn, cl)
        return qv == 1, qn, cn > 0, cn, cmax, values[:, 1:].mean(axis=1)

    out = map_blocks(block, reps, cfg.seed, n_jobs, stream=100 + 17 * hyp + int(round(1000 * xi)) * 1000)
    return TestOutcomes(*(np.concatenate([o[i] for o in out]) for i in range(6)))


def fitted_tests(cfg: ExperimentConfig, xi: float, n_jobs: int = 1):
    m0, m1 = cfg.models
    qbpt = QBPTest(m0, m1, xi=xi, K=cfg.K, alpha=cfg.alpha, x1=cfg.x, truncate_n=cfg.truncate_n).fit()
    g, g_se = clrt_gamma(cfg, xi, n_jobs) if cfg.x is None else (None, 0.0)
    clrt = CLRTest(m0, m1, xi=xi, alpha=cfg.alpha, x=cfg.x, gamma=g, truncate_n=cfg.truncate_n).fit()
    return qbpt, clrt, g_se


def _rate(flags):
    flags = np.asarray(flags, dtype=float)
    p = flags.mean()
    return float(p), float(math.sqrt(max(p * (1 - p), 0.0) / len(flags)))


def _cond_mean(n, flags):
    n = np.asarray(n, dtype=float)[np.asarray(flags, dtype=bool)]
    if n.size == 0:
        return math.nan, math.nan
    return float(n.mean()), float(n.std(ddof=1) / math.sqrt(n.size)) if n.size > 1 else math.nan


@dataclass(frozen=True)
class PerformancePoint:
    xi: float
    alpha_qbpt: tuple
    alpha_clrt: tuple
    power_qbpt: tuple
    power_clrt: tuple
    tau_qbpt: tuple
    tau_clrt: tuple
    agreement_h0: float
    agreement_h1: float
    x_qbpt: float
    x_clrt: float
    gamma_clrt_se: float


def performance_point(cfg: ExperimentConfig, xi: float, n_jobs: int = 1) -> PerformancePoint:
    """Type-I error, power and mean rejection index of both tests at one sampling rate."""
    qbpt, clrt, g_se = fitted_tests(cfg, xi, n_jobs)
    h0 = run_tests(cfg, xi, 0, qbpt, clrt, n_jobs=n_jobs)
    h1 = run_tests(cfg, xi, 1, qbpt, clrt, n_jobs=n_jobs)
    return PerformancePoint(
        xi,
        _rate(h0.qbpt_reject), _rate(h0.clrt_reject), _rate(h1.qbpt_reject), _rate(h1.clrt_reject),
        _cond_mean(h1.qbpt_n, h1.qbpt_reject), _cond_mean(h1.clrt_n, h1.clrt_reject),
        float(np.mean(h0.qbpt_reject == h0.clrt_reject)), float(np.mean(h1.qbpt_reject == h1.clrt_reject)),
        qbpt.threshold_, clrt.threshold_, g_se,
    )


# ---------------------------------------------------------------------------
# figures


def figure1(cfg: ExperimentConfig, n_jobs: int = 1):
    m0, m1 = cfg.models
    params = ClrtParams(m0, m1, cfg.xi)
    est = gamma_n_sequence(params, [int(n) for n in cfg.n_grid], reps=cfg.fig1_reps, seed=cfg.seed, n_jobs=n_jobs)
    rows = [(int(n), g, s) for n, g, s in zip(est.n, est.gamma, est.se)]
    return ["n", "gamma_n", "se"], rows, {"xi": cfg.xi, "reps": cfg.fig1_reps}


def figure2(cfg: ExperimentConfig, n_jobs: int = 1):
    m0, m1 = cfg.models
    xi = cfg.xi
    params = ClrtParams(m0, m1, xi)
    g1 = gamma1(params)
    g20 = gamma_n_sequence(params, [20], reps=cfg.gamma_n_reps, seed=cfg.seed, n_jobs=n_jobs)
    mean0 = mean_increment(params, 0)
    sig = second_moment_and_sigma(params, 0, reps=cfg.sigma_reps, length=cfg.sigma_length, seed=cfg.seed,
                                  n_jobs=n_jobs, m=mean0)
    qbpt = QBPTest(m0, m1, xi=xi, K=cfg.K, x1=1.0, truncate_n=cfg.truncate_n).fit()
    clrt = CLRTest(m0, m1, xi=xi, x=1.0, truncate_n=cfg.truncate_n).fit()
    h0 = run_tests(cfg, xi, 0, qbpt, clrt, n_jobs=n_jobs)
    rows = []
    for x in cfg.x_grid:
        x = float(x)
        rows.append((x, float(np.mean(h0.clrt_max >= x)), math.exp(-g1 * x), math.exp(-float(g20.gamma[0]) * x),
                     float(brownian_approx(mean0, sig.sigma2, x))))
    meta = {"xi": xi, "reps": cfg.reps, "gamma1": g1, "gamma20": float(g20.gamma[0]), "gamma20_se": float(g20.se[0]),
            "m0": mean0, "sigma0sq": sig.sigma2, "sigma0sq_se": sig.sigma2_se}
    return ["x", "alpha_sim", "alpha_g1", "alpha_g20", "alpha_bm"], rows, meta


def figures345(cfg: ExperimentConfig, n_jobs: int = 1):
    points = [performance_point(cfg, float(xi), n_jobs) for xi in cfg.xi_grid]
    fig3 = (["xi", "qbpt", "clrt"], [(p.xi, p.alpha_qbpt[0], p.alpha_clrt[0]) for p in points])
    fig4 = (["xi", "qbpt", "clrt"], [(p.xi, p.power_qbpt[0], p.power_clrt[0]) for p in points])
    fig5 = (["xi", "tau_qbpt", "tau_clrt"], [(p.xi, p.tau_qbpt[0], p.tau_clrt[0]) for p in points])
    extra = {f"xi={fmt(p.xi)}": {"x_qbpt": p.x_qbpt, "x_clrt": p.x_clrt, "agree_h0": p.agreement_h0,
                                  "agree_h1": p.agreement_h1} for p in points}
    return fig3, fig4, fig5, {"reps": cfg.reps, "thresholds": extra}, points
