"""
Conditional likelihood-ratio test (CLRT) on zero indicators.

Given the previous observation ``V_{i-1} = v``, the next one is zero with
probability ``(xi/theta) exp(-theta v)`` where ``theta = psi(xi)``.  The CLRT
sums the log Bernoulli likelihood ratios

    Z_i = w1 + w2 Y_i V_{i-1} + (1 - Y_i) g(V_{i-1}),

with ``w1 = log(theta0/theta1)``, ``w2 = theta0 - theta1`` and
``g(v) = log((theta1 - xi e^{-theta1 v}) / (theta0 - xi e^{-theta0 v}))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import integrate, interpolate, optimize
from sklearn.base import BaseEstimator

from . import _kernels
from .models import CompoundPoissonExp, LevyInputModel, ModelError, psi, stationary_lst, stationary_v_exp
from .simulation import SimConfig, _stationary_draws, simulate_block
from .streams import map_blocks
from .validation import check_observations, check_positive, check_reps

#: Largest number of g-series terms tried before giving up.
J_MAX = 200_000
SERIES_TOL = 1e-12
DEFAULT_LAGS = 50


@dataclass(frozen=True)
class ClrtParams:
    """Hypothesis pair at sampling rate ``xi`` with the derived CLRT constants."""

    model0: LevyInputModel
    model1: LevyInputModel
    xi: float
    lags: int = DEFAULT_LAGS
    theta0: float = field(init=False)
    theta1: float = field(init=False)

    def __post_init__(self):
        check_positive("xi", self.xi)
        object.__setattr__(self, "theta0", psi(self.model0, self.xi))
        object.__setattr__(self, "theta1", psi(self.model1, self.xi))
        if not (self.theta0 > self.xi and self.theta1 > self.xi):
            raise ModelError("CLRT needs theta_k > xi for both hypotheses")

    @property
    def w1(self) -> float:
        return math.log(self.theta0 / self.theta1)

    @property
    def w2(self) -> float:
        return self.theta0 - self.theta1

    @property
    def degenerate(self) -> bool:
        return self.theta0 == self.theta1

    def theta(self, k: int) -> float:
        return (self.theta0, self.theta1)[_hyp(k)]

    def model(self, k: int) -> LevyInputModel:
        return (self.model0, self.model1)[_hyp(k)]


def _hyp(k):
    if k not in (0, 1):
        raise ValueError(f"hypothesis index must be 0 or 1, got {k!r}")
    return k


def zero_prob(v, theta: float, xi: float):
    """``P(V_i = 0 | V_{i-1} = v) = (xi/theta) exp(-theta v)``."""
    if not theta > xi > 0:
        raise ValueError("need theta > xi > 0")
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("workload must be nonnegative")
    out = xi / theta * np.exp(-theta * v)
    return out if out.ndim else float(out)


def g_func(v, params: ClrtParams):
    """``g(v)``, written with ``log1p`` so it stays accurate for large ``v``."""
    v = np.asarray(v, dtype=float)
    a0, a1 = params.xi / params.theta0, params.xi / params.theta1
    out = -params.w1 + np.log1p(-a1 * np.exp(-params.theta1 * v)) - np.log1p(-a0 * np.exp(-params.theta0 * v))
    return out if out.ndim else float(out)


def clrt_increment(v_prev, y, params: ClrtParams):
    """Log-likelihood increment ``Z`` for previous workload ``v_prev`` and indicator ``y``."""
    v = np.asarray(v_prev, dtype=float)
    y = np.asarray(y, dtype=bool)
    if params.degenerate:
        out = np.zeros(np.broadcast(v, y).shape)
    else:
        out = np.where(y, params.w1 + params.w2 * v, params.w1 + g_func(v, params))
    return out if out.ndim else float(out)


def clrt_increment_direct(v_prev, y, params: ClrtParams):
    """Same increment as the log of the two Bernoulli likelihoods (reference route)."""
    p0 = zero_prob(v_prev, params.theta0, params.xi)
    p1 = zero_prob(v_prev, params.theta1, params.xi)
    out = np.where(np.asarray(y, dtype=bool), np.log(p1) - np.log(p0), np.log1p(-np.asarray(p1)) - np.log1p(-np.asarray(p0)))
    return out if out.ndim else float(out)


def path_increments(values, params: ClrtParams) -> np.ndarray:
    """Increments ``Z_1..Z_n`` for rows of workload observations ``V_0..V_n``."""
    values = np.atleast_2d(values)
    return clrt_increment(values[:, :-1], values[:, 1:] == 0.0, params)


@dataclass
class ClrtRun:
    """State of a sequential CLRT; ``N`` is set once ``ell`` reaches ``x``."""

    x: float
    ell: float = 0.0
    n: int = 0
    stopped: bool = False
    N: Optional[int] = None

    def update(self, increment: float) -> bool:
        if self.stopped:
            return True
        self.ell += increment
        self.n += 1
        if self.ell >= self.x:
            self.stopped, self.N = True, self.n
        return self.stopped


def sequential_clrt(pairs: Iterable, params: ClrtParams, x: float) -> ClrtRun:
    """Run the CLRT on ``(V_{i-1}, Y_i)`` pairs until ``ell_n >= x`` or the stream ends."""
    check_positive("x", x)
    run = ClrtRun(float(x))
    for v, y in pairs:
        if run.update(clrt_increment(float(v), bool(y), params)):
            break
    return run


# ---------------------------------------------------------------------------
# performance constants


@dataclass(frozen=True)
class SeriesValue:
    value: float
    tail_bound: float
    terms: int


def _series_terms(q: float, tol: float) -> int:
    # sum_{j>J} q^j / j <= q^{J+1} / ((J+1)(1-q))
    if q == 0:
        return 1
    J = 1
    while q ** (J + 1) / ((J + 1) * (1 - q)) > tol:
        J *= 2
        if J > J_MAX:
            raise ArithmeticError(f"g-series does not reach tolerance {tol} within {J_MAX} terms")
    lo, hi = J // 2, J
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if q ** (mid + 1) / ((mid + 1) * (1 - q)) > tol:
            lo = mid
        else:
            hi = mid
    return hi


def g_lst_series(params: ClrtParams, model: LevyInputModel, shift: float = 0.0, tol: float = SERIES_TOL) -> SeriesValue:
    """``E[g(V) exp(-shift V)]`` under the stationary law of ``model`` via the Taylor series.

    ``g(v) = -w1 + sum_j (a0^j e^{-j theta0 v} - a1^j e^{-j theta1 v}) / j`` with
    ``a_k = xi/theta_k``.
    """
    a0, a1 = params.xi / params.theta0, params.xi / params.theta1
    q = max(a0, a1)
    J = _series_terms(q, tol / 2)
    j = np.arange(1, J + 1, dtype=float)
    t0 = np.exp(j * math.log(a0)) / j * stationary_lst(model, j * params.theta0 + shift)
    t1 = np.exp(j * math.log(a1)) / j * stationary_lst(model, j * params.theta1 + shift)
    base = -params.w1 * (stationary_lst(model, shift) if shift > 0 else 1.0)
    value = math.fsum(np.concatenate([[base], t0, -t1]))
    tail = 2 * q ** (J + 1) / ((J + 1) * (1 - q))
    return SeriesValue(value, tail, J)


def mean_increment(params: ClrtParams, k: int, tol: float = SERIES_TOL, with_error: bool = False):
    """Stationary mean increment ``m_k = E_k Z`` under hypothesis ``k``.

    ``m_k = w1 + w2 E_k[h_k(V) V] + E_k[(1 - h_k(V)) g(V)]`` with
    ``h_k(v) = (xi/theta_k) exp(-theta_k v)``.
    """
    if params.degenerate:
        return (0.0, 0.0) if with_error else 0.0
    model, theta = params.model(k), params.theta(k)
    a = params.xi / theta
    eg = g_lst_series(params, model, 0.0, tol)
    ehg = g_lst_series(params, model, theta, tol)
    value = params.w1 + params.w2 * a * stationary_v_exp(model, theta) + eg.value - a * ehg.value
    err = eg.tail_bound + a * ehg.tail_bound
    return (value, err) if with_error else value


def stationary_expectation(model: LevyInputModel, f, tol: float = 1e-10) -> float:
    """``E f(V)`` under the stationary law, by quadrature (compound Poisson with Exp jobs only).

    The law is an atom ``1 - rho`` at zero plus ``rho`` times Exp(``mu - lam``).
    """
    if not isinstance(model, CompoundPoissonExp):
        raise NotImplementedError("closed-form stationary law only for compound Poisson with Exp jobs")
    if not model.is_stable:
        raise ModelError("stationary law requires a stable model")
    if model.lam == 0:
        return float(f(0.0))
    r = model.mu - model.lam
    val, _ = integrate.quad(lambda v: f(v) * r * math.exp(-r * v), 0, np.inf, epsabs=tol, epsrel=tol, limit=500)
    return (1 - model.rho) * float(f(0.0)) + model.rho * val


def mean_increment_quadrature(params: ClrtParams, k: int) -> float:
    """Reference value of ``m_k`` by direct quadrature of ``E_k Z``."""
    theta = params.theta(k)

    def ez(v):
        h = params.xi / theta * math.exp(-theta * v)
        return h * (params.w1 + params.w2 * v) + (1 - h) * (params.w1 + g_func(v, params))

    return stationary_expectation(params.model(k), ez)


def kappa1(params: ClrtParams, beta: float, reps: int = 20_000, seed: int = 0, grid_step: float = 5e-3) -> float:
    """``log E_0 exp(beta Z)`` under the stationary null.

    The zero branch has the closed form ``(xi/theta0) e^{beta w1} E_0 exp(-theta_beta V)``
    with ``theta_beta = beta theta1 + (1 - beta) theta0``; the positive branch
    ``E_0[(1 - a1 e^{-theta1 V})^beta (1 - a0 e^{-theta0 V})^{1-beta}]`` is
    integrated numerically.  Laws without a closed form fall back to Monte
    Carlo over ``reps`` grid-simulated stationary draws (warm-up 10, step
    ``grid_step``), accurate to a few times ``1e-3``.
    """
    if beta == 0 or params.degenerate:
        return 0.0
    a0, a1 = params.xi / params.theta0, params.xi / params.theta1
    th_b = beta * params.theta1 + (1 - beta) * params.theta0
    if th_b < 0:
        return math.inf
    model = params.model0
    zero_branch = a0 * math.exp(beta * params.w1) * stationary_lst(model, th_b)

    def pos(v):
        v = np.asarray(v, dtype=float)
        return np.exp(beta * np.log1p(-a1 * np.exp(-params.theta1 * v))
                      + (1 - beta) * np.log1p(-a0 * np.exp(-params.theta0 * v)))

    try:
        pos_branch = stationary_expectation(model, lambda v: float(pos(v)))
    except NotImplementedError:
        rng = np.random.default_rng(seed)
        pos_branch = float(np.mean(pos(_stationary_draws(model, rng, reps, 10.0, grid_step))))
    return math.log(zero_branch + pos_branch)


def _positive_root(f, start: float = 0.5, limit: float = 1e3) -> float:
    hi = start
    while f(hi) <= 0:
        hi *= 2
        if hi > limit:
            raise ArithmeticError("no positive root bracketed")
    lo = hi
    while f(lo) >= 0:
        lo /= 2
        if lo < 1e-10:
            raise ArithmeticError("no positive root bracketed")
    return float(optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))


def gamma1(params: ClrtParams) -> float:
    """Positive root of :func:`kappa1`."""
    if params.degenerate:
        raise ArithmeticError("degenerate pair: kappa1 vanishes identically")
    return _positive_root(lambda b: kappa1(params, b))


def brownian_approx(m0: float, sigma0sq: float, x):
    """Type-I error of the Brownian approximation, ``exp(-2 |m0| x / sigma0^2)``."""
    if not m0 < 0:
        raise ValueError("the null drift m0 must be negative")
    check_positive("sigma0sq", sigma0sq)
    return np.exp(-2.0 * abs(m0) * np.asarray(x, dtype=float) / sigma0sq)


def brownian_tau(m1: float, x):
    """Approximate mean number of samples to rejection, ``x / |m1|``."""
    if m1 == 0:
        raise ValueError("m1 must be nonzero")
    return np.asarray(x, dtype=float) / abs(m1)


# ---------------------------------------------------------------------------
# Monte Carlo performance estimates


@dataclass(frozen=True)
class SigmaEstimate:
    s: float
    s_se: float
    cov: np.ndarray
    cov_se: np.ndarray
    sigma2: float
    sigma2_se: float


def _stationary_increments(params: ClrtParams, k: int, rng, count: int, n: int) -> np.ndarray:
    cfg = SimConfig(xi=params.xi, n=n, init="stationary")
    values, _ = simulate_block(params.model(k), cfg, rng, count)
    return path_increments(values, params)


def second_moment_and_sigma(params: ClrtParams, k: int, reps: int = 2000, length: int = 5000,
                            seed: int = 0, n_jobs: int = 1, m: Optional[float] = None) -> SigmaEstimate:
    """``s_k = E_k Z^2``, lag covariances ``c_{k,1..I}`` and ``sigma_k^2``.

    Each of ``reps`` stationary paths of ``length`` increments yields its own
    time-average estimates; standard errors are taken across paths.
    """
    check_reps(reps)
    I = params.lags
    if length <= I:
        raise ValueError("path length must exceed the covariance lag cap")
    if params.degenerate:
        z = np.zeros(I)
        return SigmaEstimate(0.0, 0.0, z, z, 0.0, 0.0)
    m = mean_increment(params, k) if m is None else m

    def block(rng, count):
        Z = _stationary_increments(params, k, rng, count, length)
        out = np.empty((count, I + 1))
        _kernels.lag_products(Z, m, I, out)
        sq = (Z**2).mean(axis=1)
        return np.column_stack([sq, out])

    rows = np.concatenate(map_blocks(block, reps, seed, n_jobs, stream=7 + k))
    s = rows[:, 0]
    cov = rows[:, 2:]
    sig = rows[:, 1] + 2 * cov.sum(axis=1)
    rt = math.sqrt(len(rows))
    return SigmaEstimate(float(s.mean()), float(s.std(ddof=1) / rt), cov.mean(axis=0), cov.std(axis=0, ddof=1) / rt,
                         float(sig.mean()), float(sig.std(ddof=1) / rt))


@dataclass(frozen=True)
class GammaNEstimate:
    n: np.ndarray
    gamma: np.ndarray
    se: np.ndarray


def _root_on_grid(betas, h):
    f = h - 1.0
    idx = np.flatnonzero((f[:-1] < 0) & (f[1:] >= 0))
    if idx.size == 0:
        return math.nan
    i = idx[-1]
    spline = interpolate.CubicSpline(betas, f)
    return float(optimize.brentq(spline, betas[i], betas[i + 1], xtol=1e-12))


def gamma_n_sequence(params: ClrtParams, n_values: Sequence[int], reps: int = 1_000_000, seed: int = 0,
                     n_jobs: int = 1, betas: Optional[np.ndarray] = None, groups: int = 20) -> GammaNEstimate:
    """Roots ``gamma_n`` of ``h_n(beta) = 1`` with jackknife standard errors.

    ``h_n(beta) = sum_{j=2}^n h1^{n-j} Cov_0(e^{beta l_{j-1}}, e^{beta Z_j}) + h1^n``
    where ``h1 = exp(kappa1(beta))`` is computed exactly and the covariances
    are estimated from stationary null paths, with common random numbers
    across ``beta``.  ``h_n`` is evaluated on the grid ``betas`` and the root
    located on a cubic spline through it.
    """
    check_reps(reps)
    if params.degenerate:
        raise ArithmeticError("degenerate pair: no Lundberg root")
    n_values = np.asarray(sorted(set(int(v) for v in n_values)))
    if n_values[0] < 1:
        raise ValueError("n must be positive")
    nmax = int(n_values[-1])
    betas = np.linspace(0.8, 1.2, 81) if betas is None else np.asarray(betas, dtype=float)
    h1 = np.exp([kappa1(params, b) for b in betas])
    G = len(betas)

    def block(rng, count):
        Z = _stationary_increments(params, 0, rng, count, nmax)
        s_ab, s_a, s_b = (np.zeros((nmax, G)) for _ in range(3))
        _kernels.cov_accumulate(Z, betas, s_ab, s_a, s_b)
        return count, s_ab, s_a, s_b

    out = map_blocks(block, reps, seed, n_jobs, stream=5)
    ngroups = min(groups, len(out))
    gid = np.arange(len(out)) % ngroups
    counts = np.array([o[0] for o in out], dtype=float)
    stacks = [np.stack([o[i] for o in out]) for i in (1, 2, 3)]

    def roots(mask):
        c = counts[mask].sum()
        ab, a, b = (s[mask].sum(axis=0) / c for s in stacks)
        cov = ab - a * b
        res = []
        for n in n_values:
            h = h1**n
            for j in range(2, n + 1):
                h = h + h1 ** (n - j) * cov[j - 1]
            res.append(_root_on_grid(betas, h))
        return np.array(res)

    full = roots(np.ones(len(out), dtype=bool))
    if ngroups > 1:
        jack = np.array([roots(gid != g) for g in range(ngroups)])
        se = np.sqrt((ngroups - 1) / ngroups * ((jack - jack.mean(axis=0)) ** 2).sum(axis=0))
    else:
        se = np.full(len(n_values), np.nan)
    # n = 1 has no covariance terms: the root is exactly gamma1
    if n_values[0] == 1:
        full[0], se[0] = gamma1(params), 0.0
    return GammaNEstimate(n_values, full, se)


# ---------------------------------------------------------------------------
# estimators


def naive_mean_test(values, x: float) -> bool:
    """Reject when the average of ``V_1..V_n`` is at least ``x``."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("need at least one observation after V_0")
    return bool(values[1:].mean() >= x)


def _clrt_scan(values, params, x, truncate_n):
    X = check_observations(values)
    n = X.shape[1] - 1 if truncate_n is None else min(int(truncate_n), X.shape[1] - 1)
    Z = path_increments(X[:, : n + 1], params)
    out_n = np.empty(len(X), dtype=np.int64)
    out_l = np.empty(len(X))
    _kernels.first_crossing(np.ascontiguousarray(Z), float(x), out_n, out_l)
    return out_n, out_l


class CLRTest(BaseEstimator):
    """Sequential CLRT as an estimator.

    ``fit`` computes ``theta_k``, ``m_k`` and the Lundberg root ``gamma1``; the
    threshold defaults to ``-log(alpha) / gamma`` where ``gamma`` overrides
    ``gamma1`` when given (for instance a simulated ``gamma_n``).
    """

    def __init__(self, model0=None, model1=None, xi=1.0, alpha=0.05, x=None, gamma=None, truncate_n=None):
        self.model0 = model0
        self.model1 = model1
        self.xi = xi
        self.alpha = alpha
        self.x = x
        self.gamma = gamma
        self.truncate_n = truncate_n

    def fit(self, X=None, y=None):
        if self.model0 is None or self.model1 is None:
            raise ModelError("CLRTest needs model0 and model1")
        self.params_ = ClrtParams(self.model0, self.model1, self.xi)
        self.m0_ = mean_increment(self.params_, 0)
        self.m1_ = mean_increment(self.params_, 1)
        if self.params_.degenerate:
            self.gamma_ = math.nan
            self.threshold_ = float(self.x) if self.x is not None else math.inf
            return self
        self.gamma_ = float(self.gamma) if self.gamma is not None else gamma1(self.params_)
        self.threshold_ = float(self.x) if self.x is not None else -math.log(self.alpha) / self.gamma_
        check_positive("x", self.threshold_)
        return self

    def decision_function(self, X):
        return _clrt_scan(X, self.params_, self.threshold_, self.truncate_n)[1]

    def stopping_index(self, X):
        """Observation index ``N`` at which ``ell_N >= x`` first holds, 0 if never."""
        return _clrt_scan(X, self.params_, self.threshold_, self.truncate_n)[0]

    def predict(self, X):
        return (self.stopping_index(X) > 0).astype(int)

    def run(self, pairs) -> ClrtRun:
        return sequential_clrt(pairs, self.params_, self.threshold_)


class NaiveMeanTest(BaseEstimator):
    """Fixed-sample test rejecting when the mean workload exceeds ``x``.

    With ``x=None`` the threshold is calibrated in ``fit`` to level ``alpha``
    from ``reps`` simulated null paths of ``truncate_n`` observations.
    """

    def __init__(self, model0=None, xi=1.0, alpha=0.05, x=None, truncate_n=1000, reps=2000, seed=0):
        self.model0 = model0
        self.xi = xi
        self.alpha = alpha
        self.x = x
        self.truncate_n = truncate_n
        self.reps = reps
        self.seed = seed

    def fit(self, X=None, y=None):
        if self.x is not None:
            self.threshold_ = float(self.x)
            return self
        if self.model0 is None:
            raise ModelError("calibration needs model0")
        cfg = SimConfig(xi=self.xi, n=self.truncate_n, init="stationary", seed=self.seed)
        means = np.concatenate(map_blocks(lambda rng, c: simulate_block(self.model0, cfg, rng, c)[0][:, 1:].mean(axis=1),
                                          self.reps, self.seed, stream=11))
        self.threshold_ = float(np.quantile(means, 1 - self.alpha))
        return self

    def decision_function(self, X):
        X = check_observations(X)
        n = X.shape[1] - 1 if self.truncate_n is None else min(int(self.truncate_n), X.shape[1] - 1)
        return X[:, 1 : n + 1].mean(axis=1)

    def predict(self, X):
        return (self.decision_function(X) >= self.threshold_).astype(int)
