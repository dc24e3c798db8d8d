"""
Quasi-busy-period (QBP) likelihood-ratio test.

A QBP is the number of Poisson observations between two consecutive zero
workload observations.  Successive QBPs are i.i.d., with law ``r_k`` computed
here from the zero probabilities ``p_k = P(V_k = 0 | V_0 = 0)``.

Sign convention: log-likelihood increments are ``log(r1_R / r0_R)`` (the
alternative in the numerator), so they drift up under H1 and the null is
rejected on an up-crossing of ``x1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from scipy import optimize
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from . import _kernels
from .models import LevyInputModel, ModelError, psi, psi_derivs, stationary_lst
from .validation import check_observations, check_thresholds

DEFAULT_K = 15
_NEG_TOL = 1e-8


class NumericalBreakdown(ArithmeticError):
    """Raised when the recursions lose accuracy; ``max_k`` is the last trustworthy truncation."""

    def __init__(self, message, max_k):
        super().__init__(message)
        self.max_k = max_k


@dataclass(frozen=True)
class PkTable:
    xi: float
    p: np.ndarray  # p_1 .. p_{K-1}
    rho: np.ndarray  # derivatives of 1/psi, orders 0 .. K-1
    dp1: np.ndarray  # derivatives of p_1, orders 0 .. K-2

    @property
    def K(self) -> int:
        return len(self.p) + 1


@dataclass(frozen=True)
class QbpDistribution:
    """``r_1..r_{K-1}`` plus the lumped mass of ``{R >= K}``."""

    xi: float
    K: int
    masses: np.ndarray
    lump: float

    @property
    def probs(self) -> np.ndarray:
        """Length-``K`` vector: ``P(R=1) .. P(R=K-1), P(R>=K)``."""
        return np.append(self.masses, self.lump)

    def pmf(self, R):
        R = np.asarray(R)
        if np.any(R < 1):
            raise ValueError("QBP durations are positive integers")
        out = self.probs[np.minimum(R, self.K) - 1]
        return out if out.ndim else float(out)


def rho_derivs(model: LevyInputModel, xi: float, K: int) -> np.ndarray:
    """Derivatives ``d^l/dxi^l (1/psi(xi))`` for ``l = 0 .. K-1``."""
    theta = psi(model, xi)
    d = np.concatenate([[theta], psi_derivs(model, xi, K - 1)]) if K > 1 else np.array([theta])
    out = np.empty(K)
    out[0] = 1.0 / theta
    for ell in range(1, K):
        out[ell] = -math.fsum(math.comb(ell, m) * out[m] * d[ell - m] for m in range(ell)) / theta
    return out


def pk_table(model: LevyInputModel, xi: float, K: int = DEFAULT_K) -> PkTable:
    """Zero probabilities ``p_k = sum_{l<k} (-xi)^l / l! * p_1^(l)(xi)`` for ``k < K``.

    ``p_1 = xi/psi(xi)`` and ``p_1^(l) = xi rho_l + l rho_{l-1}``.
    """
    if K < 2:
        raise ValueError("truncation K must be at least 2")
    rho = rho_derivs(model, xi, K)
    dp1 = np.array([xi * rho[ell] + (ell * rho[ell - 1] if ell else 0.0) for ell in range(K - 1)])
    terms = np.array([(-xi) ** ell / math.factorial(ell) * dp1[ell] for ell in range(K - 1)])
    p = np.array([math.fsum(terms[:k]) for k in range(1, K)])
    bad = np.flatnonzero((p < -_NEG_TOL) | (p > 1 + _NEG_TOL))
    if bad.size:
        k = int(bad[0]) + 1
        raise NumericalBreakdown(f"p_{k} = {p[k - 1]:.3g} is outside [0, 1]", max_k=k)
    return PkTable(xi, p, rho, dp1)


def rk_table(pk: PkTable) -> QbpDistribution:
    """QBP law from ``r_k = p_k - sum_{l<k} r_l p_{k-l}``, with the tail lumped."""
    p = pk.p
    r = np.empty_like(p)
    for k in range(len(p)):
        r[k] = p[k] - math.fsum(r[ell] * p[k - 1 - ell] for ell in range(k))
        if r[k] < -_NEG_TOL:
            raise NumericalBreakdown(f"r_{k + 1} = {r[k]:.3g} is negative", max_k=k + 1)
        if r[k] < 0:
            warnings.warn(f"clipping r_{k + 1} = {r[k]:.2e} to zero", RuntimeWarning, stacklevel=2)
            r[k] = 0.0
    lump = 1.0 - math.fsum(r)
    if lump < -_NEG_TOL:
        raise NumericalBreakdown(f"QBP masses sum to {1 - lump:.12g} > 1", max_k=len(p))
    return QbpDistribution(pk.xi, pk.K, r, max(lump, 0.0))


def qbp_distribution(model: LevyInputModel, xi: float, K: int = DEFAULT_K, shrink: bool = True) -> QbpDistribution:
    """``rk_table(pk_table(...))``, lowering ``K`` on numerical breakdown when ``shrink``."""
    while True:
        try:
            return rk_table(pk_table(model, xi, K))
        except NumericalBreakdown as exc:
            if not shrink or exc.max_k <= 2 or exc.max_k >= K:
                raise
            warnings.warn(f"QBP recursion broke down at K={K}; using K={exc.max_k}", RuntimeWarning, stacklevel=2)
            K = exc.max_k


def _check_pair(dist0, dist1):
    if dist0.K != dist1.K or not math.isclose(dist0.xi, dist1.xi, rel_tol=1e-12):
        raise ValueError("QBP distributions must share xi and K")


def llr_table(dist0: QbpDistribution, dist1: QbpDistribution) -> np.ndarray:
    """Increments ``log(r1/r0)`` indexed ``0..K-1`` for ``R = 1..K-1`` and the lump."""
    _check_pair(dist0, dist1)
    q0, q1 = dist0.probs, dist1.probs
    if np.any(q0 <= 0) or np.any(q1 <= 0):
        raise ValueError("zero QBP mass under one hypothesis; lower K")
    return np.log(q1) - np.log(q0)


def qbp_llr_increment(R: int, dist0: QbpDistribution, dist1: QbpDistribution) -> float:
    """Log-likelihood increment of one QBP of length ``R``."""
    if R < 1:
        raise ValueError("QBP durations are positive integers")
    return float(llr_table(dist0, dist1)[min(R, dist0.K) - 1])


@dataclass
class QbptRun:
    """State of a sequential QBP test.  ``verdict`` is ``continue``, ``reject`` or ``accept``."""

    x0: float
    x1: float
    ell: float = 0.0
    n: int = 0
    verdict: str = "continue"
    N: Optional[int] = None

    def update(self, increment: float) -> str:
        if self.verdict != "continue":
            return self.verdict
        self.ell += increment
        self.n += 1
        if self.ell > self.x1:
            self.verdict, self.N = "reject", self.n
        elif self.ell < self.x0:
            self.verdict, self.N = "accept", self.n
        return self.verdict


def sequential_qbpt(qbps: Iterable[int], dist0: QbpDistribution, dist1: QbpDistribution,
                    x0: float = -np.inf, x1: float = 3.0) -> QbptRun:
    """Run the QBP test on a stream of durations until ``ell_n`` leaves ``[x0, x1]``.

    An exhausted stream leaves the verdict at ``continue`` (truncated test).
    """
    check_thresholds(x0, x1)
    table = llr_table(dist0, dist1)
    run = QbptRun(x0, x1)
    for R in qbps:
        R = int(R)
        if R < 1:
            raise ValueError("QBP durations are positive integers")
        if run.update(table[min(R, dist0.K) - 1]) != "continue":
            break
    return run


def _kappa(beta, logq0, incr):
    return logsumexp(logq0 + beta * incr)


def lundberg_gamma_qbp(dist0: QbpDistribution, dist1: QbpDistribution) -> float:
    """Positive root of ``kappa(beta) = log E_0 exp(beta * increment)`` over the truncated support."""
    incr = llr_table(dist0, dist1)
    q0 = dist0.probs
    logq0 = np.log(q0)
    drift = float(np.dot(q0, incr))
    if not drift < 0 or not np.any(incr > 0):
        raise ValueError("no Lundberg root: hypotheses indistinguishable at this xi and K")

    def kappa(b):
        return _kappa(b, logq0, incr)

    hi = 1.0
    while kappa(hi) <= 0:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("no sign change of kappa found")
    lo = hi
    while kappa(lo) >= 0:
        lo /= 2.0
        if lo < 1e-12:
            raise ValueError("no sign change of kappa found")
    return float(optimize.brentq(kappa, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def qbpt_error_approx(gamma: float, x, C: float = 1.0):
    """Type-I error approximation ``C exp(-gamma x)``."""
    return C * np.exp(-gamma * np.asarray(x, dtype=float))


def qbpt_mean_rejection(dist1: QbpDistribution, dist0: QbpDistribution, x: float) -> float:
    """Approximate mean number of QBPs until rejection under H1, ``x / E_1[increment]``."""
    incr = llr_table(dist0, dist1)
    return float(x / np.dot(dist1.probs, incr))


def mean_qbp_length(model: LevyInputModel, xi: float) -> float:
    """Stationary mean QBP length ``1 / P(V_i = 0)`` in observations."""
    theta = psi(model, xi)
    return 1.0 / (xi / theta * stationary_lst(model, theta))


def overshoot_constant(dist0: QbpDistribution, dist1: QbpDistribution, gamma: float, x: float,
                       reps: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of ``C = E_gamma exp(-gamma (ell_N - x))`` under the tilted QBP law.

    Returns ``(estimate, standard error)``.
    """
    incr = llr_table(dist0, dist1)
    tilted = dist0.probs * np.exp(gamma * incr)
    tilted /= tilted.sum()
    if np.dot(tilted, incr) <= 0:
        raise ValueError("tilted walk has no positive drift")
    rng = np.random.default_rng(seed)
    out = np.empty(reps)
    for i in range(reps):
        ell = 0.0
        while ell < x:
            ell += incr[rng.choice(len(incr), p=tilted)]
        out[i] = math.exp(-gamma * (ell - x))
    return float(out.mean()), float(out.std(ddof=1) / math.sqrt(reps))


def _nth_derivative(f: Callable[[float], float], x: float, order: int, h0: float, levels: int = 5):
    """Central-difference derivative of ``f`` with Richardson extrapolation.

    Returns ``(value, error_estimate)``.
    """
    if order == 0:
        return f(x), 0.0
    weights = [(-1) ** i * math.comb(order, i) for i in range(order + 1)]

    def D(h):
        return math.fsum(w * f(x + (order / 2.0 - i) * h) for i, w in enumerate(weights)) / h**order

    table = [[D(h0 / 2**j)] for j in range(levels)]
    best, err = table[0][0], np.inf
    for j in range(1, levels):
        for m in range(1, j + 1):
            table[j].append(table[j][m - 1] + (table[j][m - 1] - table[j - 1][m - 1]) / (4**m - 1))
        e = abs(table[j][j] - table[j - 1][j - 1])
        if e < err:
            best, err = table[j][j], e
    return best, err


def erlang_epoch_transform(alpha1: Callable[[float, float], float], xi: float, s: float, k: int,
                           rel_tol: float = 1e-6) -> float:
    """Transform at an Erlang(k, xi) epoch from its exponential-epoch counterpart.

    ``alpha_k(xi|s) = sum_{l<k} (-xi)^l / l! * d^l/dxi^l alpha_1(xi|s)``; the
    xi-derivatives are taken numerically.
    """
    if not 1 <= k <= 6:
        raise ValueError("erlang_epoch_transform supports 1 <= k <= 6")
    h0 = 0.5 * xi / max(k - 1, 1)
    terms = []
    for ell in range(k):
        d, err = _nth_derivative(lambda z: alpha1(z, s), xi, ell, h0)
        scale = max(abs(d), abs(alpha1(xi, s)), 1e-300)
        if err > rel_tol * scale * max(1.0, math.factorial(ell) / xi**ell):
            raise NumericalBreakdown(f"derivative of order {ell} is below the noise floor", max_k=ell)
        terms.append((-xi) ** ell / math.factorial(ell) * d)
    return math.fsum(terms)


class QBPTest(BaseEstimator):
    """Sequential QBP likelihood-ratio test as an estimator.

    ``fit`` builds the QBP laws under both hypotheses and the Lundberg
    coefficient; ``x1`` defaults to ``-log(alpha) / gamma``.  ``predict`` takes
    rows of workload observations ``V_0..V_n`` and returns 1 where H0 is
    rejected within ``truncate_n`` observations.
    """

    def __init__(self, model0=None, model1=None, xi=1.0, K=DEFAULT_K, alpha=0.05, x0=-np.inf,
                 x1=None, truncate_n=None):
        self.model0 = model0
        self.model1 = model1
        self.xi = xi
        self.K = K
        self.alpha = alpha
        self.x0 = x0
        self.x1 = x1
        self.truncate_n = truncate_n

    def fit(self, X=None, y=None):
        if self.model0 is None or self.model1 is None:
            raise ModelError("QBPTest needs model0 and model1")
        self.dist0_ = qbp_distribution(self.model0, self.xi, self.K)
        self.dist1_ = qbp_distribution(self.model1, self.xi, self.dist0_.K)
        if self.dist1_.K != self.dist0_.K:
            self.dist0_ = qbp_distribution(self.model0, self.xi, self.dist1_.K, shrink=False)
        self.increments_ = llr_table(self.dist0_, self.dist1_)
        if not np.any(self.increments_):
            # identical QBP laws: the statistic stays at zero and the test never stops
            self.gamma_ = math.nan
            self.threshold_ = float(self.x1) if self.x1 is not None else math.inf
            return self
        self.gamma_ = lundberg_gamma_qbp(self.dist0_, self.dist1_)
        self.threshold_ = float(self.x1) if self.x1 is not None else float(-math.log(self.alpha) / self.gamma_)
        check_thresholds(self.x0, self.threshold_)
        return self

    def _scan(self, X):
        X = check_observations(X)
        zeros = X[:, 1:] == 0.0
        n = zeros.shape[1] if self.truncate_n is None else int(self.truncate_n)
        m = len(X)
        out_n = np.empty(m, dtype=np.int64)
        out_l = np.empty(m)
        out_v = np.empty(m, dtype=np.int64)
        inc = np.concatenate([[0.0], self.increments_[:-1]])
        _kernels.qbp_first_passage(zeros, inc, float(self.increments_[-1]), self.dist0_.K,
                                   float(self.x0), self.threshold_, n, out_n, out_l, out_v)
        return out_n, out_l, out_v

    def decision_function(self, X):
        """Log-likelihood at stopping (or truncation) for each row."""
        return self._scan(X)[1]

    def stopping_index(self, X):
        return self._scan(X)[0]

    def predict(self, X):
        return (self._scan(X)[2] == 1).astype(int)

    def run(self, qbps: Iterable[int]) -> QbptRun:
        return sequential_qbpt(qbps, self.dist0_, self.dist1_, self.x0, self.threshold_)
