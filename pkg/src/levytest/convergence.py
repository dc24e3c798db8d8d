"""
Speed of convergence of the sampled workload to stationarity.

Closed forms for the accumulated deviations

    sum_n (E[V_n | V_0 = v] - E V)                = xi k1(v)
    sum_n (E[exp(-a V_n) | V_0 = v] - E exp(-a V)) = xi k2(v, a)
    sum_n (E[V_n exp(-a V_n) | V_0 = v] - ...)     = xi k3(v, a)

and a Monte Carlo harness that checks them.  The harness couples a workload
started empty with one started from the stationary law, driven by the same
input; the sum of the differences is unbiased for the series and exact once
the two paths have merged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from . import _kernels
from .models import CompoundPoissonExp, LevyInputModel, ModelError, stationary_lst, stationary_moments, stationary_v_exp
from .simulation import _stationary_draws
from .streams import map_blocks
from .validation import check_positive, check_reps

DEFAULT_TERMS = 1000


@dataclass(frozen=True)
class ConvergenceConstants:
    """``phi'(0)``, ``phi''(0)`` and ``phi'''(0)`` of a stable model."""

    model: LevyInputModel
    d1: float
    d2: float
    d3: float

    @classmethod
    def of(cls, model: LevyInputModel) -> "ConvergenceConstants":
        d1 = model.dphi0
        if not d1 > 0:
            raise ModelError("convergence functionals require a stable model (phi'(0) > 0)")
        return cls(model, d1, float(model.phi_deriv(0.0, 2)), float(model.phi_deriv(0.0, 3)))


def _consts(model):
    c = ConvergenceConstants.of(model)
    for name, val in (("second", c.d2), ("third", c.d3)):
        if not math.isfinite(val):
            raise ModelError(f"{name} moment of the input is infinite")
    return c


def k1(model: LevyInputModel, v) -> float:
    """``v^2 / (2 phi'(0)) + phi'''(0) / (6 phi'(0)^2) - phi''(0)^2 / (4 phi'(0)^3)``."""
    c = _consts(model)
    v = np.asarray(v, dtype=float)
    out = v**2 / (2 * c.d1) + c.d3 / (6 * c.d1**2) - c.d2**2 / (4 * c.d1**3)
    return out if out.ndim else float(out)


def k2(model: LevyInputModel, v, alpha):
    """``-(e^{-a v} + a v)/phi(a) + a phi'(0)/phi(a)^2 + a phi''(0) / (2 phi'(0) phi(a))``."""
    c = _consts(model)
    v = np.asarray(v, dtype=float)
    a = np.asarray(alpha, dtype=float)
    if np.any(a <= 0):
        raise ValueError("alpha must be positive")
    f = model.phi(a)
    out = -(np.exp(-a * v) + a * v) / f + a * c.d1 / f**2 + a / f * c.d2 / (2 * c.d1)
    return out if out.ndim else float(out)


def k3(model: LevyInputModel, v, alpha):
    """Limit functional for ``V exp(-a V)``, ``k3 = -d/da k2``.

    ``v (1 - e)/phi - (e + a v) phi'/phi^2 - phi'(0)/phi^2 (1 - 2 a phi'/phi)
    - c/phi (1 - a phi'/phi)`` with ``e = exp(-a v)``, ``phi = phi(a)``,
    ``phi' = phi'(a)`` and ``c = phi''(0) / (2 phi'(0))``.
    """
    cst = _consts(model)
    v = np.asarray(v, dtype=float)
    a = np.asarray(alpha, dtype=float)
    if np.any(a <= 0):
        raise ValueError("alpha must be positive")
    f = model.phi(a)
    df = model.phi_deriv(a, 1)
    e = np.exp(-a * v)
    c = cst.d2 / (2 * cst.d1)
    out = (v * (1 - e) / f - (e + a * v) * df / f**2
           - cst.d1 / f**2 * (1 - 2 * a * df / f)
           - c / f * (1 - a * df / f))
    return out if out.ndim else float(out)


def k2_limit(model: LevyInputModel, v) -> float:
    """``lim_{a -> inf} |k2(v, a)| = |phi''(0) / (2 phi'(0)) - v|``."""
    c = _consts(model)
    return float(abs(c.d2 / (2 * c.d1) - v))


def k2_star(model: LevyInputModel, v: float, grid: Optional[np.ndarray] = None) -> float:
    """``sup_{a > 0} |k2(v, a)|``.

    A log-spaced grid locates the best interior point, refined by a
    golden-section search in ``log a``; the answer is the larger of that value
    and the ``a -> inf`` limit.
    """
    grid = np.logspace(-3, 5, 401) if grid is None else np.asarray(grid)
    vals = np.abs(k2(model, v, grid))
    i = int(np.argmax(vals))
    best = float(vals[i])
    if 0 < i < len(grid) - 1:
        res = optimize.minimize_scalar(lambda t: -abs(k2(model, v, math.exp(t))), method="golden",
                                       bracket=(math.log(grid[i - 1]), math.log(grid[i]), math.log(grid[i + 1])))
        best = max(best, -float(res.fun))
    return max(best, k2_limit(model, v))


@dataclass(frozen=True)
class AbsoluteSumBounds:
    lst_sum: float
    ev_sum: float
    Xi: float


def absolute_sum_bounds(model: LevyInputModel, xi: float, alpha: float) -> AbsoluteSumBounds:
    """Values of the absolute deviation sums from an empty start and the uniform bound ``Xi``.

    ``lst_sum = xi (-1/phi(a) + a phi'(0)/phi(a)^2 + a phi''(0)/(2 phi'(0) phi(a)))``,
    ``ev_sum = xi (phi''(0)^2/(4 phi'(0)^3) - phi'''(0)/(6 phi'(0)^2))`` (also a
    bound for the ``V exp(-a V)`` sum) and ``Xi = xi phi''(0) / (2 phi'(0)^2)``.
    """
    check_positive("xi", xi)
    check_positive("alpha", alpha)
    c = _consts(model)
    f = float(model.phi(alpha))
    lst = xi * (-1 / f + alpha * c.d1 / f**2 + alpha * c.d2 / (2 * c.d1 * f))
    ev = xi * (c.d2**2 / (4 * c.d1**3) - c.d3 / (6 * c.d1**2))
    return AbsoluteSumBounds(lst, ev, xi * c.d2 / (2 * c.d1**2))


# ---------------------------------------------------------------------------
# Monte Carlo harness


@dataclass(frozen=True)
class CoupledSums:
    """Per-replication sums of (empty minus stationary) deviations.

    Columns of ``sum_exp`` / ``int_exp`` / ``sum_vexp`` follow ``alphas``;
    ``half_*`` are the partial sums over the first half of the samples.
    """

    alphas: np.ndarray
    sum_id: np.ndarray
    sum_exp: np.ndarray
    sum_vexp: np.ndarray
    mean_id_n: np.ndarray
    mean_exp_n: np.ndarray
    mean_vexp_n: np.ndarray
    int_id: np.ndarray
    int_exp: np.ndarray
    half_id: np.ndarray
    half_exp: np.ndarray


def coupled_sums(model: LevyInputModel, xi: float, alphas: Sequence[float], reps: int,
                 n_terms: int = DEFAULT_TERMS, seed: int = 0, n_jobs: int = 1) -> CoupledSums:
    """Simulate coupled empty/stationary workloads and accumulate the deviation sums."""
    if not isinstance(model, CompoundPoissonExp):
        raise NotImplementedError("the coupled harness simulates compound Poisson input only")
    check_reps(reps)
    alphas = np.asarray(alphas, dtype=float)
    half = n_terms // 2

    def block(rng, count):
        vstar = _stationary_draws(model, rng, count, 0.0, 0.0)
        ve = np.empty((count, n_terms + 1))
        vs = np.empty((count, n_terms + 1))
        iid = np.empty(count)
        iexp = np.empty((count, len(alphas)))
        _kernels.cp_coupled(rng, model.lam, model.mu, xi, vstar, alphas, ve, vs, iid, iexp)
        ve, vs = ve[:, 1:], vs[:, 1:]
        d_id = ve - vs
        ee = np.exp(-alphas[None, None, :] * ve[:, :, None])
        es = np.exp(-alphas[None, None, :] * vs[:, :, None])
        d_exp = ee - es
        d_vexp = ve[:, :, None] * ee - vs[:, :, None] * es
        per_n = (d_id.sum(0), d_exp.sum(0), d_vexp.sum(0))
        return (d_id.sum(1), d_exp.sum(1), d_vexp.sum(1), iid, iexp, d_id[:, :half].sum(1), d_exp[:, :half].sum(1)), per_n

    out = map_blocks(block, reps, seed, n_jobs, stream=3)
    cat = [np.concatenate([o[0][i] for o in out]) for i in range(7)]
    per_n = [sum(o[1][i] for o in out) / reps for i in range(3)]
    return CoupledSums(alphas, cat[0], cat[1], cat[2], *per_n, cat[3], cat[4], cat[5], cat[6])


@dataclass(frozen=True)
class CheckRow:
    check: str
    lhs: float
    rhs: float
    se: float

    @property
    def zscore(self) -> float:
        if self.se == 0:
            return 0.0 if self.lhs == self.rhs else math.inf
        return (self.lhs - self.rhs) / self.se


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def series_checks(model: LevyInputModel, xi: float, alphas: Sequence[float] = (0.5, 1.0, 2.0), reps: int = 100_000,
                  n_terms: int = DEFAULT_TERMS, seed: int = 0, n_jobs: int = 1) -> list[CheckRow]:
    """Monte Carlo estimates of the three deviation series from ``V_0 = 0`` against ``xi k_i(0, .)``.

    ``lhs`` is the simulation estimate, ``rhs`` the closed form.
    """
    cs = coupled_sums(model, xi, alphas, reps, n_terms, seed, n_jobs)
    rows = []
    m, s = _mean_se(cs.sum_id)
    rows.append(CheckRow("ev_series", m, xi * k1(model, 0.0), s))
    for j, a in enumerate(cs.alphas):
        m, s = _mean_se(cs.sum_exp[:, j])
        rows.append(CheckRow(f"lst_series[alpha={a:g}]", m, xi * k2(model, 0.0, a), s))
        m, s = _mean_se(cs.sum_vexp[:, j])
        rows.append(CheckRow(f"vexp_series[alpha={a:g}]", m, xi * k3(model, 0.0, a), s))
    return rows


def pasta_difference_check(model: LevyInputModel, xi: float, g: str = "exp", alpha: float = 1.0,
                           reps: int = 100_000, n_terms: int = DEFAULT_TERMS, seed: int = 0,
                           n_jobs: int = 1) -> CheckRow:
    """Compare ``xi * int_0^inf E[g(V(t)) - g(V) | V_0 = 0] dt`` with ``sum_n E[g(V_n) - g(V) | V_0 = 0]``.

    ``g`` is ``"identity"``, ``"exp"`` (``exp(-alpha .)``) or ``"constant"``.
    Both estimates come from the same coupled paths; the time integral is
    exact along the piecewise-linear compound Poisson workload.  The standard
    error is that of the per-path difference.
    """
    if g == "constant":
        return CheckRow("pasta[constant]", 0.0, 0.0, 0.0)
    cs = coupled_sums(model, xi, [alpha], reps, n_terms, seed, n_jobs)
    if g == "identity":
        lhs, rhs, name = xi * cs.int_id, cs.sum_id, "pasta[identity]"
    elif g == "exp":
        lhs, rhs, name = xi * cs.int_exp[:, 0], cs.sum_exp[:, 0], f"pasta[exp,alpha={alpha:g}]"
    else:
        raise ValueError(f"unknown g {g!r}")
    _, se = _mean_se(lhs - rhs)
    return CheckRow(name, float(lhs.mean()), float(rhs.mean()), se)


def absolute_sum_checks(model: LevyInputModel, xi: float, alphas: Sequence[float] = (0.5, 1.0, 2.0),
                        reps: int = 100_000, n_terms: int = DEFAULT_TERMS, seed: int = 0,
                        n_jobs: int = 1) -> list[CheckRow]:
    """Monte Carlo absolute deviation sums ``sum_n |E[.] - E_stat[.]|`` against their closed forms.

    The per-``n`` means come from the coupled differences; the reported SE is
    that of the signed sum, which bounds the noise of the absolute sum when the
    deviations keep one sign.  The ``V exp(-a V)`` row compares against its
    upper bound, so only ``lhs <= rhs`` (within noise) is meaningful there.
    """
    cs = coupled_sums(model, xi, alphas, reps, n_terms, seed, n_jobs)
    rows = [CheckRow("ev_abs_sum", float(np.abs(cs.mean_id_n).sum()), absolute_sum_bounds(model, xi, 1.0).ev_sum,
                     _mean_se(cs.sum_id)[1])]
    for j, a in enumerate(cs.alphas):
        b = absolute_sum_bounds(model, xi, a)
        rows.append(CheckRow(f"lst_abs_sum[alpha={a:g}]", float(np.abs(cs.mean_exp_n[:, j]).sum()), b.lst_sum,
                             _mean_se(cs.sum_exp[:, j])[1]))
        rows.append(CheckRow(f"vexp_abs_bound[alpha={a:g}]", float(np.abs(cs.mean_vexp_n[:, j]).sum()), b.ev_sum,
                             _mean_se(cs.sum_vexp[:, j])[1]))
    return rows


def tail_diagnostic(cs: CoupledSums) -> dict:
    """Change of the mean partial sums between half and all terms (should be within noise)."""
    d_id = cs.sum_id - cs.half_id
    d_exp = cs.sum_exp - cs.half_exp
    return {"ev_series": _mean_se(d_id), **{f"lst_series[alpha={a:g}]": _mean_se(d_exp[:, j]) for j, a in enumerate(cs.alphas)}}


def mean_k2_star(model: LevyInputModel, reps: int = 2000, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo ``E[k2*(V)]`` over stationary ``V``."""
    rng = np.random.default_rng(seed)
    v = _stationary_draws(model, rng, reps, 20.0, 1e-3)
    return _mean_se([k2_star(model, float(x)) for x in v])
