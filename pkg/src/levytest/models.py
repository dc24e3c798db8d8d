"""
Laplace exponents of subordinator-minus-drift input processes.

Every model describes the net input ``X(t) = J(t) - t`` of a storage system
whose cumulative input ``J`` is a subordinator with Levy measure ``nu``.  The
Laplace exponent is

    phi(alpha) = log E exp(-alpha X(1)) = alpha - int (1 - exp(-alpha x)) nu(dx)

and ``psi`` denotes its inverse on ``[psi(0), inf)``.  Two input families are
shipped: compound Poisson with exponential jumps (the M/M/1 workload) and the
Gamma subordinator.  New families subclass :class:`LevyInputModel` and provide
``phi``, ``phi_deriv`` and the jump moments; ``psi`` falls back on a bracketing
root search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Mapping

import numpy as np
from scipy import optimize

#: Highest derivative order of ``psi`` that :func:`psi_derivs` will compute.
MAX_DERIV_ORDER = 20

_PSI_RTOL = 1e-12
_PSI_MAX_ITER = 200


class ModelError(ValueError):
    """Raised for invalid model parameters or unsupported evaluations."""


class LevyInputModel:
    """Base class for the input models.

    Subclasses implement :meth:`phi`, :meth:`phi_deriv`, :meth:`jump_moment`
    and :meth:`_alpha_dphi_minus_phi`.
    """

    kind = "abstract"

    # -- required interface -------------------------------------------------
    def phi(self, alpha):
        raise NotImplementedError

    def phi_deriv(self, alpha, k: int):
        raise NotImplementedError

    def jump_moment(self, k: int) -> float:
        """Return ``int x**k nu(dx)``."""
        raise NotImplementedError

    def _alpha_dphi_minus_phi(self, alpha: float) -> float:
        """``alpha * phi'(alpha) - phi(alpha)`` without cancellation near 0."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    # -- derived quantities ---------------------------------------------------
    @property
    def rho(self) -> float:
        """Mean input per unit time, ``E J(1)``."""
        return self.jump_moment(1)

    @property
    def dphi0(self) -> float:
        """``phi'(0) = 1 - rho``, the stationary idle probability."""
        return 1.0 - self.rho

    @property
    def is_stable(self) -> bool:
        return self.dphi0 > 0.0

    def psi(self, xi: float) -> float:
        return _psi_root(self, xi)


@dataclass(frozen=True)
class CompoundPoissonExp(LevyInputModel):
    """Compound Poisson input with rate ``lam`` and Exp(``mu``) jumps."""

    lam: float
    mu: float

    kind = "cp_exp"

    def __post_init__(self):
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise ModelError(f"lam must be nonnegative, got {self.lam!r}")
        if not (self.mu > 0.0 and math.isfinite(self.mu)):
            raise ModelError(f"mu must be positive, got {self.mu!r}")

    def phi(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        out = alpha * (self.mu + alpha - self.lam) / (self.mu + alpha)
        return out if out.ndim else float(out)

    def phi_deriv(self, alpha, k: int):
        alpha = np.asarray(alpha, dtype=float)
        base = self.mu + alpha
        if k == 1:
            out = 1.0 - self.lam * self.mu / base**2
        else:
            out = (-1) ** k * math.factorial(k) * self.lam * self.mu / base ** (k + 1)
        return out if out.ndim else float(out)

    def jump_moment(self, k: int) -> float:
        return self.lam * math.factorial(k) / self.mu**k

    def _alpha_dphi_minus_phi(self, alpha: float) -> float:
        return self.lam * alpha**2 / (self.mu + alpha) ** 2

    def psi(self, xi: float) -> float:
        b = xi + self.lam - self.mu
        root = math.sqrt(b * b + 4.0 * xi * self.mu)
        if b >= 0.0:
            return 0.5 * (b + root)
        if xi == 0.0:
            return 0.0
        # conjugate form avoids cancellation when b < 0
        return 2.0 * xi * self.mu / (root - b)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "mu": self.mu}


@dataclass(frozen=True)
class GammaSubordinator(LevyInputModel):
    """Gamma process input: increments over time ``t`` are Gamma(``beta t``, rate ``gamma``)."""

    beta: float
    gamma: float

    kind = "gamma"

    def __post_init__(self):
        if not (self.beta >= 0.0 and math.isfinite(self.beta)):
            raise ModelError(f"beta must be nonnegative, got {self.beta!r}")
        if not (self.gamma > 0.0 and math.isfinite(self.gamma)):
            raise ModelError(f"gamma must be positive, got {self.gamma!r}")

    def phi(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        out = alpha - self.beta * np.log1p(alpha / self.gamma)
        return out if out.ndim else float(out)

    def phi_deriv(self, alpha, k: int):
        alpha = np.asarray(alpha, dtype=float)
        base = self.gamma + alpha
        if k == 1:
            out = 1.0 - self.beta / base
        else:
            out = (-1) ** k * math.factorial(k - 1) * self.beta / base**k
        return out if out.ndim else float(out)

    def jump_moment(self, k: int) -> float:
        # nu(dx) = beta x^-1 exp(-gamma x) dx
        return self.beta * math.factorial(k - 1) / self.gamma**k

    def _alpha_dphi_minus_phi(self, alpha: float) -> float:
        u = alpha / self.gamma
        if u < 1e-3:
            # log1p(u) - u/(1+u) = sum_{n>=2} (-1)^n (n-1) u^n / n
            s = math.fsum((-1) ** n * (n - 1) * u**n / n for n in range(2, 9))
        else:
            s = math.log1p(u) - u / (1.0 + u)
        return self.beta * s

    def to_dict(self) -> dict:
        return {"kind": self.kind, "beta": self.beta, "gamma": self.gamma}


def model_from_dict(data: Mapping[str, Any]) -> LevyInputModel:
    """Build a model from its JSON form, e.g. ``{"kind": "cp_exp", "lambda": 0.6, "mu": 10}``."""
    kind = data.get("kind")
    try:
        if kind == "cp_exp":
            return CompoundPoissonExp(float(data["lambda"]), float(data["mu"]))
        if kind == "gamma":
            return GammaSubordinator(float(data["beta"]), float(data["gamma"]))
    except KeyError as exc:
        raise ModelError(f"model of kind {kind!r} is missing field {exc.args[0]!r}") from None
    raise ModelError(f"unknown model kind {kind!r}; expected 'cp_exp' or 'gamma'")


@dataclass(frozen=True)
class HypothesisPair:
    """Null and alternative input models observed at Poisson rate ``xi``."""

    model0: LevyInputModel
    model1: LevyInputModel
    xi: float

    def __post_init__(self):
        if not self.xi > 0.0:
            raise ModelError(f"sampling rate xi must be positive, got {self.xi!r}")

    @property
    def theta0(self) -> float:
        return psi(self.model0, self.xi)

    @property
    def theta1(self) -> float:
        return psi(self.model1, self.xi)


# ---------------------------------------------------------------------------
# Functional interface
# ---------------------------------------------------------------------------


def phi(model: LevyInputModel, alpha):
    """Laplace exponent of the net input at ``alpha >= 0``."""
    if np.any(np.asarray(alpha) < 0):
        raise ModelError("phi is only defined here for alpha >= 0")
    return model.phi(alpha)


def phi_deriv(model: LevyInputModel, alpha, k: int):
    """Exact ``k``-th derivative of ``phi`` at ``alpha``."""
    if k < 1:
        raise ModelError("derivative order must be >= 1; use phi() for k = 0")
    return model.phi_deriv(alpha, int(k))


def _psi_root(model: LevyInputModel, xi: float) -> float:
    # phi(alpha) <= alpha, so phi(xi) <= xi and the root lies in [xi, inf)
    def f(a):
        return model.phi(a) - xi

    lo = xi
    hi = 2.0 * xi + 1.0
    for _ in range(_PSI_MAX_ITER):
        if f(hi) > 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ModelError(f"could not bracket psi({xi})")
    root, info = optimize.brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                                 maxiter=_PSI_MAX_ITER, full_output=True, disp=False)
    if not info.converged or abs(f(root)) > _PSI_RTOL * max(xi, 1.0):
        raise ModelError(f"psi root search did not converge for xi={xi}")
    return float(root)


def psi(model: LevyInputModel, xi: float) -> float:
    """Inverse Laplace exponent: the root ``alpha > psi(0)`` of ``phi(alpha) = xi``."""
    if not xi > 0:
        raise ModelError(f"psi requires xi > 0, got {xi!r}")
    return model.psi(float(xi))


@lru_cache(maxsize=None)
def _partitions(k: int) -> tuple:
    """All multiplicity vectors (m_1..m_k) with sum j*m_j = k, minus (0,..,0,1)."""
    out = []

    def rec(j, remaining, acc):
        if j == 0:
            if remaining == 0:
                out.append(tuple(reversed(acc)))
            return
        for m in range(remaining // j, -1, -1):
            rec(j - 1, remaining - m * j, acc + [m])

    rec(k, k, [])
    out = [m for m in out if not (m[-1] == 1 and sum(m) == 1)]
    weights = []
    for m in out:
        w = math.factorial(k)
        for j, mj in enumerate(m, start=1):
            w /= math.factorial(mj) * math.factorial(j) ** mj
        weights.append(w)
    return tuple(zip(out, weights))


def psi_derivs(model: LevyInputModel, xi: float, K: int) -> np.ndarray:
    """Derivatives ``psi^(1)(xi) .. psi^(K)(xi)`` by the Faa di Bruno recursion.

    Uses ``psi' = 1 / phi'(psi)`` and, for ``k >= 2``,
    ``psi^(k) = -(1/phi'(psi)) sum_{m in M_k°} k!/prod(m_j!) phi^(|m|)(psi) prod (psi^(j)/j!)^m_j``.
    """
    if K < 1:
        raise ModelError("K must be >= 1")
    if K > MAX_DERIV_ORDER:
        raise ModelError(f"psi derivatives are limited to order {MAX_DERIV_ORDER}, requested {K}")
    theta = psi(model, xi)
    dphi = {j: model.phi_deriv(theta, j) for j in range(1, K + 1)}
    d = np.empty(K + 1)
    d[1] = 1.0 / dphi[1]
    for k in range(2, K + 1):
        terms = []
        for m, w in _partitions(k):
            t = w * dphi[sum(m)]
            for j, mj in enumerate(m[:-1], start=1):
                if mj:
                    t *= d[j] ** mj
            terms.append(t)
        d[k] = -math.fsum(terms) / dphi[1]
        if not math.isfinite(d[k]):
            raise ModelError(f"psi derivative overflow at order {k}; maximum usable order is {k - 1}")
    return d[1:]


def stationary_moments(model: LevyInputModel) -> tuple[float, float]:
    """First two moments ``(E V, E V^2)`` of the stationary workload."""
    d1 = model.dphi0
    if d1 <= 0:
        raise ModelError("stationary moments require a stable model (phi'(0) > 0)")
    d2 = model.phi_deriv(0.0, 2)
    d3 = model.phi_deriv(0.0, 3)
    ev = d2 / (2.0 * d1)
    ev2 = 0.5 * (d2 / d1) ** 2 - d3 / (3.0 * d1)
    return float(ev), float(ev2)


def _require_stable(model):
    if not model.is_stable:
        raise ModelError("stationary functionals require a stable model (phi'(0) > 0)")


def stationary_lst(model: LevyInputModel, alpha) -> float:
    """``E exp(-alpha V) = alpha phi'(0) / phi(alpha)`` (generalised Pollaczek-Khintchine)."""
    _require_stable(model)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ModelError("alpha must be nonnegative")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(alpha > 0, alpha * model.dphi0 / model.phi(np.where(alpha > 0, alpha, 1.0)), 1.0)
    return out if out.ndim else float(out)


def stationary_v_exp(model: LevyInputModel, alpha: float) -> float:
    """``E[V exp(-alpha V)] = phi'(0)(alpha phi'(alpha) - phi(alpha)) / phi(alpha)^2``."""
    _require_stable(model)
    if alpha < 0:
        raise ModelError("alpha must be nonnegative")
    if alpha == 0:
        return stationary_moments(model)[0]
    return model.dphi0 * model._alpha_dphi_minus_phi(alpha) / model.phi(alpha) ** 2
