"""Closed-form distributions, moments, scaling functions and asymptotic laws.

Exact results and leading-order asymptotics are separate functions; nothing
here substitutes one for the other.  Products of powers and gamma ratios are
formed in log space and exponentiated once so that m up to ~1e6 is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from .core import DistributionSnapshot, DomainError, Engine, Kind, MomentSet, ProcessSpec, validate
from .specfun import log_gamma_ratio

__all__ = [
    "ScalingPoint",
    "critical_pm",
    "critical_moments",
    "immigration_pm",
    "immigration_scaling",
    "immigration_moments",
    "noext_small_m_asymptote",
    "noext_scaling_pm",
    "noext_moment_asymptote",
    "twotype_special_pm",
    "twotype_special_pm0",
    "twotype_special_pin",
    "twotype_special_p00",
    "twotype_special_gf",
    "snapshot",
    "support_size",
]

TAIL_TOL = 1e-12


@dataclass(frozen=True)
class ScalingPoint:
    mu: float
    value: float


def _check_counts(m, lowest, name="m"):
    m = np.asarray(m)
    if np.any(m < lowest) or np.any(np.floor(m) != m):
        raise DomainError(f"{name} must be an integer >= {lowest}")
    return m.astype(float)


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(~np.isfinite(t)):
        raise DomainError("t must be finite and >= 0")
    return t


def _check_beta(beta):
    if not (np.isfinite(beta) and beta > 0):
        raise DomainError("beta must be positive")
    return float(beta)


def _out(x):
    return x if np.ndim(x) else float(x)


def _negbin(m, t_ratio_log, base_log, shape):
    """exp( lnGamma(m+shape) - lnGamma(shape) - lnGamma(m+1) + m*t_ratio_log + base_log )."""
    return np.exp(gammaln(m + shape) - gammaln(shape) - gammaln(m + 1) + m * t_ratio_log + base_log)


# -- critical branching -----------------------------------------------------


def critical_pm(m, t):
    """P_m(t) = t^(m-1) / (1+t)^(m+1) for critical branching from one cell."""
    m = _check_counts(m, 1)
    t = _check_time(t)
    with np.errstate(divide="ignore"):
        logp = xlogy(m - 1, t) - (m + 1) * np.log1p(t)
    return _out(np.exp(logp))


def critical_moments(t, k_max=2):
    """Moments <m^k> = sum_{m>=1} m^k P_m(t) for k = 0..k_max.

    k <= 2 use the closed forms 1/(1+t), 1, 1+2t; higher orders are summed
    directly with a geometric tail bound below ``TAIL_TOL``.
    """
    t = float(_check_time(t))
    if k_max < 0:
        raise DomainError("k_max must be >= 0")
    closed = [1.0 / (1.0 + t), 1.0, 1.0 + 2.0 * t]
    values = closed[: k_max + 1]
    if k_max > 2:
        m = np.arange(1, support_size(ProcessSpec.critical(), t, k_max) + 1, dtype=float)
        p = critical_pm(m, t)
        values += [float(np.sum(m**k * p)) for k in range(3, k_max + 1)]
    return MomentSet(time=t, values=tuple(values))


# -- branching with immigration ---------------------------------------------


def immigration_pm(m, t, beta):
    """P_m(t) for a stem cell plus m-1 mortal cells, source rate ``beta``.

    Gamma(m-1+beta) / (Gamma(m) Gamma(beta)) * t^(m-1) / (1+t)^(m-1+beta).
    """
    m = _check_counts(m, 1)
    t = _check_time(t)
    beta = _check_beta(beta)
    k = m - 1
    with np.errstate(divide="ignore"):
        logp = (
            log_gamma_ratio(k + beta, beta)
            - gammaln(m)
            + xlogy(k, t)
            - (k + beta) * np.log1p(t)
        )
    return _out(np.exp(logp))


def immigration_scaling(mu, beta):
    """Scaling function Phi(mu) = mu^(beta-1) e^(-mu) / Gamma(beta)."""
    beta = _check_beta(beta)
    mu = float(mu)
    if mu < 0 or (mu == 0 and beta < 1):
        raise DomainError("Phi(mu) needs mu > 0 (mu = 0 allowed only for beta >= 1)")
    value = math.exp(xlogy(beta - 1, mu) - mu - math.lgamma(beta))
    return ScalingPoint(mu=mu, value=value)


def immigration_moments(t, k, beta):
    """Leading-order growth t^k Gamma(beta+k) / Gamma(beta) of <m^k>."""
    beta = _check_beta(beta)
    if k < 0:
        raise DomainError("k must be >= 0")
    t = float(_check_time(t))
    if k == 0:
        return 1.0
    return t**k * math.exp(log_gamma_ratio(beta + k, beta))


# -- branching without extinction: asymptotic laws ---------------------------


def _log_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 1):
        raise DomainError("asymptotic laws need t > 1")
    return np.log(t)


def noext_small_m_asymptote(m, t):
    """P_m(t) ~ 1/(m ln t), valid for t >> 1 and m << t."""
    m = _check_counts(m, 1)
    return _out(1.0 / (m * _log_t(t)))


def noext_scaling_pm(m, t):
    """Scaling form P_m(t) ~ e^(-m/t) / (m ln t)."""
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0):
        raise DomainError("m must be positive")
    t = np.asarray(t, dtype=float)
    return _out(np.exp(-m / t) / (m * _log_t(t)))


def noext_moment_asymptote(t, k):
    """<m^k> ~ (k-1)! t^k / ln t for k >= 1."""
    if k < 1:
        raise DomainError("k must be >= 1")
    lt = _log_t(t)
    return _out(math.factorial(k - 1) * np.asarray(t, dtype=float) ** k / lt)


# -- two-type branching with a source at r = 1/4, gamma = 1 -------------------


def _c(t, beta):
    return beta * -np.expm1(-t)


def twotype_special_pm(m, t, beta):
    """Probability of m progenitors (any number of post-mitotic cells).

    Negative binomial with shape 4*beta and success ratio (t/4)/(1+t/4).
    """
    m = _check_counts(m, 0)
    t = _check_time(t)
    beta = _check_beta(beta)
    q = t / 4.0
    with np.errstate(divide="ignore"):
        logr = np.log(q) - np.log1p(q)
    logr = np.where(m == 0, 0.0, logr)
    return _out(_negbin(m, logr, -4 * beta * np.log1p(q), 4 * beta))


def twotype_special_pm0(m, t, beta):
    """Probability of m progenitors and no post-mitotic cells.

    Gamma(m+4b)/(Gamma(4b) m!) e^{+b(1-e^-t)} (1+t/2)^(-4b) [(t/4)/(1+t/2)]^m,
    the Taylor coefficients of the generating function at y = 0.
    """
    m = _check_counts(m, 0)
    t = _check_time(t)
    beta = _check_beta(beta)
    with np.errstate(divide="ignore"):
        logr = np.log(t / 4.0) - np.log1p(t / 2.0)
    logr = np.where(m == 0, 0.0, logr)
    base = _c(t, beta) - 4 * beta * np.log1p(t / 2.0)
    return _out(_negbin(m, logr, base, 4 * beta))


def twotype_special_p00(t, beta):
    """Probability that the system holds no cells at all."""
    t = _check_time(t)
    beta = _check_beta(beta)
    return _out(np.exp(_c(t, beta) - 4 * beta * np.log1p(t / 2.0)))


def twotype_special_pin(n, t, beta):
    """Probability of n post-mitotic cells (any number of progenitors).

    e^c sum_{k=0}^{n} (-c)^k / k! P_{n-k}(t) with c = beta (1 - e^-t).
    """
    n_arr = _check_counts(n, 0, "n").astype(int)
    t = float(_check_time(t))
    beta = _check_beta(beta)
    top = int(np.max(n_arr)) if n_arr.size else 0
    c = float(_c(t, beta))
    p = np.atleast_1d(twotype_special_pm(np.arange(top + 1), t, beta))
    w = np.empty(top + 1)
    w[0] = math.exp(c)
    for j in range(1, top + 1):
        w[j] = w[j - 1] * (-c) / j
    pin = np.array([np.dot(w[: j + 1], p[j::-1]) for j in range(top + 1)])
    return _out(pin[n_arr])


def twotype_special_gf(x, y, t, beta):
    """Generating function exp[b(1-e^-t)(1-y)] / [1 + t(2-x-y)/4]^(4b)."""
    beta = _check_beta(beta)
    t = float(_check_time(t))
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    out = np.exp(_c(t, beta) * (1 - y) - 4 * beta * np.log(1 + t * (2 - x - y) / 4))
    return out if np.ndim(out) else complex(out)


# -- snapshots ----------------------------------------------------------------


def support_size(spec: ProcessSpec, t: float, k: int = 0, tol: float = TAIL_TOL) -> int:
    """Power-of-two M whose k-th moment tail beyond M is below ``tol``.

    The closed forms decay like m^(shape-1) q^m, so the tail is bounded by the
    last term over one minus the term ratio.
    """
    if spec.kind is Kind.CRITICAL:
        q, shape = t / (1.0 + t), 2.0
    elif spec.kind is Kind.IMMIGRATION:
        q, shape = t / (1.0 + t), spec.beta
    elif spec.kind is Kind.TWOTYPE:
        q, shape = (t / 4.0) / (1.0 + t / 4.0), 4 * spec.beta
    else:
        raise DomainError("no closed form for the no-extinction model")
    if q == 0:
        return 2
    M = 16
    while True:
        # term ~ M^(shape-1+k) q^M / Gamma(shape); ratio test against 1 - q
        log_term = (shape - 1 + k) * math.log(M) + M * math.log(q) - math.lgamma(shape)
        ratio = q * (1 + 1.0 / M) ** (shape - 1 + k)
        if ratio < 1 and log_term - math.log1p(-ratio) < math.log(tol):
            return M
        M *= 2
        if M > 1 << 26:
            raise DomainError("support too large for a dense snapshot")


def snapshot(spec: ProcessSpec, t: float, mmax: int | None = None, nmax: int | None = None) -> DistributionSnapshot:
    """Closed-form distribution at time ``t``.

    Critical and immigration processes are exact for any rates.  The two-type
    model has a closed form only at r = 1/4, gamma = 1, where the joint
    probabilities follow from the generating function via its marginals of
    progenitors; for a joint grid use :mod:`ibp.characteristics`.
    """
    validate(spec)
    t = float(t)
    if spec.kind is Kind.NOEXT:
        raise DomainError("the no-extinction model has no time-domain closed form")
    if spec.kind is Kind.TWOTYPE:
        if spec.r != 0.25 or spec.gamma != 1.0:
            raise DomainError("closed form only at r = 1/4, gamma = 1")
        M = mmax if mmax is not None else support_size(spec, t)
        m = np.arange(M)
        p = np.atleast_1d(twotype_special_pm(m, t, spec.beta))
        return DistributionSnapshot(
            time=t, probs=p, tail_mass=max(0.0, 1.0 - float(p.sum())), engine=Engine.CLOSED_FORM,
            origin=0, tolerance=1e-12, meta={"marginal": "progenitors"},
        )
    M = mmax if mmax is not None else support_size(spec, t)
    m = np.arange(1, M + 1)
    if spec.kind is Kind.CRITICAL:
        p = np.atleast_1d(critical_pm(m, t))
        extinct = t / (1.0 + t)
    else:
        p = np.atleast_1d(immigration_pm(m, t, spec.beta))
        extinct = 0.0
    tail = max(0.0, 1.0 - extinct - float(p.sum()))
    return DistributionSnapshot(
        time=t, probs=p, tail_mass=tail, engine=Engine.CLOSED_FORM,
        origin=1, extinct_mass=extinct, tolerance=1e-12,
    )
