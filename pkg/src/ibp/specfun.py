"""Special functions: the incomplete gamma function Gamma(0, s) and log-gamma ratios.

``gamma0`` is the exponential integral E1 restricted to the right half-plane.
It is evaluated by its power series for |s| < 1 and by a continued fraction
(modified Lentz) otherwise.  ``gamma0_scaled`` returns e^s Gamma(0, s), which
stays representable where Gamma(0, s) itself underflows.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .core import ConvergenceError, DomainError

__all__ = [
    "EULER_GAMMA",
    "gamma0",
    "gamma0_scaled",
    "gamma0_series",
    "gamma0_contfrac",
    "log_gamma_ratio",
]

EULER_GAMMA = 0.57721566490153286061

_SERIES_RADIUS = 1.0
_SERIES_STOP = 1e-17
_CF_EPS = 1e-16
_CF_TINY = 1e-300
_MAX_ITER = 20000


def _as_domain(s):
    s = np.asarray(s)
    z = s.astype(complex)
    if np.any(~np.isfinite(z)):
        raise DomainError("Gamma(0, s) needs finite s")
    if np.any(z.real <= 0):
        raise DomainError("Gamma(0, s) is only supported for Re s > 0")
    return s, z


def _restore(s, out):
    if not np.iscomplexobj(s):
        out = out.real
    out = out.reshape(np.shape(s))
    return out if np.ndim(s) else out[()]


def _series(z):
    """-ln z - gamma - sum_{k>=1} (-z)^k / (k k!)."""
    z = np.atleast_1d(z)
    total = np.zeros_like(z)
    term = np.ones_like(z)  # (-z)^k / k!
    active = np.ones(z.shape, dtype=bool)
    for k in range(1, 200):
        term = term * (-z) / k
        contrib = term / k
        total = total + np.where(active, contrib, 0)
        active &= np.abs(contrib) >= _SERIES_STOP * np.maximum(np.abs(total), 1.0)
        if not active.any():
            break
    else:
        raise ConvergenceError("power series for Gamma(0, s) did not converge")
    return -np.log(z) - EULER_GAMMA - total


def _contfrac_scaled(z):
    """e^z Gamma(0, z) from the even continued fraction, modified Lentz."""
    z = np.atleast_1d(z)
    b = z + 1.0
    c = np.full_like(z, 1.0 / _CF_TINY)
    d = 1.0 / b
    h = d.copy()
    active = np.ones(z.shape, dtype=bool)
    for i in range(1, _MAX_ITER):
        a = -float(i * i)
        b = b + 2.0
        dn = a * d + b
        dn = np.where(np.abs(dn) < _CF_TINY, _CF_TINY, dn)
        d = np.where(active, 1.0 / dn, d)
        cn = b + a / c
        cn = np.where(np.abs(cn) < _CF_TINY, _CF_TINY, cn)
        c = np.where(active, cn, c)
        delta = np.where(active, c * d, 1.0)
        h = h * delta
        active &= np.abs(delta - 1.0) >= _CF_EPS
        if not active.any():
            return h
    raise ConvergenceError(
        "continued fraction for Gamma(0, s) did not converge",
        unconverged=int(active.sum()),
    )


def gamma0_series(s):
    """Power-series branch, exposed for cross-checks."""
    s, z = _as_domain(s)
    return _restore(s, _series(z))


def gamma0_contfrac(s):
    """Continued-fraction branch, exposed for cross-checks."""
    s, z = _as_domain(s)
    return _restore(s, np.exp(-np.atleast_1d(z)) * _contfrac_scaled(z))


def gamma0_scaled(s):
    """Return e^s Gamma(0, s) for Re s > 0.

    Real input gives real output.  Accepts scalars or arrays.
    """
    s, z = _as_domain(s)
    z = np.atleast_1d(z)
    out = np.empty_like(z)
    small = np.abs(z) < _SERIES_RADIUS
    if small.any():
        out[small] = np.exp(z[small]) * _series(z[small])
    if (~small).any():
        out[~small] = _contfrac_scaled(z[~small])
    return _restore(s, out)


def gamma0(s):
    """Incomplete gamma function Gamma(0, s) = E1(s) for Re s > 0.

    Parameters
    ----------
    s : complex or array_like
        Evaluation point(s), ``Re s > 0``.

    Returns
    -------
    complex or ndarray
        Real when ``s`` is real.  Underflows to zero for real ``s`` above ~745.

    Raises
    ------
    DomainError
        If ``Re s <= 0`` or ``s`` is not finite.
    """
    s, z = _as_domain(s)
    z = np.atleast_1d(z)
    out = np.empty_like(z)
    small = np.abs(z) < _SERIES_RADIUS
    if small.any():
        out[small] = _series(z[small])
    if (~small).any():
        big = z[~small]
        with np.errstate(under="ignore"):
            out[~small] = np.exp(-big) * _contfrac_scaled(big)
    return _restore(s, out)


def log_gamma_ratio(a, b):
    """ln Gamma(a) - ln Gamma(b) for positive ``a`` and ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0) or np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)):
        raise DomainError("log_gamma_ratio needs positive finite arguments")
    out = gammaln(a) - gammaln(b)
    return out if np.ndim(out) else float(out)
