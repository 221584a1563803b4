"""Two-type generating function by the method of characteristics.

The generating function G(x, y, T) = sum x^m y^n P_{m,n}(T) of the two-type
model with a stem-cell source solves a first-order PDE whose characteristics
obey

    dx/dt = x(1-y) - r(x-y)^2,    dy/dt = gamma (y-1),

with G(X, Y, T) = exp(beta * int_0^T [x(t) - 1] dt) along the characteristic
ending at (X, Y) at time T.  The y-equation is solved in closed form; x is
integrated backward from x(T) = X together with the running integral.

All nodes of a query batch are integrated by one vectorised Dormand-Prince
5(4) stepper in which every lane keeps its own step size, so a node's value
does not depend on which other nodes share the batch.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import AliasWarning, ConvergenceError, DistributionSnapshot, DomainError, Engine, StiffnessError
from .exact import twotype_special_gf

__all__ = [
    "GFQuery",
    "eval_gf",
    "eval_gf_many",
    "eval_gf_special",
    "extract_pmn",
    "unit_roots",
]

RTOL = 1e-10
ATOL = 1e-11
BLOWUP = 10.0
_MAX_STEPS = 200_000

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


@dataclass(frozen=True)
class GFQuery:
    """Evaluation point (X, Y, T) of the two-type generating function."""

    X: complex
    Y: complex
    T: float
    r: float
    gamma: float
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "X", complex(self.X))
        object.__setattr__(self, "Y", complex(self.Y))
        _check_params(self.r, self.gamma, self.beta, self.T)
        if abs(self.X) > 1 + 1e-12 or abs(self.Y) > 1 + 1e-12:
            raise DomainError("generating function queries need |X|, |Y| <= 1")


def _check_params(r, gamma, beta, T):
    if not 0 < r <= 0.5:
        raise DomainError(f"r={r} outside (0, 1/2]")
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    if not beta >= 0:
        raise DomainError("beta must be nonnegative")
    if not (T > 0 and math.isfinite(T)):
        raise DomainError("T must be positive and finite")


def _rhs(tau, x, ym1, r, gamma):
    y = 1.0 + ym1 * np.exp(-gamma * tau)
    d = x - y
    # dx/dtau = -dx/dt; the accumulator gains x - 1
    return -(x * (1.0 - y) - r * d * d), x - 1.0


def _integrate(X, Y, T, r, gamma, rtol, atol):
    """Return int_0^T [x(t) - 1] dt for every lane, integrating in tau = T - t."""
    X = np.asarray(X, dtype=complex).ravel()
    Y = np.asarray(Y, dtype=complex).ravel()
    n = X.size
    Ym1 = Y - 1.0
    tau = np.zeros(n)
    x = X.copy()
    acc = np.zeros(n, dtype=complex)
    h = np.full(n, min(T, 1e-2))
    active = np.ones(n, dtype=bool)
    for _ in range(_MAX_STEPS):
        if not active.any():
            return acc
        idx = np.flatnonzero(active)
        hh = np.minimum(h[idx], T - tau[idx])
        t0, x0, a0, ym1 = tau[idx], x[idx], acc[idx], Ym1[idx]
        kx, ka = [], []
        for s in range(7):
            xs = x0
            for j, a in enumerate(_A[s]):
                if a:
                    xs = xs + hh * a * kx[j]
            fx, fa = _rhs(t0 + _C[s] * hh, xs, ym1, r, gamma)
            kx.append(fx)
            ka.append(fa)
        x5 = x0 + hh * sum(b * k for b, k in zip(_B5, kx) if b)
        a5 = a0 + hh * sum(b * k for b, k in zip(_B5, ka) if b)
        ex = hh * sum(e * k for e, k in zip(_E, kx) if e)
        ea = hh * sum(e * k for e, k in zip(_E, ka) if e)
        sx = atol + rtol * np.maximum(np.abs(x0), np.abs(x5))
        sa = atol + rtol * np.maximum(np.abs(a0), np.abs(a5))
        err = np.sqrt(0.5 * ((np.abs(ex) / sx) ** 2 + (np.abs(ea) / sa) ** 2))
        ok = err <= 1.0
        with np.errstate(divide="ignore"):
            factor = np.where(err == 0, 5.0, np.clip(0.9 * err ** -0.2, 0.2, 5.0))
        factor = np.where(ok, factor, np.minimum(factor, 1.0))

        acc_idx = idx[ok]
        x[acc_idx] = x5[ok]
        acc[acc_idx] = a5[ok]
        tau[acc_idx] = t0[ok] + hh[ok]
        h[idx] = hh * factor
        if np.any(np.abs(x5[ok]) > BLOWUP):
            raise ConvergenceError(
                f"characteristic left |x| <= {BLOWUP}; query outside the validated domain",
                max_abs_x=float(np.max(np.abs(x5[ok]))),
            )
        if np.any(h[idx] < 1e-14 * T):
            raise StiffnessError("step size underflow along a characteristic")
        done = tau[idx] >= T
        active[idx[done]] = False
    raise ConvergenceError("characteristic integration exceeded the step limit")


def eval_gf_many(X, Y, T, r, gamma, beta, rtol=RTOL, atol=ATOL) -> np.ndarray:
    """Generating function at arrays of points ``X``, ``Y`` (same shape)."""
    _check_params(r, gamma, beta, T)
    X = np.asarray(X, dtype=complex)
    Y = np.asarray(Y, dtype=complex)
    if X.shape != Y.shape:
        raise DomainError("X and Y must have the same shape")
    if np.any(np.abs(X) > 1 + 1e-12) or np.any(np.abs(Y) > 1 + 1e-12):
        raise DomainError("generating function queries need |X|, |Y| <= 1")
    if beta == 0:
        return np.ones(X.shape, dtype=complex)
    integral = _integrate(X, Y, float(T), r, gamma, rtol, atol)
    return np.exp(beta * integral).reshape(X.shape)


def eval_gf(q: GFQuery, rtol=RTOL, atol=ATOL) -> complex:
    """G(X, Y, T) for one query by backward integration of the characteristic."""
    return complex(eval_gf_many([q.X], [q.Y], q.T, q.r, q.gamma, q.beta, rtol, atol)[0])


def eval_gf_special(q: GFQuery) -> complex:
    """Closed form of G at r = 1/4, gamma = 1."""
    if q.r != 0.25 or q.gamma != 1.0:
        raise DomainError("the elementary solution needs r = 1/4 and gamma = 1")
    if q.beta == 0:
        return 1.0 + 0j
    return complex(twotype_special_gf(q.X, q.Y, q.T, q.beta))


def unit_roots(N: int) -> np.ndarray:
    """N-th roots of unity with exactly conjugate pairs w[N-j] == conj(w[j])."""
    j = np.arange(N // 2 + 1)
    w = np.exp(2j * np.pi * j / N)
    w[0] = 1.0
    if N % 2 == 0:
        w[N // 2] = -1.0
    full = np.empty(N, dtype=complex)
    full[: N // 2 + 1] = w
    full[N // 2 + 1 :] = np.conj(w[1 : (N + 1) // 2][::-1])
    return full


def _tail_estimate(p: np.ndarray) -> float:
    """Geometric extrapolation of the mass past the end of a decaying marginal."""
    p = np.clip(p, 0, None)
    if p.size < 3 or p[-2] <= 0:
        return float(p[-1]) if p.size else 0.0
    q = min(p[-1] / p[-2], 0.999)
    return float(p[-1] * q / (1 - q))


def extract_pmn(
    r: float,
    gamma: float,
    beta: float,
    T: float,
    M_p: int,
    M_q: int,
    radius: float = 1.0,
    symmetry: bool = True,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> DistributionSnapshot:
    """Joint probabilities P_{m,n}(T), m < M_p, n < M_q, by 2-D discrete Fourier inversion.

    The generating function is sampled at x = radius * w_p^j, y = radius * w_q^k
    (roots of unity).  With ``symmetry`` only one node of each conjugate pair
    is integrated; the other is its complex conjugate.

    Raises
    ------
    ConvergenceError
        Propagated from the characteristic integration, or if the extracted
        coefficients are not real to 1e-10.

    Warns
    -----
    AliasWarning
        If the estimated mass outside the grid exceeds 1e-6.
    """
    for N in (M_p, M_q):
        if N < 2 or N & (N - 1):
            raise DomainError("grid sizes must be powers of two")
    if not 0 < radius <= 1:
        raise DomainError("sampling radius must lie in (0, 1]")
    _check_params(r, gamma, beta, T)
    xs = radius * unit_roots(M_p)
    ys = radius * unit_roots(M_q)
    J, K = np.meshgrid(np.arange(M_p), np.arange(M_q), indexing="ij")
    Xg, Yg = xs[J], ys[K]

    if symmetry:
        partner = ((-J) % M_p) * M_q + (-K) % M_q
        flat = J * M_q + K
        rep = flat <= partner
        G = np.empty((M_p, M_q), dtype=complex)
        G[rep] = eval_gf_many(Xg[rep], Yg[rep], T, r, gamma, beta, rtol, atol)
        mirror = ~rep
        G[mirror] = np.conj(G.ravel()[partner[mirror]])
    else:
        G = eval_gf_many(Xg, Yg, T, r, gamma, beta, rtol, atol)

    coeff = np.fft.fft2(G) / (M_p * M_q)
    if radius != 1.0:
        coeff = coeff / np.power(radius, J + K)
    imag = float(np.max(np.abs(coeff.imag)))
    if imag > 1e-10:
        raise ConvergenceError("extracted probabilities are not real", max_imag=imag)
    probs = coeff.real
    tail = _tail_estimate(probs.sum(axis=1)) + _tail_estimate(probs.sum(axis=0))
    if tail > 1e-6:
        warnings.warn(f"estimated mass outside the {M_p}x{M_q} grid is {tail:.2e}", AliasWarning, stacklevel=2)
    return DistributionSnapshot(
        time=float(T),
        probs=probs,
        tail_mass=tail,
        engine=Engine.CHARACTERISTICS,
        origin=0,
        tolerance=1e-8,
        meta={"radius": radius, "max_imag": imag, "most_negative": min(0.0, float(probs.min()))},
    )
