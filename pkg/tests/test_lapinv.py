import math

import mpmath
import numpy as np
import pytest

from ibp import lapinv, mastereq
from ibp.core import ConvergenceError, DomainError, ProcessSpec
from ibp.specfun import EULER_GAMMA, gamma0


def test_p1_tilde_at_one():
    # [DERIVED] oracle: closed form with the specfun value of Gamma(0, 1)
    expected = 1.0 / (math.e * gamma0(1.0)) - 1.0
    assert lapinv.p1_tilde(1.0) == pytest.approx(expected, rel=1e-14)
    assert lapinv.p1_tilde(1.0).real == pytest.approx(0.676875, abs=1e-6)
    assert abs(lapinv.pm_tilde(1, 1.0) - lapinv.p1_tilde(1.0)) < 1e-10


@pytest.mark.parametrize("s", [10.0, 0.05, 2 + 3j, 0.3 - 40j])
def test_quadrature_matches_closed_form_for_m1(s):
    a = lapinv.pm_tilde(1, s)
    b = lapinv.p1_tilde(s)
    assert abs(a - b) <= 1e-10 * max(1.0, abs(b))


@pytest.mark.parametrize("m, s", [(3, 1 + 2j), (7, 0.2), (40, 0.05 + 0.5j), (2, 25 - 10j)])
def test_integral_against_mpmath(m, s):
    # [DERIVED] oracle: mpmath quadrature of the defining integral on the real axis
    f = lambda eta: mpmath.exp(-s * eta) * eta ** (m - 1) / (1 + eta) ** (m + 1)
    ref = complex(mpmath.quad(f, [0, m, 10 * m, mpmath.inf]))
    got = lapinv.pm_tilde_integral(m, s)
    assert abs(got - ref) <= 1e-10 * abs(ref)


def test_sum_over_m_is_one_over_s():
    s = 2.0
    total = sum(lapinv.pm_tilde(m, s) for m in range(1, 201))
    assert abs(total - 1 / s) < 1e-11


def test_recurrence_residual_example():
    assert abs(lapinv.recurrence_residual(5, 0.7)) < 1e-9
    assert abs(lapinv.recurrence_residual(1, 0.7)) < 1e-9


def test_small_s_limit():
    devs = []
    for s in (1e-3, 1e-5, 1e-7):
        val = s * lapinv.p1_tilde(s) * (-math.log(s) - EULER_GAMMA)
        devs.append(abs(val - 1))
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 1e-5


def test_conjugate_symmetry_and_real_axis_monotonicity():
    s = 0.4 + 1.3j
    for m in (1, 4):
        assert lapinv.pm_tilde(m, np.conj(s)) == pytest.approx(np.conj(lapinv.pm_tilde(m, s)), rel=1e-13)
    vals = [lapinv.pm_tilde(3, x).real for x in (0.1, 0.5, 1.0, 4.0, 20.0)]
    assert all(v > 0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_domain_errors():
    with pytest.raises(DomainError):
        lapinv.pm_tilde(2, -0.5)
    with pytest.raises(DomainError):
        lapinv.pm_tilde(0, 1.0)
    with pytest.raises(DomainError):
        lapinv.LaplaceQuery(1, 2j)
    assert lapinv.LaplaceQuery(2, 1.5).evaluate() == lapinv.pm_tilde(2, 1.5)


def test_moment_transforms():
    s = 0.8
    assert lapinv.moment_tilde(0, s) == pytest.approx(1 / s)
    # <m> obeys d<m>/dt = P_1 with <m>(0) = 1
    assert lapinv.moment_tilde(1, s) == pytest.approx((1 + lapinv.p1_tilde(s)) / s)


def test_known_pair_exponential():
    res = lapinv.euler_invert(lambda s: 1 / (1 + s), 1.0)
    assert abs(res.value - math.exp(-1)) < 1e-8


def test_parallel_nodes_bit_identical():
    c = lapinv.invert(3, 2.0, jobs=1)
    d = lapinv.invert(3, 2.0, jobs=2)
    assert c == d


def test_convergence_error_carries_diagnostics():
    with pytest.raises(ConvergenceError) as info:
        lapinv.invert(1, 1.0, n_terms=3, euler_depth=1, tol=1e-14)
    assert "error_estimate" in info.value.diagnostics
    assert "oscillation" in info.value.diagnostics


def test_invert_matches_master_equation():
    snap = mastereq.solve(ProcessSpec.noext(), 5.0, mastereq.TruncationPolicy(M=2000))
    assert abs(lapinv.invert(1, 5.0) - snap.probs[0]) < 1e-5
    assert abs(lapinv.invert(4, 5.0) - snap.probs[3]) < 1e-5


def test_first_moment_derivative_is_p1():
    # d<m>/dt = P_1, checked by central differences of the master-equation mean
    spec = ProcessSpec.noext()
    h = 1e-3
    policy = mastereq.TruncationPolicy(M=2048)
    for t in (1.0, 7.0, 50.0):
        lo, hi = mastereq.integrate(spec, [t - h, t + h], policy)
        m = lo.indices()
        deriv = (np.dot(m, hi.probs) - np.dot(m, lo.probs)) / (2 * h)
        assert abs(deriv - lapinv.invert(1, t)) < 1e-4


def test_long_time_p1_band():
    t = 1e6
    val = lapinv.invert(1, t) * math.log(t)
    assert abs(val - 1) <= 3 / math.log(t)


def test_invert_moment_linear_growth_band():
    t = 1e4
    ratio = lapinv.invert_moment(1, t) * math.log(t) / t
    assert 0.8 <= ratio <= 1.2
