import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from ehi.quadrature import DivergenceError, integrate_log


def power(p, c=0.0):
    """log of c * s^p as a function of u = log s."""
    return lambda u: c + p * np.asarray(u)


def test_power_on_finite_interval():
    res = integrate_log(power(2.0), 0.0, 3.0)
    assert res.converged
    assert res.value == pytest.approx(9.0, rel=1e-12)


def test_tail_to_infinity():
    res = integrate_log(power(-2.0), 1.0, math.inf)
    assert res.value == pytest.approx(1.0, rel=1e-12)


def test_exponential_over_half_line():
    res = integrate_log(lambda u: -np.exp(u), 0.0, math.inf)
    assert res.value == pytest.approx(1.0, rel=1e-12)


def test_spans_many_decades():
    # int_0^1 s^(-0.999) ds = 1000, mass spread over thousands of decades
    res = integrate_log(power(-0.999), 0.0, 1.0, rtol=1e-10)
    assert res.value == pytest.approx(1000.0, rel=1e-6)


def test_zero_integrand():
    res = integrate_log(lambda u: np.full(np.shape(u), -np.inf), 0.0, math.inf)
    assert res.converged and res.value == 0.0


def test_breakpoint_kink():
    # s^-2 on (0.5, inf) with a jump at s = 1
    f = lambda u: np.where(np.asarray(u) < 0, math.log(3.0), 0.0) - 2 * np.asarray(u)
    res = integrate_log(f, 0.5, math.inf, breakpoints=(1.0,))
    assert res.value == pytest.approx(3.0 * 1.0 + 1.0, rel=1e-12)


def test_divergence_at_zero_detected():
    res = integrate_log(power(-1.0), 0.0, 1.0)
    assert not res.converged
    with pytest.raises(DivergenceError):
        integrate_log(power(-1.0), 0.0, 1.0, raise_on_failure=True)


def test_divergence_at_infinity_detected():
    assert not integrate_log(power(-1.0), 1.0, math.inf).converged
    # logarithmically slow divergence: 1/(s log s)
    f = lambda u: -np.asarray(u) - np.log(np.asarray(u))
    assert not integrate_log(f, math.e, math.inf).converged


def test_slowly_convergent_polylog_tail():
    # int_e^inf ds / (s log^2 s) = 1
    f = lambda u: -np.asarray(u) - 2 * np.log(np.asarray(u))
    res = integrate_log(f, math.e, math.inf)
    assert res.converged
    assert res.value == pytest.approx(1.0, rel=1e-6)


def test_bad_interval():
    with pytest.raises(ValueError):
        integrate_log(power(0.0), 2.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(p=st.floats(-0.95, 3.0), b=st.floats(0.1, 50.0))
def test_power_law_closed_form(p, b):
    res = integrate_log(power(p), 0.0, b)
    assert res.value == pytest.approx(b ** (p + 1) / (p + 1), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.01, 5.0), lam=st.floats(0.1, 20.0))
def test_matches_scipy_on_smooth_integrand(a, lam):
    # s e^{-lam s} / (1 + s) on [a, inf)
    f = lambda u: np.asarray(u) - lam * np.exp(u) - np.log1p(np.exp(u))
    ref, _ = integrate.quad(lambda s: s * math.exp(-lam * s) / (1 + s), a, math.inf,
                            epsabs=0, epsrel=1e-12, limit=400)
    res = integrate_log(f, a, math.inf)
    assert res.value == pytest.approx(ref, rel=1e-8, abs=1e-300)


def test_breakpoint_far_beyond_core_panel():
    # a kink many e-folds past the lower end must not fall into the mapped tail panel
    f = lambda u: np.where(np.asarray(u) <= math.log(0.1), -2 * np.asarray(u), -np.inf)
    for a in (1e-3, 1e-6):
        res = integrate_log(f, a, math.inf, breakpoints=(0.1,))
        assert res.value == pytest.approx(1 / a - 10, rel=1e-12)
