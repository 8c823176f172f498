import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcvdloc.channel import (
    FitParams,
    ModelContext,
    erfc,
    fit_model,
    fit_model_jacobian,
    residual_jacobian,
    residuals,
    siso_cumulative,
)
from mcvdloc.errors import DistanceInsideReceiver, LengthMismatch, NonPositiveParameter
from mcvdloc.sim import CumulativeTrace

mpmath.mp.dps = 40
TIMES = np.linspace(0.02, 2.0, 100)


def ctx(Q=1e4, r=1.0, D=100.0, t=TIMES):
    return ModelContext(Q, r, D, np.atleast_1d(t))


def test_erfc_examples():
    assert erfc(0.0) == 1.0
    assert erfc(-0.7) == pytest.approx(2 - erfc(0.7), abs=1e-15)
    assert abs(erfc(1.0) - 0.157299207050285) < 1e-12


def test_erfc_against_mpmath():
    xs = np.linspace(-6, 6, 2401)
    ref = np.array([float(mpmath.erfc(mpmath.mpf(float(x)))) for x in xs])
    assert np.max(np.abs(erfc(xs) - ref)) <= 1e-12


def test_siso_examples():
    c = ctx(t=[2.0])
    assert siso_cumulative(c, 1.0, 2.0) == pytest.approx(1e4)
    assert siso_cumulative(c, 5.0, 1e9) == pytest.approx(1e4 / 5, rel=1e-4)
    expected = 2000 * float(mpmath.erfc(4 / mpmath.sqrt(800)))
    assert siso_cumulative(c, 5.0, 2.0) == pytest.approx(expected, rel=1e-13)
    assert siso_cumulative(c, 5.0, 2.0) == pytest.approx(1683.0, abs=0.05)
    with pytest.raises(DistanceInsideReceiver):
        siso_cumulative(c, 0.5, 2.0)


def test_fit_model_examples():
    c = ctx()
    base = siso_cumulative(c, 7.0, TIMES)
    assert np.array_equal(fit_model(FitParams(1.0, 7.0), c, TIMES), base)
    assert np.all(fit_model(FitParams(0.0, 7.0), c, TIMES) == 0)
    assert np.allclose(fit_model(FitParams(0.5, 7.0), c, TIMES), 0.5 * base, rtol=0, atol=1e-12)


def test_far_tail_is_zero_smoothly():
    c = ctx(t=[0.01])
    assert siso_cumulative(c, 1000.0, 0.01) == 0.0
    da, dd = fit_model_jacobian(FitParams(1.0, 1000.0), c, 0.01)
    assert da == 0.0 and dd == 0.0


def test_context_validation():
    with pytest.raises(NonPositiveParameter):
        ModelContext(0, 1, 1, [1.0])
    with pytest.raises(NonPositiveParameter):
        ModelContext(1, 1, 1, [1.0, 0.5])


def _fd(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_jacobian_example_point():
    c = ctx(t=[1.0])
    p = FitParams(0.68, 5.0)
    da, dd = fit_model_jacobian(p, c, 1.0)
    assert da == pytest.approx(fit_model(FitParams(1.0, 5.0), c, 1.0), rel=1e-15)
    num_a = _fd(lambda a: fit_model(FitParams(a, 5.0), c, 1.0), 0.68, 0.68e-6)
    num_d = _fd(lambda d: fit_model(FitParams(0.68, d), c, 1.0), 5.0, 5e-6)
    assert abs(num_a - da) / abs(da) <= 1e-6
    assert abs(num_d - dd) / abs(dd) <= 1e-6
    assert dd < 0


@pytest.mark.parametrize("a", [0.2, 0.5, 1.0])
@pytest.mark.parametrize("d", [2.0, 5.0, 10.0, 20.0])
@pytest.mark.parametrize("t", [0.1, 1.0, 2.0])
def test_jacobian_grid(a, d, t):
    c = ctx(t=[t])
    da, dd = fit_model_jacobian(FitParams(a, d), c, t)
    num_a = _fd(lambda x: fit_model(FitParams(x, d), c, t), a, 1e-6 * a)
    num_d = _fd(lambda x: fit_model(FitParams(a, x), c, t), d, 1e-6 * d)
    assert abs(num_a - da) <= 1e-6 * abs(da)
    assert abs(num_d - dd) <= 1e-6 * abs(dd)


def test_residuals():
    c = ctx()
    p = FitParams(0.6, 8.0)
    trace = CumulativeTrace(1, TIMES, fit_model(p, c, TIMES))
    assert np.allclose(residuals(p, c, trace), 0.0, atol=1e-15)
    counts = np.arange(100.0)
    assert np.array_equal(residuals(FitParams(0.0, 8.0), c, counts, normalized=False), counts)
    assert np.allclose(residuals(FitParams(0.0, 8.0), c, counts), counts / 1e4)
    with pytest.raises(LengthMismatch):
        residuals(p, c, counts[:10])


def test_residual_jacobian_matches_fd():
    c = ctx()
    counts = fit_model(FitParams(0.7, 6.0), c, TIMES)
    beta = np.array([0.55, 7.5])
    J = residual_jacobian(FitParams(*beta), c)
    for j in range(2):
        h = np.zeros(2)
        h[j] = 1e-6 * beta[j]
        num = (residuals(FitParams(*(beta + h)), c, counts) - residuals(FitParams(*(beta - h)), c, counts)) / (2 * h[j])
        assert np.max(np.abs(num - J[:, j])) <= 1e-6 * np.max(np.abs(J[:, j]))


@given(
    st.floats(0.05, 3.0),
    st.floats(1.01, 50.0),
    st.floats(1.01, 50.0),
    st.floats(0.01, 5.0),
    st.floats(0.01, 5.0),
)
def test_monotonicity_and_bounds(a, d1, d2, t1, t2):
    c = ctx(t=[1.0])
    lo_d, hi_d = sorted((d1, d2))
    lo_t, hi_t = sorted((t1, t2))
    p = FitParams(a, lo_d)
    assert fit_model(p, c, lo_t) <= fit_model(p, c, hi_t) + 1e-9
    assert fit_model(FitParams(a, hi_d), c, hi_t) <= fit_model(p, c, hi_t) + 1e-9
    v = siso_cumulative(c, lo_d, lo_t)
    assert 0.0 <= v <= c.Q
    assert fit_model(FitParams(2 * a, lo_d), c, lo_t) == pytest.approx(2 * fit_model(p, c, lo_t), rel=1e-14)
