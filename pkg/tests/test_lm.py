import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcvdloc.channel import FitParams, ModelContext, fit_model, residual_jacobian, residuals
from mcvdloc.errors import NonFiniteResidual, NonPositiveParameter, SingularSystem
from mcvdloc.lm import LmOptions, lm_minimize, solve_damped_step


def test_damped_step_examples():
    assert np.array_equal(solve_damped_step(np.eye(2), np.zeros(2), 1.0), np.zeros(2))
    assert np.allclose(solve_damped_step(np.eye(2), np.ones(2), 1.0), [-0.5, -0.5])


def test_damped_step_large_mu_limit():
    rng = np.random.default_rng(0)
    J = rng.normal(size=(10, 2))
    r = rng.normal(size=10)
    mu = 1e8
    step = solve_damped_step(J, r, mu)
    limit = -J.T @ r / mu
    assert np.linalg.norm(step - limit) <= 1e-6 * np.linalg.norm(limit)


def test_singular_at_zero_damping():
    with pytest.raises(SingularSystem):
        solve_damped_step(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2), 0.0)


def test_options_validation():
    for kwargs in ({"mu0": 0.0}, {"v": 1.0}, {"eps": 0.0}, {"max_iters": 0}):
        with pytest.raises(NonPositiveParameter):
            LmOptions(**kwargs)


def _linear_problem():
    x = np.arange(10.0)
    y = 3.0 * x - 2.0 + np.array([0.1, -0.2, 0.05, 0.0, 0.3, -0.1, 0.2, -0.3, 0.1, 0.0])
    A = np.column_stack([x, np.ones_like(x)])
    return A, y


def test_linear_least_squares():
    A, y = _linear_problem()
    res = lm_minimize(lambda b: A @ b - y, lambda b: A, [0.0, 0.0])
    exact = np.linalg.solve(A.T @ A, A.T @ y)
    assert res.converged
    assert np.allclose(res.beta, exact, rtol=0, atol=1e-10)


def test_gauss_newton_single_step():
    A, y = _linear_problem()
    step = solve_damped_step(A, A @ np.zeros(2) - y, 0.0)
    assert np.allclose(step, np.linalg.lstsq(A, y, rcond=None)[0], atol=1e-12)


def test_zero_residual_start():
    A, y = _linear_problem()
    exact = np.linalg.solve(A.T @ A, A.T @ y)
    yy = A @ exact
    res = lm_minimize(lambda b: A @ b - yy, lambda b: A, exact)
    assert res.converged and res.iterations <= 1


def _synthetic(a=0.7, d=8.0):
    t = np.linspace(0.02, 2.0, 100)
    ctx = ModelContext(1e4, 1.0, 100.0, t)
    return ctx, fit_model(FitParams(a, d), ctx, t)


def test_recovers_fit_model_parameters():
    ctx, counts = _synthetic()
    res = lm_minimize(
        lambda b: residuals(FitParams(*b), ctx, counts),
        lambda b: residual_jacobian(FitParams(*b), ctx),
        [0.5, 4.0],
    )
    assert res.converged
    assert res.beta[0] == pytest.approx(0.7, rel=1e-6)
    assert res.beta[1] == pytest.approx(8.0, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 1.0), st.floats(2.0, 30.0), st.floats(0.3, 0.9), st.floats(2.0, 30.0))
def test_accepted_ssr_strictly_decreases(a, d, a0, d0):
    ctx, counts = _synthetic(a, d)
    counts = counts + np.sin(np.arange(counts.size)) * 5

    def res_fn(b):
        if b[1] <= ctx.r:
            return np.full(counts.size, 1e3)
        return residuals(FitParams(*b), ctx, counts)

    res = lm_minimize(res_fn, lambda b: residual_jacobian(FitParams(*b), ctx), [a0, d0])
    traj = np.array(res.trajectory)
    assert np.all(np.diff(traj) < 0)
    assert len(traj) == res.iterations + 1
    assert res.final_ssr == traj[-1]


def test_rejected_steps_do_not_move_beta():
    # a residual that is only ever worse away from the start: every step is rejected
    def res_fn(b):
        return np.array([1.0 + 1e3 * float(np.sum((b - 1.0) ** 2))])

    res = lm_minimize(res_fn, lambda b: np.array([[1.0, 0.0]]), [1.0, 1.0], LmOptions(max_iters=3))
    assert np.array_equal(res.beta, [1.0, 1.0])
    # damping grows until the step falls below eps, which counts as converged
    assert res.iterations == 0
    assert res.rejections > 0


def test_deterministic():
    ctx, counts = _synthetic()
    runs = [
        lm_minimize(lambda b: residuals(FitParams(*b), ctx, counts),
                    lambda b: residual_jacobian(FitParams(*b), ctx), [0.5, 4.0])
        for _ in range(2)
    ]
    assert np.array_equal(runs[0].beta, runs[1].beta)
    assert runs[0].trajectory == runs[1].trajectory


def test_non_finite_start():
    with pytest.raises(NonFiniteResidual):
        lm_minimize(lambda b: b, lambda b: np.eye(2), [np.nan, 1.0])
