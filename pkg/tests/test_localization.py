import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from mcvdloc.distance import DistanceEstimate, context_for, synthetic_trace
from mcvdloc.errors import DegenerateGeometry, TooFewReceivers, TooFewUsableReceivers
from mcvdloc.experiments import grid_minimum
from mcvdloc.localization import (
    gradient_H,
    localize,
    localize_from_estimates,
    location_error,
    multilaterate_init,
    objective_H,
    select_receivers,
    steepest_descent,
)
from mcvdloc.scenario import SamplingPlan, cube_layout, make_scenario, validate_scenario
from mcvdloc.sim import CumulativeTrace

CUBE = np.array(cube_layout(5.0), dtype=float)
TN = np.array([0.0, 10.0, 0.0])


def exact(centers, p):
    return np.linalg.norm(np.asarray(centers) - p, axis=1)


def test_objective_examples():
    assert objective_H(TN, CUBE, exact(CUBE, TN)) == pytest.approx(0.0, abs=1e-20)
    assert objective_H((2, 0, 0), [(0, 0, 0)], [1.0]) == 9.0


def test_gradient_examples():
    pyth = [(3, 4, 0), (0, 3, 4), (4, 0, 3), (-3, -4, 0)]
    assert np.array_equal(gradient_H((0, 0, 0), pyth, [5.0] * 4), [0.0, 0.0, 0.0])
    assert np.array_equal(gradient_H((2, 0, 0), [(0, 0, 0)], [1.0]), [24.0, 0.0, 0.0])


def test_gradient_finite_differences():
    rng = np.random.default_rng(4)
    d = exact(CUBE, TN) * (1 + 0.05 * rng.standard_normal(4))
    for _ in range(20):
        p = rng.uniform(-15, 15, 3)
        g = gradient_H(p, CUBE, d)
        num = np.zeros(3)
        for i in range(3):
            h = np.zeros(3)
            h[i] = 1e-5
            num[i] = (objective_H(p + h, CUBE, d) - objective_H(p - h, CUBE, d)) / 2e-5
        assert np.linalg.norm(num - g) <= 1e-6 * np.linalg.norm(g)


def test_multilateration_examples():
    assert np.allclose(multilaterate_init(CUBE, [5 * math.sqrt(3)] * 4), 0.0, atol=1e-12)
    d = [math.sqrt(75), math.sqrt(75), math.sqrt(275), math.sqrt(275)]
    assert np.linalg.norm(np.array(multilaterate_init(CUBE, d)) - TN) <= 1e-9
    flat = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0)]
    with pytest.raises(DegenerateGeometry):
        multilaterate_init(flat, [1, 1, 1, 1])
    with pytest.raises(TooFewReceivers):
        multilaterate_init(CUBE[:3], [1, 1, 1])


coord = st.floats(-30, 30, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.tuples(coord, coord, coord))
def test_multilateration_exact_recovery(p):
    p = np.array(p)
    centers = np.array(cube_layout(10.0, full=True))
    assert np.linalg.norm(np.array(multilaterate_init(centers, exact(centers, p))) - p) <= 1e-9


def test_sd_keeps_exact_solution():
    d = exact(CUBE, TN)
    assert np.array_equal(steepest_descent(TN, CUBE, d), TN)


def test_sd_converges_from_perturbation():
    d = exact(CUBE, TN)
    p = steepest_descent(TN + 0.5, CUBE, d)
    assert np.linalg.norm(np.array(p) - TN) <= 1e-6


def test_sd_descent_property_and_grid_oracle():
    rng = np.random.default_rng(8)
    for _ in range(5):
        d = exact(CUBE, TN) * (1 + 0.03 * rng.standard_normal(4))
        p0 = multilaterate_init(CUBE, d)
        res = steepest_descent(p0, CUBE, d, full=True)
        assert np.all(np.diff(res.trajectory) < 0)
        assert res.objective <= objective_H(p0, CUBE, d)
        grid = grid_minimum(CUBE, d, np.array(p0), half_width=2.0, cell=0.05)
        assert np.max(np.abs(np.array(res.p) - grid)) <= 0.05


def test_grid_oracle_attains_nearest_point():
    d = exact(CUBE, TN)
    g = grid_minimum(CUBE, d, TN + 0.013, half_width=1.0, cell=0.05)
    assert np.max(np.abs(g - TN)) <= 0.025 + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.tuples(coord, coord, coord), st.tuples(coord, coord, coord), st.integers(0, 2**31))
def test_equivariance(u, p, seed):
    u, p = np.array(u), np.array(p)
    rng = np.random.default_rng(seed)
    d = exact(CUBE, p) * (1 + 0.02 * rng.standard_normal(4))
    rot = Rotation.random(random_state=seed).as_matrix()
    base0 = np.array(multilaterate_init(CUBE, d))
    base = np.array(steepest_descent(base0, CUBE, d))
    moved = CUBE + u
    t0 = np.array(multilaterate_init(moved, d))
    assert np.allclose(t0, base0 + u, atol=1e-9 * (1 + np.abs(u).max()) * 100)
    t1 = np.array(steepest_descent(t0, moved, d))
    scale = max(1.0, np.linalg.norm(base))
    assert np.linalg.norm(t1 - (base + u)) <= 1e-6 * scale
    r0 = np.array(multilaterate_init(CUBE @ rot.T, d))
    assert np.allclose(r0, rot @ base0, atol=1e-8 * scale)


def test_equivariance_exact_distances():
    rot = Rotation.from_euler("xyz", [0.3, -1.1, 2.0]).as_matrix()
    u = np.array([3.0, -7.0, 12.5])
    p = np.array([1.0, 4.0, -2.0])
    for centers, truth in ((CUBE + u, p + u), (CUBE @ rot.T, rot @ p)):
        d = exact(centers, truth)
        p0 = multilaterate_init(centers, d)
        assert np.linalg.norm(np.array(steepest_descent(p0, centers, d)) - truth) <= 1e-9


def _est(rid, final):
    return DistanceEstimate(rid, 0.5, 5.0, 0.0, 1.0, 1, True, final)


def test_select_receivers_examples():
    assert select_receivers([_est(i, 10) for i in (1, 2, 3, 4)], 4) == [1, 2, 3, 4]
    counts = (100, 90, 90, 80, 10, 5, 5, 1)
    assert select_receivers([_est(i + 1, c) for i, c in enumerate(counts)], 4) == [1, 2, 3, 4]
    shuffled = [_est(8, 90), _est(3, 90), _est(5, 100), _est(1, 80), _est(2, 5)]
    assert select_receivers(shuffled, 4) == [5, 3, 8, 1]
    traces = [CumulativeTrace(i, np.ones(1), np.array([c])) for i, c in enumerate((0, 5, 6, 7, 8), 1)]
    with pytest.raises(TooFewUsableReceivers):
        select_receivers(traces[:4], 4)
    assert select_receivers(traces, 4) == [5, 4, 3, 2]


def test_location_error_examples():
    assert location_error((1, 2, 3), (1, 2, 3)) == 0
    assert location_error((1, 0, 0), (0, 0, 0)) == 1
    assert location_error((1, 2, 2), (0, 0, 0)) == 3


def test_end_to_end_synthetic(cube4):
    sc = validate_scenario(cube4.with_transmitter((1.0, 9.0, -0.5)))
    plan = SamplingPlan(0.02, 100)
    a = (0.7, 0.6, 0.3, 0.35)
    traces = [synthetic_trace(rx.id, a[k], sc.distances[k], context_for(sc, plan, k))
              for k, rx in enumerate(sc.receivers)]
    res = localize(traces, sc, plan)
    assert location_error(res.p_hat, sc.transmitter) <= 1e-4
    assert res.objective <= res.objective_init
    assert sorted(res.used_receivers) == [1, 2, 3, 4]


def test_three_receivers_rejected():
    sc = make_scenario((0, 0, 0), cube_layout(5.0)[:3], 1.0, 100, 1000)
    plan = SamplingPlan(0.02, 100)
    traces = [CumulativeTrace(i + 1, plan.sample_times, np.ones(100)) for i in range(3)]
    with pytest.raises(TooFewReceivers):
        localize(traces, validate_scenario(sc), plan)


def test_coplanar_subset_falls_back_to_all_for_the_start():
    # best four receivers share z = 10; the fifth breaks the plane
    centers = [(-10, -10, 10), (10, -10, 10), (-10, 10, 10), (10, 10, 10), (0, 0, -10)]
    sc = validate_scenario(make_scenario((1, 2, 6), centers, 1.0, 100, 1000))
    est = [DistanceEstimate(rx.id, 0.5, d, 0, 1, 1, True, 100 - i)
           for i, (rx, d) in enumerate(zip(sc.receivers, sc.distances))]
    res = localize_from_estimates(est, sc, 4)
    assert res.used_receivers == [1, 2, 3, 4]
    assert location_error(res.p_hat, sc.transmitter) <= 1e-6
    with pytest.raises(DegenerateGeometry):
        localize_from_estimates(est[:4] + [None], sc, 4)
