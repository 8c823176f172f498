"""Per-receiver distance estimation: fit ``(a, d)`` of the two-parameter
absorption model to a cumulative trace with Levenberg-Marquardt."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import FitParams, ModelContext, fit_model, residual_jacobian, residuals
from .errors import AllZeroTrace, DegenerateVariance, LengthMismatch, NoConvergence, NonPositiveParameter
from .lm import LmOptions, LmResult, lm_minimize
from .scenario import SamplingPlan, Scenario
from .sim import CumulativeTrace, TrialEnsemble

A0 = 0.5
D_MAX_RADII = 100.0
# residual value returned outside the admissible d range; any step landing there is rejected
OUT_OF_DOMAIN = 1e3


@dataclass(frozen=True)
class DistanceEstimate:
    receiver_id: int
    a: float
    d: float
    sse: float
    r_square: float
    iterations: int
    converged: bool = True
    final_count: float = 0.0


def goodness_of_fit(resid, observed) -> tuple[float, float]:
    """SSE and coefficient of determination of a fit."""
    resid = np.asarray(resid, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if resid.shape != observed.shape:
        raise LengthMismatch(f"{resid.size} residuals for {observed.size} observations")
    if observed.size < 2:
        raise LengthMismatch("need at least two observations")
    sse = float(resid @ resid)
    centered = observed - observed.mean()
    sst = float(centered @ centered)
    if sst == 0.0:
        raise DegenerateVariance("all observations are equal")
    return sse, 1.0 - sse / sst


def normalized_distance_error(d_hat: float, d_true: float) -> float:
    if not d_true > 0:
        raise NonPositiveParameter(f"true distance must be > 0, got {d_true}")
    return abs(d_hat - d_true) / d_true


def initial_guess(trace: CumulativeTrace, ctx: ModelContext) -> np.ndarray:
    """Start from a=0.5 and the d that matches the last sample in the
    long-time limit ``Q a r / d``."""
    final = float(trace.counts[-1])
    d0 = ctx.r * ctx.Q * A0 / final if final > 0 else D_MAX_RADII * ctx.r
    d0 = min(max(d0, 1.5 * ctx.r), D_MAX_RADII * ctx.r)
    return np.array([A0, d0])


def estimate_distance(
    trace: CumulativeTrace,
    ctx: ModelContext,
    opts: LmOptions | None = None,
    beta0=None,
    d_max: float | None = None,
    return_lm: bool = False,
    min_samples: int = 4,
):
    """Fit ``(a, d)`` to ``trace`` by minimising the Q-normalised SSR.

    ``min_samples`` may be lowered to 2 (an exactly determined fit) for
    interval studies.
    """
    counts = np.asarray(trace.counts, dtype=float)
    if counts.size < max(min_samples, 2):
        raise LengthMismatch(f"need at least {max(min_samples, 2)} samples, got {counts.size}")
    if counts.shape != ctx.sample_times.shape:
        raise LengthMismatch("trace and model context lengths differ")
    if not np.any(counts > 0):
        raise AllZeroTrace(f"receiver {trace.receiver_id} absorbed no molecules")
    d_max = D_MAX_RADII * ctx.r if d_max is None else d_max
    bad = np.full(counts.size, OUT_OF_DOMAIN)

    def res(beta):
        if not ctx.r < beta[1] <= d_max:
            return bad
        return residuals(FitParams(beta[0], beta[1]), ctx, counts)

    def jac(beta):
        return residual_jacobian(FitParams(beta[0], beta[1]), ctx)

    start = initial_guess(trace, ctx) if beta0 is None else np.asarray(beta0, dtype=float)
    lm = lm_minimize(res, jac, start, opts)
    if not lm.converged and lm.iterations == 0:
        raise NoConvergence(f"receiver {trace.receiver_id}: LM made no progress from {start}")
    a, d = (float(v) for v in lm.beta)
    d = min(max(d, ctx.r), d_max)
    params = FitParams(a, d)
    r = residuals(params, ctx, counts)
    observed = counts / ctx.Q
    try:
        sse, r2 = goodness_of_fit(r, observed)
    except DegenerateVariance:
        sse, r2 = float(r @ r), float("nan")
    est = DistanceEstimate(trace.receiver_id, a, d, sse, r2, lm.iterations, lm.converged, float(counts[-1]))
    return (est, lm) if return_lm else est


def context_for(scenario: Scenario, plan: SamplingPlan, k: int) -> ModelContext:
    rx = scenario.receivers[k]
    return ModelContext(scenario.molecule_budget, rx.radius, scenario.medium.diffusion_coefficient,
                        plan.sample_times)


def estimate_all(
    traces: Sequence[CumulativeTrace],
    scenario: Scenario,
    plan: SamplingPlan,
    opts: LmOptions | None = None,
) -> list[DistanceEstimate | None]:
    """Estimate every receiver of one trial; receivers that cannot be fitted
    (no molecules or no progress) come back as ``None``."""
    out: list[DistanceEstimate | None] = []
    for k, tr in enumerate(traces):
        try:
            out.append(estimate_distance(tr, context_for(scenario, plan, k), opts))
        except (AllZeroTrace, NoConvergence):
            out.append(None)
    return out


def synthetic_trace(receiver_id: int, a: float, d: float, ctx: ModelContext) -> CumulativeTrace:
    """Noise-free trace drawn from the fit model itself."""
    counts = fit_model(FitParams(a, d), ctx, ctx.sample_times)
    return CumulativeTrace(receiver_id, ctx.sample_times, np.asarray(counts, dtype=float))


@dataclass
class IntervalRow:
    interval: float
    num_samples: int
    mean_error: dict[int, float]
    failures: dict[int, int]


def max_sample_interval_sweep(
    ensemble: TrialEnsemble,
    intervals: Sequence[float],
    tolerance: float = 1.1,
    receivers: Sequence[int] | None = None,
    opts: LmOptions | None = None,
) -> tuple[list[IntervalRow], float]:
    """Mean normalised distance error per receiver for each sampling interval,
    all rebuilt from the same absorption events.

    Returns the table and the largest interval whose error (averaged over the
    chosen receivers) stays within ``tolerance`` times that of the finest
    interval.
    """
    sc = ensemble.scenario
    total = ensemble.plan.duration
    idx = range(sc.K) if receivers is None else [sc.receiver_index(r) for r in receivers]
    rows: list[IntervalRow] = []
    for T in sorted(intervals):
        n = int(round(total / T))
        if abs(n * T - total) > 1e-9 * total:
            raise NonPositiveParameter(f"interval {T} does not divide the simulated duration {total}")
        plan = SamplingPlan(T, n)
        errs = {sc.receivers[k].id: [] for k in idx}
        fails = {sc.receivers[k].id: 0 for k in idx}
        for traces in ensemble.resample(plan):
            for k in idx:
                rid = sc.receivers[k].id
                try:
                    est = estimate_distance(traces[k], context_for(sc, plan, k), opts, min_samples=2)
                except (AllZeroTrace, NoConvergence, LengthMismatch):
                    fails[rid] += 1
                    continue
                errs[rid].append(normalized_distance_error(est.d, sc.distances[k]))
        rows.append(IntervalRow(T, n, {r: float(np.mean(v)) if v else float("nan") for r, v in errs.items()}, fails))
    finest = np.nanmean(list(rows[0].mean_error.values()))
    best = rows[0].interval
    for row in rows:
        if not np.nanmean(list(row.mean_error.values())) <= tolerance * finest:
            break
        best = row.interval
    return rows, best


__all__ = [
    "DistanceEstimate",
    "IntervalRow",
    "LmResult",
    "estimate_distance",
    "estimate_all",
    "goodness_of_fit",
    "initial_guess",
    "max_sample_interval_sweep",
    "normalized_distance_error",
    "synthetic_trace",
    "context_for",
]
