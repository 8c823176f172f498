"""Experiment runners behind the command-line interface: the end-to-end
pipeline over trials, parameter sweeps, receiving-probability maps and the
brute-force oracle checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .channel import FitParams, ModelContext, fit_model_jacobian, siso_cumulative
from .config import ExperimentConfig, exact_sim_step, step_for
from .distance import DistanceEstimate, context_for, estimate_all, synthetic_trace
from .errors import ConfigError, McvdError
from .localization import (
    LocalizationResult,
    gradient_H,
    localize_from_estimates,
    location_error,
    multilaterate_init,
    objective_H,
    steepest_descent,
)
from .scenario import Medium, Receiver, SamplingPlan, Scenario, Vec3, cube_layout, validate_scenario
from .sim import CumulativeTrace, add_gaussian_noise, run_trials, simulate_events, trial_seed


@dataclass
class TrialOutcome:
    trial: int
    status: str  # "ok" or an error code
    result: LocalizationResult | None = None
    delta_p: float = float("nan")
    estimates: list[DistanceEstimate | None] | None = None
    message: str = ""


def summarize(values: Sequence[float]) -> dict[str, float]:
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        nan = float("nan")
        return {"n": 0, "mean": nan, "median": nan, "q25": nan, "q75": nan}
    return {
        "n": int(v.size),
        "mean": float(np.mean(v)),
        "median": float(np.median(v)),
        "q25": float(np.quantile(v, 0.25)),
        "q75": float(np.quantile(v, 0.75)),
    }


def synthetic_traces(cfg: ExperimentConfig, scenario: Scenario, plan: SamplingPlan, trial: int,
                     seed: int) -> list[CumulativeTrace]:
    """Traces drawn from the fit model at the true distances, optionally
    with additive Gaussian noise."""
    a = cfg.synthetic_a or (1.0,)
    if len(a) == 1:
        a = a * scenario.K
    rng = np.random.default_rng(trial_seed(seed, trial))
    out = []
    for k, rx in enumerate(scenario.receivers):
        tr = synthetic_trace(rx.id, a[k], scenario.distances[k], context_for(scenario, plan, k))
        if cfg.noise_variance > 0:
            tr = add_gaussian_noise(tr, cfg.noise_variance, rng)
        out.append(tr)
    return out


def trial_traces(cfg: ExperimentConfig, scenario: Scenario, seed: int, threads: int = 1,
                 plan: SamplingPlan | None = None) -> list[list[CumulativeTrace]]:
    plan = plan or cfg.plan
    scenario = validate_scenario(scenario)
    if cfg.mode == "synthetic":
        return [synthetic_traces(cfg, scenario, plan, i, seed) for i in range(cfg.trials)]
    ens = run_trials(scenario, plan, step_for(cfg, scenario, plan), seed, cfg.trials,
                     coarse=cfg.coarse, policy=cfg.absorption, threads=threads)
    return ens.traces


def localize_trials(
    per_trial: Sequence[Sequence[CumulativeTrace]],
    scenario: Scenario,
    plan: SamplingPlan,
    subset=None,
) -> list[TrialOutcome]:
    """Fit and localise every trial; failures are recorded, never raised."""
    scenario = validate_scenario(scenario)
    outcomes = []
    for i, traces in enumerate(per_trial):
        try:
            est = estimate_all(traces, scenario, plan)
        except McvdError as exc:
            outcomes.append(TrialOutcome(i, exc.code, message=str(exc)))
            continue
        outcomes.append(_locate(i, est, scenario, subset))
    return outcomes


def _locate(i, est, scenario, subset) -> TrialOutcome:
    try:
        res = localize_from_estimates(est, scenario, subset)
    except McvdError as exc:
        return TrialOutcome(i, exc.code, estimates=est, message=str(exc))
    return TrialOutcome(i, "ok", res, location_error(res.p_hat, scenario.transmitter), est)


def run_pipeline(cfg: ExperimentConfig, threads: int = 1, scenario: Scenario | None = None,
                 seed: int | None = None) -> list[TrialOutcome]:
    scenario = scenario or cfg.scenario
    seed = cfg.seed if seed is None else seed
    try:
        scenario = validate_scenario(scenario)
    except McvdError as exc:
        return [TrialOutcome(i, exc.code, message=str(exc)) for i in range(cfg.trials)]
    per_trial = trial_traces(cfg, scenario, seed, threads)
    return localize_trials(per_trial, scenario, cfg.plan, cfg.subset)


# --- sweeps -----------------------------------------------------------------

SPHERE8_UNIFORM = [
    (sx, sy, sz) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)
]
_R57 = math.sqrt(57) / 5
SPHERE8_SKEWED = [
    (0.6, -0.6, -_R57), (0.6, -0.6, _R57), (0.6, 0.6, _R57), (0.6, 0.6, -_R57),
    (1, -1, -1), (1, -1, 1), (1, 1, -1), (1, 1, 1),
]


def topology_centers(spec: str) -> list[tuple[float, float, float]]:
    """Receiver centres for a topology name ``kind:size``.

    ``cube4:h`` alternate vertices of a cube with half-side h, ``cube8:h`` all
    eight vertices, ``sphere8:d`` / ``sphere8skew:d`` eight receivers on a
    sphere of radius d around the origin, evenly or unevenly spread.
    """
    try:
        kind, size = spec.split(":")
        size = float(size)
    except ValueError:
        raise ConfigError(f"topology must look like kind:size, got {spec!r}") from None
    if kind == "cube4":
        return cube_layout(size)
    if kind == "cube8":
        return cube_layout(size, full=True)
    if kind in ("sphere8", "sphere8skew"):
        base = SPHERE8_UNIFORM if kind == "sphere8" else SPHERE8_SKEWED
        return [tuple(size * c / math.sqrt(3) for c in v) for v in base]
    raise ConfigError(f"unknown topology kind {kind!r}")


def apply_axis(scenario: Scenario, axis: str, value: str) -> Scenario:
    """Scenario variant for one simulation-stage sweep value."""
    try:
        if axis == "radius":
            r = float(value)
            return replace(scenario, receivers=tuple(Receiver(rx.id, rx.center, r) for rx in scenario.receivers),
                           distances=None)
        if axis == "Q":
            return replace(scenario, molecule_budget=int(float(value)), distances=None)
        if axis == "D":
            return replace(scenario, medium=Medium(float(value), scenario.medium.flow), distances=None)
        if axis == "flow_y":
            return replace(scenario, medium=Medium(scenario.medium.diffusion_coefficient, Vec3(0.0, float(value), 0.0)),
                           distances=None)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for sweep axis {axis}") from None
    if axis == "topology":
        r = float(min(scenario.radii))
        centers = topology_centers(value)
        rxs = tuple(Receiver(i + 1, Vec3.of(c), r) for i, c in enumerate(centers))
        return replace(scenario, receivers=rxs, distances=None)
    raise ConfigError(f"axis {axis!r} is not a simulation-stage axis")


@dataclass
class SweepRow:
    axis: str
    value: str
    tn: Vec3
    outcome: TrialOutcome


def run_sweep(cfg: ExperimentConfig, axis: str | None = None, values: Sequence[str] | None = None,
              threads: int = 1) -> list[SweepRow]:
    """Localisation error for every (axis value, transmitter position, trial).

    Simulation-stage axes rebuild the scenario per value. ``sample_interval``
    and ``subset`` only change the estimation stage, so one ensemble per
    transmitter position is simulated and reused. Every value shares the
    seeds of its transmitter position (common random numbers).
    """
    axis = axis or cfg.sweep_axis
    values = list(values if values is not None else cfg.sweep_values)
    if axis is None:
        axis, values = "none", ["-"]
    rows: list[SweepRow] = []
    for ti, tn in enumerate(cfg.tn_positions()):
        seed = trial_seed(cfg.seed, ti)
        base = cfg.scenario.with_transmitter(tn)
        if axis in ("sample_interval", "subset"):
            rows += _estimation_sweep(cfg, base, axis, values, seed, tn, threads)
            continue
        for value in values:
            sc = base if axis == "none" else apply_axis(base, axis, value)
            outcomes = run_pipeline(cfg, threads, sc, seed)
            rows += [SweepRow(axis, value, tn, o) for o in outcomes]
    return rows


def _estimation_sweep(cfg, base, axis, values, seed, tn, threads) -> list[SweepRow]:
    try:
        sc = validate_scenario(base)
    except McvdError as exc:
        return [SweepRow(axis, v, tn, TrialOutcome(i, exc.code, message=str(exc)))
                for v in values for i in range(cfg.trials)]
    rows = []
    if axis == "subset":
        per_trial = trial_traces(cfg, sc, seed, threads)
        estimates = [estimate_all(tr, sc, cfg.plan) for tr in per_trial]
        for value in values:
            subset = value if value == "all" else int(value)
            rows += [SweepRow(axis, value, tn, _locate(i, est, sc, subset)) for i, est in enumerate(estimates)]
        return rows
    if cfg.mode == "synthetic":
        raise ConfigError("sample_interval sweeps need particle mode")
    step = step_for(cfg, sc)
    ens = run_trials(sc, cfg.plan, step, seed, cfg.trials, coarse=cfg.coarse, policy=cfg.absorption,
                     threads=threads)
    total = cfg.plan.duration
    for value in values:
        T = float(value)
        n = int(round(total / T))
        if n < 4 or abs(n * T - total) > 1e-9 * total:
            raise ConfigError(f"sample interval {value} must divide the duration {total} into >= 4 samples")
        plan = SamplingPlan(T, n)
        outcomes = localize_trials(ens.resample(plan), sc, plan, cfg.subset)
        rows += [SweepRow(axis, value, tn, o) for o in outcomes]
    return rows


def sweep_summary(rows: Sequence[SweepRow]) -> list[dict]:
    groups: dict[tuple, list[SweepRow]] = {}
    for row in rows:
        groups.setdefault((row.axis, row.value, tuple(row.tn)), []).append(row)
    out = []
    for (axis, value, tn), grp in groups.items():
        stats = summarize([r.outcome.delta_p for r in grp if r.outcome.status == "ok"])
        out.append({
            "axis": axis, "value": value, "tn": Vec3(*tn), "trials": len(grp),
            "failed": sum(r.outcome.status != "ok" for r in grp), **stats,
        })
    return out


# --- probability map ----------------------------------------------------------

def probability_map(cfg: ExperimentConfig, threads: int = 1):
    from .sim import receiving_probability_map

    if cfg.grid is None:
        raise ConfigError("probability map needs a 'grid' entry in the config")
    step = step_for(cfg, cfg.scenario)
    return receiving_probability_map(cfg.scenario, cfg.plan, cfg.grid.points(), step, cfg.seed,
                                     trials=cfg.trials, coarse=cfg.coarse, threads=threads,
                                     policy=cfg.absorption)


# --- oracle checks ------------------------------------------------------------

@dataclass
class OracleCheck:
    name: str
    deviation: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.deviation <= self.tolerance)


def grid_minimum(receivers, distances, center, half_width: float = 2.0, cell: float = 0.05) -> np.ndarray:
    """Brute-force minimiser of H over a cubic lattice around ``center``."""
    n = int(round(2 * half_width / cell)) + 1
    axis = np.linspace(-half_width, half_width, n)
    c = np.asarray(receivers, dtype=float).reshape(-1, 3)
    d2 = np.asarray(distances, dtype=float) ** 2
    X, Y, Z = np.meshgrid(axis + center[0], axis + center[1], axis + center[2], indexing="ij")
    H = np.zeros_like(X)
    for (cx, cy, cz), dk2 in zip(c, d2):
        H += ((X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2 - dk2) ** 2
    i = np.unravel_index(np.argmin(H), H.shape)
    return np.array([X[i], Y[i], Z[i]])


def sd_vs_grid(receivers, distances, cell: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    p0 = multilaterate_init(receivers, distances)
    p_sd = np.array(steepest_descent(p0, receivers, distances))
    return p_sd, grid_minimum(receivers, distances, np.array(p0), cell=cell)


def central_difference(f, x, h):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i] if np.ndim(h) else h
        g[i] = (f(x + e) - f(x - e)) / (2 * e[i])
    return g


# keeps the sampling error of the simulated count near 1% at typical ranges
ORACLE_MIN_Q = 100_000


def oracle_report(cfg: ExperimentConfig, noise: float = 0.02) -> list[OracleCheck]:
    sc = validate_scenario(cfg.scenario)
    checks = []

    # (i) steepest descent vs lattice search on perturbed distances
    if sc.K >= 4:
        rng = np.random.default_rng(trial_seed(cfg.seed, 0))
        d = np.asarray(sc.distances) * (1 + noise * rng.standard_normal(sc.K))
        p_sd, p_grid = sd_vs_grid(sc.centers, d)
        dev = float(np.max(np.abs(p_sd - p_grid)))
        checks.append(OracleCheck("sd_vs_grid", dev, 0.05, f"sd={p_sd.tolist()} grid={p_grid.tolist()}"))

    # (ii) simulated single receiver vs the closed form; always the exact
    # simulator, since the coarse profile is biased by construction
    rx = sc.receivers[0]
    lone = validate_scenario(Scenario(sc.transmitter, (rx,), Medium(sc.medium.diffusion_coefficient),
                                          max(sc.molecule_budget, ORACLE_MIN_Q)))
    step = exact_sim_step(lone.medium.diffusion_coefficient, rx.radius, cfg.plan.sample_interval)
    n_steps = int(round(cfg.plan.duration / step))
    ev = simulate_events(lone, n_steps, step, trial_seed(cfg.seed, 1), policy="bridge")
    ctx = ModelContext(lone.molecule_budget, rx.radius, lone.medium.diffusion_coefficient, [cfg.plan.duration])
    expected = float(siso_cumulative(ctx, lone.distances[0], cfg.plan.duration))
    got = ev.absorbed_by_step(0, n_steps)
    rel = abs(got - expected) / expected if expected > 0 else float("inf")
    checks.append(OracleCheck("siso_sim_vs_closed_form", rel, 0.03, f"simulated={got} expected={expected:.3f}"))

    # (iii) analytic derivatives vs central differences
    worst = 0.0
    for a in (0.2, 0.5, 1.0):
        for dd in (2.0, 5.0, 10.0, 20.0):
            for t in (0.1, 1.0, 2.0):
                c = ModelContext(1e4, 1.0, 100.0, [t])
                analytic = np.array([float(x) for x in fit_model_jacobian(FitParams(a, dd), c, t)])
                f = lambda b: float(siso_cumulative(c, b[1], t)) * b[0]
                numeric = central_difference(f, [a, dd], [1e-6 * a, 1e-6 * dd])
                worst = max(worst, float(np.max(np.abs(numeric - analytic) / np.maximum(np.abs(analytic), 1e-300))))
    checks.append(OracleCheck("fit_jacobian_vs_fd", worst, 1e-6))

    if sc.K >= 1:
        rng = np.random.default_rng(trial_seed(cfg.seed, 2))
        d = np.asarray(sc.distances)
        worst = 0.0
        for _ in range(20):
            p = np.array(sc.transmitter) + 3.0 * rng.standard_normal(3)
            analytic = gradient_H(p, sc.centers, d)
            numeric = central_difference(lambda q: objective_H(q, sc.centers, d), p, 1e-5)
            worst = max(worst, float(np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic)))
        checks.append(OracleCheck("grad_H_vs_fd", worst, 1e-6))
    return checks
