"""Transmitter localisation from per-receiver distance estimates.

The objective is ``H(p) = sum_k (||p - p_k||^2 - d_k^2)^2``. A linear
multilateration solve gives the starting point and steepest descent with
halving backtracking refines it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distance import DistanceEstimate, context_for, estimate_distance
from .errors import AllZeroTrace, DegenerateGeometry, NoConvergence, TooFewReceivers, TooFewUsableReceivers
from .lm import LmOptions
from .scenario import Receiver, SamplingPlan, Scenario, Vec3
from .sim import CumulativeTrace

MIN_RECEIVERS = 4
COND_LIMIT = 1e10


def _centers(receivers) -> np.ndarray:
    if isinstance(receivers, np.ndarray):
        return receivers.reshape(-1, 3)
    return np.array([rx.center if isinstance(rx, Receiver) else rx for rx in receivers], dtype=float).reshape(-1, 3)


def objective_H(p, receivers, distances) -> float:
    c = _centers(receivers)
    d = np.asarray(distances, dtype=float)
    diff = np.asarray(p, dtype=float) - c
    e = np.einsum("ij,ij->i", diff, diff) - d * d
    return float(e @ e)


def gradient_H(p, receivers, distances) -> np.ndarray:
    c = _centers(receivers)
    d = np.asarray(distances, dtype=float)
    diff = np.asarray(p, dtype=float) - c
    e = np.einsum("ij,ij->i", diff, diff) - d * d
    return 4.0 * (e @ diff)


def multilaterate_init(receivers, distances) -> Vec3:
    """Linear least-squares fix from differences of the sphere equations,
    referenced to the last receiver."""
    c = _centers(receivers)
    d = np.asarray(distances, dtype=float)
    K = c.shape[0]
    if K < MIN_RECEIVERS:
        raise TooFewReceivers(f"need at least {MIN_RECEIVERS} receivers, got {K}")
    if d.shape != (K,):
        raise ValueError(f"{d.size} distances for {K} receivers")
    M = np.einsum("ij,ij->i", c, c)
    A = 2.0 * (c[-1] - c[:-1])
    b = -M[:-1] + M[-1] + d[:-1] ** 2 - d[-1] ** 2
    AtA = A.T @ A
    if np.linalg.matrix_rank(A) < 3 or np.linalg.cond(AtA) > COND_LIMIT:
        raise DegenerateGeometry("receiver centres are (nearly) coplanar; position is unobservable")
    p = np.linalg.solve(AtA, A.T @ b)
    return Vec3.of(p)


@dataclass(frozen=True)
class SdOptions:
    lam: float = 0.5
    max_iters: int = 500
    grad_tol: float = 1e-9  # relative to sum_k 4 d_k^3
    min_step: float = 1e-15


@dataclass
class SdResult:
    p: Vec3
    iterations: int
    objective: float
    trajectory: list[float] = field(default_factory=list)
    points: list[Vec3] = field(default_factory=list)


def steepest_descent(p0, receivers, distances, lam: float = 0.5, opts: SdOptions | None = None,
                     full: bool = False):
    """Minimise H from ``p0``; every accepted iterate strictly lowers H.

    The trial step starts at ``1 / (4 sum_k d_k^2)``, capped so the move is
    no longer than half the smallest distance, and is halved (factor ``lam``)
    until H decreases. The cap keeps a far-off start from jumping across the
    receivers into the mirror-image minimum.
    """
    opts = opts or SdOptions(lam=lam)
    c = _centers(receivers)
    d = np.asarray(distances, dtype=float)
    p = np.array(p0, dtype=float)
    h = objective_H(p, c, d)
    s0 = 1.0 / (4.0 * float(np.sum(d * d)))
    gtol = opts.grad_tol * 4.0 * float(np.sum(d**3))
    max_move = 0.5 * float(np.min(d))
    res = SdResult(Vec3.of(p), 0, h, [h], [Vec3.of(p)])
    for it in range(opts.max_iters):
        g = gradient_H(p, c, d)
        if np.linalg.norm(g) < gtol or h == 0.0:
            break
        gnorm = np.linalg.norm(g)
        s = min(s0, max_move / gnorm)
        while s >= opts.min_step:
            trial = p - s * g
            ht = objective_H(trial, c, d)
            if ht < h:
                break
            s *= lam
        else:
            break
        p, h = trial, ht
        res.iterations = it + 1
        res.trajectory.append(h)
        res.points.append(Vec3.of(p))
    res.p = Vec3.of(p)
    res.objective = h
    return res if full else res.p


def select_receivers(items: Sequence, k: int) -> list[int]:
    """Ids of the ``k`` receivers with the largest final cumulative count.

    ``items`` may hold traces or distance estimates; ``None`` entries (failed
    fits) and receivers with no molecules are skipped. Ties go to the lower id.
    """
    if k < MIN_RECEIVERS:
        raise TooFewReceivers(f"subset size must be >= {MIN_RECEIVERS}, got {k}")
    scored = []
    for it in items:
        if it is None:
            continue
        final = it.final if isinstance(it, CumulativeTrace) else it.final_count
        if final > 0:
            scored.append((-final, it.receiver_id))
    if len(scored) < k:
        raise TooFewUsableReceivers(f"only {len(scored)} usable receivers for a subset of {k}")
    scored.sort()
    return [rid for _, rid in scored[:k]]


def location_error(p_hat, p_true) -> float:
    return float(np.linalg.norm(np.asarray(p_hat, dtype=float) - np.asarray(p_true, dtype=float)))


@dataclass
class LocalizationResult:
    p_hat: Vec3
    p_init: Vec3
    objective: float
    objective_init: float
    sd_iterations: int
    used_receivers: list[int]
    per_receiver_estimates: list[DistanceEstimate]
    lm_iterations: int = 0


ALL = "all"


def default_subset(K: int) -> int:
    return K if K <= MIN_RECEIVERS else MIN_RECEIVERS


def _usable(estimates) -> list[DistanceEstimate]:
    return [e for e in estimates if e is not None and e.final_count > 0]


def localize_from_estimates(
    estimates: Sequence[DistanceEstimate | None],
    scenario: Scenario,
    subset: int | str | None = None,
    lam: float = 0.5,
    sd_opts: SdOptions | None = None,
) -> LocalizationResult:
    """Multilaterate and refine from already-fitted distances.

    ``subset`` is the number of highest-count receivers to use, ``None`` for
    the default (all of them up to four) or ``"all"`` for every receiver
    that produced a fit. If the chosen receivers are coplanar the starting
    point comes from all usable receivers instead; descent still runs on the
    chosen subset only.
    """
    if scenario.K < MIN_RECEIVERS:
        raise TooFewReceivers(f"need at least {MIN_RECEIVERS} receivers, got {scenario.K}")
    usable = _usable(estimates)
    if subset == ALL:
        k = max(len(usable), MIN_RECEIVERS)
    else:
        k = default_subset(scenario.K) if subset is None else int(subset)
    used = select_receivers(estimates, k)
    by_id = {e.receiver_id: e for e in usable}
    chosen = [by_id[rid] for rid in used]

    def geometry(ests):
        centers = np.array([scenario.receivers[scenario.receiver_index(e.receiver_id)].center for e in ests])
        return centers, np.array([e.d for e in ests])

    centers, dists = geometry(chosen)
    try:
        p0 = multilaterate_init(centers, dists)
    except DegenerateGeometry:
        if len(usable) <= len(chosen):
            raise
        p0 = multilaterate_init(*geometry(usable))
    sd = steepest_descent(p0, centers, dists, lam=lam, opts=sd_opts, full=True)
    return LocalizationResult(
        p_hat=sd.p,
        p_init=p0,
        objective=sd.objective,
        objective_init=sd.trajectory[0],
        sd_iterations=sd.iterations,
        used_receivers=used,
        per_receiver_estimates=[e for e in estimates if e is not None],
        lm_iterations=sum(e.iterations for e in chosen),
    )


def localize(
    traces: Sequence[CumulativeTrace],
    scenario: Scenario,
    plan: SamplingPlan,
    subset: int | str | None = None,
    lm_opts: LmOptions | None = None,
    lam: float = 0.5,
    sd_opts: SdOptions | None = None,
) -> LocalizationResult:
    """Full pipeline for one trial: fit every receiver, keep the best
    ``subset`` by received count, multilaterate, refine."""
    if scenario.K < MIN_RECEIVERS:
        raise TooFewReceivers(f"need at least {MIN_RECEIVERS} receivers, got {scenario.K}")
    estimates: list[DistanceEstimate | None] = []
    for k, tr in enumerate(traces):
        try:
            estimates.append(estimate_distance(tr, context_for(scenario, plan, k), lm_opts))
        except (AllZeroTrace, NoConvergence):
            estimates.append(None)
    return localize_from_estimates(estimates, scenario, subset, lam, sd_opts)
