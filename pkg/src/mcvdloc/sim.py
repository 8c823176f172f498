"""Particle-based simulation of molecules diffusing (with optional uniform
drift) towards absorbing spherical receivers.

Every molecule is released from the transmitter at t=0 and moves by
``v*dt + N(0, 2*D*dt)`` per axis each step and stops at the first receiver
that absorbs it. Three absorption checks are available:

* ``"end"``: the end-of-step position lies inside a sphere;
* ``"chord"``: the straight segment between positions enters a sphere;
* ``"bridge"`` (default): as ``"end"``, plus a Brownian-bridge test for an
  excursion into a sphere within the step, with probability
  ``exp(-g0*g1/(D*dt))`` for gaps ``g0``, ``g1`` to the surface.

Only the
absorption event (receiver, step index) is kept per molecule, so memory is
O(Q) and traces for any sampling interval that is a multiple of the step can be
rebuilt without re-simulating.

Far-field acceleration: when a molecule is so far from every receiver that
reaching any of them within ``m`` steps needs a six-sigma excursion along the
line towards it, the ``m`` steps are taken as one Gaussian jump with ``m``
times the variance. Reaching a sphere requires the projection onto the
direction of its centre to advance by the gap, so the skipped absorption
probability is below ``2 * K * Phi(-6)`` (about 2e-9 * K) per jump. Disable
it with ``coarse=False`` for strict step-by-step dynamics.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import NonPositiveParameter, StepNotDividingSampleInterval
from .scenario import Medium, Receiver, SamplingPlan, Scenario, Vec3, validate_scenario

BLOCK_SIZE = 4096
COARSE_SIGMAS = 6.0
BRIDGE_CUTOFF = 40.0

# absorption policies
END_OF_STEP = 0
CHORD = 1
BRIDGE = 2
POLICIES = {"end": END_OF_STEP, "chord": CHORD, "bridge": BRIDGE}


@dataclass(frozen=True)
class CumulativeTrace:
    receiver_id: int
    sample_times: np.ndarray
    counts: np.ndarray

    @property
    def final(self) -> float:
        return float(self.counts[-1])


@dataclass(frozen=True)
class MoleculeState:
    position: Vec3
    alive: bool = True


def step_molecule(state: MoleculeState | Vec3, medium: Medium, dt: float, rng: np.random.Generator) -> Vec3:
    """One Brownian step with drift for a single molecule."""
    if not dt > 0:
        raise NonPositiveParameter(f"dt must be > 0, got {dt}")
    pos = state.position if isinstance(state, MoleculeState) else state
    sigma = math.sqrt(2.0 * medium.diffusion_coefficient * dt)
    g = rng.standard_normal(3) * sigma
    v = medium.flow
    return Vec3(pos[0] + v[0] * dt + g[0], pos[1] + v[1] * dt + g[1], pos[2] + v[2] * dt + g[2])


def detect_absorption(prev, next_, receivers, chord: bool = False) -> int | None:
    """Id of the receiver that absorbs a molecule moving ``prev -> next_``.

    The default policy only checks where the step ends; ``chord=True`` also
    absorbs when the straight segment passes through a sphere.
    """
    centers = np.array([rx.center for rx in receivers], dtype=float).reshape(-1, 3)
    radii = np.array([rx.radius for rx in receivers], dtype=float)
    k = _absorbing_index(np.asarray(prev, dtype=float), np.asarray(next_, dtype=float), centers, radii, chord)
    return None if k < 0 else receivers[k].id


@numba.njit(cache=True, nogil=True)
def _absorbing_index(prev, nxt, centers, radii, chord):
    for k in range(centers.shape[0]):
        dx = nxt[0] - centers[k, 0]
        dy = nxt[1] - centers[k, 1]
        dz = nxt[2] - centers[k, 2]
        if dx * dx + dy * dy + dz * dz < radii[k] * radii[k]:
            return k
    if chord:
        sx = nxt[0] - prev[0]
        sy = nxt[1] - prev[1]
        sz = nxt[2] - prev[2]
        ss = sx * sx + sy * sy + sz * sz
        if ss > 0.0:
            for k in range(centers.shape[0]):
                px = prev[0] - centers[k, 0]
                py = prev[1] - centers[k, 1]
                pz = prev[2] - centers[k, 2]
                s = -(px * sx + py * sy + pz * sz) / ss
                if 0.0 < s < 1.0:
                    qx = px + s * sx
                    qy = py + s * sy
                    qz = pz + s * sz
                    if qx * qx + qy * qy + qz * qz < radii[k] * radii[k]:
                        return k
    return -1


@numba.njit(cache=True, nogil=True)
def _bridge_index(prev, nxt, centers, radii, diff_dt, rng):
    # planar Brownian-bridge crossing probability exp(-2 g0 g1 / sigma^2)
    for k in range(centers.shape[0]):
        dx = prev[0] - centers[k, 0]
        dy = prev[1] - centers[k, 1]
        dz = prev[2] - centers[k, 2]
        g0 = math.sqrt(dx * dx + dy * dy + dz * dz) - radii[k]
        dx = nxt[0] - centers[k, 0]
        dy = nxt[1] - centers[k, 1]
        dz = nxt[2] - centers[k, 2]
        g1 = math.sqrt(dx * dx + dy * dy + dz * dz) - radii[k]
        expo = g0 * g1 / diff_dt
        if expo < BRIDGE_CUTOFF and rng.random() < math.exp(-expo):
            return k
    return -1


@numba.njit(cache=True, nogil=True)
def _walk_block(rng, n, start, centers, radii, drift, sigma, n_steps, coarse, policy, out_rx, out_step):
    K = centers.shape[0]
    vstep = math.sqrt(drift[0] ** 2 + drift[1] ** 2 + drift[2] ** 2)
    diff_dt = 0.5 * sigma * sigma
    prev = np.empty(3)
    pos = np.empty(3)
    for i in range(n):
        pos[0] = start[0]
        pos[1] = start[1]
        pos[2] = start[2]
        out_rx[i] = -1
        out_step[i] = -1
        s = 0
        while s < n_steps:
            remaining = n_steps - s
            m = 1
            if coarse and remaining > 1:
                gap = np.inf
                for k in range(K):
                    dx = pos[0] - centers[k, 0]
                    dy = pos[1] - centers[k, 1]
                    dz = pos[2] - centers[k, 2]
                    g = math.sqrt(dx * dx + dy * dy + dz * dz) - radii[k]
                    if g < gap:
                        gap = g
                if sigma > 0.0:
                    x = gap / (COARSE_SIGMAS * sigma)
                    m = remaining if x * x >= remaining else int(x * x)
                elif vstep > 0.0:
                    m = remaining if gap / vstep >= remaining else int(gap / vstep)
                else:
                    m = remaining
                while m > 1 and COARSE_SIGMAS * sigma * math.sqrt(m) + vstep * m >= gap:
                    m //= 2
                if m < 1:
                    m = 1
            if m > 1:
                scale = sigma * math.sqrt(m)
                pos[0] += drift[0] * m + scale * rng.standard_normal()
                pos[1] += drift[1] * m + scale * rng.standard_normal()
                pos[2] += drift[2] * m + scale * rng.standard_normal()
                s += m
                continue
            prev[0] = pos[0]
            prev[1] = pos[1]
            prev[2] = pos[2]
            pos[0] += drift[0] + sigma * rng.standard_normal()
            pos[1] += drift[1] + sigma * rng.standard_normal()
            pos[2] += drift[2] + sigma * rng.standard_normal()
            s += 1
            k = _absorbing_index(prev, pos, centers, radii, policy == CHORD)
            if k < 0 and policy == BRIDGE and sigma > 0.0:
                k = _bridge_index(prev, pos, centers, radii, diff_dt, rng)
            if k >= 0:
                out_rx[i] = k
                out_step[i] = s
                break


def trial_seed(master_seed: int, trial: int) -> int:
    """Seed for trial ``trial``; depends only on (master seed, trial index)."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(trial)])
    return int(ss.generate_state(1, np.uint64)[0])


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(block)])))


def steps_per_sample(sample_interval: float, sim_step: float) -> int:
    if not sim_step > 0:
        raise NonPositiveParameter(f"sim_step must be > 0, got {sim_step}")
    ratio = sample_interval / sim_step
    n = int(round(ratio))
    if n < 1 or abs(n - ratio) > 1e-9 * max(1.0, ratio):
        raise StepNotDividingSampleInterval(
            f"sample interval {sample_interval} is not an integer multiple of sim_step {sim_step}"
        )
    return n


@dataclass
class AbsorptionEvents:
    """Per-molecule outcome of one simulated release."""

    receiver_ids: tuple[int, ...]
    sim_step: float
    n_steps: int
    receiver_index: np.ndarray  # -1: never absorbed
    step: np.ndarray  # 1-based step of absorption, -1 if alive

    @property
    def Q(self) -> int:
        return int(self.receiver_index.size)

    @property
    def duration(self) -> float:
        return self.n_steps * self.sim_step

    def absorbed_by_step(self, k: int, n_steps: int) -> int:
        return int(np.count_nonzero((self.receiver_index == k) & (self.step <= n_steps)))

    def alive_at(self, n_steps: int) -> int:
        absorbed = (self.receiver_index >= 0) & (self.step <= n_steps)
        return self.Q - int(np.count_nonzero(absorbed))

    def traces(self, plan: SamplingPlan) -> list[CumulativeTrace]:
        ratio = steps_per_sample(plan.sample_interval, self.sim_step)
        if ratio * plan.num_samples > self.n_steps:
            raise NonPositiveParameter(
                f"plan covers {plan.duration:g} s but only {self.duration:g} s were simulated"
            )
        K = len(self.receiver_ids)
        hit = self.receiver_index >= 0
        # sample n (0-based) collects steps in ((n)*ratio, (n+1)*ratio]
        bins = (self.step[hit] - 1) // ratio
        keep = bins < plan.num_samples
        per_bin = np.zeros((K, plan.num_samples), dtype=np.int64)
        np.add.at(per_bin, (self.receiver_index[hit][keep], bins[keep]), 1)
        cum = np.cumsum(per_bin, axis=1)
        times = plan.sample_times
        return [CumulativeTrace(rid, times, cum[k]) for k, rid in enumerate(self.receiver_ids)]


def simulate_events(
    scenario: Scenario,
    n_steps: int,
    sim_step: float,
    seed: int,
    coarse: bool = True,
    policy: str = "bridge",
    threads: int = 1,
) -> AbsorptionEvents:
    if not scenario.validated:
        scenario = validate_scenario(scenario)
    if not sim_step > 0:
        raise NonPositiveParameter(f"sim_step must be > 0, got {sim_step}")
    try:
        mode = POLICIES[policy]
    except KeyError:
        raise NonPositiveParameter(f"unknown absorption policy {policy!r}; use one of {sorted(POLICIES)}")
    Q = scenario.molecule_budget
    centers = np.ascontiguousarray(scenario.centers)
    radii = np.ascontiguousarray(scenario.radii)
    medium = scenario.medium
    drift = np.array(medium.flow, dtype=float) * sim_step
    sigma = math.sqrt(2.0 * medium.diffusion_coefficient * sim_step)
    start = np.array(scenario.transmitter, dtype=float)
    rx = np.empty(Q, dtype=np.int64)
    st = np.empty(Q, dtype=np.int64)

    def run_block(b: int):
        lo = b * BLOCK_SIZE
        hi = min(Q, lo + BLOCK_SIZE)
        _walk_block(_block_rng(seed, b), hi - lo, start, centers, radii, drift, sigma,
                    int(n_steps), coarse, mode, rx[lo:hi], st[lo:hi])

    n_blocks = -(-Q // BLOCK_SIZE)
    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, range(n_blocks)))
    else:
        for b in range(n_blocks):
            run_block(b)
    ids = tuple(r.id for r in scenario.receivers)
    return AbsorptionEvents(ids, float(sim_step), int(n_steps), rx, st)


def simulate_trial(
    scenario: Scenario,
    plan: SamplingPlan,
    sim_step: float,
    seed: int,
    coarse: bool = True,
    policy: str = "bridge",
    threads: int = 1,
) -> list[CumulativeTrace]:
    ratio = steps_per_sample(plan.sample_interval, sim_step)
    events = simulate_events(scenario, ratio * plan.num_samples, sim_step, seed,
                             coarse=coarse, policy=policy, threads=threads)
    return events.traces(plan)


@dataclass
class TrialEnsemble:
    scenario: Scenario
    plan: SamplingPlan
    sim_step: float
    master_seed: int
    seeds: list[int]
    events: list[AbsorptionEvents] = field(repr=False)

    @property
    def traces(self) -> list[list[CumulativeTrace]]:
        return [ev.traces(self.plan) for ev in self.events]

    def resample(self, plan: SamplingPlan) -> list[list[CumulativeTrace]]:
        return [ev.traces(plan) for ev in self.events]


def run_trials(
    scenario: Scenario,
    plan: SamplingPlan,
    sim_step: float,
    master_seed: int,
    n_trials: int,
    coarse: bool = True,
    policy: str = "bridge",
    threads: int = 1,
) -> TrialEnsemble:
    if n_trials < 1:
        raise NonPositiveParameter(f"n_trials must be >= 1, got {n_trials}")
    scenario = validate_scenario(scenario)
    n_steps = steps_per_sample(plan.sample_interval, sim_step) * plan.num_samples
    seeds = [trial_seed(master_seed, i) for i in range(n_trials)]

    def one(seed):
        # threads only parallelise across trials here; blocks stay serial
        return simulate_events(scenario, n_steps, sim_step, seed, coarse=coarse, policy=policy)

    if threads > 1 and n_trials > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            events = list(pool.map(one, seeds))
    else:
        events = [one(s) for s in seeds]
    return TrialEnsemble(scenario, plan, sim_step, master_seed, seeds, events)


def add_gaussian_noise(trace: CumulativeTrace, variance: float, rng: np.random.Generator) -> CumulativeTrace:
    """Synthetic-trace noise: adds independent N(0, variance) to every sample."""
    if variance < 0:
        raise NonPositiveParameter(f"variance must be >= 0, got {variance}")
    noisy = np.asarray(trace.counts, dtype=float) + rng.normal(0.0, math.sqrt(variance), len(trace.counts))
    return CumulativeTrace(trace.receiver_id, trace.sample_times, noisy)


@dataclass(frozen=True)
class ProbabilityCell:
    position: Vec3
    receiver_id: int
    probability: float  # NaN when the transmitter position is inside a receiver
    valid: bool


def receiving_probability_map(
    template: Scenario,
    plan: SamplingPlan,
    grid,
    sim_step: float,
    seed: int,
    trials: int = 1,
    coarse: bool = True,
    threads: int = 1,
    policy: str = "bridge",
) -> list[ProbabilityCell]:
    """Fraction of the budget absorbed by each receiver by the end of ``plan``
    for every transmitter position in ``grid`` (averaged over ``trials``)."""
    from .errors import TransmitterInsideReceiver

    cells: list[ProbabilityCell] = []
    n_steps = steps_per_sample(plan.sample_interval, sim_step) * plan.num_samples
    for gi, p in enumerate(grid):
        p = Vec3.of(p)
        try:
            sc = validate_scenario(template.with_transmitter(p))
        except TransmitterInsideReceiver:
            cells.extend(ProbabilityCell(p, rx.id, float("nan"), False) for rx in template.receivers)
            continue
        totals = np.zeros(sc.K)
        for t in range(trials):
            ev = simulate_events(sc, n_steps, sim_step, trial_seed(trial_seed(seed, gi), t),
                                 coarse=coarse, policy=policy, threads=threads)
            totals += [ev.absorbed_by_step(k, n_steps) for k in range(sc.K)]
        probs = totals / (trials * sc.molecule_budget)
        cells.extend(ProbabilityCell(p, rx.id, float(pr), True) for rx, pr in zip(sc.receivers, probs))
    return cells
