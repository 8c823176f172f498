"""Strict ``key = value`` experiment configuration files.

Example::

    # four receivers at alternate cube vertices
    transmitter = 0 10 0
    receiver = 1 -5 5 5 4
    receiver = 2 5 5 -5 4
    receiver = 3 5 -5 5 4
    receiver = 4 -5 -5 -5 4
    D = 100
    flow = 0 0 0
    Q = 10000
    sample_interval = 0.02
    num_samples = 100
    sim_step = 1e-4
    seed = 1
    trials = 20

Besides the scenario keys above, optional experiment keys are accepted:
``profile``, ``absorption``, ``coarse``, ``subset``, ``mode``, ``synthetic_a``,
``noise_variance``, ``grid``, ``tn_line``, ``sweep`` and ``intervals``.
Anything else is an error.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError, McvdError
from .scenario import Medium, Receiver, SamplingPlan, Scenario, Vec3, validate_scenario

SCENARIO_KEYS = {
    "transmitter", "receiver", "D", "flow", "Q", "sample_interval", "num_samples",
    "sim_step", "seed", "trials",
}
EXPERIMENT_KEYS = {
    "profile", "absorption", "coarse", "subset", "mode", "synthetic_a", "noise_variance",
    "grid", "tn_line", "sweep", "intervals",
}
REPEATABLE = {"receiver"}
REQUIRED = {"transmitter", "receiver", "D", "Q", "sample_interval", "num_samples"}

# Named simulator settings. "exact" resolves boundary crossings inside a step
# and picks the step from the smallest radius; "slotted" moves molecules once per
# millisecond and only checks where each step ends.
PROFILES = {
    "exact": {"absorption": "bridge", "sim_step": None},
    "slotted": {"absorption": "end", "sim_step": 1e-3},
}
SWEEP_AXES = ("radius", "Q", "D", "flow_y", "sample_interval", "subset", "topology")
# per-axis sigma of one step relative to the smallest radius (1e-4 s at D=100, r=1)
EXACT_STEP_RATIO = math.sqrt(2e-2)


@dataclass(frozen=True)
class Grid:
    x0: float
    x1: float
    nx: int
    y0: float
    y1: float
    ny: int
    z: float = 0.0

    def points(self) -> list[Vec3]:
        import numpy as np

        xs = np.linspace(self.x0, self.x1, self.nx)
        ys = np.linspace(self.y0, self.y1, self.ny)
        return [Vec3(float(x), float(y), self.z) for y in ys for x in xs]


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    plan: SamplingPlan
    sim_step: float
    seed: int = 0
    trials: int = 1
    absorption: str = "bridge"
    coarse: bool = True
    subset: int | str | None = None
    mode: str = "particle"
    synthetic_a: tuple[float, ...] | None = None
    noise_variance: float = 0.0
    grid: Grid | None = None
    tn_line: tuple[Vec3, Vec3, int] | None = None
    sweep_axis: str | None = None
    sweep_values: tuple[str, ...] = ()
    intervals: tuple[float, ...] = ()
    profile: str = "exact"
    sim_step_explicit: bool = False
    source_text: str = field(default="", compare=False, repr=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_text(self).encode()).hexdigest()[:16]

    def tn_positions(self) -> list[Vec3]:
        if self.tn_line is None:
            return [self.scenario.transmitter]
        a, b, n = self.tn_line
        if n == 1:
            return [a]
        return [Vec3(*(a[i] + (b[i] - a[i]) * j / (n - 1) for i in range(3))) for j in range(n)]

    def with_overrides(self, seed: int | None = None, trials: int | None = None) -> "ExperimentConfig":
        out = self
        if seed is not None:
            out = replace(out, seed=int(seed))
        if trials is not None:
            if trials < 1:
                raise ConfigError(f"trials must be >= 1, got {trials}")
            out = replace(out, trials=int(trials))
        return out


def exact_sim_step(D: float, r_min: float, sample_interval: float) -> float:
    """Largest step dividing ``sample_interval`` with per-axis sigma at most
    0.141 * r_min."""
    if D <= 0:
        return sample_interval
    target = (EXACT_STEP_RATIO * r_min) ** 2 / (2.0 * D)
    n = max(1, math.ceil(sample_interval / target - 1e-9))
    return sample_interval / n


def dividing_step(step: float, sample_interval: float) -> float:
    n = max(1, math.ceil(sample_interval / step - 1e-9))
    return sample_interval / n


def _floats(key: str, value: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in value.split()]
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {value!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got {len(vals)}")
    return vals


def _int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _bool(key: str, value: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def parse_pairs(text: str) -> list[tuple[int, str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCENARIO_KEYS | EXPERIMENT_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        pairs.append((lineno, key, value))
    return pairs


def parse_config(text: str) -> ExperimentConfig:
    pairs = parse_pairs(text)
    seen: dict[str, str] = {}
    receivers: list[Receiver] = []
    for lineno, key, value in pairs:
        if key in REPEATABLE:
            rid, x, y, z, r = _floats(key, value, 5)
            if rid != int(rid):
                raise ConfigError(f"line {lineno}: receiver id must be an integer")
            try:
                receivers.append(Receiver(int(rid), Vec3(x, y, z), r))
            except McvdError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
            continue
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen[key] = value
    missing = REQUIRED - set(seen) - ({"receiver"} if receivers else set())
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(sorted(missing))}")

    try:
        medium = Medium(_floats("D", seen["D"], 1)[0], Vec3(*_floats("flow", seen.get("flow", "0 0 0"), 3)))
        Q = _int("Q", seen["Q"])
        scenario = Scenario(Vec3(*_floats("transmitter", seen["transmitter"], 3)), tuple(receivers), medium, Q)
        plan = SamplingPlan(_floats("sample_interval", seen["sample_interval"], 1)[0],
                            _int("num_samples", seen["num_samples"]))
    except ConfigError:
        raise
    except McvdError as exc:
        raise ConfigError(str(exc)) from None

    profile = seen.get("profile", "exact")
    if profile not in PROFILES:
        raise ConfigError(f"profile must be one of {sorted(PROFILES)}, got {profile!r}")
    absorption = seen.get("absorption", PROFILES[profile]["absorption"])
    if absorption not in ("bridge", "end", "chord"):
        raise ConfigError(f"absorption must be bridge, end or chord, got {absorption!r}")
    if "sim_step" in seen:
        sim_step = _floats("sim_step", seen["sim_step"], 1)[0]
    elif PROFILES[profile]["sim_step"] is not None:
        sim_step = dividing_step(PROFILES[profile]["sim_step"], plan.sample_interval)
    else:
        sim_step = exact_sim_step(medium.diffusion_coefficient, min(rx.radius for rx in receivers),
                                  plan.sample_interval)
    if not sim_step > 0:
        raise ConfigError(f"sim_step must be > 0, got {sim_step}")

    subset: int | str | None = None
    if "subset" in seen:
        subset = "all" if seen["subset"] == "all" else _int("subset", seen["subset"])
    mode = seen.get("mode", "particle")
    if mode not in ("particle", "synthetic"):
        raise ConfigError(f"mode must be particle or synthetic, got {mode!r}")
    synthetic_a = tuple(_floats("synthetic_a", seen["synthetic_a"])) if "synthetic_a" in seen else None
    if synthetic_a is not None and len(synthetic_a) not in (1, len(receivers)):
        raise ConfigError("synthetic_a needs one value or one per receiver")

    grid = None
    if "grid" in seen:
        g = _floats("grid", seen["grid"])
        if len(g) not in (6, 7):
            raise ConfigError("grid = x0 x1 nx y0 y1 ny [z]")
        grid = Grid(g[0], g[1], int(g[2]), g[3], g[4], int(g[5]), g[6] if len(g) == 7 else 0.0)
    tn_line = None
    if "tn_line" in seen:
        g = _floats("tn_line", seen["tn_line"], 7)
        tn_line = (Vec3(*g[0:3]), Vec3(*g[3:6]), int(g[6]))
        if tn_line[2] < 1:
            raise ConfigError("tn_line needs at least one point")
    sweep_axis, sweep_values = None, ()
    if "sweep" in seen:
        parts = seen["sweep"].split()
        if len(parts) < 2 or parts[0] not in SWEEP_AXES:
            raise ConfigError(f"sweep = <axis> <values...>, axis one of {SWEEP_AXES}")
        sweep_axis, sweep_values = parts[0], tuple(parts[1:])

    cfg = ExperimentConfig(
        scenario=scenario,
        plan=plan,
        sim_step=sim_step,
        seed=_int("seed", seen.get("seed", "0")),
        trials=_int("trials", seen.get("trials", "1")),
        absorption=absorption,
        coarse=_bool("coarse", seen.get("coarse", "true")),
        subset=subset,
        mode=mode,
        synthetic_a=synthetic_a,
        noise_variance=_floats("noise_variance", seen.get("noise_variance", "0"), 1)[0],
        grid=grid,
        tn_line=tn_line,
        sweep_axis=sweep_axis,
        sweep_values=sweep_values,
        intervals=tuple(_floats("intervals", seen["intervals"])) if "intervals" in seen else (),
        profile=profile,
        sim_step_explicit="sim_step" in seen,
        source_text=text,
    )
    if cfg.trials < 1:
        raise ConfigError(f"trials must be >= 1, got {cfg.trials}")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def canonical_text(cfg: ExperimentConfig) -> str:
    """Order-independent rendering used for hashing and for echoing a config."""
    sc = cfg.scenario
    lines = [
        f"transmitter = {_vec(sc.transmitter)}",
        *(f"receiver = {rx.id} {_vec(rx.center)} {rx.radius!r}" for rx in sc.receivers),
        f"D = {sc.medium.diffusion_coefficient!r}",
        f"flow = {_vec(sc.medium.flow)}",
        f"Q = {sc.molecule_budget}",
        f"sample_interval = {cfg.plan.sample_interval!r}",
        f"num_samples = {cfg.plan.num_samples}",
        f"sim_step = {cfg.sim_step!r}",
        f"seed = {cfg.seed}",
        f"trials = {cfg.trials}",
        f"absorption = {cfg.absorption}",
        f"coarse = {str(cfg.coarse).lower()}",
        f"mode = {cfg.mode}",
    ]
    if cfg.subset is not None:
        lines.append(f"subset = {cfg.subset}")
    if cfg.synthetic_a is not None:
        lines.append("synthetic_a = " + " ".join(repr(a) for a in cfg.synthetic_a))
    if cfg.noise_variance:
        lines.append(f"noise_variance = {cfg.noise_variance!r}")
    if cfg.grid is not None:
        g = cfg.grid
        lines.append(f"grid = {g.x0!r} {g.x1!r} {g.nx} {g.y0!r} {g.y1!r} {g.ny} {g.z!r}")
    if cfg.tn_line is not None:
        a, b, n = cfg.tn_line
        lines.append(f"tn_line = {_vec(a)} {_vec(b)} {n}")
    if cfg.sweep_axis is not None:
        lines.append(f"sweep = {cfg.sweep_axis} " + " ".join(cfg.sweep_values))
    if cfg.intervals:
        lines.append("intervals = " + " ".join(repr(t) for t in cfg.intervals))
    return "\n".join(lines) + "\n"


def step_for(cfg: ExperimentConfig, scenario: Scenario, plan: SamplingPlan | None = None) -> float:
    """Simulation step for a (possibly modified) scenario under ``cfg``'s
    profile; an explicit ``sim_step`` always wins."""
    plan = plan or cfg.plan
    if cfg.sim_step_explicit:
        return cfg.sim_step
    fixed = PROFILES[cfg.profile]["sim_step"]
    if fixed is not None:
        return dividing_step(fixed, plan.sample_interval)
    return exact_sim_step(scenario.medium.diffusion_coefficient, float(min(scenario.radii)), plan.sample_interval)


def _vec(v) -> str:
    return " ".join(repr(float(c)) for c in v)


def validated(cfg: ExperimentConfig) -> Scenario:
    return validate_scenario(cfg.scenario)
