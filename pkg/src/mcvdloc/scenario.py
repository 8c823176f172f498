"""Geometry and physical configuration of a single-transmitter, multi-receiver
diffusion channel.

Units are fixed everywhere: micrometres, seconds, um^2/s and molecule counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    IndexOutOfRange,
    NonPositiveParameter,
    OverlappingReceivers,
    TransmitterInsideReceiver,
)


class Vec3(NamedTuple):
    x: float
    y: float
    z: float

    @classmethod
    def of(cls, values) -> "Vec3":
        x, y, z = (float(v) for v in values)
        if not all(math.isfinite(c) for c in (x, y, z)):
            raise NonPositiveParameter(f"non-finite coordinate in {(x, y, z)}")
        return cls(x, y, z)

    @property
    def array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    def __add__(self, other):  # type: ignore[override]
        return Vec3(self.x + other[0], self.y + other[1], self.z + other[2])

    def __sub__(self, other):
        return Vec3(self.x - other[0], self.y - other[1], self.z - other[2])

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


ORIGIN = Vec3(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Receiver:
    id: int
    center: Vec3
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", Vec3.of(self.center))
        if not self.radius > 0 or not math.isfinite(self.radius):
            raise NonPositiveParameter(f"receiver {self.id}: radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class Medium:
    diffusion_coefficient: float
    flow: Vec3 = ORIGIN

    def __post_init__(self):
        object.__setattr__(self, "flow", Vec3.of(self.flow))
        D = self.diffusion_coefficient
        if not math.isfinite(D) or D < 0:
            raise NonPositiveParameter(f"diffusion coefficient must be >= 0, got {D}")


@dataclass(frozen=True)
class SamplingPlan:
    sample_interval: float
    num_samples: int

    def __post_init__(self):
        if not self.sample_interval > 0:
            raise NonPositiveParameter(f"sample_interval must be > 0, got {self.sample_interval}")
        if int(self.num_samples) != self.num_samples or self.num_samples < 2:
            raise NonPositiveParameter(f"num_samples must be an integer >= 2, got {self.num_samples}")

    @property
    def duration(self) -> float:
        return self.sample_interval * self.num_samples

    @property
    def sample_times(self) -> np.ndarray:
        return self.sample_interval * np.arange(1, self.num_samples + 1)


@dataclass(frozen=True)
class Scenario:
    transmitter: Vec3
    receivers: tuple[Receiver, ...]
    medium: Medium
    molecule_budget: int
    distances: tuple[float, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "transmitter", Vec3.of(self.transmitter))
        object.__setattr__(self, "receivers", tuple(self.receivers))

    @property
    def K(self) -> int:
        return len(self.receivers)

    @property
    def centers(self) -> np.ndarray:
        return np.array([rx.center for rx in self.receivers], dtype=float).reshape(-1, 3)

    @property
    def radii(self) -> np.ndarray:
        return np.array([rx.radius for rx in self.receivers], dtype=float)

    @property
    def validated(self) -> bool:
        return self.distances is not None

    def with_transmitter(self, p) -> "Scenario":
        return replace(self, transmitter=Vec3.of(p), distances=None)

    def receiver_index(self, receiver_id: int) -> int:
        for i, rx in enumerate(self.receivers):
            if rx.id == receiver_id:
                return i
        raise IndexOutOfRange(f"no receiver with id {receiver_id}")


def _distance(p, q) -> float:
    return math.dist(p, q)


def validate_scenario(scenario: Scenario) -> Scenario:
    """Check the geometry and attach true transmitter-receiver distances.

    Returns a copy whose ``distances`` field is populated, so calling it twice
    gives an equal result.
    """
    if scenario.K < 1:
        raise NonPositiveParameter("at least one receiver is required")
    if int(scenario.molecule_budget) != scenario.molecule_budget or scenario.molecule_budget < 1:
        raise NonPositiveParameter(f"molecule budget must be a positive integer, got {scenario.molecule_budget}")
    ids = [rx.id for rx in scenario.receivers]
    if len(set(ids)) != len(ids):
        raise NonPositiveParameter(f"duplicate receiver ids: {ids}")
    rxs = scenario.receivers
    for i in range(len(rxs)):
        for j in range(i + 1, len(rxs)):
            gap = _distance(rxs[i].center, rxs[j].center)
            if not gap > rxs[i].radius + rxs[j].radius:
                raise OverlappingReceivers(
                    f"receivers {rxs[i].id} and {rxs[j].id} intersect "
                    f"(centre distance {gap:g} <= {rxs[i].radius + rxs[j].radius:g})"
                )
    distances = []
    for rx in rxs:
        d = _distance(scenario.transmitter, rx.center)
        if not d > rx.radius:
            raise TransmitterInsideReceiver(
                f"transmitter {tuple(scenario.transmitter)} lies inside receiver {rx.id} (d={d:g}, r={rx.radius:g})"
            )
        distances.append(d)
    return replace(scenario, distances=tuple(distances))


def true_distance(scenario: Scenario, k: int) -> float:
    """Distance from the transmitter to the centre of receiver position ``k``
    (0-based index into ``scenario.receivers``)."""
    if not 0 <= k < scenario.K:
        raise IndexOutOfRange(f"receiver index {k} outside 0..{scenario.K - 1}")
    return _distance(scenario.transmitter, scenario.receivers[k].center)


def make_scenario(
    transmitter,
    centers: Sequence,
    radius: float | Sequence[float],
    D: float,
    Q: int,
    flow=ORIGIN,
    ids: Sequence[int] | None = None,
) -> Scenario:
    """Convenience builder; receiver ids default to 1..K."""
    radii = [radius] * len(centers) if np.isscalar(radius) else list(radius)
    ids = list(ids) if ids is not None else list(range(1, len(centers) + 1))
    receivers = tuple(Receiver(i, Vec3.of(c), float(r)) for i, c, r in zip(ids, centers, radii))
    return Scenario(Vec3.of(transmitter), receivers, Medium(float(D), Vec3.of(flow)), int(Q))


# Receiver layouts used throughout the experiments.
CUBE_VERTICES = ((-1, 1, 1), (1, 1, -1), (1, -1, 1), (-1, -1, -1))
FULL_CUBE = tuple(
    (sx, sy, sz) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)
)
FITTING_LAYOUT = ((0, 5, 0), (0, 0, 10), (0, -5, 0), (10, 0, 0))


def cube_layout(half_side: float, full: bool = False) -> list[tuple[float, float, float]]:
    verts = FULL_CUBE if full else CUBE_VERTICES
    return [tuple(half_side * c for c in v) for v in verts]
