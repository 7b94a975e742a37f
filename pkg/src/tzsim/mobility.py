"""UE mobility in a square region around one edge cloud.

The region is ``[-half_width, half_width]^2`` km with the edge-cloud (EC)
disk at the origin. Outside the disk, areas I..IV are the quadrant remainders
counted counterclockwise from the positive x/y quadrant.

The world is stored column-wise (one numpy array per attribute, one slot per
UE). A departing UE is replaced in the same slot under a fresh id, so the
slot count never changes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from numba import njit

from . import rng


class Area(str, Enum):
    EC = "EC"
    I = "I"  # noqa: E741
    II = "II"
    III = "III"
    IV = "IV"


AREAS = (Area.EC, Area.I, Area.II, Area.III, Area.IV)


class MobilityClass(IntEnum):
    STILL = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3


class Trust(IntEnum):
    """Per-slot mirror of a UE's trust status (see :mod:`tzsim.trust_zone`)."""

    UNAUTHENTICATED = 0
    CENTRALLY_AUTHENTICATED = 1
    TEMPORARILY_TRUSTED = 2
    EMERGENCY_ONLY = 3


# Basic speed per class: (mean, standard deviation) in m/s.
BASIC_SPEED = {
    MobilityClass.STILL: (0.0, 0.0),
    MobilityClass.LOW: (1.5, 0.5),
    MobilityClass.MEDIUM: (10.0, 2.0),
    MobilityClass.HIGH: (40.0, 5.0),
}

# Speed scaling factor per (class, area).
SPEED_FACTORS = {
    MobilityClass.STILL: {Area.EC: 0.0, Area.I: 0.0, Area.II: 0.0, Area.III: 0.0, Area.IV: 0.0},
    MobilityClass.LOW: {Area.EC: 1.0, Area.I: 1.0, Area.II: 1.0, Area.III: 1.0, Area.IV: 1.0},
    MobilityClass.MEDIUM: {Area.EC: 0.7, Area.I: 1.0, Area.II: 0.9, Area.III: 0.8, Area.IV: 0.9},
    MobilityClass.HIGH: {Area.EC: 0.2, Area.I: 1.0, Area.II: 0.9, Area.III: 0.85, Area.IV: 0.8},
}

# quadrant code 1 + (x < 0) + 2 * (y < 0) -> area index
_QUADRANT_TO_AREA = np.array([0, 1, 2, 4, 3], dtype=np.int64)


@dataclass(frozen=True)
class RegionMap:
    half_width_km: float = 4.0
    ec_radius_km: float = 2.0

    @property
    def area_km2(self) -> float:
        return (2.0 * self.half_width_km) ** 2


@dataclass(frozen=True)
class MobilityParams:
    step_seconds: float = 600.0
    substep_seconds: float = 10.0
    spawn: str = "boundary"  # or "uniform"
    replacement_class: str = "inherit"  # or "uniform"
    basic_speed: Mapping[MobilityClass, tuple[float, float]] = field(default_factory=lambda: dict(BASIC_SPEED))
    speed_factors: Mapping[MobilityClass, Mapping[Area, float]] = field(default_factory=lambda: dict(SPEED_FACTORS))

    def __post_init__(self):
        n_sub = self.step_seconds / self.substep_seconds
        if self.substep_seconds <= 0 or abs(n_sub - round(n_sub)) > 1e-9:
            raise ValueError("substep_seconds must divide step_seconds")
        if self.spawn not in ("boundary", "uniform"):
            raise ValueError(f"unknown spawn mode {self.spawn!r}")
        if self.replacement_class not in ("inherit", "uniform"):
            raise ValueError(f"unknown replacement_class {self.replacement_class!r}")
        object.__setattr__(self, "_factor_table", _factor_table(self.speed_factors))

    @property
    def substeps(self) -> int:
        return int(round(self.step_seconds / self.substep_seconds))

    @property
    def factor_table(self) -> np.ndarray:
        return self._factor_table


def _factor_table(factors) -> np.ndarray:
    table = np.zeros((4, 5))
    for cls in MobilityClass:
        if cls is MobilityClass.STILL:
            continue
        row = factors[cls]
        for a, area in enumerate(AREAS):
            table[cls, a] = row[area]
    return table


# --------------------------------------------------------------------------- areas


def in_square(region: RegionMap, x, y):
    hw = region.half_width_km
    return (np.abs(x) <= hw) & (np.abs(y) <= hw)


def area_codes(region: RegionMap, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorized area index (0=EC, 1..4 = I..IV) for points inside the square."""
    quadrant = _QUADRANT_TO_AREA[1 + (x < 0) + 2 * (y < 0)]
    in_ec = x * x + y * y <= region.ec_radius_km**2
    return np.where(in_ec, 0, quadrant)


def classify_area(region: RegionMap, position: tuple[float, float]) -> Area:
    x, y = float(position[0]), float(position[1])
    if not in_square(region, x, y):
        raise ValueError(f"point {position} lies outside the region")
    return AREAS[int(area_codes(region, np.array([x]), np.array([y]))[0])]


# --------------------------------------------------------------------------- speeds


def sample_basic_speed(cls: MobilityClass, seed: int, entity, index=0, params: MobilityParams | None = None):
    """Basic speed(s) in m/s for ``cls``; one draw per entity id.

    Normal parameters are (mean, standard deviation); negatives clamp to 0.
    """
    params = params or MobilityParams()
    cls = MobilityClass(cls)
    entity = np.atleast_1d(np.asarray(entity))
    if cls is MobilityClass.STILL:
        return np.zeros(entity.shape)
    mean, std = params.basic_speed[cls]
    z = rng.standard_normal(seed, rng.TAG_SPAWN, entity, 0, index)
    return np.maximum(0.0, mean + std * z)


def _basic_speeds(classes: np.ndarray, z: np.ndarray, params: MobilityParams) -> np.ndarray:
    means = np.array([params.basic_speed[c][0] for c in MobilityClass])
    stds = np.array([params.basic_speed[c][1] for c in MobilityClass])
    speed = np.maximum(0.0, means[classes] + stds[classes] * z)
    speed[classes == MobilityClass.STILL] = 0.0
    return speed


def effective_speed(cls: MobilityClass, area: Area, basic: float, params: MobilityParams | None = None) -> float:
    if basic < 0:
        raise ValueError("basic speed must be >= 0")
    params = params or MobilityParams()
    return basic * params.factor_table[MobilityClass(cls), AREAS.index(Area(area))]


# --------------------------------------------------------------------------- world


@dataclass(frozen=True)
class UeRecord:
    id: int
    position: tuple[float, float]
    mobility_class: MobilityClass
    basic_speed: float
    profile_synced: bool = False
    trust: Trust = Trust.UNAUTHENTICATED


@dataclass(frozen=True, eq=False)
class World:
    """Immutable snapshot of the population at a step boundary."""

    region: RegionMap
    params: MobilityParams
    seed: int
    density: float
    step: int
    next_id: int
    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    cls: np.ndarray
    speed: np.ndarray
    fresh: np.ndarray
    synced: np.ndarray
    trust: np.ndarray

    def __post_init__(self):
        for name in ("ids", "x", "y", "cls", "speed", "fresh", "synced", "trust"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return int(self.ids.size)

    def __eq__(self, other):
        if not isinstance(other, World):
            return NotImplemented
        scalars = ("region", "params", "seed", "density", "step", "next_id")
        arrays = ("ids", "x", "y", "cls", "speed", "fresh", "synced", "trust")
        return all(getattr(self, a) == getattr(other, a) for a in scalars) and all(
            np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays
        )

    def ue(self, slot: int) -> UeRecord:
        return UeRecord(
            id=int(self.ids[slot]),
            position=(float(self.x[slot]), float(self.y[slot])),
            mobility_class=MobilityClass(int(self.cls[slot])),
            basic_speed=float(self.speed[slot]),
            profile_synced=bool(self.synced[slot]),
            trust=Trust(int(self.trust[slot])),
        )

    def areas(self) -> np.ndarray:
        return area_codes(self.region, self.x, self.y)

    def in_ec(self) -> np.ndarray:
        return self.x * self.x + self.y * self.y <= self.region.ec_radius_km**2

    def distances(self) -> np.ndarray:
        return np.hypot(self.x, self.y)

    def area_counts(self) -> np.ndarray:
        return np.bincount(self.areas(), minlength=5)

    def with_columns(self, **columns) -> "World":
        return replace(self, **{k: np.array(v) for k, v in columns.items()})


def population_size(region: RegionMap, density: float) -> int:
    return int(round(density * region.area_km2))


def init_world(
    seed: int,
    density: float = 100.0,
    region: RegionMap | None = None,
    params: MobilityParams | None = None,
) -> World:
    """Population spread uniformly over the square with uniform classes."""
    region = region or RegionMap()
    params = params or MobilityParams()
    n = population_size(region, density)
    ids = np.arange(n, dtype=np.int64)
    hw = region.half_width_km
    x = (2.0 * rng.uniform(seed, rng.TAG_INIT, ids, 0, 0) - 1.0) * hw
    y = (2.0 * rng.uniform(seed, rng.TAG_INIT, ids, 0, 1) - 1.0) * hw
    cls = np.minimum((rng.uniform(seed, rng.TAG_INIT, ids, 0, 2) * 4).astype(np.int64), 3).astype(np.int8)
    speed = _basic_speeds(cls, rng.standard_normal(seed, rng.TAG_INIT, ids, 0, 3), params)
    return World(
        region=region,
        params=params,
        seed=seed,
        density=density,
        step=0,
        next_id=n,
        ids=ids,
        x=x,
        y=y,
        cls=cls,
        speed=speed,
        fresh=np.zeros(n, dtype=bool),
        synced=np.zeros(n, dtype=bool),
        trust=np.zeros(n, dtype=np.int8),
    )


def make_world(
    ues: Iterable[UeRecord],
    seed: int = 0,
    region: RegionMap | None = None,
    params: MobilityParams | None = None,
    step: int = 0,
) -> World:
    """Build a world from explicit records (tests, small scenarios)."""
    ues = list(ues)
    region = region or RegionMap()
    ids = np.array([u.id for u in ues], dtype=np.int64)
    return World(
        region=region,
        params=params or MobilityParams(),
        seed=seed,
        density=len(ues) / region.area_km2,
        step=step,
        next_id=int(ids.max()) + 1 if ues else 0,
        ids=ids,
        x=np.array([u.position[0] for u in ues], dtype=float),
        y=np.array([u.position[1] for u in ues], dtype=float),
        cls=np.array([int(u.mobility_class) for u in ues], dtype=np.int8),
        speed=np.array([u.basic_speed for u in ues], dtype=float),
        fresh=np.zeros(len(ues), dtype=bool),
        synced=np.array([u.profile_synced for u in ues], dtype=bool),
        trust=np.array([int(u.trust) for u in ues], dtype=np.int8),
    )


def step_directions(world: World) -> np.ndarray:
    """Heading (radians) each UE uses during the step that starts at ``world.step``.

    Freshly spawned UEs draw from the half-circle pointing into the region.
    """
    u = rng.uniform(world.seed, rng.TAG_DIRECTION, world.ids, world.step)
    theta = 2.0 * np.pi * u
    if world.fresh.any():
        f = world.fresh
        x, y = world.x[f], world.y[f]
        on_x_side = np.abs(x) >= np.abs(y)
        normal = np.where(on_x_side, np.where(x > 0, np.pi, 0.0), np.where(y > 0, -0.5 * np.pi, 0.5 * np.pi))
        theta = theta.copy()
        theta[f] = normal + (u[f] - 0.5) * np.pi
    return theta


@njit(cache=True)
def _integrate_kernel(x, y, cls, dx, dy, table, hw, r2, substeps, departed, trace_x, trace_y):
    n = x.shape[0]
    record = trace_x.shape[0] > 0
    for i in range(n):
        c = cls[i]
        if c == 0 or (dx[i] == 0.0 and dy[i] == 0.0):
            if record:
                for k in range(substeps):
                    trace_x[k, i] = x[i]
                    trace_y[k, i] = y[i]
            continue
        px = x[i]
        py = y[i]
        gone = False
        for k in range(substeps):
            if not gone:
                if px * px + py * py <= r2:
                    a = 0
                elif py >= 0.0:
                    a = 1 if px >= 0.0 else 2
                else:
                    a = 3 if px < 0.0 else 4
                f = table[c, a]
                px = px + f * dx[i]
                py = py + f * dy[i]
                if abs(px) > hw or abs(py) > hw:
                    gone = True
                    if not record:
                        break
            if record:
                trace_x[k, i] = px
                trace_y[k, i] = py
        x[i] = px
        y[i] = py
        departed[i] = gone


def integrate_paths(
    region: RegionMap,
    params: MobilityParams,
    x: np.ndarray,
    y: np.ndarray,
    cls: np.ndarray,
    speed: np.ndarray,
    theta: np.ndarray,
    record: bool = False,
):
    """Move UEs for one step in sub-steps, speed rescaled by the current area.

    Heading is fixed for the whole step. A UE that leaves the square stops
    there and is flagged as departed.

    Returns:
        ``(x, y, departed)``; with ``record`` set, a fourth element holds the
        positions after every sub-step as two ``(substeps, n)`` arrays.
    """
    x = np.array(x, dtype=np.float64)
    y = np.array(y, dtype=np.float64)
    n = x.shape[0]
    reach = np.asarray(speed, dtype=np.float64) * (params.substep_seconds / 1000.0)
    dx = reach * np.cos(theta)
    dy = reach * np.sin(theta)
    departed = np.zeros(n, dtype=np.bool_)
    shape = (params.substeps, n) if record else (0, 0)
    trace_x = np.empty(shape)
    trace_y = np.empty(shape)
    _integrate_kernel(
        x, y, np.asarray(cls, dtype=np.int64), dx, dy, params.factor_table,
        float(region.half_width_km), float(region.ec_radius_km) ** 2, params.substeps,
        departed, trace_x, trace_y,
    )
    if record:
        return x, y, departed, (trace_x, trace_y)
    return x, y, departed


@dataclass(frozen=True)
class SpawnBatch:
    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    cls: np.ndarray
    speed: np.ndarray


def spawn_replacements(
    seed: int,
    first_id: int,
    count: int,
    region: RegionMap,
    params: MobilityParams,
    classes: np.ndarray | None = None,
) -> SpawnBatch:
    """``count`` new UEs with consecutive ids starting at ``first_id``.

    Boundary mode places each uniformly on the square's perimeter; uniform
    mode places it uniformly in the square. Classes are drawn uniformly unless
    ``classes`` is given.
    """
    ids = np.arange(first_id, first_id + count, dtype=np.int64)
    hw = region.half_width_km
    u0 = rng.uniform(seed, rng.TAG_SPAWN, ids, 1, 0)
    u1 = rng.uniform(seed, rng.TAG_SPAWN, ids, 1, 1)
    if params.spawn == "boundary":
        t = u0 * 4.0
        side = np.minimum(t.astype(np.int64), 3)
        along = (t - side) * 2.0 * hw - hw
        x = np.select([side == 0, side == 1, side == 2], [np.full(count, hw), along, np.full(count, -hw)], along)
        y = np.select([side == 0, side == 1, side == 2], [along, np.full(count, hw), along], np.full(count, -hw))
    else:
        x = (2.0 * u0 - 1.0) * hw
        y = (2.0 * u1 - 1.0) * hw
    if classes is None:
        cls = np.minimum((rng.uniform(seed, rng.TAG_SPAWN, ids, 1, 2) * 4).astype(np.int64), 3).astype(np.int8)
    else:
        cls = np.asarray(classes, dtype=np.int8)
    speed = _basic_speeds(cls, rng.standard_normal(seed, rng.TAG_SPAWN, ids, 1, 3), params)
    return SpawnBatch(ids, x, y, cls, speed)


def spawn_replacement(world: World) -> UeRecord:
    """One replacement UE drawn as the next id of ``world`` would be."""
    b = spawn_replacements(world.seed, world.next_id, 1, world.region, world.params)
    return UeRecord(
        id=int(b.ids[0]),
        position=(float(b.x[0]), float(b.y[0])),
        mobility_class=MobilityClass(int(b.cls[0])),
        basic_speed=float(b.speed[0]),
    )


def advance_step(world: World) -> World:
    """Move every UE for one step and replace those that left the region.

    Replacements take the departed UE's slot with ids assigned in slot order.
    With ``replacement_class="inherit"`` a replacement keeps the mobility class
    of the UE it replaces; otherwise its class is drawn uniformly.
    """
    theta = step_directions(world)
    x, y, departed = integrate_paths(world.region, world.params, world.x, world.y, world.cls, world.speed, theta)
    slots = np.flatnonzero(departed)
    ids, cls, speed = world.ids, world.cls, world.speed
    fresh = np.zeros(len(world), dtype=bool)
    synced, trust = world.synced, world.trust
    next_id = world.next_id
    if slots.size:
        inherit = world.cls[slots] if world.params.replacement_class == "inherit" else None
        b = spawn_replacements(world.seed, next_id, slots.size, world.region, world.params, inherit)
        ids, cls, speed = ids.copy(), cls.copy(), speed.copy()
        synced, trust = synced.copy(), trust.copy()
        ids[slots], x[slots], y[slots], cls[slots], speed[slots] = b.ids, b.x, b.y, b.cls, b.speed
        synced[slots] = False
        trust[slots] = Trust.UNAUTHENTICATED
        fresh[slots] = world.params.spawn == "boundary"
        next_id += slots.size
    return replace(
        world,
        step=world.step + 1,
        next_id=next_id,
        ids=ids,
        x=x,
        y=y,
        cls=cls,
        speed=speed,
        fresh=fresh,
        synced=synced,
        trust=trust,
    )


def run_warmup(world: World, steps: int = 240) -> tuple[World, np.ndarray]:
    """Advance ``steps`` steps; also returns per-step area counts (steps x 5)."""
    counts = np.empty((steps, 5), dtype=np.int64)
    for k in range(steps):
        world = advance_step(world)
        counts[k] = world.area_counts()
    return world, counts


# --------------------------------------------------------------------------- export

SNAPSHOT_HEADER = ("step", "ue_id", "x_km", "y_km", "class", "area", "synced", "trust")


def snapshot_rows(world: World):
    areas = world.areas()
    for i in range(len(world)):
        yield (
            world.step,
            int(world.ids[i]),
            repr(float(world.x[i])),
            repr(float(world.y[i])),
            MobilityClass(int(world.cls[i])).name,
            AREAS[int(areas[i])].value,
            int(bool(world.synced[i])),
            Trust(int(world.trust[i])).name,
        )


def write_snapshots(path: str | Path, worlds: Iterable[World]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SNAPSHOT_HEADER)
        for w in worlds:
            writer.writerows(snapshot_rows(w))
