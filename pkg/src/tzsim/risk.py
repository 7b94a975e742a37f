"""Per-UE outage risk from motion statistics and the backhaul forecast.

A :class:`MotionModel` is learned from a recorded trajectory. For every
(mobility class, radial distance bin) it stores how often a UE seen in that
bin was inside the edge cloud during at least one of the next
``horizon_steps`` steps, and for how many of those steps on average.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .backhaul import BackhaulChain, survival_within
from .mobility import MobilityClass, RegionMap, UeRecord, World

N_CLASSES = len(MobilityClass)


@dataclass(frozen=True)
class Trajectory:
    """Slot-aligned stack of world snapshots (``T x N`` arrays)."""

    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    cls: np.ndarray

    @classmethod
    def from_worlds(cls, worlds: Sequence[World]) -> "Trajectory":
        return cls(
            ids=np.stack([w.ids for w in worlds]),
            x=np.stack([w.x for w in worlds]),
            y=np.stack([w.y for w in worlds]),
            cls=np.stack([w.cls for w in worlds]),
        )

    @property
    def steps(self) -> int:
        return self.ids.shape[0]


@dataclass(frozen=True)
class ArrivalStats:
    p_arrival: float
    expected_overlap: float
    sample_count: int


@dataclass(frozen=True, eq=False)
class MotionModel:
    horizon_steps: int
    bin_width_km: float
    p_arrival: np.ndarray  # (classes, bins), after empty-bin fallback
    expected_overlap: np.ndarray
    counts: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, MotionModel):
            return NotImplemented
        return (
            self.horizon_steps == other.horizon_steps
            and self.bin_width_km == other.bin_width_km
            and all(
                np.array_equal(getattr(self, a), getattr(other, a))
                for a in ("p_arrival", "expected_overlap", "counts")
            )
        )

    @property
    def n_bins(self) -> int:
        return self.p_arrival.shape[1]

    def bin_of(self, distance_km):
        b = np.floor(np.asarray(distance_km) / self.bin_width_km).astype(np.int64)
        return np.clip(b, 0, self.n_bins - 1)

    def lookup(self, cls: int, distance_km: float) -> ArrivalStats:
        b = int(self.bin_of(distance_km))
        return ArrivalStats(
            float(self.p_arrival[cls, b]), float(self.expected_overlap[cls, b]), int(self.counts[cls, b])
        )

    def to_dict(self) -> dict:
        bins = {}
        for c in MobilityClass:
            for b in range(self.n_bins):
                bins[f"{c.name}:{b}"] = {
                    "p_arrival": float(self.p_arrival[c, b]),
                    "expected_overlap": float(self.expected_overlap[c, b]),
                    "n": int(self.counts[c, b]),
                }
        return {"horizon_steps": self.horizon_steps, "bin_width_km": self.bin_width_km, "bins": bins}

    @classmethod
    def from_dict(cls, doc: dict) -> "MotionModel":
        bins = doc["bins"]
        n_bins = 1 + max(int(k.split(":")[1]) for k in bins)
        p = np.zeros((N_CLASSES, n_bins))
        o = np.zeros((N_CLASSES, n_bins))
        n = np.zeros((N_CLASSES, n_bins), dtype=np.int64)
        for key, v in bins.items():
            name, b = key.split(":")
            c = MobilityClass[name]
            p[c, int(b)], o[c, int(b)], n[c, int(b)] = v["p_arrival"], v["expected_overlap"], v["n"]
        return cls(int(doc["horizon_steps"]), float(doc["bin_width_km"]), p, o, n)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MotionModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def train_motion_model(
    trajectory: Trajectory,
    region: RegionMap,
    horizon_steps: int = 3,
    bin_width_km: float = 0.25,
    max_distance_km: float = 6.0,
) -> MotionModel:
    """Empirical arrival probability and in-EC step count per (class, bin).

    A sample is a UE seen at step ``t`` with ``t + horizon_steps`` still inside
    the trajectory. The UE counts as inside the EC at ``t + k`` only if the
    same id still occupies its slot, so departed UEs never arrive.
    """
    T = trajectory.steps
    if T < horizon_steps + 1:
        raise ValueError(f"trajectory has {T} steps; need at least {horizon_steps + 1}")
    n_bins = int(np.ceil(max_distance_km / bin_width_km - 1e-9))
    r2 = region.ec_radius_km**2
    in_ec = trajectory.x**2 + trajectory.y**2 <= r2
    base = T - horizon_steps
    overlap = np.zeros((base, trajectory.ids.shape[1]), dtype=np.int64)
    for k in range(1, horizon_steps + 1):
        same = trajectory.ids[k : k + base] == trajectory.ids[:base]
        overlap += same & in_ec[k : k + base]
    arrived = overlap > 0
    dist = np.hypot(trajectory.x[:base], trajectory.y[:base])
    bins = np.clip(np.floor(dist / bin_width_km).astype(np.int64), 0, n_bins - 1)
    key = (trajectory.cls[:base].astype(np.int64) * n_bins + bins).ravel()
    size = N_CLASSES * n_bins
    counts = np.bincount(key, minlength=size).reshape(N_CLASSES, n_bins)
    hits = np.bincount(key, weights=arrived.ravel(), minlength=size).reshape(N_CLASSES, n_bins)
    steps_in = np.bincount(key, weights=overlap.ravel(), minlength=size).reshape(N_CLASSES, n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = hits / counts
        o = steps_in / counts
    p, o = _fill_empty(p, o, counts)
    return MotionModel(horizon_steps, bin_width_km, p, o, counts)


def _fill_empty(p: np.ndarray, o: np.ndarray, counts: np.ndarray):
    # nearest observed bin of the same class; ties go to the inner bin
    p, o = p.copy(), o.copy()
    for c in range(p.shape[0]):
        seen = np.flatnonzero(counts[c] > 0)
        empty = np.flatnonzero(counts[c] == 0)
        if seen.size == 0:
            p[c], o[c] = 0.0, 0.0
            continue
        for b in empty:
            src = seen[np.argmin(np.abs(seen - b))]
            p[c, b], o[c, b] = p[c, src], o[c, src]
    return p, o


def arrival_stats(model: MotionModel, ue: UeRecord, region: RegionMap | None = None) -> ArrivalStats:
    # region is accepted for interface symmetry; the EC is always centred on the origin
    return model.lookup(int(ue.mobility_class), float(np.hypot(*ue.position)))


def arrival_arrays(model: MotionModel, world: World) -> tuple[np.ndarray, np.ndarray]:
    b = model.bin_of(world.distances())
    c = world.cls.astype(np.int64)
    return model.p_arrival[c, b], model.expected_overlap[c, b]


# --------------------------------------------------------------------------- risk

RiskEstimator = Callable[[np.ndarray, np.ndarray, float, int], np.ndarray]


def product_risk(p_arrival, expected_overlap, survival: float, horizon_steps: int):
    """Arrival probability times the outage probability over the expected stay.

    The per-step outage probability is the geometric mean over the horizon,
    ``p_step = 1 - survival**(1/h)``, so ``(1 - p_step)**overlap`` equals
    ``survival**(overlap/h)``.
    """
    p_arrival = np.asarray(p_arrival, dtype=float)
    expected_overlap = np.asarray(expected_overlap, dtype=float)
    return p_arrival * (1.0 - survival ** (expected_overlap / horizon_steps))


@dataclass(frozen=True)
class RiskEstimate:
    ue: int
    risk: float
    p_arrival: float
    expected_overlap: float
    p_outage_horizon: float


def estimate_csso_risk(
    model: MotionModel,
    ue: UeRecord,
    chain: BackhaulChain,
    backhaul_state: int,
    estimator: RiskEstimator = product_risk,
) -> RiskEstimate:
    stats = arrival_stats(model, ue)
    survival = survival_within(chain, backhaul_state, model.horizon_steps)
    risk = float(estimator(stats.p_arrival, stats.expected_overlap, survival, model.horizon_steps))
    return RiskEstimate(ue.id, risk, stats.p_arrival, stats.expected_overlap, 1.0 - survival)


def risk_array(
    model: MotionModel,
    world: World,
    chain: BackhaulChain,
    backhaul_state: int,
    estimator: RiskEstimator = product_risk,
) -> np.ndarray:
    """Risk for every UE slot of ``world`` (vectorized :func:`estimate_csso_risk`)."""
    p, o = arrival_arrays(model, world)
    survival = survival_within(chain, backhaul_state, model.horizon_steps)
    return estimator(p, o, survival, model.horizon_steps)
