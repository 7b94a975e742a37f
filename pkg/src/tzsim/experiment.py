"""Threshold-gated profile synchronization experiment.

One run goes through three phases: warm-up (mobility only), training
(trajectory capture and motion-model fit) and testing. During testing, every
``interval_steps`` steps the UEs whose outage risk exceeds the policy
threshold get their profiles pushed to the local subscriber server (LSS),
one traffic unit each. On every outage step, each UE inside the edge cloud
without a synced profile files one CSSO report.

Several policies can share one simulated world ("lanes"). Neither the
moving population nor the backhaul draws depend on the policy, so running the
lanes side by side gives exactly the results of separate runs with the same
seed (common random numbers) at a fraction of the cost.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import rng
from .backhaul import BackhaulChain, StateClass, draw_csso, step_chain
from .config import ScenarioConfig
from .mobility import Trust, World, advance_step, init_world, run_warmup
from .risk import MotionModel, Trajectory, risk_array, train_motion_model
from .trust_zone import (
    AuthOutcome,
    TrustStatus,
    TrustZoneState,
    TzMode,
    authenticate,
    authenticate_central_batch,
    complete_handback,
    depart,
    on_backhaul_report,
)

log = logging.getLogger(__name__)

SERIES_HEADER = ("step", "backhaul_state", "csso", "reports_this_step", "syncs_this_round", "mode")
SWEEP_HEADER = ("threshold", "seed", "csso_reports", "sync_traffic", "baseline_reports", "reliability_gain")


@dataclass(frozen=True)
class SyncPolicy:
    threshold: float = 0.05
    interval_steps: int = 3
    enabled: bool = True
    persist_until_departure: bool = False

    def __post_init__(self):
        if self.interval_steps < 1:
            raise ValueError("interval_steps must be >= 1")

    @property
    def label(self) -> str:
        return "disabled" if not self.enabled else format_threshold(self.threshold)


def format_threshold(t: float | None) -> str:
    return "disabled" if t is None else repr(float(t))


@dataclass(frozen=True, eq=False)
class LssState:
    """Profiles currently valid in the local subscriber server."""

    ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    epoch: int = 0

    def __contains__(self, ue: int) -> bool:
        i = np.searchsorted(self.ids, ue)
        return bool(i < self.ids.size and self.ids[i] == ue)

    def __len__(self) -> int:
        return int(self.ids.size)

    def mask(self, world: World) -> np.ndarray:
        return np.isin(world.ids, self.ids, assume_unique=True)


@dataclass(frozen=True)
class SeriesRow:
    step: int
    backhaul_state: int
    csso: bool
    reports: int
    syncs: int
    mode: str


@dataclass
class MetricsLedger:
    label: str = "disabled"
    csso_reports_total: int = 0
    sync_traffic_total: int = 0
    baseline_reports: int = 0
    rounds_run: int = 0
    rounds_skipped: int = 0
    series: list[SeriesRow] = field(default_factory=list)
    _reports_now: int = 0
    _syncs_now: int = 0

    def close_step(self, step: int, backhaul_state: int, csso: bool, mode: str) -> SeriesRow:
        row = SeriesRow(step, backhaul_state, csso, self._reports_now, self._syncs_now, mode)
        self.series.append(row)
        self._reports_now = self._syncs_now = 0
        return row

    def replay_totals(self) -> tuple[int, int]:
        return sum(r.reports for r in self.series), sum(r.syncs for r in self.series)

    @property
    def reliability_gain(self) -> float:
        if self.baseline_reports == 0:
            return 0.0
        return 1.0 - self.csso_reports_total / self.baseline_reports


# --------------------------------------------------------------------------- operations


def _sync_with_risk(policy: SyncPolicy, world: World, risk: np.ndarray, lss: LssState) -> tuple[LssState, int]:
    if not policy.enabled:
        return LssState(np.empty(0, dtype=np.int64), lss.epoch + 1), 0
    chosen = np.sort(world.ids[risk > policy.threshold])
    if policy.persist_until_departure:
        kept = lss.ids[np.isin(lss.ids, world.ids, assume_unique=True)]
        new = np.setdiff1d(chosen, kept, assume_unique=True)
        return LssState(np.union1d(kept, chosen), lss.epoch + 1), int(new.size)
    return LssState(chosen, lss.epoch + 1), int(chosen.size)


def sync_round(
    policy: SyncPolicy,
    world: World,
    model: MotionModel,
    chain: BackhaulChain,
    backhaul_state: int,
    lss: LssState,
    metrics: MetricsLedger,
) -> tuple[LssState, MetricsLedger]:
    """One synchronization round; skipped while the backhaul is disconnected."""
    if chain.class_of(backhaul_state) is StateClass.DISCONNECTED:
        metrics.rounds_skipped += 1
        return lss, metrics
    risk = risk_array(model, world, chain, backhaul_state)
    lss, traffic = _sync_with_risk(policy, world, risk, lss)
    metrics.sync_traffic_total += traffic
    metrics._syncs_now += traffic
    metrics.rounds_run += 1
    return lss, metrics


def count_exposed(world: World, lss: LssState, scope: str = "ec", in_ec: np.ndarray | None = None) -> int:
    exposed = ~lss.mask(world)
    if scope == "ec":
        exposed &= world.in_ec() if in_ec is None else in_ec
    return int(exposed.sum())


def apply_csso(world: World, lss: LssState, metrics: MetricsLedger, step: int, scope: str = "ec") -> MetricsLedger:
    """File one report per exposed UE: inside the EC (or region) and not synced."""
    reports = count_exposed(world, lss, scope)
    metrics.csso_reports_total += reports
    metrics._reports_now += reports
    return metrics


# --------------------------------------------------------------------------- experiment


@dataclass
class _Lane:
    policy: SyncPolicy
    metrics: MetricsLedger
    tz: TrustZoneState
    lss: LssState = field(default_factory=LssState)
    trust: np.ndarray | None = None
    synced_mask: np.ndarray | None = None


@dataclass
class ExperimentResult:
    seed: int
    metrics: MetricsLedger
    world: World
    model: MotionModel
    trust_zone: TrustZoneState
    warmup_counts: np.ndarray
    lanes: dict[str, MetricsLedger] = field(default_factory=dict)


def _policy_for(cfg: ScenarioConfig, threshold: float | None, enabled: bool = True) -> SyncPolicy:
    s = cfg.sync
    return SyncPolicy(
        threshold=1.0 if threshold is None else float(threshold),
        interval_steps=s.interval_steps,
        enabled=enabled and threshold is not None,
        persist_until_departure=s.persist_until_departure,
    )


def _authenticate_arrivals(lane: _Lane, world: World, in_ec: np.ndarray, step: int, retry_emergency: bool) -> None:
    tz, trust = lane.tz, lane.trust
    pending = trust == Trust.UNAUTHENTICATED
    if tz.mode is not TzMode.LOCAL_SECURITY or retry_emergency:
        pending |= trust == Trust.EMERGENCY_ONLY
    slots = np.flatnonzero(in_ec & pending)
    if slots.size == 0:
        return
    if tz.mode is TzMode.CENTRAL_SECURITY:
        authenticate_central_batch(tz, world.ids[slots].tolist(), step)
        trust[slots] = Trust.CENTRALLY_AUTHENTICATED
        return
    synced = lane.synced_mask
    for s in slots.tolist():
        _, outcome = authenticate(tz, int(world.ids[s]), bool(synced[s]), step)
        if outcome is AuthOutcome.RETRY_LATER:
            continue
        trust[s] = _OUTCOME_TRUST[outcome]


_OUTCOME_TRUST = {
    AuthOutcome.CENTRALLY_AUTHENTICATED: Trust.CENTRALLY_AUTHENTICATED,
    AuthOutcome.TEMPORARILY_TRUSTED: Trust.TEMPORARILY_TRUSTED,
    AuthOutcome.EMERGENCY_ONLY: Trust.EMERGENCY_ONLY,
}


def prepare_world(cfg: ScenarioConfig, seed: int) -> tuple[World, np.ndarray, MotionModel]:
    """Warm-up and training phases; returns the world at the start of testing."""
    warm_steps, train_steps, _ = cfg.phase_steps()
    region = cfg.region_map()
    world = init_world(seed, cfg.density_per_km2, region, cfg.mobility_params())
    world, warm_counts = run_warmup(world, warm_steps)
    snapshots = [world]
    for _ in range(train_steps):
        world = advance_step(world)
        snapshots.append(world)
    r = cfg.risk
    model = train_motion_model(
        Trajectory.from_worlds(snapshots), region, r.horizon_steps, r.bin_width_km, r.max_distance_km
    )
    return world, warm_counts, model


def simulate_lanes(
    cfg: ScenarioConfig,
    seed: int,
    thresholds: Sequence[float | None],
    chain: BackhaulChain | None = None,
) -> tuple[dict[str, MetricsLedger], ExperimentResult]:
    """Run one seeded experiment for several thresholds at once.

    ``None`` in ``thresholds`` is the no-TZ baseline; a baseline lane always
    runs so every ledger carries ``baseline_reports``. The returned
    :class:`ExperimentResult` describes the first requested lane.
    """
    chain = chain or cfg.backhaul_chain()
    _, _, test_steps = cfg.phase_steps()
    world, warm_counts, model = prepare_world(cfg, seed)
    n = len(world)

    labels = [format_threshold(t) for t in thresholds]
    wanted = list(dict.fromkeys(labels + ["disabled"]))
    by_label = dict(zip(labels, thresholds))
    lanes: dict[str, _Lane] = {}
    for label in wanted:
        t = by_label.get(label)
        enabled = cfg.sync.enabled and label != "disabled"
        lanes[label] = _Lane(
            policy=_policy_for(cfg, t, enabled),
            metrics=MetricsLedger(label=label),
            tz=TrustZoneState(trigger_states=frozenset(cfg.trust_zone.trigger_states)),
            trust=np.zeros(n, dtype=np.int8),
            synced_mask=np.zeros(n, dtype=bool),
        )

    interval = cfg.sync.interval_steps
    scope = cfg.sync.csso_scope
    batch = cfg.trust_zone.handback_batch
    triggers = frozenset(cfg.trust_zone.trigger_states)
    state = cfg.chain.initial_state

    for step in range(test_steps):
        prev_ids = world.ids
        world = advance_step(world)
        departed = np.flatnonzero(world.ids != prev_ids)
        state = step_chain(chain, state, rng.uniform_scalar(seed, rng.TAG_CHAIN, 0, step))
        klass = chain.class_of(state)
        in_ec = world.in_ec()
        for lane in lanes.values():
            if departed.size:
                known = departed[lane.trust[departed] != Trust.UNAUTHENTICATED]
                if known.size:
                    depart(lane.tz, prev_ids[known].tolist())
                lane.trust[departed] = Trust.UNAUTHENTICATED
                lane.synced_mask[departed] = False
            on_backhaul_report(lane.tz, klass, state)

        synced_now = False
        if step % interval == 0:
            if klass is StateClass.DISCONNECTED:
                for lane in lanes.values():
                    lane.metrics.rounds_skipped += 1
            else:
                synced_now = True
                risk = risk_array(model, world, chain, state)
                for lane in lanes.values():
                    lane.lss, traffic = _sync_with_risk(lane.policy, world, risk, lane.lss)
                    lane.synced_mask = lane.lss.mask(world)
                    lane.metrics.sync_traffic_total += traffic
                    lane.metrics._syncs_now += traffic
                    lane.metrics.rounds_run += 1

        for lane in lanes.values():
            _authenticate_arrivals(lane, world, in_ec, step, synced_now)

        csso = draw_csso(chain, state, rng.uniform_scalar(seed, rng.TAG_CSSO, 0, step))
        if csso:
            scope_mask = in_ec if scope == "ec" else np.ones(n, dtype=bool)
            for lane in lanes.values():
                reports = int((scope_mask & ~lane.synced_mask).sum())
                lane.metrics.csso_reports_total += reports
                lane.metrics._reports_now += reports

        for lane in lanes.values():
            tz = lane.tz
            if tz.mode is TzMode.HANDBACK_IN_PROGRESS and state not in triggers:
                complete_handback(tz, batch, step)
                tt = np.flatnonzero(lane.trust == Trust.TEMPORARILY_TRUSTED)
                for s in tt.tolist():
                    if tz.status(int(world.ids[s])) is TrustStatus.CENTRALLY_AUTHENTICATED:
                        lane.trust[s] = Trust.CENTRALLY_AUTHENTICATED
            lane.metrics.close_step(step, state, csso, tz.mode.value)

    baseline = lanes["disabled"].metrics.csso_reports_total
    ledgers = {}
    for label, lane in lanes.items():
        lane.metrics.baseline_reports = baseline
        ledgers[label] = lane.metrics
    first = lanes[labels[0]] if labels else lanes["disabled"]
    final_world = world.with_columns(trust=first.trust, synced=first.synced_mask)
    result = ExperimentResult(seed, first.metrics, final_world, model, first.tz, warm_counts, ledgers)
    return ledgers, result


def run_experiment(cfg: ScenarioConfig, seed: int | None = None, threshold: float | None | str = "config") -> ExperimentResult:
    """Single-policy experiment; by default uses ``cfg.sync.threshold``.

    A disabled policy (``cfg.sync.enabled`` false or ``threshold=None``) is
    the no-TZ baseline.
    """
    seed = cfg.seed if seed is None else seed
    if threshold == "config":
        threshold = cfg.sync.threshold if cfg.sync.enabled else None
    _, result = simulate_lanes(cfg, seed, [threshold])
    return result


# --------------------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepRow:
    threshold: str
    seed: int
    csso_reports: int
    sync_traffic: int
    baseline_reports: int
    reliability_gain: float


def _sweep_seed(args) -> list[SweepRow]:
    cfg, seed, thresholds = args
    ledgers, _ = simulate_lanes(cfg, seed, thresholds)
    rows = []
    for t in thresholds:
        m = ledgers[format_threshold(t)]
        rows.append(SweepRow(m.label, seed, m.csso_reports_total, m.sync_traffic_total, m.baseline_reports, m.reliability_gain))
    return rows


def threshold_sweep(
    cfg: ScenarioConfig, seeds: Sequence[int], thresholds: Sequence[float | None], workers: int = 1
) -> list[SweepRow]:
    """Every (threshold, seed) cell under common random numbers.

    Rows are ordered by seed, then by the given threshold order, regardless
    of ``workers``.
    """
    if not seeds:
        raise ValueError("at least one seed is required")
    if len(thresholds) < 2:
        raise ValueError("at least two thresholds are required")
    labels = [format_threshold(t) for t in thresholds]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate thresholds")
    jobs = [(cfg, int(s), list(thresholds)) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_sweep_seed, jobs))
    else:
        chunks = [_sweep_seed(j) for j in jobs]
    return [row for chunk in chunks for row in chunk]


def _order_key(label: str) -> float:
    # disabled behaves like an infinitely high threshold
    return math.inf if label == "disabled" else float(label)


def monotonicity_violations(rows: Iterable[SweepRow]) -> list[str]:
    """Per seed: reports must not rise and traffic must not fall as the threshold drops."""
    by_seed: dict[int, list[SweepRow]] = {}
    for r in rows:
        by_seed.setdefault(r.seed, []).append(r)
    problems = []
    for seed, group in by_seed.items():
        group = sorted(group, key=lambda r: _order_key(r.threshold), reverse=True)
        for hi, lo in zip(group, group[1:]):
            if lo.csso_reports > hi.csso_reports:
                problems.append(f"seed {seed}: reports rise from {hi.threshold} to {lo.threshold}")
            if lo.sync_traffic < hi.sync_traffic:
                problems.append(f"seed {seed}: traffic falls from {hi.threshold} to {lo.threshold}")
        for r in group:
            if r.threshold == "disabled" and r.sync_traffic != 0:
                problems.append(f"seed {seed}: baseline has traffic {r.sync_traffic}")
    return problems


# --------------------------------------------------------------------------- output


def _num(value: float) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)


def series_csv(metrics: MetricsLedger) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_HEADER)
    for r in metrics.series:
        w.writerow((r.step, r.backhaul_state, int(r.csso), r.reports, r.syncs, r.mode))
    return buf.getvalue()


def sweep_csv(rows: Sequence[SweepRow], traffic_unit: float = 1.0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow(
            (r.threshold, r.seed, r.csso_reports, _num(r.sync_traffic * traffic_unit), r.baseline_reports, repr(float(r.reliability_gain)))
        )
    return buf.getvalue()


def sweep_long_csv(rows: Sequence[SweepRow], traffic_unit: float = 1.0) -> str:
    """Plot-ready long format: one (threshold, seed, metric, value) per line."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("threshold", "seed", "metric", "value"))
    for r in rows:
        w.writerow((r.threshold, r.seed, "csso_reports", r.csso_reports))
        w.writerow((r.threshold, r.seed, "sync_traffic", _num(r.sync_traffic * traffic_unit)))
        w.writerow((r.threshold, r.seed, "reliability_gain", repr(float(r.reliability_gain))))
    return buf.getvalue()


def sweep_summary_csv(rows: Sequence[SweepRow], traffic_unit: float = 1.0) -> str:
    """Per-threshold means across seeds."""
    groups: dict[str, list[SweepRow]] = {}
    for r in rows:
        groups.setdefault(r.threshold, []).append(r)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("threshold", "n_seeds", "mean_csso_reports", "mean_sync_traffic", "mean_baseline_reports", "mean_reliability_gain"))
    for label, g in groups.items():
        k = len(g)
        w.writerow(
            (
                label,
                k,
                repr(sum(r.csso_reports for r in g) / k),
                repr(sum(r.sync_traffic for r in g) * traffic_unit / k),
                repr(sum(r.baseline_reports for r in g) / k),
                repr(sum(r.reliability_gain for r in g) / k),
            )
        )
    return buf.getvalue()


def summary_dict(result: ExperimentResult, cfg: ScenarioConfig) -> dict:
    m = result.metrics
    return {
        "seed": result.seed,
        "threshold": m.label,
        "testing_steps": len(m.series),
        "csso_reports_total": m.csso_reports_total,
        "sync_traffic_total": m.sync_traffic_total,
        "sync_traffic_weighted": m.sync_traffic_total * cfg.sync.traffic_unit,
        "baseline_reports": m.baseline_reports,
        "reliability_gain": m.reliability_gain,
        "csso_steps": sum(1 for r in m.series if r.csso),
        "sync_rounds_run": m.rounds_run,
        "sync_rounds_skipped": m.rounds_skipped,
        "population": len(result.world),
        "audit_records_flushed": len(result.trust_zone.central_log),
        "final_mode": result.trust_zone.mode.value,
    }


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_json(path: Path, doc: dict) -> None:
    write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
