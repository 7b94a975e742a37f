import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tzsim.backhaul import BackhaulChain, outage_probability_within
from tzsim.config import parse_config
from tzsim.experiment import prepare_world
from tzsim.mobility import MobilityClass, RegionMap, UeRecord, advance_step, init_world, make_world
from tzsim.risk import (
    MotionModel,
    Trajectory,
    arrival_stats,
    estimate_csso_risk,
    product_risk,
    risk_array,
    train_motion_model,
)

REGION = RegionMap()
CHAIN = BackhaulChain.default()


def still(i, pos):
    return UeRecord(id=i, position=pos, mobility_class=MobilityClass.STILL, basic_speed=0.0)


def still_model(positions, steps=5):
    world = make_world([still(i, p) for i, p in enumerate(positions)])
    worlds = [world]
    for _ in range(steps - 1):
        worlds.append(advance_step(worlds[-1]))
    return train_motion_model(Trajectory.from_worlds(worlds), REGION, horizon_steps=3)


@pytest.fixture(scope="module")
def mixed_model():
    positions = [(0.0, 0.0), (0.3, 0.1), (1.0, -1.2), (1.9, 0.0), (3.9, 3.9), (-3.0, 2.5), (0.0, -3.1)]
    return still_model(positions)


# ---------------------------------------------------------------- training


def test_still_inside_ec_always_arrives(mixed_model):
    for b in range(8):  # bins covering 0-2 km
        s = mixed_model.lookup(MobilityClass.STILL, b * 0.25 + 0.1)
        assert s.p_arrival == 1.0 and s.expected_overlap == 3.0


def test_still_outside_ec_never_arrives(mixed_model):
    for d in (3.1, 3.9, math.hypot(3.9, 3.9), 6.5):
        s = mixed_model.lookup(MobilityClass.STILL, d)
        assert s.p_arrival == 0.0 and s.expected_overlap == 0.0


def test_observed_bins_count_samples(mixed_model):
    # 5 snapshots, horizon 3 -> 2 samples per UE
    assert mixed_model.counts[MobilityClass.STILL, 0] == 2  # only (0, 0); (0.3, 0.1) lies in bin 1
    assert mixed_model.counts[MobilityClass.STILL, 1] == 2
    assert mixed_model.counts.sum() == 2 * 7


def test_unobserved_class_defaults_to_zero(mixed_model):
    for cls in (MobilityClass.LOW, MobilityClass.MEDIUM, MobilityClass.HIGH):
        assert np.all(mixed_model.p_arrival[cls] == 0.0)


def test_empty_bin_uses_nearest_observed_bin():
    model = still_model([(0.1, 0.0), (3.0, 0.0)])
    # bins 0 (inside) and 12 (outside) observed; bin 5 is nearer to 0, bin 7 nearer to 12
    assert model.lookup(MobilityClass.STILL, 5 * 0.25).p_arrival == 1.0
    assert model.lookup(MobilityClass.STILL, 7 * 0.25 + 0.01).p_arrival == 0.0
    # bin 6 is equidistant (6 from both); the inner neighbour wins
    assert model.lookup(MobilityClass.STILL, 6 * 0.25 + 0.01).p_arrival == 1.0


def test_rejects_short_trajectory():
    world = make_world([still(0, (0.0, 0.0))])
    with pytest.raises(ValueError, match="need at least 4"):
        train_motion_model(Trajectory.from_worlds([world] * 3), REGION, horizon_steps=3)


def accumulate_by_hand(worlds, horizon=3, width=0.25, n_bins=24):
    """Loop-based reference for the vectorized training accumulator."""
    hits, steps_in, counts = {}, {}, {}
    for t in range(len(worlds) - horizon):
        w = worlds[t]
        for slot in range(len(w)):
            d = math.hypot(w.x[slot], w.y[slot])
            key = (int(w.cls[slot]), min(int(d // width), n_bins - 1))
            inside = 0
            for k in range(1, horizon + 1):
                f = worlds[t + k]
                if f.ids[slot] == w.ids[slot] and f.x[slot] ** 2 + f.y[slot] ** 2 <= 4.0:
                    inside += 1
            counts[key] = counts.get(key, 0) + 1
            hits[key] = hits.get(key, 0) + (inside > 0)
            steps_in[key] = steps_in.get(key, 0) + inside
    return {k: (hits[k] / counts[k], steps_in[k] / counts[k], counts[k]) for k in counts}


def test_lookup_equals_hand_accumulator():
    worlds = [init_world(3, density=10)]
    for _ in range(20):
        worlds.append(advance_step(worlds[-1]))
    model = train_motion_model(Trajectory.from_worlds(worlds), REGION)
    reference = accumulate_by_hand(worlds)
    for (cls, b), (p, o, n) in reference.items():
        s = model.lookup(cls, b * 0.25 + 0.125)
        assert (s.p_arrival, s.expected_overlap, s.sample_count) == (pytest.approx(p, abs=1e-15), pytest.approx(o, abs=1e-15), n)
    # a LOW UE just outside the EC reads its bin's trained value
    low_b = 8  # 2.0-2.25 km
    if (MobilityClass.LOW, low_b) in reference:
        ue = UeRecord(id=0, position=(2.05, 0.0), mobility_class=MobilityClass.LOW, basic_speed=1.5)
        assert arrival_stats(model, ue).p_arrival == reference[(MobilityClass.LOW, low_b)][0]


def test_training_is_deterministic():
    worlds = [init_world(6, density=5)]
    for _ in range(10):
        worlds.append(advance_step(worlds[-1]))
    traj = Trajectory.from_worlds(worlds)
    assert train_motion_model(traj, REGION) == train_motion_model(traj, REGION)


def test_model_invariants_hold():
    worlds = [init_world(7, density=20)]
    for _ in range(30):
        worlds.append(advance_step(worlds[-1]))
    m = train_motion_model(Trajectory.from_worlds(worlds), REGION)
    assert np.all((0 <= m.p_arrival) & (m.p_arrival <= 1))
    assert np.all((0 <= m.expected_overlap) & (m.expected_overlap <= m.horizon_steps))
    assert np.all(m.expected_overlap[m.p_arrival == 0] == 0)
    assert np.all(m.expected_overlap >= m.p_arrival)


def test_model_json_round_trip(tmp_path, mixed_model):
    doc = mixed_model.to_dict()
    assert set(doc) == {"horizon_steps", "bin_width_km", "bins"}
    assert set(doc["bins"]["STILL:0"]) == {"p_arrival", "expected_overlap", "n"}
    path = tmp_path / "model.json"
    mixed_model.dump(path)
    assert MotionModel.load(path) == mixed_model


# ---------------------------------------------------------------- Monte-Carlo oracle


def fresh_high_ue_arrivals(n, rng, r_lo=3.0, r_hi=3.25, horizon=3):
    """Fraction of fresh HIGH UEs placed in an annulus that sit in the EC at a later step boundary.

    Independent numpy sub-stepper: 60 x 10 s per step, speed = basic x area factor
    evaluated at the start of each sub-step; a UE leaving the square is gone.
    """
    r = np.sqrt(rng.uniform(r_lo**2, r_hi**2, n))
    phi = rng.uniform(0, 2 * np.pi, n)
    x, y = r * np.cos(phi), r * np.sin(phi)
    speed = np.maximum(0.0, rng.normal(40.0, 5.0, n)) / 100.0  # km per 10 s
    factor = {"EC": 0.2, "I": 1.0, "II": 0.9, "III": 0.85, "IV": 0.8}
    alive = np.ones(n, dtype=bool)
    arrived = np.zeros(n, dtype=bool)
    for _ in range(horizon):
        theta = rng.uniform(0, 2 * np.pi, n)
        c, s = np.cos(theta), np.sin(theta)
        for _ in range(60):
            f = np.where(
                x * x + y * y <= 4.0,
                factor["EC"],
                np.where(y >= 0, np.where(x >= 0, factor["I"], factor["II"]), np.where(x < 0, factor["III"], factor["IV"])),
            )
            move = alive
            x = np.where(move, x + f * speed * c, x)
            y = np.where(move, y + f * speed * s, y)
            alive &= (np.abs(x) <= 4.0) & (np.abs(y) <= 4.0)
        arrived |= alive & (x * x + y * y <= 4.0)
    return arrived.mean()


@pytest.fixture(scope="module")
def trained_default_model():
    cfg = parse_config({})
    _, _, model = prepare_world(cfg, 1)
    return model


def test_high_bin_matches_monte_carlo(trained_default_model):
    oracle = fresh_high_ue_arrivals(100_000, np.random.default_rng(42))
    b = 12  # 3.0-3.25 km
    assert trained_default_model.counts[MobilityClass.HIGH, b] > 0
    assert abs(trained_default_model.p_arrival[MobilityClass.HIGH, b] - oracle) <= 0.02


# ---------------------------------------------------------------- risk


def test_zero_arrival_means_zero_risk():
    for state in range(1, 10):
        assert product_risk(0.0, 0.0, 1 - outage_probability_within(CHAIN, state, 3), 3) == 0.0


@pytest.mark.parametrize("state", range(1, 10))
def test_still_inside_ec_risk_equals_horizon_outage(mixed_model, state):
    est = estimate_csso_risk(mixed_model, still(0, (0.0, 0.0)), CHAIN, state)
    assert est.risk == outage_probability_within(CHAIN, state, 3)
    assert est.p_outage_horizon == est.risk
    assert (est.p_arrival, est.expected_overlap) == (1.0, 3.0)


def test_disconnected_still_inside_is_certain(mixed_model):
    chain = BackhaulChain(np.eye(9), CHAIN.cssr)
    assert estimate_csso_risk(mixed_model, still(0, (0.5, 0.5)), chain, 9).risk == 1.0


@pytest.mark.parametrize("state", range(1, 10))
def test_still_outside_ec_risk_is_zero(mixed_model, state):
    assert estimate_csso_risk(mixed_model, still(0, (3.9, 3.9)), CHAIN, state).risk == 0.0


def test_risk_array_matches_per_ue(mixed_model):
    world = make_world([still(i, p) for i, p in enumerate([(0, 0), (1.9, 0), (3.9, 3.9)])])
    vec = risk_array(mixed_model, world, CHAIN, 5)
    singles = [estimate_csso_risk(mixed_model, world.ue(i), CHAIN, 5).risk for i in range(3)]
    assert vec.tolist() == singles


unit = st.floats(0, 1)


@settings(max_examples=300)
@given(unit, st.floats(0, 3), unit)
def test_risk_in_unit_interval(p, o, survival):
    r = float(product_risk(p, o, survival, 3))
    assert 0.0 <= r <= 1.0


@given(unit, st.floats(0, 3), unit, unit)
def test_risk_monotone_in_horizon_outage(p, o, s1, s2):
    lo, hi = sorted((s1, s2))
    # lower survival = higher horizon outage
    assert product_risk(p, o, lo, 3) >= product_risk(p, o, hi, 3)


@given(unit, unit, st.floats(0, 3), unit)
def test_risk_monotone_in_arrival(p1, p2, o, s):
    lo, hi = sorted((p1, p2))
    assert product_risk(lo, o, s, 3) <= product_risk(hi, o, s, 3)


@given(unit, st.floats(0, 3), st.floats(0, 3), unit)
def test_risk_monotone_in_overlap(p, o1, o2, s):
    lo, hi = sorted((o1, o2))
    assert product_risk(p, lo, s, 3) <= product_risk(p, hi, s, 3)


def test_risk_formula_matches_per_step_form():
    p, o, h = 0.7, 1.6, 3
    ph = outage_probability_within(CHAIN, 4, h)
    p_step = 1 - (1 - ph) ** (1 / h)
    assert product_risk(p, o, 1 - ph, h) == pytest.approx(p * (1 - (1 - p_step) ** o), rel=1e-12)
