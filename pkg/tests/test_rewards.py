import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aircombat.airframe import AircraftState, RelativeGeometry, Vec3, relative_geometry
from aircombat.errors import ConfigError
from aircombat.rewards import (
    CombatEvent,
    EventKind,
    RewardConfig,
    altitude_penalties,
    altitude_reward,
    compose,
    event_reward,
    orientation_factor,
    posture_reward,
    range_factor,
    total_reward,
)

CFG = RewardConfig()


def geom(ao, ta, distance):
    return RelativeGeometry(distance, 0.0, ao, ta, 0.0, 0.0)


def state(alt, speed):
    return AircraftState.level(Vec3(0.0, 0.0, alt), 0.0, speed)


class TestAltitudeReward:
    def test_above_safe_altitude(self):
        assert altitude_reward(state(6000.0, 10.0), CFG) == 0.0

    def test_boundary_at_safe_speed(self):
        assert altitude_penalties(state(3800.0, CFG.safe_speed), CFG) == (0.0, 0.0)

    def test_both_saturate_on_the_ground(self):
        assert altitude_penalties(state(0.0, 0.0), CFG) == (-1.0, -1.0)
        assert altitude_reward(state(0.0, 0.0), CFG) == -2.0

    def test_hand_values(self):
        pv, ph = altitude_penalties(state(1750.0, 75.0), CFG)
        assert pv == pytest.approx(-0.5)
        assert ph == pytest.approx(-0.5)

    @given(st.floats(-1000.0, 20_000.0), st.floats(0.0, 400.0))
    def test_bounds(self, alt, speed):
        pv, ph = altitude_penalties(state(alt, speed), CFG)
        assert -1.0 <= pv <= 0.0 and -1.0 <= ph <= 0.0
        if alt >= CFG.safe_altitude:
            assert pv + ph == 0.0


class TestPosture:
    def test_tail_chase_in_band(self):
        assert posture_reward(geom(0.0, math.pi, 2000.0), CFG) == 1.0

    def test_symmetric_standoff(self):
        for d in (500.0, 2000.0, 15_000.0):
            g = geom(0.7, 0.7, d)
            assert posture_reward(g, CFG) == min(range_factor(d, CFG), 0.0)

    def test_far_distance_gives_floor_for_every_angle(self):
        grid = np.linspace(0.0, math.pi, 13)
        for ao, ta in itertools.product(grid, grid):
            for d in (20_000.0, 35_000.0, 1e6):
                assert posture_reward(geom(ao, ta, d), CFG) == CFG.far_penalty_floor

    def test_range_breakpoints(self):
        assert range_factor(0.0, CFG) == 0.0
        assert range_factor(500.0, CFG) == 0.5
        assert range_factor(1000.0, CFG) == 1.0
        assert range_factor(3000.0, CFG) == 1.0
        assert range_factor(6500.0, CFG) == pytest.approx(0.5)
        assert range_factor(10_000.0, CFG) == 0.0
        assert range_factor(15_000.0, CFG) == pytest.approx(-0.05)

    @pytest.mark.parametrize("km", [1.0, 3.0, 10.0, 20.0])
    def test_continuous_at_breakpoints(self, km):
        for ao, ta in ((0.0, math.pi), (1.0, 2.0), (2.5, 0.3)):
            lo = posture_reward(geom(ao, ta, km * 1000.0 - 1e-6), CFG)
            hi = posture_reward(geom(ao, ta, km * 1000.0 + 1e-6), CFG)
            assert abs(lo - hi) < 1e-8

    @given(st.floats(0.0, math.pi), st.floats(0.0, math.pi))
    def test_orientation_antisymmetric(self, a, b):
        assert orientation_factor(a, b) == -orientation_factor(b, a)
        assert -1.0 <= orientation_factor(a, b) <= 1.0

    @given(st.floats(-5e4, 5e4), st.floats(-5e4, 5e4), st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
    def test_mutual_pair_is_zero_sum(self, n, e, h1, h2):
        a = AircraftState.level(Vec3(0.0, 0.0, 5000.0), h1, 200.0)
        b = AircraftState.level(Vec3(n, e, 5300.0), h2, 250.0)
        ga, gb = relative_geometry(a, b), relative_geometry(b, a)
        assert orientation_factor(ga.ao, ga.ta) == pytest.approx(-orientation_factor(gb.ao, gb.ta), abs=1e-12)


class TestEvents:
    def test_event_values(self):
        assert event_reward([CombatEvent(EventKind.SHOT_DOWN_BY_MISSILE, 0, 1)], 0, CFG) == -200.0
        assert event_reward([CombatEvent(EventKind.CRASH, 0)], 0, CFG) == -200.0
        assert event_reward([CombatEvent(EventKind.ENEMY_KILL, 0, 1)], 0, CFG) == 200.0

    def test_kill_and_crash_cancel(self):
        events = [CombatEvent(EventKind.ENEMY_KILL, 0, 1), CombatEvent(EventKind.CRASH, 0)]
        assert event_reward(events, 0, CFG) == 0.0

    def test_other_agents_events_ignored(self):
        assert event_reward([CombatEvent(EventKind.CRASH, 1)], 0, CFG) == 0.0

    def test_kill_needs_counterpart(self):
        with pytest.raises(ValueError):
            CombatEvent(EventKind.ENEMY_KILL, 0)

    @given(st.lists(st.tuples(st.sampled_from(list(EventKind)), st.integers(0, 3)), max_size=8), st.randoms())
    def test_additive_and_permutation_invariant(self, raw, rnd):
        events = [CombatEvent(k, s, (s + 1) % 4) for k, s in raw]
        shuffled = list(events)
        rnd.shuffle(shuffled)
        for agent in range(4):
            total = event_reward(events, agent, CFG)
            assert total == event_reward(shuffled, agent, CFG)
            assert total == sum(event_reward([e], agent, CFG) for e in events)


class TestComposition:
    def test_perfect_tail_chase(self):
        s = state(6000.0, 250.0)
        out = total_reward(s, geom(0.0, math.pi, 2000.0), [], CFG)
        assert out.total == 1.0

    def test_all_zero(self):
        out = compose(0.0, 0.0, 0.0, CFG)
        assert (out.altitude, out.posture, out.event, out.total) == (0.0, 0.0, 0.0, 0.0)

    def test_random_batch_total_is_weighted_sum(self, rng):
        cfg = RewardConfig(weight_altitude=0.7, weight_posture=1.3)
        for _ in range(500):
            s = state(rng.uniform(-100.0, 9000.0), rng.uniform(0.0, 400.0))
            g = geom(rng.uniform(0, math.pi), rng.uniform(0, math.pi), rng.uniform(1.0, 30_000.0))
            events = [CombatEvent(EventKind.CRASH, 0)] if rng.random() < 0.2 else []
            out = total_reward(s, g, events, cfg)
            pv, ph = altitude_penalties(s, cfg)
            rf = range_factor(g.distance, cfg)
            posture = 0.5 * (math.cos(g.ao) - math.cos(g.ta)) * max(rf, 0.0) + min(rf, 0.0)
            expected = 0.7 * (pv + ph) + 1.3 * posture + (-200.0 if events else 0.0)
            assert abs(out.total - expected) <= 1e-12
            assert out.total == cfg.weight_altitude * out.altitude + cfg.weight_posture * out.posture + out.event


class TestConfig:
    def test_defaults(self):
        assert (CFG.event_kill, CFG.event_death, CFG.event_crash) == (200.0, -200.0, -200.0)

    def test_rejects_bad_bands(self):
        with pytest.raises(ConfigError):
            RewardConfig(range_inner_km=3.0, range_outer_km=2.0)
        with pytest.raises(ConfigError):
            RewardConfig(danger_altitude=5000.0)
