import math

import numpy as np
import pytest

from towerdyn.unimodal import make_quadratic
from towerdyn.recurrence import critical_orbit
from towerdyn.tower import (TowerParams, build_tower, bound_free_times,
                            fall_intervals, key_estimate_check)
from towerdyn import bench


@pytest.fixture(scope="module")
def ulam_tower():
    m = make_quadratic(2.0)
    orb = critical_orbit(m, 400)
    par = TowerParams(delta=0.2, beta1=0.5, beta2=0.9, gamma=0.0, M_max=14)
    return m, orb, build_tower(m, orb, par)


@pytest.fixture(scope="module")
def a19_tower():
    m, orb, tw = bench.alpha_tower(1.9, M_max=40, orbit_n=4000)
    return m, orb, tw


def test_params_validation():
    with pytest.raises(ValueError):
        TowerParams(delta=0.2, beta1=0.01, beta2=0.02, gamma=0.1, M_max=10)  # beta1 < 1.5 gamma
    with pytest.raises(ValueError):
        TowerParams(delta=0.2, beta1=0.9, beta2=0.5, gamma=0.0, M_max=10)   # ordering
    with pytest.raises(ValueError):
        TowerParams(delta=1.2, beta1=0.5, beta2=0.9, gamma=0.0, M_max=10)


def test_ulam_level_geometry(ulam_tower):
    _, orb, tw = ulam_tower
    assert tw.H_delta == 2
    for k in range(2, 13):
        lo, hi = tw.level_interval(k)
        assert lo == -1.0  # clipped at the endpoint
        assert abs(hi - (-1.0 + math.exp(-0.9 * k))) < 1e-12
        assert not tw.in_level(k, 0.0)  # critical point outside every window


def test_tower_step_cases(ulam_tower):
    m, _, tw = ulam_tower
    # free move on the ground floor
    assert tw.step((0.5, 0)) == (m.f(0.5), 0)
    # mandatory climb from the central interval
    y, k = tw.step((0.05, 0))
    assert k == 1 and abs(y - 0.995) < 1e-12
    with pytest.raises(ValueError):
        tw.step((1.5, 0))


def test_pi_equivariance(ulam_tower):
    m, _, tw = ulam_tower
    rng = np.random.default_rng(0)
    state = (0.3, 0)
    for _ in range(200):
        nxt = tw.step(state)
        assert nxt[0] == m.f(state[0])  # projection commutes with the step
        state = nxt if nxt[1] <= tw.params.M_max - 1 else (nxt[0], 0)


@pytest.mark.parametrize("x", [0.3, -0.77, 0.123, 0.6421])
def test_schedule_trajectory_consistency(ulam_tower, x):
    _, _, tw = ulam_tower
    sched = bound_free_times(tw, x, 300)
    levels = tw.trajectory_levels(x, 300)
    for T, S in sched.pairs():
        if math.isinf(T) or math.isinf(S):
            break
        if S + 1 > 300:
            break
        # ground floor through [S_{i-1}, T_i], climbing on (T_i, S_i)
        assert levels[T] == 0
        for j in range(T + 1, S):
            assert levels[j] == j - T, (T, S, levels[T:S + 1])
        assert levels[S] == 0


def test_schedule_ordering_and_spacing(a19_tower):
    _, _, tw = a19_tower
    rng = np.random.default_rng(5)
    for x in rng.uniform(-1, 1, 100):
        sched = bound_free_times(tw, float(x), 400)
        prev_S = 0
        for T, S in sched.pairs():
            if math.isinf(T):
                break
            assert prev_S <= T < S or math.isinf(S)
            if not math.isinf(S):
                assert S - T >= tw.H_delta
                prev_S = S


def test_trapped_and_critical_sentinels(ulam_tower):
    m, _, tw = ulam_tower
    # x = 1 maps to the fixed point -1: never enters the central interval
    sched = bound_free_times(tw, 1.0, 200)
    assert math.isinf(sched.T[0])
    # the critical point itself: T_1 = 0, S_1 = INF
    sched = bound_free_times(tw, 0.0, 200)
    assert sched.T[0] == 0 and math.isinf(sched.S[0]) and sched.hit_critical


def test_fall_intervals_structure(ulam_tower):
    _, _, tw = ulam_tower
    with pytest.raises(ValueError):
        fall_intervals(tw, tw.H_delta - 1)
    total = 0.0
    for j in range(tw.H_delta, tw.params.M_max + 1):
        ip, im = fall_intervals(tw, j, n_scan=2500)
        for lo, hi in ip:
            assert 0 < lo < hi <= tw.params.delta
        for lo, hi in im:
            assert -tw.params.delta <= lo < hi < 0
        total += sum(b - a for a, b in ip) + sum(b - a for a, b in im)
        # midpoints reproduce the requested return time as a schedule
        for lo, hi in ip + im:
            mid = 0.5 * (lo + hi)
            sched = bound_free_times(tw, mid, 200)
            assert sched.T[0] == 0 and sched.S[0] == j
    # union covers the central interval up to the unresolved tail
    assert total > 0.98 * 2 * tw.params.delta


def test_fall_intervals_golden_ulam(ulam_tower):
    _, _, tw = ulam_tower
    ip, _ = fall_intervals(tw, 3, n_scan=2500)
    assert len(ip) == 1
    lo, hi = ip[0]
    assert abs(lo - 0.0460719) < 1e-4 and abs(hi - 0.1452856) < 1e-4


def test_key_estimate_ulam(ulam_tower):
    _, orb, _ = ulam_tower
    ke = key_estimate_check(orb, 0.0, 20, 150)
    # geometric series: sum = sum 4^{-m} < 1/3
    assert abs(ke["max_C"] - 1.0 / 3.0) < 1e-6
    assert ke["bounded"]
    ke1 = key_estimate_check(orb, 0.0, 5, 1)
    assert abs(ke1["sum"][0] - 0.25) < 1e-12  # single term 1/|f'(c_1)|


def test_key_estimate_a19():
    orb = critical_orbit(make_quadratic(1.9), 600)
    ke = key_estimate_check(orb, 0.12, 50, 400)
    assert ke["bounded"], ke["max_C"]
    assert math.isfinite(ke["max_C"])


def test_delta_too_large_rejected():
    m = make_quadratic(2.0)
    orb = critical_orbit(m, 200)
    with pytest.raises(ValueError):
        # huge central interval: the first climb cannot stay inside B_1
        build_tower(m, orb, TowerParams(delta=0.9, beta1=0.5, beta2=0.9, gamma=0.0, M_max=10))
