import math

import numpy as np
import pytest

from towerdyn.unimodal import make_quadratic, make_family, PolyProfile, BumpProfile
from towerdyn.recurrence import critical_orbit
from towerdyn.tce import (alpha_candidate_partial, horizontality_defect, horizontalize,
                          alpha_resummed, make_alpha_evaluator, tce_residual,
                          divergence_probe, integrate_conjugacy_ode, term_magnitude)
from towerdyn import bench


CUBIC = PolyProfile([0.0, 1.0, 0.0, -1.0])


def conj_velocity(m, g=CUBIC):
    return lambda x: float(g(m.f(x))) - float(m.df(x)) * float(g(x))


@pytest.fixture(scope="module")
def ulam_setup():
    m, orb, tw = bench.alpha_tower(2.0, M_max=60, orbit_n=2000)
    return m, orb, tw


@pytest.fixture(scope="module")
def a19_setup():
    m, orb, tw = bench.alpha_tower(1.9, M_max=120, orbit_n=9000)
    return m, orb, tw


def test_candidate_series_at_critical_point():
    m = make_quadratic(2.0)
    parts, finite = alpha_candidate_partial(m, lambda x: 1.0, 0.0, 10)
    assert finite and parts[-1] == 0.0


def test_candidate_series_geometric_example():
    m = make_quadratic(2.0)
    p, q = 0.7, -1.3
    v = lambda x: p if abs(x - 1) < 1e-9 else (q if abs(x + 1) < 1e-9 else 0.0)
    parts, finite = alpha_candidate_partial(m, v, 1.0, 60)
    assert not finite
    assert abs(parts[-1] - (p / 4 + q / 12)) < 1e-14


def test_candidate_series_telescopes_for_conjugation_velocity():
    m = make_quadratic(2.0)
    v = conj_velocity(m)
    parts, _ = alpha_candidate_partial(m, v, 0.37, 60)
    assert abs(parts[-1] - CUBIC(0.37)) < 1e-12


def test_horizontality_examples():
    m = make_quadratic(2.0)
    d, tail = horizontality_defect(m, conj_velocity(m), 200)
    assert abs(d) < 1e-10 and tail >= 0.0
    dz, _ = horizontality_defect(m, lambda x: 0.0, 100)
    assert dz == 0.0
    # additive X = 1 - x^2 on the full quadratic map: exact zero defect
    X = PolyProfile([1.0, 0.0, -1.0])
    dX, _ = horizontality_defect(m, lambda x: float(X(m.f(x))), 200)
    assert abs(dX) < 1e-14


def test_horizontalize_self_and_zero():
    m = make_quadratic(1.9)
    orb = critical_orbit(m, 10)
    bump = BumpProfile(center=float(orb.c[3]), width=0.05)
    # X = bump corrects itself entirely
    _, kappa, resid = horizontalize(m, bump, bump, N=300)
    assert abs(kappa - 1.0) < 1e-10 and abs(resid) < 1e-12
    # an already horizontal field needs no correction
    Xh = bench.a19_horizontal_field()[1]
    _, kappa0, _ = horizontalize(m, Xh, bump, N=400)
    assert abs(kappa0) < 1e-9
    with pytest.raises(ValueError):
        horizontalize(m, bump, PolyProfile([0.0]), N=100)  # degenerate corrector


def test_horizontalize_benchmark_golden():
    m, Xh, kappa, resid = bench.a19_horizontal_field()
    assert abs(kappa - (-1.05420)) < 5e-4      # golden from the first run
    assert abs(resid) < 1e-10


def test_alpha_matches_conjugation_solution_ulam(ulam_setup):
    m, orb, tw = ulam_setup
    v = conj_velocity(m)
    rng = np.random.default_rng(1)
    errs = [abs(alpha_resummed(tw, v, float(x), horizon=3000).value - float(CUBIC(x)))
            for x in rng.uniform(-1, 1, 40)]
    assert max(errs) < 1e-9


def test_alpha_matches_conjugation_solution_a19(a19_setup):
    m, orb, tw = a19_setup
    v = conj_velocity(m)
    rng = np.random.default_rng(2)
    errs = [abs(alpha_resummed(tw, v, float(x), horizon=6000).value - float(CUBIC(x)))
            for x in rng.uniform(-1, 1, 100)]
    assert max(errs) < 1e-6


def test_alpha_finite_sum_mode(a19_setup):
    m, orb, tw = a19_setup
    # a preimage of the critical point: f(x) = 0
    x = math.sqrt((m.a - 1.0) / m.a)
    v = conj_velocity(m)
    ev = alpha_resummed(tw, v, x, horizon=100)
    assert ev.mode == "finite-sum" and ev.tail_bound == 0.0
    parts, finite = alpha_candidate_partial(m, v, x, 50)
    assert finite and abs(ev.value - parts[-1]) < 1e-14
    assert alpha_resummed(tw, v, 0.0, horizon=50).value == 0.0


def test_alpha_consistency_where_raw_series_stabilizes(a19_setup):
    m, orb, tw = a19_setup
    v = conj_velocity(m)
    rng = np.random.default_rng(3)
    checked = 0
    for x in rng.uniform(-1, 1, 30):
        parts, finite = alpha_candidate_partial(m, v, float(x), 300)
        if finite or len(parts) < 40:
            continue
        tail = parts[-20:]
        if np.max(np.abs(tail - tail[-1])) < 1e-8:  # raw series Cauchy here
            ev = alpha_resummed(tw, v, float(x), horizon=4000)
            assert abs(ev.value - tail[-1]) < 1e-6
            checked += 1
    assert checked >= 5


def test_alpha_two_horizon_agreement(a19_setup):
    m, orb, tw = a19_setup
    v = conj_velocity(m)
    for x in (0.3, -0.512, 0.777):
        e1 = alpha_resummed(tw, v, x, horizon=1500)
        e2 = alpha_resummed(tw, v, x, horizon=6000)
        assert abs(e1.value - e2.value) <= e1.tail_bound + e2.tail_bound + 1e-9


def test_alpha_bounded_under_sample_doubling(a19_setup):
    m, orb, tw = a19_setup
    v = conj_velocity(m)
    rng = np.random.default_rng(4)
    xs1 = rng.uniform(-1, 1, 60)
    sup1 = max(abs(alpha_resummed(tw, v, float(x), horizon=4000).value) for x in xs1)
    xs2 = rng.uniform(-1, 1, 120)
    sup2 = max(abs(alpha_resummed(tw, v, float(x), horizon=4000).value) for x in xs2)
    assert math.isfinite(sup1) and math.isfinite(sup2)
    assert sup2 <= 2.0 * max(sup1, 0.1)


def test_tce_residual_identities(a19_setup):
    m, orb, tw = a19_setup
    v = conj_velocity(m)
    res = tce_residual(m, v, lambda x: float(CUBIC(x)), n_samples=300, seed=0)
    assert res < 1e-12
    vmax_region = tce_residual(m, v, lambda x: 0.0, n_samples=300, seed=0)
    assert vmax_region > 0.1  # residual equals max |v| when alpha is zeroed


def test_tce_residual_resummed_alpha(a19_setup):
    m, orb, tw = a19_setup
    v = conj_velocity(m)
    alpha = make_alpha_evaluator(tw, v, horizon=5000)
    res = tce_residual(m, v, alpha, n_samples=40, seed=7)
    assert res < 1e-6


def test_divergence_probe_depths():
    m = make_quadratic(1.9)
    X = PolyProfile([1.0, 0.0, -1.0])
    v = lambda x: float(X(m.f(x)))
    w0 = divergence_probe(m, v, (0.3, 0.34), depth=0)
    assert 0.3 <= w0.x <= 0.34 and w0.indices == []
    w = divergence_probe(m, v, (0.1, 0.2), depth=5)
    assert 0.1 <= w.x <= 0.2 and len(w.indices) >= 5
    for j, mg in zip(w.indices, w.magnitudes):
        assert mg >= 2.0
        assert term_magnitude(m, v, w.x_str, j, dps=w.dps) >= 2.0
    # indices strictly increasing
    assert all(a < b for a, b in zip(w.indices, w.indices[1:]))


def test_divergence_probe_rejects_bad_fields():
    m = make_quadratic(1.9)
    with pytest.raises(ValueError):
        divergence_probe(m, lambda x: 0.0, (0.1, 0.2), depth=2)
    with pytest.raises(ValueError):
        # v'(c) != 0
        divergence_probe(m, lambda x: float(x), (0.1, 0.2), depth=2)


def test_conjugacy_ode_cases():
    m, g, fam = bench.ulam_conjugation_family()
    assert integrate_conjugacy_ode(fam, 0.4, 0.0) == 0.4
    rng = np.random.default_rng(5)
    worst = 0.0
    for x in rng.uniform(-1, 1, 25):
        for t in (0.05, -0.05):
            u = integrate_conjugacy_ode(fam, float(x), t, n_steps=64)
            worst = max(worst, abs(u - (x + t * float(g(x)))))
    assert worst < 1e-6
    # stationary field: u(t) = x
    zfam = make_family(m, "conjugation", PolyProfile([0.0, 0.0]), t_range=0.1)
    assert abs(integrate_conjugacy_ode(zfam, 0.3, 0.05, n_steps=16) - 0.3) < 1e-15
