import numpy as np
import pytest

from towerdyn.unimodal import make_quadratic, make_family, PolyProfile
from towerdyn.recurrence import critical_orbit
from towerdyn.response import (y_weights, y_weights_direct,
                               response_source, resolvent_apply, linear_response,
                               response_oracle_conjugation, response_fd,
                               susceptibility_partial,
                               bound_period_weight_table, spike_motion_term)
from towerdyn.oracle import closed_form_ulam_density
from towerdyn import bench

A_SQ = lambda x: np.asarray(x) ** 2
AP_SQ = lambda x: 2.0 * np.asarray(x)
ZERO = lambda x: np.zeros_like(np.asarray(x, dtype=float))
ONE = lambda x: np.ones_like(np.asarray(x, dtype=float))


@pytest.fixture(scope="module")
def a19():
    m, Xh, kappa, resid = bench.a19_horizontal_field()
    orbit = critical_orbit(m, 9000)
    from towerdyn.tower import build_tower
    par = bench.tower_params_for_operator(m, orbit, M_max=40)
    tower = build_tower(m, orbit, par)
    from towerdyn.transfer import build_operator, fixed_point
    ctx = build_operator(m, orbit, tower, M=25, n0=2048)
    fp = fixed_point(ctx, tol=1e-10, max_iter=8000)
    return m, Xh, ctx, fp


def test_y_weights_examples():
    m = make_quadratic(1.9)
    X = PolyProfile([1.0, 0.0, -1.0])
    x = 0.37
    assert abs(y_weights(m, X, x, 1) - float(X(m.f(x)))) < 1e-14
    expected2 = float(X(m.f(m.f(x)))) + float(m.df(m.f(x))) * float(X(m.f(x)))
    assert abs(y_weights(m, X, x, 2) - expected2) < 1e-13


def test_y_weights_recursion_vs_direct():
    m = make_quadratic(1.9)
    X = PolyProfile([-1.0, 0.2, 1.0])
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = float(rng.uniform(-1, 1))
        k = int(rng.integers(1, 21))
        a = y_weights(m, X, x, k)
        b = y_weights_direct(m, X, x, k)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(b))


def test_response_source_properties(a19):
    m, Xh, ctx, fp = a19
    src, corr = response_source(ctx, fp.phi, Xh)
    assert abs(corr) < 1e-6
    assert abs(ctx.nu(src)) < 1e-12
    assert all(np.all(src.values[k] == 0.0) for k in range(1, ctx.M + 1))
    zsrc, _ = response_source(ctx, fp.phi, ZERO)
    assert ctx.bl1_norm(zsrc) == 0.0


def test_resolvent_identities(a19):
    m, Xh, ctx, fp = a19
    zero = ctx.zeros()
    out = resolvent_apply(ctx, zero, phi=fp.phi, tol=1e-12)
    assert ctx.bl1_norm(out.u) == 0.0
    # constructed right inverse
    w = ctx.random_smooth(seed=9, levels=range(ctx.M))
    ref = ctx.from_level0(lambda x: (1 - x * x) ** 2)
    w = w - ctx.nu(w) * ref
    g = w - ctx.apply(w)
    res = resolvent_apply(ctx, g, phi=fp.phi, tol=1e-11)
    qw = w - (ctx.nu_M(w) / ctx.nu_M(fp.phi)) * fp.phi
    assert ctx.bl1_norm(res.u - qw) < 1e-9
    assert res.decay_ratio < 1.0
    # residual of the defining equation
    resid = (res.u - ctx.apply(res.u)) - (g - (ctx.nu_M(g) / ctx.nu_M(fp.phi)) * fp.phi)
    assert ctx.bl1_norm(resid) < 10 * 1e-11
    with pytest.raises(ValueError):
        resolvent_apply(ctx, fp.phi, phi=fp.phi)  # nonzero mean rejected


def test_response_trivial_cases(a19):
    m, Xh, ctx, fp = a19
    rep = linear_response(ctx, fp.phi, ZERO, A_SQ, AP_SQ)
    assert rep.formula_value == 0.0
    repc = linear_response(ctx, fp.phi, Xh, ONE, ZERO)
    assert abs(repc.formula_value) < 1e-6
    assert repc.term2 == 0.0


def test_response_linearity(a19):
    m, Xh, ctx, fp = a19
    X2 = PolyProfile([0.0, 1.0, 0.0, -1.0])
    a, b = 0.7, -1.3
    Xcombo = a * Xh + b * X2
    r1 = linear_response(ctx, fp.phi, Xh, A_SQ, AP_SQ, rtol=1e-12)
    r2 = linear_response(ctx, fp.phi, X2, A_SQ, AP_SQ, rtol=1e-12)
    rc = linear_response(ctx, fp.phi, Xcombo, A_SQ, AP_SQ, rtol=1e-12)
    combo = a * r1.formula_value + b * r2.formula_value
    assert abs(rc.formula_value - combo) < 1e-8 * max(1.0, abs(combo))
    # linearity in the observable
    A2 = lambda x: np.asarray(x) ** 3
    AP2 = lambda x: 3.0 * np.asarray(x) ** 2
    rA = linear_response(ctx, fp.phi, Xh, A_SQ, AP_SQ, rtol=1e-12)
    rB = linear_response(ctx, fp.phi, Xh, A2, AP2, rtol=1e-12)
    rAB = linear_response(ctx, fp.phi, Xh,
                          lambda x: 0.5 * A_SQ(x) + 2.0 * A2(x),
                          lambda x: 0.5 * AP_SQ(x) + 2.0 * AP2(x), rtol=1e-12)
    combo2 = 0.5 * rA.formula_value + 2.0 * rB.formula_value
    assert abs(rAB.formula_value - combo2) < 1e-8 * max(1.0, abs(combo2))


def test_spike_motion_term_against_parameter_difference(a19):
    m, Xh, ctx, fp = a19
    t = 1e-6
    tot = {}
    for tt in (t, -t):
        s = 0.0
        for k in range(1, ctx.M + 1):
            y = ctx.grids[k].copy()
            for _ in range(k):
                y = m.f(y) + tt * np.asarray(Xh(m.f(y)))
            s += ctx.lamk(k) * float(np.sum(ctx.quad[k] * A_SQ(y) * fp.phi.values[k]))
        tot[tt] = s
    fd = (tot[t] - tot[-t]) / (2 * t)
    v2 = spike_motion_term(ctx, fp.phi, Xh, AP_SQ)
    assert abs(fd - v2) < 1e-4 * max(1.0, abs(v2))


def test_pushforward_oracle_values():
    m, g, fam = bench.ulam_conjugation_family()
    val = response_oracle_conjugation(fam, closed_form_ulam_density, AP_SQ)
    assert abs(val - 0.25) < 1e-6
    zfam = make_family(m, "conjugation", PolyProfile([0.0, 0.0]), t_range=0.1)
    assert response_oracle_conjugation(zfam, closed_form_ulam_density, AP_SQ) == 0.0
    assert response_oracle_conjugation(fam, closed_form_ulam_density, ZERO) == 0.0
    with pytest.raises(ValueError):
        response_oracle_conjugation(
            make_family(make_quadratic(1.9), "additive", PolyProfile([-1.0, 0.0, 1.0])),
            closed_form_ulam_density, AP_SQ)


def test_response_fd_zero_field():
    m = make_quadratic(1.9)
    fam = make_family(m, "additive", PolyProfile([0.0]), t_range=0.05)
    est, se = response_fd(fam, A_SQ, t_step=1e-2, n_orbits=8, n_iter=4000, seed=3)
    assert est == 0.0  # identical orbits at +-t


def test_susceptibility_cases(a19):
    m, Xh, ctx, fp = a19
    dens = lambda x: ctx.project_density(fp.phi, x)
    S0 = susceptibility_partial(m, dens, ZERO, AP_SQ, z=0.9, N=10, n_quad=2001)
    assert np.all(S0 == 0.0)
    Sz = susceptibility_partial(m, dens, Xh, AP_SQ, z=0.0, N=8, n_quad=2001)
    assert np.max(np.abs(Sz - Sz[0])) < 1e-15  # only the k = 0 term survives
    with pytest.raises(ValueError):
        susceptibility_partial(m, dens, Xh, AP_SQ, z=1.5, N=5)


def test_bound_period_weight_contrast(a19):
    m, Xh, ctx, fp = a19
    zero_rows = bound_period_weight_table(ctx, ctx.tower, PolyProfile([0.0]), range(3, 12))
    assert all(r["sup_ratio"] == 0.0 for r in zero_rows)
    rows_h = bound_period_weight_table(ctx, ctx.tower, Xh, range(3, 16))
    rows_t = bound_period_weight_table(ctx, ctx.tower, PolyProfile([0.5, 0.3, 0.4]), range(3, 16))
    assert rows_h and rows_t
    worst_h = max(r["implied_C"] for r in rows_h)
    worst_t = max(r["implied_C"] for r in rows_t)
    assert worst_t > 5.0 * worst_h  # transversal fields blow the bound up
