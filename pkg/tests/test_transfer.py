import math

import numpy as np
import pytest

from towerdyn.unimodal import make_quadratic
from towerdyn.recurrence import critical_orbit
from towerdyn.tower import TowerParams, build_tower
from towerdyn.transfer import (build_operator, truncate, inverse_branch,
                               commutation_residual, spike_exponent, smoothstep)
from towerdyn.oracle import closed_form_ulam_density
from towerdyn import bench


@pytest.fixture(scope="module")
def ulam_ctx():
    _, _, _, ctx, fp = bench.build_map_operator(2.0, M=15, n0=4096, orbit_n=400)
    return ctx, fp


@pytest.fixture(scope="module")
def a19_ctx():
    _, _, _, ctx, fp = bench.build_map_operator(1.9, M=20, n0=2048, orbit_n=6000)
    return ctx, fp


def test_cutoff_profile_shape(ulam_ctx):
    ctx, _ = ulam_ctx
    xi0 = ctx.cutoffs[0]
    d = ctx.tower.params.delta
    assert xi0(0.0) == 1.0 and xi0(d / 2) == 1.0 and xi0(-d / 2) == 1.0
    assert xi0(d * 1.01) == 0.0 and xi0(-d * 1.01) == 0.0
    assert abs(xi0(0.75 * d) - 0.5) < 1e-12  # smoothstep midpoint
    assert smoothstep(0.5) == 0.5
    for xi in ctx.cutoffs[1:]:
        if xi.trivial:
            continue
        assert xi.V[0] > xi.W[0] and xi.V[1] < xi.W[1]
        xs = np.linspace(xi.W[0], xi.W[1], 101)
        vals = np.asarray(xi(xs))
        assert np.all((0.0 <= vals) & (vals <= 1.0))


def test_inverse_branch_examples():
    m = make_quadratic(2.0)
    assert abs(inverse_branch(m, 1, +1, -1.0) - 1.0) < 1e-12
    assert abs(inverse_branch(m, 1, +1, 0.0) - math.sqrt(0.5)) < 1e-12
    assert abs(inverse_branch(m, 1, -1, 0.0) + math.sqrt(0.5)) < 1e-12
    # round trips through the postcritical windows
    orb = critical_orbit(m, 40)
    for k in (3, 6, 10):
        x = orb.c[k] + 0.3 * math.exp(-0.9 * k)
        y = float(inverse_branch(m, k, +1, x, orbit=orb))
        z = y
        for _ in range(k):
            z = float(m.f(z))
        assert abs(z - x) < 1e-10


def test_truncate_and_norms(ulam_ctx):
    ctx, _ = ulam_ctx
    psi = ctx.random_smooth(seed=11)
    t0 = truncate(psi, 0)
    assert all(np.all(t0.values[k] == 0.0) for k in range(1, ctx.M + 1))
    assert np.all(t0.values[0] == psi.values[0])
    tm = truncate(psi, ctx.M)
    assert ctx.bl1_norm(tm - psi) == 0.0
    for Mp in (0, 3, 9):
        assert ctx.bl1_norm(truncate(psi, Mp)) <= ctx.bl1_norm(psi) + 1e-15


def test_reference_measure_integrals(ulam_ctx):
    ctx, _ = ulam_ctx
    one = ctx.zeros()
    one.values[0][:] = 1.0
    assert abs(ctx.nu(one) - 2.0) < 1e-12
    k = 5
    ind = ctx.zeros()
    ind.values[k][:] = 1.0
    xs = ctx.grids[k]
    assert abs(ctx.nu(ind) - ctx.lam ** k * (xs[-1] - xs[0])) < 1e-12


def test_apply_structural_examples(ulam_ctx):
    ctx, _ = ulam_ctx
    # mass only inside the plateau: level 1 copy, no level-0 output
    psi = ctx.zeros()
    xs0 = ctx.grids[0]
    mask = np.abs(xs0) < 0.05
    psi.values[0][mask] = np.exp(-0.5 * (xs0[mask] / 0.02) ** 2)
    out = ctx.apply(psi)
    assert np.max(np.abs(out.values[0])) == 0.0
    xs1 = ctx.grids[1]
    inV = np.abs(xs1) < 0.05
    ref = np.interp(xs1[inV], xs0, psi.values[0]) / ctx.lam
    assert np.max(np.abs(out.values[1][inV] - ref)) < 2e-3 * ref.max()
    # linearity / zero
    zero = ctx.zeros()
    assert ctx.bl1_norm(ctx.apply(zero)) == 0.0


def test_apply_positivity(ulam_ctx):
    ctx, _ = ulam_ctx
    psi = ctx.random_smooth(seed=3)
    for k in range(ctx.M + 1):
        psi.values[k] = np.abs(psi.values[k])
    out = ctx.apply(psi)
    assert all(np.min(out.values[k]) >= 0.0 for k in range(ctx.M + 1))


@pytest.mark.parametrize("a", [2.0, 1.9])
def test_reference_measure_invariance_50_functions(a):
    _, _, _, ctx, _ = bench.build_map_operator(a, M=12, n0=2048,
                                               orbit_n=400 if a == 2.0 else 6000)
    worst = 0.0
    for s in range(50):
        psi = ctx.random_smooth(seed=s, levels=range(ctx.M))
        dev = abs(ctx.nu(ctx.apply(psi)) - ctx.nu(psi)) / ctx.bl1_norm(psi)
        worst = max(worst, dev)
    assert worst <= 1e-6, worst


def test_fixed_point_properties(ulam_ctx):
    ctx, fp = ulam_ctx
    assert fp.converged
    assert abs(fp.kappa - 1.0) < 1e-3
    assert all(np.min(v) >= -1e-12 for v in fp.phi.values)
    nxt = ctx.apply(fp.phi)
    nxt = nxt * (1.0 / ctx.nu(nxt))
    assert ctx.bl1_norm(nxt - fp.phi) < 10 * 1e-10
    assert 0.0 < fp.gap_estimate < 1.0


def test_gap_against_contraction_scale(ulam_ctx):
    ctx, fp = ulam_ctx
    # loose consistency with the recorded contraction scale
    theta0 = max(ctx.theta0, 1.0 + 1e-9)
    assert fp.gap_estimate <= 1.0 / theta0 + 0.2


def test_projection_level0_only(ulam_ctx):
    ctx, _ = ulam_ctx
    psi = ctx.zeros()
    psi.values[0][:] = np.cos(ctx.grids[0])
    xs = np.linspace(-0.9, 0.9, 101)
    # exact up to the linear interpolation of the ground samples
    assert np.max(np.abs(ctx.project_density(psi, xs) - np.cos(xs))) < 1e-7


def test_ulam_density_value_at_zero(ulam_ctx):
    ctx, fp = ulam_ctx
    assert abs(ctx.project_density(fp.phi, 0.0) - 1.0 / math.pi) < 0.01


def test_ulam_density_l1(ulam_ctx):
    ctx, fp = ulam_ctx
    xs = np.linspace(-0.95, 0.95, 2001)
    l1 = float(np.trapezoid(np.abs(ctx.project_density(fp.phi, xs)
                                   - closed_form_ulam_density(xs)), xs))
    assert l1 <= 0.02


def test_commutation_residual_examples(ulam_ctx):
    ctx, fp = ulam_ctx
    zero = ctx.zeros()
    assert commutation_residual(ctx, zero, n_grid=512) == 0.0
    psi = ctx.zeros()
    psi.values[0][:] = np.exp(-0.5 * ((ctx.grids[0] - 0.3) / 0.2) ** 2)
    psi.values[0][[0, -1]] = 0.0
    assert commutation_residual(ctx, psi, n_grid=2048) < 5e-4
    # the fixed point nearly commutes: distance bounded by truncation leakage
    res = commutation_residual(ctx, fp.phi, n_grid=1024)
    assert res < 5e-3


def test_spike_exponents(ulam_ctx, a19_ctx):
    ctx2, fp2 = ulam_ctx
    assert abs(spike_exponent(ctx2, fp2.phi, 1) + 0.5) < 0.05
    ctx9, fp9 = a19_ctx
    for k in (1, 2, 3):
        assert abs(spike_exponent(ctx9, fp9.phi, k) + 0.5) < 0.05
    # synthetic plateau mass: the fold geometry alone makes the slope -1/2
    psi = ctx9.zeros()
    xs = ctx9.grids[4]
    lo, hi = ctx9.supports[4]
    psi.values[4][:] = smoothstep((xs - lo) / (0.3 * (hi - lo))) * \
        smoothstep((hi - xs) / (0.3 * (hi - lo)))
    assert abs(spike_exponent(ctx9, psi, 4) + 0.5) < 0.05


def test_adjoint_fixed_functional(a19_ctx):
    ctx, fp = a19_ctx
    eta, kap = ctx.adjoint_weights()
    assert abs(kap - fp.kappa) < 5e-3
    # eta is a fixed functional: eta(L psi) = kappa * eta(psi)
    psi = ctx.random_smooth(seed=21)
    lhs = ctx.nu_M(ctx.apply(psi))
    rhs = kap * ctx.nu_M(psi)
    assert abs(lhs - rhs) <= 1e-6 * max(abs(rhs), 1.0)


def test_operator_requires_wide_windows():
    m = make_quadratic(2.0)
    orb = critical_orbit(m, 300)
    par = TowerParams(delta=0.2, beta1=0.5, beta2=0.9, gamma=0.0, M_max=20,
                      b_choice="beta2")
    tw = build_tower(m, orb, par)
    with pytest.raises(ValueError):
        build_operator(m, orb, tw, M=10, n0=1024)


def test_lambda_window_enforced():
    m = make_quadratic(2.0)
    orb = critical_orbit(m, 300)
    par = TowerParams(delta=0.2, beta1=0.5, beta2=0.9, gamma=0.0, M_max=20)
    tw = build_tower(m, orb, par)
    with pytest.raises(ValueError):
        build_operator(m, orb, tw, M=10, n0=1024, lam=5.0)
