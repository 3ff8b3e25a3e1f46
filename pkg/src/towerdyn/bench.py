"""Benchmark constructions shared by the validation suite, CLI, and demos.

Two reference maps: a = 2 (full quadratic map, closed-form density, the
postcritical orbit lands on a fixed point) and a = 1.9 (generic-looking
chaotic parameter).  The operator settings below are the ones the
acceptance checks run at.
"""

from __future__ import annotations

import math

from .unimodal import make_quadratic, make_family, PolyProfile, BumpProfile
from .recurrence import critical_orbit, estimate_ce
from .tower import TowerParams, build_tower
from .transfer import build_operator, fixed_point
from .tce import horizontalize


def operator_gamma(lambda_c, gamma_env=None, margin=0.9):
    """Window-shaping exponent for the operator tower.

    Must leave the admissible level-weight window nonempty (below
    log(lambda_c)/8); the empirical recurrence envelope is used when it is
    already small enough.
    """
    cap = margin * math.log(lambda_c) / 8.0
    if gamma_env is not None and 0.0 < gamma_env < cap:
        return gamma_env
    return cap


def tower_params_for_operator(m, orbit, delta=0.2, M_max=None, gamma=None):
    """Operator-ready tower parameters (wide beta1 windows, proportional inner)."""
    lam_c, _ = estimate_ce(orbit, 1)
    if orbit.preperiodic_at is not None:
        gam = 0.0
        beta1, beta2 = 0.5, 0.9
    else:
        gam = operator_gamma(lam_c) if gamma is None else gamma
        beta1, beta2 = 1.55 * gam, 1.9 * gam
    if M_max is None:
        M_max = min(50, orbit.N - 2)
    return TowerParams(delta=delta, beta1=beta1, beta2=beta2, gamma=gam,
                       M_max=M_max, b_choice="beta1")


def build_map_operator(a, M=20, n0=4096, delta=0.2, orbit_n=9000, tol=1e-10):
    """Map, orbit, tower, operator context, and fixed point in one call."""
    m = make_quadratic(a)
    orbit = critical_orbit(m, orbit_n)
    par = tower_params_for_operator(m, orbit, delta=delta, M_max=max(M + 6, 40))
    tower = build_tower(m, orbit, par)
    ctx = build_operator(m, orbit, tower, M=M, n0=n0)
    fp = fixed_point(ctx, tol=tol, max_iter=8000)
    return m, orbit, tower, ctx, fp


def ulam_conjugation_family(t_range=0.06):
    """The exact-response benchmark: a = 2 with h_t(x) = x + t*x(1-x^2)."""
    m = make_quadratic(2.0)
    g = PolyProfile([0.0, 1.0, 0.0, -1.0])
    return m, g, make_family(m, "conjugation", g, t_range=t_range)


def a19_horizontal_field(n_terms=400):
    """The additive benchmark field on a = 1.9: X = (x^2 - 1) horizontalized
    by a narrow bump at the third postcritical point.

    The quadratic shape is pinned to vanish at the endpoints so the deformed
    maps keep fixing them; the corrector bump is centered at c_3 = f^3(0).
    """
    m = make_quadratic(1.9)
    orbit = critical_orbit(m, 4000)
    X0 = PolyProfile([-1.0, 0.0, 1.0])
    bump = BumpProfile(center=float(orbit.c[3]), width=0.05)
    Xh, kappa, resid = horizontalize(m, X0, bump, N=n_terms)
    return m, Xh, kappa, resid


def alpha_tower(a, delta=0.2, M_max=120, orbit_n=9000, b_choice="beta2"):
    """Deep tower for resummation work (inner windows, large climb budget)."""
    m = make_quadratic(a)
    orbit = critical_orbit(m, orbit_n)
    lam_c, _ = estimate_ce(orbit, 1)
    if orbit.preperiodic_at is not None:
        gam, b1, b2 = 0.0, 0.5, 0.9
    else:
        gam = operator_gamma(lam_c)
        b1, b2 = 1.55 * gam, 1.9 * gam
    par = TowerParams(delta=delta, beta1=b1, beta2=b2, gamma=gam,
                      M_max=min(M_max, orbit_n - 2), b_choice=b_choice)
    return m, orbit, build_tower(m, orbit, par)
