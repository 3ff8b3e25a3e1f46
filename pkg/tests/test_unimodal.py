import numpy as np
import pytest

from towerdyn.unimodal import (UnimodalMap, make_quadratic, validate_s_unimodal,
                               make_family, family_velocity, PolyProfile,
                               BumpProfile, profile_from_spec)


def test_quadratic_pointwise_values():
    m = make_quadratic(2.0)
    assert m.f(0.0) == 1.0
    assert m.df(0.0) == 0.0
    assert m.d2f(0.0) == -4.0
    assert m.f(1.0) == -1.0 and m.f(-1.0) == -1.0
    assert make_quadratic(1.5).f(0.0) == 0.5


def test_parameter_range():
    with pytest.raises(ValueError):
        make_quadratic(1.0)
    with pytest.raises(ValueError):
        make_quadratic(2.2)


def test_validation_passes_on_family_members():
    for a in (2.0, 1.9, 1.3):
        rep = validate_s_unimodal(make_quadratic(a), 10_000)
        assert rep.passed, rep.as_dict()
        # quadratic family: Schwarzian is -(3/2)(f''/f')^2 < 0 away from 0
        assert rep.margin("Schwarzian < 0") > 0


def test_validation_catches_asymmetry():
    base = make_quadratic(2.0)
    m = UnimodalMap(
        f=lambda x: base.f(x) + 1e-3 * np.asarray(x) ** 3,
        df=lambda x: base.df(x) + 3e-3 * np.asarray(x) ** 2,
        d2f=lambda x: base.d2f(x) + 6e-3 * np.asarray(x),
        d3f=lambda x: base.d3f(x) + 6e-3 * np.ones_like(np.asarray(x, dtype=float)),
    )
    rep = validate_s_unimodal(m, 5000)
    failed = {n for n, ok, _ in rep.checks if not ok}
    assert "symmetry f(x) = f(-x)" in failed


def test_conjugation_velocity_closed_form():
    m = make_quadratic(2.0)
    g = PolyProfile([0.0, 1.0, 0.0, -1.0])
    fam = make_family(m, "conjugation", g, t_range=0.06)
    xs = np.linspace(-0.99, 0.99, 41)
    v = fam.velocity(0.0, xs)
    expected = np.asarray(g(m.f(xs))) - np.asarray(m.df(xs)) * np.asarray(g(xs))
    assert np.max(np.abs(v - expected)) < 1e-14
    assert abs(fam.velocity(0.0, 0.0)) < 1e-14  # v(0) = g(f(0)) = g(1) = 0


def test_conjugation_identity_pointwise():
    m = make_quadratic(1.9)
    fam = make_family(m, "conjugation", PolyProfile([0.0, 1.0, 0.0, -1.0]), t_range=0.06)
    t = 0.05
    ft = fam.map_at(t)
    xs = np.linspace(-1, 1, 201)
    lhs = ft.f(fam.h(t, xs))
    rhs = fam.h(t, m.f(xs))
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_velocity_matches_central_differences_second_order():
    m = make_quadratic(1.9)
    fam = make_family(m, "conjugation", PolyProfile([0.0, 1.0, 0.0, -1.0]), t_range=0.08)
    xs = np.array([-0.7, -0.2, 0.31, 0.66])
    s = 0.01
    errs = []
    hs = (1e-3, 1e-4, 1e-5)
    for h in hs:
        fd = (fam.map_at(s + h).f(xs) - fam.map_at(s - h).f(xs)) / (2 * h)
        errs.append(np.max(np.abs(fd - fam.velocity(s, xs))))
    # second-order convergence until round-off: slope of the first segment
    slope = (np.log(errs[0]) - np.log(errs[1])) / (np.log(hs[0]) - np.log(hs[1]))
    assert slope > 1.9, (errs, slope)
    assert errs[2] < 1e-8


def test_additive_velocity_exact():
    m = make_quadratic(1.9)
    X = PolyProfile([1.0, 0.0, -1.0])
    fam = make_family(m, "additive", X, t_range=0.05)
    xs = np.linspace(-1, 1, 101)
    assert np.max(np.abs(fam.velocity(0.0, xs) - np.asarray(X(m.f(xs))))) == 0.0
    assert np.max(np.abs(family_velocity(fam, 0.02, xs)
                         - fam.velocity(0.02, xs))) == 0.0
    with pytest.raises(ValueError):
        family_velocity(fam, 0.2, 0.0)  # outside the admitted range
    # zero field: f_t = f
    zfam = make_family(m, "additive", PolyProfile([0.0]), t_range=0.05)
    assert np.max(np.abs(zfam.map_at(0.03).f(xs) - m.f(xs))) == 0.0


def test_family_boundary_conditions_enforced():
    m = make_quadratic(2.0)
    with pytest.raises(ValueError):
        make_family(m, "conjugation", PolyProfile([0.1, 1.0, 0.0, -1.0]))  # g(0) != 0
    with pytest.raises(ValueError):
        # g(1) = 0.1: violates the endpoint condition
        make_family(m, "conjugation", PolyProfile([0.0, 1.0, 0.1, -1.0]))
    with pytest.raises(ValueError):
        make_family(m, "additive", PolyProfile([1.0]))  # X(-1) != 0


def test_deformed_maps_keep_structure():
    m = make_quadratic(1.9)
    fam = make_family(m, "additive", PolyProfile([-1.0, 0.0, 1.0]), t_range=0.05)
    for t in (0.03, -0.03):
        rep = validate_s_unimodal(fam.map_at(t), 4000, schwarzian_strict=False)
        assert rep.passed, rep.as_dict()


def test_profile_spec_parsing():
    p = profile_from_spec("poly:1,0,-1")
    assert p(0.0) == 1.0 and p(1.0) == 0.0
    b = profile_from_spec("bump:0.1,0.05")
    assert b(0.1) == 1.0 and b(0.2) == 0.0
    assert profile_from_spec("cubic_odd")(1.0) == 0.0
    with pytest.raises(ValueError):
        profile_from_spec("nope")


def test_bump_derivatives_match_finite_differences():
    b = BumpProfile(center=0.12, width=0.07)
    xs = np.linspace(0.06, 0.18, 25)
    h = 1e-6
    for d, fn in ((b.d1, b), (b.d2, b.d1), (b.d3, b.d2)):
        fd = (np.asarray(fn(xs + h)) - np.asarray(fn(xs - h))) / (2 * h)
        assert np.max(np.abs(np.asarray(d(xs)) - fd)) < 5e-4
