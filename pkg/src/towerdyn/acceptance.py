"""The validation gate: every headline capability checked at a fixed tolerance.

Each criterion returns a record with pass/fail, the measured numbers, and
its runtime.  ``run_all`` executes the full battery; the command-line
``validate`` subcommand and the test suite both use these runners, so the
numbers printed there are exactly the numbers tested.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import bench
from .unimodal import make_quadratic, make_family, PolyProfile
from .recurrence import critical_orbit, estimate_ce
from .tower import key_estimate_check
from .transfer import build_operator, fixed_point, commutation_residual, spike_exponent
from .tce import (alpha_resummed, make_alpha_evaluator, tce_residual, divergence_probe,
                  integrate_conjugacy_ode, term_magnitude)
from .response import (linear_response, response_fd, response_oracle_conjugation,
                       ruelle_identity_check, spike_partition)
from .oracle import ulam_matrix, closed_form_ulam_density


@dataclass
class Criterion:
    cid: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        keys = ", ".join(f"{k}={_fmt(v)}" for k, v in self.details.items())
        return f"[{mark}] criterion {self.cid}: {self.name} ({keys}) [{self.seconds:.1f}s]"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _timed(fn):
    t0 = time.time()
    out = fn()
    return out, time.time() - t0


# ---------------------------------------------------------------------------

def criterion_1_ulam_density():
    """a=2 projected density vs the closed form, plus the binned cross-check."""
    def work():
        m, orbit, tower, ctx, fp = bench.build_map_operator(2.0, M=15, n0=4096, orbit_n=400)
        xs = np.linspace(-0.95, 0.95, 4001)
        dens = ctx.project_density(fp.phi, xs)
        tgt = closed_form_ulam_density(xs)
        l1 = float(np.trapezoid(np.abs(dens - tgt), xs))
        um = ulam_matrix(m, n_bins=2048, samples_per_bin=64)
        l1_um = float(np.trapezoid(np.abs(um.density(xs) - tgt), xs))
        return l1, l1_um, fp.kappa
    (l1, l1_um, kappa), dt = _timed(work)
    ok = l1 <= 0.02 and l1_um <= 0.03 and dt <= 60.0
    return Criterion(1, "a=2 density vs closed form", ok,
                     {"L1_tower": l1, "L1_binned": l1_um, "kappa": kappa,
                      "budget_s": 60}, dt)


def criterion_2_commutation(n_funcs=10):
    """Classical-operator commutation residual and its grid refinement."""
    def work():
        out = {}
        for a in (2.0, 1.9):
            per_grid = {}
            for n0 in (2048, 4096):
                _, _, _, ctx, _ = bench.build_map_operator(
                    a, M=15, n0=n0, orbit_n=400 if a == 2.0 else 6000)
                res = [commutation_residual(ctx, ctx.random_smooth(seed=s, levels=range(ctx.M)),
                                            n_grid=2048)
                       for s in range(n_funcs)]
                per_grid[n0] = max(res)
            out[a] = per_grid
        return out
    out, dt = _timed(work)
    ok = all(v[2048] <= 5e-4 and v[2048] / v[4096] >= 2.5 for v in out.values())
    det = {f"a{a}_r2048": v[2048] for a, v in out.items()}
    det.update({f"a{a}_ratio": v[2048] / v[4096] for a, v in out.items()})
    return Criterion(2, "commutation residual and refinement", ok, det, dt)


def criterion_3_spikes():
    """Square-root spike exponents at the first postcritical points."""
    def work():
        slopes = {}
        _, _, _, ctx2, fp2 = bench.build_map_operator(2.0, M=15, n0=4096, orbit_n=400)
        slopes["a2_k1"] = spike_exponent(ctx2, fp2.phi, 1)
        _, _, _, ctx9, fp9 = bench.build_map_operator(1.9, M=20, n0=4096, orbit_n=6000)
        for k in (1, 2, 3):
            slopes[f"a19_k{k}"] = spike_exponent(ctx9, fp9.phi, k)
        return slopes
    slopes, dt = _timed(work)
    ok = all(abs(s + 0.5) <= 0.05 for s in slopes.values())
    return Criterion(3, "spike exponents -1/2", ok, slopes, dt)


def criterion_4_tce(n_residual=60, k_max=30):
    """Cohomological-equation residual and postcritical finite differences."""
    def work():
        m, Xh, kappa, resid = bench.a19_horizontal_field()
        _, orbit, tower = bench.alpha_tower(1.9, M_max=120)
        v = lambda x: np.asarray(Xh(m.f(x)))
        alpha = make_alpha_evaluator(tower, lambda x: float(Xh(m.f(x))), horizon=6000)
        res = tce_residual(m, lambda x: float(Xh(m.f(x))), alpha, n_samples=n_residual, seed=3)
        fam = make_family(m, "additive", Xh, t_range=0.05)
        t = 1e-6
        worst_fd = 0.0
        for k in range(1, k_max + 1):
            av = alpha_resummed(tower, lambda x: float(Xh(m.f(x))), float(orbit.c[k]),
                                horizon=6000).value
            cp = fam.postcritical_point(t, k, prec=60)
            cm = fam.postcritical_point(-t, k, prec=60)
            worst_fd = max(worst_fd, abs(av - (cp - cm) / (2 * t)))
        return res, worst_fd, resid
    (res, worst_fd, resid), dt = _timed(work)
    ok = res <= 1e-5 and worst_fd <= 1e-4
    return Criterion(4, "a=1.9 cohomological residual and c_k derivatives", ok,
                     {"tce_residual": res, "fd_worst": worst_fd,
                      "horizontal_defect": abs(resid)}, dt)


def criterion_5_exact_response():
    """Conjugation benchmark: analytic 1/4 vs the orbit-average derivative."""
    def work():
        m, g, fam = bench.ulam_conjugation_family()
        Ap = lambda x: 2.0 * np.asarray(x)
        oracle = response_oracle_conjugation(fam, closed_form_ulam_density, Ap)
        fd, se = response_fd(fam, lambda x: np.asarray(x) ** 2, t_step=1e-2,
                             n_orbits=64, n_iter=10 ** 6, burn_in=1000, seed=2024)
        return oracle, fd, se
    (oracle, fd, se), dt = _timed(work)
    ok = abs(oracle - 0.25) <= 1e-6 and abs(fd - 0.25) <= 3 * se and dt <= 300.0
    return Criterion(5, "exact response benchmark 1/4", ok,
                     {"oracle": oracle, "fd": fd, "stderr": se, "budget_s": 300}, dt)


def criterion_6_formula_vs_fd():
    """a=1.9 response formula against finite differences, and the A - A o f identity."""
    def work():
        m, Xh, _, _ = bench.a19_horizontal_field()
        A = lambda x: np.asarray(x) ** 2
        Ap = lambda x: 2.0 * np.asarray(x)
        orbit = critical_orbit(m, 9000)
        par = bench.tower_params_for_operator(m, orbit, M_max=40)
        from .tower import build_tower
        tower = build_tower(m, orbit, par)

        ctx_c = build_operator(m, orbit, tower, M=15, n0=2048)
        fp_c = fixed_point(ctx_c, tol=1e-10, max_iter=8000)
        lhs_c, rhs_c = ruelle_identity_check(ctx_c, fp_c.phi, Xh, A, Ap)
        rel_c = abs(lhs_c - rhs_c) / abs(rhs_c)

        ctx = build_operator(m, orbit, tower, M=30, n0=4096)
        fp = fixed_point(ctx, tol=1e-10, max_iter=8000)
        rep = linear_response(ctx, fp.phi, Xh, A, Ap)
        lhs, rhs = ruelle_identity_check(ctx, fp.phi, Xh, A, Ap)
        rel = abs(lhs - rhs) / abs(rhs)

        fam = make_family(m, "additive", Xh, t_range=0.05)
        fd, se = response_fd(fam, A, t_step=1e-2, n_orbits=64, n_iter=10 ** 6,
                             burn_in=1000, seed=77)
        return rep, fd, se, rel, rel_c
    (rep, fd, se, rel, rel_c), dt = _timed(work)
    tol = max(3 * se, 2e-2 * abs(fd))
    ok = abs(rep.formula_value - fd) <= tol and rel <= 1e-2 and rel <= rel_c
    return Criterion(6, "a=1.9 formula vs finite differences", ok,
                     {"formula": rep.formula_value, "fd": fd, "stderr": se,
                      "ruelle_rel": rel, "ruelle_rel_coarse": rel_c, "tol": tol}, dt)


def criterion_7_key_estimate(J=50, tail=300):
    """Summability constants of the inverse postcritical derivative blocks."""
    def work():
        out = {}
        orb2 = critical_orbit(make_quadratic(2.0), J + tail + 2)
        ke2 = key_estimate_check(orb2, 0.0, J, tail)
        out["a2_maxC"] = ke2["max_C"]
        out["a2_bounded"] = ke2["bounded"]
        m9 = make_quadratic(1.9)
        orb9 = critical_orbit(m9, J + tail + 2)
        lam, _ = estimate_ce(orb9, 1)
        from .recurrence import estimate_bec, default_h0
        gam, _flags = estimate_bec(orb9, default_h0(orb9, lam), lam)
        ke9 = key_estimate_check(orb9, gam, J, tail)
        out["a19_maxC"] = ke9["max_C"]
        out["a19_bounded"] = ke9["bounded"]
        return out
    out, dt = _timed(work)
    ok = (out["a2_bounded"] and out["a19_bounded"]
          and out["a2_maxC"] <= 1.0 / 3.0 + 1e-9)
    return Criterion(7, "key summability estimate", ok, out, dt)


def criterion_8_truncation(Ms=(10, 15, 20), step=5):
    """L1 gap between successive truncations against the predicted trend."""
    def work():
        m = make_quadratic(1.9)
        orbit = critical_orbit(m, 9000)
        par = bench.tower_params_for_operator(m, orbit, M_max=max(Ms) + step + 6)
        from .tower import build_tower
        tower = build_tower(m, orbit, par)
        ctxs = {}
        for M in sorted(set(list(Ms) + [M + step for M in Ms])):
            ctxs[M] = build_operator(m, orbit, tower, M=M, n0=2048)
        phis = {M: fixed_point(c, tol=1e-10, max_iter=8000).phi for M, c in ctxs.items()}
        big = ctxs[max(Ms) + step]
        mids, wids = spike_partition(big, n_base=4001)
        gaps, taus = [], []
        gam = par.gamma
        for M in Ms:
            d1 = ctxs[M].project_density(phis[M], mids)
            d2 = ctxs[M + step].project_density(phis[M + step], mids)
            gaps.append(float(np.sum(np.abs(d1 - d2) * wids)))
            taus.append(math.exp(3 * gam * M) * math.exp(-0.5 * orbit.log_deriv(M)))
        return gaps, taus
    (gaps, taus), dt = _timed(work)
    decreasing = all(gaps[i + 1] < gaps[i] for i in range(len(gaps) - 1))
    trend_ok = True
    for i in range(len(gaps) - 1):
        meas = gaps[i] / gaps[i + 1]
        pred = taus[i] / taus[i + 1]
        trend_ok &= 0.1 <= meas / pred <= 10.0
    return Criterion(8, "truncation gaps follow the predicted trend",
                     decreasing and trend_ok,
                     {"gaps": gaps, "taus": taus}, dt)


def criterion_9_divergence(intervals=((0.1, 0.16), (-0.52, -0.47), (0.71, 0.76))):
    """Certified non-convergence witnesses in arbitrary small intervals."""
    def work():
        m = make_quadratic(1.9)
        X = PolyProfile([1.0, 0.0, -1.0])
        v = lambda x: X(m.f(x))
        results = []
        for iv in intervals:
            w = divergence_probe(m, v, iv, depth=5)
            ok = (iv[0] <= w.x <= iv[1] and len(w.indices) >= 5
                  and all(mg >= 2.0 for mg in w.magnitudes)
                  and all(term_magnitude(m, v, w.x_str, j, dps=w.dps) >= 2.0
                          for j in w.indices))
            results.append((ok, w.x, len(w.indices)))
        return results
    results, dt = _timed(work)
    ok = all(r[0] for r in results) and dt <= 30.0 * len(results)
    return Criterion(9, "divergence witnesses (depth 5)", ok,
                     {"witnesses": [f"{x:.6f}({n})" for _, x, n in results],
                      "budget_s": 30 * len(results)}, dt)


def criterion_10_conjugacy_ode(n_points=100):
    """Integrated parameter flow against the exact conjugacy."""
    def work():
        _, g, fam = bench.ulam_conjugation_family()
        rng = np.random.default_rng(123)
        worst = 0.0
        for x in rng.uniform(-1.0, 1.0, n_points):
            for t in (0.05, -0.05):
                u = integrate_conjugacy_ode(fam, float(x), t, n_steps=64)
                worst = max(worst, abs(u - (x + t * float(g(x)))))
        return worst
    worst, dt = _timed(work)
    return Criterion(10, "conjugacy flow ODE vs h_t", worst <= 1e-6,
                     {"worst": worst}, dt)


ALL_CRITERIA = [
    criterion_1_ulam_density,
    criterion_2_commutation,
    criterion_3_spikes,
    criterion_4_tce,
    criterion_5_exact_response,
    criterion_6_formula_vs_fd,
    criterion_7_key_estimate,
    criterion_8_truncation,
    criterion_9_divergence,
    criterion_10_conjugacy_ode,
]


def run_all(select=None, verbose=True):
    """Run the full battery (or a subset of criterion ids); returns records."""
    out = []
    for fn in ALL_CRITERIA:
        cid = int(fn.__name__.split("_")[1])
        if select and cid not in select:
            continue
        rec = fn()
        out.append(rec)
        if verbose:
            print(rec.line(), flush=True)
    return out
