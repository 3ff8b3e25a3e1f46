"""The twisted cohomological equation v = alpha o f - f' * alpha, alpha(c) = 0.

The raw candidate series -sum_j v(f^j x) / (f^(j+1))'(x) diverges on a dense
set, yet for horizontal v it can be resummed by grouping terms along the
tower itinerary of x: one group per shadowing episode, a free part while the
orbit stays on the ground floor and a bound part while it climbs.  Group
totals decay geometrically even where individual terms blow up.

Horizontality itself, v(c) = alpha_cand(c_1), is a codimension-one linear
constraint on v; ``horizontalize`` projects an arbitrary X onto it using a
corrector bump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tower import bound_free_times


# ---------------------------------------------------------------------------
# raw candidate series
# ---------------------------------------------------------------------------

def alpha_candidate_partial(m, v, x, N, crit_tol=1e-14):
    """First N partial sums of -sum_j v(f^j x)/(f^(j+1))'(x).

    If the orbit hits the critical point (within crit_tol) the sum terminates
    there, which is the finite-sum convention for preimages of c.  Returns
    (partials, finite) with finite True on termination.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    partials = []
    total = 0.0
    y = float(x)
    logp, sgn = 0.0, 1.0  # (f^j)'(x) in log-magnitude + sign form
    for _ in range(N):
        if abs(y - m.critical_point) <= crit_tol:
            return np.array(partials if partials else [0.0]), True
        d = float(m.df(y))
        logp += math.log(abs(d))
        sgn *= math.copysign(1.0, d)
        total -= float(v(y)) * sgn * math.exp(-logp)
        partials.append(total)
        y = float(m.f(y))
    return np.array(partials), False


def horizontality_defect(m, v, N=400, lambda_c=None):
    """v(c) - alpha_cand(c_1) with a geometric tail bound.

    The series converges at the expansion rate of the postcritical
    derivative; pass lambda_c to tighten the reported bound, otherwise it is
    measured from the orbit itself.
    """
    c1 = float(m.f(m.critical_point))
    partials, finite = alpha_candidate_partial(m, v, c1, N)
    defect = float(v(m.critical_point)) - float(partials[-1])
    if finite:
        return defect, 0.0
    if lambda_c is None:
        logp, _ = m.log_derivative_sum(c1, N)
        lambda_c = math.exp(max(logp / N, 1e-3))
    # crude sup|v| over a grid; only feeds the tail estimate
    grid = np.linspace(-1.0, 1.0, 257)
    supv = float(np.max(np.abs([v(t) for t in grid])))
    r = 1.0 / lambda_c
    tail = supv * r ** (N + 1) / (1.0 - r)
    return defect, tail


def horizontalize(m, X, bump, N=400):
    """Project X onto the horizontal subspace using the corrector bump.

    Both arguments are profiles; the defect of v = X o f is linear in X, so
    X_new = X - kappa * bump with kappa the defect ratio kills it exactly.
    Returns (X_new, kappa, residual_defect).
    """
    vX = lambda y: X(m.f(y))
    vB = lambda y: bump(m.f(y))
    dX, _ = horizontality_defect(m, vX, N)
    dB, _ = horizontality_defect(m, vB, N)
    scale = max(abs(dX), 1e-30)
    if abs(dB) < 1e-8 * max(1.0, scale):
        raise ValueError("corrector bump is degenerate: its own defect is numerically zero")
    kappa = dX / dB
    X_new = X - kappa * bump
    d_new, _ = horizontality_defect(m, lambda y: X_new(m.f(y)), N)
    return X_new, kappa, d_new


# ---------------------------------------------------------------------------
# dynamical resummation
# ---------------------------------------------------------------------------

@dataclass
class AlphaEvaluation:
    value: float
    n_groups: int
    tail_bound: float
    mode: str               # "finite-sum" | "absolutely-convergent" | "resummed"
    group_ratio: float = 0.0
    decayed: bool = True

    def __float__(self):
        return self.value


def alpha_resummed(tw, v, x, horizon=2000, group_tol=1e-12, crit_tol=1e-12):
    """Evaluate alpha(x) by grouping the candidate series along the itinerary.

    Groups follow the schedule (T_i, S_i) of x on the tower: the terms with
    index in [S_{i-1}, T_i) form the i-th free part, those in [T_i, S_i) the
    i-th bound part.  Summation stops when a full group falls below group_tol
    relative to the running value, or when the schedule is exhausted.

    A critical hit makes the value the exact finite sum.  The tail bound
    extrapolates the last group geometrically at the measured decay ratio.
    """
    m = tw.map
    sched = bound_free_times(tw, x, horizon, crit_tol=crit_tol)

    # orbit walker with log-form derivative products
    y = float(x)
    pos = 0
    logp, sgn = 0.0, 1.0  # (f^pos)'(x)

    def advance(n):
        nonlocal y, pos, logp, sgn
        while pos < n:
            d = float(m.df(y))
            if d == 0.0:
                logp, sgn = -math.inf, 0.0
            else:
                logp += math.log(abs(d))
                sgn *= math.copysign(1.0, d)
            y = float(m.f(y))
            pos += 1

    def block(start, stop, open_tail=False):
        """-sum_{j=start}^{stop-1} v(f^j x)/(f^(j+1))'(x), relative to the block head."""
        advance(start)
        head_logp, head_sgn = logp, sgn
        if head_sgn == 0.0:
            return 0.0
        z = y
        rel_logp, rel_sgn = 0.0, 1.0
        acc = 0.0
        for _ in range(max(stop - start, 0)):
            d = float(m.df(z))
            if d == 0.0:
                break
            rel_logp += math.log(abs(d))
            rel_sgn *= math.copysign(1.0, d)
            term = float(v(z)) * rel_sgn * math.exp(-rel_logp)
            acc += term
            z = float(m.f(z))
            if open_tail and abs(term) < 1e-18 * max(1.0, abs(acc)):
                break
        return -head_sgn * math.exp(-head_logp) * acc

    total = 0.0
    groups = []
    s_prev = 0
    decayed = False
    trapped = False
    for Ti, Si in zip(sched.T, sched.S):
        if math.isinf(Ti):
            # trapped in the base: the remaining free tail converges absolutely
            g = block(s_prev, horizon + 1, open_tail=True)
            total += g
            groups.append(abs(g))
            trapped = True
            decayed = True
            break
        g = block(s_prev, int(Ti))
        if math.isinf(Si):
            # critical hit: bound part vanishes by the w_inf(c) = 0 convention
            total += g
            groups.append(abs(g))
            decayed = True
            break
        g += block(int(Ti), int(Si))
        total += g
        groups.append(abs(g))
        s_prev = int(Si)
        if len(groups) >= 2 and groups[-1] < group_tol * max(1.0, abs(total)):
            decayed = True
            break

    if sched.hit_critical:
        return AlphaEvaluation(value=total, n_groups=len(groups), tail_bound=0.0,
                               mode="finite-sum")
    if trapped:
        return AlphaEvaluation(value=total, n_groups=len(groups), tail_bound=0.0,
                               mode="absolutely-convergent")

    nz = [g for g in groups if g > 0.0]
    ratios = [b / a for a, b in zip(nz, nz[1:]) if a > 0.0]
    ratio = min(float(np.median(ratios)) if ratios else 0.5, 0.95)
    last = groups[-1] if groups else 0.0
    tail = last * ratio / (1.0 - ratio)
    if sched.unresolved or not decayed:
        tail = max(tail, last, max(groups, default=0.0) * (0.0 if decayed else 1.0))
    return AlphaEvaluation(value=total, n_groups=len(groups), tail_bound=tail,
                           mode="resummed", group_ratio=ratio, decayed=decayed)


def make_alpha_evaluator(tw, v, horizon=2000, group_tol=1e-12):
    """Closure x -> alpha(x) (value only), for residual checks and the ODE."""
    def ev(x):
        return alpha_resummed(tw, v, float(x), horizon=horizon, group_tol=group_tol).value
    return ev


def tce_residual(m, v, alpha, n_samples=200, seed=0, weighted=False):
    """max over sampled x of |v(x) - alpha(f(x)) + f'(x) alpha(x)|.

    With weighted=True each residual is divided by 1 + |f'(x)|.
    """
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1.0, 1.0, n_samples)
    worst = 0.0
    for x in xs:
        r = abs(float(v(x)) - alpha(float(m.f(x))) + float(m.df(x)) * alpha(float(x)))
        if weighted:
            r /= 1.0 + abs(float(m.df(x)))
        worst = max(worst, r)
    return worst


# ---------------------------------------------------------------------------
# divergence of the raw series
# ---------------------------------------------------------------------------

def term_magnitude(m, v, x, j, dps=None):
    """|v(f^j x) / (f^(j+1))'(x)|, the j-th magnitude of the raw series at x.

    With dps set, the orbit and derivative product are carried in mpmath at
    that precision (x may be a decimal string); v is still read off in double
    precision, which is harmless since only the orbit is ill-conditioned.
    """
    if dps is None:
        y = float(x)
        logp = 0.0
        vnum = None
        for i in range(j + 1):
            if i == j:
                vnum = abs(float(v(y)))
            d = float(m.df(y))
            if d == 0.0:
                return math.inf if vnum != 0.0 else 0.0
            logp += math.log(abs(d))
            y = float(m.f(y))
        if vnum == 0.0:
            return 0.0
        return math.exp(math.log(vnum) - logp)

    import mpmath as mp
    if not m.is_quadratic:
        raise ValueError("high-precision terms need the closed-form quadratic family")
    with mp.workdps(dps):
        a = mp.mpf(repr(m.a))
        y = mp.mpf(x if isinstance(x, str) else repr(float(x)))
        logp = mp.mpf(0)
        vnum = None
        for i in range(j + 1):
            if i == j:
                vnum = abs(float(v(float(y))))
            d = -2 * a * y
            if d == 0:
                return math.inf if vnum != 0.0 else 0.0
            logp += mp.log(abs(d))
            y = a * (1 - y * y) - 1
        if vnum == 0.0:
            return 0.0
        return float(mp.e ** (mp.log(vnum) - logp))


_term_magnitude = term_magnitude


@dataclass
class DivergenceWitness:
    x: float                 # witness rounded to double
    indices: list            # certified term indices, magnitude >= 2 at the witness
    magnitudes: list
    x_str: str               # witness at construction precision
    dps: int

    def __iter__(self):  # allows "x, indices = divergence_probe(...)"
        return iter((self.x, self.indices))


def divergence_probe(m, v, interval, depth=5, max_steps=20000, dps=None):
    """Produce a witness of non-convergence of the raw series inside ``interval``.

    Nested-interval scheme: whenever the critical point becomes interior to
    the image of the running interval, split at its preimage x_c.  Across
    x_c the term of index n + i0 blows up (the derivative product acquires a
    factor f'(~c) while v(f^(i0) c) != 0), so a one-sided neighbour of x_c is
    kept on which that term is >= 2, and the walk continues.

    Each certificate roughly squares the local derivative product, so the
    admissible neighbourhoods shrink double-exponentially in the depth; the
    walk therefore runs in mpmath (the witness is a Cantor-set point that no
    double can represent beyond depth ~2).  Certification at the witness is
    rechecked by direct evaluation at the construction precision.
    """
    import mpmath as mp

    lo, hi = float(interval[0]), float(interval[1])
    if not -1.0 <= lo < hi <= 1.0:
        raise ValueError("interval must be a nondegenerate subinterval of [-1, 1]")
    if not m.is_quadratic:
        raise ValueError("divergence probe needs the closed-form quadratic family")
    # locate i0 with v(f^(i0)(c)) != 0 and the derivative scale through those steps
    i0 = None
    z = m.critical_point
    for i in range(0, 64):
        if abs(float(v(z))) > 1e-10:
            i0 = i
            break
        z = float(m.f(z))
    if i0 is None:
        raise ValueError("v vanishes along the start of the critical orbit; need v(f^i0(c)) != 0")
    h = 1e-6
    dvc = (float(v(m.critical_point + h)) - float(v(m.critical_point - h))) / (2 * h)
    if abs(dvc) > 1e-3:
        raise ValueError("probe requires v'(c) = 0 (checked by finite difference)")

    if depth == 0:
        return DivergenceWitness(x=0.5 * (lo + hi), indices=[], magnitudes=[],
                                 x_str=repr(0.5 * (lo + hi)), dps=17)

    if dps is None:
        dps = 40 + 50 * depth  # windows shrink double-exponentially with depth

    with mp.workdps(dps):
        a_par = mp.mpf(repr(m.a))
        c = mp.mpf(0)

        def F(x):
            return a_par * (1 - x * x) - 1

        def iterate(x, n):
            y = x
            for _ in range(n):
                y = F(y)
            return y

        def logderiv(x, n):
            """log|(f^n)'(x)|."""
            y, s = x, mp.mpf(0)
            for _ in range(n):
                s += mp.log(abs(2 * a_par * y))
                y = F(y)
            return s

        def term_ok(y, j, thresh=2.0):
            vnum = abs(float(v(float(iterate(y, j)))))
            if vnum == 0.0:
                return False
            return mp.log(vnum) - logderiv(y, j + 1) >= mp.log(thresh)

        a = mp.mpf(lo) + mp.mpf("1e-9") * (hi - lo)
        b = mp.mpf(hi) - mp.mpf("1e-9") * (hi - lo)
        fa, fb = iterate(a, 1), iterate(b, 1)
        n = 1
        indices, mags = [], []
        while n < max_steps and len(indices) < depth:
            if min(fa, fb) < c < max(fa, fb):
                # split at the interior preimage of c to keep f^(n+1) monotone
                increasing = fa < fb
                xa, xb = a, b
                for _ in range(40):
                    mid = (xa + xb) / 2
                    if (iterate(mid, n) < c) == increasing:
                        xa = mid
                    else:
                        xb = mid
                xc = (xa + xb) / 2
                sgn_d = 1 if increasing else -1
                for _ in range(60):
                    fn = iterate(xc, n)
                    dn = sgn_d * mp.e ** logderiv(xc, n)
                    step = fn / dn
                    xc_new = xc - step
                    if not xa < xc_new < xb:
                        break
                    xc = xc_new
                    if abs(step) < mp.mpf(10) ** (-(dps - 8)) * max(abs(xc), mp.mpf("1e-30")):
                        break
                jdx = n + i0
                # analytic window: term >= 2 needs |f^n(y) - c| <= w
                vmag = abs(float(v(float(iterate(xc, n + i0)))))  # ~ |v(f^i0 c)|
                Dn = mp.e ** logderiv(xc + (b - xc) / 1000, n)
                Qi = mp.e ** (logderiv(F(c), i0)) if i0 else mp.mpf(1)
                w = mp.mpf(vmag) / (2 * Dn * Qi * 2 * a_par) / 2  # extra /2 for distortion slack
                yw = w / Dn
                cand = None
                for side in (1, -1):
                    room = (b - xc) if side > 0 else (xc - a)
                    if room <= 0:
                        continue
                    scale = min(yw, room / 2)
                    while scale > mp.mpf(10) ** (-(dps - 10)):
                        tlo, thi = sorted((xc + side * scale / 20, xc + side * scale))
                        pts = [tlo + (thi - tlo) * q for q in (mp.mpf("0"), mp.mpf("0.37"), mp.mpf("1"))]
                        if all(term_ok(p, jdx) for p in pts):
                            cand = (tlo, thi)
                            break
                        scale /= 8
                    if cand is not None:
                        break
                if cand is not None:
                    indices.append(jdx)
                else:
                    room = max(b - xc, xc - a)
                    side = 1 if b - xc >= xc - a else -1
                    cand = tuple(sorted((xc + side * room / 1000, xc + side * room / 2)))
                a, b = cand
                fa, fb = iterate(a, n), iterate(b, n)
            fa, fb = F(fa), F(fb)
            n += 1

        if len(indices) < depth:
            raise RuntimeError(f"nested search stagnated with {len(indices)} of {depth} certified indices")
        x_star = (a + b) / 2
        x_str = mp.nstr(x_star, dps - 5)
        final = [float(mp.e ** (mp.log(abs(float(v(float(iterate(x_star, j)))))) - logderiv(x_star, j + 1)))
                 for j in indices]
        if not all(mg >= 2.0 for mg in final):
            raise RuntimeError("witness failed final certification")
        return DivergenceWitness(x=float(x_star), indices=indices, magnitudes=final,
                                 x_str=x_str, dps=dps)


# ---------------------------------------------------------------------------
# conjugacy ODE
# ---------------------------------------------------------------------------

def integrate_conjugacy_ode(family, x, t, n_steps=64, alpha_provider=None):
    """Integrate du/ds = alpha_s(u) from u(0) = x to u(t) with classic RK4.

    For conjugation families alpha_s(y) = g(h_s^{-1}(y)) in closed form; for
    other kinds pass alpha_provider(s) returning an evaluator.  The solution
    approximates the parameter flow of the conjugacy at x.
    """
    if t == 0.0 or n_steps == 0:
        return float(x)
    if alpha_provider is None:
        if family.kind != "conjugation":
            raise ValueError("need alpha_provider for non-conjugation families")
        g = family.profile

        def alpha_provider(s):
            return lambda u: float(g(family.h_inv(s, u)))

    hstep = t / n_steps
    u = float(x)
    for i in range(n_steps):
        s = i * hstep
        a1 = alpha_provider(s)(u)
        a2 = alpha_provider(s + hstep / 2)(u + hstep * a1 / 2)
        a3 = alpha_provider(s + hstep / 2)(u + hstep * a2 / 2)
        a4 = alpha_provider(s + hstep)(u + hstep * a3)
        u += hstep * (a1 + 2 * a2 + 2 * a3 + a4) / 6.0
    return u
