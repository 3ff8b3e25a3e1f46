"""Quadratic unimodal maps on [-1, 1] and one-parameter families.

The concrete family is f_a(x) = a*(1 - x^2) - 1 for a in (1, 2], which fixes
the endpoints (f(-1) = f(1) = -1), has its critical point at x = 0, and at
a = 2 reduces to the full quadratic map 1 - 2x^2 whose invariant density is
known in closed form.

Families come in two kinds:

* conjugation: f_t = h_t o f o h_t^{-1} with h_t(x) = x + t*g(x).  The exact
  conjugacy makes these families ideal oracles (velocity g o f - f'*g, and
  the invariant measure is the pushforward of the base measure by h_t).
* additive: f_t = (id + t*X) o f, the form the response formula needs
  (velocity is X o f exactly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INTERVAL = (-1.0, 1.0)


# ---------------------------------------------------------------------------
# smooth scalar profiles (perturbation shapes g and X)
# ---------------------------------------------------------------------------

class Profile:
    """A scalar function on [-1, 1] with three derivatives.

    Concrete profiles are polynomials, compactly supported bumps, or linear
    combinations thereof.  Derivatives are exact, never finite differences.
    """

    def __call__(self, x):
        raise NotImplementedError

    def d1(self, x):
        raise NotImplementedError

    def d2(self, x):
        raise NotImplementedError

    def d3(self, x):
        raise NotImplementedError

    def __add__(self, other):
        return _ComboProfile([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return _ComboProfile([(1.0, self), (-1.0, other)])

    def __rmul__(self, scalar):
        return _ComboProfile([(float(scalar), self)])


class PolyProfile(Profile):
    """Polynomial profile given by coefficients c0 + c1*x + c2*x^2 + ..."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self._p = np.polynomial.Polynomial(self.coeffs)
        self._p1 = self._p.deriv(1)
        self._p2 = self._p.deriv(2)
        self._p3 = self._p.deriv(3)

    def __call__(self, x):
        return self._p(x)

    def d1(self, x):
        return self._p1(x)

    def d2(self, x):
        return self._p2(x)

    def d3(self, x):
        return self._p3(x)

    def __repr__(self):
        return f"PolyProfile({list(self.coeffs)})"


class BumpProfile(Profile):
    """C^2 compactly supported hump (1-u^2)^3 on |u| < 1, u = (x-center)/width."""

    def __init__(self, center, width, height=1.0):
        if width <= 0:
            raise ValueError("bump width must be positive")
        self.center = float(center)
        self.width = float(width)
        self.height = float(height)

    def _u(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.width

    def __call__(self, x):
        u = self._u(x)
        out = np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 3, 0.0)
        return self.height * out if np.ndim(x) else float(self.height * out)

    def d1(self, x):
        u = self._u(x)
        out = np.where(np.abs(u) < 1.0, -6.0 * u * (1.0 - u * u) ** 2, 0.0)
        out = self.height * out / self.width
        return out if np.ndim(x) else float(out)

    def d2(self, x):
        u = self._u(x)
        q = 1.0 - u * u
        out = np.where(np.abs(u) < 1.0, -6.0 * q * q + 24.0 * u * u * q, 0.0)
        out = self.height * out / self.width ** 2
        return out if np.ndim(x) else float(out)

    def d3(self, x):
        u = self._u(x)
        out = np.where(np.abs(u) < 1.0, 72.0 * u - 120.0 * u ** 3, 0.0)
        out = self.height * out / self.width ** 3
        return out if np.ndim(x) else float(out)

    def __repr__(self):
        return f"BumpProfile(center={self.center}, width={self.width}, height={self.height})"


class _ComboProfile(Profile):
    def __init__(self, terms):
        flat = []
        for w, p in terms:
            if isinstance(p, _ComboProfile):
                flat.extend((w * wi, pi) for wi, pi in p.terms)
            else:
                flat.append((w, p))
        self.terms = flat

    def __call__(self, x):
        return sum(w * p(x) for w, p in self.terms)

    def d1(self, x):
        return sum(w * p.d1(x) for w, p in self.terms)

    def d2(self, x):
        return sum(w * p.d2(x) for w, p in self.terms)

    def d3(self, x):
        return sum(w * p.d3(x) for w, p in self.terms)


#: named built-in profiles usable from config files
NAMED_PROFILES = {
    # odd cubic vanishing at -1, 0, 1; the standard conjugation shape
    "cubic_odd": lambda: PolyProfile([0.0, 1.0, 0.0, -1.0]),
    # 1 - x^2, vanishing at both endpoints
    "one_minus_xsq": lambda: PolyProfile([1.0, 0.0, -1.0]),
    # x^2 - 1, the quadratic shape pinned to vanish at the endpoints
    "xsq_minus_one": lambda: PolyProfile([-1.0, 0.0, 1.0]),
}


def profile_from_spec(spec):
    """Build a Profile from a config token.

    Accepts a named profile (``cubic_odd``), ``poly:c0,c1,...``, or
    ``bump:center,width[,height]``.
    """
    spec = spec.strip()
    if spec in NAMED_PROFILES:
        return NAMED_PROFILES[spec]()
    if spec.startswith("poly:"):
        coeffs = [float(tok) for tok in spec[5:].split(",")]
        return PolyProfile(coeffs)
    if spec.startswith("bump:"):
        args = [float(tok) for tok in spec[5:].split(",")]
        return BumpProfile(*args)
    raise ValueError(f"unknown profile spec {spec!r}")


# ---------------------------------------------------------------------------
# the maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnimodalMap:
    """Evaluator bundle for an S-unimodal map on [-1, 1] with critical point 0.

    ``f``, ``df``, ``d2f``, ``d3f`` are vectorized callables.  ``a`` is the
    quadratic family parameter when the map belongs to the concrete family
    (None otherwise); quadratic-family maps also expose a closed-form branch
    preimage, which the transfer operator uses heavily.
    """

    f: callable
    df: callable
    d2f: callable
    d3f: callable
    a: float | None = None
    label: str = ""
    critical_point: float = 0.0
    # optional exact fast-orbit path (to_internal, step_internal, from_internal);
    # conjugated maps iterate in the conjugacy coordinate where the step is cheap
    fast_iter: tuple | None = None

    def __call__(self, x):
        return self.f(x)

    @property
    def is_quadratic(self):
        return self.a is not None

    def preimage(self, y, sign):
        """Solve f(x) = y on the branch with sign(x) = sign (quadratic family only)."""
        if self.a is None:
            raise ValueError("closed-form preimage only available for the quadratic family")
        a = self.a
        r = (a - 1.0 - np.asarray(y, dtype=float)) / a
        return sign * np.sqrt(np.maximum(r, 0.0))

    def orbit(self, x0, n):
        """Forward orbit [x0, f(x0), ..., f^n(x0)] as an array of length n+1."""
        out = np.empty(n + 1)
        out[0] = x0
        x = x0
        for i in range(n):
            x = self.f(x)
            out[i + 1] = x
        return out

    def log_derivative_sum(self, x0, n):
        """log|(f^n)'(x0)| accumulated in log form, with the product's sign."""
        x = x0
        tot = 0.0
        sign = 1.0
        for _ in range(n):
            d = self.df(x)
            if d == 0.0:
                return -math.inf, 0.0
            tot += math.log(abs(d))
            sign *= math.copysign(1.0, d)
            x = self.f(x)
        return tot, sign

    def schwarzian(self, x):
        """Schwarzian derivative f'''/f' - (3/2)(f''/f')^2 (x away from 0)."""
        d1 = self.df(x)
        return self.d3f(x) / d1 - 1.5 * (self.d2f(x) / d1) ** 2


def make_quadratic(a):
    """Map f_a(x) = a*(1 - x^2) - 1 for a in (1, 2]; a = 2 is the full quadratic map."""
    if not 1.0 < a <= 2.0:
        raise ValueError(f"family parameter must satisfy 1 < a <= 2, got {a}")
    a = float(a)
    return UnimodalMap(
        f=lambda x, a=a: a * (1.0 - np.square(x)) - 1.0,
        df=lambda x, a=a: -2.0 * a * np.asarray(x, dtype=float),
        d2f=lambda x, a=a: np.full_like(np.asarray(x, dtype=float), -2.0 * a),
        d3f=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        a=a,
        label=f"quadratic(a={a})",
    )


# ---------------------------------------------------------------------------
# structural validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)  # (name, passed, worst_margin)
    warnings: list = field(default_factory=list)

    def add(self, name, passed, margin):
        self.checks.append((name, bool(passed), float(margin)))

    @property
    def passed(self):
        return all(ok for _, ok, _ in self.checks)

    def margin(self, name):
        for n, _, m in self.checks:
            if n == name:
                return m
        raise KeyError(name)

    def as_dict(self):
        return {
            "passed": self.passed,
            "checks": [{"name": n, "passed": ok, "margin": m} for n, ok, m in self.checks],
            "warnings": list(self.warnings),
        }


def validate_s_unimodal(m, n_samples=10_000, schwarzian_strict=True):
    """Check the S-unimodal structure on a sample grid.

    Reports endpoint normalization, the critical point, monotonicity on each
    side, symmetry, and the sign of the Schwarzian derivative.  Margins are
    signed so that positive means pass with room.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    rep = ValidationReport()

    b_err = max(abs(m.f(-1.0) + 1.0), abs(m.f(1.0) + 1.0))
    rep.add("boundary f(+-1) = -1", b_err == 0.0, -b_err)

    rep.add("f'(0) = 0", abs(m.df(0.0)) < 1e-12, -abs(m.df(0.0)))
    rep.add("f''(0) < 0", m.d2f(0.0) < 0.0, -float(m.d2f(0.0)))

    xs = np.linspace(-1.0, 1.0, n_samples)
    xs = xs[np.abs(xs) > 1e-9]
    neg, pos = xs[xs < 0], xs[xs > 0]
    dneg, dpos = np.asarray(m.df(neg)), np.asarray(m.df(pos))
    rep.add("f' > 0 on [-1,0)", np.all(dneg > 0), float(dneg.min()))
    rep.add("f' < 0 on (0,1]", np.all(dpos < 0), float(-dpos.max()))

    sym = np.max(np.abs(np.asarray(m.f(pos)) - np.asarray(m.f(-pos))))
    rep.add("symmetry f(x) = f(-x)", sym < 1e-12, -float(sym))

    sch = np.asarray(m.schwarzian(xs))
    worst = float(sch.max())
    if schwarzian_strict:
        rep.add("Schwarzian < 0", np.all(sch < 0), -worst)
    else:
        if not np.all(sch < 0):
            rep.warnings.append(f"Schwarzian non-negative somewhere (max {worst:.3e})")
        rep.add("Schwarzian < 0 (warn-only)", True, -worst)
    return rep


# ---------------------------------------------------------------------------
# one-parameter families
# ---------------------------------------------------------------------------

def _invert_increasing(h, y, lo=-1.0, hi=1.0, dh=None):
    """Invert a strictly increasing h on [lo, hi].

    Newton from x = y when the derivative is available (converges in a few
    steps for the near-identity h_t used here), falling back to bisection for
    entries that fail to converge; bisection runs 60 halvings, below the
    double resolution of the interval, plus one Newton polish.
    """
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    x = np.clip(y.copy(), lo, hi)
    done = np.zeros(y.shape, dtype=bool)
    if dh is not None:
        for _ in range(40):
            r = h(x) - y
            done = np.abs(r) < 1e-14
            if done.all():
                break
            d = dh(x)
            step = np.where(d > 0.0, r / np.where(d > 0.0, d, 1.0), 0.0)
            x = np.clip(x - step, lo, hi)
    if not done.all():
        a = np.full(y.shape, lo)
        b = np.full(y.shape, hi)
        for _ in range(60):
            mid = 0.5 * (a + b)
            below = h(mid) < y
            a = np.where(below, mid, a)
            b = np.where(below, b, mid)
        xb = 0.5 * (a + b)
        if dh is not None:
            d = dh(xb)
            step = np.where(d > 0.0, (h(xb) - y) / np.where(d > 0.0, d, 1.0), 0.0)
            xb = np.clip(xb - step, lo, hi)
        x = np.where(done, x, xb)
    return float(x[0]) if scalar else x


@dataclass
class DeformationFamily:
    """One-parameter family f_t through a base map, with exact velocity.

    kind = "conjugation": f_t = h_t o f o h_t^{-1}, h_t(x) = x + t*g(x).
    kind = "additive":    f_t = (id + t*X) o f.
    """

    kind: str
    base: UnimodalMap
    profile: Profile
    t_range: float

    def __post_init__(self):
        if self.kind not in ("conjugation", "additive"):
            raise ValueError(f"unknown family kind {self.kind!r}")

    # -- conjugation helpers -------------------------------------------------
    def h(self, t, x):
        return np.asarray(x, dtype=float) + t * np.asarray(self.profile(x))

    def dh(self, t, x):
        return 1.0 + t * np.asarray(self.profile.d1(x))

    def h_inv(self, t, y):
        if t == 0.0:
            return np.asarray(y, dtype=float)
        return _invert_increasing(lambda x: self.h(t, x), y, dh=lambda x: self.dh(t, x))

    # -- the family ----------------------------------------------------------
    def map_at(self, t):
        """The deformed map f_t as a UnimodalMap (derivatives by exact chain rule)."""
        if abs(t) > self.t_range:
            raise ValueError(f"|t| = {abs(t)} exceeds admitted range {self.t_range}")
        if t == 0.0:
            return self.base
        base, p = self.base, self.profile

        if self.kind == "additive":
            def ft(x):
                y = base.f(x)
                return y + t * np.asarray(p(y))

            def dft(x):
                y = base.f(x)
                return base.df(x) * (1.0 + t * np.asarray(p.d1(y)))

            def d2ft(x):
                y = base.f(x)
                d1 = base.df(x)
                return base.d2f(x) * (1.0 + t * np.asarray(p.d1(y))) + t * np.asarray(p.d2(y)) * d1 ** 2

            def d3ft(x):
                y = base.f(x)
                d1, d2 = base.df(x), base.d2f(x)
                return (base.d3f(x) * (1.0 + t * np.asarray(p.d1(y)))
                        + 3.0 * t * np.asarray(p.d2(y)) * d1 * d2
                        + t * np.asarray(p.d3(y)) * d1 ** 3)

            return UnimodalMap(f=ft, df=dft, d2f=d2ft, d3f=d3ft, a=None,
                               label=f"{base.label}+{t}*X")

        # conjugation: phi = h o f o h^{-1}
        def parts(x):
            u = self.h_inv(t, x)
            hp = 1.0 + t * np.asarray(p.d1(u))
            hpp = t * np.asarray(p.d2(u))
            hppp = t * np.asarray(p.d3(u))
            u1 = 1.0 / hp
            u2 = -hpp * u1 ** 3
            u3 = (3.0 * hpp ** 2 - hppp * hp) * u1 ** 5
            # F = f o h^{-1}
            F = base.f(u)
            F1 = base.df(u) * u1
            F2 = base.d2f(u) * u1 ** 2 + base.df(u) * u2
            F3 = base.d3f(u) * u1 ** 3 + 3.0 * base.d2f(u) * u1 * u2 + base.df(u) * u3
            return u, F, F1, F2, F3

        def ft(x):
            _, F, _, _, _ = parts(x)
            return F + t * np.asarray(p(F))

        def dft(x):
            _, F, F1, _, _ = parts(x)
            return (1.0 + t * np.asarray(p.d1(F))) * F1

        def d2ft(x):
            _, F, F1, F2, _ = parts(x)
            return t * np.asarray(p.d2(F)) * F1 ** 2 + (1.0 + t * np.asarray(p.d1(F))) * F2

        def d3ft(x):
            _, F, F1, F2, F3 = parts(x)
            return (t * np.asarray(p.d3(F)) * F1 ** 3
                    + 3.0 * t * np.asarray(p.d2(F)) * F1 * F2
                    + (1.0 + t * np.asarray(p.d1(F))) * F3)

        # iterating x -> f_t(x) is exactly h_t applied to the base orbit of
        # h_t^{-1}(x); orbit consumers can use this conjugacy coordinate
        fast = (lambda x: self.h_inv(t, x), base.f, lambda u: self.h(t, u))
        return UnimodalMap(f=ft, df=dft, d2f=d2ft, d3f=d3ft, a=None,
                           label=f"h_{t} conj {base.label}", fast_iter=fast)

    def velocity(self, s, x):
        """v_s(x), the t-derivative of f_t(x) at t = s (closed form, both kinds)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "additive":
            # f_t = f + t X o f, so v_s = X o f for every s
            return np.asarray(self.profile(self.base.f(x)))
        # f_t = h_t o f o h_t^{-1}; with h_t = id + t g:
        # v_s(x) = g(f(u)) + (1 + s g'(f(u))) f'(u) du/ds,  u = h_s^{-1}(x),
        # du/ds = -g(u) / (1 + s g'(u)).
        p, base = self.profile, self.base
        u = self.h_inv(s, x)
        Fu = base.f(u)
        duds = -np.asarray(p(u)) / (1.0 + s * np.asarray(p.d1(u)))
        return np.asarray(p(Fu)) + (1.0 + s * np.asarray(p.d1(Fu))) * base.df(u) * duds

    def velocity_x_form(self):
        """The X profile with v_0 = X o f_0, only defined for additive families."""
        if self.kind != "additive":
            raise ValueError("velocity is X o f only for additive families")
        return self.profile

    def postcritical_point(self, t, k, prec=None):
        """c_{k,t} = f_t^k(0).  With prec set, computed in mpmath at that precision.

        High precision matters for finite-difference quotients (c_{k,t}-c_k)/t:
        round-off in a double-precision orbit is amplified by |(f^k)'| and can
        dominate at t ~ 1e-6 for k beyond ~20.
        """
        if prec is None:
            x = 0.0
            fm = self.map_at(t)
            for _ in range(k):
                x = float(fm.f(x))
            return x
        import mpmath as mp
        with mp.workdps(prec):
            tt = mp.mpf(repr(t))
            x = mp.mpf(0)
            if self.kind == "additive":
                a = mp.mpf(repr(self.base.a))
                X = self.profile
                coeffs = getattr(X, "coeffs", None)
                for _ in range(k):
                    y = a * (1 - x * x) - 1
                    if coeffs is not None:
                        x = y + tt * mp.polyval([mp.mpf(repr(ci)) for ci in coeffs[::-1]], y)
                    else:
                        x = y + tt * mp.mpf(repr(float(X(float(y)))))
            else:
                raise ValueError("high-precision orbit implemented for additive kind")
            return float(x)


def make_family(base, kind, payload, t_range=0.1):
    """Build a DeformationFamily after checking kind-specific boundary conditions.

    conjugation: g(-1) = g(0) = g(1) = 0 and h_t strictly increasing on the
    requested range.  additive: X(-1) = 0 so f_t keeps fixing the endpoints;
    when the base map attains +1 (a = 2) X(1) must vanish as well.
    """
    if kind == "conjugation":
        g = payload
        for pt in (-1.0, 0.0, 1.0):
            if abs(g(pt)) > 1e-12:
                raise ValueError(f"conjugation profile must vanish at {pt}, got g({pt}) = {g(pt)}")
        xs = np.linspace(-1.0, 1.0, 4001)
        dmin = float(np.min(np.asarray(g.d1(xs))))
        dmax = float(np.max(np.asarray(g.d1(xs))))
        t_ok = 0.999 / max(abs(dmin), abs(dmax), 1e-300)
        if t_range > t_ok:
            raise ValueError(f"h_t not monotone over requested range; need |t| < {t_ok:.4g}")
    elif kind == "additive":
        X = payload
        if abs(X(-1.0)) > 1e-12:
            raise ValueError(f"additive profile must vanish at -1, got X(-1) = {X(-1.0)}")
        c1 = float(base.f(0.0))
        if c1 >= 1.0 - 1e-12 and abs(X(1.0)) > 1e-12:
            raise ValueError("additive profile must vanish at 1 when the base map attains 1")
    else:
        raise ValueError(f"unknown family kind {kind!r}")
    return DeformationFamily(kind=kind, base=base, profile=payload, t_range=float(t_range))


def family_velocity(family, s, x):
    """v_s(x) = d/dt f_t(x) at t = s (analytic, matches central differences to O(h^2))."""
    if abs(s) > family.t_range:
        raise ValueError(f"|s| exceeds admitted range {family.t_range}")
    return family.velocity(s, x)
