"""Parameter derivative of the invariant measure, and its validation.

The derivative of int A d(mu_t) at t = 0 for an additive horizontal family
(velocity X o f) is evaluated as two terms built from the tower operator:
a resolvent solve against the differentiated ground-level source, and a
boundary-like term from the moving spikes,

    value = int A * proj((id - L)^{-1} D) dx
          - lam * int A' * proj((id - T0)(L (Yhat phihat))) dx,

with D = -(T0 L(Yhat phihat))' and Yhat the orbit-derivative weights.  The
module also carries the independent checks: the exact pushforward derivative
for conjugation families, central finite differences of long-run averages,
the A - A o f identity, a truncated susceptibility scan, and the bound-period
Taylor-weight table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .oracle import birkhoff_average
from .transfer import TowerFunction


# ---------------------------------------------------------------------------
# orbit-derivative weights
# ---------------------------------------------------------------------------

def y_weights(m, X, x, k):
    """Y_k(x) = sum_{j=1}^{k} (f^{k-j})'(f^j x) * X(f^j x).

    Evaluated through the normalized form Z_k = Y_k / (f^k)'(x) accumulated in
    log-magnitude-safe arithmetic, so deep k cannot overflow the running
    product.  Accepts scalar or array x.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    x = np.asarray(x, dtype=float)
    z = np.zeros_like(x)          # running Y_j / (f^j)'(x)
    logp = np.zeros_like(x)       # log|(f^j)'(x)|
    sgn = np.ones_like(x)
    y = x.copy()
    for _ in range(k):
        d = np.asarray(m.df(y), dtype=float)
        logp = logp + np.log(np.maximum(np.abs(d), 1e-300))
        sgn = sgn * np.sign(d)
        y = np.asarray(m.f(y))
        z = z + np.asarray(X(y)) * sgn * np.exp(-logp)
    out = z * sgn * np.exp(logp)
    return out if out.ndim else float(out)


def y_over_deriv(m, X, x, k):
    """Z_k = Y_k(x) / (f^k)'(x) = sum_{j<=k} X(f^j x)/(f^j)'(x), log-safe."""
    x = np.asarray(x, dtype=float)
    z = np.zeros_like(x)
    logp = np.zeros_like(x)
    sgn = np.ones_like(x)
    y = x.copy()
    for _ in range(k):
        d = np.asarray(m.df(y), dtype=float)
        logp = logp + np.log(np.maximum(np.abs(d), 1e-300))
        sgn = sgn * np.sign(d)
        y = np.asarray(m.f(y))
        z = z + np.asarray(X(y)) * sgn * np.exp(-logp)
    return z if z.ndim else float(z)


def y_weights_direct(m, X, x, k):
    """Direct-sum evaluation of Y_k (cross-check for the recursion)."""
    tot = 0.0
    for j in range(1, k + 1):
        yj = x
        for _ in range(j):
            yj = float(m.f(yj))
        lp, sg = m.log_derivative_sum(yj, k - j)
        tot += sg * math.exp(lp) * float(X(yj))
    return tot


def hat_y_product(ctx, X, psi):
    """(Yhat psi)_k = Y_{k+1} * psi_k on every level's nodes (index shift)."""
    out = ctx.zeros()
    for k in range(ctx.M + 1):
        out.values[k][:] = psi.values[k] * y_weights(ctx.map, X, ctx.grids[k], k + 1)
    return out


# ---------------------------------------------------------------------------
# spike-aware quadrature
# ---------------------------------------------------------------------------

def spike_partition(ctx, n_base=4001, tail=1e-12, per_decade=10):
    """Open midpoint partition of (-1, 1) with log refinement at each c_k.

    Returns (midpoints, widths); no node ever coincides with a spike point,
    and the integrable 1/sqrt singularities contribute tails below ~sqrt(tail).
    """
    spikes = sorted(set(float(ctx.orbit.point(k)) for k in range(1, ctx.M + 1)))
    edges = set(np.linspace(-1.0, 1.0, n_base))
    for c in spikes:
        base = 2.0 / (n_base - 1)
        n_lvl = int(per_decade * math.log10(base / tail)) + 1
        for r in np.geomspace(tail, base, n_lvl):
            for s in (c - r, c + r):
                if -1.0 < s < 1.0:
                    edges.add(s)
        edges.add(c)
    edges = np.array(sorted(edges))
    mids = 0.5 * (edges[1:] + edges[:-1])
    wids = np.diff(edges)
    keep = wids > 0
    return mids[keep], wids[keep]


def integrate_density(ctx, psi, fn=None, n_base=4001):
    """int fn(x) * proj(psi)(x) dx with the spike-refined open partition."""
    mids, wids = spike_partition(ctx, n_base=n_base)
    dens = ctx.project_density(psi, mids)
    vals = dens if fn is None else dens * np.asarray(fn(mids))
    return float(np.sum(vals * wids))


# ---------------------------------------------------------------------------
# the response source and resolvent
# ---------------------------------------------------------------------------

def response_source(ctx, phi, X, defect_tol=1e-6):
    """D = -(T0 L(Yhat phihat))', differentiated on the ground grid.

    The mean is removed exactly (the continuum source integrates to zero as
    the derivative of a compactly supported function); the correction size is
    recorded and must stay below defect_tol.
    """
    g = ctx.apply(hat_y_product(ctx, X, phi))
    xs = ctx.grids[0]
    d0 = np.gradient(g.values[0], xs, edge_order=2)
    src = ctx.zeros()
    src.values[0][:] = -d0
    mean = ctx.nu(src) / 2.0
    src.values[0] -= mean
    src.values[0][0] = src.values[0][-1] = 0.0
    resid = ctx.nu(src)
    src.values[0] -= resid / 2.0
    src.values[0][0] = src.values[0][-1] = 0.0
    if abs(mean) > defect_tol:
        raise ValueError(f"source mean-correction {mean:.3e} too large: grid too coarse")
    return src, float(mean)


@dataclass
class ResolventResult:
    u: TowerFunction
    iterations: int
    decay_ratio: float
    last_increment: float
    converged: bool


def resolvent_apply(ctx, g, phi=None, tol=1e-10, n_max=3000, reproject_every=25,
                    nu_tol=1e-6):
    """u = sum_{n>=0} L_M^n (Q g) with Q the complement of the peak eigenspace.

    Q g = g - phi_M * nu_M(g); the leading eigencomponent re-injected by
    round-off is swept out periodically.  Geometric decay of the increments
    is required; the measured ratio is returned.  nu_tol guards the
    mean-zero precondition; the default allows for the discrete operator's
    conservation floor (capped rescale factors leave O(1e-7) slips).
    """
    if abs(ctx.nu(g)) > nu_tol * max(ctx.bl1_norm(g), 1e-300):
        raise ValueError("resolvent input must have zero reference-measure integral")
    if phi is None:
        from .transfer import fixed_point
        phi = fixed_point(ctx).phi
    nrm = ctx.nu_M(phi)
    def project(v):
        return v - (ctx.nu_M(v) / nrm) * phi

    term = project(g)
    u = term.copy()
    incs = []
    converged = False
    it = 0
    for it in range(1, n_max + 1):
        term = ctx.apply(term)
        if it % reproject_every == 0:
            term = project(term)
        inc = ctx.bl1_norm(term)
        incs.append(inc)
        u = u + term
        if inc < tol:
            converged = True
            break
    tailr = [b / a for a, b in zip(incs[-8:-1], incs[-7:]) if a > 0]
    ratio = float(np.median(tailr)) if tailr else 0.0
    if not converged:
        raise RuntimeError(f"resolvent series did not reach tol={tol} in {n_max} steps "
                           f"(ratio ~ {ratio:.4f})")
    return ResolventResult(u=u, iterations=it, decay_ratio=ratio,
                           last_increment=incs[-1], converged=True)


# ---------------------------------------------------------------------------
# the response formula and its validators
# ---------------------------------------------------------------------------

@dataclass
class ResponseReport:
    formula_value: float
    term1: float
    term2: float
    resolvent_iters: int
    decay_ratio: float
    oracle_conjugation: float | None = None
    fd_estimate: float | None = None
    fd_stderr: float | None = None
    ruelle_lhs: float | None = None
    ruelle_rhs: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self):
        return {k: v for k, v in self.__dict__.items() if k != "diagnostics"} | {
            "diagnostics": self.diagnostics}


def spike_motion_term(ctx, phi, X, A_prime):
    """d/dt of the projection at frozen tower data: the moving-spike term.

    In germ coordinates the branch Jacobians cancel exactly, leaving
    sum_k lam^k int A'(f^k y) Y_k(y) phi_k(y) dy over the level supports;
    no singular quadrature is involved.
    """
    m = ctx.map
    total = 0.0
    for k in range(1, ctx.M + 1):
        y = ctx.grids[k].copy()
        z = np.zeros_like(y)      # Y_j / (f^j)' accumulated
        logp = np.zeros_like(y)
        sgn = np.ones_like(y)
        for _ in range(k):
            d = np.asarray(m.df(y), dtype=float)
            logp += np.log(np.maximum(np.abs(d), 1e-300))
            sgn *= np.sign(d)
            y = np.asarray(m.f(y))
            z += np.asarray(X(y)) * sgn * np.exp(-logp)
        Yk = z * sgn * np.exp(logp)
        total += ctx.lamk(k) * float(np.sum(
            ctx.quad[k] * np.asarray(A_prime(y)) * Yk * phi.values[k]))
    return total


def linear_response(ctx, phi, X, A, A_prime, rtol=1e-10, n_base=4001):
    """The two-term response value for an additive horizontal family at t = 0.

    term1 resolves the ground-level source through the operator (the change
    of the tower fixed point); term2 is the moving-spike term evaluated in
    germ coordinates.  The measure derivative of a probability family kills
    constants exactly, so the spurious mass-derivative mode the truncation
    leaks is projected out: the raw value is recentered by the measured
    total-mass derivative times the observable's invariant mean.

    A and A_prime are the observable and its derivative; phi must be the
    fixed point normalized to nu(phi) = 1.
    """
    src, mean_corr = response_source(ctx, phi, X)
    res = resolvent_apply(ctx, src, phi=phi, tol=rtol)
    mids, wids = spike_partition(ctx, n_base=n_base)
    dens_u = ctx.project_density(res.u, mids)
    dens_phi = ctx.project_density(phi, mids)
    avals = np.asarray(A(mids))
    term1 = float(np.sum(avals * dens_u * wids))
    mass_deriv = float(np.sum(dens_u * wids))
    mean_A = float(np.sum(avals * dens_phi * wids)) / float(np.sum(dens_phi * wids))
    term1 -= mass_deriv * mean_A
    term2 = spike_motion_term(ctx, phi, X, A_prime)
    return ResponseReport(formula_value=term1 + term2, term1=term1, term2=term2,
                          resolvent_iters=res.iterations, decay_ratio=res.decay_ratio,
                          diagnostics={"source_mean_correction": mean_corr,
                                       "mass_derivative_removed": mass_deriv})


def response_oracle_conjugation(family, density, A_prime, n_quad=200_000, pad=1e-9):
    """d/dt int A d((h_t)_* mu) at t = 0 = int A'(x) g(x) density(x) dx.

    Exact for conjugation families; the quadrature avoids the interval ends
    where the density may carry integrable spikes.
    """
    if family.kind != "conjugation":
        raise ValueError("pushforward oracle is exact only for conjugation families")
    g = family.profile
    xs = np.linspace(-1.0 + pad, 1.0 - pad, n_quad)
    vals = np.asarray(A_prime(xs)) * np.asarray(g(xs)) * np.asarray(density(xs))
    return float(np.trapezoid(vals, xs))


def response_fd(family, A, t_step=1e-2, n_orbits=64, n_iter=10**6, burn_in=1000, seed=77):
    """Central difference of seeded long-run averages at +-t_step."""
    mp = family.map_at(t_step)
    mm = family.map_at(-t_step)
    ap, sp = birkhoff_average(mp, A, n_orbits=n_orbits, n_iter=n_iter, burn_in=burn_in, seed=seed)
    am, sm = birkhoff_average(mm, A, n_orbits=n_orbits, n_iter=n_iter, burn_in=burn_in, seed=seed)
    est = (ap - am) / (2.0 * t_step)
    err = math.sqrt(sp * sp + sm * sm) / (2.0 * t_step)
    return est, err


def ruelle_identity_check(ctx, phi, X, A, A_prime, rtol=1e-10, n_base=4001):
    """Both sides of int (A - A o f) dmu' = int A' X phi dx.

    The left side runs the full formula on the observable A - A o f; the
    right side is a direct quadrature against the projected density.
    """
    m = ctx.map
    B = lambda x: np.asarray(A(x)) - np.asarray(A(m.f(x)))
    B_prime = lambda x: np.asarray(A_prime(x)) - np.asarray(A_prime(m.f(x))) * np.asarray(m.df(x))
    rep = linear_response(ctx, phi, X, B, B_prime, rtol=rtol, n_base=n_base)
    rhs = integrate_density(ctx, phi, lambda x: np.asarray(A_prime(x)) * np.asarray(X(x)),
                            n_base=n_base)
    return rep.formula_value, rhs


def susceptibility_partial(m, density, X, A_prime, z, N, n_quad=20001, pad=1e-7):
    """Partial sums S_N(z) = sum_{k<=N} z^k int X * (A o f^k)' dmu (diagnostic).

    Uses int X(x) A'(f^k x) (f^k)'(x) density(x) dx per term; the radius of
    convergence is typically below 1, so no convergence is claimed.
    """
    if abs(z) > 1.0:
        raise ValueError("|z| must be at most 1")
    xs = np.linspace(-1.0 + pad, 1.0 - pad, n_quad)
    w = np.gradient(xs)
    mu = np.asarray(density(xs)) * w * np.asarray(X(xs))
    y = xs.copy()
    dprod = np.ones_like(xs)
    partials = []
    total = 0.0
    for k in range(N + 1):
        if k > 0:
            dprod = dprod * np.asarray(m.df(y))
            y = np.asarray(m.f(y))
        total += (z ** k) * float(np.sum(mu * np.asarray(A_prime(y)) * dprod))
        partials.append(total)
    return np.array(partials)


def bound_period_weight_table(ctx, tower, X, k_range, gamma=None, n_samples=40):
    """Bound-period Taylor-weight table: max over sampled fall-interval points
    of |Y_k(y)| / |(f^k)'(y)| against e^(2 gamma k) / |(f^{k-1})'(c_1)|^{1/2}.

    Bounded implied constants (no growth trend) are the behaviour horizontal
    X should produce; transversal X makes the table grow.
    """
    from .tower import fall_intervals
    gam = tower.params.gamma if gamma is None else gamma
    m = ctx.map
    rows = []
    for k in k_range:
        if not tower.H_delta <= k <= tower.params.M_max:
            continue
        ip, im = fall_intervals(tower, k, n_scan=1200)
        pieces = list(ip) + list(im)
        if not pieces:
            continue
        worst = 0.0
        for lo, hi in pieces:
            ys = np.linspace(lo, hi, max(4, n_samples // max(1, len(pieces))))
            worst = max(worst, float(np.max(np.abs(y_over_deriv(m, X, ys, k)))))
        bound = math.exp(2.0 * gam * k) * math.exp(-0.5 * ctx.orbit.log_deriv(k - 1))
        rows.append({"k": k, "sup_ratio": worst, "bound_scale": bound,
                     "implied_C": worst / bound})
    return rows
