"""Smooth-cutoff transfer operator on the tower, and the invariant density.

Functions on the tower are sequences (psi_k) of grid-sampled functions, each
living in the germ coordinate near the critical point: psi_k is the mass
that entered the central interval k steps ago and has been climbing since,
parameterized by where it entered, not by where it is now.  The operator
never composes with the dynamics while climbing; dynamics enter only when
mass falls to the ground floor (through the k+1 step inverse branches) and
in the projection to a density on the interval.

The smooth cutoffs xi_k decide, continuously in the entry point, which
fraction of the level-k mass keeps climbing and which falls, removing the
artificial discontinuities a sharp level edge would create.  The level
functions therefore stay smooth; the square-root spikes of the invariant
density are generated purely by the projection's fold Jacobians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def smoothstep(u):
    """C^2 ramp 10u^3 - 15u^4 + 6u^5 on [0, 1], clamped outside."""
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (10.0 - 15.0 * u + 6.0 * u * u)


# ---------------------------------------------------------------------------
# inverse branches along the critical orbit
# ---------------------------------------------------------------------------

def _branch_quadratic(m, orbit, k, side, x):
    """f^{-k}_side(x) for the quadratic family, by deviation-tracked steps.

    Walks the branch backward along the critical orbit keeping u_i = w_i - c_i
    (the deviation from the postcritical point) instead of w_i itself, so the
    final germ value side*sqrt(-u_1/a) keeps full relative precision even when
    the deviations sit far below the rounding floor of the w_i.  Entries of x
    outside the branch image come back NaN.

    Returns (y, log|(f^k)'(y)|).
    """
    a = m.a
    c = orbit.c
    x = np.asarray(x, dtype=float)
    u = x - c[k]
    logd = np.zeros_like(x)
    ok = np.isfinite(u)
    for i in range(k, 1, -1):
        d_i = (a - 1.0 - c[i]) / a
        e_i = d_i - c[i - 1] ** 2          # tiny; the cancellation happens on constants
        rad = d_i - u / a
        ok &= rad >= 0.0
        w_tilde = math.copysign(1.0, c[i - 1]) * np.sqrt(np.maximum(rad, 0.0))
        denom = w_tilde + c[i - 1]
        ok &= np.abs(denom) > 1e-300
        u = (e_i - u / a) / np.where(np.abs(denom) > 1e-300, denom, 1.0)
        w = c[i - 1] + u
        logd = logd + np.log(np.maximum(np.abs(2.0 * a * w), 1e-300))
    rad = -u / a                           # c_1 = a - 1 exactly in this family
    ok &= rad >= 0.0
    y = side * np.sqrt(np.maximum(rad, 0.0))
    logd = logd + np.log(np.maximum(np.abs(2.0 * a * y), 1e-300))
    return np.where(ok, y, np.nan), logd


def _branch_generic(m, orbit, k, side, x, iters=60):
    """Bisection fallback per backward step, for maps without closed preimages."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = x.copy()
    logd = np.zeros_like(x)
    for i in range(k, 0, -1):
        center_side = math.copysign(1.0, orbit.c[i - 1]) if i > 1 else side
        lo = np.zeros_like(w) if center_side > 0 else -np.ones_like(w)
        hi = np.ones_like(w) if center_side > 0 else np.zeros_like(w)
        dec = center_side > 0  # f decreasing right of c, increasing left
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            fm = np.asarray(m.f(mid))
            go_right = (fm > w) if dec else (fm < w)
            lo = np.where(go_right, mid, lo)
            hi = np.where(go_right, hi, mid)
        w = 0.5 * (lo + hi)
        logd = logd + np.log(np.maximum(np.abs(np.asarray(m.df(w))), 1e-300))
    return w, logd


def inverse_branch(m, k, side, x, orbit=None):
    """y = f^{-k}_side(x): preimage through the monotone piece of f^k adjacent
    to the critical point on the given side (+1 or -1); NaN off the image."""
    from .recurrence import critical_orbit
    if orbit is None:
        orbit = critical_orbit(m, max(k + 1, 2))
    branch = _branch_quadratic if m.is_quadratic else _branch_generic
    y, _ = branch(m, orbit, k, float(side), x)
    return y


def _iterate_scalar(m, x, n):
    z = float(x)
    for _ in range(n):
        z = float(m.f(z))
    return z


def _preimage_extent(m, j, ck_j, r, side, y_max, img_sign):
    """First escape radius: the largest y such that the germ deviation
    img_sign*(f^j(side*y') - c_j) stays <= r for all y' up to y.

    The deviation grows like |Q| y^2 until the orbit escapes the shadowing
    window; beyond that it decorrelates and may dip below r again, so the
    crossing must be bracketed from below (walk up by doubling), never by
    plain bisection over (0, y_max].  Returns y_max if nothing escapes.
    """
    def dev(y):
        return (_iterate_scalar(m, side * y, j) - ck_j) * img_sign

    y = y_max * 1e-15
    if dev(y) > r:
        return 0.0
    while y < y_max and dev(y) <= r:
        y *= 2.0
    if y >= y_max and dev(y_max) <= r:
        return y_max
    lo, hi = y / 2.0, min(y, y_max)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if dev(mid) <= r:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------

@dataclass
class CutoffProfile:
    """Climb fraction at one level: 1 on the plateau V, 0 outside W, C^2 ramps."""
    k: int
    W: tuple
    V: tuple
    trivial: bool = False   # identically 1: no point of this level can fall

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.trivial:
            out = np.ones_like(x)
            return float(out) if out.ndim == 0 else out
        wlo, whi = self.W
        vlo, vhi = self.V
        out = np.ones_like(x)
        out = np.where(x < vlo, smoothstep((x - wlo) / max(vlo - wlo, 1e-300)), out)
        out = np.where(x > vhi, smoothstep((whi - x) / max(whi - vhi, 1e-300)), out)
        return float(out) if out.ndim == 0 else out


def _fold_sign(orbit, k):
    """Side of c_k onto which f^k folds a neighbourhood of c.

    f^k(y) - c_k ~ (f^{k-1})'(c_1) * f''(0)/2 * y^2 near 0 and f'' < 0, so the
    image side is minus the sign of (f^{k-1})'(c_1).
    """
    s = 1.0 if k == 1 else float(orbit.signD[k - 2])
    return -s


def make_cutoffs(tower, M):
    """Cutoff profiles for levels 0..M.

    Level 0: support [-delta, delta] with plateau half of it.  Level k >= 1:
    support is the (k+1)-step branch preimage of B_{k+1} and the plateau the
    preimage of the inner window of level k+1; a level whose window preimages
    swallow the whole central interval cannot lose mass and gets the trivial
    profile.
    """
    m, orbit, par = tower.map, tower.orbit, tower.params
    d = par.delta
    out = [CutoffProfile(k=0, W=(-d, d), V=(-d / 2.0, d / 2.0))]
    for k in range(1, M + 1):
        r_out = float(tower.radius[k])        # radius index k holds level k+1
        r_in = float(tower.radius_inner[k])
        if not r_in < r_out:
            raise ValueError(
                f"level {k + 1}: inner window not strictly inside the support window; "
                "build the operator tower with b_choice='beta1'")
        sgn = _fold_sign(orbit, k + 1)
        ck1 = orbit.point(k + 1)
        wp = _preimage_extent(m, k + 1, ck1, r_out, +1.0, d, sgn)
        wm = _preimage_extent(m, k + 1, ck1, r_out, -1.0, d, sgn)
        if wp >= d and wm >= d:
            out.append(CutoffProfile(k=k, W=(-d, d), V=(-d, d), trivial=True))
            continue
        vp = _preimage_extent(m, k + 1, ck1, r_in, +1.0, d, sgn)
        vm = _preimage_extent(m, k + 1, ck1, r_in, -1.0, d, sgn)
        out.append(CutoffProfile(k=k, W=(-wm, wp), V=(-vm, vp)))
    return out


# ---------------------------------------------------------------------------
# tower functions
# ---------------------------------------------------------------------------

class TowerFunction:
    """Per-level grid samples; levels above the context's truncation are zero."""

    __slots__ = ("values",)

    def __init__(self, values):
        self.values = values

    def copy(self):
        return TowerFunction([v.copy() for v in self.values])

    def __add__(self, other):
        return TowerFunction([a + b for a, b in zip(self.values, other.values)])

    def __sub__(self, other):
        return TowerFunction([a - b for a, b in zip(self.values, other.values)])

    def __mul__(self, s):
        return TowerFunction([a * float(s) for a in self.values])

    __rmul__ = __mul__

    @property
    def top_level(self):
        return len(self.values) - 1


def truncate(psi, M):
    """Zero every level above M (levels at or below M untouched)."""
    out = psi.copy()
    for k in range(M + 1, len(out.values)):
        out.values[k][:] = 0.0
    return out


# ---------------------------------------------------------------------------
# the operator context
# ---------------------------------------------------------------------------

def default_lambda(lambda_c, gamma):
    """Level weight per the admissible window.

    gamma > 0: the window is (1, min(e^gamma, sqrt(lambda_c) e^{-4 gamma}));
    its geometric mean (sqrt of the upper bound) is returned.  gamma = 0:
    min(1.2, lambda_c^{1/4})."""
    if gamma > 0.0:
        upper = min(math.exp(gamma), math.sqrt(lambda_c) * math.exp(-4.0 * gamma))
        if upper <= 1.0:
            raise ValueError("no admissible level weight: gamma too large for lambda_c")
        return math.sqrt(upper)
    return min(1.2, lambda_c ** 0.25)


@dataclass
class OperatorContext:
    map: object
    orbit: object
    tower: object
    cutoffs: list
    lam: float
    M: int
    grids: list                 # node arrays per level 0..M
    quad: list                  # trapezoid weights per level
    supports: list              # (lo, hi) per level (germ coordinate)
    proj_images: dict           # (k, side) -> (xlo, xhi): image of f^k on the support
    fall_cache: list            # (j, idx, li, fr, w) pieces of the level-0 sum
    climb_cache: list           # per target level k: (li, fr, xi_at_nodes)
    theta0: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    _matrix: object = None
    _nu_M_vec: object = None
    _kappa_adj: float = 0.0

    # ---- measures and norms ---------------------------------------------
    def lamk(self, k):
        return self.lam ** k

    def nu(self, psi):
        """Integral against the reference measure (level weight lam^k x Lebesgue)."""
        return sum(self.lamk(k) * float(self.quad[k] @ psi.values[k])
                   for k in range(self.M + 1))

    def bl1_norm(self, psi):
        return sum(self.lamk(k) * float(self.quad[k] @ np.abs(psi.values[k]))
                   for k in range(self.M + 1))

    def bh11_norm(self, psi):
        """Sum over levels of the total variation of the grid samples."""
        return sum(float(np.abs(np.diff(psi.values[k])).sum()) for k in range(self.M + 1))

    # ---- constructors -----------------------------------------------------
    def zeros(self):
        return TowerFunction([np.zeros_like(x) for x in self.grids])

    def from_level0(self, func, normalize=True):
        psi = self.zeros()
        psi.values[0][:] = np.asarray(func(self.grids[0]), dtype=float)
        psi.values[0][0] = psi.values[0][-1] = 0.0
        if normalize:
            s = self.nu(psi)
            if s != 0.0:
                psi.values[0] /= s
        return psi

    def random_smooth(self, seed, n_bumps=3, levels=None):
        """Deterministic random smooth tower function (Gaussian bumps per level)."""
        rng = np.random.default_rng(seed)
        psi = self.zeros()
        levels = range(self.M + 1) if levels is None else levels
        for k in levels:
            xs = self.grids[k]
            lo, hi = xs[0], xs[-1]
            if hi - lo <= 0:
                continue
            v = np.zeros_like(xs)
            for _ in range(n_bumps):
                mu = rng.uniform(lo, hi)
                s = rng.uniform(0.08, 0.35) * (hi - lo)
                v += rng.uniform(-1.0, 1.0) * np.exp(-0.5 * ((xs - mu) / s) ** 2)
            # taper to zero at the support edges
            v *= smoothstep((xs - lo) / (0.08 * (hi - lo))) * smoothstep((hi - xs) / (0.08 * (hi - lo)))
            psi.values[k][:] = v / max(1, k * k)
        return psi

    # ---- the operator ------------------------------------------------------
    def apply(self, psi):
        """One application of the truncated smooth-cutoff transfer operator.

        Levels >= 2 climb by exact slice-copy (all germ grids are windows of
        one shared graded grid, so the climb never resamples); the 0 -> 1
        climb and the falls carry split interpolation weights, conservatively
        rescaled at build time so each source node passes on exactly its
        share of the reference measure.
        """
        out = self.zeros()
        for k in range(1, self.M + 1):
            entry = self.climb_cache[k]
            src = psi.values[k - 1]
            if entry[0] == "slice":
                _, off, w = entry
                out.values[k][:] = w * src[off:off + len(w)]
            else:
                out.values[k][:] = entry[1] @ src
        acc = out.values[0]
        for (j, rows, cols, wts) in self.fall_cache:
            src = psi.values[j]
            np.add.at(acc, rows, wts * src[cols])
        acc[0] = acc[-1] = 0.0
        return out

    def _branch(self, k, side, x):
        branch = _branch_quadratic if self.map.is_quadratic else _branch_generic
        return branch(self.map, self.orbit, k, side, x)

    # ---- projection to a density on the interval ---------------------------
    def project_density(self, psi, x):
        """Density at x: level 0 plus every level's two fold branches.

        Branch-image membership automatically realizes the one-sided indicator
        at each postcritical point (the fold only covers one side of c_k).
        """
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x).astype(float)
        out = np.interp(x, self.grids[0], psi.values[0], left=0.0, right=0.0)
        for k in range(1, self.M + 1):
            for side in (+1.0, -1.0):
                seg = self.proj_images.get((k, side))
                if seg is None:
                    continue
                xlo, xhi = seg
                sel = (x >= xlo) & (x <= xhi)
                if not sel.any():
                    continue
                y, logd = self._branch(k, side, x[sel])
                vals = np.interp(y, self.grids[k], psi.values[k], left=0.0, right=0.0)
                good = np.isfinite(y)
                w = np.exp(k * math.log(self.lam) - logd)
                out[sel] += np.where(good, vals * w, 0.0)
        return float(out[0]) if scalar else out

    def level_projection(self, psi, k, x):
        """Only level k's contribution to the projected density (spike analysis)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        for side in (+1.0, -1.0):
            seg = self.proj_images.get((k, side))
            if seg is None:
                continue
            xlo, xhi = seg
            sel = (x >= xlo) & (x <= xhi)
            if not sel.any():
                continue
            y, logd = self._branch(k, side, x[sel])
            vals = np.interp(y, self.grids[k], psi.values[k], left=0.0, right=0.0)
            good = np.isfinite(y)
            out[sel] += np.where(good, vals * np.exp(k * math.log(self.lam) - logd), 0.0)
        return out

    def chi_side(self, k):
        """-1 if the level-k spike extends left of c_k (fold onto [-1, c_k]), else +1."""
        return _fold_sign(self.orbit, k)

    # ---- assembled matrix and the adjoint fixed point ----------------------
    def offsets(self):
        off = [0]
        for k in range(self.M + 1):
            off.append(off[-1] + len(self.grids[k]))
        return off

    def matrix(self):
        """Sparse matrix of the discretized operator (assembled lazily)."""
        if self._matrix is not None:
            return self._matrix
        from scipy import sparse
        off = self.offsets()
        rows, cols, data = [], [], []
        for k in range(1, self.M + 1):
            entry = self.climb_cache[k]
            r = np.arange(len(self.grids[k])) + off[k]
            if entry[0] == "slice":
                _, o, w = entry
                rows.append(r)
                cols.append(off[k - 1] + o + np.arange(len(w)))
                data.append(w)
            else:
                coo = entry[1].tocoo()
                rows.append(off[k] + coo.row)
                cols.append(off[k - 1] + coo.col)
                data.append(coo.data)
        for (j, rws, cls, wts) in self.fall_cache:
            rows.append(off[0] + rws)
            cols.append(off[j] + cls)
            data.append(wts)
        n = off[-1]
        self._matrix = sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()
        return self._matrix

    def nu_weights(self):
        """Quadrature weights of the reference measure as one flat vector."""
        return np.concatenate([self.lamk(k) * self.quad[k] for k in range(self.M + 1)])

    def flatten(self, psi):
        return np.concatenate([psi.values[k] for k in range(self.M + 1)])

    def unflatten(self, vec):
        out = self.zeros()
        off = self.offsets()
        for k in range(self.M + 1):
            out.values[k][:] = vec[off[k]:off[k + 1]]
        return out

    def adjoint_weights(self, tol=1e-12, max_iter=5000):
        """Fixed functional of the adjoint (lazy): coefficients eta with
        eta . (L psi) = kappa * (eta . psi), normalized so eta(1) = nu(1)."""
        if self._nu_M_vec is not None:
            return self._nu_M_vec, self._kappa_adj
        mat = self.matrix().T.tocsr()
        eta = self.nu_weights().copy()
        ones = np.ones_like(eta)
        kap = 1.0
        for _ in range(max_iter):
            nxt = mat @ eta
            kap = float(nxt @ ones / (eta @ ones))
            nxt /= max(abs(kap), 1e-300)
            if np.abs(nxt - eta).sum() < tol * np.abs(eta).sum():
                eta = nxt
                break
            eta = nxt
        ref = self.nu_weights() @ ones
        eta *= ref / float(eta @ ones)
        self._nu_M_vec = eta
        self._kappa_adj = kap
        return eta, kap

    def nu_M(self, psi):
        """The adjoint-fixed functional applied to a tower function."""
        eta, _ = self.adjoint_weights()
        return float(eta @ self.flatten(psi))


# ---------------------------------------------------------------------------
# context builder
# ---------------------------------------------------------------------------

def build_operator(m, orbit, tower, lam=None, M=15, n0=4096, level_density=None,
                   fall_oversample=None, sigma=None, rho=None):
    """Assemble grids, cutoffs, and the cached branch geometry for the operator.

    The tower must carry beta1-sized windows (b_choice='beta1') so the cutoff
    plateaus are strictly interior.  ``lam`` defaults to the admissible-window
    rule of default_lambda.  sigma/rho (measured ground-floor expansion rates)
    only feed the recorded contraction-scale diagnostic.
    """
    par = tower.params
    if par.b_choice != "beta1":
        raise ValueError("operator needs the wider beta1 windows: rebuild tower with b_choice='beta1'")
    if orbit.N < M + 3:
        raise ValueError("orbit horizon must exceed M + 2")
    ks = np.arange(1, M + 2)
    rates = orbit.logD[:M + 1] / ks
    lambda_c = math.exp(float(rates.min()))
    if lam is None:
        lam = default_lambda(lambda_c, par.gamma)
    if par.gamma > 0.0:
        if not (1.0 < lam < math.exp(par.gamma)
                and math.exp(4.0 * par.gamma) * lam < math.sqrt(lambda_c)):
            raise ValueError("level weight violates the admissible window for gamma > 0")
    else:
        if not 1.0 < lam < math.sqrt(lambda_c) / 1.05:
            raise ValueError("level weight violates the admissible window for gamma = 0")

    cutoffs = make_cutoffs(tower, M)
    d = par.delta
    h0 = orbit_h0(orbit)
    kb = max(2, h0)

    # support intervals: running intersection of the branch preimages of the
    # windows B_j over h0 <= j <= k, active for k above the base levels
    supports = [(-1.0, 1.0)]
    pp, pm = d, d
    next_j = h0
    for k in range(1, M + 1):
        if k > kb:
            while next_j <= k:
                sgn = _fold_sign(orbit, next_j)
                r = float(tower.radius[next_j - 1])
                pp = min(pp, _preimage_extent(m, next_j, orbit.point(next_j), r, +1.0, d, sgn))
                pm = min(pm, _preimage_extent(m, next_j, orbit.point(next_j), r, -1.0, d, sgn))
                next_j += 1
        supports.append((-pm, pp))

    # one shared graded germ grid for levels >= 1: log-spaced toward 0, denser
    # than the ground grid everywhere, so climbs are exact slice copies and
    # germ functions are never resampled while climbing
    h_ground = 2.0 / (n0 - 1)
    rho_e = level_density if level_density is not None else max(64.0, d / h_ground)
    if fall_oversample is None:
        # deposit quadrature error scales like h / oversample^2; growing the
        # oversampling with the grid keeps refinement convergence superlinear
        fall_oversample = max(12, int(round(48 * n0 / 4096.0)))
    p_min = min(min(-lo, hi) for lo, hi in supports[1:])
    x_min = max(p_min / 25.0, d * 1e-14)
    n_side = int(math.ceil(rho_e * math.log(d / x_min))) + 1
    pos = d * np.exp(-np.linspace(0.0, math.log(d / x_min), n_side))
    master = np.concatenate((-pos, [0.0], pos[::-1]))
    master.sort()

    grids, quad, slice_lo = [], [], [0]
    xs0 = np.linspace(-1.0, 1.0, n0)
    grids.append(xs0)
    w0g = np.full(n0, xs0[1] - xs0[0])
    w0g[0] *= 0.5
    w0g[-1] *= 0.5
    quad.append(w0g)
    for k in range(1, M + 1):
        lo, hi = supports[k]
        a = int(np.searchsorted(master, lo, side="left"))
        b = int(np.searchsorted(master, hi, side="right"))
        xs = master[a:b]
        if len(xs) < 8:
            raise ValueError(f"level {k} support unresolved by the germ grid")
        grids.append(xs)
        qw = np.empty(len(xs))
        qw[1:-1] = 0.5 * (xs[2:] - xs[:-2])
        qw[0] = 0.5 * (xs[1] - xs[0])
        qw[-1] = 0.5 * (xs[-1] - xs[-2])
        quad.append(qw)
        slice_lo.append(a)

    ctx = OperatorContext(map=m, orbit=orbit, tower=tower, cutoffs=cutoffs, lam=lam,
                          M=M, grids=grids, quad=quad, supports=supports,
                          proj_images={}, fall_cache=[], climb_cache=[None])

    # climb caches: 0 -> 1 is the conservative P1 projection of xi_0 * psi_0
    # onto the germ grid; higher climbs are slice copies within the shared grid
    from scipy import sparse
    xs1 = grids[1]
    Mgs = _p1_mass_matrix(xs1, xs0)
    xi0_g = np.asarray(cutoffs[0](xs0), dtype=float)
    R = sparse.diags(1.0 / (lam * quad[1])) @ Mgs @ sparse.diags(xi0_g)
    ctx.climb_cache.append(("matrix", R.tocsr()))
    for k in range(2, M + 1):
        off = slice_lo[k] - slice_lo[k - 1]
        xi = np.asarray(cutoffs[k - 1](grids[k]), dtype=float)
        ctx.climb_cache.append(("slice", off, xi / lam))

    # projection images: f^k over each side of the support
    for k in range(1, M + 1):
        lo, hi = supports[k]
        for side, edge in ((+1.0, hi), (-1.0, -lo)):
            if edge <= 0:
                continue
            img_in = orbit.point(k)
            img_out = _iterate_scalar(m, side * edge, k)
            xlo, xhi = min(img_in, img_out), max(img_in, img_out)
            ctx.proj_images[(k, side)] = (xlo, xhi)

    # fall caches: push each level's escaping mass forward onto the ground grid.
    # For every germ sample t with local measure dy: a mass
    # lam^j (1 - xi_j(t)) psi_j(t) dy is deposited at x = f^{j+1}(t), split
    # linearly between the two bracketing ground nodes and divided by their
    # quadrature weights (cloud-in-cell).  Exactly conservative per source
    # node; samples are refined so image gaps stay below the ground spacing.
    xs0 = grids[0]
    h_g = xs0[1] - xs0[0]
    q0 = quad[0]
    for j in range(0, M + 1):
        xi = cutoffs[j]
        if xi.trivial:
            continue
        xs_j = grids[j]
        lo_s, hi_s = supports[j]
        for side in (+1.0, -1.0):
            v_edge = xi.V[1] if side > 0 else -xi.V[0]
            d_edge = hi_s if side > 0 else -lo_s
            if d_edge <= v_edge * (1 + 1e-12):
                continue
            sel = np.nonzero((side * xs_j >= v_edge) & (side * xs_j <= d_edge))[0]
            if sel.size < 2:
                continue
            ts, cols, hatw, dys = _supersample(m, xs_j, sel, j + 1, h_g / fall_oversample)
            imgs = ts.copy()
            for _ in range(j + 1):
                imgs = np.asarray(m.f(imgs))
            one_minus_xi = 1.0 - np.asarray(xi(ts), dtype=float)
            mass = (lam ** j) * one_minus_xi * dys * hatw
            # deposit at the ground grid
            gi = np.clip(np.searchsorted(xs0, imgs) - 1, 0, len(xs0) - 2)
            gf = np.clip((imgs - xs0[gi]) / h_g, 0.0, 1.0)
            # boundary rows stay empty: lump their share onto the neighbour
            g_lo, w_lo = gi.copy(), mass * (1.0 - gf)
            g_hi, w_hi = gi + 1, mass * gf
            g_lo[g_lo == 0] = 1
            g_hi[g_hi == len(xs0) - 1] = len(xs0) - 2
            r_all = np.concatenate((g_lo, g_hi))
            c_all = np.concatenate((cols, cols))
            w_all = np.concatenate((w_lo, w_hi)) / q0[r_all]
            keep = w_all != 0.0
            if keep.any():
                ctx.fall_cache.append((j, r_all[keep], c_all[keep], w_all[keep]))

    _rescale_conservative(ctx)

    theta_parts = [math.sqrt(lambda_c) / (math.exp(4.0 * par.gamma) * lam), lam]
    if sigma is not None:
        theta_parts.append(sigma)
    if rho is not None:
        theta_parts.append(rho)
    ctx.theta0 = min(theta_parts)
    ctx.diagnostics.update({"lambda_c": lambda_c, "lambda": lam, "H_delta": tower.H_delta,
                            "theta0": ctx.theta0, "n_nodes": sum(len(g) for g in grids)})
    return ctx


def _p1_mass_matrix(t_nodes, s_nodes):
    """Sparse overlap matrix of two piecewise-linear hat bases on the line:
    entry (r, i) = integral of hat_r(t_nodes) * hat_i(s_nodes)."""
    from scipy import sparse
    pts = np.union1d(t_nodes, s_nodes)
    lo = max(t_nodes[0], s_nodes[0])
    hi = min(t_nodes[-1], s_nodes[-1])
    pts = pts[(pts >= lo) & (pts <= hi)]
    rows, cols, data = [], [], []
    a, b = pts[:-1], pts[1:]
    mids = 0.5 * (a + b)
    wid = b - a

    def hats(nodes, x):
        """Index and weights of the two hats covering each x."""
        li = np.clip(np.searchsorted(nodes, x) - 1, 0, len(nodes) - 2)
        fr = np.clip((x - nodes[li]) / (nodes[li + 1] - nodes[li]), 0.0, 1.0)
        return li, fr

    # Simpson on each segment is exact for the quadratic integrand
    for xq, wq in ((a, wid / 6.0), (mids, 4.0 * wid / 6.0), (b, wid / 6.0)):
        tl, tf = hats(t_nodes, xq)
        sl, sf = hats(s_nodes, xq)
        for tw, tn in ((1.0 - tf, tl), (tf, tl + 1)):
            for sw, sn in ((1.0 - sf, sl), (sf, sl + 1)):
                rows.append(tn)
                cols.append(sn)
                data.append(wq * tw * sw)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.concatenate(data)
    keep = data != 0.0
    return sparse.coo_matrix((data[keep], (rows[keep], cols[keep])),
                             shape=(len(t_nodes), len(s_nodes))).tocsr()


def _supersample(m, xs_j, sel, steps, h_target):
    """Refine germ cells so consecutive image points are at most h_target apart.

    Returns flat arrays (ts, cols, hatw, dys): midpoint samples with their
    hat weights onto the two bracketing germ nodes and their cell measures
    (each sample appears twice, once per hat).
    """
    nodes = xs_j[sel]
    imgs = nodes.copy()
    for _ in range(steps):
        imgs = np.asarray(m.f(imgs))
    gaps = np.abs(np.diff(imgs))
    n_sub = np.clip(np.ceil(gaps / h_target).astype(np.int64), 1, 4096)
    total = int(n_sub.sum())
    cell = np.repeat(np.arange(len(nodes) - 1), n_sub)
    starts = np.concatenate(([0], np.cumsum(n_sub)))[:-1]
    within = np.arange(total) - np.repeat(starts, n_sub)
    a = nodes[cell]
    b = nodes[cell + 1]
    th = (within + 0.5) / n_sub[cell]
    t = a + (b - a) * th
    dy = np.abs(b - a) / n_sub[cell]
    ts = np.concatenate((t, t))
    cols = np.concatenate((sel[cell], sel[cell + 1])).astype(int)
    hatw = np.concatenate((1.0 - th, th))
    dys = np.concatenate((dy, dy))
    return ts, cols, hatw, dys


def _rescale_conservative(ctx, cap=(0.25, 4.0)):
    """Match each source node's discrete outflow to its continuum share.

    Climbs between germ levels are exact slice copies.  The remaining pieces
    carry O(h^2) quadrature wobble: the ground columns (climb into the germ
    grid plus the one-step fall must move their full quadrature mass) and the
    germ fall deposits (which must move exactly the (1 - xi) share).  Each
    source node's weights are rescaled to the exact share; factors are capped
    and the worst raw deviation recorded.
    """
    M = ctx.M
    n_grd = len(ctx.grids[0])
    q0 = ctx.quad[0]
    # received fall mass per source node
    fall_got = [np.zeros(len(g)) for g in ctx.grids]
    for (j, rws, cls, wts) in ctx.fall_cache:
        np.add.at(fall_got[j], cls, wts * q0[rws])

    # ground columns: climb 0 -> 1 plus fall share
    R = ctx.climb_cache[1][1]
    outflow0 = fall_got[0] + np.asarray(R.T @ (ctx.lamk(1) * ctx.quad[1])).ravel()
    s0 = np.ones(n_grd)
    act = outflow0 > 0.0
    act[0] = act[-1] = False
    s0[act] = np.clip(q0[act] / outflow0[act], cap[0], cap[1])
    raw_dev = float(np.max(np.abs(outflow0[act] / q0[act] - 1.0), initial=0.0))

    scales = [s0]
    unresolved = 0.0
    for j in range(1, M + 1):
        xs = ctx.grids[j]
        one_minus_xi = 1.0 - np.asarray(ctx.cutoffs[j](xs), dtype=float)
        target = ctx.lamk(j) * ctx.quad[j] * one_minus_xi
        got = fall_got[j]
        s = np.ones(len(xs))
        act = (got > 0.0) & (target > 0.0)
        s[act] = np.clip(target[act] / got[act], cap[0], cap[1])
        if act.any():
            raw_dev = max(raw_dev, float(np.max(np.abs(got[act] / target[act] - 1.0))))
        unresolved += float(np.sum(target[(target > 0.0) & ~(got > 0.0)]))
        scales.append(s)

    from scipy import sparse
    ctx.climb_cache[1] = ("matrix", (R @ sparse.diags(s0)).tocsr())
    ctx.fall_cache = [(j, rws, cls, wts * scales[j][cls])
                      for (j, rws, cls, wts) in ctx.fall_cache]
    ctx.diagnostics["raw_outflow_dev"] = raw_dev
    ctx.diagnostics["unresolved_fall_mass"] = unresolved
    return ctx


def orbit_h0(orbit):
    """Smallest usable expansion onset: first k from which the rate stays positive."""
    ks = np.arange(1, orbit.N + 1)
    pos = orbit.logD / ks > 0
    if pos.all():
        return 1
    bad = np.nonzero(~pos)[0]
    return int(bad[-1]) + 2


# ---------------------------------------------------------------------------
# fixed point, commutation, spikes
# ---------------------------------------------------------------------------

@dataclass
class FixedPointResult:
    phi: TowerFunction
    kappa: float
    iterations: int
    gap_estimate: float
    increments: list
    clipped: int
    converged: bool


def fixed_point(ctx, tol=1e-10, max_iter=3000, start=None):
    """Power iteration for the leading eigenfunction of the truncated operator.

    The iterate is renormalized to unit reference-measure integral each step;
    the per-step factor converges to the leading eigenvalue kappa_M (slightly
    below 1, reflecting mass that climbs past the truncation).  Negative
    values below -1e-12 are clipped to zero and counted.
    """
    psi = ctx.from_level0(lambda x: (1.0 - x * x) ** 2) if start is None else start.copy()
    kappa = 1.0
    incs = []
    clipped = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        nxt = ctx.apply(psi)
        kappa = ctx.nu(nxt)
        if kappa <= 0:
            raise RuntimeError("operator lost positivity or mass during iteration")
        for k in range(ctx.M + 1):
            v = nxt.values[k]
            bad = v < -1e-12
            if bad.any():
                clipped += int(bad.sum())
                v[bad] = 0.0
        nxt = nxt * (1.0 / ctx.nu(nxt))
        inc = ctx.bl1_norm(nxt - psi)
        incs.append(inc)
        psi = nxt
        if inc < tol:
            converged = True
            break
    tail = [b / a for a, b in zip(incs[-6:-1], incs[-5:]) if a > 0]
    gap = float(np.median(tail)) if tail else 0.0
    return FixedPointResult(phi=psi, kappa=float(kappa), iterations=it,
                            gap_estimate=gap, increments=incs, clipped=clipped,
                            converged=converged)


def cutoff_derivative_report(ctx):
    """Measured sup|d^j/dx^j (xi_k o f^{-(k+1)})| against the e^(2 j gamma k) scale.

    The composed function lives on the image annulus of the ramp region
    around c_{k+1}; finite differences on a fine grid there.  Purely a
    diagnostic: the targets are the smoothness scales the window exponents
    aim for, and nothing is tuned from them.
    """
    rows = []
    gam = ctx.tower.params.gamma
    for k in range(1, ctx.M + 1):
        xi = ctx.cutoffs[k]
        if xi.trivial:
            continue
        img_a = _iterate_scalar(ctx.map, xi.V[1], k + 1)
        img_b = _iterate_scalar(ctx.map, xi.W[1], k + 1)
        xlo, xhi = min(img_a, img_b), max(img_a, img_b)
        if not xhi - xlo > 0:
            continue
        xs = np.linspace(xlo, xhi, 2001)[1:-1]
        y, _ = ctx._branch(k + 1, +1.0, xs)
        good = np.isfinite(y)
        vals = np.where(good, xi(np.where(good, y, 0.0)), 0.0)
        h = xs[1] - xs[0]
        d1 = np.gradient(vals, h)
        d2 = np.gradient(d1, h)
        tgt1 = math.exp(2 * gam * k) if gam > 0 else 1.0
        rows.append({"k": k, "sup_d1": float(np.max(np.abs(d1))),
                     "sup_d2": float(np.max(np.abs(d2))),
                     "target_d1": tgt1, "target_d2": tgt1 ** 2})
    return rows


def classical_transfer(m, dens, x):
    """(L g)(x) = sum_{f(y)=x} g(y)/|f'(y)| for the quadratic family."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    c1 = m.a - 1.0
    real = x <= c1
    for side in (+1.0, -1.0):
        y = m.preimage(np.where(real, x, c1), side)
        d = np.abs(m.df(y))
        vals = dens(y)
        out += np.where(real & (d > 0), vals / np.maximum(d, 1e-300), 0.0)
    return out


def commutation_residual(ctx, psi, n_grid=2048, exclude=1e-3):
    """Grid L1 distance between the classical operator applied to the projected
    density and the projection of the tower operator's output.

    Neighbourhoods of the spike points c_1..c_{M+1} (and the endpoint fold
    image) are excluded; the identity holds analytically, so the residual
    measures interpolation and quadrature error only.
    """
    xs = np.linspace(-1.0, 1.0, n_grid + 1)[1:-1]
    mask = np.ones_like(xs, dtype=bool)
    for k in range(1, ctx.M + 2):
        mask &= np.abs(xs - ctx.orbit.point(k)) > exclude
    lhs = classical_transfer(ctx.map, lambda y: ctx.project_density(psi, y), xs[mask])
    rhs = ctx.project_density(ctx.apply(psi), xs[mask])
    h = xs[1] - xs[0]
    return float(np.sum(np.abs(lhs - rhs)) * h)


def spike_exponent(ctx, psi, k, window=None, n_pts=25):
    """Log-log slope of level k's projected contribution against |x - c_k|.

    Sampled one-sidedly on the fold side of c_k, over distances inside the
    branch image; the fold Jacobian makes the slope -1/2.
    """
    seg_p = ctx.proj_images.get((k, +1.0))
    seg_m = ctx.proj_images.get((k, -1.0))
    if seg_p is None and seg_m is None:
        raise ValueError(f"level {k} projects nowhere")
    ck = ctx.orbit.point(k)
    side = ctx.chi_side(k)
    seg = seg_p if seg_p is not None else seg_m
    span = (seg[1] - seg[0])
    if window is None:
        window = 0.3 * span
    window = min(window, 0.9 * span)
    dist = np.geomspace(max(1e-9, 1e-5 * window), window, n_pts)
    x = ck + side * dist
    g = ctx.level_projection(psi, k, x)
    good = g > 0
    if good.sum() < max(5, n_pts // 3):
        raise ValueError(f"level {k} carries no usable mass in the window")
    slope = np.polyfit(np.log(dist[good]), np.log(g[good]), 1)[0]
    return float(slope)
