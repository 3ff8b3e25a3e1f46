"""Hyperbolicity and recurrence constants estimated from the critical orbit.

Everything here is an empirical estimate over a finite horizon: the expansion
rate of the postcritical derivative, the slow-recurrence envelope, the
Cesaro statistic of sign-agreement times, and lower-envelope fits of the
expansion constants used by the tower construction.  None of it is a proof;
the reports carry the sample sizes and horizons used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class CriticalOrbit:
    """Postcritical points c_k = f^k(0) with accumulated log-derivatives.

    ``c`` has length N+1 with c[0] = 0.  ``logD[k-1]`` is log|(f^k)'(c_1)| and
    ``signD[k-1]`` the sign of (f^k)'(c_1); ``dist[k-1]`` is |c_k - c| = |c_k|.
    """

    map: object
    N: int
    c: np.ndarray
    logD: np.ndarray
    signD: np.ndarray
    dist: np.ndarray
    preperiodic_at: int | None = None  # smallest k with c_k ~ c_j for some j < k
    preperiodic_to: int | None = None

    def point(self, k):
        return float(self.c[k])

    def log_deriv(self, k):
        """log|(f^k)'(c_1)|; k = 0 gives 0."""
        return 0.0 if k == 0 else float(self.logD[k - 1])

    def block_log_deriv(self, j, k):
        """log|(f^(k-j))'(c_{j+1})| via the cocycle property, 0 <= j < k."""
        return self.log_deriv(k) - self.log_deriv(j)


def critical_orbit(m, N):
    """Iterate the critical point N times, accumulating derivatives in log form."""
    if N < 1:
        raise ValueError("orbit horizon must be at least 1")
    c = np.empty(N + 1)
    c[0] = m.critical_point
    x = c[0]
    for k in range(N):
        x = float(m.f(x))
        c[k + 1] = x
    d = np.asarray(m.df(c[1:]), dtype=float)
    logD = np.cumsum(np.log(np.abs(d)))
    signD = np.cumprod(np.sign(d))
    dist = np.abs(c[1:])

    pre_at = pre_to = None
    # preperiodicity scan; cheap for the horizons we use
    tol = 1e-12
    for k in range(2, N + 1):
        hits = np.nonzero(np.abs(c[1:k] - c[k]) < tol)[0]
        if hits.size:
            pre_at, pre_to = k, int(hits[0]) + 1
            break
    return CriticalOrbit(map=m, N=N, c=c, logD=logD, signD=signD, dist=dist,
                         preperiodic_at=pre_at, preperiodic_to=pre_to)


def estimate_ce(orbit, H0=1):
    """Expansion constant lambda_c = min_{H0<=k<=N} |(f^k)'(c_1)|^{1/k}.

    The condition holds (at this horizon) iff lambda_c > 1.
    """
    if H0 < 1 or H0 > orbit.N:
        raise ValueError("H0 must satisfy 1 <= H0 <= N")
    ks = np.arange(1, orbit.N + 1)
    rates = orbit.logD / ks
    lam = math.exp(float(rates[H0 - 1:].min()))
    return lam, lam > 1.0


def default_h0(orbit, lam):
    """Smallest k with |(f^j)'(c_1)| >= lam^j for every j >= k (mirrors H0's role)."""
    ks = np.arange(1, orbit.N + 1)
    ok = orbit.logD >= ks * math.log(lam) - 1e-12
    bad = np.nonzero(~ok)[0]
    return 1 if bad.size == 0 else int(bad[-1]) + 2


def estimate_bec(orbit, H0, lambda_c):
    """Slow-recurrence envelope gamma and the closeness flags.

    gamma is the smallest exponent with |c_k| >= e^(-gamma k) for all
    H0 <= k <= N.  Flags compare gamma against log(lambda_c)/4, /8, /14.
    """
    if H0 < 1 or H0 > orbit.N:
        raise ValueError("H0 must satisfy 1 <= H0 <= N")
    d = orbit.dist[H0 - 1:]
    if np.all(d < 1e-300):
        raise ValueError("degenerate orbit: critical orbit returns to the critical point")
    ks = np.arange(H0, orbit.N + 1)
    gamma = float(np.max(-np.log(np.maximum(d, 1e-300)) / ks))
    gamma = max(0.0, gamma)
    loglam = math.log(lambda_c) if lambda_c > 1 else 0.0
    flags = {
        "gamma_lt_log_lambda_c_over_4": gamma < loglam / 4.0,
        "gamma_lt_log_lambda_c_over_8": gamma < loglam / 8.0,
        "gamma_lt_log_lambda_c_over_14": gamma < loglam / 14.0,
    }
    return gamma, flags


def sign_agreement_time(orbit, j, j_max=1000):
    """R(c_j): first i >= 1 with sign(c_{j+i}) != sign(c_i), capped at j_max.

    Needs the orbit iterated up to j + j_max.  Returns (value, capped_flag).
    """
    if orbit.N < j + 1:
        raise ValueError("orbit horizon too short")
    s = np.sign(orbit.c)
    top = min(j_max, orbit.N - j)
    for i in range(1, top + 1):
        if s[j + i] != s[i]:
            return i, False
    return top, True


def tsr_statistic(m, mcut, n, j_max=1000, orbit=None):
    """Cesaro statistic (1/n) * sum of R(c_j) over 1 <= j <= n with R >= mcut.

    Non-increasing in mcut for fixed n.  Preperiodic critical orbits make the
    statistic meaningless; those return math.nan with the capped flag set.
    """
    if orbit is None:
        orbit = critical_orbit(m, n + j_max)
    if orbit.preperiodic_at is not None and orbit.preperiodic_at <= n:
        return math.nan, True
    total = 0.0
    capped = False
    for j in range(1, n + 1):
        r, cp = sign_agreement_time(orbit, j, j_max=j_max)
        capped = capped or cp
        if r >= mcut:
            total += r
    return total / n, capped


@dataclass
class EnvelopeFit:
    """Lower-envelope fit |(f^i)'(x)| >= c * rate^i over a finite sample."""
    rate: float
    c: float
    n_points: int
    degenerate: bool = False


def _envelope(points):
    """Fit the largest rate (and matching intercept) below a cloud of
    (i, log|(f^i)'|) points, so the bound holds on the whole sample."""
    if not points:
        raise ValueError("no qualifying orbit segments in sample")
    arr = {}
    for i, v in points:
        arr[i] = min(v, arr.get(i, math.inf))
    its = np.array(sorted(arr))
    vals = np.array([arr[i] for i in its])
    if its.size == 1:
        return EnvelopeFit(rate=1.0, c=math.exp(vals[0] - its[0] * 0.0), n_points=1, degenerate=True)
    # slope: smallest per-step growth witnessed over any window of the envelope
    lograte = min((vals[j] - vals[i]) / (its[j] - its[i])
                  for i in range(len(its)) for j in range(i + 1, len(its)))
    c = float(np.min(vals - its * lograte))
    return EnvelopeFit(rate=math.exp(lograte), c=math.exp(c), n_points=len(points))


def expansion_constants(m, delta, n_samples=400, horizon=60, seed=0):
    """Empirical (sigma, c_delta, C1, rho) for orbits relative to [-delta, delta].

    sigma/c_delta: growth along orbit segments that stay outside the central
    interval.  C1/rho: growth up to the first entry into the central interval.
    Lower-envelope fits over the sample, not proofs.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1.0, 1.0, n_samples)

    free_pts = []   # (i, log|(f^i)'(x)|) while orbit stays outside
    entry_pts = []  # (j, log|(f^j)'(x)|) at first entry
    for x0 in xs:
        x = float(x0)
        logd = 0.0
        if abs(x) <= delta:
            continue
        for i in range(1, horizon + 1):
            d = float(m.df(x))
            if d == 0.0:
                break
            logd += math.log(abs(d))
            x = float(m.f(x))
            if abs(x) <= delta:
                entry_pts.append((i, logd))
                break
            free_pts.append((i, logd))
    free = _envelope(free_pts)
    entry = _envelope(entry_pts) if entry_pts else EnvelopeFit(1.0, 1.0, 0, True)
    c1 = min(entry.c, 1.0)
    return {
        "sigma": free.rate, "c_delta": free.c,
        "C1": c1, "rho": entry.rate,
        "n_free": free.n_points, "n_entry": entry.n_points,
        "degenerate": free.degenerate or entry.degenerate,
    }


def lyapunov(m, x, N):
    """(1/N) log|(f^N)'(x)|, nudging exact critical hits by 1e-15."""
    x = float(x)
    tot = 0.0
    for _ in range(N):
        if x == m.critical_point:
            x += 1e-15
        tot += math.log(abs(float(m.df(x))))
        x = float(m.f(x))
    return tot / N


@dataclass
class HyperbolicityReport:
    lambda_c: float
    H0: int
    holds_ce: bool
    gamma: float
    bec_flags: dict
    tsr_table: dict = field(default_factory=dict)
    expansion: dict = field(default_factory=dict)
    lyapunov_probes: list = field(default_factory=list)
    N: int = 0
    preperiodic_at: int | None = None

    def as_dict(self):
        return {
            "lambda_c": self.lambda_c, "H0": self.H0, "holds_ce": self.holds_ce,
            "gamma": self.gamma, "bec_flags": self.bec_flags,
            "tsr_table": {f"m={m},n={n}": v for (m, n), v in self.tsr_table.items()},
            "expansion": self.expansion,
            "lyapunov_probes": self.lyapunov_probes,
            "N": self.N, "preperiodic_at": self.preperiodic_at,
        }


def analyze_map(m, N=2000, H0=None, delta=0.25, tsr_grid=((5, 500), (10, 500), (20, 500)),
                lyap_points=(0.313, -0.77, 0.52), lyap_iters=20000, seed=0):
    """One-stop hyperbolicity report: expansion onset, slow-recurrence envelope,
    sign-agreement statistics, and empirical expansion fits."""
    orb = critical_orbit(m, N + 1100)
    lam, holds = estimate_ce(orb, H0=1)
    h0 = default_h0(orb, lam) if H0 is None else H0
    lam, holds = estimate_ce(orb, H0=h0)
    gamma, flags = estimate_bec(orb, h0, lam)
    tsr = {}
    for mm, nn in tsr_grid:
        if nn + 1000 <= orb.N:
            tsr[(mm, nn)] = tsr_statistic(m, mm, nn, orbit=orb)[0]
    exp_fit = expansion_constants(m, delta, seed=seed)
    lyap = [(float(x), lyapunov(m, x, lyap_iters)) for x in lyap_points]
    return HyperbolicityReport(
        lambda_c=lam, H0=h0, holds_ce=holds, gamma=gamma, bec_flags=flags,
        tsr_table=tsr, expansion=exp_fit, lyapunov_probes=lyap,
        N=orb.N, preperiodic_at=orb.preperiodic_at,
    ), orb
