"""The tower extension of a unimodal map.

Levels B_k x {k} follow the critical orbit: a point climbs level by level
while it shadows the orbit of the critical point inside shrinking windows
B_k around c_k, and falls back to the ground floor when it escapes.  The
ground floor is all of [-1, 1]; entering the central interval [-delta, delta]
forces a climb.

Window radii are min(|c_k| * guard_k, e^(-beta*k)), the guard keeping the
critical point outside every level even where the slow-recurrence envelope
of the finite orbit is weaker than the requested gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INF = math.inf


@dataclass
class TowerParams:
    delta: float
    beta1: float
    beta2: float
    gamma: float
    M_max: int
    b_choice: str = "beta2"  # which sandwich interval the levels use

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.gamma > 0.0:
            ok = 1.5 * self.gamma < self.beta1 < self.beta2 < 2.0 * self.gamma
            if not ok:
                raise ValueError("need (3/2) gamma < beta1 < beta2 < 2 gamma when gamma > 0")
        else:
            if not 0.0 < self.beta1 < self.beta2:
                raise ValueError("need 0 < beta1 < beta2 when gamma = 0")
        if self.M_max < 2:
            raise ValueError("M_max must be at least 2")
        if self.b_choice not in ("beta1", "beta2"):
            raise ValueError("b_choice must be 'beta1' or 'beta2'")


@dataclass
class Tower:
    map: object
    orbit: object
    params: TowerParams
    radius: np.ndarray        # operative B_k radii, index k-1, k = 1..M_max+1
    radius_inner: np.ndarray  # beta2-based inner radii, same indexing
    H_delta: int
    diagnostics: dict = field(default_factory=dict)

    def level_interval(self, k):
        """B_k as (lo, hi), clipped to [-1, 1]."""
        ck = self.orbit.point(k)
        r = self.radius[k - 1]
        return max(-1.0, ck - r), min(1.0, ck + r)

    def in_level(self, k, x):
        lo, hi = self.level_interval(k)
        return lo <= x <= hi

    def step(self, state):
        """One tower step; state is (x, k)."""
        x, k = state
        m = self.map
        d = self.params.delta
        if k == 0:
            if not -1.0 <= x <= 1.0:
                raise ValueError("ground-floor state outside [-1, 1]")
            y = float(m.f(x))
            return (y, 1) if abs(x) <= d else (y, 0)
        if not self.in_level(k, x):
            raise ValueError(f"state x = {x} outside level {k}")
        y = float(m.f(x))
        if k + 1 <= self.params.M_max and self.in_level(k + 1, y):
            return (y, k + 1)
        return (y, 0)

    def first_return(self, x, cap=None):
        """Return time of (x, 0) with |x| <= delta to the ground floor.

        The point climbs levels 1, 2, ... and the return time is the step at
        which it falls.  Returns (j, resolved); resolved is False when the
        climb exceeds cap (default M_max), with j the last step examined.
        """
        cap = self.params.M_max if cap is None else cap
        m = self.map
        y = float(m.f(x))
        if not self.in_level(1, y):
            raise ValueError("delta inadmissible: f([-delta, delta]) leaves B_1")
        k = 1
        while k < cap:
            y2 = float(m.f(y))
            if self.in_level(k + 1, y2):
                y, k = y2, k + 1
            else:
                return k + 1, True
        return cap + 1, False

    def trajectory_levels(self, x, horizon):
        """Levels visited by the tower orbit of (x, 0); used as a cross-check."""
        state = (float(x), 0)
        levels = [0]
        for _ in range(horizon):
            try:
                state = self.step(state)
            except ValueError:
                # fell outside M_max window resolution
                state = (float(self.map.f(state[0])), 0)
            levels.append(state[1])
        return levels


def build_tower(m, orbit, params):
    """Construct the tower: level windows, admissibility checks, H(delta).

    H(delta) is the minimal return time to the ground floor over the central
    interval, i.e. the smallest j with a nonempty fall interval I_j.  Points
    of (-delta, delta) climb at least H(delta) - 1 levels before falling.
    """
    if orbit.N < params.M_max + 2:
        raise ValueError("orbit horizon must exceed M_max + 1")
    ks = np.arange(1, params.M_max + 2)
    cks = orbit.c[1:params.M_max + 2]
    guard = np.abs(cks) * (np.exp(-params.gamma * ks) if params.gamma > 0.0 else 0.5)
    r1 = np.exp(-params.beta1 * ks)
    r2 = np.exp(-params.beta2 * ks)
    # keep the critical point outside every window; when the guard binds,
    # shrink both windows proportionally so the inner one stays strictly inside
    shrink = np.minimum(1.0, guard / r1)
    r1 = r1 * shrink
    r2 = r2 * shrink
    radius = r1 if params.b_choice == "beta1" else r2

    tw = Tower(map=m, orbit=orbit, params=params, radius=radius, radius_inner=r2,
               H_delta=0)

    # climb admissibility of delta at the first step
    d = params.delta
    worst = max(abs(float(m.f(x)) - orbit.point(1)) for x in (d, -d, 0.0))
    if worst > radius[0]:
        raise ValueError("delta too large: f([-delta, delta]) not inside B_1")

    # scan both sides for the minimal return time
    s_grid = np.linspace(0.0, 30.0, 1501)
    best = params.M_max + 1
    for side in (+1.0, -1.0):
        xs = side * d * np.exp(-s_grid)
        for x in xs:
            j, ok = tw.first_return(float(x))
            if ok and j < best:
                best = j
            if best <= 2:
                break
    if best > params.M_max:
        raise ValueError("no returns within M_max; enlarge M_max or delta")
    H = best
    if H < 2:
        raise ValueError(f"delta too large: H(delta) = {H} < 2")
    tw.H_delta = H
    tw.diagnostics["min_return_time"] = best
    return tw


# ---------------------------------------------------------------------------
# bound/free itineraries
# ---------------------------------------------------------------------------

@dataclass
class ItinerarySchedule:
    """Times 0 = S_0 <= T_1 < S_1 <= T_2 < ... (math.inf marks trapped/critical).

    T_i starts the i-th shadowing episode (entry into the central interval);
    S_i = T_i + j where j is the episode's return time.  ``unresolved`` is set
    when a climb ran past M_max and the schedule was truncated there.
    """
    T: list
    S: list
    horizon: int
    hit_critical: bool = False
    unresolved: bool = False

    def pairs(self):
        return list(zip(self.T, self.S))


def bound_free_times(tw, x, horizon, crit_tol=1e-12):
    """Compute the shadowing schedule of x over the given horizon."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    m = tw.map
    d = tw.params.delta
    T, S = [], []
    s_prev = 0
    # orbit positions computed on demand
    y = float(x)
    pos = 0

    def advance_to(n):
        nonlocal y, pos
        while pos < n:
            y = float(m.f(y))
            pos += 1

    while s_prev <= horizon:
        # find T_i = first time >= s_prev entering the central interval
        advance_to(s_prev)
        t = None
        yy, p = y, pos
        while p <= horizon:
            if abs(yy) <= d:
                t = p
                break
            yy = float(m.f(yy))
            p += 1
        if t is None:
            T.append(INF)
            S.append(INF)
            return ItinerarySchedule(T=T, S=S, horizon=horizon)
        T.append(t)
        advance_to(t)
        if abs(y) <= crit_tol:
            S.append(INF)
            return ItinerarySchedule(T=T, S=S, horizon=horizon, hit_critical=True)
        j, ok = tw.first_return(y)
        if not ok:
            return ItinerarySchedule(T=T, S=S + [INF], horizon=horizon, unresolved=True)
        S.append(t + j)
        s_prev = t + j

    return ItinerarySchedule(T=T, S=S, horizon=horizon)


def fall_intervals(tw, j, n_scan=4000, refine_iters=60):
    """Maximal subintervals of each side of (-delta, delta) with return time j.

    Endpoints are located by bisection on the discrete return-time predicate.
    Either side's list may be empty.  Non-monotone return-time profiles are
    handled by scanning; anomalously interleaved runs are kept as separate
    intervals.
    """
    if not tw.H_delta <= j <= tw.params.M_max:
        raise ValueError(f"j must lie in [H(delta), M_max] = [{tw.H_delta}, {tw.params.M_max}]")
    d = tw.params.delta
    out = {}
    s_grid = np.linspace(0.0, 34.0, n_scan)
    for side, key in ((+1.0, "+"), (-1.0, "-")):
        xs = side * d * np.exp(-s_grid)
        rts = np.array([tw.first_return(float(x))[0] for x in xs])
        runs = []
        i = 0
        while i < len(xs):
            if rts[i] == j:
                k = i
                while k + 1 < len(xs) and rts[k + 1] == j:
                    k += 1
                e1 = _refine_edge(tw, float(xs[i]), float(xs[i - 1]) if i > 0 else float(xs[i]),
                                  j, refine_iters)
                e2 = _refine_edge(tw, float(xs[k]), float(xs[k + 1]) if k + 1 < len(xs) else float(xs[k]),
                                  j, refine_iters)
                runs.append((min(e1, e2), max(e1, e2)))
                i = k + 1
            else:
                i += 1
        out[key] = _merge(runs)
    return out["+"], out["-"]


def _refine_edge(tw, inside, outside, j, iters):
    """Bisect between a point with return time j and one without."""
    if inside == outside:
        return inside
    a, b = inside, outside
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if tw.first_return(mid)[0] == j:
            a = mid
        else:
            b = mid
    return a


def _merge(runs):
    runs = sorted(runs)
    merged = []
    for lo, hi in runs:
        if merged and lo <= merged[-1][1] + 1e-15:
            merged[-1] = (merged[-1][0], max(hi, merged[-1][1]))
        else:
            merged.append((lo, hi))
    return merged


# ---------------------------------------------------------------------------
# the summability diagnostic
# ---------------------------------------------------------------------------

def key_estimate_check(orbit, gamma, J, tail):
    """Tail sums of inverse postcritical derivative blocks.

    For each 0 <= j <= J computes sum_{k=j+1}^{j+tail} 1/|(f^(k-j))'(c_{j+1})|
    and the implied constant C_j = sum * e^(-gamma*j).  A bounded C_j table is
    the summability property the resummation rests on.
    """
    if orbit.N < J + tail:
        raise ValueError("orbit horizon must reach J + tail")
    logD = np.concatenate(([0.0], orbit.logD))  # logD[k] = log|(f^k)'(c_1)|
    sums = np.empty(J + 1)
    for j in range(J + 1):
        block = logD[j] - logD[j + 1:j + tail + 1]
        sums[j] = float(np.exp(block).sum())
    Cs = sums * np.exp(-gamma * np.arange(J + 1))
    half = (J + 1) // 2
    bounded = Cs[half:].max() <= 2.0 * Cs[:half].max()
    return {"j": np.arange(J + 1), "sum": sums, "C": Cs,
            "max_C": float(Cs.max()), "bounded": bool(bounded)}
