"""Independent estimators: coarse-grained transfer matrices, orbit averages,
and the closed-form density of the full quadratic map.

These never touch the tower machinery; they exist to cross-check it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def closed_form_ulam_density(x):
    """Invariant density 1/(pi sqrt(1-x^2)) of the a = 2 map, |x| < 1."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) >= 1.0):
        raise ValueError("closed-form density defined for |x| < 1")
    out = 1.0 / (math.pi * np.sqrt(1.0 - x * x))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# coarse-grained transfer matrix
# ---------------------------------------------------------------------------

@dataclass
class UlamModel:
    n_bins: int
    edges: np.ndarray
    weights: np.ndarray        # row-stochastic: weights[i, j] = P(bin i -> bin j)
    stationary: np.ndarray     # probability vector over bins
    density_values: np.ndarray  # piecewise-constant density at bin midpoints

    def density(self, x):
        """Piecewise-constant stationary density evaluated at x."""
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.n_bins - 1)
        out = self.density_values[idx]
        return float(out) if out.ndim == 0 else out


def ulam_matrix(m, n_bins=1024, samples_per_bin=64, tol=1e-13, max_iter=20000):
    """Bin-to-bin transition weights of the map on [-1, 1] and their fixed density.

    Weights are the fraction of stratified midpoint samples of each bin landing
    in each target bin; the stationary vector comes from power iteration on the
    transpose.  Deterministic by construction.
    """
    if n_bins < 16:
        raise ValueError("n_bins must be at least 16")
    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    width = 2.0 / n_bins
    offs = (np.arange(samples_per_bin) + 0.5) / samples_per_bin * width
    rows = np.repeat(np.arange(n_bins), samples_per_bin)
    pts = edges[rows] + np.tile(offs, n_bins)
    img = np.asarray(m.f(pts))
    cols = np.clip(np.searchsorted(edges, img, side="right") - 1, 0, n_bins - 1)
    weights = np.zeros((n_bins, n_bins))
    np.add.at(weights, (rows, cols), 1.0 / samples_per_bin)

    pi = np.full(n_bins, 1.0 / n_bins)
    wt = weights.T.copy()
    for _ in range(max_iter):
        nxt = wt @ pi
        s = nxt.sum()
        if s <= 0:
            raise RuntimeError("transition matrix lost mass")
        nxt /= s
        if np.abs(nxt - pi).sum() < tol:
            pi = nxt
            break
        pi = nxt
    dens = pi / width
    return UlamModel(n_bins=n_bins, edges=edges, weights=weights,
                     stationary=pi, density_values=dens)


# ---------------------------------------------------------------------------
# orbit averages
# ---------------------------------------------------------------------------

def splitmix64(seed, n):
    """Deterministic 64-bit stream: z += 0x9E3779B97F4A7C15;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9; z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
    return z ^ (z >> 31).  Documented so other implementations can reproduce runs.
    """
    mask = (1 << 64) - 1
    out = np.empty(n, dtype=np.uint64)
    z = seed & mask
    for i in range(n):
        z = (z + 0x9E3779B97F4A7C15) & mask
        w = z
        w = ((w ^ (w >> 30)) * 0xBF58476D1CE4E5B9) & mask
        w = ((w ^ (w >> 27)) * 0x94D049BB133111EB) & mask
        out[i] = (w ^ (w >> 31)) & mask
    return out


def seeded_starts(seed, n):
    """n starting points in (-1, 1) from the splitmix stream."""
    u = splitmix64(seed, n).astype(np.float64) / 2.0 ** 64
    return 2.0 * u - 1.0


def birkhoff_average(m, A, n_orbits=64, n_iter=100_000, burn_in=1000, seed=1234):
    """Time average of A along n_orbits seeded orbits, with batch-means stderr.

    Orbits advance in lockstep as one vector; conjugated maps provide an exact
    internal-coordinate iteration path which is used when present.
    """
    if n_orbits < 2:
        raise ValueError("need at least 2 orbits for a batch stderr")
    x = seeded_starts(seed, n_orbits)
    if m.fast_iter is not None:
        to_int, step_int, from_int = m.fast_iter
        u = to_int(x)
        for _ in range(burn_in):
            u = step_int(u)
        acc = np.zeros(n_orbits)
        for _ in range(n_iter):
            u = step_int(u)
            acc += A(from_int(u))
    else:
        for _ in range(burn_in):
            x = m.f(x)
        acc = np.zeros(n_orbits)
        for _ in range(n_iter):
            x = m.f(x)
            acc += A(x)
    per_orbit = acc / n_iter
    mean = float(per_orbit.mean())
    stderr = float(per_orbit.std(ddof=1) / math.sqrt(n_orbits))
    return mean, stderr
