#!/usr/bin/env python3
# =============================================================================
# Hyperbolicity diagnostics of a quadratic interval map, straight from the
# critical orbit: postcritical expansion, slow-recurrence envelope, the
# Cesaro statistic of sign-agreement times, and empirical expansion constants.
# =============================================================================

import math

import numpy as np

from towerdyn import (make_quadratic, validate_s_unimodal, critical_orbit,
                      estimate_ce, estimate_bec, tsr_statistic,
                      expansion_constants, lyapunov)
from towerdyn.recurrence import default_h0

for a in (2.0, 1.9):
    print(f"\n=== map a = {a} " + "=" * 40)
    m = make_quadratic(a)
    rep = validate_s_unimodal(m, 20_000)
    print("structure valid:", rep.passed)

    orb = critical_orbit(m, 3000)
    print("postcritical start:", np.array2string(orb.c[1:7], precision=4))
    if orb.preperiodic_to is not None:
        print(f"orbit is eventually periodic from index {orb.preperiodic_to}")

    lam, holds = estimate_ce(orb, 1)
    h0 = default_h0(orb, lam)
    print(f"expansion constant lambda_c = {lam:.6f} (holds: {holds}, onset H0 = {h0})")

    gam, flags = estimate_bec(orb, h0, lam)
    print(f"slow-recurrence envelope gamma = {gam:.4f}")
    for name, ok in flags.items():
        print(f"   {name}: {ok}")

    if orb.preperiodic_at is None:
        print("sign-agreement Cesaro statistic (cutoff m, horizon n=1000):")
        for mcut in (2, 5, 10, 20):
            val, capped = tsr_statistic(m, mcut, 1000, j_max=400, orbit=orb)
            print(f"   m = {mcut:>2}: {val:.4f}{' (capped)' if capped else ''}")

    cons = expansion_constants(m, 0.2, n_samples=400, horizon=60)
    print("empirical expansion fits (delta = 0.2):")
    print(f"   outside runs:  |(f^i)'| >= {cons['c_delta']:.3g} * {cons['sigma']:.4f}^i")
    print(f"   first entries: |(f^j)'| >= {cons['C1']:.3g} * {cons['rho']:.4f}^j")

    probes = [lyapunov(m, x, 20_000) for x in (0.3137, -0.77, 0.521)]
    print("orbit growth rates at probe points:", [f"{v:.4f}" for v in probes])
    if a == 2.0:
        print(f"   (closed form for a = 2: log 2 = {math.log(2):.4f})")
