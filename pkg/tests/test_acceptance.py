"""The acceptance gate: one test per headline criterion, at stated tolerances.

Each test prints its criterion's pass/fail line; run with -s to watch them.
The full battery takes several minutes (two of the criteria average over
64 x 10^6 orbit iterations by design).
"""

from towerdyn import acceptance


def _check(rec):
    print()
    print(rec.line())
    assert rec.passed, rec.details


def test_criterion_1_ulam_density():
    _check(acceptance.criterion_1_ulam_density())


def test_criterion_2_commutation():
    _check(acceptance.criterion_2_commutation())


def test_criterion_3_spike_exponents():
    _check(acceptance.criterion_3_spikes())


def test_criterion_4_tce_suite():
    _check(acceptance.criterion_4_tce())


def test_criterion_5_exact_response():
    _check(acceptance.criterion_5_exact_response())


def test_criterion_6_formula_vs_fd():
    _check(acceptance.criterion_6_formula_vs_fd())


def test_criterion_7_key_estimate():
    _check(acceptance.criterion_7_key_estimate())


def test_criterion_8_truncation_trend():
    _check(acceptance.criterion_8_truncation())


def test_criterion_9_divergence_probe():
    _check(acceptance.criterion_9_divergence())


def test_criterion_10_conjugacy_ode():
    _check(acceptance.criterion_10_conjugacy_ode())
