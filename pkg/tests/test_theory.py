import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amidlab import theory
from amidlab.theory import DomainErrors, ErrorInstance, SamplerConfig


def one_domain(e, e_hat, p, p_hat):
    return ErrorInstance([DomainErrors(e, e_hat, p, p_hat)])


TWO_PAIR = one_domain([1.0, 0.5], [0.6, 0.5], [0.5, 0.8], [0.25, 0.8])


def brute_expectation(inst, estimator="dr"):
    """Sum the estimator over every observation outcome, weighted by its probability."""
    f = inst.flat()
    total = 0.0
    for bits in itertools.product((0.0, 1.0), repeat=inst.num_pairs):
        o = np.array(bits)
        w = float(np.prod(np.where(o == 1.0, f["p"], 1.0 - f["p"])))
        est = theory.dr_estimate(inst, o) if estimator == "dr" else theory.ips_estimate(inst, o)
        total += w * est
    return total


def test_prediction_inaccuracy_examples():
    assert theory.prediction_inaccuracy(one_domain([0, 0], [0, 0], [1, 1], [1, 1])) == 0.0
    assert theory.prediction_inaccuracy(TWO_PAIR) == pytest.approx(0.75)
    two = ErrorInstance([DomainErrors([0.2], [0], [1], [1]), DomainErrors([0.4, 0.4], [0, 0], [1, 1], [1, 1])])
    assert theory.prediction_inaccuracy(two) == pytest.approx(0.3)


def test_dr_estimate_examples():
    assert theory.dr_estimate(TWO_PAIR, np.array([1.0, 0.0])) == pytest.approx(1.35, abs=1e-15)
    assert theory.dr_estimate(TWO_PAIR, np.zeros(2)) == pytest.approx(0.55, abs=1e-15)
    exact = one_domain([0.3, 0.9], [0.3, 0.9], [0.5, 0.5], [0.2, 0.7])
    for o in ([0, 0], [0, 1], [1, 1]):
        assert theory.dr_estimate(exact, np.array(o, float)) == pytest.approx(0.6)


def test_ips_estimate_examples():
    assert theory.ips_estimate(TWO_PAIR, np.zeros(2)) == 0.0
    assert theory.ips_estimate(TWO_PAIR, np.array([1.0, 0.0])) == pytest.approx(2.0, abs=1e-15)
    full = one_domain([0.2, 0.6], [0, 0], [1, 1], [1, 1])
    assert theory.ips_estimate(full, np.ones(2)) == pytest.approx(0.4)


def test_bias_worked_example():
    assert theory.dr_bias(TWO_PAIR) == pytest.approx(0.2, abs=1e-15)
    assert theory.exact_expectation_dr(TWO_PAIR) == pytest.approx(0.95, abs=1e-15)
    assert brute_expectation(TWO_PAIR) == pytest.approx(0.95, abs=1e-15)
    assert abs(0.75 - theory.enumerate_expectation(TWO_PAIR)) == pytest.approx(0.2, abs=1e-14)


def test_expectation_special_cases(rng):
    inst = theory.sample_instance(rng, SamplerConfig(imputation="exact"))
    assert theory.exact_expectation_dr(inst) == pytest.approx(theory.prediction_inaccuracy(inst), abs=1e-14)
    zero_p = one_domain([0.5, 0.1], [0.2, 0.4], [1e-300, 1e-300], [0.5, 0.5])
    assert theory.exact_expectation_dr(zero_p) == pytest.approx(0.3)


def test_tail_bound_worked_example():
    inst = one_domain([0.4], [0.0], [0.5], [0.25])
    expect = math.sqrt(math.log(40) / 2 * 1.6**2)
    assert theory.tail_bound(inst, 0.05) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(2.1730, abs=1e-4)
    assert theory.tail_bound(one_domain([0.4], [0.4], [0.5], [0.25]), 0.05) == 0.0
    with pytest.raises(ValueError):
        theory.tail_bound(inst, 1.5)


def test_single_pair_hoeffding_matches_stated_bound():
    inst = one_domain([0.4], [0.0], [0.5], [0.25])
    assert theory.hoeffding_bound(inst, 0.05) == pytest.approx(theory.tail_bound(inst, 0.05), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_enumeration_agrees_with_closed_form(seed, n_dom):
    rng = np.random.default_rng(seed)
    inst = theory.sample_instance(rng, SamplerConfig(num_domains=n_dom, max_pairs=5))
    exact = theory.exact_expectation_dr(inst)
    assert theory.enumerate_expectation(inst, "dr") == pytest.approx(exact, abs=1e-12)
    assert theory.enumerate_expectation(inst, "ips") == pytest.approx(theory.exact_expectation_ips(inst), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bias_exact_for_one_domain(seed):
    rng = np.random.default_rng(seed)
    inst = theory.sample_instance(rng, SamplerConfig(num_domains=1, max_pairs=8))
    gap = abs(theory.prediction_inaccuracy(inst) - theory.enumerate_expectation(inst))
    assert theory.dr_bias(inst) == pytest.approx(gap, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bias_bounds_true_gap(seed):
    # per-domain absolute values make the closed form an upper bound across domains
    rng = np.random.default_rng(seed)
    inst = theory.sample_instance(rng)
    gap = abs(theory.prediction_inaccuracy(inst) - theory.exact_expectation_dr(inst))
    assert theory.dr_bias(inst) >= gap - 1e-12


def test_double_robustness(rng):
    for mode in ({"imputation": "exact"}, {"propensity": "exact"}):
        for _ in range(200):
            assert theory.dr_bias(theory.sample_instance(rng, SamplerConfig(**mode))) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dr_bound_below_ips_under_premise(seed):
    inst = theory.sample_instance(np.random.default_rng(seed))
    assert theory.tail_bound(inst, 0.05, "dr") <= theory.tail_bound(inst, 0.05, "ips")


def test_mc_estimates_match_direct_estimator(rng):
    inst = theory.sample_instance(rng)
    u = rng.random((50, inst.num_pairs))
    got = theory.mc_estimates(inst, u)
    p = inst.flat()["p"]
    for row, est in zip(u, got):
        assert est == pytest.approx(theory.dr_estimate(inst, (row < p).astype(float)), abs=1e-13)


def test_enumeration_refuses_large_instances(rng):
    inst = theory.sample_instance(rng, SamplerConfig(num_domains=3, min_pairs=8, max_pairs=8))
    with pytest.raises(ValueError):
        theory.enumerate_expectation(inst)


def test_instance_roundtrip(tmp_path, rng):
    inst = theory.sample_instance(rng)
    theory.save_instance(inst, tmp_path)
    back = theory.load_instance(tmp_path)
    for a, b in zip(inst.domains, back.domains):
        for name in theory.MATRICES:
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_premise_gating_skips_adversarial_pairs():
    report = theory.verify_theory(SamplerConfig(imputation="adversarial"), trials=10_000, n_instances=30,
                                  n_coverage_instances=1)
    check_d = report.checks[3]
    assert check_d.passed and check_d.skipped > 0


def test_exact_imputation_has_no_variance(rng):
    inst = theory.sample_instance(rng, SamplerConfig(imputation="exact"))
    est = theory.mc_estimates(inst, rng.random((100, inst.num_pairs)))
    assert np.ptp(est) <= 1e-14
    report = theory.verify_theory(SamplerConfig(imputation="exact"), trials=10_000, n_instances=30,
                                  n_coverage_instances=2)
    assert report.checks[1].passed
