import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from cellwait.analytic import (
    AccessEvent,
    CoverageMethod,
    CoverageResult,
    DegenerateSupport,
    WrongRegime,
    access_probabilities,
    baseline_coverage,
    capacity,
    capacity_from_coverage,
    closed_form_at_area,
    conditional_coverage,
    coverage,
    coverage_closed_form,
    coverage_quadrature,
    distance_cdf,
    distance_pdf,
    theta,
)
from cellwait.model import AccessScenario, NetworkConfig, beta_w
from cellwait.numerics import DomainError, integrate


def test_access_probabilities_examples(reference):
    assert access_probabilities(reference, AccessScenario(r_th=0.0, w=10.0)) == (0.0, 0.0, 1.0)

    v = 0.5 * math.pi
    ia, da, oa = access_probabilities(reference, AccessScenario(r_th=10.0, w=0.0))
    assert ia == pytest.approx(1 - math.exp(-0.1 * v))
    assert da == 0.0
    assert oa == pytest.approx(math.exp(-0.1 * v))

    probs = access_probabilities(reference, AccessScenario(r_th=10.0, w=10.0))
    assert probs.ia == pytest.approx(0.1453, abs=1e-3)
    assert probs.da == pytest.approx(0.5049, abs=1e-3)
    assert probs.oa == pytest.approx(0.3497, abs=1e-3)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 200), st.floats(0, 500))
def test_access_probabilities_sum_to_one(a, b, r_th, w):
    cfg = NetworkConfig(p_A=a, p_I=(1 - a) * b, p_S=1 - a - (1 - a) * b)
    probs = access_probabilities(cfg, AccessScenario(r_th=r_th, w=w))
    assert all(0.0 <= p <= 1.0 for p in probs)
    assert math.fsum(probs) == pytest.approx(1.0, abs=1e-15)


def test_distance_pdf_da_is_uniform_in_area(reference):
    assert distance_pdf(reference, AccessScenario(r_th=10.0), AccessEvent.DA, 5.0) == pytest.approx(0.1)


@pytest.mark.parametrize("p_I", [0.02, 0.1, 0.5])
@pytest.mark.parametrize("r_th", [1.0, 10.0, 40.0])
def test_distance_pdfs_integrate_to_one(p_I, r_th):
    cfg = NetworkConfig().with_fractions(0.3, p_I)
    scen = AccessScenario(r_th=r_th)
    for event, a, b in [(AccessEvent.IA, 0.0, r_th), (AccessEvent.DA, 0.0, r_th),
                        (AccessEvent.OA, r_th, math.inf)]:
        total, _ = integrate(lambda r: float(distance_pdf(cfg, scen, event, r)), a, b)
        assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("event", list(AccessEvent))
def test_distance_cdf_matches_pdf(reference, event):
    scen = AccessScenario(r_th=10.0)
    lower = scen.r_th if event is AccessEvent.OA else 0.0
    for r in (lower + 0.5, lower + 3.0, lower + 7.5):
        area, _ = integrate(lambda x: float(distance_pdf(reference, scen, event, x)), lower, r)
        assert float(distance_cdf(reference, scen, event, r)) == pytest.approx(area, rel=1e-8)
    assert float(distance_cdf(reference, scen, event, lower)) == pytest.approx(0.0, abs=1e-15)


def test_distance_laws_support_errors(reference):
    scen = AccessScenario(r_th=10.0)
    with pytest.raises(DomainError):
        distance_pdf(reference, scen, AccessEvent.IA, 11.0)
    with pytest.raises(DomainError):
        distance_pdf(reference, scen, AccessEvent.OA, 9.0)
    with pytest.raises(DomainError):
        distance_cdf(reference, scen, AccessEvent.DA, -1.0)
    with pytest.raises(DegenerateSupport):
        distance_pdf(reference, AccessScenario(r_th=0.0), AccessEvent.DA, 0.0)
    with pytest.raises(DegenerateSupport):
        distance_pdf(reference.with_fractions(0.5, 0.0), scen, AccessEvent.OA, 12.0)


def test_conditional_coverage_values():
    cfg = NetworkConfig().with_fractions(0.1, 0.45).noiseless()
    assert conditional_coverage(cfg, 0.0, 1.0) == 1.0
    assert conditional_coverage(cfg, 10.0, 1.0) == pytest.approx(0.7814, abs=1e-4)
    for r in (1.0, 7.0, 25.0):
        for gamma in (0.1, 1.0, 10.0):
            eq17 = math.exp(-cfg.p_A * cfg.rho_f * r ** 2 * math.sqrt(gamma) * math.pi ** 2 / 2)
            assert conditional_coverage(cfg, r, gamma) == pytest.approx(eq17, rel=1e-12)
            assert conditional_coverage(cfg, r, gamma) == pytest.approx(
                math.exp(-theta(cfg, gamma) * cfg.rho_f * math.pi * r ** 2), rel=1e-12)


def test_conditional_coverage_is_monotone(reference):
    r = np.linspace(0, 60, 61)
    assert np.all(np.diff(conditional_coverage(reference, r, 1.0)) <= 0)
    gammas = np.logspace(-3, 3, 30)
    values = [conditional_coverage(reference, 10.0, g) for g in gammas]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_closed_form_matches_quadrature(noiseless):
    for gamma_db in (-10, -5, 0, 5, 10):
        gamma = 10 ** (gamma_db / 10)
        for r_th in (0.0, 2.0, 5.0, 10.0, 20.0):
            for w in (0.0, 1.0, 10.0, 50.0):
                scen = AccessScenario(r_th=r_th, w=w)
                exact = coverage_closed_form(noiseless, scen, gamma)
                quad = coverage_quadrature(noiseless, scen, gamma)
                assert exact.method is CoverageMethod.CLOSED_FORM
                assert quad.method is CoverageMethod.QUADRATURE
                assert quad.value == pytest.approx(exact.value, rel=1e-6)


def test_zero_threshold_gives_nearest_idle_cell_result(noiseless):
    scen = AccessScenario(r_th=0.0, w=10.0)
    base = baseline_coverage(noiseless, 1.0)
    assert base == pytest.approx(0.1 / (0.1 + 0.45 * math.pi / 2))
    assert coverage_quadrature(noiseless, scen, 1.0).value == pytest.approx(base, rel=1e-8)
    assert coverage_closed_form(noiseless, scen, 1.0).value == base


def test_closed_form_limits(noiseless):
    base = baseline_coverage(noiseless, 1.0)
    tiny = coverage_closed_form(noiseless, AccessScenario(r_th=1e-5, w=10.0), 1.0).value
    huge = coverage_closed_form(noiseless, AccessScenario(r_th=1e4, w=10.0), 1.0).value
    assert tiny == pytest.approx(base, rel=1e-8)
    assert huge == pytest.approx(base, rel=1e-12)
    # continuous across the series switch
    b0, bw, th = 0.1, beta_w(noiseless, 10.0), theta(noiseless, 1.0)
    below = closed_form_at_area(b0, bw, th, 0.99e-6 / th)
    above = closed_form_at_area(b0, bw, th, 1.01e-6 / th)
    assert below == pytest.approx(above, abs=1e-12)


def test_coverage_tends_to_one_for_vanishing_threshold(noiseless, scenario):
    assert coverage_quadrature(noiseless, scenario, 1e-12).value == pytest.approx(1.0, abs=1e-4)


def test_delayed_access_improves_coverage(noiseless, scenario):
    assert coverage(noiseless, scenario, 1.0).value > 1.2 * baseline_coverage(noiseless, 1.0)


@given(st.floats(0.01, 0.98), st.floats(0, 1), st.floats(0, 100), st.floats(0.01, 100),
       st.floats(1e-3, 1e3))
def test_delayed_access_never_hurts(p_I, split, r_th, w, gamma):
    p_A = (1 - p_I) * split
    cfg = NetworkConfig(p_A=p_A, p_I=p_I, p_S=1 - p_I - p_A, sigma2=0.0)
    assume(beta_w(cfg, w) > cfg.p_I)
    value = coverage_closed_form(cfg, AccessScenario(r_th=r_th, w=w), gamma).value
    assert value >= baseline_coverage(cfg, gamma) - 1e-12


def test_coverage_nonincreasing_in_gamma(reference, noiseless, scenario):
    gammas = np.logspace(-2, 2, 15)
    for cfg in (reference, noiseless):
        values = [coverage(cfg, scenario, g).value for g in gammas]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


def test_noise_lowers_coverage(reference, noiseless, scenario):
    assert coverage(reference, scenario, 1.0).value < coverage(noiseless, scenario, 1.0).value


def test_closed_form_refuses_noisy_config(reference, scenario):
    with pytest.raises(WrongRegime):
        coverage_closed_form(reference, scenario, 1.0)
    assert coverage(reference, scenario, 1.0).method is CoverageMethod.QUADRATURE


def test_coverage_rejects_nonpositive_threshold(noiseless, scenario):
    with pytest.raises(DomainError):
        coverage_closed_form(noiseless, scenario, 0.0)
    with pytest.raises(DomainError):
        coverage_quadrature(noiseless, scenario, -1.0)


def test_coverage_result_validation():
    with pytest.raises(DomainError):
        CoverageResult(1.5, CoverageMethod.QUADRATURE)
    with pytest.raises(DomainError):
        CoverageResult(0.5, CoverageMethod.QUADRATURE, -1e-3)


@pytest.mark.parametrize("s", [0.5, 1.0, 10.0, 1000.0])
def test_capacity_of_step_coverage(s):
    value, _ = capacity_from_coverage(lambda g: 1.0 if g < s else 0.0, breakpoints=[s])
    assert value == pytest.approx(math.log2(1 + s), rel=1e-8)


def test_capacity_nondecreasing_in_w(noiseless):
    values = [capacity(noiseless, AccessScenario(r_th=10.0, w=w)) for w in (0, 1, 5, 10, 50)]
    assert all(v > 0 for v in values)
    assert all(a <= b * (1 + 1e-9) for a, b in zip(values, values[1:]))


def test_capacity_at_zero_delay_ignores_threshold(noiseless):
    a = capacity(noiseless, AccessScenario(r_th=0.0, w=0.0))
    b = capacity(noiseless, AccessScenario(r_th=25.0, w=0.0))
    assert a == pytest.approx(b, rel=1e-9)


@pytest.mark.slow
def test_noisy_capacity_by_nested_quadrature(reference, noiseless, scenario):
    noisy = capacity(reference, scenario)
    assert 0 < noisy < capacity(noiseless, scenario)
