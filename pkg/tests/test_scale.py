import math

import numpy as np
import pytest
from scipy import integrate

import conftest as ref
from virgin_island import scale as sc
from virgin_island.coeffs import LogisticFeller
from virgin_island.errors import DomainError, PreconditionError


def feller_laplace_exponent(z):
    # E^x exp(-z int Y dt) = exp(-c x) for dY = -Y dt + sqrt(2Y) dB
    return (math.sqrt(1 + 4 * z) - 1) / 2


# ---------------------------------------------------------------------------
# scale objects

def test_feller_scale_closed_form(feller):
    y = np.array([1e-6, 0.01, 0.5, 1.0, 3.0, 10.0])
    np.testing.assert_allclose(feller.s(y), np.exp(y), rtol=1e-9)
    np.testing.assert_allclose(feller.S(y), np.expm1(y), rtol=1e-9)
    np.testing.assert_allclose(feller.speed(y), np.exp(-y) / y, rtol=1e-9)
    assert float(feller.S(0.0)) == 0.0


def test_scale_beyond_top(feller):
    assert np.isinf(feller.S(feller.top * 2))
    assert feller.speed(feller.top * 2) == 0.0
    with pytest.raises(DomainError):
        feller.S(-1.0)


def test_hitting_probability(feller):
    assert sc.hitting_probability(feller, 1.0, 0.0, 2.0) == pytest.approx(ref.FELLER_HIT_2_FROM_1, rel=1e-9)
    assert sc.hitting_probability(feller, 0.5, 0.5, 2.0) == 0.0
    assert sc.hitting_probability(feller, 2.0, 0.5, 2.0) == 1.0
    with pytest.raises(DomainError):
        sc.hitting_probability(feller, 3.0, 0.0, 2.0)


# ---------------------------------------------------------------------------
# criterion and Green functionals

@pytest.mark.parametrize("kappa,beta", [(1.0, 1.0), (2.0, 0.5), (0.3, 3.0)])
def test_critical_feller_family(kappa, beta):
    t = sc.build_scale_table(LogisticFeller(kappa, 0, 0, beta))
    assert sc.extinction_criterion(t) == pytest.approx(1.0, abs=1e-6)
    assert sc.classify(sc.extinction_criterion(t))[0] is sc.Regime.CRITICAL


def test_theta_values(logistic, pure_competition):
    assert sc.extinction_criterion(logistic) == pytest.approx(ref.THETA_LOGISTIC, rel=1e-9)
    assert sc.extinction_criterion(pure_competition) == pytest.approx(ref.THETA_PURE_COMPETITION, rel=1e-9)
    theta, err = sc.extinction_criterion(logistic, return_error=True)
    assert 0 <= err < 1e-6


def test_classify():
    assert sc.classify(1.5)[0] is sc.Regime.SUPERCRITICAL
    assert sc.classify(0.5)[0] is sc.Regime.SUBCRITICAL
    assert sc.classify(1 + 1e-8)[0] is sc.Regime.CRITICAL
    assert sc.classify(1.01, error=0.01)[0] is sc.Regime.CRITICAL


def test_feller_occupation_is_linear(feller):
    # E^x int a(Y) dt = x for the critical Feller diffusion
    for x in (0.1, 1.0, 4.0):
        assert sc.green_occupation(feller, x, math.inf, feller.coeffs.a) == pytest.approx(x, rel=1e-8)
    np.testing.assert_allclose(sc.w_functional(feller, np.array([0.5, 2.0]), feller.coeffs.a), [0.5, 2.0],
                               rtol=1e-8)


def test_green_on_finite_interval(feller):
    # E^y T_0 ^ T_b for dY = -Y dt + sqrt(2Y) dB from direct quadrature of the Green kernel
    y, b = 0.7, 2.0
    S = np.expm1
    m = lambda z: math.exp(-z) / z
    ref_val = (integrate.quad(lambda z: S(z) * (S(b) - S(y)) / S(b) * m(z), 0, y)[0]
               + integrate.quad(lambda z: S(y) * (S(b) - S(z)) / S(b) * m(z), y, b)[0])
    one = lambda z: np.ones_like(np.asarray(z, dtype=float))
    assert sc.green_occupation(feller, y, b, one) == pytest.approx(ref_val, rel=1e-8)
    assert sc.green_occupation(feller, 0.0, b, one) == 0.0


def test_pure_competition_green(pure_competition):
    a = pure_competition.coeffs.a
    assert sc.w_functional(pure_competition, 1.0, a) == pytest.approx(ref.PC_W_A_AT_1, rel=1e-8)
    assert sc.expected_total_area(pure_competition, 1.0) == pytest.approx(ref.PC_AREA_AT_1, rel=1e-8)
    assert sc.q_functional(pure_competition, a, 2) == pytest.approx(ref.PC_SECOND_MOMENT, rel=1e-8)
    assert sc.q_second_moment_ordered(pure_competition, a) == pytest.approx(ref.PC_SECOND_MOMENT, rel=1e-8)
    assert sc.q_functional(pure_competition, a) == pytest.approx(ref.THETA_PURE_COMPETITION, rel=1e-9)


def test_expected_area_infinite_unless_subcritical(feller, logistic):
    assert math.isinf(sc.expected_total_area(feller, 1.0))
    assert math.isinf(sc.expected_total_area(logistic, 1.0))


def test_critical_time_average(feller, logistic):
    # w_id'(0) = 1, w_a(x) = x and int w_a m = 1 for the critical Feller diffusion
    assert sc.critical_time_average(feller, 2.0) == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(PreconditionError):
        sc.critical_time_average(logistic, 1.0)


def test_thinned_q_functional_by_quadrature(feller):
    eps = 0.1
    S = np.expm1
    lost = integrate.quad(lambda z: math.exp(-z) * (1 - S(z) / S(eps)) ** 2, 0, eps)[0]
    assert sc.thinned_q_functional(feller, feller.coeffs.a, eps) == pytest.approx(1 - lost, rel=1e-9)


def test_thinned_area_tends_to_area(pure_competition):
    vals = [sc.thinned_expected_total_area(pure_competition, 1.0, e) for e in (0.2, 0.1, 0.05, 0.02)]
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] < ref.PC_AREA_AT_1
    assert ref.PC_AREA_AT_1 - vals[-1] < 0.05


# ---------------------------------------------------------------------------
# boundary-value problems

def test_feller_k_and_survival_function(feller):
    for z in (0.3, 2.0):
        c = feller_laplace_exponent(z)
        assert sc.k_function(feller, z) == pytest.approx(c, rel=1e-5)
        phi = sc.survival_function(feller, z)
        np.testing.assert_allclose(phi(np.array([0.5, 1.0, 3.0])), -np.expm1(-c * np.array([0.5, 1.0, 3.0])),
                                   rtol=1e-5)
    assert sc.k_function(feller, 0.0) == 0.0
    with pytest.raises(DomainError):
        sc.k_function(feller, -1.0)


def test_k_slope_is_theta(logistic):
    assert sc.k_slope_at_zero(logistic) == pytest.approx(ref.THETA_LOGISTIC, rel=1e-6)


def test_logistic_fixed_point_and_survival(logistic):
    q = sc.fixed_point_q(logistic)
    assert q == pytest.approx(ref.LOGISTIC_Q, rel=1e-6)
    assert sc.k_function(logistic, q) == pytest.approx(q, rel=1e-9)
    assert sc.survival_probability(logistic, 1.0, q) == pytest.approx(ref.LOGISTIC_SURVIVAL_AT_1, rel=1e-6)


def test_no_survival_unless_supercritical(feller, pure_competition):
    assert sc.fixed_point_q(feller) == 0.0
    assert sc.survival_probability(pure_competition, 1.0) == 0.0


def test_resolvent_and_alpha(logistic):
    assert sc.resolvent_flux(logistic, 0.0) == pytest.approx(ref.THETA_LOGISTIC, abs=1e-6)
    assert sc.resolvent_flux(logistic, 0.1) == pytest.approx(2.8811885425911488, rel=1e-6)
    alpha, err = sc.malthusian_alpha(logistic, return_error=True)
    assert alpha == pytest.approx(ref.LOGISTIC_ALPHA, rel=1e-6)
    assert abs(sc.resolvent_flux(logistic, alpha) - 1) < 1e-6
    assert err < 1e-6


def test_alpha_requires_supercritical(pure_competition):
    with pytest.raises(PreconditionError):
        sc.malthusian_alpha(pure_competition)


def test_thinned_quantities_approach_limits(logistic):
    alphas = [sc.thinned_malthusian_alpha(logistic, e) for e in (0.2, 0.1, 0.05)]
    qs = [sc.thinned_fixed_point_q(logistic, e) for e in (0.2, 0.1, 0.05)]
    assert np.all(np.diff(alphas) > 0) and alphas[-1] < ref.LOGISTIC_ALPHA
    assert np.all(np.diff(qs) > 0) and qs[-1] < ref.LOGISTIC_Q
    assert ref.LOGISTIC_ALPHA - alphas[-1] < 0.05


# ---------------------------------------------------------------------------
# report

def test_analyze_reports(feller, logistic, pure_competition):
    sup = sc.analyze(logistic)
    assert sup.regime is sc.Regime.SUPERCRITICAL
    assert sup.alpha == pytest.approx(ref.LOGISTIC_ALPHA, rel=1e-6)
    assert sup.to_dict()["expected_area"] == "inf"
    crit = sc.analyze(feller)
    assert crit.regime is sc.Regime.CRITICAL and crit.critical_ratio == pytest.approx(1.0, rel=1e-6)
    sub = sc.analyze(pure_competition)
    assert sub.regime is sc.Regime.SUBCRITICAL
    assert sub.expected_area == pytest.approx(ref.PC_AREA_AT_1, rel=1e-8)
    assert sub.alpha is None and sub.q == 0.0
