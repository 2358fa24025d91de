import math

import numpy as np
import pytest

import conftest as ref
from virgin_island import excursion as ex
from virgin_island import scale as sc
from virgin_island.diffusion import Plain
from virgin_island.errors import DomainError


def test_up_drift_closed_form(feller):
    assert float(ex.up_drift(feller, np.array([1.0]))[0]) == pytest.approx(ref.FELLER_UP_DRIFT_AT_1, rel=1e-8)
    with pytest.raises(DomainError):
        ex.up_drift(feller, np.array([0.0]))


def test_up_step_reflects():
    y = ex.up_step(sc.build_scale_table(ref.feller_coeffs()), np.array([1e-3]), 1e-3, np.array([-50.0]))
    assert y[0] > 0


def test_single_excursion_shape(feller):
    e = ex.sample_excursion(feller, 0.2, 1e-3, 40.0, stream=(1, 0))
    assert e.path.values[0] == pytest.approx(0.2 * ex.START_FACTOR)
    k = int(round(e.t_eps / e.path.dt))
    assert e.path.values[k] == 0.2
    assert np.all(e.path.values[:k] < 0.2)
    assert e.weight == pytest.approx(1.0 / math.expm1(0.2))
    assert not e.truncated and e.path.values[-1] == 0.0


def test_maximum_law(feller):
    # given that an excursion reaches eps, it reaches b with probability S(eps)/S(b)
    es = ex.sample_excursions(feller, 0.2, 1e-3, 40.0, 4000, seed=3)
    b = 0.8
    p = float(np.mean(es.maxima >= b))
    target = math.expm1(0.2) / math.expm1(b)
    assert abs(p - target) < 3.5 * math.sqrt(target * (1 - target) / 4000)


def test_thinned_functional_unbiased(feller, pure_competition):
    for table, seed in ((feller, 1), (pure_competition, 2)):
        a = table.coeffs.a
        es = ex.sample_excursions(table, 0.2, 1e-3, 40.0, 4000, seed, functionals=[(a, Plain())])
        est, se = ex.mc_q_functional(es, a)
        assert abs(est - sc.thinned_q_functional(table, a, 0.2)) < 3.5 * se


def test_start_level_insensitivity(pure_competition):
    # halving the starting level must not move the estimate beyond noise
    a = pure_competition.coeffs.a
    out = []
    for factor in (1e-3, 5e-4):
        es = ex.sample_excursions(pure_competition, 0.1, 1e-3, 40.0, 4000, 8, functionals=[(a, Plain())],
                                  start_factor=factor)
        out.append(ex.mc_q_functional(es, a))
    (m1, s1), (m2, s2) = out
    assert abs(m1 - m2) < 3.5 * math.hypot(s1, s2)


def test_recorded_and_online_integrals_agree(feller):
    a = feller.coeffs.a
    es = ex.sample_excursions(feller, 0.3, 1e-3, 40.0, 50, 4, functionals=[(a, Plain())], record=True)
    from_paths = np.array([ex.path_functional(e.path, a) for e in es.excursions])
    np.testing.assert_allclose(es.integrals[(a, Plain())], from_paths, rtol=1e-9, atol=1e-12)
    via_list = ex.mc_q_functional(es.excursions, a)
    assert via_list[0] == pytest.approx(ex.mc_q_functional(es, a)[0], rel=1e-9)


def test_fq_curve_and_alpha_stats(feller):
    a = feller.coeffs.a
    times = np.array([0.0, 0.5, 1.0])
    es = ex.sample_excursions(feller, 0.3, 1e-3, 40.0, 200, 6, functionals=[(a, Plain())],
                              sample_times=times)
    rows = ex.estimate_fQ_curve(es, a, times)
    assert rows.shape == (3, 3)
    stats = ex.estimate_A_alpha_stats(es, 0.0, a)
    assert stats.mean == pytest.approx(ex.mc_q_functional(es, a)[0])
    with pytest.raises(DomainError):
        ex.estimate_A_alpha_stats(es, -1.0, a)


def test_pooling_rejects_mixed_epsilon(feller):
    e1 = ex.sample_excursion(feller, 0.2, 1e-3, 10.0, stream=(1, 0))
    e2 = ex.sample_excursion(feller, 0.3, 1e-3, 10.0, stream=(1, 0))
    with pytest.raises(DomainError):
        ex.mc_q_functional([e1, e2], feller.coeffs.a)


def test_extrapolation_exact_on_polynomials():
    eps = [0.4, 0.2, 0.1, 0.05]
    lin = ex.extrapolate_to_zero(eps, [2 - 3 * e for e in eps], [0.1] * 4, 1)
    quad = ex.extrapolate_to_zero(eps, [1 + e - 5 * e * e for e in eps], [0.1] * 4, 2)
    assert lin.value == pytest.approx(2.0, abs=1e-12)
    assert quad.value == pytest.approx(1.0, abs=1e-12)
    assert quad.se > lin.se
    with pytest.raises(ValueError):
        ex.extrapolate_to_zero([0.1], [1.0], [0.1], 1)


def test_sweep_checks_order(feller):
    with pytest.raises(ValueError):
        ex.epsilon_sweep(feller, feller.coeffs.a, [0.1, 0.2], 1e-3, 10.0, 10, 1)
    with pytest.raises(DomainError):
        ex.sample_excursions(feller, -0.1, 1e-3, 10.0, 10, 1)
