"""Recompute the frozen reference values from the independent oracles."""
import pytest

import conftest as ref
import oracles


def test_closed_forms():
    assert oracles.theta_logistic_feller() == pytest.approx(ref.THETA_LOGISTIC, rel=1e-14)
    assert oracles.theta_pure_competition() == pytest.approx(ref.THETA_PURE_COMPETITION, rel=1e-14)
    assert oracles.feller_hitting() == pytest.approx(ref.FELLER_HIT_2_FROM_1, rel=1e-14)
    assert oracles.feller_up_drift(1.0) == pytest.approx(ref.FELLER_UP_DRIFT_AT_1, rel=1e-14)


def test_pure_competition_green_integrals():
    assert oracles.pc_w(1.0, lambda z: z) == pytest.approx(ref.PC_W_A_AT_1, rel=1e-12)
    assert oracles.pc_w_a_trapezoid() == pytest.approx(ref.PC_W_A_AT_1, rel=1e-8)
    assert oracles.pc_expected_area() == pytest.approx(ref.PC_AREA_AT_1, rel=1e-12)
    assert oracles.pc_second_moment_trapezoid() == pytest.approx(ref.PC_SECOND_MOMENT, rel=1e-12)


@pytest.mark.slow
def test_logistic_shooting():
    assert oracles.lf_k(1e-4) / 1e-4 == pytest.approx(ref.THETA_LOGISTIC, rel=1e-3)
    q, surv = oracles.lf_survival()
    assert q == pytest.approx(ref.LOGISTIC_Q, rel=1e-9)
    assert surv == pytest.approx(ref.LOGISTIC_SURVIVAL_AT_1, rel=1e-9)
    assert oracles.lf_resolvent(0.1) == pytest.approx(2.8811885425911488, rel=1e-9)
    assert oracles.lf_alpha() == pytest.approx(ref.LOGISTIC_ALPHA, rel=1e-9)
