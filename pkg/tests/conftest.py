import pytest

from virgin_island import scale as sc
from virgin_island.coeffs import LogisticFeller, PowerLaw

# reference values produced by tests/oracles.py (see test_oracles.py)
THETA_LOGISTIC = 3.4770518117036944
THETA_PURE_COMPETITION = 0.6556795424187984
FELLER_HIT_2_FROM_1 = 0.2689414213699951
FELLER_UP_DRIFT_AT_1 = 2.163953413738653
PC_W_A_AT_1 = 0.5232965528849932
PC_AREA_AT_1 = 1.5197951250444754
PC_SECOND_MOMENT = 0.37172623059642584
LOGISTIC_Q = 1.611761704143071
LOGISTIC_SURVIVAL_AT_1 = 0.736998233098194
LOGISTIC_ALPHA = 1.0617542743990103


def feller_coeffs():
    return LogisticFeller(1.0, 0.0, 0.0, 1.0)


def logistic_coeffs():
    return LogisticFeller(1.0, 1.0, 2.0, 1.0)


def pure_competition_coeffs():
    return PowerLaw(1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0)


@pytest.fixture(scope="session")
def feller():
    return sc.build_scale_table(feller_coeffs())


@pytest.fixture(scope="session")
def logistic():
    return sc.build_scale_table(logistic_coeffs())


@pytest.fixture(scope="session")
def pure_competition():
    return sc.build_scale_table(pure_competition_coeffs())


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
