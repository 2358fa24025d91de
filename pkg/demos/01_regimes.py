"""
Three regimes from the scale function
=====================================

The criterion ``theta = int a/(g s)`` sorts a model into extinction
(``theta <= 1``) or survival (``theta > 1``).  Here it is evaluated for a
critical Feller diffusion, a logistic Feller diffusion and a model with
pure competition, together with the quantities each regime makes finite.
"""

from virgin_island import scale as sc
from virgin_island.coeffs import LogisticFeller, PowerLaw, validate_assumptions

models = {
    "critical Feller": LogisticFeller(kappa=1, gamma=0, K=0, beta=1),
    "logistic Feller": LogisticFeller(kappa=1, gamma=1, K=2, beta=1),
    "pure competition": PowerLaw(c1=1, c2=0, c3=1, c4=1, k1=1, k2=2, k3=1),
}

for name, coeffs in models.items():
    # the standing assumptions are checked numerically before any analysis
    assert validate_assumptions(coeffs).all_ok
    table = sc.build_scale_table(coeffs)
    rep = sc.analyze(table, x=1.0)
    print(f"{name:18s} theta = {rep.theta:.6f}  regime = {rep.regime.value}")

    if rep.regime is sc.Regime.SUPERCRITICAL:
        # growth rate and survival probability from one unit of mass
        print(f"{'':18s} alpha = {rep.alpha:.6f}  q = {rep.q:.6f}  "
              f"P(survive) = {sc.survival_probability(table, 1.0, rep.q):.6f}")
    elif rep.regime is sc.Regime.CRITICAL:
        print(f"{'':18s} long-run time average of V = {rep.critical_ratio:.6f}")
    else:
        print(f"{'':18s} expected total area = {rep.expected_area:.6f}")
