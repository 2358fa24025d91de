"""Cross-checks between the deterministic analysis and the simulators.

Each check returns a :class:`CheckResult`.  Monte Carlo checks pass when the
estimate lies within ``k`` combined standard errors of its target.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import excursion as ex
from . import renewal as rn
from . import scale as sc
from . import tree as tr
from .coeffs import validate_assumptions
from .diffusion import Plain, mean_with_se, simulate_paths
from .scale import ScaleTable

K_SE = 3.0


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    target: float
    se: float = 0.0
    tolerance: float = 0.0
    detail: str = ""

    @property
    def gap(self) -> float:
        return self.value - self.target

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gap"] = self.gap
        return d

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.name}: value={self.value:.6g} target={self.target:.6g} "
                f"gap={self.gap:.3g} tol={self.tolerance:.3g} {self.detail}").rstrip()


def within_se(name, value, target, se, target_se=0.0, k=K_SE, detail="") -> CheckResult:
    comb = math.hypot(se, target_se)
    return CheckResult(name, bool(abs(value - target) <= k * comb), float(value), float(target),
                       float(comb), k * comb, detail)


def within_rel(name, value, target, rel, detail="") -> CheckResult:
    tol = rel * abs(target)
    return CheckResult(name, bool(abs(value - target) <= tol), float(value), float(target), 0.0, tol, detail)


# ---------------------------------------------------------------------------

def check_assumptions(coeffs) -> CheckResult:
    rep = validate_assumptions(coeffs)
    return CheckResult("assumptions", rep.all_ok, float(rep.all_ok), 1.0, detail=str(rep.notes or ""))


def check_paths(table: ScaleTable, y0, n, dt, horizon, seed, workers=1) -> list:
    """Hitting law of ``2 y0`` before 0 and the occupation identity for ``a``."""
    a = table.coeffs.a
    b = 2.0 * y0
    ens = simulate_paths(table.coeffs, y0, dt, horizon, n, seed, stream=0, levels=[b],
                         functionals=[(a, Plain())], workers=workers)
    hit = ens.hit_before_absorption(b).astype(float)
    p, p_se = mean_with_se(hit)
    out = [within_se("hitting_law", p, sc.hitting_probability(table, y0, 0.0, b), p_se,
                     detail=f"b={b}")]
    occ, occ_se = mean_with_se(ens.integrals[(a, Plain())])
    out.append(within_se("occupation", occ, sc.green_occupation(table, y0, math.inf, a), occ_se))
    return out


def check_excursion_criterion(table: ScaleTable, epsilons, n, dt, horizon, seed, workers=1) -> CheckResult:
    a = table.coeffs.a
    fit = ex.epsilon_sweep(table, a, epsilons, dt, horizon, n, seed, workers=workers)
    return within_se("criterion_vs_excursions", fit.value, sc.extinction_criterion(table), fit.se,
                     detail=f"eps={list(epsilons)}")


def check_subcritical_area(table, x0, epsilons, n_trees, dt, horizon, seed, workers=1) -> CheckResult:
    ests, ses = [], []
    for i, e in enumerate(epsilons):
        ens = tr.simulate_trees(table, x0, e, dt, horizon, n_trees, seed, stream=i,
                                record_every=max(1, int(round(0.1 / dt))), workers=workers)
        m, s = mean_with_se(ens.area)
        ests.append(m)
        ses.append(s)
    order = 2 if len(epsilons) >= 3 else 1
    fit = ex.extrapolate_to_zero(epsilons, ests, ses, order)
    return within_se("expected_area", fit.value, sc.expected_total_area(table, x0), fit.se,
                     detail=f"eps={list(epsilons)} order={order}")


def check_survival(table, x0, epsilon, n_trees, dt, seed, T=30.0, mass_cap=20.0, delta=None,
                   workers=1) -> CheckResult:
    ens = tr.simulate_trees(table, x0, epsilon, dt, T, n_trees, seed, stream=0, mass_cap=mass_cap,
                            record_every=max(1, int(round(0.1 / dt))), workers=workers)
    res = tr.extinction_experiment(ens, T=T, delta=delta)
    return within_se("survival", res.survival, sc.survival_probability(table, x0), res.survival_se,
                     detail=f"eps={epsilon} T={T} capped={res.n_capped}")


def check_growth(table, x0, epsilon, n_trees, dt, seed, T=6.0, workers=1) -> CheckResult:
    ens = tr.simulate_trees(table, x0, epsilon, dt, T, n_trees, seed, stream=1,
                            record_every=max(1, int(round(0.05 / dt))), workers=workers)
    res = tr.extinction_experiment(ens, T=T)
    alpha = sc.malthusian_alpha(table)
    if res.growth is None:
        return CheckResult("growth_rate", False, math.nan, alpha, detail="fewer than two survivors")
    return within_rel("growth_rate", res.growth.slope, alpha, 0.10,
                      detail=f"eps={epsilon} survivors={res.growth.n_trees}")


@dataclass
class RenewalComparison:
    times: np.ndarray
    renewal: np.ndarray
    renewal_se: np.ndarray
    tree: np.ndarray
    tree_se: np.ndarray


def renewal_vs_tree(table: ScaleTable, epsilon, dt, grid_dt, n_excursions, n_trees, seed,
                    times=(1.0, 3.0), batches=20, workers=1) -> RenewalComparison:
    """First moment of excursion-rooted trees two ways.

    The renewal side solves ``m = f + m * mu`` with ``f(t) = int chi_t dQ`` and
    ``mu(t) = int a(chi_t) dQ`` estimated from excursions reaching ``epsilon``;
    its standard error comes from solving on ``batches`` disjoint batches.
    The tree side is ``weight * mean V_t`` over trees whose root is an excursion.
    """
    T = max(times)
    grid = grid_dt * np.arange(int(round(T / grid_dt)) + 1)
    es = ex.sample_excursions(table, epsilon, dt, T, n_excursions, seed, stream=0, sample_times=grid,
                              workers=workers)
    # excursions still in the conditioned phase at T are kept: they were only
    # cut off by the horizon, and the curve up to T does not depend on the rest
    a = table.coeffs.a
    states = es.samples

    def solve(cols):
        f = es.weight * states[:, cols].mean(axis=1)
        mu = es.weight * np.asarray(a(states[:, cols]), dtype=float).mean(axis=1)
        return rn.solve_renewal(rn.RenewalInput(f, mu, grid_dt))

    m = solve(slice(None))
    parts = np.array_split(np.arange(states.shape[1]), batches)
    sols = np.array([solve(p) for p in parts])
    m_se = sols.std(axis=0, ddof=1) / math.sqrt(batches)
    idx = [int(round(t / grid_dt)) for t in times]

    ens = tr.simulate_trees(table, 0.0, epsilon, dt, T, n_trees, seed, stream=1, root="excursion",
                            record_every=max(1, int(round(grid_dt / dt))), workers=workers)
    jdx = [int(np.argmin(np.abs(ens.times - t))) for t in times]
    v = ens.mass[:, jdx] * es.weight
    return RenewalComparison(np.array(times, dtype=float), m[idx], m_se[idx], v.mean(axis=0),
                             v.std(axis=0, ddof=1) / math.sqrt(n_trees))


def check_renewal(table, epsilon, dt, grid_dt, n, seed, workers=1) -> list:
    cmp_ = renewal_vs_tree(table, epsilon, dt, grid_dt, n, n, seed, workers=workers)
    return [within_se(f"renewal_t{t:g}", r, v, r_se, v_se, detail=f"eps={epsilon}")
            for t, r, r_se, v, v_se in zip(cmp_.times, cmp_.renewal, cmp_.renewal_se, cmp_.tree, cmp_.tree_se)]


def run_suite(table: ScaleTable, *, x0: float, epsilons, n: int, n_trees: int, dt: float,
              horizon: float, seed: int, grid_dt: float = 0.01, workers: int = 1) -> list:
    """Regime-dependent suite of checks for one model."""
    out = [check_assumptions(table.coeffs)]
    theta = sc.extinction_criterion(table)
    regime, _ = sc.classify(theta)
    out.append(CheckResult("regime", True, theta, 1.0, detail=regime.value))
    if x0 > 0:
        out += check_paths(table, x0, n, dt, horizon, seed, workers)
    out.append(check_excursion_criterion(table, epsilons, n, dt, horizon, seed, workers))
    if regime is sc.Regime.SUBCRITICAL and x0 > 0:
        out.append(check_subcritical_area(table, x0, list(epsilons)[-3:], n_trees, dt, horizon,
                                          seed, workers))
    if regime is sc.Regime.SUPERCRITICAL and x0 > 0:
        out.append(check_survival(table, x0, epsilons[-1], n_trees, dt, seed, workers=workers))
        out.append(check_growth(table, x0, epsilons[-1], max(2, n_trees // 10), dt, seed,
                                workers=workers))
    out += check_renewal(table, epsilons[-1], dt, grid_dt, n, seed, workers)
    return out
