"""Model coefficients ``(a, h, g)`` of the island diffusion.

The mass on a single island solves

    dY = (-a(Y) + h(Y)) dt + sqrt(2 g(Y)) dB,

with ``a`` the emigration rate, ``h`` the local growth term and ``g`` the
branching variance.  Three families are provided: :class:`LogisticFeller`,
:class:`PowerLaw` and :class:`Tabulated`.  All evaluate vectorised on numpy
arrays and are immutable.

:func:`validate_assumptions` checks numerically the standing conditions that
the analysis in :mod:`virgin_island.scale` relies on.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import ClassVar

import numpy as np

from .errors import DomainError, NumericalFailure
from .quadrature import dyadic_integral, ImproperIntegral

DEFAULT_DOMAIN_CAP = 1e4


class CoefficientSet:
    """Base class.  Subclasses implement :meth:`a`, :meth:`h`, :meth:`g`."""

    family: ClassVar[str] = ""
    domain_cap: float

    @property
    def a_band(self) -> tuple[float, float]:
        """Declared constants ``(c1, c2)`` with ``c1*y <= a(y) <= c2*y``."""
        raise NotImplementedError

    def _check(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(np.isnan(y)):
            raise DomainError("coefficients are defined for y >= 0 only")
        return y

    def drift(self, y):
        """``-a(y) + h(y)``."""
        return self.h(y) - self.a(y)

    def drift_over_g(self, y):
        """``(-a + h) / g``, the log-derivative of the inverse scale density."""
        return self.drift(y) / self.g(y)

    def to_dict(self) -> dict:
        params = {k: v for k, v in asdict(self).items() if k != "domain_cap"}
        for k, v in params.items():
            if isinstance(v, tuple):
                params[k] = list(v)
        return {"family": self.family, "params": params, "domain_cap": self.domain_cap}

    @staticmethod
    def from_dict(spec: dict) -> "CoefficientSet":
        """Inverse of :meth:`to_dict`; unknown families or fields raise ``ValueError``."""
        extra = set(spec) - {"family", "params", "domain_cap"}
        if extra:
            raise ValueError(f"unknown model fields: {sorted(extra)}")
        try:
            cls = FAMILIES[spec["family"]]
        except KeyError:
            raise ValueError(f"unknown coefficient family {spec.get('family')!r}") from None
        params = dict(spec.get("params", {}))
        if "domain_cap" in spec:
            params["domain_cap"] = spec["domain_cap"]
        try:
            return cls(**params)
        except TypeError as exc:
            raise ValueError(str(exc)) from None


@dataclass(frozen=True)
class LogisticFeller(CoefficientSet):
    """Feller branching diffusion with logistic growth.

    ``a = kappa*y``, ``h = gamma*y*(K - y)``, ``g = beta*y``.
    """

    kappa: float
    gamma: float
    K: float
    beta: float
    domain_cap: float = DEFAULT_DOMAIN_CAP
    family: ClassVar[str] = "LogisticFeller"

    def __post_init__(self):
        if not (self.kappa >= 0 and self.gamma >= 0 and self.K >= 0 and self.beta > 0):
            raise ValueError("LogisticFeller needs kappa, gamma, K >= 0 and beta > 0")
        if not self.domain_cap > 0:
            raise ValueError("domain_cap must be positive")

    @property
    def a_band(self):
        return self.kappa, self.kappa

    def a(self, y):
        return self.kappa * self._check(y)

    def h(self, y):
        y = self._check(y)
        return self.gamma * y * (self.K - y)

    def g(self, y):
        return self.beta * self._check(y)

    def drift_over_g(self, y):
        y = self._check(y)
        return (-self.kappa + self.gamma * (self.K - y)) / self.beta


@dataclass(frozen=True)
class PowerLaw(CoefficientSet):
    """``a = c1*y``, ``h = c2*y**k1 - c3*y**k2``, ``g = c4*y**k3``.

    ``k3`` outside ``[1, 2)`` is accepted here and flagged by
    :func:`validate_assumptions`.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    k1: float
    k2: float
    k3: float
    domain_cap: float = DEFAULT_DOMAIN_CAP
    family: ClassVar[str] = "PowerLaw"

    def __post_init__(self):
        if not (self.c1 >= 0 and self.c2 >= 0 and self.c3 >= 0 and self.c4 > 0):
            raise ValueError("PowerLaw needs c1, c2, c3 >= 0 and c4 > 0")
        if not (self.k1 >= 1 and self.k2 > self.k1 and self.k3 > 0):
            raise ValueError("PowerLaw needs k1 >= 1, k2 > k1, k3 > 0")
        if not self.domain_cap > 0:
            raise ValueError("domain_cap must be positive")

    @property
    def a_band(self):
        return self.c1, self.c1

    def a(self, y):
        return self.c1 * self._check(y)

    def h(self, y):
        y = self._check(y)
        return self.c2 * y ** self.k1 - self.c3 * y ** self.k2

    def g(self, y):
        return self.c4 * self._check(y) ** self.k3

    def drift_over_g(self, y):
        y = self._check(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (-self.c1 * y ** (1 - self.k3) + self.c2 * y ** (self.k1 - self.k3)
                    - self.c3 * y ** (self.k2 - self.k3)) / self.c4


@dataclass(frozen=True)
class Tabulated(CoefficientSet):
    """Piecewise-linear coefficients on an ascending grid starting at 0.

    Evaluation outside ``[grid[0], grid[-1]]`` raises :class:`DomainError`.
    ``c1``/``c2`` are the declared bounds of ``a(y)/y``.
    """

    grid: tuple
    a_vals: tuple
    h_vals: tuple
    g_vals: tuple
    c1: float
    c2: float
    domain_cap: float = field(default=None)
    family: ClassVar[str] = "Tabulated"

    def __post_init__(self):
        arrs = [np.asarray(v, dtype=float) for v in (self.grid, self.a_vals, self.h_vals, self.g_vals)]
        grid = arrs[0]
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("Tabulated grid must be strictly ascending with >= 2 points")
        if any(v.shape != grid.shape for v in arrs[1:]):
            raise ValueError("Tabulated samples must match the grid length")
        if grid[0] != 0.0 or arrs[1][0] != 0 or arrs[2][0] != 0 or arrs[3][0] != 0:
            raise ValueError("Tabulated coefficients need grid[0] = 0 and a(0) = h(0) = g(0) = 0")
        if np.any(arrs[1] < 0) or np.any(arrs[3] < 0):
            raise ValueError("Tabulated a and g must be nonnegative")
        for name, v in zip(("grid", "a_vals", "h_vals", "g_vals"), arrs):
            object.__setattr__(self, name, tuple(float(x) for x in v))
        cap = grid[-1] if self.domain_cap is None else float(self.domain_cap)
        if not 0 < cap <= grid[-1]:
            raise ValueError("Tabulated domain_cap must lie in (0, grid[-1]]")
        object.__setattr__(self, "domain_cap", cap)

    @property
    def a_band(self):
        return self.c1, self.c2

    def _interp(self, y, vals):
        y = self._check(y)
        if np.any(y > self.grid[-1]):
            raise DomainError("Tabulated coefficients cannot be extrapolated")
        return np.interp(y, self.grid, vals)

    def a(self, y):
        return self._interp(y, self.a_vals)

    def h(self, y):
        return self._interp(y, self.h_vals)

    def g(self, y):
        return self._interp(y, self.g_vals)

    def lipschitz_bound(self) -> float:
        """Largest slope of ``a``, ``h``, ``g`` between grid points."""
        grid = np.asarray(self.grid)
        slopes = [np.abs(np.diff(np.asarray(v)) / np.diff(grid)) for v in (self.a_vals, self.h_vals, self.g_vals)]
        return float(max(s.max() for s in slopes))


FAMILIES = {
    "LogisticFeller": LogisticFeller,
    "PowerLaw": PowerLaw,
    "Tabulated": Tabulated,
}


def eval(coeffs: CoefficientSet, y):
    """Return ``(a(y), h(y), g(y))``.

    >>> eval(LogisticFeller(1, 1, 2, 1), 1.0)
    (1.0, 1.0, 1.0)
    """
    if np.ndim(y) == 0:
        return tuple(float(f(np.array([y]))[0]) for f in (coeffs.a, coeffs.h, coeffs.g))
    return coeffs.a(y), coeffs.h(y), coeffs.g(y)


@dataclass
class AssumptionReport:
    """Outcome of :func:`validate_assumptions`.

    Each flag corresponds to one standing condition: ``a1_ok`` regularity and
    the linear band for ``a``; ``sbar_ok`` existence of the scale density at
    0; ``a2_ok`` finiteness of ``int_0^1 S/(g s)``; ``mh_ok`` and ``mh2_ok``
    finiteness of the first- and second-moment emigration tails.
    ``witnesses`` maps check names to ``{"value", "error"}`` and ``notes``
    holds free-text remarks (e.g. the grid-only Lipschitz bound for tables).
    """

    a1_ok: bool = False
    sbar_ok: bool = False
    a2_ok: bool = False
    mh_ok: bool = False
    mh2_ok: bool = False
    witnesses: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return self.a1_ok and self.sbar_ok and self.a2_ok and self.mh_ok and self.mh2_ok

    def to_dict(self) -> dict:
        return asdict(self)


def _witness(res: ImproperIntegral) -> dict:
    return {"value": float(res.value), "error": float(res.error), "finite": bool(res.finite),
            "truncated": bool(res.truncated)}


def _sample_points(cap, n=2000):
    return np.unique(np.concatenate([np.geomspace(1e-8, cap, n), np.linspace(0, cap, n)[1:]]))


def check_a1(coeffs: CoefficientSet, tol=1e-8):
    """Return ``(ok, witnesses, notes)`` for the regularity and band conditions."""
    notes = []
    y = _sample_points(coeffs.domain_cap)
    a0, h0, g0 = eval(coeffs, 0.0)
    a, h, g = coeffs.a(y), coeffs.h(y), coeffs.g(y)
    zero_ok = a0 == 0 and h0 == 0 and g0 == 0
    g_ok = bool(np.all(g > 0))
    ratio = a / y
    c1, c2 = coeffs.a_band
    band_ok = c1 > 0 and ratio.min() >= c1 * (1 - tol) and ratio.max() <= c2 * (1 + tol)
    # linear growth: (max(h, 0) + sqrt g)/y must not grow over the last two decades
    big = y[y >= max(1.0, coeffs.domain_cap / 100)]
    r = (np.maximum(coeffs.h(big), 0) + np.sqrt(coeffs.g(big))) / big
    slope = np.polyfit(np.log(big), np.log(np.maximum(r, 1e-300)), 1)[0] if big.size > 2 else 0.0
    growth_ok = slope <= 1e-2 or bool(np.all(r == 0))
    if not zero_ok:
        notes.append("a(0), h(0), g(0) must vanish")
    if not g_ok:
        notes.append("g is not strictly positive on sampled points")
    if not band_ok:
        notes.append("a(y)/y leaves the declared band [c1, c2] or c1 = 0")
    if not growth_ok:
        notes.append("(h^+ + sqrt g)/y grows over the last two decades")
    wit = {"a_over_y_min": float(ratio.min()), "a_over_y_max": float(ratio.max()),
           "growth_slope": float(slope)}
    if isinstance(coeffs, Tabulated):
        wit["grid_lipschitz"] = coeffs.lipschitz_bound()
        notes.append("Lipschitz continuity checked on the grid only")
    return bool(zero_ok and g_ok and band_ok and growth_ok), wit, notes


def validate_assumptions(coeffs: CoefficientSet, tol: float = 1e-8) -> AssumptionReport:
    """Decide the standing assumptions numerically.

    Improper integrals are judged by :func:`~virgin_island.quadrature.dyadic_integral`
    (divergent when partial sums exceed 1e12 or dyadic panels stop
    shrinking).  Raises :class:`NumericalFailure` with the partial report
    attached if a verdict cannot be reached.
    """
    from .scale import build_scale_table  # scale imports this module

    rep = AssumptionReport()
    try:
        rep.a1_ok, wit, notes = check_a1(coeffs, tol)
        rep.witnesses.update(wit)
        rep.notes.extend(notes)
        if not np.all(coeffs.g(np.array([0.5, 1.0])) > 0):
            return rep

        sb = dyadic_integral(coeffs.drift_over_g, 1.0, "zero", tol=tol, floor=1e-12)
        rep.sbar_ok = sb.finite
        rep.witnesses["sbar"] = _witness(sb)

        table = build_scale_table(coeffs, tol=tol, normalize="zero" if rep.sbar_ok else "one",
                                  require_sbar=False)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            a2 = dyadic_integral(lambda y: table.S(y) * table.speed(y), 1.0, "zero", tol=tol,
                                 floor=table.grid[1])
            rep.a2_ok = a2.finite
            rep.witnesses["a2"] = _witness(a2)
            mh = dyadic_integral(lambda y: coeffs.a(y) * table.speed(y), 1.0, "inf", tol=tol,
                                 limit=coeffs.domain_cap)
            rep.mh_ok = mh.finite
            rep.witnesses["mh"] = _witness(mh)
            if rep.mh_ok and rep.a2_ok:
                wa = table.w_table(coeffs.a)
                mh2 = dyadic_integral(lambda y: coeffs.a(y) * (y + wa(y)) * table.speed(y), 1.0, "inf",
                                      tol=tol, limit=coeffs.domain_cap)
                rep.mh2_ok = mh2.finite
                rep.witnesses["mh2"] = _witness(mh2)
    except NumericalFailure as exc:
        exc.partial = rep
        raise
    return rep
