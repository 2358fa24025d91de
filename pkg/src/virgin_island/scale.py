"""Scale function, speed density and the deterministic functionals built on them.

With ``b = -a + h`` the scale density and scale function are

    s(y) = exp(-int_0^y b/g),      S(y) = int_0^y s,

and ``m = 1/(g s)`` is the speed-type density.  Every quantity computed here
is either an integral against ``m`` (possibly weighted by ``S`` or a Green
kernel) or the solution of a linear boundary-value problem in divergence form

    d/dy (u'/s) = (c u - r) m,      u(0) = 0,

discretised with piecewise-linear finite elements in the natural scale
``xi = S(y)`` (see :func:`solve_divergence_bvp`).

All results are invariant under ``(s, S) -> (c s, c S)``.  Tables normalised
at 1 instead of 0 (``normalize='one'``) therefore give the same values; this
is used when the scale density has no finite limit at 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import linalg, optimize
from scipy.interpolate import CubicHermiteSpline

from .coeffs import CoefficientSet
from .errors import DomainError, NumericalFailure, PreconditionError
from .quadrature import cell_integrals, dyadic_integral

Y_LO = 1e-12
FE_Y_MIN = 1e-7
LOG_OVERFLOW = 600.0
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def _scalar(f, y):
    return float(np.asarray(f(np.array([y], dtype=float)))[0])


def _head_integral(f, y):
    """``int_0^y f`` assuming ``f`` is a power of its argument below ``y``."""
    f1, f0 = _scalar(f, y), _scalar(f, 0.5 * y)
    if f1 == 0.0:
        return 0.0
    p = math.log2(abs(f1 / f0)) if f0 != 0.0 else 0.0
    if p <= -1.0 + 1e-9:
        return math.inf
    return f1 * y / (p + 1.0)


@dataclass(eq=False)
class ScaleTable:
    """Tabulated ``log s`` and ``S`` with cubic Hermite interpolation.

    Built by :func:`build_scale_table`; treat as immutable.  Beyond ``top``
    (where ``y**2/(g s)`` has become negligible, or the domain cap) the table
    reports ``s = S = inf`` and ``speed = 0``.  Below ``grid[1]`` the scale
    density is extended as a power ``y**head_power``.

    Attributes
    ----------
    coeffs : CoefficientSet
    grid : ndarray
        Ascending nodes, ``grid[0] = 0``.
    log_s_vals, S_vals : ndarray
        Values at the nodes.
    quadrature_tol : float
    normalize : {'zero', 'one'}
        Whether ``s(0) = 1`` or ``s(1) = 1``.
    truncated_at_cap : bool
        True when ``top`` equals the domain cap rather than a decay cut-off.
    """

    coeffs: CoefficientSet
    grid: np.ndarray
    log_s_vals: np.ndarray
    S_vals: np.ndarray
    quadrature_tol: float
    normalize: str = "zero"
    head_power: float = 0.0
    truncated_at_cap: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        nodes = self.grid[1:]
        self._log_s = CubicHermiteSpline(nodes, self.log_s_vals[1:], -self.coeffs.drift_over_g(nodes))
        self._S = CubicHermiteSpline(nodes, self.S_vals[1:], np.exp(self.log_s_vals[1:]))

    @property
    def top(self) -> float:
        return float(self.grid[-1])

    @property
    def s_vals(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_s_vals)

    @property
    def speed_vals(self):
        with np.errstate(divide="ignore", over="ignore"):
            return np.exp(-self.log_s_vals) / self.coeffs.g(self.grid)

    def rescaled(self, c: float) -> "ScaleTable":
        """The same table with ``(s, S)`` replaced by ``(c s, c S)``."""
        return ScaleTable(self.coeffs, self.grid, self.log_s_vals + math.log(c), c * self.S_vals,
                          self.quadrature_tol, self.normalize, self.head_power, self.truncated_at_cap)

    # pointwise evaluation ------------------------------------------------
    def _prep(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(np.isnan(y)):
            raise DomainError("scale functions are defined for y >= 0")
        return y, np.clip(y, self.grid[1], self.top)

    def log_s(self, y):
        y, yc = self._prep(y)
        val = self._log_s(yc)
        with np.errstate(divide="ignore"):
            head = self.log_s_vals[1] + self.head_power * np.log(y / self.grid[1])
        val = np.where(y < self.grid[1], head, val)
        return np.where(y > self.top, np.inf, val)

    def s(self, y):
        with np.errstate(over="ignore"):
            return np.exp(self.log_s(y))

    def S(self, y):
        y, yc = self._prep(y)
        val = self._S(yc)
        head = self.S_vals[1] * (y / self.grid[1]) ** (self.head_power + 1.0)
        val = np.where(y < self.grid[1], head, val)
        return np.where(y > self.top, np.inf, val)

    def speed(self, y):
        """``1/(g(y) s(y))``, zero beyond ``top``."""
        y, _ = self._prep(y)
        out = y > self.top
        yc = np.where(out, self.top, y)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            val = np.exp(-self.log_s(yc)) / self.coeffs.g(yc)
        return np.where(out, 0.0, val)

    # integration ---------------------------------------------------------
    def integrate(self, f, lo=0.0, hi=None):
        """``int_lo^hi f`` over the table partition, as ``(value, error)``.

        The piece below ``grid[1]`` uses a power-law head estimate and the
        part above ``top`` is dropped.  When ``top`` is the domain cap the
        last dyadic panel's contribution is added to the error.
        """
        hi = self.top if hi is None else min(float(hi), self.top)
        if hi <= lo:
            return 0.0, 0.0
        start = max(float(lo), self.grid[1])
        inner = self.grid[(self.grid > start) & (self.grid < hi)]
        edges = np.concatenate([[start], inner, [hi]])
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            vals, errs = cell_integrals(f, edges, atol=1e-300, rtol=self.quadrature_tol * 1e-2)
            value, error = float(vals.sum()), float(errs.sum())
            if lo < self.grid[1]:
                head = _head_integral(f, self.grid[1])
                if lo > 0:
                    head -= _head_integral(f, lo)
                value += head
                error += 1e-3 * abs(head)
            if self.truncated_at_cap and hi >= self.top:
                error += abs(float(cell_integrals(f, [0.5 * self.top, self.top])[0][0]))
        return value, error

    def cumulative(self, f):
        """Running integrals ``int_0^{grid[i]} f`` at every node."""
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            vals, _ = cell_integrals(f, self.grid[1:], atol=1e-300, rtol=self.quadrature_tol * 1e-2)
            head = _head_integral(f, self.grid[1])
        return np.concatenate([[0.0, head], head + np.cumsum(vals)])

    def w_table(self, f):
        """Interpolant of ``w_f(x) = int S(min(x, z)) f(z) m(z) dz``.

        ``w_f = I + S J`` with ``I(x) = int_0^x S f m`` and
        ``J(x) = int_x^inf f m``, and ``w_f' = s J``.
        """
        if f in self._cache:
            return self._cache[f]
        fm = lambda z: f(z) * self.speed(z)
        inner = self.cumulative(lambda z: self.S(z) * fm(z))
        tot = self.cumulative(fm)
        tail = tot[-1] - tot
        w = inner + self.S_vals * tail
        with np.errstate(over="ignore", invalid="ignore"):
            dw = self.s_vals * tail
        spline = CubicHermiteSpline(self.grid[1:], w[1:], dw[1:])
        top, w_top, g1, w1 = self.top, w[-1], self.grid[1], w[1]

        def w_of(x):
            x = np.asarray(x, dtype=float)
            val = spline(np.clip(x, g1, top))
            val = np.where(x < g1, w1 * x / g1, val)
            return np.where(x > top, w_top, val)

        self._cache[f] = w_of
        return w_of

    # finite elements -------------------------------------------------------
    def fe_nodes(self, right: Optional[float] = None):
        """Element nodes ``0 < FE_Y_MIN <= ... <= right`` taken from the grid."""
        right = self.top if right is None else float(right)
        inner = self.grid[(self.grid >= FE_Y_MIN) & (self.grid < right * (1 - 1e-12))]
        return np.concatenate([[0.0], inner, [right]])

    def fe_elements(self, nodes, load: Optional[Callable] = None):
        """Per-element integrals for hat functions linear in ``S``.

        Returns a dict with ``dS`` and, for ``w`` in ``m`` and ``am``
        (speed density and ``a`` times it), the entries ``w_ll``, ``w_lr``,
        ``w_rr`` of the element mass matrix, plus the load integrals
        ``load_l``, ``load_r`` of ``load * phi`` (default ``load = a m``).
        """
        nodes = np.asarray(nodes, dtype=float)
        key = ("fe", nodes.size, float(nodes[-1]), load)
        if key in self._cache and np.array_equal(self._cache[key]["nodes"], nodes):
            return self._cache[key]
        left, right = nodes[:-1], nodes[1:]
        S_l, S_r = self.S(left), self.S(right)
        dS = S_r - S_l
        half = 0.5 * (right - left)
        x = (0.5 * (right + left))[:, None] + half[:, None] * _GL_X[None, :]
        flat = x.ravel()
        with np.errstate(over="ignore", invalid="ignore"):
            m = self.speed(flat).reshape(x.shape)
            am = self.coeffs.a(flat).reshape(x.shape) * m
            ld = am if load is None else np.asarray(load(flat)).reshape(x.shape)
            pr = (self.S(flat).reshape(x.shape) - S_l[:, None]) / dS[:, None]
        pl = 1.0 - pr
        w = half[:, None] * _GL_W[None, :]
        out = {"nodes": nodes, "dS": dS}
        for name, dens in (("m", m), ("am", am)):
            out[name + "_ll"] = np.sum(w * dens * pl * pl, axis=1)
            out[name + "_lr"] = np.sum(w * dens * pl * pr, axis=1)
            out[name + "_rr"] = np.sum(w * dens * pr * pr, axis=1)
        out["load_l"] = np.sum(w * ld * pl, axis=1)
        out["load_r"] = np.sum(w * ld * pr, axis=1)
        self._cache[key] = out
        return out


def build_scale_table(coeffs: CoefficientSet, grid=None, tol: float = 1e-10,
                      normalize: str = "zero", require_sbar: bool = True,
                      per_decade: int = 200, n_linear: int = 8000) -> ScaleTable:
    """Tabulate ``log s`` and ``S`` for ``coeffs``.

    Parameters
    ----------
    grid : array_like, optional
        Explicit ascending positive nodes (0 is prepended).  By default a
        log-spaced grid from 1e-12 is merged with ``n_linear`` uniform cells
        on ``[0, top]``.
    tol : float
        Relative quadrature tolerance.
    normalize : {'zero', 'one'}
        ``'zero'`` gives ``s(0) = 1``; ``'one'`` gives ``s(1) = 1`` and is
        meant for models whose scale density degenerates at 0.
    require_sbar : bool
        With ``normalize='zero'``, raise :class:`PreconditionError` when
        ``int_0 b/g`` diverges; otherwise fall back to ``'one'``.
    """
    if normalize not in ("zero", "one"):
        raise ValueError("normalize must be 'zero' or 'one'")
    cap = float(coeffs.domain_cap)
    b_over_g = coeffs.drift_over_g
    if grid is None:
        top = _find_top(coeffs, _make_grid(Y_LO, cap, 40, 2000))
        grid = _make_grid(Y_LO, top, per_decade, n_linear)
    else:
        grid = np.asarray(grid, dtype=float)
        grid = grid[(grid > 0) & (grid <= cap)]
        if grid.size < 4 or np.any(np.diff(grid) <= 0):
            raise DomainError("grid must be strictly ascending with at least 4 positive nodes")
    if grid[0] < 1.0 < grid[-1] and not np.any(grid == 1.0):
        grid = np.sort(np.append(grid, 1.0))

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        inc, _ = cell_integrals(b_over_g, grid, atol=1e-300, rtol=tol * 1e-2)
    L = np.concatenate([[0.0], np.cumsum(inc)])
    if normalize == "zero":
        head = _head_integral(b_over_g, grid[0])
        if math.isfinite(head):
            L = L + head
        elif require_sbar:
            raise PreconditionError("scale density has no finite limit at 0 (S_bar condition fails)")
        else:
            normalize = "one"
    if normalize == "one":
        L = L - np.interp(1.0, grid, L)
    log_s = -L
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        weight = 2 * np.log(grid) - log_s - np.log(coeffs.g(grid))
    keep = _top_index(weight, log_s)
    grid, log_s = grid[: keep + 1], log_s[: keep + 1]
    truncated = keep == weight.size - 1 and grid[-1] >= cap * (1 - 1e-12)

    # s ~ y**p below grid[0]; p = 0 when s has a finite positive limit
    p = 0.0 if normalize == "zero" else -_scalar(b_over_g, grid[0]) * grid[0]
    if p <= -1.0:
        raise PreconditionError("scale function is infinite near 0")
    log_spline = CubicHermiteSpline(grid, log_s, -b_over_g(grid))
    with np.errstate(over="ignore"):
        ds, _ = cell_integrals(lambda y: np.exp(log_spline(y)), grid, atol=1e-300, rtol=tol * 1e-2)
    s_head = math.exp(log_s[0]) * grid[0] / (p + 1.0)
    S = np.concatenate([[0.0, s_head], s_head + np.cumsum(ds)])
    if normalize == "zero":
        log_s0 = 0.0
    else:
        log_s0 = 0.0 if p == 0 else (-math.inf if p > 0 else math.inf)
    return ScaleTable(coeffs=coeffs, grid=np.concatenate([[0.0], grid]),
                      log_s_vals=np.concatenate([[log_s0], log_s]), S_vals=S,
                      quadrature_tol=tol, normalize=normalize, head_power=p,
                      truncated_at_cap=bool(truncated))


def _make_grid(lo, hi, per_decade, n_linear):
    n_geo = max(int(per_decade * math.log10(hi / lo)), 10)
    pts = np.concatenate([np.geomspace(lo, hi, n_geo), np.linspace(0, hi, n_linear + 1)[1:]])
    pts = np.unique(pts[(pts >= lo) & (pts <= hi)])
    keep = np.concatenate([[True], np.diff(pts) > 1e-3 * np.minimum(pts[1:], hi / n_linear)])
    return pts[keep]


def _top_index(weight, log_s):
    """First node past the peak of ``y^2 m`` where it has dropped by e^-69
    while ``s > 1``, or where ``s`` is about to overflow."""
    w = np.where(np.isfinite(weight), weight, -np.inf)
    small = (w < np.maximum.accumulate(w) - 69.0) & (log_s > 0)
    small |= log_s > LOG_OVERFLOW
    idx = np.flatnonzero(small)
    return int(idx[0]) if idx.size else log_s.size - 1


def _find_top(coeffs, coarse):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        inc, _ = cell_integrals(coeffs.drift_over_g, coarse, atol=1e-300, rtol=1e-8)
        log_s = -np.concatenate([[0.0], np.cumsum(inc)])
        weight = 2 * np.log(coarse) - log_s - np.log(coeffs.g(coarse))
    return float(coarse[_top_index(weight, log_s)])


# ---------------------------------------------------------------------------
# closed-form functionals

def hitting_probability(table: ScaleTable, y: float, c: float, b: float) -> float:
    """``P^y(T_b < T_c) = (S(y) - S(c)) / (S(b) - S(c))`` for ``c <= y <= b``."""
    if not (0 <= c <= y <= b and c < b):
        raise DomainError("need 0 <= c <= y <= b with c < b")
    Sc, Sy, Sb = (_scalar(table.S, v) for v in (c, y, b))
    return (Sy - Sc) / (Sb - Sc)


def _require_S_infinite(table: ScaleTable):
    if not table.truncated_at_cap:
        return
    res = dyadic_integral(table.s, max(1.0, 0.5 * table.top), "inf", limit=table.coeffs.domain_cap)
    if res.finite:
        raise PreconditionError("S(inf) appears finite; excursion functionals are undefined")


def extinction_criterion(table: ScaleTable, return_error: bool = False):
    """``theta = int_0^inf a/(g s) dy``; extinction iff ``theta <= 1``.

    Returns ``inf`` when the tail diverges.  With ``return_error`` a pair
    ``(theta, error)`` is returned.
    """
    a = table.coeffs.a
    val, err = table.integrate(lambda y: a(y) * table.speed(y))
    if table.truncated_at_cap:
        tail = dyadic_integral(lambda y: a(y) * table.speed(y), 1.0, "inf",
                               limit=table.coeffs.domain_cap)
        if not tail.finite:
            val, err = math.inf, math.inf
    return (val, err) if return_error else val


def green_occupation(table: ScaleTable, y: float, b: float, f: Callable) -> float:
    """``E^y int_0^{T_0 ^ T_b} f(Y_t) dt`` via the Green kernel on ``(0, b)``.

    ``b = inf`` gives ``w_f(y)``.
    """
    if not 0 <= y <= b:
        raise DomainError("need 0 <= y <= b")
    if y == 0:
        return 0.0
    fm = lambda z: f(z) * table.speed(z)
    Sy = _scalar(table.S, y)
    below, _ = table.integrate(lambda z: table.S(z) * fm(z), 0.0, y)
    if math.isinf(b) or b >= table.top:
        above, _ = table.integrate(fm, y)
        val = below + Sy * above
    else:
        Sb = _scalar(table.S, b)
        above, _ = table.integrate(lambda z: (Sb - table.S(z)) * fm(z), y, b)
        val = below * (Sb - Sy) / Sb + Sy * above / Sb
    if not math.isfinite(val):
        raise NumericalFailure("Green integral did not converge")
    return val


def w_functional(table: ScaleTable, x, f: Callable):
    """``w_f(x) = int_0^inf S(min(x, z)) f(z)/(g(z) s(z)) dz`` (vectorised in ``x``)."""
    out = table.w_table(f)(x)
    return float(out) if np.ndim(out) == 0 else out


def w_slope_at_zero(table: ScaleTable, f: Callable) -> float:
    """``w_f'(0) = int_0^inf f/(g s)``."""
    return table.integrate(lambda z: f(z) * table.speed(z))[0]


class Regime(str, Enum):
    SUBCRITICAL = "Subcritical"
    CRITICAL = "Critical"
    SUPERCRITICAL = "Supercritical"


def classify(theta: float, error: float = 0.0) -> tuple[Regime, float]:
    """Regime and the tolerance ``max(1e-6, 3 * error)`` used to decide it."""
    class_tol = max(1e-6, 3.0 * error)
    if theta > 1 + class_tol:
        return Regime.SUPERCRITICAL, class_tol
    if theta < 1 - class_tol:
        return Regime.SUBCRITICAL, class_tol
    return Regime.CRITICAL, class_tol


def identity(y):
    return np.asarray(y, dtype=float)


def expected_total_area(table: ScaleTable, x: float) -> float:
    """Expected ``int_0^inf V_t dt`` started from mass ``x``; ``inf`` unless subcritical."""
    theta, err = extinction_criterion(table, return_error=True)
    if classify(theta, err)[0] is not Regime.SUBCRITICAL:
        return math.inf
    a = table.coeffs.a
    w_id = w_functional(table, x, identity)
    w_a = w_functional(table, x, a)
    return w_id + w_slope_at_zero(table, identity) * w_a / (1.0 - theta)


def critical_time_average(table: ScaleTable, x: float) -> float:
    """Limit of ``(1/T) E int_0^T V_t dt`` in the critical regime.

    ``w_id'(0) w_a(x) / int w_a m``, taken as 0 if the denominator diverges.
    """
    theta, err = extinction_criterion(table, return_error=True)
    if classify(theta, err)[0] is not Regime.CRITICAL:
        raise PreconditionError("critical_time_average needs a critical model")
    denom = q_time_weighted(table, table.coeffs.a)
    if not math.isfinite(denom):
        return 0.0
    return w_slope_at_zero(table, identity) * w_functional(table, x, table.coeffs.a) / denom


def q_functional(table: ScaleTable, f: Callable, m: int = 1) -> float:
    """Excursion-measure moment ``int (int f(chi_t) dt)**m dQ`` for ``m`` in {1, 2}.

    ``m = 1`` gives ``int f/(g s)``; ``m = 2`` gives ``int 2 f w_f/(g s)``.
    """
    if m not in (1, 2):
        raise ValueError("m must be 1 or 2")
    _require_S_infinite(table)
    if m == 1:
        val = w_slope_at_zero(table, f)
    else:
        wf = table.w_table(f)
        val = table.integrate(lambda z: 2.0 * f(z) * wf(z) * table.speed(z))[0]
    return val if math.isfinite(val) else math.inf


def q_second_moment_ordered(table: ScaleTable, f: Callable) -> float:
    """Second moment assembled as ``4 int f m I_f`` with ``I_f(z) = int_0^z f S m``.

    Equal to ``q_functional(table, f, 2)`` by symmetry of the Green kernel.
    """
    fm = lambda z: f(z) * table.speed(z)
    Sfm = lambda z: table.S(z) * fm(z)
    inner = table.cumulative(Sfm)
    g = table.grid[1:]
    with np.errstate(over="ignore", invalid="ignore"):
        spline = CubicHermiteSpline(g, inner[1:], np.nan_to_num(Sfm(g)))
    I = lambda z: np.where(z < g[0], inner[1] * (np.asarray(z) / g[0]) ** 2, spline(np.clip(z, g[0], g[-1])))
    return table.integrate(lambda z: 4.0 * fm(z) * I(z))[0]


def q_time_weighted(table: ScaleTable, f: Callable) -> float:
    """``int int t f(chi_t) dt dQ = int w_f/(g s)``."""
    _require_S_infinite(table)
    wf = table.w_table(f)
    val = table.integrate(lambda z: wf(z) * table.speed(z))[0]
    return val if math.isfinite(val) else math.inf


def thinned_q_functional(table: ScaleTable, f: Callable, epsilon: float) -> float:
    """``int int f(chi_t) dt dQ`` restricted to excursions reaching ``epsilon``.

    Equals ``int f m`` minus ``int_0^eps f m (1 - S/S(eps))**2``.
    """
    Se = _scalar(table.S, epsilon)
    full = w_slope_at_zero(table, f)
    lost = table.integrate(lambda z: f(z) * table.speed(z) * (1.0 - table.S(z) / Se) ** 2, 0.0, epsilon)[0]
    return full - lost


# ---------------------------------------------------------------------------
# boundary-value problems

@dataclass
class BVPSolution:
    """Nodal solution of a divergence-form BVP and its flux ``u'(0)/s(0)`` at 0."""

    nodes: np.ndarray
    S_nodes: np.ndarray
    u: np.ndarray
    flux0: float

    def __call__(self, y):
        """Interpolate linearly in the natural scale."""
        return np.interp(np.asarray(y, dtype=float), self.nodes, self.u)


def solve_divergence_bvp(table: ScaleTable, c_m: float = 0.0, c_am: float = 0.0, r: float = 1.0,
                         right: Optional[float] = None, right_value: Optional[float] = None,
                         load: Optional[Callable] = None) -> BVPSolution:
    """Solve ``(u'/s)' = (c_m + c_am a) u m - r L`` with ``u(0) = 0``.

    ``L`` is the load density (``a m`` by default).  On ``(0, right)`` the
    right end is Dirichlet ``u = right_value`` when given, else the flux
    vanishes there.  Finite elements with hats linear in ``S``; the flux at 0
    comes from the weak form tested against the hat at 0, which makes it
    consistent with the discrete balance ``flux0 = int (r L - c u m)``.
    """
    nodes = table.fe_nodes(right)
    el = table.fe_elements(nodes, load)
    k = 1.0 / el["dS"]
    d_ll = k + c_m * el["m_ll"] + c_am * el["am_ll"]
    d_rr = k + c_m * el["m_rr"] + c_am * el["am_rr"]
    off = -k + c_m * el["m_lr"] + c_am * el["am_lr"]
    n = nodes.size
    diag = np.zeros(n)
    diag[:-1] += d_ll
    diag[1:] += d_rr
    rhs = np.zeros(n)
    rhs[:-1] += r * el["load_l"]
    rhs[1:] += r * el["load_r"]
    hi = n if right_value is None else n - 1
    A_diag = diag[1:hi].copy()
    A_off = off[1:hi - 1].copy()
    b = rhs[1:hi].copy()
    if right_value is not None:
        b[-1] -= off[-1] * right_value
    ab = np.vstack([np.concatenate([[0.0], A_off]), A_diag])
    try:
        sol = linalg.solveh_banded(ab, b, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"finite-element solve failed: {exc}") from exc
    u = np.zeros(n)
    u[1:hi] = sol
    if right_value is not None:
        u[-1] = right_value
    flux0 = -(off[0] * u[1]) + rhs[0]
    return BVPSolution(nodes=nodes, S_nodes=table.S(nodes), u=u, flux0=float(flux0))


def resolvent_flux(table: ScaleTable, alpha: float) -> float:
    """``F(alpha) = u'(0)`` for ``g u'' + b u' - alpha u = -a``; ``F(0) = theta``."""
    return solve_divergence_bvp(table, c_m=alpha).flux0


def malthusian_alpha(table: ScaleTable, tol: float = 1e-10, return_error: bool = False):
    """Root of ``F(alpha) = 1`` for a supercritical model.

    ``F`` is strictly decreasing, so the root is bracketed by doubling and
    then refined with Brent's method.  The error estimate compares with the
    same computation on a problem cut at half the table top.
    """
    F0 = resolvent_flux(table, 0.0)
    if F0 <= 1.0:
        raise PreconditionError(f"malthusian_alpha needs theta > 1 (F(0) = {F0:.6g})")
    hi = 1.0
    while resolvent_flux(table, hi) > 1.0:
        hi *= 2.0
        if hi > 1e8:
            raise NumericalFailure("no bracket for the Malthusian parameter")
    alpha = optimize.brentq(lambda al: resolvent_flux(table, al) - 1.0, 0.0, hi,
                            xtol=tol * 1e-2)
    if not return_error:
        return alpha
    full = resolvent_flux(table, alpha)
    half = solve_divergence_bvp(table, c_m=alpha, right=0.5 * table.top).flux0
    slope = abs(resolvent_flux(table, alpha * 1.01) - full) / (0.01 * alpha)
    return alpha, abs(half - full) / slope + tol


def survival_function(table: ScaleTable, z: float) -> BVPSolution:
    """``phi_z(y) = E^y[1 - exp(-z int_0^inf a(Y_t) dt)]`` as a BVP solution."""
    return solve_divergence_bvp(table, c_am=z, r=z)


def k_function(table: ScaleTable, z: float) -> float:
    """``k(z) = int (1 - exp(-z int a(chi_t) dt)) dQ``."""
    if z < 0:
        raise DomainError("k is defined for z >= 0")
    if z == 0:
        return 0.0
    return survival_function(table, z).flux0


def k_slope_at_zero(table: ScaleTable, h: float = 1e-5) -> float:
    """``k'(0)`` by Richardson extrapolation of ``k(z)/z``; equals ``theta``."""
    return 2.0 * k_function(table, h) / h - k_function(table, 2 * h) / (2 * h)


def fixed_point_q(table: ScaleTable, tol: float = 1e-10) -> float:
    """Largest fixed point of ``k``; 0 when ``theta <= 1``."""
    theta, err = extinction_criterion(table, return_error=True)
    if classify(theta, err)[0] is not Regime.SUPERCRITICAL:
        return 0.0
    return _largest_fixed_point(lambda z: k_function(table, z), tol)


def _largest_fixed_point(k, tol):
    z = 1.0
    if k(z) > z:
        while k(2 * z) > 2 * z:
            z *= 2
            if z > 1e12:
                raise NumericalFailure("k(z) > z for all probed z")
        lo, hi = z, 2 * z
    else:
        while k(0.5 * z) <= 0.5 * z:
            z *= 0.5
            if z < 1e-14:
                raise NumericalFailure("no positive fixed point found")
        lo, hi = 0.5 * z, z
    return optimize.brentq(lambda v: k(v) - v, lo, hi, xtol=tol * 1e-2)


def survival_probability(table: ScaleTable, x: float, q: Optional[float] = None) -> float:
    """``P^x(V_t -> inf) = E^x[1 - exp(-q int a(Y_t) dt)]``."""
    q = fixed_point_q(table) if q is None else q
    if q == 0:
        return 0.0
    return float(survival_function(table, q)(x))


# ---------------------------------------------------------------------------
# epsilon-thinned counterparts (exact for the simulated thinned model)

def _exit_flux(table, epsilon, c_m=0.0, c_am=0.0):
    """Flux at 0 of ``u`` with ``(u'/s)' = (c_m + c_am a) u m``, ``u(0) = 0``, ``u(eps) = 1``."""
    return solve_divergence_bvp(table, c_m=c_m, c_am=c_am, r=0.0, right=epsilon, right_value=1.0).flux0


def thinned_k_function(table: ScaleTable, z: float, epsilon: float) -> float:
    """``k`` restricted to excursions that reach ``epsilon``.

    ``1/S(eps) - chi'(0) (1 - phi_z(eps))`` where ``chi`` is the discounted
    probability of reaching ``eps`` before 0.
    """
    if z == 0:
        return 0.0
    Se = _scalar(table.S, epsilon)
    chi0 = _exit_flux(table, epsilon, c_am=z)
    phi_eps = float(survival_function(table, z)(epsilon))
    return 1.0 / Se - chi0 * (1.0 - phi_eps)


def thinned_fixed_point_q(table: ScaleTable, epsilon: float, tol: float = 1e-10) -> float:
    """Largest fixed point of :func:`thinned_k_function` (0 if none is positive)."""
    k = lambda z: thinned_k_function(table, z, epsilon)
    if k(1e-6) <= 1e-6:
        return 0.0
    return _largest_fixed_point(k, tol)


def thinned_resolvent_flux(table: ScaleTable, alpha: float, epsilon: float) -> float:
    """``int int e^{-alpha t} a(chi_t) dt dQ`` over excursions reaching ``epsilon``."""
    Se = _scalar(table.S, epsilon)
    a = table.coeffs.a
    load = lambda y: a(y) * table.S(y) / Se * table.speed(y)
    before = solve_divergence_bvp(table, c_m=alpha, r=1.0, right=epsilon, right_value=0.0,
                                  load=load).flux0
    psi0 = _exit_flux(table, epsilon, c_m=alpha)
    u_eps = float(solve_divergence_bvp(table, c_m=alpha)(epsilon))
    return before + psi0 * u_eps


def thinned_malthusian_alpha(table: ScaleTable, epsilon: float, tol: float = 1e-10) -> float:
    """Growth rate of the model in which only ``epsilon``-reaching islands are founded."""
    F = lambda al: thinned_resolvent_flux(table, al, epsilon) - 1.0
    if F(0.0) <= 0:
        raise PreconditionError("the thinned model is not supercritical")
    hi = 1.0
    while F(hi) > 0:
        hi *= 2.0
    return optimize.brentq(F, 0.0, hi, xtol=tol * 1e-2)


def thinned_expected_total_area(table: ScaleTable, x: float, epsilon: float) -> float:
    """Expected ``int_0^inf V_t dt`` from ``x`` when only ``epsilon``-reaching islands are founded.

    ``w_id(x) + w_a(x) Q_eps[int id] / (1 - Q_eps[int a])``; ``inf`` if the
    thinned criterion is at least 1.
    """
    a = table.coeffs.a
    theta_eps = thinned_q_functional(table, a, epsilon)
    if theta_eps >= 1.0:
        return math.inf
    q_id = thinned_q_functional(table, identity, epsilon)
    return w_functional(table, x, identity) + w_functional(table, x, a) * q_id / (1.0 - theta_eps)


# ---------------------------------------------------------------------------
# report

@dataclass
class AnalysisReport:
    """Deterministic summary of a model.

    ``alpha`` is present only for supercritical models and ``q`` is 0
    unless supercritical.  ``expected_area`` is finite only when subcritical
    and ``critical_ratio`` is set only when critical.  ``errors`` holds
    absolute error estimates keyed by field name.
    """

    theta: float
    regime: Regime
    alpha: Optional[float] = None
    q: Optional[float] = None
    expected_area: Optional[float] = None
    critical_ratio: Optional[float] = None
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf" if v > 0 else "-inf"
            return v
        return {
            "theta": enc(self.theta),
            "regime": self.regime.value,
            "alpha": enc(self.alpha),
            "q": enc(self.q),
            "expected_area": enc(self.expected_area),
            "critical_ratio": enc(self.critical_ratio),
            "errors": {k: enc(v) for k, v in self.errors.items()},
        }


def analyze(table: ScaleTable, x: float = 1.0, tol: float = 1e-10) -> AnalysisReport:
    """Criterion, regime and the regime-dependent quantities started from ``x``."""
    theta, err = extinction_criterion(table, return_error=True)
    regime, class_tol = classify(theta, err)
    rep = AnalysisReport(theta=theta, regime=regime, q=0.0,
                         errors={"theta": err, "class_tol": class_tol})
    if regime is Regime.SUPERCRITICAL:
        rep.alpha, rep.errors["alpha"] = malthusian_alpha(table, tol, return_error=True)
        rep.q = fixed_point_q(table, tol)
        rep.expected_area = math.inf
    elif regime is Regime.CRITICAL:
        rep.expected_area = math.inf
        rep.critical_ratio = critical_time_average(table, x)
    else:
        rep.expected_area = expected_total_area(table, x)
        rep.errors["expected_area"] = abs(rep.expected_area) * 1e-8 + err
    return rep
