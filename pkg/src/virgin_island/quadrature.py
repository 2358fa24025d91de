"""Vectorised quadrature helpers.

Two tools live here:

* :func:`cell_integrals` integrates a vectorised integrand over every cell of
  a partition at once with Gauss-Legendre rules, bisecting cells whose
  10-point and 20-point estimates disagree.  Cumulative sums of the result
  give running integrals on a grid.
* :func:`dyadic_integral` evaluates an improper integral over panels
  ``[x, 2x], [2x, 4x], ...`` (or halving towards 0) and decides numerically
  whether it converges.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import NumericalFailure

_LO_X, _LO_W = np.polynomial.legendre.leggauss(10)
_HI_X, _HI_W = np.polynomial.legendre.leggauss(20)

DIVERGENCE_BOUND = 1e12
MAX_ACTIVE_CELLS = 2_000_000


def _rule(f, left, right, nodes, weights, with_abs=False):
    half = 0.5 * (right - left)
    mid = 0.5 * (right + left)
    x = mid[:, None] + half[:, None] * nodes[None, :]
    vals = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
    if with_abs:
        return half * (vals @ weights), np.abs(half) * (np.abs(vals) @ weights)
    return half * (vals @ weights)


def cell_integrals(f, edges, atol=1e-13, rtol=1e-11, max_depth=30):
    """Integrate ``f`` over each cell ``[edges[i], edges[i+1]]``.

    Parameters
    ----------
    f : callable
        Vectorised integrand, ``f(x: ndarray) -> ndarray``.  Never evaluated at
        cell endpoints.
    edges : array_like
        Strictly increasing partition.
    atol, rtol : float
        A cell is accepted when its error is below ``atol + rtol * |value|``,
        below its share ``rtol * total / n`` of the whole integral, or at the
        level of rounding in its own integrand.

    Returns
    -------
    values, errors : ndarray
        One entry per cell.  ``errors`` is the absolute discrepancy between
        the 20-point result and the 10-point result, summed over sub-cells.
    """
    edges = np.asarray(edges, dtype=float)
    n = edges.size - 1
    values = np.zeros(n)
    errors = np.zeros(n)
    owner = np.arange(n)
    left = edges[:-1].copy()
    right = edges[1:].copy()
    share = None
    for _ in range(max_depth):
        if owner.size == 0:
            break
        hi, hi_abs = _rule(f, left, right, _HI_X, _HI_W, with_abs=True)
        lo = _rule(f, left, right, _LO_X, _LO_W)
        err = np.abs(hi - lo)
        if share is None:
            total = np.sum(np.abs(hi[np.isfinite(hi)]))
            share = rtol * total / max(n, 1)
        ok = err <= atol + rtol * np.abs(hi)
        ok |= err <= share
        ok |= err <= 1e3 * np.finfo(float).eps * hi_abs
        ok |= ~np.isfinite(hi)
        if owner.size > MAX_ACTIVE_CELLS:
            ok[:] = True
        np.add.at(values, owner[ok], hi[ok])
        np.add.at(errors, owner[ok], err[ok])
        bad = ~ok
        mid = 0.5 * (left[bad] + right[bad])
        owner = np.concatenate([owner[bad], owner[bad]])
        left, right = np.concatenate([left[bad], mid]), np.concatenate([mid, right[bad]])
    if owner.size:
        # depth exhausted: keep the last estimate and report its error
        hi = _rule(f, left, right, _HI_X, _HI_W)
        lo = _rule(f, left, right, _LO_X, _LO_W)
        np.add.at(values, owner, hi)
        np.add.at(errors, owner, np.abs(hi - lo))
    return values, errors


def endpoint_integral(f, lo, hi, tol=1e-12):
    """QUADPACK integral on a single cell that may have an endpoint singularity."""
    val, err = integrate.quad(lambda x: float(np.asarray(f(np.array([x])))[0]),
                              lo, hi, epsabs=tol, epsrel=tol, limit=200)
    return val, err


@dataclass(frozen=True)
class ImproperIntegral:
    """Result of :func:`dyadic_integral`.

    ``value`` is the partial sum plus the geometric tail estimate, ``error``
    the quadrature error plus the tail estimate, ``finite`` the convergence
    verdict and ``panels`` the number of dyadic panels used.
    """

    value: float
    error: float
    finite: bool
    panels: int
    truncated: bool = False


def dyadic_integral(f, x0, toward, tol=1e-8, limit=None, floor=0.0, max_panels=400, min_panels=8):
    """Improper integral of ``f`` from ``x0`` toward ``0`` or ``inf``.

    Panels double (``toward='inf'``) or halve (``toward='zero'``) in size.
    The integral is declared divergent when the partial sum exceeds
    :data:`DIVERGENCE_BOUND` or when the last four panel contributions do not
    decay geometrically; it is declared finite once the geometric tail
    estimate drops below ``tol * (1 + |sum|)``.  ``limit`` caps the upper end
    for ``toward='inf'``; reaching it marks the result ``truncated`` and the
    last panel's contribution is reported as truncation error.  ``floor`` is
    the smallest admissible abscissa for ``toward='zero'``; when it is reached
    the verdict falls back to the ratio test on the last panels.
    """
    if toward not in ("inf", "zero"):
        raise ValueError("toward must be 'inf' or 'zero'")
    total = 0.0
    qerr = 0.0
    contrib = []
    lo = x0
    for k in range(max_panels):
        if toward == "inf":
            a, b = lo, 2.0 * lo
            if limit is not None and b >= limit:
                b = limit
        else:
            a, b = 0.5 * lo, lo
        val, err = cell_integrals(f, np.array([a, b]), atol=0.0, rtol=tol * 1e-2)
        if not np.isfinite(val[0]):
            return ImproperIntegral(np.inf, np.inf, False, k + 1)
        total += val[0]
        qerr += err[0]
        contrib.append(abs(val[0]))
        lo = b if toward == "inf" else a
        if abs(total) > DIVERGENCE_BOUND:
            return ImproperIntegral(np.inf, np.inf, False, k + 1)
        if toward == "inf" and limit is not None and b >= limit:
            # the capped last panel is shorter than a full doubling; judge on the ones before
            full = np.array(contrib[-5:-1])
            growing = full.size >= 4 and np.min(full[1:] / np.maximum(full[:-1], 1e-300)) >= 0.999
            return ImproperIntegral(total, qerr + contrib[-1], not growing, k + 1, truncated=True)
        if toward == "zero" and 0.5 * a < max(floor, 1e-300):
            break
        if len(contrib) >= min_panels:
            last = np.array(contrib[-4:])
            if np.all(last == 0.0):
                return ImproperIntegral(total, qerr, True, k + 1)
            ratios = last[1:] / np.maximum(last[:-1], 1e-300)
            r = float(np.max(ratios))
            if r < 0.999:
                tail = last[-1] * r / (1.0 - r)
                if tail <= tol * (1.0 + abs(total)):
                    return ImproperIntegral(total + tail, qerr + tail, True, k + 1)
            elif np.min(ratios) >= 0.999 and len(contrib) >= 3 * min_panels:
                return ImproperIntegral(np.inf, np.inf, False, k + 1)
    if len(contrib) < 4:
        raise NumericalFailure(
            f"improper integral from {x0} toward {toward}: too few panels to decide",
            partial=ImproperIntegral(total, np.inf, False, len(contrib)),
        )
    last = np.array(contrib[-4:])
    ratios = last[1:] / np.maximum(last[:-1], 1e-300)
    r = float(np.max(ratios))
    if r < 0.999:
        tail = last[-1] * r / (1.0 - r)
        return ImproperIntegral(total + tail, qerr + tail, True, len(contrib))
    return ImproperIntegral(np.inf, np.inf, False, len(contrib))
