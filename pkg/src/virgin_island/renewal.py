"""Renewal equations ``m(t) = f(t) + int_0^t m(t - s) mu(ds)`` on a uniform grid.

``mu(ds)`` is given by its density on the same grid as ``f``.  The
convolution uses the trapezoid rule; the ``s = 0`` end of each convolution
involves the unknown ``m(t_i)`` itself and is moved to the left-hand side.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, PreconditionError
from .export import atomic_write, csv_text


@dataclass(frozen=True)
class RenewalInput:
    """``f`` and the density ``mu`` sampled at ``t_i = i dt``, ``i = 0..n``."""

    f: np.ndarray
    mu: np.ndarray
    dt: float

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "mu", mu)
        if f.ndim != 1 or f.shape != mu.shape or f.size < 2:
            raise DomainError("f and mu must be aligned 1-d curves with at least two points")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if np.any(f < 0) or np.any(mu < 0) or not (np.all(np.isfinite(f)) and np.all(np.isfinite(mu))):
            raise DomainError("f and mu must be finite and nonnegative")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.f.size)

    @property
    def horizon(self) -> float:
        return self.dt * (self.f.size - 1)


def solve_renewal(inp: RenewalInput) -> np.ndarray:
    """Trapezoid solution ``m`` on the input grid, with ``m(0) = f(0)``.

    For ``i >= 1``::

        m_i (1 - dt mu_0 / 2) = f_i + dt (sum_{j=1}^{i-1} mu_j m_{i-j} + mu_i m_0 / 2)
    """
    f, mu, dt = inp.f, inp.mu, inp.dt
    n = f.size
    lead = 1.0 - 0.5 * dt * mu[0]
    if lead <= 0:
        raise DomainError("mu(0) dt is too large for the implicit first cell")
    m = np.empty(n)
    m[0] = f[0]
    for i in range(1, n):
        conv = mu[1:i] @ m[i - 1:0:-1] + 0.5 * mu[i] * m[0]
        m[i] = (f[i] + dt * conv) / lead
    return m


def _trapz(y, dt):
    return float(dt * (np.sum(y) - 0.5 * (y[0] + y[-1])))


@dataclass(frozen=True)
class AsymptoticRatios:
    """``tail_ratio``: mean of ``e^{-alpha t} m(t)`` over the last tenth of the grid.
    ``predicted``: ``int e^{-alpha s} f(s) ds / int s e^{-alpha s} mu(ds)``."""

    tail_ratio: float
    predicted: float
    gap: float


def asymptotic_ratios(m, alpha: float, inp: RenewalInput) -> AsymptoticRatios:
    """Compare ``e^{-alpha t} m(t)`` at large ``t`` with the renewal-theorem limit."""
    if not alpha > 0:
        raise PreconditionError("alpha must be positive (supercritical input)")
    t = inp.times
    disc = np.exp(-alpha * t)
    tail = slice(int(0.9 * t.size), None)
    ratio = float(np.mean(disc[tail] * np.asarray(m)[tail]))
    pred = _trapz(disc * inp.f, inp.dt) / _trapz(t * disc * inp.mu, inp.dt)
    return AsymptoticRatios(ratio, pred, abs(ratio - pred) / abs(pred))


def critical_ratios(m, inp: RenewalInput) -> AsymptoticRatios:
    """``(1/T) int_0^T m`` against ``int f / int s mu(ds)`` (for ``int mu = 1``).

    The prediction is 0 when the denominator is infinite, which a finite
    grid cannot show; the caller should use a horizon well beyond the mean of ``mu``.
    """
    avg = _trapz(np.asarray(m, dtype=float), inp.dt) / inp.horizon
    pred = _trapz(inp.f, inp.dt) / _trapz(inp.times * inp.mu, inp.dt)
    return AsymptoticRatios(avg, pred, abs(avg - pred) / abs(pred))


# ---------------------------------------------------------------------------
# curves as CSV

def curve_csv(times, values) -> str:
    return csv_text(["t", "value"], zip(times, values))


def write_curve(path, times, values):
    atomic_write(path, curve_csv(times, values))


def read_curve(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``t, <value>`` CSV with a header row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise DomainError(f"{path}: need a header and at least two rows")
    data = np.array([[float(r[0]), float(r[1])] for r in rows[1:]])
    return data[:, 0], data[:, 1]


def input_from_curves(f_times, f_vals, mu_times, mu_vals) -> RenewalInput:
    """Build a :class:`RenewalInput`, checking that the grids are uniform, start at 0 and agree."""
    f_times, mu_times = np.asarray(f_times, dtype=float), np.asarray(mu_times, dtype=float)
    if f_times.shape != mu_times.shape or not np.allclose(f_times, mu_times, rtol=0, atol=1e-9):
        raise DomainError("f and mu grids differ")
    dt = f_times[1] - f_times[0]
    if abs(f_times[0]) > 1e-12 or not np.allclose(np.diff(f_times), dt, rtol=1e-6, atol=1e-12):
        raise DomainError("the grid must be uniform and start at 0")
    return RenewalInput(f=np.maximum(f_vals, 0.0), mu=np.maximum(mu_vals, 0.0), dt=float(dt))


def read_input(f_path, mu_path) -> RenewalInput:
    return input_from_curves(*read_curve(f_path), *read_curve(mu_path))


def geometric_series(t, c: float, tau: float, rate: float = 1.0) -> np.ndarray:
    """``sum_{k: k tau <= t} c^k e^{-rate (t - k tau)}``: solution for ``f = e^{-rate t}``, ``mu = c delta_tau``."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for k in range(int(math.floor(t.max() / tau + 1e-9)) + 1):
        s = t - k * tau
        out += np.where(s >= -1e-12, c ** k * np.exp(-rate * np.maximum(s, 0.0)), 0.0)
    return out
