"""Euler-Maruyama simulation of the island diffusion with absorption at 0.

One step is

    y' = max(0, y + (-a(y) + h(y)) dt + sqrt(2 g(y) dt) N(0, 1)),

and the path is absorbed once ``y' <= absorb_eps`` with
``absorb_eps = 1e-9 * max(1, y0)``.  :func:`simulate_path` returns a single
recorded path; :func:`simulate_paths` runs a vectorised ensemble in blocks
and accumulates hitting times, path integrals and samples on the fly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as rng_mod
from .coeffs import CoefficientSet
from .errors import DomainError
from .export import atomic_write, csv_text, json_text

ABSORB_REL = 1e-9


def absorb_eps(y0: float) -> float:
    return ABSORB_REL * max(1.0, float(y0))


def y_step(coeffs: CoefficientSet, y, dt, z):
    """One clamped Euler step for ``Y``."""
    noise = np.sqrt(np.maximum(2.0 * coeffs.g(y) * dt, 0.0))
    return np.maximum(y + coeffs.drift(y) * dt + noise * z, 0.0)


# ---------------------------------------------------------------------------
# weights for path integrals

@dataclass(frozen=True)
class Plain:
    """Weight 1."""

    def __call__(self, t):
        return np.ones_like(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class TimeWeighted:
    """Weight ``t``."""

    def __call__(self, t):
        return np.asarray(t, dtype=float)


@dataclass(frozen=True)
class ExpAlpha:
    """Weight ``exp(-alpha t)``."""

    alpha: float

    def __call__(self, t):
        return np.exp(-self.alpha * np.asarray(t, dtype=float))


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionPath:
    """A path on the grid ``t_k = k dt``.

    ``values`` stops at the absorption step (whose value is 0); the path is 0
    from then on.  Otherwise it has ``ceil(horizon/dt) + 1`` entries.
    """

    dt: float
    values: np.ndarray
    horizon: float
    absorption_time: Optional[float] = None
    rng_stream_id: tuple = ()

    @property
    def times(self):
        return self.dt * np.arange(self.values.size)

    def value_at(self, t):
        """Value at grid time nearest below ``t`` (0 after absorption)."""
        k = np.floor(np.asarray(t, dtype=float) / self.dt + 1e-9).astype(int)
        return np.where(k < self.values.size, self.values[np.minimum(k, self.values.size - 1)], 0.0)


def first_hitting(path: DiffusionPath, b: float) -> Optional[float]:
    """First grid time with ``value >= b``, or ``None``."""
    if b <= 0:
        raise DomainError("level must be positive")
    idx = np.flatnonzero(path.values >= b)
    return float(idx[0] * path.dt) if idx.size else None


def path_functional(path: DiffusionPath, f: Callable, weight=Plain()) -> float:
    """Trapezoid approximation of ``int f(chi_t) w(t) dt`` up to absorption or the horizon."""
    if path.values.size < 2:
        return 0.0
    t = path.times
    vals = np.asarray(f(path.values), dtype=float) * weight(t)
    return float(0.5 * path.dt * np.sum(vals[1:] + vals[:-1]))


def simulate_path(coeffs: CoefficientSet, y0: float, dt: float, horizon: float,
                  stream: tuple = (0, 0)) -> DiffusionPath:
    """Simulate one path; ``stream = (seed, stream_id)``."""
    seed, sid = stream
    ens = simulate_paths(coeffs, y0, dt, horizon, 1, seed=seed, stream=sid, record=True)
    return ens.paths[0]


@dataclass
class PathEnsemble:
    """Outcome of :func:`simulate_paths`.

    ``absorption_times`` and ``hit_times[b]`` are NaN where the event did not
    occur; ``integrals[(f, weight)]`` holds the per-path trapezoid integrals and
    ``samples`` the states at ``sample_times`` (shape ``(len(times), n)``).
    """

    coeffs: CoefficientSet
    y0: float
    dt: float
    horizon: float
    seed: int
    stream: int
    absorption_times: np.ndarray
    hit_times: dict = field(default_factory=dict)
    integrals: dict = field(default_factory=dict)
    sample_times: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None
    paths: Optional[list] = None

    @property
    def n_paths(self) -> int:
        return self.absorption_times.size

    def hit_before_absorption(self, b: float) -> np.ndarray:
        h = self.hit_times[b]
        a = np.where(np.isnan(self.absorption_times), np.inf, self.absorption_times)
        return ~np.isnan(h) & (h <= a)

    def metadata(self) -> dict:
        return {"seed": self.seed, "stream": self.stream, "dt": self.dt, "horizon": self.horizon,
                "y0": self.y0, "n_paths": self.n_paths, "coeffs": self.coeffs.to_dict()}


def _run_block(coeffs, y0, dt, n_steps, n, gen, levels, functionals, sample_steps, record,
               bridge_gen=None):
    eps = absorb_eps(y0)
    y = np.full(n, float(y0))
    absorbed = np.full(n, np.nan)
    hits = {b: np.where(y >= b, 0.0, np.nan) for b in levels}
    integ = {key: np.zeros(n) for key in functionals}
    samples = np.zeros((len(sample_steps), n))
    step_slot = {s: j for j, s in enumerate(sample_steps)}
    if 0 in step_slot:
        samples[step_slot[0]] = y
    rec = [y.copy()] if record else None
    if y0 <= eps:
        absorbed[:] = 0.0
        alive = np.arange(0)
        y[:] = 0.0
    else:
        alive = np.arange(n)
    prev = {(f, w): f(y) * w(0.0) for f, w in functionals}
    for k in range(n_steps):
        if alive.size == 0:
            break
        t1 = (k + 1) * dt
        yn = y_step(coeffs, y[alive], dt, gen.standard_normal(alive.size))
        dead = yn <= eps
        yn[dead] = 0.0
        for key in functionals:
            f, w = key
            cur = np.asarray(f(yn), dtype=float) * w(t1)
            integ[key][alive] += 0.5 * dt * (prev[key] + cur)
            prev[key] = cur[~dead]
        if hits and bridge_gen is not None:
            u = bridge_gen.random(alive.size)
            two_g = 2.0 * coeffs.g(y[alive]) * dt
        for b, h in hits.items():
            crossed = yn >= b
            if bridge_gen is not None:
                gap = np.maximum(b - y[alive], 0.0) * np.maximum(b - yn, 0.0)
                with np.errstate(divide="ignore", invalid="ignore"):
                    crossed |= u < np.exp(-2.0 * gap / two_g)
            new = crossed & np.isnan(h[alive])
            h[alive[new]] = t1
        y[alive] = yn
        absorbed[alive[dead]] = t1
        if k + 1 in step_slot:
            samples[step_slot[k + 1], alive] = yn
        if record:
            rec.append(y.copy())
        alive = alive[~dead]
    return absorbed, hits, integ, samples, (np.array(rec) if record else None)


def simulate_paths(coeffs: CoefficientSet, y0: float, dt: float, horizon: float, n_paths: int,
                   seed: int, stream: int = 0, levels: Sequence[float] = (),
                   functionals: Sequence[tuple] = (), sample_times=None, record: bool = False,
                   hit_rule: str = "bridge", block_size: int = rng_mod.BLOCK_SIZE, workers: int = 1) -> PathEnsemble:
    """Vectorised ensemble of independent paths from ``y0``.

    Parameters
    ----------
    levels : sequence of float
        Levels whose first hitting times are recorded.
    hit_rule : {'bridge', 'grid'}
        ``'grid'`` counts a hit only when a grid value reaches the level.
        ``'bridge'`` also counts a crossing inside a step with the Brownian
        bridge probability ``exp(-2 (b - y_k)(b - y_{k+1}) / (2 g(y_k) dt))``,
        which removes the O(sqrt(dt)) bias of grid monitoring.  Uniforms come
        from a separate stream, so the paths are the same under both rules.
    functionals : sequence of ``(f, weight)``
        Per-path trapezoid integrals of ``f(Y_t) w(t)`` up to absorption or
        the horizon, stored in ``integrals[(f, weight)]``.
    sample_times : array_like, optional
        Times (rounded to the grid) at which states are stored.
    record : bool
        Keep full paths (memory ``n_paths * horizon/dt``; for small ensembles).
    workers : int
        Threads used over blocks.  Output does not depend on it.
    """
    if y0 < 0:
        raise DomainError("y0 must be nonnegative")
    if hit_rule not in ("bridge", "grid"):
        raise ValueError("hit_rule must be 'bridge' or 'grid'")
    if not (dt > 0 and horizon > 0):
        raise DomainError("dt and horizon must be positive")
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    functionals = list(dict.fromkeys(functionals))
    sample_times = None if sample_times is None else np.asarray(sample_times, dtype=float)
    sample_steps = [] if sample_times is None else [int(round(t / dt)) for t in sample_times]

    def job(task):
        bi, lo, hi = task
        gen = rng_mod.stream(seed, rng_mod.PATHS, stream, bi)
        bridge = rng_mod.stream(seed, rng_mod.PATHS, stream, bi, 1) if hit_rule == "bridge" else None
        return _run_block(coeffs, y0, dt, n_steps, hi - lo, gen, levels, functionals, sample_steps,
                          record, bridge)

    parts = rng_mod.run_blocks(job, rng_mod.blocks(n_paths, block_size), workers)
    ens = PathEnsemble(
        coeffs=coeffs, y0=float(y0), dt=dt, horizon=horizon, seed=seed, stream=stream,
        absorption_times=np.concatenate([p[0] for p in parts]),
        hit_times={b: np.concatenate([p[1][b] for p in parts]) for b in levels},
        integrals={k: np.concatenate([p[2][k] for p in parts]) for k in functionals},
        sample_times=sample_times,
        samples=np.concatenate([p[3] for p in parts], axis=1) if sample_times is not None else None,
    )
    if record:
        ens.paths = []
        pid = 0
        for p in parts:
            mat = p[4]
            for j in range(mat.shape[1]):
                t_abs = ens.absorption_times[pid]
                stop = mat.shape[0] if np.isnan(t_abs) else int(round(t_abs / dt)) + 1
                ens.paths.append(DiffusionPath(dt=dt, values=mat[:stop, j].copy(), horizon=horizon,
                                               absorption_time=None if np.isnan(t_abs) else float(t_abs),
                                               rng_stream_id=(seed, stream, pid)))
                pid += 1
    return ens


def mean_with_se(x) -> tuple[float, float]:
    """Sample mean and its standard error."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else 0.0, math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def paths_csv(paths: Sequence[DiffusionPath]) -> str:
    """CSV with columns ``path_id, t, value``."""
    rows = ((i, t, v) for i, p in enumerate(paths) for t, v in zip(p.times, p.values))
    return csv_text(["path_id", "t", "value"], rows)


def write_paths(ens: PathEnsemble, csv_path, meta_path=None):
    """Write recorded paths and a JSON sidecar with run metadata."""
    if ens.paths is None:
        raise ValueError("ensemble was run without record=True")
    atomic_write(csv_path, paths_csv(ens.paths))
    if meta_path is not None:
        atomic_write(meta_path, json_text(ens.metadata()))
