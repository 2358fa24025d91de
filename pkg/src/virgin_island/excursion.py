"""Sampling the excursion measure restricted to excursions that reach ``epsilon``.

The excursions of ``Y`` away from 0 that reach level ``epsilon`` carry total
mass ``1/S(epsilon)``.  Normalised to a probability they are sampled in two
stages:

1. the diffusion conditioned to avoid 0 (Doob transform by ``S``), whose
   drift is ``-a + h + 2 g s/S``, run from ``start_eps = 1e-3 * epsilon``
   until it first reaches ``epsilon``;
2. the unconditioned diffusion from there until absorption or the horizon.

Monte Carlo averages are multiplied by ``weight = 1/S(epsilon)`` to give
integrals against the excursion measure.  Excursions that stay below
``epsilon`` are never produced; :func:`epsilon_sweep` removes that bias by
extrapolating in ``epsilon``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as rng_mod
from .diffusion import DiffusionPath, Plain, ExpAlpha, absorb_eps, path_functional, y_step
from .errors import DomainError, NumericalFailure
from .export import atomic_write, csv_text, json_text
from .scale import ScaleTable

START_FACTOR = 1e-3
RETRY_CAP = 100


def up_drift(table: ScaleTable, y):
    """Drift of the diffusion conditioned never to hit 0: ``-a + h + 2 g s/S``."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("the conditioned drift is defined for y > 0")
    c = table.coeffs
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(table.log_s(y)) / table.S(y)
    return c.drift(y) + 2.0 * c.g(y) * ratio


def up_step(table: ScaleTable, y, dt, z):
    """Euler step of the conditioned diffusion, reflected at 0."""
    c = table.coeffs
    noise = np.sqrt(np.maximum(2.0 * c.g(y) * dt, 0.0))
    return np.abs(y + up_drift(table, y) * dt + noise * z)


@dataclass(frozen=True)
class Excursion:
    """One sampled excursion of the ``epsilon``-reaching class.

    ``path`` starts at ``start_eps`` at time 0; ``t_eps`` is the first grid
    time at or above ``epsilon``, where the state is set to ``epsilon``; ``lifetime`` the absorption time (``None``
    if ``truncated``).
    """

    epsilon: float
    path: DiffusionPath
    t_eps: float
    lifetime: Optional[float]
    weight: float
    truncated: bool = False


@dataclass
class ExcursionSet:
    """A batch of excursions sharing ``epsilon``.

    Online results: ``integrals[(f, weight)]`` per excursion, ``samples``
    of the state at ``sample_times`` (shape ``(len(times), n)``),
    ``maxima``, ``t_eps`` and ``lifetimes`` (NaN if truncated).
    ``excursions`` is filled only when recorded.
    """

    epsilon: float
    weight: float
    dt: float
    horizon: float
    seed: int
    stream: int
    maxima: np.ndarray
    t_eps: np.ndarray
    lifetimes: np.ndarray
    retries: int = 0
    integrals: dict = field(default_factory=dict)
    sample_times: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None
    excursions: Optional[list] = None

    def __len__(self):
        return self.maxima.size

    def metadata(self) -> dict:
        return {"epsilon": self.epsilon, "weight": self.weight, "seed": self.seed, "stream": self.stream,
                "dt": self.dt, "horizon": self.horizon, "n": len(self), "retries": self.retries}


def _excursion_block(table, epsilon, start, dt, n_steps, n, gen, functionals, sample_steps, record,
                     retry_cap):
    c = table.coeffs
    eps_abs = absorb_eps(epsilon)
    y = np.full(n, start)
    up = np.ones(n, dtype=bool)
    k = np.zeros(n, dtype=np.int64)
    attempt = np.zeros(n, dtype=np.int64)
    t_eps = np.full(n, np.nan)
    life = np.full(n, np.nan)
    ymax = np.full(n, start)
    integ = {key: np.zeros(n) for key in functionals}
    prev = {(f, w): np.asarray(f(y), dtype=float) * w(0.0) for f, w in functionals}
    slot_of = np.full(n_steps + 1, -1)
    for j, s in enumerate(sample_steps):
        if s <= n_steps:
            slot_of[s] = j
    samples = np.zeros((len(sample_steps), n))
    if slot_of[0] >= 0:
        samples[slot_of[0]] = y
    rec = [(np.arange(n), attempt.copy(), k.copy(), y.copy())] if record else None
    alive = np.arange(n)
    retries = 0
    while alive.size:
        ya = y[alive]
        z = gen.standard_normal(alive.size)
        ua = up[alive]
        yn = np.empty_like(ya)
        if ua.any():
            yn[ua] = up_step(table, ya[ua], dt, z[ua])
        if (~ua).any():
            yn[~ua] = y_step(c, ya[~ua], dt, z[~ua])
        dead = ~ua & (yn <= eps_abs)
        yn[dead] = 0.0
        # the continuous path enters the Y phase exactly at epsilon
        reached = ua & (yn >= epsilon)
        yn[reached] = epsilon
        k[alive] += 1
        ka = k[alive]
        t1 = ka * dt
        for key in functionals:
            f, w = key
            cur = np.asarray(f(yn), dtype=float) * w(t1)
            integ[key][alive] += 0.5 * dt * (prev[key] + cur)
            prev[key] = cur
        t_eps[alive[reached]] = t1[reached]
        up[alive[reached]] = False
        y[alive] = yn
        ymax[alive] = np.maximum(ymax[alive], yn)
        slots = slot_of[ka]
        hit = slots >= 0
        samples[slots[hit], alive[hit]] = yn[hit]
        life[alive[dead]] = t1[dead]
        if record:
            rec.append((alive.copy(), attempt[alive].copy(), ka.copy(), yn.copy()))
        out_of_time = ka >= n_steps
        redo = out_of_time & up[alive]
        if redo.any():
            ids = alive[redo]
            attempt[ids] += 1
            retries += ids.size
            if np.any(attempt[ids] > retry_cap):
                raise NumericalFailure(f"conditioned diffusion did not reach epsilon={epsilon} within "
                                       f"the horizon after {retry_cap} retries")
            y[ids], k[ids], ymax[ids] = start, 0, start
            for key in functionals:
                integ[key][ids] = 0.0
                prev[key][np.flatnonzero(redo)] = np.asarray(key[0](y[ids]), dtype=float) * key[1](0.0)
            samples[:, ids] = 0.0
            if slot_of[0] >= 0:
                samples[slot_of[0], ids] = start
            if record:
                rec.append((ids.copy(), attempt[ids].copy(), k[ids].copy(), y[ids].copy()))
        keep = ~dead & ~(out_of_time & ~redo)
        for key in functionals:
            prev[key] = prev[key][keep]
        alive = alive[keep]
    paths = None
    if record:
        ids = np.concatenate([r[0] for r in rec])
        att = np.concatenate([r[1] for r in rec])
        ks = np.concatenate([r[2] for r in rec])
        vals = np.concatenate([r[3] for r in rec])
        final = att == attempt[ids]
        ids, ks, vals = ids[final], ks[final], vals[final]
        order = np.lexsort((ks, ids))
        ids, vals = ids[order], vals[order]
        cuts = np.searchsorted(ids, np.arange(1, n))
        paths = np.split(vals, cuts)
    return t_eps, life, ymax, integ, samples, paths, retries


def sample_excursions(table: ScaleTable, epsilon: float, dt: float, horizon: float, n: int, seed: int,
                      stream: int = 0, functionals: Sequence[tuple] = (), sample_times=None,
                      record: bool = False, start_factor: float = START_FACTOR,
                      retry_cap: int = RETRY_CAP, block_size: int = rng_mod.BLOCK_SIZE,
                      workers: int = 1) -> ExcursionSet:
    """Sample ``n`` excursions reaching ``epsilon``.

    Conditioned paths that fail to reach ``epsilon`` within the horizon are
    restarted on the same stream, at most ``retry_cap`` times each.

    Parameters
    ----------
    functionals : sequence of ``(f, weight)``
        Integrals ``int f(chi_t) w(t) dt`` accumulated per excursion.
    sample_times : array_like, optional
        Times at which the state of every excursion is stored.
    record : bool
        Keep every path (memory grows with ``n * lifetime/dt``).
    """
    if not 0 < epsilon < table.coeffs.domain_cap:
        raise DomainError("epsilon must lie in (0, domain_cap)")
    if not (dt > 0 and horizon > 0):
        raise DomainError("dt and horizon must be positive")
    weight = 1.0 / float(table.S(epsilon))
    start = start_factor * epsilon
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    functionals = list(dict.fromkeys(functionals))
    sample_times = None if sample_times is None else np.asarray(sample_times, dtype=float)
    sample_steps = [] if sample_times is None else [int(round(t / dt)) for t in sample_times]

    def job(task):
        bi, lo, hi = task
        gen = rng_mod.stream(seed, rng_mod.EXCURSIONS, stream, bi)
        return _excursion_block(table, epsilon, start, dt, n_steps, hi - lo, gen, functionals,
                                sample_steps, record, retry_cap)

    parts = rng_mod.run_blocks(job, rng_mod.blocks(n, block_size), workers)
    cat = lambda j: np.concatenate([p[j] for p in parts])
    es = ExcursionSet(
        epsilon=epsilon, weight=weight, dt=dt, horizon=horizon, seed=seed, stream=stream,
        t_eps=cat(0), lifetimes=cat(1), maxima=cat(2),
        integrals={key: np.concatenate([p[3][key] for p in parts]) for key in functionals},
        sample_times=sample_times,
        samples=np.concatenate([p[4] for p in parts], axis=1) if sample_times is not None else None,
        retries=sum(p[6] for p in parts),
    )
    if record:
        es.excursions = []
        i = 0
        for p in parts:
            for vals in p[5]:
                life = es.lifetimes[i]
                path = DiffusionPath(dt=dt, values=vals, horizon=horizon,
                                     absorption_time=None if np.isnan(life) else float(life),
                                     rng_stream_id=(seed, stream, i))
                es.excursions.append(Excursion(epsilon=epsilon, path=path, t_eps=float(es.t_eps[i]),
                                               lifetime=path.absorption_time, weight=weight,
                                               truncated=bool(np.isnan(life))))
                i += 1
    return es


def sample_excursion(table: ScaleTable, epsilon: float, dt: float, horizon: float,
                     stream: tuple = (0, 0), **kwargs) -> Excursion:
    """One recorded excursion; ``stream = (seed, stream_id)``."""
    seed, sid = stream
    return sample_excursions(table, epsilon, dt, horizon, 1, seed, sid, record=True, **kwargs).excursions[0]


# ---------------------------------------------------------------------------
# estimators

def _as_set(samples):
    if isinstance(samples, ExcursionSet):
        return samples
    samples = list(samples)
    if not samples:
        raise DomainError("no excursions given")
    eps = {e.epsilon for e in samples}
    if len(eps) != 1:
        raise DomainError("excursions with different epsilon cannot be pooled")
    first = samples[0]
    return ExcursionSet(
        epsilon=first.epsilon, weight=first.weight, dt=first.path.dt, horizon=first.path.horizon,
        seed=-1, stream=-1, maxima=np.array([e.path.values.max() for e in samples]),
        t_eps=np.array([e.t_eps for e in samples]),
        lifetimes=np.array([np.nan if e.lifetime is None else e.lifetime for e in samples]),
        excursions=samples)


def excursion_integrals(samples, f: Callable, weight=Plain()) -> np.ndarray:
    """Per-excursion ``int f(chi_t) w(t) dt`` (precomputed or from recorded paths)."""
    es = _as_set(samples)
    key = (f, weight)
    if key in es.integrals:
        return es.integrals[key]
    if es.excursions is None:
        raise KeyError("functional was not accumulated and paths were not recorded")
    return np.array([path_functional(e.path, f, weight) for e in es.excursions])


def mc_q_functional(samples, f: Callable, m: int = 1, weight=Plain()) -> tuple[float, float]:
    """Estimate ``int (int f(chi_t) w(t) dt)**m dQ`` over the ``epsilon`` class.

    Returns ``(estimate, standard_error)``.
    """
    es = _as_set(samples)
    if len(es) == 0:
        raise DomainError("no excursions given")
    vals = excursion_integrals(es, f, weight) ** m
    est = es.weight * float(vals.mean())
    se = es.weight * float(vals.std(ddof=1)) / math.sqrt(vals.size) if vals.size > 1 else math.inf
    return est, se


def estimate_fQ_curve(samples, f: Callable, times) -> np.ndarray:
    """Rows ``(t, estimate, se)`` of ``int f(chi_t) dQ`` over the ``epsilon`` class."""
    es = _as_set(samples)
    if len(es) == 0:
        raise DomainError("no excursions given")
    times = np.asarray(times, dtype=float)
    if es.samples is not None and es.sample_times is not None and np.array_equal(times, es.sample_times):
        states = es.samples
    elif es.excursions is not None:
        states = np.array([e.path.value_at(times) for e in es.excursions]).T
    else:
        raise KeyError("states at these times were neither sampled nor recorded")
    vals = np.asarray(f(states), dtype=float)
    n = vals.shape[1]
    est = es.weight * vals.mean(axis=1)
    se = es.weight * vals.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.full(times.size, np.inf)
    return np.column_stack([times, est, se])


@dataclass(frozen=True)
class AAlphaStats:
    mean: float
    mean_se: float
    xlogx: float
    xlogx_se: float


def estimate_A_alpha_stats(samples, alpha: float, a: Optional[Callable] = None) -> AAlphaStats:
    """Weighted estimates of ``int A dQ`` and ``int A log+(A) dQ``, ``A = int e^{-alpha t} a(chi_t) dt``."""
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    es = _as_set(samples)
    if a is None:
        raise ValueError("pass the emigration rate a")
    A = excursion_integrals(es, a, ExpAlpha(alpha)) if alpha > 0 else excursion_integrals(es, a, Plain())
    B = A * np.log(np.maximum(A, 1.0))
    n = A.size
    se = lambda v: es.weight * float(v.std(ddof=1)) / math.sqrt(n) if n > 1 else math.inf
    return AAlphaStats(es.weight * float(A.mean()), se(A), es.weight * float(B.mean()), se(B))


# ---------------------------------------------------------------------------
# epsilon sweep

@dataclass(frozen=True)
class Extrapolation:
    """Weighted least-squares polynomial fit in ``epsilon`` evaluated at 0."""

    value: float
    se: float
    epsilons: tuple
    estimates: tuple
    errors: tuple
    order: int


def extrapolate_to_zero(epsilons, estimates, errors, order: int = 1) -> Extrapolation:
    """Fit ``est(eps) = c0 + c1 eps + ...`` by weighted least squares; return ``c0``."""
    e = np.asarray(epsilons, dtype=float)
    y = np.asarray(estimates, dtype=float)
    s = np.asarray(errors, dtype=float)
    if e.size < order + 1:
        raise ValueError("need more epsilon values than the polynomial order")
    X = np.vander(e, order + 1, increasing=True) / s[:, None]
    beta, *_ = np.linalg.lstsq(X, y / s, rcond=None)
    cov = np.linalg.inv(X.T @ X)
    return Extrapolation(float(beta[0]), float(math.sqrt(cov[0, 0])), tuple(e), tuple(y), tuple(s), order)


def epsilon_sweep(table: ScaleTable, f: Callable, epsilons, dt, horizon: float, n: int, seed: int,
                  m: int = 1, weight=Plain(), order: int = 1, dt_scale: Optional[float] = None,
                  **kwargs) -> Extrapolation:
    """Estimate a Q-functional at each ``epsilon`` and extrapolate to ``epsilon = 0``.

    ``dt`` may be a number or a sequence matched to ``epsilons``.  ``n`` may
    likewise be a sequence.  With ``dt_scale`` the step at each ``epsilon`` is
    capped at ``dt_scale * epsilon``, which keeps the discretisation bias of
    the small-``epsilon`` runs in line with the large ones.
    """
    eps = list(epsilons)
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilon list must be strictly decreasing")
    dts = list(dt) if np.ndim(dt) else [dt] * len(eps)
    if dt_scale is not None:
        dts = [min(d, dt_scale * e) for d, e in zip(dts, eps)]
    ns = list(n) if np.ndim(n) else [n] * len(eps)
    ests, ses = [], []
    for i, (e, d, k) in enumerate(zip(eps, dts, ns)):
        es = sample_excursions(table, e, d, horizon, k, seed, stream=i, functionals=[(f, weight)], **kwargs)
        est, se = mc_q_functional(es, f, m, weight)
        ests.append(est)
        ses.append(se)
    return extrapolate_to_zero(eps, ests, ses, order)


# ---------------------------------------------------------------------------
# export

def excursions_csv(excursions: Sequence[Excursion]) -> str:
    rows = ((i, t, v) for i, e in enumerate(excursions) for t, v in zip(e.path.times, e.path.values))
    return csv_text(["excursion_id", "t", "value"], rows)


def write_excursions(es: ExcursionSet, csv_path, meta_path=None):
    if es.excursions is None:
        raise ValueError("excursions were not recorded")
    atomic_write(csv_path, excursions_csv(es.excursions))
    if meta_path is not None:
        atomic_write(meta_path, json_text(es.metadata()))
