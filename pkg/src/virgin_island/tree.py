"""Simulation of the island tree with ``epsilon``-thinned colonisation.

Every island carries a mass path.  The root path is the diffusion from
``x0`` (or an excursion).  While an island has mass ``y`` it founds new
islands at rate ``a(y)/S(epsilon)``, the emigration rate times the mass of
the excursions that reach ``epsilon``.  A new island starts its own
excursion: the conditioned diffusion from ``start_eps`` up to ``epsilon``,
then the free diffusion until absorption.

All islands of a block of trees advance together on the global grid
``t_k = k dt``.  During ``[t_k, t_{k+1})`` an island founds
``Poisson(a(y_k) dt / S(epsilon))`` children, born at ``t_{k+1}``.  Node ids
are assigned in birth order, ties broken by parent id, so a tree is the
same whatever the block schedule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as rng_mod
from .diffusion import DiffusionPath, absorb_eps, mean_with_se, y_step
from .errors import DomainError, ResourceLimitError
from .excursion import START_FACTOR, Excursion, up_step
from .export import atomic_write, csv_text, json_text
from .scale import ScaleTable

NODE_CAP = 1_000_000
DELTA_REL = 1e-3


# ---------------------------------------------------------------------------
# random characteristics

@dataclass(frozen=True)
class TotalMass:
    """``phi(t, chi) = chi_t``."""

    def __call__(self, path: DiffusionPath, ages):
        ages = np.asarray(ages, dtype=float)
        return np.where(ages >= 0, path.value_at(np.maximum(ages, 0.0)), 0.0)


@dataclass(frozen=True)
class Window:
    """``phi(t, chi) = chi_t`` for ``t <= t0``, else 0."""

    t0: float

    def __call__(self, path: DiffusionPath, ages):
        ages = np.asarray(ages, dtype=float)
        return np.where(ages <= self.t0, TotalMass()(path, ages), 0.0)


@dataclass(frozen=True)
class TailArea:
    """``phi(t, chi) = int_t^inf chi_s ds`` (trapezoid suffix sums on the path grid)."""

    def __call__(self, path: DiffusionPath, ages):
        ages = np.asarray(ages, dtype=float)
        v = path.values
        cells = 0.5 * path.dt * (v[1:] + v[:-1])
        suffix = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
        k = np.floor(np.maximum(ages, 0.0) / path.dt + 1e-9).astype(int)
        out = np.where(k < suffix.size, suffix[np.minimum(k, suffix.size - 1)], 0.0)
        return np.where(ages >= 0, out, 0.0)


# ---------------------------------------------------------------------------
# results

@dataclass(frozen=True)
class IslandNode:
    """One island: ``path`` is a :class:`DiffusionPath` for a diffusion root and
    an :class:`Excursion` otherwise.  Times in ``path`` are island ages."""

    id: int
    parent_id: Optional[int]
    birth_time: float
    generation: int
    path: object
    excursion_max: float
    lifetime: Optional[float]

    @property
    def mass_path(self) -> DiffusionPath:
        return self.path.path if isinstance(self.path, Excursion) else self.path


@dataclass
class IslandTree:
    """A simulated tree with its total-mass curve on the recording grid."""

    nodes: list
    epsilon: float
    horizon: float
    dt: float
    x0: float
    root: str
    times: np.ndarray
    mass: np.ndarray
    area: float
    seed: int = 0
    stream: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass
class TreeEnsemble:
    """Summary of many independent trees.

    ``mass[i, j]`` is ``V`` of tree ``i`` at ``times[j]``; ``area`` the
    trapezoid ``int_0^T V dt`` (up to the capping time for capped trees).
    ``capped_at`` is the time ``V`` first reached ``mass_cap`` (NaN if never);
    a capped tree is no longer simulated and counts as surviving.
    """

    x0: float
    epsilon: float
    dt: float
    horizon: float
    seed: int
    stream: int
    root: str
    mass_cap: float
    times: np.ndarray
    mass: np.ndarray
    area: np.ndarray
    capped_at: np.ndarray
    extinct_at: np.ndarray
    n_nodes: np.ndarray
    first_generation: np.ndarray

    @property
    def n_trees(self) -> int:
        return self.area.size

    def metadata(self) -> dict:
        return {"x0": self.x0, "epsilon": self.epsilon, "dt": self.dt, "horizon": self.horizon,
                "seed": self.seed, "stream": self.stream, "root": self.root,
                "mass_cap": self.mass_cap, "n_trees": self.n_trees}


# ---------------------------------------------------------------------------
# engine

class _Store:
    """Growable columns for island state."""

    FIELDS = (("tree", np.int64), ("node", np.int64), ("parent", np.int64), ("birth", np.int64),
              ("gen", np.int64), ("up", bool), ("y", float), ("ymax", float), ("t_eps", np.int64),
              ("death", np.int64))

    def __init__(self, capacity):
        self.n = 0
        self.cols = {name: np.zeros(capacity, dtype=dt) for name, dt in self.FIELDS}

    def __getattr__(self, name):
        cols = self.__dict__.get("cols")
        if cols is not None and name in cols:
            return cols[name]
        raise AttributeError(name)

    def append(self, **values):
        m = len(next(iter(values.values())))
        need = self.n + m
        if need > self.cols["y"].size:
            cap = max(need, 2 * self.cols["y"].size)
            for name, col in self.cols.items():
                grown = np.zeros(cap, dtype=col.dtype)
                grown[:self.n] = col[:self.n]
                self.cols[name] = grown
        for name, v in values.items():
            self.cols[name][self.n:need] = v
        idx = np.arange(self.n, need)
        self.n = need
        return idx


def _grow(table, x0, epsilon, dt, n_steps, n_trees, gen, root, start, mass_cap, node_cap,
          stride, record):
    c = table.coeffs
    inv_S = 1.0 / float(table.S(epsilon))
    eps_abs = absorb_eps(max(x0, epsilon))
    st = _Store(max(4 * n_trees, 64))
    root_up = root == "excursion"
    y0 = start if root_up else float(x0)
    idx = st.append(tree=np.arange(n_trees), node=0, parent=-1, birth=0, gen=0, up=root_up,
                    y=y0, ymax=y0, t_eps=0 if not root_up else -1, death=-1)
    n_nodes = np.ones(n_trees, dtype=np.int64)
    gen1 = np.zeros(n_trees, dtype=np.int64)
    n_rec = n_steps // stride + 1
    mass = np.zeros((n_trees, n_rec))
    area = np.zeros(n_trees)
    capped_at = np.full(n_trees, -1, dtype=np.int64)
    extinct_at = np.full(n_trees, -1, dtype=np.int64)
    rec = [] if record else None
    if not root_up and y0 <= eps_abs:
        st.death[idx] = 0
        st.y[idx] = 0.0
        alive = np.arange(0)
        extinct_at[:] = 0
    else:
        alive = idx
    v_prev = np.bincount(st.tree[alive], weights=st.y[alive], minlength=n_trees)
    mass[:, 0] = v_prev
    if record:
        rec.append((alive.copy(), np.zeros(alive.size, dtype=np.int64), st.y[alive].copy()))

    def snapshot(k):
        # the loop may stop early once every tree is finished; blank capped trees to the end
        capped = capped_at >= 0
        if capped.any():
            steps = stride * np.arange(n_rec)
            mass[capped[:, None] & (steps[None, :] >= capped_at[:, None])] = np.nan
        return _Result(st, k, n_nodes, mass, area, capped_at, extinct_at, gen1, rec)

    for k in range(n_steps):
        if alive.size == 0:
            break
        k1 = k + 1
        ya = st.y[alive]
        ua = st.up[alive]
        z = gen.standard_normal(alive.size)
        births = gen.poisson(np.asarray(c.a(ya), dtype=float) * dt * inv_S)
        yn = np.empty_like(ya)
        if ua.any():
            yn[ua] = up_step(table, ya[ua], dt, z[ua])
        if (~ua).any():
            yn[~ua] = y_step(c, ya[~ua], dt, z[~ua])
        reached = ua & (yn >= epsilon)
        yn[reached] = epsilon
        dead = ~ua & (yn <= eps_abs)
        yn[dead] = 0.0
        st.y[alive] = yn
        st.up[alive[reached]] = False
        st.t_eps[alive[reached]] = k1
        st.ymax[alive] = np.maximum(st.ymax[alive], yn)
        st.death[alive[dead]] = k1
        if record:
            rec.append((alive.copy(), np.full(alive.size, k1, dtype=np.int64), yn.copy()))
        parents = np.repeat(alive, births)
        alive = alive[~dead]
        if parents.size:
            trees = st.tree[parents]
            order = np.argsort(trees, kind="stable")
            parents, trees = parents[order], trees[order]
            first = np.searchsorted(trees, trees, side="left")
            ids = n_nodes[trees] + np.arange(trees.size) - first
            np.add.at(n_nodes, trees, 1)
            gens = st.gen[parents] + 1
            np.add.at(gen1, trees[gens == 1], 1)
            born = st.append(tree=trees, node=ids, parent=st.node[parents], birth=k1, gen=gens,
                             up=True, y=start, ymax=start, t_eps=-1, death=-1)
            if record:
                rec.append((born, np.full(born.size, k1, dtype=np.int64), np.full(born.size, start)))
            alive = np.concatenate([alive, born])
            if n_nodes.max() > node_cap:
                raise ResourceLimitError(f"a tree exceeded the node cap of {node_cap}",
                                         partial=snapshot(k1))
        v_new = np.bincount(st.tree[alive], weights=st.y[alive], minlength=n_trees)
        live = capped_at < 0
        area[live] += 0.5 * dt * (v_prev[live] + v_new[live])
        newly = live & (v_new >= mass_cap)
        if newly.any():
            capped_at[newly] = k1
            alive = alive[~newly[st.tree[alive]]]
        extinct_at[live & (v_new <= 0) & (extinct_at < 0)] = k1
        if k1 % stride == 0:
            mass[:, k1 // stride] = np.where(capped_at >= 0, np.nan, v_new)
        v_prev = v_new
    return snapshot(n_steps)


@dataclass
class _Result:
    store: _Store
    steps: int
    n_nodes: np.ndarray
    mass: np.ndarray
    area: np.ndarray
    capped_at: np.ndarray
    extinct_at: np.ndarray
    first_generation: np.ndarray
    rec: Optional[list]


def _check_args(x0, epsilon, dt, horizon, root, table):
    if x0 < 0:
        raise DomainError("x0 must be nonnegative")
    if not 0 < epsilon < table.coeffs.domain_cap:
        raise DomainError("epsilon must lie in (0, domain_cap)")
    if not (dt > 0 and horizon > 0):
        raise DomainError("dt and horizon must be positive")
    if root not in ("diffusion", "excursion"):
        raise ValueError("root must be 'diffusion' or 'excursion'")


def _nodes_from(res: _Result, table, epsilon, dt, horizon, x0, root):
    st = res.store
    n = st.n
    weight = 1.0 / float(table.S(epsilon))
    ids = np.concatenate([r[0] for r in res.rec])
    steps = np.concatenate([r[1] for r in res.rec])
    vals = np.concatenate([r[2] for r in res.rec])
    order = np.lexsort((steps, ids))
    ids, vals = ids[order], vals[order]
    pieces = np.split(vals, np.searchsorted(ids, np.arange(1, n)))
    nodes = []
    for i in np.lexsort((st.node[:n], st.tree[:n])):
        values = pieces[i] if pieces[i].size else np.array([st.y[i]])
        birth = st.birth[i] * dt
        death = st.death[i]
        life = None if death < 0 else float((death - st.birth[i]) * dt)
        path = DiffusionPath(dt=dt, values=values, horizon=horizon - birth, absorption_time=life,
                             rng_stream_id=(int(st.tree[i]), int(st.node[i])))
        if st.gen[i] > 0 or root == "excursion":
            t_eps = math.nan if st.t_eps[i] < 0 else float((st.t_eps[i] - st.birth[i]) * dt)
            path = Excursion(epsilon=epsilon, path=path, t_eps=t_eps, lifetime=life, weight=weight,
                             truncated=life is None)
        nodes.append(IslandNode(id=int(st.node[i]), parent_id=None if st.parent[i] < 0 else int(st.parent[i]),
                                birth_time=float(birth), generation=int(st.gen[i]), path=path,
                                excursion_max=float(st.ymax[i]), lifetime=life))
    return nodes


def simulate_tree(table: ScaleTable, x0: float, epsilon: float, dt: float, horizon: float,
                  stream: tuple = (0, 0), root: str = "diffusion", node_cap: int = NODE_CAP,
                  start_factor: float = START_FACTOR) -> IslandTree:
    """Simulate and record one tree; ``stream = (seed, stream_id)``.

    Raises
    ------
    ResourceLimitError
        When the tree exceeds ``node_cap`` islands; ``partial`` is the tree
        built so far.
    """
    _check_args(x0, epsilon, dt, horizon, root, table)
    seed, sid = stream
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    gen = rng_mod.stream(seed, rng_mod.TREES, sid, 0)
    build = lambda res: IslandTree(
        nodes=_nodes_from(res, table, epsilon, dt, horizon, x0, root), epsilon=epsilon,
        horizon=horizon, dt=dt, x0=float(x0), root=root, times=dt * np.arange(n_steps + 1),
        mass=res.mass[0], area=float(res.area[0]), seed=seed, stream=sid)
    try:
        res = _grow(table, x0, epsilon, dt, n_steps, 1, gen, root, start_factor * epsilon,
                    math.inf, node_cap, 1, True)
    except ResourceLimitError as err:
        raise ResourceLimitError(str(err), partial=build(err.partial)) from None
    return build(res)


def simulate_trees(table: ScaleTable, x0: float, epsilon: float, dt: float, horizon: float,
                   n_trees: int, seed: int, stream: int = 0, root: str = "diffusion",
                   mass_cap: float = math.inf, node_cap: int = NODE_CAP, record_every: int = 1,
                   start_factor: float = START_FACTOR, block_size: int = rng_mod.BLOCK_SIZE,
                   workers: int = 1) -> TreeEnsemble:
    """Simulate ``n_trees`` independent trees without keeping their paths.

    Parameters
    ----------
    mass_cap : float
        A tree whose total mass reaches ``mass_cap`` is stopped and counted
        as surviving.  Keeps supercritical ensembles affordable.
    record_every : int
        ``V`` is stored every ``record_every`` steps; the area uses every step.
    """
    _check_args(x0, epsilon, dt, horizon, root, table)
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    start = start_factor * epsilon

    def job(task):
        bi, lo, hi = task
        gen = rng_mod.stream(seed, rng_mod.TREES, stream, bi)
        return _grow(table, x0, epsilon, dt, n_steps, hi - lo, gen, root, start, mass_cap, node_cap,
                     record_every, False)

    parts = rng_mod.run_blocks(job, rng_mod.blocks(n_trees, block_size), workers)
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    to_time = lambda k: np.where(k >= 0, k * dt, np.nan)
    return TreeEnsemble(
        x0=float(x0), epsilon=epsilon, dt=dt, horizon=horizon, seed=seed, stream=stream, root=root,
        mass_cap=mass_cap, times=dt * record_every * np.arange(n_steps // record_every + 1),
        mass=np.concatenate([p.mass for p in parts], axis=0), area=cat("area"),
        capped_at=to_time(cat("capped_at")), extinct_at=to_time(cat("extinct_at")),
        n_nodes=cat("n_nodes"), first_generation=cat("first_generation"))


# ---------------------------------------------------------------------------
# counting

def total_mass_curve(tree: IslandTree, characteristic=TotalMass(), times=None) -> np.ndarray:
    """``V^phi_t = sum over islands of phi(t - sigma, path)`` on ``times``."""
    times = tree.times if times is None else np.asarray(times, dtype=float)
    if times.size and (times.min() < 0 or times.max() > tree.horizon + 1e-12):
        raise DomainError("times must lie in [0, horizon]")
    out = np.zeros(times.size)
    for node in tree.nodes:
        out += characteristic(node.mass_path, times - node.birth_time)
    return out


@dataclass(frozen=True)
class GrowthFit:
    """Least-squares slope of ``log V_t`` with one intercept per tree."""

    slope: float
    se: float
    n_trees: int
    t_range: tuple


@dataclass(frozen=True)
class ExtinctionResult:
    """Ensemble summary.

    ``survival`` is the fraction with ``V_T > delta`` (capped trees count as
    surviving).  ``mean_area`` averages ``int_0^T V dt`` and is only
    unbiased when no tree was capped (``n_capped == 0``).
    """

    T: float
    delta: float
    survival: float
    survival_se: float
    mean_area: float
    area_se: float
    n_trees: int
    n_capped: int
    growth: Optional[GrowthFit]


def growth_fit(times, mass, t_lo: float, t_hi: float) -> Optional[GrowthFit]:
    """Pooled within-tree regression of ``log V_t`` on ``t`` over ``[t_lo, t_hi]``.

    Rows of ``mass`` with any non-positive or NaN value in the window are
    skipped.  Returns ``None`` if fewer than two trees qualify.
    """
    times = np.asarray(times, dtype=float)
    sel = (times >= t_lo - 1e-12) & (times <= t_hi + 1e-12)
    m = np.asarray(mass, dtype=float)[:, sel]
    ok = np.all(np.isfinite(m) & (m > 0), axis=1)
    if ok.sum() < 2 or sel.sum() < 3:
        return None
    L = np.log(m[ok])
    t = times[sel] - times[sel].mean()
    Lc = L - L.mean(axis=1, keepdims=True)
    sxx = t @ t
    slopes = Lc @ t / sxx
    # trees are independent; the spread of per-tree slopes gives the error
    slope = float(slopes.mean())
    se = float(slopes.std(ddof=1) / math.sqrt(slopes.size))
    return GrowthFit(slope, se, int(ok.sum()), (float(times[sel][0]), float(times[sel][-1])))


def extinction_experiment(ens: TreeEnsemble, T: Optional[float] = None,
                          delta: Optional[float] = None) -> ExtinctionResult:
    """Survival frequency at ``(T, delta)``, mean area and a growth fit on survivors.

    ``delta`` defaults to ``1e-3 * x0``; the growth fit uses the last half of
    ``[0, T]`` on surviving, uncapped trees.  Capping removes the fastest
    growers, so fit growth on ensembles run without ``mass_cap``.
    """
    if ens.n_trees == 0:
        raise DomainError("empty ensemble")
    T = ens.horizon if T is None else float(T)
    delta = DELTA_REL * ens.x0 if delta is None else float(delta)
    j = int(np.argmin(np.abs(ens.times - T)))
    capped = ~np.isnan(ens.capped_at) & (ens.capped_at <= T + 1e-12)
    v_T = np.nan_to_num(ens.mass[:, j], nan=math.inf)
    alive = capped | (v_T > delta)
    p = float(alive.mean())
    p_se = math.sqrt(max(p * (1 - p), 0.0) / ens.n_trees)
    area, area_se = mean_with_se(ens.area)
    survivors = alive & ~capped
    fit = growth_fit(ens.times, ens.mass[survivors], T / 2, T) if survivors.sum() >= 2 else None
    return ExtinctionResult(T=T, delta=delta, survival=p, survival_se=p_se, mean_area=area,
                            area_se=area_se, n_trees=ens.n_trees, n_capped=int(capped.sum()),
                            growth=fit)


# ---------------------------------------------------------------------------
# export

def tree_csv(tree: IslandTree) -> str:
    rows = ((n.id, "" if n.parent_id is None else n.parent_id, n.birth_time, n.generation,
             n.excursion_max, n.lifetime) for n in tree.nodes)
    return csv_text(["node_id", "parent_id", "birth_time", "generation", "excursion_max", "lifetime"], rows)


def mass_csv(times, values) -> str:
    return csv_text(["t", "V"], zip(times, values))


def ensemble_summary(ens: TreeEnsemble, result: ExtinctionResult) -> dict:
    out = ens.metadata()
    out.update({"T": result.T, "delta": result.delta, "survival": result.survival,
                "survival_se": result.survival_se, "mean_area": result.mean_area,
                "area_se": result.area_se, "n_capped": result.n_capped,
                "extinction_note": "extinction is operationalised as V_T <= delta at the finite T"})
    if result.growth is not None:
        out["growth"] = {"slope": result.growth.slope, "se": result.growth.se,
                         "n_trees": result.growth.n_trees, "t_range": list(result.growth.t_range)}
    return out


def write_tree(tree: IslandTree, tree_path, mass_path=None, meta_path=None):
    atomic_write(tree_path, tree_csv(tree))
    if mass_path is not None:
        atomic_write(mass_path, mass_csv(tree.times, tree.mass))
    if meta_path is not None:
        atomic_write(meta_path, json_text({"x0": tree.x0, "epsilon": tree.epsilon, "dt": tree.dt,
                                           "horizon": tree.horizon, "root": tree.root,
                                           "seed": tree.seed, "stream": tree.stream,
                                           "n_nodes": tree.n_nodes, "area": tree.area}))
