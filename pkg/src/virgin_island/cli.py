"""Command line entry point ``virgin-island``.

Subcommands: ``analyze``, ``simulate-paths``, ``simulate-excursions``,
``simulate-tree``, ``renewal`` and ``verify``.  Every run writes its files
under ``--out`` (default: the config's ``outputs``) and finishes with
``manifest.json``, which lists each produced file with its SHA-256.

Exit codes: 0 success, 1 invalid config, 2 assumption violation,
3 numerical failure, 4 resource limit, 5 verification failure.  Errors are
reported on stderr as one JSON object per line.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import excursion as ex
from . import renewal as rn
from . import scale as sc
from . import tree as tr
from . import verify as vf
from .coeffs import validate_assumptions
from .config import ConfigError, RunConfig
from .diffusion import Plain, simulate_paths, write_paths
from .errors import DomainError, NumericalFailure, PreconditionError, ResourceLimitError
from .export import atomic_write, csv_text, json_text, jsonable, sha256

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ASSUMPTION = 2
EXIT_NUMERICAL = 3
EXIT_RESOURCE = 4
EXIT_VERIFY = 5

N_CURVE_POINTS = 400


class AssumptionViolation(RuntimeError):
    def __init__(self, report):
        super().__init__("model violates the standing assumptions")
        self.report = report


class VerifyFailure(RuntimeError):
    pass


@dataclass
class RunManifest:
    """Record of one run; written last."""

    command: str
    config_hash: str
    tool_version: str
    seed: int
    seed_source: str
    started: str
    finished: str = ""
    status: str = "ok"
    partial: bool = False
    files: list = field(default_factory=list)

    def add(self, path: Path, out: Path):
        self.files.append({"path": str(path.relative_to(out)), "sha256": sha256(path)})

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Run:
    """Output directory plus the manifest being assembled."""

    def __init__(self, cfg: RunConfig, out: Path, manifest: RunManifest):
        self.cfg, self.out, self.manifest = cfg, out, manifest
        self.quiet = False

    def write(self, name: str, data: str) -> Path:
        path = atomic_write(self.out / name, data)
        self.manifest.add(path, self.out)
        return path

    def adopt(self, path: Path):
        self.manifest.add(Path(path), self.out)

    def say(self, msg: str):
        if not self.quiet:
            print(msg)


def _table(cfg: RunConfig, require_ok: bool = True):
    coeffs = cfg.coefficients()
    if require_ok:
        rep = validate_assumptions(coeffs, tol=max(cfg.analysis.tol, 1e-10))
        if not rep.all_ok:
            raise AssumptionViolation(rep)
    return sc.build_scale_table(coeffs, tol=cfg.analysis.tol)


def _curve_times(dt, horizon):
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    stride = max(1, n_steps // N_CURVE_POINTS)
    return dt * np.arange(0, n_steps + 1, stride)


# ---------------------------------------------------------------------------
# subcommands

def cmd_analyze(run: Run):
    cfg = run.cfg
    coeffs = cfg.coefficients()
    rep = validate_assumptions(coeffs, tol=max(cfg.analysis.tol, 1e-10))
    run.write("assumptions.json", json_text(rep.to_dict()))
    if not rep.all_ok:
        raise AssumptionViolation(rep)
    table = sc.build_scale_table(coeffs, tol=cfg.analysis.tol)
    report = sc.analyze(table, x=cfg.tree.x0, tol=cfg.analysis.tol)
    run.write("report.json", json_text(report.to_dict()))
    run.say(f"theta={report.theta:.10g} regime={report.regime.value}")


def cmd_simulate_paths(run: Run):
    cfg, mc = run.cfg, run.cfg.mc
    table = _table(cfg)
    a = table.coeffs.a
    times = _curve_times(mc.dt, mc.horizon)
    ens = simulate_paths(table.coeffs, mc.y0, mc.dt, mc.horizon, mc.n_paths, mc.seed,
                         functionals=[(a, Plain())], sample_times=times, record=mc.record,
                         workers=mc.workers)
    n = ens.n_paths
    mean = ens.samples.mean(axis=1)
    se = ens.samples.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.full(times.size, math.inf)
    run.write("mean_curve.csv", csv_text(["t", "mean", "se"], zip(times, mean, se)))
    run.write("absorption.csv", csv_text(["path_id", "absorption_time"],
                                         enumerate(ens.absorption_times)))
    occ = ens.integrals[(a, Plain())]
    summary = ens.metadata()
    summary.update({"absorbed_fraction": float(np.mean(~np.isnan(ens.absorption_times))),
                    "emigration_integral_mean": float(occ.mean()),
                    "emigration_integral_se": float(occ.std(ddof=1) / math.sqrt(n)) if n > 1 else None})
    if mc.record:
        write_paths(ens, run.out / "paths.csv")
        run.adopt(run.out / "paths.csv")
    run.write("summary.json", json_text(summary))
    run.say(f"{n} paths, absorbed fraction {summary['absorbed_fraction']:.4f}")


def cmd_simulate_excursions(run: Run):
    cfg, mc, ec = run.cfg, run.cfg.mc, run.cfg.excursion
    table = _table(cfg)
    a = table.coeffs.a
    rows, est, ses = [], [], []
    for i, e in enumerate(ec.epsilon):
        es = ex.sample_excursions(table, e, mc.dt, mc.horizon, mc.n_paths, mc.seed, stream=i,
                                  functionals=[(a, Plain())], record=mc.record,
                                  start_factor=ec.start_eps_factor, retry_cap=ec.retry_cap,
                                  workers=mc.workers)
        m, s = ex.mc_q_functional(es, a)
        est.append(m)
        ses.append(s)
        rows.append((e, es.weight, len(es), m, s, sc.thinned_q_functional(table, a, e), es.retries))
        if mc.record:
            ex.write_excursions(es, run.out / f"excursions_{i}.csv")
            run.adopt(run.out / f"excursions_{i}.csv")
    run.write("epsilon_sweep.csv", csv_text(
        ["epsilon", "weight", "n", "estimate", "se", "thinned_exact", "retries"], rows))
    summary = {"seed": mc.seed, "dt": mc.dt, "horizon": mc.horizon, "epsilon": ec.epsilon,
               "theta": sc.extinction_criterion(table)}
    if len(ec.epsilon) >= 2:
        fit = ex.extrapolate_to_zero(ec.epsilon, est, ses, 1)
        summary.update({"extrapolated": fit.value, "extrapolated_se": fit.se})
    run.write("summary.json", json_text(summary))
    run.say(f"swept {len(ec.epsilon)} epsilon values")


def cmd_simulate_tree(run: Run):
    cfg, mc, tc = run.cfg, run.cfg.mc, run.cfg.tree
    table = _table(cfg)
    eps = cfg.excursion.epsilon[-1]
    if tc.n_trees == 1:
        try:
            tree = tr.simulate_tree(table, tc.x0, eps, mc.dt, mc.horizon, stream=(mc.seed, 0),
                                    node_cap=tc.node_cap, start_factor=cfg.excursion.start_eps_factor)
        except ResourceLimitError as err:
            _write_tree(run, err.partial, partial=True)
            raise
        _write_tree(run, tree)
        run.say(f"{tree.n_nodes} islands")
        return
    ens = tr.simulate_trees(table, tc.x0, eps, mc.dt, mc.horizon, tc.n_trees, mc.seed,
                            mass_cap=math.inf if tc.mass_cap is None else tc.mass_cap,
                            node_cap=tc.node_cap,
                            record_every=max(1, int(math.ceil(mc.horizon / mc.dt / N_CURVE_POINTS))),
                            start_factor=cfg.excursion.start_eps_factor, workers=mc.workers)
    res = tr.extinction_experiment(ens, delta=tc.delta)
    mean = np.nanmean(ens.mass, axis=0) if ens.n_trees else ens.times * 0
    run.write("mass_mean.csv", csv_text(["t", "V"], zip(ens.times, mean)))
    run.write("trees.csv", csv_text(["tree_id", "area", "n_nodes", "first_generation", "capped_at",
                                     "extinct_at"],
                                    zip(range(ens.n_trees), ens.area, ens.n_nodes, ens.first_generation,
                                        ens.capped_at, ens.extinct_at)))
    run.write("summary.json", json_text(tr.ensemble_summary(ens, res)))
    run.say(f"{ens.n_trees} trees, survival {res.survival:.4f}")


def _write_tree(run: Run, tree, partial=False):
    run.write("tree.csv", tr.tree_csv(tree))
    run.write("mass.csv", tr.mass_csv(tree.times, tree.mass))
    meta = {"x0": tree.x0, "epsilon": tree.epsilon, "dt": tree.dt, "horizon": tree.horizon,
            "seed": tree.seed, "n_nodes": tree.n_nodes, "area": tree.area, "partial": partial}
    run.write("summary.json", json_text(meta))


def cmd_renewal(run: Run):
    cfg, mc, rc = run.cfg, run.cfg.mc, run.cfg.renewal
    table = None
    if rc.f_csv is not None:
        inp = rn.read_input(rc.f_csv, rc.mu_csv)
    else:
        table = _table(cfg)
        eps = cfg.excursion.epsilon[-1]
        grid = rc.grid_dt * np.arange(int(round(mc.horizon / rc.grid_dt)) + 1)
        es = ex.sample_excursions(table, eps, mc.dt, mc.horizon, mc.n_paths, mc.seed,
                                  sample_times=grid, start_factor=cfg.excursion.start_eps_factor,
                                  retry_cap=cfg.excursion.retry_cap, workers=mc.workers)
        f = ex.estimate_fQ_curve(es, sc.identity, grid)[:, 1]
        mu = ex.estimate_fQ_curve(es, table.coeffs.a, grid)[:, 1]
        inp = rn.RenewalInput(f, mu, rc.grid_dt)
    m = rn.solve_renewal(inp)
    run.write("f.csv", rn.curve_csv(inp.times, inp.f))
    run.write("mu.csv", rn.curve_csv(inp.times, inp.mu))
    run.write("m.csv", rn.curve_csv(inp.times, m))
    summary = {"dt": inp.dt, "horizon": inp.horizon, "m_end": float(m[-1])}
    if table is not None:
        theta = sc.extinction_criterion(table)
        if sc.classify(theta)[0] is sc.Regime.SUPERCRITICAL:
            r = rn.asymptotic_ratios(m, sc.malthusian_alpha(table), inp)
            summary.update({"tail_ratio": r.tail_ratio, "predicted": r.predicted, "gap": r.gap})
    run.write("summary.json", json_text(summary))
    run.say(f"solved on {inp.f.size} points")


def cmd_verify(run: Run):
    cfg, mc = run.cfg, run.cfg.mc
    table = _table(cfg)
    results = vf.run_suite(table, x0=cfg.tree.x0, epsilons=cfg.excursion.epsilon, n=mc.n_paths,
                           n_trees=cfg.tree.n_trees, dt=mc.dt, horizon=mc.horizon, seed=mc.seed,
                           grid_dt=cfg.renewal.grid_dt, workers=mc.workers)
    run.write("verify.json", json_text([r.to_dict() for r in results]))
    for r in results:
        run.say(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerifyFailure(f"failed checks: {', '.join(failed)}")


COMMANDS = {
    "analyze": cmd_analyze,
    "simulate-paths": cmd_simulate_paths,
    "simulate-excursions": cmd_simulate_excursions,
    "simulate-tree": cmd_simulate_tree,
    "renewal": cmd_renewal,
    "verify": cmd_verify,
}


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="virgin-island", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        s.add_argument("--out", type=Path, help="output directory (overrides config 'outputs')")
        s.add_argument("--seed", type=int, help="override the configured seed")
        s.add_argument("--quiet", action="store_true", help="print nothing on success")
    return p


def _error(kind: str, message: str, code: int, **extra) -> int:
    rec = {"error": kind, "message": message, "exit_code": code}
    rec.update(extra)
    print(json.dumps(jsonable(rec), sort_keys=True, default=str), file=sys.stderr)
    return code


def _load(args):
    try:
        text = args.config.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    cfg = RunConfig.from_json(text, check=False)
    source = "config"
    env = os.environ.get("VIM_SEED")
    if env is not None:
        try:
            cfg.mc.seed = int(env)
        except ValueError:
            raise ConfigError("VIM_SEED must be an integer") from None
        source = "VIM_SEED"
    if args.seed is not None:
        cfg.mc.seed = args.seed
        source = "--seed"
    cfg.check()
    return cfg, source


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, source = _load(args)
    except ConfigError as exc:
        code = _error("invalid_config", str(exc), EXIT_CONFIG)
        if args.out is not None:
            failed = RunManifest(command=args.command, config_hash="", tool_version=__version__,
                                 seed=args.seed, seed_source="", started=_now(), finished=_now(),
                                 status="failed")
            atomic_write(Path(args.out) / "manifest.json", json_text(failed.to_dict()))
        return code
    out = Path(args.out if args.out is not None else cfg.outputs)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command=args.command, config_hash=cfg.digest(), tool_version=__version__,
                           seed=cfg.mc.seed, seed_source=source, started=_now())
    run = Run(cfg, out, manifest)
    run.quiet = args.quiet
    code = EXIT_OK
    try:
        run.write("config.json", cfg.to_json())
        COMMANDS[args.command](run)
    except ConfigError as exc:
        code = _error("invalid_config", str(exc), EXIT_CONFIG)
    except AssumptionViolation as exc:
        code = _error("assumption_violation", str(exc), EXIT_ASSUMPTION, report=exc.report.to_dict())
    except DomainError as exc:
        code = _error("invalid_config", str(exc), EXIT_CONFIG)
    except (NumericalFailure, PreconditionError) as exc:
        code = _error("numerical_failure", str(exc), EXIT_NUMERICAL)
    except ResourceLimitError as exc:
        manifest.partial = True
        code = _error("resource_limit", str(exc), EXIT_RESOURCE)
    except VerifyFailure as exc:
        code = _error("verify_failure", str(exc), EXIT_VERIFY)
    manifest.status = "ok" if code == EXIT_OK else "failed"
    manifest.finished = _now()
    atomic_write(out / "manifest.json", json_text(manifest.to_dict()))
    return code


if __name__ == "__main__":
    sys.exit(main())
