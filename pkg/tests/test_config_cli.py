import json

import pytest

from virgin_island import cli
from virgin_island import scale as sc
from virgin_island.config import ConfigError, RunConfig
from virgin_island.errors import NumericalFailure

FELLER = {"family": "LogisticFeller", "params": {"kappa": 1, "gamma": 0, "K": 0, "beta": 1}}
LOGISTIC = {"family": "LogisticFeller", "params": {"kappa": 1, "gamma": 1, "K": 2, "beta": 1}}


def small_config(model=FELLER, **sections):
    cfg = {"model": model, "mc": {"seed": 1, "n_paths": 200, "dt": 0.01, "horizon": 5.0},
           "excursion": {"epsilon": [0.4, 0.2]}, "tree": {"x0": 1.0}}
    for k, v in sections.items():
        cfg.setdefault(k, {}).update(v)
    return cfg


@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv("VIM_SEED", raising=False)


def run(tmp_path, cfg, command, *extra):
    tmp_path.mkdir(parents=True, exist_ok=True)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    code = cli.main([command, "--config", str(path), "--out", str(out), "--quiet", *extra])
    manifest = json.loads((out / "manifest.json").read_text())
    return code, out, manifest


# ---------------------------------------------------------------------------
# configuration

def test_round_trip_and_digest():
    cfg = RunConfig.from_dict(small_config())
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg and again.digest() == cfg.digest()
    other = RunConfig.from_dict(small_config(mc={"seed": 2}))
    assert other.digest() != cfg.digest()


@pytest.mark.parametrize("bad", [
    {"model": FELLER, "mc": {"seed": 1, "dt": -0.1}},
    {"model": FELLER, "mc": {"seed": 1, "typo": 3}},
    {"model": FELLER, "mc": {"seed": 1}, "extra": 1},
    {"model": FELLER, "mc": {}},
    {"model": FELLER, "mc": {"seed": 1}, "excursion": {"epsilon": [0.1, 0.2]}},
    {"model": {"family": "Nope", "params": {}}, "mc": {"seed": 1}},
    {"mc": {"seed": 1}},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_non_finite_constants_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_json('{"model": {}, "mc": {"seed": 1, "dt": NaN}}')


def test_domain_cap_reaches_coefficients():
    cfg = RunConfig.from_dict(small_config(analysis={"domain_cap": 50.0}))
    assert cfg.coefficients().domain_cap == 50.0


# ---------------------------------------------------------------------------
# command line

def test_analyze_writes_report_and_manifest(tmp_path):
    code, out, manifest = run(tmp_path, small_config(model=LOGISTIC), "analyze")
    assert code == cli.EXIT_OK and manifest["status"] == "ok"
    report = json.loads((out / "report.json").read_text())
    assert report["regime"] == "Supercritical" and report["expected_area"] == "inf"
    names = {f["path"] for f in manifest["files"]}
    assert {"config.json", "assumptions.json", "report.json"} <= names
    assert manifest["seed"] == 1 and manifest["seed_source"] == "config"


def test_manifest_hashes_match(tmp_path):
    from virgin_island.export import sha256
    _, out, manifest = run(tmp_path, small_config(), "simulate-paths")
    for f in manifest["files"]:
        assert sha256(out / f["path"]) == f["sha256"]


def test_simulate_paths_outputs(tmp_path):
    code, out, _ = run(tmp_path, small_config(mc={"record": True, "n_paths": 5}), "simulate-paths")
    assert code == 0
    for name in ("mean_curve.csv", "absorption.csv", "summary.json", "paths.csv"):
        assert (out / name).exists()


def test_simulate_excursions_outputs(tmp_path):
    code, out, _ = run(tmp_path, small_config(), "simulate-excursions")
    assert code == 0
    lines = (out / "epsilon_sweep.csv").read_text().splitlines()
    assert lines[0].startswith("epsilon,weight") and len(lines) == 3
    assert "extrapolated" in json.loads((out / "summary.json").read_text())


def test_simulate_tree_single_and_ensemble(tmp_path):
    code, out, _ = run(tmp_path, small_config(), "simulate-tree")
    assert code == 0 and (out / "tree.csv").exists() and (out / "mass.csv").exists()
    code, out, _ = run(tmp_path, small_config(tree={"n_trees": 20, "mass_cap": 10.0}), "simulate-tree")
    summary = json.loads((out / "summary.json").read_text())
    assert code == 0 and summary["n_trees"] == 20 and "extinction_note" in summary


def test_renewal_from_model_and_from_csv(tmp_path):
    code, out, _ = run(tmp_path, small_config(model=LOGISTIC, renewal={"grid_dt": 0.05}), "renewal")
    assert code == 0 and "tail_ratio" in json.loads((out / "summary.json").read_text())
    f, mu = tmp_path / "f.csv", tmp_path / "mu.csv"
    f.write_text("t,value\n0,1\n0.5,1\n1,1\n")
    mu.write_text("t,value\n0,0\n0.5,0\n1,0\n")
    code, out, _ = run(tmp_path, small_config(renewal={"f_csv": str(f), "mu_csv": str(mu)}), "renewal")
    assert code == 0
    assert (out / "m.csv").read_text().splitlines()[1:] == ["0.0,1.0", "0.5,1.0", "1.0,1.0"]


def test_verify_writes_results(tmp_path):
    cfg = small_config(tree={"n_trees": 40}, renewal={"grid_dt": 0.05})
    code, out, _ = run(tmp_path, cfg, "verify")
    results = json.loads((out / "verify.json").read_text())
    assert code in (cli.EXIT_OK, cli.EXIT_VERIFY)
    assert (code == cli.EXIT_OK) == all(r["passed"] for r in results)


def test_negative_dt_exits_1(tmp_path, capsys):
    cfg = small_config(mc={"dt": -1e-3})
    code, _, manifest = run(tmp_path, cfg, "analyze")
    assert code == cli.EXIT_CONFIG and manifest["status"] == "failed"
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "invalid_config" and err["exit_code"] == 1


def test_assumption_violation_exits_2(tmp_path):
    model = {"family": "PowerLaw", "params": {"c1": 1, "c2": 0, "c3": 1, "c4": 1, "k1": 1, "k2": 2, "k3": 2}}
    code, out, _ = run(tmp_path, small_config(model=model), "analyze")
    assert code == cli.EXIT_ASSUMPTION
    assert json.loads((out / "assumptions.json").read_text())["sbar_ok"] is False


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise NumericalFailure("did not converge")
    monkeypatch.setattr(sc, "analyze", boom)
    code, _, _ = run(tmp_path, small_config(), "analyze")
    assert code == cli.EXIT_NUMERICAL


def test_node_cap_exits_4_with_partial_output(tmp_path):
    cfg = small_config(model=LOGISTIC, mc={"horizon": 20.0}, excursion={"epsilon": [0.05]},
                       tree={"node_cap": 30})
    code, out, manifest = run(tmp_path, cfg, "simulate-tree")
    assert code == cli.EXIT_RESOURCE and manifest["partial"] is True
    assert json.loads((out / "summary.json").read_text())["partial"] is True


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = small_config()
    del cfg["mc"]["seed"]
    code, _, _ = run(tmp_path, cfg, "analyze")
    assert code == cli.EXIT_CONFIG
    monkeypatch.setenv("VIM_SEED", "17")
    code, _, manifest = run(tmp_path, cfg, "analyze")
    assert code == 0 and manifest["seed"] == 17 and manifest["seed_source"] == "VIM_SEED"
    code, _, manifest = run(tmp_path, cfg, "analyze", "--seed", "23")
    assert manifest["seed"] == 23 and manifest["seed_source"] == "--seed"


def test_identical_seeds_give_identical_outputs(tmp_path):
    _, out1, m1 = run(tmp_path / "a", small_config(), "simulate-paths")
    _, out2, m2 = run(tmp_path / "b", small_config(), "simulate-paths")
    h1 = {f["path"]: f["sha256"] for f in m1["files"]}
    h2 = {f["path"]: f["sha256"] for f in m2["files"]}
    assert h1 == h2
