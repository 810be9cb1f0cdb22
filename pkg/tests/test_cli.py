import json

import numpy as np
import pytest

from mghs import cli


def _run(*argv):
    return cli.main([str(a) for a in argv])


def test_usage_errors_exit_2():
    assert _run() == 2
    assert _run("fit", "--chains", "two") == 2
    assert _run("simulate", "--scenario", "nonsense") == 2


def test_config_errors(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"burnin": 10, "bogus": 1}))
    assert _run("g3p-check", "--config", cfg, "--out-dir", tmp_path / "o") == 3
    cfg.write_text(json.dumps({"burnin": "ten"}))
    assert _run("g3p-check", "--config", cfg, "--out-dir", tmp_path / "o") == 4
    cfg.write_text("{not json")
    assert _run("g3p-check", "--config", cfg) == 4
    assert _run("g3p-check", "--config", tmp_path / "missing.json") == 5
    assert _run("select", "--fit-dir", tmp_path / "nowhere", "--out-dir", tmp_path / "o") == 5
    assert _run("fit", "--data", tmp_path / "none.csv", "--out-dir", tmp_path / "o") == 5


def test_resolve_precedence_and_defaults(tmp_path):
    cfg = cli.resolve_config("fit", {})
    assert (cfg["a"], cfg["b"], cfg["burnin"], cfg["iters"]) == (30.0, 25.0, 5000, 10000)
    assert cfg["standardize"] is True and cfg["select_mode"] == "cut"
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"burnin": 7, "iters": 9, "a": 2}))
    cfg = cli.resolve_config("fit", {"iters": 11}, path)
    assert (cfg["burnin"], cfg["iters"], cfg["a"]) == (7, 11, 2.0)
    # the effective configuration re-parses to itself
    path.write_text(json.dumps(cfg))
    assert cli.resolve_config("fit", {}, path) == cfg


def test_standardize_columns():
    y = np.array([[1.0, 2.0], [3.0, 6.0], [5.0, 10.0]])
    z = cli.standardize_columns(y)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-15)
    np.testing.assert_allclose(z.std(axis=0, ddof=1), 1.0)
    with pytest.raises(ValueError, match="column 2"):
        cli.standardize_columns(np.array([[1.0, 4.0], [2.0, 4.0]]))


def test_full_pipeline_and_replay(tmp_path):
    sim, fit, sel, met, dia = (tmp_path / d for d in ("sim", "fit", "sel", "met", "dia"))
    assert _run("simulate", "--scenario", "coupled", "--groups", 4, "--p", 20, "--n", 50,
                "--seed", 3, "--out-dir", sim) == 0
    assert {p.name for p in sim.iterdir()} >= {"group_1.csv", "group_4.csv", "truth.json", "manifest.json"}
    assert _run("fit", "--data", sim, "--chains", 2, "--burnin", 30, "--iters", 60,
                "--store-draws", "--seed", 4, "--out-dir", fit) == 0
    for c in (1, 2):
        for f in ("trace.csv", "summary.json", "omega_draws.npy", "kappa_draws.npy"):
            assert (fit / f"chain_{c}" / f).is_file()
    header = (fit / "chain_1" / "trace.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["draw", "logpost"] and "R_1_2" in header
    assert _run("select", "--fit-dir", fit, "--out-dir", sel) == 0
    assert (sel / "adjacency.csv").is_file()
    assert _run("metrics", "--fit-dir", fit, "--truth", sim / "truth.json", "--adjacency",
                sel / "adjacency.csv", "--label", "coupled", "--out-dir", met) == 0
    rows = (met / "metrics.csv").read_text().splitlines()
    assert len(rows) == 2 and "MCC" in rows[0] and "AUC" in rows[0]
    assert len(json.loads((met / "metrics_per_group.json").read_text())) == 4
    assert _run("diagnose", "--fit-dir", fit, "--out-dir", dia) == 0
    rep = json.loads((dia / "diagnose.json").read_text())
    assert rep["chains"] == 2 and len(rep["psrf_R"]) == 6

    manifest = json.loads((fit / "manifest.json").read_text())
    assert manifest["command"] == "fit" and manifest["config"]["seed"] == 4
    assert all(len(d) == 64 for d in manifest["outputs"].values())
    assert _run("replay", fit / "manifest.json", "--out-dir", tmp_path / "again") == 0
    for c in (1, 2):
        for f in ("trace.csv", "summary.json"):
            assert (fit / f"chain_{c}" / f).read_bytes() == (tmp_path / "again" / f"chain_{c}" / f).read_bytes()


def test_single_group_fit(tmp_path, capsys):
    rng = np.random.default_rng(0)
    data = tmp_path / "g.csv"
    np.savetxt(data, rng.standard_normal((30, 5)), delimiter=",")
    assert _run("fit", "--data", data, "--burnin", 10, "--iters", 20, "--out-dir", tmp_path / "f") == 0
    assert "single group" in capsys.readouterr().out
    summary = json.loads((tmp_path / "f" / "chain_1" / "summary.json").read_text())
    assert summary["K"] == 1


def test_fit_reports_bad_data_location(tmp_path):
    d = tmp_path / "g.csv"
    d.write_text("1,2\n3,x\n")
    assert _run("fit", "--data", d, "--out-dir", tmp_path / "f") == 1


def test_g3p_check_spot_values():
    lines, res = cli.g3p_check(2000, 1)
    by_name = {name: passed for name, passed, _ in lines}
    assert by_name["KL(q||p) gamma=1 ratio=0.002 = 0.284 +- 0.01"]
    assert by_name["KL(p||q) gamma=100 ratio=8 = 49.973 +- 0.5"]
    assert by_name["KL gamma=50 all < 0.001"]
    assert by_name["proposals per draw <= 10"]
    assert len(res["ks"]) == 40
