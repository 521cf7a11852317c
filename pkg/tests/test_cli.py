import json

import pytest

from ablab import cli
from ablab.cli import DEFAULTS, EXIT_CONFIG, EXIT_OK, EXIT_REGIME, ExperimentConfig, main, run


@pytest.fixture(autouse=True)
def _no_env_out(monkeypatch):
    monkeypatch.delenv("ABLAB_OUT", raising=False)


def load(out, cmd):
    return json.loads((out / f"{cmd}.json").read_text())


# --- config ---------------------------------------------------------------

def test_config_roundtrip():
    cfg = ExperimentConfig("scan", params={"rho_points": 5}, seed=3, threads=2, precision=90)
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.to_json() == cfg.to_json()
    assert back.params == {**DEFAULTS["scan"], "rho_points": 5}


def test_config_rejects_unknown():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"command": "scan", "colour": "blue"})
    with pytest.raises(ValueError):
        ExperimentConfig("scan", params={"rho_min": 1e-6, "tol": 1.0})
    with pytest.raises(ValueError):
        ExperimentConfig("plot")
    with pytest.raises(ValueError):
        ExperimentConfig("scan", precision=40)
    with pytest.raises(ValueError):
        ExperimentConfig("scan", model={"a": -1, "b": 2, "alpha": {"kind": "constant", "c": 1.0}})


def test_bad_config_file_exit_code(tmp_path, capsys):
    f = tmp_path / "cfg.json"
    f.write_text(json.dumps({"command": "scan", "bogus": 1}))
    assert main(["scan", "--config", str(f), "--out", str(tmp_path)]) == EXIT_CONFIG
    f.write_text(json.dumps({"command": "audit"}))
    assert main(["scan", "--config", str(f), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_flags_override_config_file(tmp_path):
    f = tmp_path / "cfg.json"
    f.write_text(ExperimentConfig("check-abnormal", params={"samples": 11}).to_json())
    out = tmp_path / "o"
    assert main(["check-abnormal", "--config", str(f), "--out", str(out), "--b", "0"]) == EXIT_OK
    doc = load(out, "check-abnormal")
    assert doc["config"]["model"]["b"] == 0
    assert doc["config"]["params"]["samples"] == 11


# --- subcommands ----------------------------------------------------------

@pytest.mark.parametrize("b,degenerate", [(2, True), (0, False), (10, True)])
def test_check_abnormal(tmp_path, b, degenerate):
    assert main(["check-abnormal", "--b", str(b), "--out", str(tmp_path)]) == EXIT_OK
    r = load(tmp_path, "check-abnormal")["result"]
    assert r["degenerate_at_0"] is degenerate
    assert r["gamma_in_martinet_surface"] is True
    assert r["max_martinet_residual"] == 0.0
    lines = (tmp_path / "check-abnormal_profile.csv").read_text().splitlines()
    assert lines[0] == "t,martinet_residual,degeneracy_margin" and len(lines) == 202


@pytest.mark.parametrize("alpha,t1,t2,normal", [
    ("0", 0.1, 0.2, True),
    ("1", 0.1, 0.2, False),
    ("1", 0.2, 0.2, True),
    ("bump:0.6,0.2", -0.3, 0.3, True),
    ("bump:0.6,0.2", 0.5, 0.7, False),
])
def test_check_normality(tmp_path, alpha, t1, t2, normal):
    argv = ["check-normality", "--a", "1", "--alpha", alpha, "--t1", str(t1), "--t2", str(t2),
            "--grid", "200", "--lift-step", "1e-2", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    r = load(tmp_path, "check-normality")["result"]
    assert r["normal"] is normal
    if t2 > t1:
        assert r["alpha_vanishes"] is normal


def test_check_normality_bad_interval(tmp_path):
    assert main(["check-normality", "--t1", "0.3", "--t2", "0.1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert load(tmp_path, "check-normality")["status"] == "bad-config"


def test_build_competitor(tmp_path):
    assert main(["build-competitor", "--rho", "1e-4", "--out", str(tmp_path)]) == EXIT_OK
    r = load(tmp_path, "build-competitor")["result"]
    assert r["margin_report"]["margin"] > 0
    assert r["margin_report"]["margin"] == pytest.approx(5.236800196165758e-22, rel=1e-12)
    assert r["oracle"]["relative_agreement"] < 1e-3
    assert max(abs(v) for v in r["endpoint_defect"].values()) < 1e-12
    assert (tmp_path / "build-competitor_path.csv").exists()


def test_build_competitor_needs_rho(tmp_path):
    assert main(["build-competitor", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_build_competitor_regime_errors(tmp_path):
    # b = 8 is not above 4a + 4
    assert main(["build-competitor", "--b", "8", "--paper-regime", "--out", str(tmp_path)]) == EXIT_REGIME
    assert load(tmp_path, "build-competitor")["status"] == "regime-error"
    # rectangle does not fit in the domain
    assert main(["build-competitor", "--b", "2", "--eps", "0.9", "--rho", "0.44", "--h", "0.49",
                 "--out", str(tmp_path)]) == EXIT_REGIME


def test_build_competitor_paper_regime_report(tmp_path):
    argv = ["build-competitor", "--paper-regime", "--eps", str(1 / 65), "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    r = load(tmp_path, "build-competitor")["result"]
    assert r["paper_regime"]["extended_precision_required"] is True
    assert "note" in r


def test_scan(tmp_path):
    assert main(["scan", "--rho-points", "9", "--out", str(tmp_path)]) == EXIT_OK
    r = load(tmp_path, "scan")["result"]
    assert r["best"]["margin"] > 0 and r["points"] == 9
    assert r["oracle"]["relative_agreement"] < 1e-3
    assert len((tmp_path / "scan_points.csv").read_text().splitlines()) == 10


def test_scan_flat_metric_has_no_positive_margin(tmp_path):
    # alpha = 0 never pays for the loop, but grid points still admit plans
    code = main(["scan", "--alpha", "0", "--rho-points", "5", "--out", str(tmp_path)])
    r = load(tmp_path, "scan")["result"]
    assert code == EXIT_OK and r["best"]["margin"] <= 0 and "oracle" not in r


def test_audit(tmp_path):
    assert main(["audit", "--a", "5", "--samples", "16", "--out", str(tmp_path)]) == EXIT_OK
    r = load(tmp_path, "audit")["result"]
    assert r["violations"] == 0 and r["verdict"] == "pass"
    assert r["epsilon"] == 1 / 65
    assert (tmp_path / "audit_samples.csv").exists()


def test_search(tmp_path):
    argv = ["search", "--a", "1", "--b", "2", "--starts", "2", "--nodes", "20", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    r = load(tmp_path, "search")["result"]
    assert r["verdict"] == "no-improvement" and r["endpoints"] == "symmetric"
    assert r["replay"]["confirmed"] is False
    assert (tmp_path / "search_best_control.csv").exists()


def test_search_bad_endpoints(tmp_path):
    assert main(["search", "--endpoints", "both", "--starts", "1", "--out", str(tmp_path)]) == EXIT_CONFIG


# --- outputs --------------------------------------------------------------

def test_env_overrides_out(tmp_path, monkeypatch):
    env = tmp_path / "env"
    monkeypatch.setenv("ABLAB_OUT", str(env))
    assert main(["check-abnormal", "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert (env / "check-abnormal.json").exists()
    assert not (tmp_path / "flag").exists()


@pytest.mark.parametrize("cmd,extra", [
    ("check-abnormal", []),
    ("scan", ["--rho-points", "5"]),
    ("audit", ["--a", "5", "--samples", "6", "--threads", "2"]),
])
def test_outputs_byte_identical(tmp_path, cmd, extra):
    texts = []
    for i in range(2):
        out = tmp_path / str(i)
        assert main([cmd, "--seed", "4", "--out", str(out), *extra]) == EXIT_OK
        texts.append((out / f"{cmd}.json").read_text().replace(str(out), ""))
        meta = json.loads((out / f"{cmd}.meta.json").read_text())
        assert {"timestamp", "runtime_s", "version"} <= set(meta)
    assert texts[0] == texts[1]


def test_output_embeds_resolved_config(tmp_path):
    cfg = ExperimentConfig("check-abnormal", out=str(tmp_path), params={"samples": 5})
    code, doc = run(cfg)
    assert code == EXIT_OK
    assert ExperimentConfig.from_dict(load(tmp_path, "check-abnormal")["config"]) == cfg
    assert doc["status"] == "ok"


def test_stdout_status_line(tmp_path, capsys):
    main(["check-abnormal", "--out", str(tmp_path)])
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert json.loads(line) == {"command": "check-abnormal", "status": "ok"}


def test_module_constants():
    assert set(cli.HANDLERS) == set(cli.COMMANDS) == set(DEFAULTS)
