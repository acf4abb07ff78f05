import json

import pytest

from boolperc.cli import ConfigError, config_hash, load_config, model_params, run
from boolperc.radii import Geometric, SiteLawField


def run_cli(tmp_path, *argv):
    return run([str(a) for a in argv])


def test_unknown_command_is_config_error(capsys):
    assert run(["frobnicate"]) == 1
    assert "config error" in capsys.readouterr().err


def test_bad_config_keys(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d": 1, "bogus_key": 1}))
    assert run(["sample", "--config", str(cfg)]) == 1


def test_bad_law_spec(tmp_path):
    out = tmp_path / "s.csv"
    code = run(
        ["sample", "--d", "1", "--half-width", "5", "--p", "0.3",
         "--law", "cauchy:2", "--seed", "1", "--out", str(out)]
    )
    assert code == 1


def test_sample_command_round_trip(tmp_path):
    out = tmp_path / "s.csv"
    code = run(
        ["sample", "--d", "2", "--half-width", "6", "--p", "0.3",
         "--law", "geometric:0.5", "--seed", "9", "--out", str(out)]
    )
    assert code == 0
    text = out.read_text()
    assert "# config_hash=" in text and "# seed=9" in text
    # identical run: byte-identical artifact
    out2 = tmp_path / "s2.csv"
    run(
        ["sample", "--d", "2", "--half-width", "6", "--p", "0.3",
         "--law", "geometric:0.5", "--seed", "9", "--out", str(out2)]
    )
    assert out2.read_text() == text.replace(str(out), str(out2))


def test_clusters_command(tmp_path):
    out = tmp_path / "c.json"
    code = run(
        ["clusters", "--d", "1", "--half-width", "30", "--p", "0.2",
         "--law", "point-mass:1", "--seed", "4", "--out", str(out)]
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["n_components"] >= 1
    assert doc["config_hash"] == config_hash(doc["config"])


def test_scan_command(tmp_path):
    out = tmp_path / "scan.csv"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(
        json.dumps(
            {
                "d": 1, "half_width": 100, "law": "point-mass:1",
                "p_values": [0.001, 0.999], "replicas": 40, "seed": 3,
                "out": str(out), "margin": 1,
            }
        )
    )
    # p must still come from p_values; p key itself stays unset
    code = run(["scan", "--config", str(cfg)])
    assert code == 0
    lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert lines[0] == "p,frequency,wilson_low,wilson_high,replicas"
    rows = [l.split(",") for l in lines[1:]]
    assert float(rows[0][1]) <= 0.1 and float(rows[1][1]) >= 0.9


def test_flags_beat_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    out = tmp_path / "b1.csv"
    cfg.write_text(json.dumps({"d": 1, "law": "point-mass:1", "scales": 3}))
    code = run(["bounds", "--config", str(cfg), "--law", "point-mass:2",
                "--out", str(out)])
    assert code == 0
    assert '"law": "point-mass:2"' in out.read_text()


def test_bounds_command_table(tmp_path):
    out = tmp_path / "bounds.csv"
    code = run(
        ["bounds", "--d", "1", "--law", "point-mass:1", "--out", str(out)]
    )
    assert code == 0
    text = out.read_text()
    assert f"# p0={1 / 4800!r}" in text
    assert "# t0=" in text
    header = [l for l in text.splitlines() if l.startswith("n,")][0]
    assert header == "n,r,f_induction,f_direct,far_bound,reach_tail_bound"


def test_coverage_command(tmp_path):
    out = tmp_path / "cov.csv"
    code = run(
        ["coverage", "--config", "/dev/null"] if False else
        ["coverage", "--d", "1", "--p", "0.5", "--law", "power-law:2.0",
         "--half-width", "50", "--replicas", "4", "--seed", "2",
         "--out", str(out)]
    )
    assert code == 0
    text = out.read_text()
    assert "coverage,50," in text
    assert "bc_sum," in text


def test_couple_test_command(tmp_path):
    out = tmp_path / "couple.json"
    code = run(
        ["couple-test", "--replicas", "3000", "--seed", "11", "--out", str(out)]
    )
    assert code == 0
    doc = json.loads(out.read_text())
    names = {c["name"] for c in doc["checks"]}
    assert {"coupled_joint_law", "horizon_monotone", "dominating_pathwise",
            "dominating_pmf_ratio", "h_monotone"} <= names
    assert all(c["passed"] for c in doc["checks"])


def test_harris_command(tmp_path):
    out = tmp_path / "traj.csv"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(
        json.dumps(
            {
                "d": 1, "half_width": 8, "T": 0.2, "kernel": "voter",
                "interval": 0.1, "seed": 5, "out": str(out),
                "init": "alternating", "boundary": "frozen", "fill": 0,
            }
        )
    )
    code = run(["harris", "--config", str(cfg)])
    assert code == 0
    summary = json.loads((tmp_path / "traj.json").read_text())
    assert summary["n_intervals"] == 2
    assert summary["boundary"] == "frozen:0"
    lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert lines[0] == "time,x0,spin"
    assert len(lines) - 1 == summary["n_events"]


def test_harris_determinism(tmp_path):
    args = ["harris", "--d", "1", "--half-width", "6", "--seed", "7"]
    cfg = {"T": 0.3, "interval": 0.15}
    c1 = tmp_path / "a.json"
    c1.write_text(json.dumps({**cfg, "out": str(tmp_path / "a.csv")}))
    c2 = tmp_path / "b.json"
    c2.write_text(json.dumps({**cfg, "out": str(tmp_path / "b.csv")}))
    assert run(args + ["--config", str(c1)]) == 0
    assert run(args + ["--config", str(c2)]) == 0
    a = (tmp_path / "a.csv").read_text()
    b = (tmp_path / "b.csv").read_text()
    assert a.replace("a.csv", "b.csv") == b


def test_model_params_helper():
    cfg = {"d": 1, "half_width": 5, "p": [0.2, 0.4],
           "law": ["geometric:0.5", "point-mass:2"]}
    params = model_params(cfg)
    assert params.retention == (0.2, 0.4)
    assert isinstance(params.law, SiteLawField)
    assert params.law.laws[0] == Geometric(0.5)
    with pytest.raises(ConfigError):
        model_params({"d": 1, "half_width": 5, "p": 1.5, "law": "point-mass:1"})


def test_selftest_exit_codes(monkeypatch, tmp_path, capsys):
    # mapping from check results to exit codes, without the full run
    import boolperc.cli as cli

    monkeypatch.setattr(
        cli, "_selftest_checks", lambda: [{"name": "x", "passed": True}]
    )
    assert run(["selftest"]) == 0
    monkeypatch.setattr(
        cli, "_selftest_checks", lambda: [{"name": "x", "passed": False}]
    )
    assert run(["selftest"]) == 2
    out = capsys.readouterr().out
    assert "x: PASS" in out and "x: FAIL" in out
