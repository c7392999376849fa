import hashlib
import json

import pytest

from inverse_soc.cli import main
from inverse_soc.config import config_hash, load_config, validate_config
from inverse_soc.errors import ConfigError

from conftest import bundled_configs


def _write(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


SIM = {
    "experiment": "simulate", "seed": 1,
    "dynamics": {"sigma": 0.1},
    "init": {"kind": "gaussian", "mean": 0.0, "var": 1.0},
    "simulation": {"M": 20, "N": 50, "policy": {"kind": "zero"}},
}


def test_bundled_configs_validate(capsys):
    names = {p.name for p in bundled_configs()}
    assert {"lq_recovery.json", "bridge_gauss.json", "equivalence_lq.json"} <= names
    for p in bundled_configs():
        assert main(["validate", str(p)]) == 0
    assert capsys.readouterr().out.count("ok\t") == len(names)


def test_missing_seed(tmp_path, capsys):
    cfg = {k: v for k, v in SIM.items() if k != "seed"}
    assert main(["run", _write(tmp_path, cfg)]) == 2
    assert "seed: required field is missing" in capsys.readouterr().err


def test_unknown_and_bad_fields():
    with pytest.raises(ConfigError, match=r"^<root>: .*colour"):
        validate_config({**SIM, "colour": "red"})
    with pytest.raises(ConfigError, match=r"^simulation\.N: "):
        validate_config({**SIM, "simulation": {**SIM["simulation"], "N": 0}})
    with pytest.raises(ConfigError, match=r"^dynamics\.control_set\.upper"):
        validate_config({**SIM, "dynamics": {"control_set": {"lower": -1}}})
    with pytest.raises(ConfigError, match=r"^forward: required"):
        validate_config({**SIM, "experiment": "invert", "search": {"kind": "theta_interval"}})


def test_unreadable_config(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["run", str(bad)]) == 2
    assert "invalid JSON" in capsys.readouterr().err


def test_builder_errors_are_config_errors(tmp_path, capsys):
    cfg = {**SIM, "experiment": "invert", "forward": {"kind": "hjb_grid"},
           "search": {"kind": "theta_interval"}}
    assert main(["run", _write(tmp_path, cfg), "--output-dir", str(tmp_path / "o")]) == 2
    assert "forward:" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = {**SIM, "experiment": "nonneg-battery",
           "dynamics": {"sigma": 0.1, "control_set": {"lower": -10, "upper": 10}},
           "init": {"kind": "gaussian", "mean": 0.0, "var": 100.0},
           "forward": {"kind": "hjb_grid", "L": 3.0, "n_x": 30, "n_u": 11},
           "battery": {"n_samples": 1}}
    assert main(["run", _write(tmp_path, cfg), "--output-dir", str(tmp_path / "o")]) == 3
    assert "BoundaryMassError" in capsys.readouterr().err
    assert not (tmp_path / "o" / "manifest.json").exists()


def test_run_report_and_overrides(tmp_path, capsys):
    path = _write(tmp_path, SIM)
    out = tmp_path / "out"
    assert main(["run", path, "--output-dir", str(out), "--seed-override", "9"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 9 and man["experiment"] == "simulate"
    assert man["config_hash"] == config_hash({**load_config(path), "seed": 9})
    for entry in man["outputs"]:
        data = (out / entry["file"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == entry["sha256"]
    assert json.loads((out / "batch.json").read_text())["seed"] == 9
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "second_moment\t" in text and "simulate_summary.json" in text


def test_report_needs_manifest(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 2
    assert "manifest" in capsys.readouterr().err


def test_manifest_is_written_last(bundled_runs):
    d = bundled_runs["simulate_lq"][0]
    man = d / "manifest.json"
    assert all(p.stat().st_mtime_ns <= man.stat().st_mtime_ns for p in d.iterdir())
    listed = {e["file"] for e in json.loads(man.read_text())["outputs"]}
    assert listed == {p.name for p in d.iterdir()} - {"manifest.json"}


def test_report_rows_after_bundled_runs(bundled_runs, capsys):
    expect = {
        "lq_recovery": ("theta_hat", "V_at_theta_hat", "lncosh_verdict_sign"),
        "equivalence_lq": ("lhs_Vstar", "rhs_bridge_form", "abs_diff", "lam_rho_last"),
        "bridge_gauss": ("bridge_value", "duality_gap", "h_drift_energy"),
        "duality_gauss": ("duality_gap",),
    }
    for name, keys in expect.items():
        capsys.readouterr()
        assert main(["report", str(bundled_runs[name][0])]) == 0
        rows = {line.split("\t")[0]: line.split("\t") for line in
                capsys.readouterr().out.splitlines()}
        for k in keys:
            assert k in rows
            # each number names the file it came from, and that file is in the manifest
            src = rows[k][2]
            man = json.loads((bundled_runs[name][0] / "manifest.json").read_text())
            assert src in {e["file"] for e in man["outputs"]}


def test_thread_count_does_not_change_outputs(bundled_runs, tmp_path, monkeypatch):
    from importlib.resources import files
    cfg = files("inverse_soc").joinpath("configs", "lq_recovery.json")
    monkeypatch.setenv("INVERSE_SOC_THREADS", "4")
    out = tmp_path / "t4"
    assert main(["run", str(cfg), "--output-dir", str(out)]) == 0
    ref = bundled_runs["lq_recovery"][0]
    for p in ref.iterdir():
        if p.name != "manifest.json":
            assert (out / p.name).read_bytes() == p.read_bytes(), p.name
