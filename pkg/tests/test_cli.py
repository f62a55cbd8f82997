import json
import shutil

import pytest

from conftest import HEAT, PURE_NOISE
from spde_lab.cli import main


def test_validate_identity_exit_zero(write_config, tmp_path, capsys):
    cfg = write_config("[outputs]\np_list = [8.0]\n")
    assert main(["validate", "--config", str(cfg), "--out", str(tmp_path / "v")]) == 0
    assert json.loads((tmp_path / "v" / "validation.json").read_text())["pass"]
    assert "overall: PASS" in capsys.readouterr().out


def test_validate_superlinear_exponent_too_large(write_config, tmp_path):
    cfg = write_config('[noise]\nregime = "superlinear"\nlambda0 = 1.5\n[coefficients]\nlambda = 0.5\n')
    assert main(["validate", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_validate_negative_initial_data_reports_witness(write_config, tmp_path, capsys):
    values = [0.0] * 16
    values[5] = -0.25
    cfg = write_config(f'[grid]\nN = 16\n[initial]\npreset = "custom"\nvalues = {values}\n')
    code = main(["validate", "--config", str(cfg), "--out", str(tmp_path)])
    out = capsys.readouterr()
    assert code == 1
    assert 'initial_nonnegative: FAIL' in out.out and '"index": [5]' in out.out


def test_validate_malformed_reports_line(write_config, tmp_path, capsys):
    cfg = write_config('[grid]\nN = 256\nL = "wide"\n')
    assert main(["validate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "grid" in err and "L" in err


def test_validate_missing_file(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "nope.toml")]) == 2


def test_ensemble_heat_and_report(write_config, tmp_path, capsys):
    cfg = write_config(HEAT)
    out = tmp_path / "run"
    assert main(["ensemble", "--config", str(cfg), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "analytic periodic heat solution: PASS" in text
    summary = json.loads((out / "summary.json").read_text())
    assert {c["check"] for c in summary["checks"]} >= {"heat_oracle", "positivity"}
    assert main(["report", str(out)]) == 0
    assert main(["report", str(out / "summary.json")]) == 0


def test_ensemble_respects_env_and_seed(write_config, tmp_path, monkeypatch):
    monkeypatch.setenv("SPDE_LAB_OUT", str(tmp_path / "root"))
    cfg = write_config(HEAT)
    assert main(["ensemble", "--config", str(cfg), "--seed", "7", "--checks", "positivity"]) == 0
    dirs = list((tmp_path / "root").iterdir())
    assert len(dirs) == 1 and (dirs[0] / "index.json").is_file()
    manifest = json.loads((dirs[0] / "index.json").read_text())
    assert manifest["config"]["ensemble"]["master_seed"] == 7


def test_ensemble_refuses_invalid_config(write_config, tmp_path):
    cfg = write_config('[noise]\nregime = "superlinear"\nlambda0 = 1.5\n[coefficients]\nlambda = 0.5\n')
    assert main(["ensemble", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert not (tmp_path / "index.json").exists()


def test_unknown_check_is_usage_error(write_config):
    with pytest.raises(SystemExit) as exc:
        main(["ensemble", "--config", str(write_config(HEAT)), "--checks", "sharpness"])
    assert exc.value.code == 2


def test_estimate_space_on_heat(write_config, tmp_path, capsys):
    cfg = write_config(HEAT.replace("N = 64", "N = 256").replace("T = 0.01", "T = 0.1").replace("dt = 1e-3", "dt = 1e-4"))
    out = tmp_path / "heat"
    assert main(["ensemble", "--config", str(cfg), "--out", str(out), "--checks", "heat_oracle"]) == 0
    assert main(["estimate", str(out), "--direction", "space"]) == 0
    est = json.loads((out / "exponent_space.json").read_text())
    assert est["estimate"] >= 0.95
    assert (out / "structure_space.csv").read_text().startswith("lag,delta,S")


def test_estimate_time_pure_noise(write_config, tmp_path):
    out = tmp_path / "noise"
    assert main(["ensemble", "--config", str(write_config(PURE_NOISE)), "--out", str(out)]) == 0
    assert main(["estimate", str(out), "--direction", "time", "--lags", "1,2,4,8,16,32"]) == 0
    est = json.loads((out / "exponent_time.json").read_text())
    assert abs(est["estimate"] - 0.5) <= 0.05
    # a spatially constant field has no spatial increments
    assert main(["estimate", str(out), "--direction", "space"]) == 2


def test_estimate_drops_unusable_lags(write_config, tmp_path, capsys):
    out = tmp_path / "short"
    cfg = write_config(PURE_NOISE.replace("T = 0.2", "T = 0.05"))
    assert main(["ensemble", "--config", str(cfg), "--out", str(out)]) == 0
    capsys.readouterr()
    code = main(["estimate", str(out), "--direction", "time", "--lags", "1,2,600"])
    err = capsys.readouterr().err
    assert code == 0 and "lag 600 dropped" in err


def test_estimate_empty_directory(tmp_path):
    assert main(["estimate", str(tmp_path), "--direction", "time"]) == 2


def test_estimate_mixed_fingerprints(write_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["ensemble", "--config", str(write_config(HEAT)), "--out", str(a), "--checks", "positivity"])
    main(["ensemble", "--config", str(write_config(HEAT.replace("T = 0.01", "T = 0.02"), "b.toml")),
          "--out", str(b), "--checks", "positivity"])
    shutil.copy(b / "path_0.bin", a / "path_0.bin")
    assert main(["estimate", str(a), "--direction", "time"]) == 2


def test_report_exit_codes(tmp_path):
    summary = json.loads(open("tests/data/summary_golden.json", encoding="utf-8").read())
    (tmp_path / "ok").mkdir()
    (tmp_path / "ok" / "summary.json").write_text(json.dumps(summary))
    assert main(["report", str(tmp_path / "ok")]) == 0
    summary["checks"][1]["pass"] = False
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "summary.json").write_text(json.dumps(summary))
    assert main(["report", str(tmp_path / "bad")]) == 1
    summary["checks"][1]["anchor"] = "not a registered anchor"
    (tmp_path / "bad" / "summary.json").write_text(json.dumps(summary))
    assert main(["report", str(tmp_path / "bad")]) == 2
    assert main(["report", str(tmp_path / "missing")]) == 2
