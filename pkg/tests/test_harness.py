import json

import numpy as np
import pytest

from conftest import HEAT
from spde_lab.analysis import ExponentEstimate
from spde_lab.config import RunConfig
from spde_lab.harness import (
    ANCHORS,
    SUMMARY,
    FingerprintMismatchError,
    ReportError,
    check_report,
    dump_json,
    ensure_single_fingerprint,
    load_records,
    output_dir,
    render_report,
    run_checks,
    run_ensemble,
    simulate,
    skipped,
    validate_config,
    write_records,
)


def heat_config(**over):
    cfg = RunConfig.from_text(HEAT)
    return cfg.replace(**over) if over else cfg


def test_check_report_shape():
    rep = check_report("positivity", statistic=0.0, bound=1e-6, margin=1e-6, passed=True)
    assert set(rep) == {"check", "anchor", "parameters", "statistic", "bound", "margin", "pass", "details"}
    assert rep["anchor"] == ANCHORS["positivity"]
    assert skipped("moment", "why")["pass"] is None


def test_validate_identity_passes():
    res = validate_config(RunConfig.from_dict({"outputs": {"p_list": [8.0]}}))
    assert res["pass"]
    assert any(e["name"] == "lipschitz_probe" for e in res["entries"])


def test_validate_superlinear_requires_small_exponents():
    cfg = RunConfig.from_dict({"noise": {"regime": "superlinear", "lambda0": 1.5}, "coefficients": {"lambda": 0.5}})
    assert not validate_config(cfg)["pass"]


def test_output_dir_precedence(monkeypatch, tmp_path):
    cfg = heat_config()
    monkeypatch.setenv("SPDE_LAB_OUT", str(tmp_path / "root"))
    assert output_dir(cfg) == tmp_path / "root" / cfg.fingerprint
    assert output_dir(cfg, tmp_path / "x") == tmp_path / "x"
    pinned = cfg.replace(outputs={"directory": str(tmp_path / "pinned")})
    assert output_dir(pinned) == tmp_path / "pinned"
    assert pinned.fingerprint == cfg.fingerprint
    monkeypatch.delenv("SPDE_LAB_OUT")
    assert output_dir(cfg).parts[-2:] == ("spde_lab_out", cfg.fingerprint)


def test_heat_ensemble_summary(tmp_path):
    summary, records = run_ensemble(heat_config(), tmp_path)
    checks = {c["check"]: c for c in summary["checks"]}
    assert checks["heat_oracle"]["pass"] and checks["heat_oracle"]["statistic"] <= 1e-3
    assert "martingale" not in checks
    assert summary["pass"]
    assert json.loads((tmp_path / SUMMARY).read_text()) == json.loads(dump_json(summary))
    assert len(records) == 1


def test_summary_checks_appear_once(tmp_path):
    cfg = heat_config(analysis={"checks": ["positivity", "termination", "heat_oracle"]})
    summary, _ = run_ensemble(cfg, tmp_path)
    names = [c["check"] for c in summary["checks"]]
    assert sorted(names) == sorted(set(names)) == ["heat_oracle", "positivity", "termination"]


def test_rerun_is_byte_identical(tmp_path):
    cfg = heat_config(noise={"mu_preset": "geometric:0.5"}, ensemble={"paths": 2})
    run_ensemble(cfg, tmp_path / "a")
    run_ensemble(cfg, tmp_path / "b")
    for name in ("summary.json", "index.json", "path_0.bin", "path_1.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_mixed_fingerprints_rejected(tmp_path):
    a = simulate(heat_config(), [0])
    b = simulate(heat_config(time={"T": 0.02}), [1])
    with pytest.raises(FingerprintMismatchError):
        ensure_single_fingerprint(a + b)
    write_records(tmp_path, heat_config(time={"T": 0.02}), a)
    with pytest.raises(FingerprintMismatchError):
        load_records(tmp_path)


def test_small_ensemble_martingale_fails_when_requested():
    cfg = heat_config(noise={"mu_preset": "geometric:0.5"}, ensemble={"paths": 2})
    reports = run_checks(cfg, simulate(cfg), ["martingale"])
    assert reports[0]["pass"] is False and "100" in reports[0]["details"]["error"]
    auto = {r["check"] for r in run_checks(cfg, simulate(cfg))}
    assert "martingale" not in auto


def test_exponent_check_on_stored_records(tmp_path):
    cfg = heat_config(noise={"mu_preset": "geometric:0.5"}, time={"T": 0.05, "dt": 1e-4}, ensemble={"paths": 2})
    reports = run_checks(cfg, simulate(cfg), ["exponent_time"])
    rep = reports[0]
    assert rep["check"] == "exponent_time" and rep["statistic"] is not None
    assert rep["bound"] == pytest.approx(0.5 - cfg["analysis"]["epsilon"] - cfg["analysis"]["delta"])


def test_render_report_golden():
    summary = json.loads(open("tests/data/summary_golden.json", encoding="utf-8").read())
    text, status = render_report(summary)
    assert status == 0
    assert text == open("tests/data/report_golden.txt", encoding="utf-8").read()


def test_render_report_fail_and_malformed():
    summary = json.loads(open("tests/data/summary_golden.json", encoding="utf-8").read())
    summary["checks"][0]["pass"] = False
    text, status = render_report(summary)
    assert status == 1 and "FAIL" in text
    bad = dict(summary, checks=[dict(summary["checks"][0], anchor="unregistered")])
    with pytest.raises(ReportError):
        render_report(bad)
    missing = dict(summary, checks=[{k: v for k, v in summary["checks"][0].items() if k != "margin"}])
    with pytest.raises(ReportError):
        render_report(missing)
