import json
import subprocess
import sys

import numpy as np
import pytest

from labsync import cli
from labsync.simulator import session_params, write_csv
from labsync.vibration import encode, synthesize


def test_overrides_reach_both_parameter_levels():
    p = cli.apply_overrides(
        session_params("gait"),
        ["injected_lag=0.05", "mislabel=1", "with_force=false", "worn_clocks.waist.skew=1.00002"],
    )
    assert p.scenario.injected_lag == 0.05
    assert p.mislabel == 1 and p.with_force is False
    assert p.worn_clocks["waist"].skew == 1.00002
    assert p.worn_clocks["waist"].offset == 0.35


@pytest.mark.parametrize("bad", ["nonsense", "bogus=1", "noise_accel=-1", "worn_clocks.waist.skew=2"])
def test_bad_overrides(bad):
    with pytest.raises(cli.UsageError):
        cli.apply_overrides(session_params("gait"), [bad])


def test_simulate_then_run(tmp_path, capsys):
    out = tmp_path / "s"
    assert cli.run(["simulate", "--scenario", "balance", "--seed", "2", "--out", str(out)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["truth"]["codes"] == [9, 9]
    code = cli.run(["run", "--manifest", str(out / "manifest.json"), "--report", str(tmp_path / "r.json")])
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["summary"]["match"] == 2
    # balance: the acceleration method is uninformative but the force lag is ok
    assert {e["lag_force"]["quality"] for e in report["entries"]} == {"ok"}
    assert code == 0


def test_run_on_mismatch_exits_one(mislabeled_gait, tmp_path, capsys):
    manifest, _ = mislabeled_gait
    assert cli.run(["run", "--manifest", str(manifest)]) == 1
    captured = capsys.readouterr()
    assert json.loads(captured.out)["summary"]["mismatch"] == 1
    assert "1 mismatch" in captured.err


def test_verify_skips_lags(mislabeled_gait, capsys):
    assert cli.run(["verify", "--manifest", str(mislabeled_gait[0])]) == 1
    report = json.loads(capsys.readouterr().out)
    assert all(e["lag_force"] is None for e in report["entries"])


def test_estimate_lag(mislabeled_gait, capsys):
    manifest, truth = mislabeled_gait
    assert cli.run(["estimate-lag", "--method", "acceleration", "--manifest", str(manifest), "--test", "UTT"]) == 0
    [est] = json.loads(capsys.readouterr().out)["estimates"]
    assert est["lag"]["method"] == "acceleration"
    assert est["lag"]["lag"] == pytest.approx(truth["injected_lag"], abs=5e-3)
    assert cli.run(["estimate-lag", "--method", "force", "--manifest", str(manifest), "--test", "TUG"]) == 2


def test_sync_devices(mislabeled_gait, tmp_path):
    out = tmp_path / "sync.json"
    assert cli.run(["sync-devices", "--manifest", str(mislabeled_gait[0]), "--out", str(out)]) == 0
    [dev] = json.loads(out.read_text())["device_sync"]
    assert dev["device_id"] == "waist"


def test_decode_vibration(tmp_path, capsys):
    s = synthesize(encode(11), lead=2.0, noise_sigma=0.1, seed=1)
    path = tmp_path / "v.csv"
    write_csv(path, s)
    assert cli.run(["decode-vibration", "--stream", str(path)]) == 0
    [f] = json.loads(capsys.readouterr().out)["frames"]
    assert f["code"] == 11 and f["onset"] == pytest.approx(2.0)
    quiet = s.replace(samples=np.full_like(s.samples, 9.81))
    write_csv(path, quiet)
    assert cli.run(["decode-vibration", "--stream", str(path)]) == 1
    assert cli.run(["decode-vibration", "--stream", str(path), "--thresholds", "3,1"]) == 2


def test_input_errors_exit_two(tmp_path, capsys):
    assert cli.run(["run", "--manifest", str(tmp_path / "missing.json")]) == 2
    assert cli.run(["simulate", "--scenario", "swim", "--out", str(tmp_path)]) == 2
    assert cli.run([]) == 2
    assert "error" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "labsync", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "labsync" in out.stdout
