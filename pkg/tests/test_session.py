import json
import shutil

import numpy as np
import pytest

from labsync import session as ses
from labsync.session import (
    Annotation,
    ManifestError,
    StreamSpec,
    load_manifest,
    read_series,
    read_stream,
    report_failed,
    segment_by_annotations,
    verify_metadata,
)
from labsync.timeseries import UniformSeries
from labsync.vibration import Confidence, DecodedFrame, encode

TABLE = {1: "2MWT", 5: "UTT", 9: "SBT"}


@pytest.fixture
def session_copy(mislabeled_gait, tmp_path):
    manifest, _ = mislabeled_gait
    dst = tmp_path / "s"
    shutil.copytree(manifest.parent, dst)
    return dst / "manifest.json"


def edit(path, fn):
    raw = json.loads(path.read_text())
    fn(raw)
    path.write_text(json.dumps(raw))
    return path


def frame(code, onset):
    return DecodedFrame(code, onset, (onset,), Confidence.EXACT, encode(code))


# -- manifest -----------------------------------------------------------------------


def test_manifest_loads(mislabeled_gait):
    m = load_manifest(mislabeled_gait[0])
    assert m.master.device_id == "master"
    assert [d.device_id for d in m.worn] == ["waist"]
    assert len(m.recordings) == 2 and all(r.has_force for r in m.recordings)
    assert m.code_table == TABLE
    assert len(m.perturbation_events) == 2
    assert len(m.digest) == 64
    # the mislabeled SBT lasts as long as the 2MWT it replaced
    assert any("expected about 30 s" in w for w in m.warnings)


def test_two_masters_rejected(session_copy):
    def two(raw):
        raw["devices"][1]["role"] = "master"

    with pytest.raises(ManifestError, match=r"exactly one master.*\(master, waist\)"):
        load_manifest(edit(session_copy, two))


def test_no_master_rejected(session_copy):
    def none(raw):
        raw["devices"][0]["role"] = "worn"

    with pytest.raises(ManifestError, match="found 0"):
        load_manifest(edit(session_copy, none))


def test_declared_rate_must_match_file(session_copy):
    def wrong(raw):
        raw["devices"][0]["streams"][0]["rate"] = 100.0

    with pytest.raises(ManifestError, match="rate mismatch.*50 Hz.*100 Hz"):
        load_manifest(edit(session_copy, wrong))


def test_missing_stream_file(session_copy):
    def gone(raw):
        raw["devices"][0]["streams"][0]["file_path"] = "nope.csv"

    with pytest.raises(ManifestError, match="does not exist"):
        load_manifest(edit(session_copy, gone))


def test_header_must_match_kind(session_copy):
    def swap(raw):
        raw["devices"][0]["streams"][0]["kind"] = "gyro"
        raw["devices"][0]["streams"][0]["units"] = "rad/s"

    with pytest.raises(ManifestError, match="header"):
        load_manifest(edit(session_copy, swap))


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda r: r["code_table"].update({"16": "X"}), "outside"),
        (lambda r: r["code_table"].update({"2": "UTT"}), "unique"),
        (lambda r: r["annotations"][1].update({"start": 50.0}), "overlap"),
        (lambda r: r["annotations"][0].update({"end": 10.0}), "before it starts"),
        (lambda r: r["devices"][0].update({"role": "boss"}), "role"),
        (lambda r: r.pop("body"), "body"),
        (lambda r: r["perturbation_events"].pop(), "exactly 2"),
        (lambda r: r["devices"][0]["streams"][0].update({"units": "furlong"}), "units"),
    ],
)
def test_manifest_errors(session_copy, mutate, message):
    with pytest.raises(ManifestError, match=message):
        load_manifest(edit(session_copy, mutate))


def test_invalid_json(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(ManifestError, match="not valid JSON"):
        load_manifest(p)


# -- streams ------------------------------------------------------------------------


def write(path, t, x, header="t,ax,ay,az"):
    np.savetxt(path, np.column_stack([t, x]), delimiter=",", header=header, comments="", fmt="%.6f")
    return path


def test_units_are_converted(tmp_path):
    t = np.arange(10) / 50.0
    p = write(tmp_path / "a.csv", t, np.tile([0.0, 0.0, 1.0], (10, 1)))
    s = read_stream(StreamSpec("accel", p, 50.0, "g"))
    np.testing.assert_allclose(s.samples[:, 2], 9.80665)
    p = write(tmp_path / "m.csv", t, np.tile([1000.0, 0.0, 0.0], (10, 1)), "t,x,y,z")
    assert read_stream(StreamSpec("marker_position", p, 50.0, "mm")).samples[0, 0] == 1.0


def test_jitter_names_the_row(tmp_path):
    t = np.arange(20) / 50.0
    t[7] += 0.004
    p = write(tmp_path / "a.csv", t, np.zeros((20, 3)))
    with pytest.raises(ManifestError, match="row 9"):
        read_stream(StreamSpec("accel", p, 50.0, "m/s^2"))


def test_read_series_infers_rate(tmp_path):
    t = 3.0 + np.arange(30) / 100.0
    s = read_series(write(tmp_path / "a.csv", t, np.zeros((30, 3))))
    assert s.rate == 100.0 and s.start_time == 3.0
    assert s.channel_names == ("ax", "ay", "az")


# -- segmentation ---------------------------------------------------------------------


def test_segment_grid_arithmetic():
    s = UniformSeries(0.0, 50.0, ("a",), np.arange(5000.0))
    [(a, seg)] = segment_by_annotations(s, [Annotation("UTT", "", 10.0, 70.0)])
    assert seg.start_time == 10.0
    assert seg.samples[0, 0] == 500 and seg.samples[-1, 0] == 3500
    assert len(seg) == 3001


def test_segment_off_grid_rounds_outwards():
    s = UniformSeries(0.0, 50.0, ("a",), np.arange(5000.0))
    [(a, seg)] = segment_by_annotations(s, [Annotation("UTT", "", 10.011, 69.99)])
    assert seg.samples[0, 0] == 500 and seg.samples[-1, 0] == 3500


def test_segment_outside_recording():
    s = UniformSeries(0.0, 50.0, ("a",), np.arange(500.0))
    [(_, seg)] = segment_by_annotations(s, [Annotation("UTT", "", 5.0, 65.0)])
    assert seg is None


# -- verification ---------------------------------------------------------------------


def test_verify_assigns_every_status():
    notes = [
        Annotation("UTT", "", 20.5, 80.5),
        Annotation("2MWT", "", 95.5, 215.5),
        Annotation("SBT", "", 300.0, 330.0),
    ]
    frames = [frame(5, 20.0), frame(9, 95.0), frame(1, 500.0)]
    entries = verify_metadata(frames, notes, TABLE)
    assert [e.status for e in entries] == ["match", "mismatch", "missing_vibration", "missing_annotation"]
    assert entries[1].decoded_label == "SBT" and entries[1].annotation.test_label == "2MWT"


def test_verify_pairs_nearest_within_window():
    notes = [Annotation("UTT", "", 30.0, 90.0)]
    assert verify_metadata([frame(5, 21.0)], notes, TABLE)[0].status == "match"
    out = verify_metadata([frame(5, 19.0)], notes, TABLE)
    assert [e.status for e in out] == ["missing_annotation", "missing_vibration"]


def test_unknown_code_is_a_mismatch():
    out = verify_metadata([frame(3, 20.0)], [Annotation("UTT", "", 20.5, 80.5)], TABLE)
    assert out[0].status == "mismatch" and out[0].decoded_label is None


# -- pipeline -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def report(mislabeled_gait):
    return ses.run_pipeline(load_manifest(mislabeled_gait[0]))


def test_pipeline_summary(report):
    assert report["summary"] == {
        "match": 1, "mismatch": 1, "missing_vibration": 0, "missing_annotation": 0, "entries": 2
    }
    assert report_failed(report)


def test_pipeline_lags_and_mocap_start(report, mislabeled_gait):
    truth = mislabeled_gait[1]
    for e, start in zip(report["entries"], truth["mocap_starts"]):
        for key in ("lag_acceleration", "lag_force"):
            assert e[key]["quality"] == "ok"
            assert e[key]["lag"] == pytest.approx(truth["injected_lag"], abs=5e-3)
        assert e["mocap_start"] == pytest.approx(start, abs=5e-3)
    assert [e["decoded_code"] for e in report["entries"]] == truth["codes"]


def test_pipeline_recovers_clock(report, mislabeled_gait):
    clock = mislabeled_gait[1]["clocks"]["waist"]
    [sync] = report["device_sync"]
    assert sync["clock_model"]["skew"] == pytest.approx(clock["skew"], abs=2e-6)
    assert sync["clock_model"]["offset"] == pytest.approx(clock["offset"], abs=2e-3)


def test_report_is_deterministic(report, mislabeled_gait):
    again = ses.run_pipeline(load_manifest(mislabeled_gait[0]))
    assert ses.dumps_report(again) == ses.dumps_report(report)


def test_report_failed_rules():
    ok = {"quality": "ok", "lag": 0.06}
    bad = {"quality": "low_correlation", "lag": 0.3}
    entry = lambda status, a, f: {"status": status, "lag_acceleration": a, "lag_force": f}
    assert not report_failed({"entries": [entry("match", ok, bad)]})
    assert report_failed({"entries": [entry("match", bad, bad)]})
    assert report_failed({"entries": [entry("missing_vibration", None, None)]})
    assert not report_failed({"entries": [entry("match", None, None)]})
