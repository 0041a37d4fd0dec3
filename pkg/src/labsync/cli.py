"""Command-line front end.

Machine-readable JSON goes to stdout (or the --out/--report file); the
human-readable summary goes to stderr. Exit status: 0 success, 1 when
verification or quality checks fail, 2 for usage and input errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from . import session as ses
from . import simulator as sim
from .devicesync import ClockModel
from .timeseries import Quality, magnitude
from .vibration import decode_all, parse_thresholds

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SET_HELP = """\
dotted overrides, repeatable. Keys are ScenarioParams fields (noise_accel,
injected_lag, sway_amplitude, mass, ...) or SessionParams fields (mislabel,
with_force, gap, first_onset, vibration_amplitude, ...). Clock models use
worn_clocks.<device>.skew / .offset. Values are parsed as JSON when possible,
e.g. --set injected_lag=0.061 --set mislabel=1 --set with_force=false"""


class UsageError(Exception):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(params: sim.SessionParams, pairs) -> sim.SessionParams:
    """``key=value`` dotted overrides onto session and scenario parameters."""
    scenario_fields = {f.name for f in dataclasses.fields(sim.ScenarioParams)}
    session_fields = {f.name for f in dataclasses.fields(sim.SessionParams)}
    sc_changes, se_changes = {}, {}
    clocks = {d: c.to_dict() for d, c in params.worn_clocks.items()}
    for pair in pairs or ():
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        value = _parse_value(raw)
        parts = key.split(".")
        if parts[0] == "scenario":
            parts = parts[1:]
        if parts[0] == "worn_clocks" and len(parts) == 3 and parts[2] in ("skew", "offset"):
            clocks.setdefault(parts[1], {"skew": 1.0, "offset": 0.0})[parts[2]] = float(value)
        elif len(parts) == 1 and parts[0] in scenario_fields:
            sc_changes[parts[0]] = value
        elif len(parts) == 1 and parts[0] in session_fields and parts[0] not in ("scenario", "tests"):
            se_changes[parts[0]] = value
        else:
            raise UsageError(f"unknown parameter {key!r}")
    try:
        scenario = dataclasses.replace(params.scenario, **sc_changes)
        worn = {d: ClockModel(**c) for d, c in clocks.items()}
        return dataclasses.replace(params, scenario=scenario, worn_clocks=worn, **se_changes)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _emit(payload, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _summary(report: dict) -> str:
    s = report["summary"]
    lines = [
        f"{s['entries']} entries: {s['match']} match, {s['mismatch']} mismatch, "
        f"{s['missing_vibration']} missing vibration, {s['missing_annotation']} missing annotation"
    ]
    for e in report["entries"]:
        ann = e["annotation"]["test_label"] if e["annotation"] else "-"
        lags = []
        for k in ("lag_acceleration", "lag_force"):
            if e.get(k):
                lags.append(f"{k[4:]} {e[k]['lag'] * 1000:+.1f} ms ({e[k]['quality']})")
        lines.append(f"  {e['status']:<18} annotated {ann:<6} decoded {e['decoded_label'] or '-':<6} " + ", ".join(lags))
    lines.extend(f"warning: {w}" for w in report["warnings"])
    return "\n".join(lines)


def cmd_simulate(args) -> int:
    params = sim.session_params(args.scenario, seed=args.seed)
    params = apply_overrides(params, args.set)
    path, truth = sim.simulate(params, args.out)
    _emit({"manifest": str(path), "truth": truth}, None)
    print(f"wrote {args.scenario} session (seed {args.seed}) to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_sync_devices(args) -> int:
    manifest = ses.load_manifest(args.manifest)
    data = ses.sync_devices(manifest)
    payload = {
        "toolkit_version": __version__,
        "manifest_sha256": manifest.digest,
        "device_sync": [a.to_dict() for a in data.alignments],
        "warnings": data.warnings,
    }
    _emit(payload, args.out)
    for a in data.alignments:
        print(f"{a.device_id}: skew {a.model.skew:.9f}, offset {a.model.offset:+.6f} s", file=sys.stderr)
    bad = any(e.quality != Quality.OK for a in data.alignments for e in a.lags)
    return EXIT_FAIL if bad else EXIT_OK


def cmd_decode(args) -> int:
    thresholds = parse_thresholds(args.thresholds) if args.thresholds else None
    series = ses.read_series(args.stream)
    if series.n_channels == 3:
        series = magnitude(series, "accel_norm")
    elif series.n_channels != 1:
        raise UsageError(f"{args.stream}: expected 1 or 3 channels, got {series.n_channels}")
    frames, failures = decode_all(series, thresholds=thresholds)
    _emit(
        {
            "frames": [f.to_dict() for f in frames],
            "failures": [{"onset": t, "message": m} for t, m in failures],
        },
        None,
    )
    for f in frames:
        print(f"code {f.code} ({f.bits}) at {f.onset:.3f} s, {f.confidence.value}", file=sys.stderr)
    for t, m in failures:
        print(f"failed at {t:.3f} s: {m}", file=sys.stderr)
    return EXIT_FAIL if failures or not frames else EXIT_OK


def cmd_estimate_lag(args) -> int:
    manifest = ses.load_manifest(args.manifest)
    report = ses.run_pipeline(manifest, methods=(args.method,))
    key = f"lag_{args.method}"
    picked = [
        e for e in report["entries"]
        if args.test in ((e["annotation"] or {}).get("test_label"), e["decoded_label"])
    ]
    if not picked:
        raise UsageError(f"no test execution labelled {args.test!r} in {args.manifest}")
    out = [
        {
            "recording_id": e["recording_id"],
            "annotation": e["annotation"],
            "decoded_label": e["decoded_label"],
            "method": args.method,
            "lag": e[key],
        }
        for e in picked
    ]
    _emit({"manifest_sha256": manifest.digest, "estimates": out}, None)
    for e in out:
        lag = e["lag"]
        desc = "n/a" if lag is None else f"{lag['lag'] * 1000:+.1f} ms ({lag['quality']})"
        print(f"{e['recording_id']}: {args.method} lag {desc}", file=sys.stderr)
    ok = all(e["lag"] is not None and e["lag"]["quality"] == Quality.OK.value for e in out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify(args) -> int:
    manifest = ses.load_manifest(args.manifest)
    report = ses.run_pipeline(manifest, lags=False)
    _write_report(report, args.report)
    print(_summary(report), file=sys.stderr)
    return EXIT_FAIL if report["summary"]["match"] != report["summary"]["entries"] else EXIT_OK


def cmd_run(args) -> int:
    manifest = ses.load_manifest(args.manifest)
    report = ses.run_pipeline(manifest)
    _write_report(report, args.report)
    print(_summary(report), file=sys.stderr)
    return EXIT_FAIL if ses.report_failed(report) else EXIT_OK


def _write_report(report: dict, path: str | None) -> None:
    text = ses.dumps_report(report)
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="labsync",
        description="Verify vibration-coded test metadata and synchronize phone and mocap streams.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic session (CSV streams + manifest)")
    s.add_argument("--scenario", choices=sorted(sim.SCENARIO_TESTS), required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help=SET_HELP)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sync-devices", help="align worn phones to the master phone")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", help="write JSON here instead of stdout")
    s.set_defaults(func=cmd_sync_devices)

    s = sub.add_parser("decode-vibration", help="decode vibration trains in one accelerometer CSV")
    s.add_argument("--stream", required=True)
    s.add_argument("--thresholds", metavar="LO,HI", help="fixed band in m/s^2 (default: per recording)")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("estimate-lag", help="residual phone-vs-mocap lag for one test label")
    s.add_argument("--method", choices=("acceleration", "force"), required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--test", required=True, help="test label, e.g. UTT")
    s.set_defaults(func=cmd_estimate_lag)

    s = sub.add_parser("verify", help="decode and cross-check test labels (no lag estimation)")
    s.add_argument("--manifest", required=True)
    s.add_argument("--report", help="write the report here instead of stdout")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("run", help="full pipeline: sync, decode, verify, residual lags")
    s.add_argument("--manifest", required=True)
    s.add_argument("--report", help="write the report here instead of stdout")
    s.set_defaults(func=cmd_run)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage itself
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ses.ManifestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
