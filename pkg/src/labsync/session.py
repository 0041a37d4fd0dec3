"""Session ingestion, metadata verification and the end-to-end pipeline.

A session is described by a JSON manifest pointing at CSV streams (``t`` in
seconds followed by one column per channel). Phone streams are stamped with
each phone's own clock; mocap recordings (markers and force plates) start at
zero on the mocap clock. Annotations come from the timer phone, whose clock
is taken to be the master phone's clock.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .devicesync import (
    ClockModel,
    DeviceAlignment,
    PerturbationEvent,
    apply_clock_model,
    clock_model_from_events,
)
from .kinematic import FrameConventions, MarkerTriad, Rotation, kinematic_lag
from .kinetic import DEFAULT_PREFILTER, BodyParams, ForcePlatePair, force_lag
from .timeseries import LagEstimate, Quality, UniformSeries, magnitude
from .vibration import DecodedFrame, DecodeThresholds, PulseTiming, decode_all

ROLES = ("worn", "master", "timer")
KINDS = ("accel", "gyro", "magnetometer", "marker_position", "force")
CHANNELS = {
    "accel": ("ax", "ay", "az"),
    "gyro": ("gx", "gy", "gz"),
    "magnetometer": ("mx", "my", "mz"),
    "marker_position": ("x", "y", "z"),
    "force": ("x", "y", "z"),
}
UNITS = {
    "accel": {"m/s^2": 1.0, "g": 9.80665},
    "gyro": {"rad/s": 1.0, "deg/s": math.pi / 180.0},
    "magnetometer": {"uT": 1.0},
    "marker_position": {"m": 1.0, "mm": 1e-3},
    "force": {"N": 1.0},
}
MAX_JITTER = 1e-6  # s
PAIRING_WINDOW = 10.0  # s
EXPECTED_DURATION = {"UTT": 60.0, "2MWT": 120.0, "SBT": 30.0}
DURATION_SLACK = 0.25
STATUSES = ("match", "mismatch", "missing_vibration", "missing_annotation")


class ManifestError(ValueError):
    pass


# --------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class StreamSpec:
    kind: str
    file_path: Path
    rate: float
    units: str
    marker: int | None = None
    side: str | None = None


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    role: str
    wear_location: str
    streams: tuple[StreamSpec, ...]

    def stream(self, kind: str) -> StreamSpec | None:
        return next((s for s in self.streams if s.kind == kind), None)


@dataclass(frozen=True)
class RecordingSpec:
    recording_id: str
    device_id: str
    streams: tuple[StreamSpec, ...]

    @property
    def has_force(self) -> bool:
        sides = {s.side for s in self.streams if s.kind == "force"}
        return sides == {"left", "right"}


@dataclass(frozen=True)
class Annotation:
    test_label: str
    condition: str
    start: float
    end: float

    def __post_init__(self):
        if not self.end > self.start:
            raise ManifestError(
                f"annotation {self.test_label!r} ends ({self.end}) before it starts ({self.start})"
            )

    @property
    def duration(self) -> float:
        return self.end - self.start

    def to_dict(self) -> dict:
        return {
            "test_label": self.test_label,
            "condition": self.condition,
            "start": self.start,
            "end": self.end,
        }


@dataclass(frozen=True)
class LagSettings:
    max_lag: float = 2.0
    force_prefilter: float | None = DEFAULT_PREFILTER
    marker: int = 1
    axis: str | None = None


@dataclass(frozen=True)
class SessionManifest:
    path: Path
    digest: str
    devices: tuple[DeviceSpec, ...]
    recordings: tuple[RecordingSpec, ...]
    perturbation_events: tuple[PerturbationEvent, ...]
    code_table: dict
    annotations: tuple[Annotation, ...]
    body: BodyParams
    conventions: FrameConventions
    thresholds: DecodeThresholds | None = None
    lag_settings: LagSettings = field(default_factory=LagSettings)
    warnings: tuple[str, ...] = ()

    @property
    def master(self) -> DeviceSpec:
        return next(d for d in self.devices if d.role == "master")

    @property
    def worn(self) -> list[DeviceSpec]:
        return [d for d in self.devices if d.role == "worn"]

    def device(self, device_id: str) -> DeviceSpec:
        for d in self.devices:
            if d.device_id == device_id:
                return d
        raise ManifestError(f"unknown device {device_id!r}")


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ManifestError(f"{where}: missing field {key!r}")
    return obj[key]


def _stream_spec(raw: dict, base: Path, where: str) -> StreamSpec:
    kind = _require(raw, "kind", where)
    if kind not in KINDS:
        raise ManifestError(f"{where}.kind: {kind!r} is not one of {KINDS}")
    units = _require(raw, "units", where)
    if units not in UNITS[kind]:
        raise ManifestError(f"{where}.units: {units!r} not supported for {kind} ({sorted(UNITS[kind])})")
    rate = _require(raw, "rate", where)
    if not isinstance(rate, (int, float)) or not rate > 0:
        raise ManifestError(f"{where}.rate: must be a positive number, got {rate!r}")
    path = base / _require(raw, "file_path", where)
    if not path.is_file():
        raise ManifestError(f"{where}: stream file {path} does not exist")
    side = raw.get("side")
    if kind == "force" and side not in ("left", "right"):
        raise ManifestError(f"{where}.side: force streams need side 'left' or 'right'")
    return StreamSpec(kind, path, float(rate), units, raw.get("marker"), side)


def _read_header(path: Path) -> list[str]:
    with open(path) as fh:
        return fh.readline().strip().split(",")


def _check_stream_header(spec: StreamSpec) -> None:
    cols = _read_header(spec.file_path)
    if cols[:1] != ["t"] or tuple(cols[1:]) != CHANNELS[spec.kind]:
        raise ManifestError(
            f"{spec.file_path.name}: header {','.join(cols)!r} does not match "
            f"{spec.kind} columns t,{','.join(CHANNELS[spec.kind])}"
        )
    # header-level rate check from the first rows; the full check runs on read
    with open(spec.file_path) as fh:
        fh.readline()
        rows = [fh.readline() for _ in range(2)]
    try:
        t0, t1 = (float(r.split(",")[0]) for r in rows)
    except ValueError:
        raise ManifestError(f"{spec.file_path.name}: fewer than 2 data rows") from None
    file_rate = 1.0 / (t1 - t0) if t1 > t0 else float("inf")
    if abs(file_rate - spec.rate) > 1e-3 * spec.rate:
        raise ManifestError(
            f"{spec.file_path.name}: rate mismatch, file is sampled at {file_rate:.6g} Hz "
            f"but the manifest declares {spec.rate:g} Hz"
        )


def load_manifest(path) -> SessionManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} does not exist")
    raw_bytes = path.read_bytes()
    try:
        raw = json.loads(raw_bytes)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from None
    base = path.parent
    warnings: list[str] = []

    devices = []
    for i, d in enumerate(_require(raw, "devices", "manifest")):
        where = f"devices[{i}]"
        role = _require(d, "role", where)
        if role not in ROLES:
            raise ManifestError(f"{where}.role: {role!r} is not one of {ROLES}")
        streams = tuple(
            _stream_spec(s, base, f"{where}.streams[{j}]") for j, s in enumerate(d.get("streams", []))
        )
        devices.append(DeviceSpec(_require(d, "device_id", where), role, d.get("wear_location", ""), streams))
    ids = [d.device_id for d in devices]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"devices: duplicate device ids in {ids}")
    masters = [d.device_id for d in devices if d.role == "master"]
    if len(masters) != 1:
        raise ManifestError(
            f"devices: exactly one master device required, found {len(masters)}"
            + (f" ({', '.join(masters)})" if masters else "")
        )

    recordings = []
    for i, r in enumerate(raw.get("recordings", [])):
        where = f"recordings[{i}]"
        dev = _require(r, "device_id", where)
        if dev not in ids:
            raise ManifestError(f"{where}.device_id: unknown device {dev!r}")
        streams = tuple(_stream_spec(s, base, f"{where}.streams[{j}]") for j, s in enumerate(r["streams"]))
        recordings.append(RecordingSpec(_require(r, "recording_id", where), dev, streams))

    events = tuple(
        PerturbationEvent(float(_require(e, "start", "perturbation_events")), float(e["end"]), e.get("axis"))
        for e in raw.get("perturbation_events", [])
    )
    if events and len(events) != 2:
        raise ManifestError(f"perturbation_events: need exactly 2 windows, got {len(events)}")

    table_raw = _require(raw, "code_table", "manifest")
    code_table = {}
    for k, v in table_raw.items():
        code = int(k)
        if not 0 <= code <= 15:
            raise ManifestError(f"code_table: code {k!r} outside [0, 15]")
        code_table[code] = v
    labels = list(code_table.values())
    if len(set(labels)) != len(labels):
        dup = sorted({v for v in labels if labels.count(v) > 1})
        raise ManifestError(f"code_table: labels must be unique, repeated {dup}")

    annotations = tuple(
        sorted(
            (
                Annotation(
                    _require(a, "test_label", f"annotations[{i}]"),
                    a.get("condition", ""),
                    float(_require(a, "start", f"annotations[{i}]")),
                    float(_require(a, "end", f"annotations[{i}]")),
                )
                for i, a in enumerate(_require(raw, "annotations", "manifest"))
            ),
            key=lambda a: a.start,
        )
    )
    for a, b in zip(annotations, annotations[1:]):
        if b.start < a.end:
            raise ManifestError(
                f"annotations overlap: {a.test_label} [{a.start}, {a.end}] and "
                f"{b.test_label} [{b.start}, {b.end}]"
            )
    for a in annotations:
        expected = EXPECTED_DURATION.get(a.test_label)
        if expected and abs(a.duration - expected) > DURATION_SLACK * expected:
            warnings.append(
                f"annotation {a.test_label} at {a.start:.1f} s lasts {a.duration:.1f} s, "
                f"expected about {expected:.0f} s"
            )

    body = BodyParams(float(_require(_require(raw, "body", "manifest"), "mass", "body")))
    conv_raw = raw.get("conventions", {})
    mount = conv_raw.get("mount_rotation")
    conventions = FrameConventions(
        conv_raw.get("up_axis", "z"),
        float(conv_raw.get("gravity", 9.80665)),
        Rotation(np.asarray(mount)) if mount is not None else Rotation.identity(),
    )
    th = raw.get("thresholds")
    thresholds = DecodeThresholds(float(th["lower"]), float(th["upper"])) if th else None
    ls = raw.get("lag_estimation", {})
    lag_settings = LagSettings(
        float(ls.get("max_lag", 2.0)),
        ls.get("force_prefilter", DEFAULT_PREFILTER),
        int(ls.get("marker", 1)),
        ls.get("axis"),
    )

    for spec in [s for d in devices for s in d.streams] + [s for r in recordings for s in r.streams]:
        _check_stream_header(spec)

    return SessionManifest(
        path,
        hashlib.sha256(raw_bytes).hexdigest(),
        tuple(devices),
        tuple(recordings),
        events,
        code_table,
        annotations,
        body,
        conventions,
        thresholds,
        lag_settings,
        tuple(warnings),
    )


def read_stream(spec: StreamSpec) -> UniformSeries:
    """Load a CSV stream as SI-unit ``UniformSeries`` after a jitter check."""
    try:
        data = np.loadtxt(spec.file_path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ManifestError(f"{spec.file_path.name}: unreadable data ({exc})") from None
    if data.shape[0] < 2:
        raise ManifestError(f"{spec.file_path.name}: fewer than 2 data rows")
    t = data[:, 0]
    grid = t[0] + np.arange(len(t)) / spec.rate
    err = np.abs(t - grid)
    if err.max() > MAX_JITTER * (1 + 1e-6) + 1e-9:
        row = int(np.argmax(err > MAX_JITTER))
        raise ManifestError(
            f"{spec.file_path.name}: row {row + 2} at t={t[row]:.6f} s is off the "
            f"{spec.rate:g} Hz grid by {err[row]:.3g} s (max jitter {MAX_JITTER} s)"
        )
    scale = UNITS[spec.kind][spec.units]
    return UniformSeries(float(t[0]), spec.rate, CHANNELS[spec.kind], data[:, 1:] * scale)


def read_series(path, rate: float | None = None, scale: float = 1.0) -> UniformSeries:
    """Load any ``t,<channels>`` CSV; the rate is inferred from ``t`` if not given."""
    path = Path(path)
    cols = _read_header(path)
    if cols[:1] != ["t"] or len(cols) < 2:
        raise ManifestError(f"{path.name}: header must start with 't' followed by channels")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 2:
        raise ManifestError(f"{path.name}: fewer than 2 data rows")
    if rate is None:
        rate = (len(data) - 1) / (data[-1, 0] - data[0, 0])
        # snap to the nearest integer rate when the file is consistent with it
        if abs(rate - round(rate)) < 1e-6 * rate:
            rate = float(round(rate))
    spec = StreamSpec("accel", path, float(rate), "m/s^2")
    grid = data[0, 0] + np.arange(len(data)) / spec.rate
    if np.max(np.abs(data[:, 0] - grid)) > MAX_JITTER * (1 + 1e-6) + 1e-9:
        raise ManifestError(f"{path.name}: timestamps are not uniform at {rate:g} Hz")
    return UniformSeries(float(data[0, 0]), spec.rate, tuple(cols[1:]), data[:, 1:] * scale)


# --------------------------------------------------------------------------
# segmentation and verification


def segment_by_annotations(series: UniformSeries, annotations):
    """``(annotation, segment or None)`` per annotation, carved on the grid."""
    out = []
    for a in annotations:
        i0, i1 = series.index_range(a.start, a.end)
        if i0 < 0 or i1 > len(series):
            out.append((a, None))
            continue
        out.append(
            (a, UniformSeries(series.start_time + i0 / series.rate, series.rate, series.channel_names, series.samples[i0:i1]))
        )
    return out


@dataclass
class ReportEntry:
    status: str
    annotation: Annotation | None = None
    frame: DecodedFrame | None = None
    decoded_label: str | None = None
    recording_id: str | None = None
    lag_acceleration: LagEstimate | None = None
    lag_force: LagEstimate | None = None
    notes: list = field(default_factory=list)

    @property
    def time(self) -> float:
        return self.frame.onset if self.frame is not None else self.annotation.start

    def to_dict(self) -> dict:
        d = {
            "status": self.status,
            "annotation": None if self.annotation is None else self.annotation.to_dict(),
            "decoded_code": None if self.frame is None else self.frame.code,
            "decoded_label": self.decoded_label,
            "vibration": None if self.frame is None else self.frame.to_dict(),
            "recording_id": self.recording_id,
            "lag_acceleration": None if self.lag_acceleration is None else self.lag_acceleration.to_dict(),
            "lag_force": None if self.lag_force is None else self.lag_force.to_dict(),
            "notes": list(self.notes),
        }
        if self.frame is not None:
            lag = next(
                (e.lag for e in (self.lag_force, self.lag_acceleration)
                 if e is not None and e.quality == Quality.OK),
                None,
            )
            d["mocap_start"] = None if lag is None else self.frame.onset + lag
        return d


def _distance(onset: float, a: Annotation) -> float:
    if a.start <= onset <= a.end:
        return 0.0
    return min(abs(onset - a.start), abs(onset - a.end))


def verify_metadata(decoded, annotations, code_table, window: float = PAIRING_WINDOW) -> list[ReportEntry]:
    """Pair decoded frames with timer annotations and assign a status to each.

    Frames are taken in time order and each claims the closest unclaimed
    annotation containing its onset or within ``window`` seconds of it.
    """
    free = list(annotations)
    entries = []
    for frame in sorted(decoded, key=lambda f: f.onset):
        label = code_table.get(frame.code)
        best = min(free, key=lambda a: (_distance(frame.onset, a), a.start), default=None)
        if best is None or _distance(frame.onset, best) > window:
            entries.append(ReportEntry("missing_annotation", None, frame, label))
            continue
        free.remove(best)
        status = "match" if label == best.test_label else "mismatch"
        entries.append(ReportEntry(status, best, frame, label))
    entries.extend(ReportEntry("missing_vibration", a) for a in free)
    entries.sort(key=lambda e: e.time)
    return entries


# --------------------------------------------------------------------------
# pipeline


@dataclass
class SessionData:
    manifest: SessionManifest
    streams: dict  # (device_id, kind) -> series on the master clock
    alignments: list
    warnings: list


def sync_devices(manifest: SessionManifest, raw_streams: dict | None = None) -> SessionData:
    """Read phone streams and bring every worn phone onto the master clock."""
    streams = raw_streams or {
        (d.device_id, s.kind): read_stream(s) for d in manifest.devices for s in d.streams
    }
    master = manifest.master.device_id
    warnings = list(manifest.warnings)
    out = {k: v for k, v in streams.items() if k[0] == master}
    alignments = []
    ref_gyro = streams.get((master, "gyro"))
    for dev in manifest.worn:
        did = dev.device_id
        gyro = streams.get((did, "gyro"))
        if ref_gyro is None or gyro is None or len(manifest.perturbation_events) != 2:
            warnings.append(f"{did}: no perturbation alignment possible, clock left unchanged")
            model, lags = ClockModel(), ()
        else:
            model, lags = clock_model_from_events(
                ref_gyro, gyro, manifest.perturbation_events, manifest.lag_settings.max_lag
            )
            for e in lags:
                if e.quality != Quality.OK:
                    warnings.append(
                        f"{did}: perturbation alignment at {e.diagnostics['event_start']:.1f} s "
                        f"has quality {e.quality.value}"
                    )
        alignments.append(DeviceAlignment(did, model, lags))
        for (d, kind), s in streams.items():
            if d == did:
                out[(d, kind)] = apply_clock_model(s, model)
    return SessionData(manifest, out, alignments, warnings)


def _recording_streams(rec: RecordingSpec):
    markers = sorted((s for s in rec.streams if s.kind == "marker_position"), key=lambda s: s.marker or 0)
    triad = MarkerTriad(*(read_stream(s) for s in markers)) if len(markers) == 3 else None
    plates = None
    if rec.has_force:
        side = {s.side: read_stream(s) for s in rec.streams if s.kind == "force"}
        plates = ForcePlatePair(side["left"], side["right"])
    return triad, plates


def _phone_segment(phone: UniformSeries, onset: float, duration: float, margin: float):
    seg = phone.crop(onset - margin, onset + duration + margin)
    return seg.shifted(-onset)


def estimate_entry_lags(data: SessionData, entry: ReportEntry, rec: RecordingSpec, methods=("acceleration", "force")):
    m = data.manifest
    st = m.lag_settings
    phone = data.streams.get((rec.device_id, "accel"))
    if phone is None:
        entry.notes.append(f"device {rec.device_id} has no accelerometer stream")
        return
    triad, plates = _recording_streams(rec)
    span = triad.m1.duration if triad is not None else (plates.left.duration if plates else 0.0)
    seg = _phone_segment(phone, entry.frame.onset, span, st.max_lag + 1.0)
    if "acceleration" in methods and triad is not None:
        try:
            entry.lag_acceleration = kinematic_lag(
                seg, triad, m.conventions, st.max_lag, marker=st.marker - 1, axis=st.axis
            )
        except ValueError as exc:
            entry.notes.append(f"acceleration lag failed: {exc}")
    if "force" in methods and plates is not None:
        try:
            entry.lag_force = force_lag(seg, plates, m.body, st.max_lag, prefilter=st.force_prefilter)
        except ValueError as exc:
            entry.notes.append(f"force lag failed: {exc}")


def decode_master(data: SessionData, timing: PulseTiming = PulseTiming()):
    m = data.manifest
    accel = data.streams.get((m.master.device_id, "accel"))
    if accel is None:
        raise ManifestError(f"master device {m.master.device_id} has no accelerometer stream")
    return decode_all(magnitude(accel, "accel_norm"), timing, m.thresholds)


def run_pipeline(manifest: SessionManifest, *, lags: bool = True, methods=("acceleration", "force")) -> dict:
    """Sync, decode, verify and estimate residual lags; returns the report."""
    data = sync_devices(manifest)
    frames, failures = decode_master(data)
    entries = verify_metadata(frames, manifest.annotations, manifest.code_table)
    warnings = data.warnings + [f"vibration train at {t:.3f} s not decoded: {msg}" for t, msg in failures]

    # mocap recordings are listed in start order, one per decoded train
    framed = [e for e in entries if e.frame is not None]
    if lags and len(manifest.recordings) != len(framed):
        warnings.append(
            f"{len(manifest.recordings)} mocap recordings for {len(framed)} decoded trains; "
            f"pairing the first {min(len(framed), len(manifest.recordings))} in order"
        )
    for entry, rec in zip(framed, manifest.recordings):
        entry.recording_id = rec.recording_id
        if lags:
            estimate_entry_lags(data, entry, rec, methods)

    return build_report(manifest, data, entries, warnings)


def build_report(manifest, data: SessionData, entries, warnings) -> dict:
    counts = {s: sum(e.status == s for e in entries) for s in STATUSES}
    return {
        "toolkit_version": __version__,
        "manifest_sha256": manifest.digest,
        "device_sync": [a.to_dict() for a in data.alignments],
        "entries": [e.to_dict() for e in entries],
        "summary": dict(counts, entries=len(entries)),
        "warnings": warnings,
    }


def report_failed(report: dict) -> bool:
    """True when an entry is not a match or has no lag of ``ok`` quality."""
    for e in report["entries"]:
        if e["status"] != "match":
            return True
        lags = [e[k] for k in ("lag_acceleration", "lag_force") if e.get(k) is not None]
        if lags and not any(l["quality"] == Quality.OK.value for l in lags):
            return True
    return False


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"
