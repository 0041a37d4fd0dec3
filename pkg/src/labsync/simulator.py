"""Deterministic synthetic sessions with known lags, drift and test codes.

Motion is analytic: every displacement component is ``C * e(u) * sin(theta(u))``
with smooth seeded envelope and phase wander, so positions and
accelerations are exact at any timestamp. Device streams are produced by
evaluating the world at each device's own sample times mapped through its
clock, which realises injected lags and drift without a dense master
timeline.

Every random draw comes from :func:`labsync.rng.stream_rng` keyed by the
seed and a stream name, so any single stream can be regenerated alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation as _SciRotation

from . import vibration
from .devicesync import ClockModel, PerturbationEvent
from .kinematic import AXES, MarkerTriad
from .kinetic import ForcePlatePair
from .rng import stream_rng
from .timeseries import UniformSeries

STANDARD_GRAVITY = 9.80665
KINDS = ("gait", "balance", "perturbation")
DEFAULT_DURATION = {"gait": 120.0, "balance": 30.0, "perturbation": 5.0}

# triad geometry in the triad frame (m); marker 1 is the phone origin
TRIAD_OFFSETS = np.array([[0.0, 0.0, 0.0], [0.08, 0.0, 0.0], [0.02, 0.05, 0.0]])
PHONE_HEIGHT = 1.0  # m, waist height of the phone origin at rest
MOTION_MARGIN = 2.0  # s of motion before and after each recording
TAPER = 1.0  # s ramp at each end of the motion
PHONE_MARGIN = 3.0  # s of phone data around a single recording


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs for one test execution; amplitudes in SI units."""

    kind: str = "gait"
    duration: float | None = None
    gait_frequency: float = 2.0
    gait_amplitude: float = 2.0
    sway_frequency: float = 0.3
    sway_amplitude: float = 0.02
    noise_accel: float = 0.03
    noise_gyro: float = 0.002
    noise_force: float = 2.0
    noise_marker: float = 0.0005
    injected_lag: float = 0.066
    mass: float = 70.0
    seed: int = 0
    phone_rate: float = 50.0
    mocap_rate: float = 100.0
    force_rate: float = 1000.0
    mount_rotation: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.duration is None:
            object.__setattr__(self, "duration", DEFAULT_DURATION[self.kind])
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        for name in (
            "gait_amplitude", "sway_amplitude", "noise_accel", "noise_gyro",
            "noise_force", "noise_marker",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("gait_frequency", "sway_frequency", "phone_rate", "mocap_rate", "force_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        m = np.asarray(self.mount_rotation, dtype=float)
        if m.shape != (3, 3) or np.max(np.abs(m @ m.T - np.eye(3))) > 1e-9 or np.linalg.det(m) < 0:
            raise ValueError("mount_rotation must be a proper 3x3 rotation")
        object.__setattr__(self, "mount_rotation", tuple(tuple(float(v) for v in r) for r in m))

    @property
    def mount(self) -> np.ndarray:
        return np.asarray(self.mount_rotation)

    def noiseless(self) -> "ScenarioParams":
        return dataclasses.replace(
            self, noise_accel=0.0, noise_gyro=0.0, noise_force=0.0, noise_marker=0.0
        )


# --------------------------------------------------------------------------
# analytic motion


@dataclass(frozen=True)
class _Wander:
    """Sum of sines with exact first and second derivatives."""

    amps: np.ndarray
    freqs: np.ndarray
    phases: np.ndarray

    @classmethod
    def draw(cls, rng, n, amp, f_lo, f_hi) -> "_Wander":
        return cls(
            np.full(n, amp), rng.uniform(f_lo, f_hi, n), rng.uniform(0, 2 * np.pi, n)
        )

    @classmethod
    def zero(cls) -> "_Wander":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0))

    def eval(self, u: np.ndarray):
        w = 2 * np.pi * self.freqs
        arg = np.multiply.outer(u, w) + self.phases
        s, c = np.sin(arg), np.cos(arg)
        return s @ self.amps, c @ (self.amps * w), -(s @ (self.amps * w**2))


def _taper(u: np.ndarray, a: float, b: float, ramp: float = TAPER):
    """Raised-cosine gate that is 1 on ``[a + ramp, b - ramp]``, 0 outside ``[a, b]``."""
    v, d1, d2 = np.zeros_like(u), np.zeros_like(u), np.zeros_like(u)
    k = np.pi / ramp
    inside = (u > a) & (u < b)
    v[inside] = 1.0
    for lo, sign in ((a, 1.0), (b, -1.0)):
        s = sign * (u - lo)
        m = (s > 0) & (s < ramp)
        v[m] = 0.5 * (1 - np.cos(k * s[m]))
        d1[m] = sign * 0.5 * k * np.sin(k * s[m])
        d2[m] = 0.5 * k**2 * np.cos(k * s[m])
    return v, d1, d2


@dataclass(frozen=True)
class _Oscillator:
    axis: int
    C: float  # position amplitude (m)
    omega: float
    phase0: float
    ratio: float = 1.0
    env: _Wander = field(default_factory=_Wander.zero)
    wander: _Wander = field(default_factory=_Wander.zero)

    def eval(self, u: np.ndarray, gate):
        g, g1, g2 = gate
        E, E1, E2 = self.env.eval(u)
        e = g * (1 + E)
        e1 = g1 * (1 + E) + g * E1
        e2 = g2 * (1 + E) + 2 * g1 * E1 + g * E2
        p, p1, p2 = self.wander.eval(u)
        th = self.ratio * (self.omega * u + p) + self.phase0
        th1 = self.ratio * (self.omega + p1)
        th2 = self.ratio * p2
        s, c = np.sin(th), np.cos(th)
        pos = self.C * e * s
        acc = self.C * (e2 * s + 2 * e1 * th1 * c + e * th2 * c - e * th1**2 * s)
        return pos, acc


@dataclass(frozen=True)
class Motion:
    """Phone-origin translation during one test, in test-local time."""

    kind: str
    duration: float
    oscillators: tuple[_Oscillator, ...]
    gait_frequency: float = 2.0

    @classmethod
    def draw(cls, params: ScenarioParams, rng: np.random.Generator) -> "Motion":
        osc = []
        if params.kind == "gait":
            f, A = params.gait_frequency, params.gait_amplitude
            w = 2 * np.pi * f
            # step-to-step timing and amplitude variability breaks the 1/f periodicity
            osc.append(_Oscillator(
                2, -A / w**2, w, rng.uniform(0, 2 * np.pi), 1.0,
                _Wander.draw(rng, 3, 0.08, 0.1, 0.6), _Wander.draw(rng, 4, 0.1, 0.2, 0.8),
            ))
            # lateral sway at the stride frequency
            A_ml = 0.3 * A
            osc.append(_Oscillator(
                0, -A_ml / (0.5 * w) ** 2, w, rng.uniform(0, 2 * np.pi), 0.5,
                _Wander.draw(rng, 3, 0.08, 0.1, 0.6), osc[0].wander,
            ))
        elif params.kind == "balance":
            s = params.sway_amplitude
            for axis in range(3):
                for f in (params.sway_frequency, params.sway_frequency * 7.0 / 3.0):
                    w = 2 * np.pi * f
                    osc.append(_Oscillator(axis, -s / w**2, w, rng.uniform(0, 2 * np.pi)))
        return cls(params.kind, params.duration, tuple(osc), params.gait_frequency)

    def evaluate(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Displacement and acceleration (``(n, 3)`` each) at local times ``u``."""
        u = np.asarray(u, dtype=float)
        pos, acc = np.zeros((u.size, 3)), np.zeros((u.size, 3))
        if not self.oscillators:
            return pos, acc
        gate = _taper(u, -MOTION_MARGIN, self.duration + MOTION_MARGIN)
        for o in self.oscillators:
            p, a = o.eval(u, gate)
            pos[:, o.axis] += p
            acc[:, o.axis] += a
        return pos, acc

    def left_weight(self, u: np.ndarray) -> np.ndarray:
        if self.kind != "gait":
            return np.full(np.shape(u), 0.5)
        s = 0.8 * np.sin(np.pi * self.gait_frequency * np.asarray(u))
        left, right = np.maximum(0.5 + s, 0.0), np.maximum(0.5 - s, 0.0)
        return left / (left + right)


def specific_force(acc: np.ndarray, gravity: float = STANDARD_GRAVITY) -> np.ndarray:
    """Lab-frame ``a + g * up`` (what an accelerometer reads, before rotation)."""
    out = np.array(acc, dtype=float, copy=True)
    out[:, 2] += gravity
    return out


# --------------------------------------------------------------------------
# one test execution on the mocap clock


@dataclass
class TestRecording:
    """One test execution with the phone already on the (lagged) mocap clock.

    ``phone_accel(t) = world(t - injected_lag)`` sampled on the phone grid,
    so estimators run with the markers or plates as reference should return
    ``+injected_lag``.
    """

    __test__ = False

    params: ScenarioParams
    phone_accel: UniformSeries
    triad: MarkerTriad
    plates: ForcePlatePair
    orientation: np.ndarray
    truth: dict

    @property
    def injected_lag(self) -> float:
        return self.params.injected_lag


def random_orientation(rng: np.random.Generator) -> np.ndarray:
    return _SciRotation.random(random_state=rng).as_matrix()


def _markers(pos: np.ndarray, R: np.ndarray) -> list[np.ndarray]:
    origin = pos + np.array([0.0, 0.0, PHONE_HEIGHT])
    return [origin + R @ q for q in TRIAD_OFFSETS]


def _phone_reading(acc: np.ndarray, R_phone: np.ndarray) -> np.ndarray:
    # sensor-frame specific force: R_phone^T (a + g up), row-wise
    return specific_force(acc) @ R_phone


def _plates(motion: Motion, u: np.ndarray, acc: np.ndarray, mass: float):
    F = mass * specific_force(acc)
    wl = motion.left_weight(u)[:, None]
    return wl * F, (1.0 - wl) * F


def _add_noise(x: np.ndarray, sigma: float, rng) -> np.ndarray:
    return x + rng.normal(0.0, sigma, x.shape) if sigma > 0 else x


def _plate_noise(f: np.ndarray, sigma: float, rng) -> np.ndarray:
    f = _add_noise(f, sigma, rng)
    # the plates report compression only: unloaded-plate noise stays >= 0
    f[:, 2] = np.maximum(f[:, 2], 0.0)
    return f


def simulate_test(params: ScenarioParams, *, stream_prefix: str = "test") -> TestRecording:
    """One gait or balance recording: markers, plates and a lagged waist phone."""
    if params.kind == "perturbation":
        raise ValueError("use simulate_perturbation for perturbation scenarios")
    seed, pre = params.seed, stream_prefix
    motion = Motion.draw(params, stream_rng(seed, f"{pre}/motion"))
    R = random_orientation(stream_rng(seed, f"{pre}/pose"))
    R_phone = R @ params.mount

    n_m = int(round(params.duration * params.mocap_rate)) + 1
    t_m = np.arange(n_m) / params.mocap_rate
    pos, _ = motion.evaluate(t_m)
    rng = stream_rng(seed, f"{pre}/markers")
    names = tuple(f"{a}" for a in AXES)
    mk = [
        UniformSeries(0.0, params.mocap_rate, names, _add_noise(m, params.noise_marker, rng))
        for m in _markers(pos, R)
    ]

    n_f = int(round(params.duration * params.force_rate)) + 1
    t_f = np.arange(n_f) / params.force_rate
    _, acc_f = motion.evaluate(t_f)
    left, right = _plates(motion, t_f, acc_f, params.mass)
    rng = stream_rng(seed, f"{pre}/force")
    plates = ForcePlatePair(
        UniformSeries(0.0, params.force_rate, names, _plate_noise(left, params.noise_force, rng)),
        UniformSeries(0.0, params.force_rate, names, _plate_noise(right, params.noise_force, rng)),
    )

    t0 = -PHONE_MARGIN
    n_p = int(round((params.duration + 2 * PHONE_MARGIN) * params.phone_rate)) + 1
    t_p = t0 + np.arange(n_p) / params.phone_rate
    _, acc_p = motion.evaluate(t_p - params.injected_lag)
    phone = _add_noise(
        _phone_reading(acc_p, R_phone), params.noise_accel, stream_rng(seed, f"{pre}/accel")
    )
    truth = {
        "injected_lag": params.injected_lag,
        "com_specific_force": UniformSeries(0.0, params.force_rate, names, specific_force(acc_f)),
    }
    return TestRecording(
        params,
        UniformSeries(t0, params.phone_rate, ("ax", "ay", "az"), phone),
        MarkerTriad(*mk),
        plates,
        R_phone,
        truth,
    )


# --------------------------------------------------------------------------
# rocking perturbation


@dataclass(frozen=True)
class PerturbationParams:
    frequency: float = 1.5
    decay: float = 2.0
    length: float = 5.0
    amplitude: float = 1.0  # rad/s
    axis: str = "gx"


def rocking(t: np.ndarray, onset: float, p: PerturbationParams = PerturbationParams()) -> np.ndarray:
    s = np.asarray(t, dtype=float) - onset
    out = p.amplitude * np.exp(-np.clip(s, 0.0, None) / p.decay) * np.sin(2 * np.pi * p.frequency * s)
    return np.where((s >= 0) & (s <= p.length), out, 0.0)


GYRO_CHANNELS = ("gx", "gy", "gz")
ACCEL_CHANNELS = ("ax", "ay", "az")


def _device_grid(clock: ClockModel, t_start: float, t_end: float, rate: float):
    """Device-clock sample times covering reference span ``[t_start, t_end]``."""
    inv = clock.inverse()
    d0 = float(np.ceil(inv.apply_time(t_start) * rate - 1e-9) / rate)
    d1 = float(inv.apply_time(t_end))
    n = int(np.floor((d1 - d0) * rate + 1e-9)) + 1
    return d0, d0 + np.arange(n) / rate


def simulate_perturbation(
    clocks: dict[str, ClockModel],
    onsets,
    duration: float,
    *,
    rate: float = 50.0,
    noise_gyro: float = 0.002,
    seed: int = 0,
    params: PerturbationParams = PerturbationParams(),
) -> dict[str, UniformSeries]:
    """Gyro streams, one per device clock, seeing the same rocking bursts.

    ``onsets`` are burst starts on the reference clock; each device samples
    the bursts at ``clock(t_device)``.
    """
    if len(clocks) < 2:
        raise ValueError("alignment needs at least 2 devices")
    out = {}
    axis = GYRO_CHANNELS.index(params.axis)
    for dev, clock in clocks.items():
        d0, t_dev = _device_grid(clock, 0.0, duration, rate)
        t_ref = clock.apply_time(t_dev)
        g = np.zeros((t_dev.size, 3))
        for onset in onsets:
            g[:, axis] += rocking(t_ref, onset, params)
        g = _add_noise(g, noise_gyro, stream_rng(seed, f"{dev}/gyro"))
        out[dev] = UniformSeries(d0, rate, GYRO_CHANNELS, g)
    return out


# --------------------------------------------------------------------------
# whole sessions


@dataclass(frozen=True)
class TestSpec:
    __test__ = False  # not a pytest class

    label: str
    code: int
    kind: str
    duration: float
    condition: str = ""


DEFAULT_CODE_TABLE = {1: "2MWT", 5: "UTT", 9: "SBT"}
SCENARIO_TESTS = {
    "gait": (TestSpec("UTT", 5, "gait", 60.0, "normal"), TestSpec("2MWT", 1, "gait", 120.0, "normal")),
    "balance": (
        TestSpec("SBT", 9, "balance", 30.0, "eyes_open"),
        TestSpec("SBT", 9, "balance", 30.0, "eyes_closed"),
    ),
}


def _default_clocks():
    return {"waist": ClockModel(1.0 + 1e-5, 0.35)}


@dataclass(frozen=True)
class SessionParams:
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    tests: tuple[TestSpec, ...] = SCENARIO_TESTS["gait"]
    code_table: dict = field(default_factory=lambda: dict(DEFAULT_CODE_TABLE))
    worn_clocks: dict = field(default_factory=_default_clocks)
    mislabel: int | None = None
    with_force: bool = True
    first_onset: float = 20.0
    gap: float = 15.0
    tail: float = 10.0
    perturbation: PerturbationParams = field(default_factory=PerturbationParams)
    vibration_amplitude: float = 3.0
    annotation_delay: float = 0.5

    def __post_init__(self):
        if not self.tests:
            raise ValueError("a session needs at least one test")
        for t in self.tests:
            if t.code not in self.code_table:
                raise ValueError(f"test code {t.code} missing from the code table")
        if self.mislabel is not None and not 0 <= self.mislabel < len(self.tests):
            raise ValueError(f"mislabel index {self.mislabel} out of range")
        labels = list(self.code_table.values())
        if len(set(labels)) != len(labels):
            raise ValueError("code table labels must be unique")


@dataclass
class SimulatedSession:
    params: SessionParams
    streams: dict  # (device_id, kind) -> UniformSeries on the device clock
    recordings: list  # dicts: markers (3 series), left, right on the mocap clock
    annotations: list  # dicts on the timer (= master) clock
    events: tuple[PerturbationEvent, PerturbationEvent]
    truth: dict


def schedule(params: SessionParams):
    """Vibration onsets, mocap starts, perturbation onsets and session end."""
    onsets, starts = [], []
    t = params.first_onset
    for spec in params.tests:
        onsets.append(t)
        starts.append(t + params.scenario.injected_lag)
        t = float(np.ceil(t + max(spec.duration, vibration.FRAME_BITS) + params.gap))
    rock = (5.0, t)
    end = t + params.perturbation.length + params.tail
    return onsets, starts, rock, end


def _mislabel(label: str, table: dict) -> str:
    others = sorted(v for v in table.values() if v != label)
    if not others:
        raise ValueError("cannot mislabel with a single-entry code table")
    return others[0]


def simulate_session(params: SessionParams) -> SimulatedSession:
    sc = params.scenario
    seed = sc.seed
    onsets, starts, rock, end = schedule(params)
    rate = sc.phone_rate
    g = STANDARD_GRAVITY

    motions = []
    for k, spec in enumerate(params.tests):
        tp = dataclasses.replace(sc, kind=spec.kind, duration=spec.duration)
        motions.append(Motion.draw(tp, stream_rng(seed, f"rec{k}/motion")))

    def world(t):
        pos, acc = np.zeros((t.size, 3)), np.zeros((t.size, 3))
        for T, m in zip(starts, motions):
            lo, hi = T - MOTION_MARGIN, T + m.duration + MOTION_MARGIN
            sel = (t > lo) & (t < hi)
            if sel.any():
                p, a = m.evaluate(t[sel] - T)
                pos[sel] += p
                acc[sel] += a
        return pos, acc

    streams = {}
    # master phone: on the motor, at rest, reference clock
    R_master = random_orientation(stream_rng(seed, "master/pose"))
    n = int(np.floor(end * rate + 1e-9)) + 1
    env = np.zeros(n)
    timing = vibration.PulseTiming()
    for spec, v in zip(params.tests, onsets):
        env += vibration.burst_envelope(
            vibration.encode(spec.code), timing, rate, n, int(round(v * rate))
        )
    up_sensor = R_master.T @ np.array([0.0, 0.0, 1.0])
    acc = np.outer(g + params.vibration_amplitude * env, up_sensor)
    streams[("master", "accel")] = UniformSeries(
        0.0, rate, ACCEL_CHANNELS, _add_noise(acc, sc.noise_accel, stream_rng(seed, "master/accel"))
    )
    clocks = {"master": ClockModel()}
    clocks.update(params.worn_clocks)
    streams.update(
        {
            (dev, "gyro"): s
            for dev, s in simulate_perturbation(
                clocks, rock, end, rate=rate, noise_gyro=sc.noise_gyro, seed=seed,
                params=params.perturbation,
            ).items()
        }
    )

    # worn phones: the waist phone carries the triad; all share its motion
    R = random_orientation(stream_rng(seed, "waist/pose"))
    R_phone = R @ sc.mount
    for dev, clock in params.worn_clocks.items():
        d0, t_dev = _device_grid(clock, 0.0, end, rate)
        _, a = world(clock.apply_time(t_dev))
        acc = _add_noise(_phone_reading(a, R_phone), sc.noise_accel, stream_rng(seed, f"{dev}/accel"))
        streams[(dev, "accel")] = UniformSeries(d0, rate, ACCEL_CHANNELS, acc)

    recordings = []
    names = AXES
    for k, (spec, T, m) in enumerate(zip(params.tests, starts, motions)):
        n_m = int(round(spec.duration * sc.mocap_rate)) + 1
        tau = np.arange(n_m) / sc.mocap_rate
        pos, _ = m.evaluate(tau)
        rng = stream_rng(seed, f"rec{k}/markers")
        rec = {
            "markers": [
                UniformSeries(0.0, sc.mocap_rate, names, _add_noise(p, sc.noise_marker, rng))
                for p in _markers(pos, R)
            ],
            "device_id": next(iter(params.worn_clocks)),
        }
        if params.with_force:
            n_f = int(round(spec.duration * sc.force_rate)) + 1
            tau_f = np.arange(n_f) / sc.force_rate
            _, acc_f = m.evaluate(tau_f)
            left, right = _plates(m, tau_f, acc_f, sc.mass)
            rng = stream_rng(seed, f"rec{k}/force")
            rec["left"] = UniformSeries(0.0, sc.force_rate, names, _plate_noise(left, sc.noise_force, rng))
            rec["right"] = UniformSeries(0.0, sc.force_rate, names, _plate_noise(right, sc.noise_force, rng))
        recordings.append(rec)

    annotations = []
    for k, (spec, v) in enumerate(zip(params.tests, onsets)):
        label = spec.label
        if params.mislabel == k:
            label = _mislabel(label, params.code_table)
        start = v + params.annotation_delay
        annotations.append(
            {"test_label": label, "condition": spec.condition, "start": start, "end": start + spec.duration}
        )

    p = params.perturbation
    events = tuple(PerturbationEvent(r - 1.0, r + p.length + 1.0) for r in rock)
    truth = {
        "injected_lag": sc.injected_lag,
        "clocks": {d: c.to_dict() for d, c in clocks.items()},
        "codes": [t.code for t in params.tests],
        "labels": [t.label for t in params.tests],
        "vibration_onsets": onsets,
        "mocap_starts": starts,
        "perturbation_onsets": list(rock),
        "mislabel": params.mislabel,
        "mount_rotation": [list(r) for r in sc.mount_rotation],
    }
    return SimulatedSession(params, streams, recordings, annotations, events, truth)


# --------------------------------------------------------------------------
# files


def write_csv(path: Path, series: UniformSeries, scale: float = 1.0) -> None:
    """``t,<channels>`` with fixed formatting so output is byte-stable."""
    t = series.times
    data = np.column_stack([t, series.samples * scale])
    header = ",".join(("t",) + tuple(series.channel_names))
    fmt = ["%.6f"] + ["%.9g"] * series.n_channels
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)


def write_session(session: SimulatedSession, out_dir) -> Path:
    """Write CSV streams, ``manifest.json`` and ``truth.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sp = session.params
    sc = sp.scenario

    def stream_entry(dev, kind, series, units, scale=1.0):
        name = f"{dev}_{kind}.csv"
        write_csv(out / name, series, scale)
        return {"kind": kind, "file_path": name, "rate": series.rate, "units": units}

    devices = [
        {
            "device_id": "master",
            "role": "master",
            "wear_location": "motor",
            "streams": [
                stream_entry("master", "accel", session.streams[("master", "accel")], "m/s^2"),
                stream_entry("master", "gyro", session.streams[("master", "gyro")], "rad/s"),
            ],
        }
    ]
    for dev in sp.worn_clocks:
        devices.append(
            {
                "device_id": dev,
                "role": "worn",
                "wear_location": "waist_front",
                "streams": [
                    stream_entry(dev, "accel", session.streams[(dev, "accel")], "m/s^2"),
                    stream_entry(dev, "gyro", session.streams[(dev, "gyro")], "rad/s"),
                ],
            }
        )
    devices.append({"device_id": "timer", "role": "timer", "wear_location": "operator", "streams": []})

    recordings = []
    for k, rec in enumerate(session.recordings):
        entry = {"recording_id": f"rec{k:02d}", "device_id": rec["device_id"], "streams": []}
        for i, m in enumerate(rec["markers"], start=1):
            name = f"rec{k:02d}_marker{i}.csv"
            write_csv(out / name, m, 1000.0)
            entry["streams"].append(
                {"kind": "marker_position", "marker": i, "file_path": name, "rate": m.rate, "units": "mm"}
            )
        for side in ("left", "right"):
            if side in rec:
                name = f"rec{k:02d}_force_{side}.csv"
                write_csv(out / name, rec[side])
                entry["streams"].append(
                    {"kind": "force", "side": side, "file_path": name, "rate": rec[side].rate, "units": "N"}
                )
        recordings.append(entry)

    manifest = {
        "schema_version": 1,
        "devices": devices,
        "recordings": recordings,
        "perturbation_events": [{"start": e.start, "end": e.end} for e in session.events],
        "code_table": {str(c): l for c, l in sorted(sp.code_table.items())},
        "annotations": session.annotations,
        "body": {"mass": sc.mass},
        "conventions": {
            "up_axis": "z",
            "gravity": STANDARD_GRAVITY,
            "mount_rotation": [list(r) for r in sc.mount_rotation],
        },
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "truth.json").write_text(json.dumps(session.truth, indent=2, sort_keys=True) + "\n")
    return path


def session_params(kind: str = "gait", seed: int = 0, **scenario_overrides) -> SessionParams:
    if kind not in SCENARIO_TESTS:
        raise ValueError(f"session scenario must be one of {sorted(SCENARIO_TESTS)}")
    sc = ScenarioParams(kind=kind, seed=seed, **scenario_overrides)
    return SessionParams(scenario=sc, tests=SCENARIO_TESTS[kind])


def simulate(params: SessionParams, out_dir) -> tuple[Path, dict]:
    """Generate a session and write it; returns the manifest path and the truth."""
    session = simulate_session(params)
    return write_session(session, out_dir), session.truth


def digest_dir(path) -> str:
    """SHA-256 over file names and contents, for determinism checks."""
    h = hashlib.sha256()
    for f in sorted(Path(path).iterdir()):
        if f.is_file():
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()
