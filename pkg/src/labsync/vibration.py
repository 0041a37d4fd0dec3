"""Test-type codec carried by vibration pulse trains.

A frame is eight one-second slots: ``1 1 p3 p2 p1 p0 1 1``. Each '1' drives
the motor for ``vibration_on`` seconds; the payload is the 4-bit test code,
most significant bit first. Decoding works on the accelerometer magnitude of
the phone the motor is strapped to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import signal as sps

from .rng import stream_rng
from .timeseries import UniformSeries

STANDARD_GRAVITY = 9.80665
FRAME_BITS = 8
DELIMITER_SLOTS = (0, 1, 6, 7)
# largest start-to-start spacing of consecutive '1's inside a valid frame
_MAX_INTRA_GAP_SLOTS = 5

LOWER_FLOOR = 0.05  # m/s^2
UPPER_FLOOR = 10.0  # m/s^2
MAD_FACTOR = 6.0


class DecodeError(ValueError):
    pass


class NoTrainFound(DecodeError):
    pass


class DelimiterError(DecodeError):
    pass


class AmbiguousTrain(DecodeError):
    pass


@dataclass(frozen=True)
class BitFrame:
    bits: tuple[bool, ...]

    def __post_init__(self):
        bits = tuple(bool(b) for b in self.bits)
        if len(bits) != FRAME_BITS:
            raise ValueError(f"frame needs {FRAME_BITS} bits, got {len(bits)}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_string(cls, text: str) -> "BitFrame":
        return cls(tuple(ch == "1" for ch in text))

    def __str__(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    @property
    def delimiters_ok(self) -> bool:
        return all(self.bits[i] for i in DELIMITER_SLOTS)

    @property
    def payload(self) -> int:
        value = 0
        for b in self.bits[2:6]:
            value = (value << 1) | int(b)
        return value


@dataclass(frozen=True)
class PulseTiming:
    bit_period: float = 1.0
    vibration_on: float = 0.3
    slot_tolerance: float = 0.25

    def __post_init__(self):
        if not 0 < self.vibration_on < self.bit_period:
            raise ValueError("vibration_on must lie in (0, bit_period)")
        if not 0 < self.slot_tolerance < self.bit_period / 2:
            raise ValueError("slot_tolerance must lie in (0, bit_period / 2)")


@dataclass(frozen=True)
class DecodeThresholds:
    """Band on the windowed deviation from baseline that counts as vibration."""

    lower: float
    upper: float

    def __post_init__(self):
        if not 0 < self.lower < self.upper:
            raise ValueError(f"need 0 < lower < upper, got {self.lower}, {self.upper}")


class Confidence(str, Enum):
    EXACT = "exact"
    RECOVERED = "recovered_with_tolerance"


@dataclass(frozen=True)
class DecodedFrame:
    code: int
    onset: float
    peak_times: tuple[float, ...]
    confidence: Confidence
    bits: BitFrame = field(default=None)

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "bits": str(self.bits),
            "onset": self.onset,
            "peak_times": list(self.peak_times),
            "confidence": self.confidence.value,
        }


def encode(code: int) -> BitFrame:
    if not (isinstance(code, (int, np.integer)) and 0 <= code <= 15):
        raise ValueError(f"test code must be an integer in [0, 15], got {code!r}")
    payload = [(code >> shift) & 1 for shift in (3, 2, 1, 0)]
    return BitFrame((1, 1, *payload, 1, 1))


def burst_envelope(frame: BitFrame, timing: PulseTiming, rate: float, n: int, onset_index: int = 0):
    """Additive magnitude signature of ``frame`` on an ``n``-sample grid.

    Each burst is a rectified carrier at ``rate / 4`` with unit amplitude.
    The phase offset keeps every in-burst sample strictly positive so the
    burst edges are unambiguous on the sample grid.
    """
    out = np.zeros(n)
    n_on = int(round(timing.vibration_on * rate))
    carrier = np.abs(np.sin(0.5 * np.pi * np.arange(n_on) + np.pi / 8))
    for k, bit in enumerate(frame.bits):
        if not bit:
            continue
        i0 = onset_index + int(round(k * timing.bit_period * rate))
        lo, hi = max(i0, 0), min(i0 + n_on, n)
        if hi > lo:
            out[lo:hi] += carrier[lo - i0 : hi - i0]
    return out


def synthesize(
    frame: BitFrame,
    timing: PulseTiming = PulseTiming(),
    rate: float = 50.0,
    amplitude: float = 3.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
    *,
    lead: float = 0.0,
    tail: float = 1.0,
    baseline: float = STANDARD_GRAVITY,
    start_time: float = 0.0,
) -> UniformSeries:
    """Accelerometer magnitude of a phone carrying the vibrating motor.

    The first burst starts ``lead`` seconds (rounded to the grid) after
    ``start_time``.
    """
    if rate < 20:
        raise ValueError(f"rate {rate} Hz too low to resolve {timing.vibration_on} s bursts")
    n = int(round((lead + FRAME_BITS * timing.bit_period + tail) * rate))
    onset_index = int(round(lead * rate))
    x = baseline + amplitude * burst_envelope(frame, timing, rate, n, onset_index)
    if noise_sigma > 0:
        x = x + stream_rng(seed, "vibration").normal(0.0, noise_sigma, n)
    return UniformSeries(start_time, rate, ("accel_norm",), x)


# --------------------------------------------------------------------------
# decoding


def windowed_deviation(
    magnitude: np.ndarray, rate: float, timing: PulseTiming, baseline: float | None = None
) -> np.ndarray:
    """Forward sliding mean of ``|x - baseline|`` over one burst length.

    Entry ``i`` averages rows ``i .. i + n_on - 1`` so a window that exactly
    covers a burst peaks at the burst's first row. Entries whose window runs
    past the end are zero. ``baseline`` defaults to the median of ``x``.
    """
    n_on = max(1, int(round(timing.vibration_on * rate)))
    x = np.asarray(magnitude, dtype=float)
    if baseline is None:
        baseline = float(np.median(x))
    dev = np.abs(x - baseline)
    return _window_mean(dev, n_on)


def _median(x: np.ndarray) -> float:
    n = len(x)
    part = np.partition(x, [(n - 1) // 2, n // 2])
    return 0.5 * float(part[(n - 1) // 2] + part[n // 2])


def _window_mean(dev: np.ndarray, n_on: int) -> np.ndarray:
    c = np.concatenate([[0.0], np.cumsum(dev)])
    w = np.zeros_like(dev)
    m = len(dev) - n_on + 1
    if m > 0:
        w[:m] = (c[n_on:] - c[:m]) / n_on
    return w


def _noise_floor(x: np.ndarray, n_on: int, max_iter: int = 4):
    """Baseline, windowed deviation and its vibration-free mean and spread.

    Everything is estimated from the raw rows outside burst candidates:
    those rows are independent and free of the ramps a window straddling a
    burst edge produces, and the median of all rows is pulled toward the
    bursts when they fill a sizeable share of a short clip. A window of
    ``n_on`` clean rows has mean ``E|r|`` and spread ``std|r| / sqrt(n_on)``.
    """
    n = len(x)
    baseline = _median(x)
    dev = np.abs(x - baseline)
    w = _window_mean(dev, n_on)
    valid = np.ones(n, dtype=bool)
    if n_on > 1 and n > n_on:
        valid[n - n_on + 1 :] = False  # windows running past the end
    vw = w[valid]
    k05, k25 = int(0.05 * (len(vw) - 1)), int(0.25 * (len(vw) - 1))
    q05, q25 = np.partition(vw, [k05, k25])[[k05, k25]]
    floor, spread = float(q25), float(q25 - q05) / (1.645 - 0.674)
    previous = None
    for _ in range(max_iter):
        flagged = np.flatnonzero(valid & (w > floor + 3.0 * spread))
        # a flagged window covers rows [i, i + n_on); one row of margin each side
        cover = np.bincount(np.maximum(flagged - 1, 0), minlength=n + 1) - np.bincount(
            np.minimum(flagged + n_on + 1, n), minlength=n + 1
        )
        clean = np.cumsum(cover[:n]) == 0
        if clean.sum() < 10 or (previous is not None and np.array_equal(clean, previous)):
            break
        previous = clean
        baseline = _median(x[clean])
        dev = np.abs(x - baseline)
        r = dev[clean]
        m = r.sum() / r.size
        new = float(m), float(np.sqrt(np.dot(r - m, r - m) / r.size / n_on))
        w = _window_mean(dev, n_on)
        if new == (floor, spread):
            break
        floor, spread = new
    return baseline, w, floor, spread


def default_thresholds(
    accel_magnitude: UniformSeries, timing: PulseTiming = PulseTiming()
) -> DecodeThresholds:
    """Per-recording band: ``lower = floor + 6 * spread``, ``upper = 10 * lower``.

    ``floor`` and ``spread`` describe the windowed deviation of the
    vibration-free part of the recording. Both limits have absolute floors
    so a noiseless recording still gets a usable band.
    """
    return _scan(accel_magnitude, timing, None).thresholds


def _band(med: float, mad: float) -> DecodeThresholds:
    lower = max(med + MAD_FACTOR * mad, LOWER_FLOOR)
    return DecodeThresholds(lower, max(10.0 * lower, UPPER_FLOOR))


@dataclass
class _Scan:
    start_time: float
    rate: float
    w: np.ndarray
    floor: float
    thresholds: DecodeThresholds
    adaptive: bool
    tol: int = 0

    def window_max(self, centres: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Max of ``w`` within ``tol`` rows of each centre and the row attaining it.

        Centres whose window misses the recording entirely give ``(0, -1)``.
        """
        n = len(self.w)
        idx = centres[:, None] + np.arange(-self.tol, self.tol + 1)
        ok = (idx >= 0) & (idx < n)
        vals = np.where(ok, self.w[np.clip(idx, 0, n - 1)], -np.inf)
        j = np.argmax(vals, axis=1)
        rows = np.arange(len(centres))
        inside = ok.any(axis=1)
        return (
            np.where(inside, vals[rows, j], 0.0),
            np.where(inside, idx[rows, j], -1),
        )


def _scan(series: UniformSeries, timing: PulseTiming, thresholds) -> _Scan:
    """Windowed deviation with the baseline taken from vibration-free rows.

    The plain median is pulled toward the bursts when they fill a sizeable
    share of a short clip, so the baseline is re-estimated with burst
    candidates excluded.
    """
    if series.n_channels != 1:
        raise ValueError("decode expects a 1-channel magnitude series")
    rate = series.rate
    x = series.samples[:, 0]
    n_on = max(1, int(round(timing.vibration_on * rate)))
    _, w, floor, spread = _noise_floor(x, n_on)
    th = thresholds if thresholds is not None else _band(floor, spread)
    return _Scan(series.start_time, rate, w, floor, th, thresholds is None, int(timing.slot_tolerance * rate))


def _trains(scan: _Scan, timing: PulseTiming) -> list[np.ndarray]:
    # zero padding lets a burst starting on row 0 register as a peak
    padded = np.concatenate([[0.0], scan.w, [0.0]])
    distance = max(1, int(0.5 * timing.bit_period * scan.rate))
    th = scan.thresholds
    idx, _ = sps.find_peaks(padded, height=(th.lower, th.upper), distance=distance)
    idx = idx - 1
    if idx.size == 0:
        return []
    max_gap = (_MAX_INTRA_GAP_SLOTS * timing.bit_period + timing.slot_tolerance) * scan.rate
    return np.split(idx, np.flatnonzero(np.diff(idx) > max_gap) + 1)


def find_trains(
    accel_magnitude: UniformSeries,
    timing: PulseTiming = PulseTiming(),
    thresholds: DecodeThresholds | None = None,
) -> tuple[list[np.ndarray], DecodeThresholds]:
    """Detected burst peaks grouped into candidate trains, as arrays of times."""
    scan = _scan(accel_magnitude, timing, thresholds)
    trains = _trains(scan, timing)
    return [scan.start_time + t / scan.rate for t in trains], scan.thresholds


def _slot_maxima(scan: _Scan, i0: int, timing: PulseTiming, n_slots: int):
    centres = i0 + np.round(np.arange(n_slots) * timing.bit_period * scan.rate).astype(int)
    return scan.window_max(centres)


def _read_slots(scan: _Scan, i0: int, timing: PulseTiming):
    """Bits of the frame anchored at row ``i0`` plus the slot-8 overrun flag."""
    vals, args = _slot_maxima(scan, i0, timing, FRAME_BITS + 1)
    th = scan.thresholds
    if scan.adaptive:
        # halfway between the noise floor and this train's own delimiter level
        d = np.sort(vals[list(DELIMITER_SLOTS)])
        level = 0.5 * float(d[1] + d[2])  # median of the four delimiter slots
        decision = max(scan.floor + 0.5 * (level - scan.floor), LOWER_FLOOR)
    else:
        decision = th.lower
    ones = (vals > decision) & (vals < th.upper)
    return ones[:FRAME_BITS], bool(ones[FRAME_BITS]), args, vals


def _anchors(peaks: np.ndarray, timing: PulseTiming, rate: float) -> list[int]:
    """Frame starts that put every detected peak on one of the 8 slots.

    The first detected peak is tried first, then the same grid shifted back
    one slot at a time, which covers trains whose leading bursts were too
    weak to be detected.
    """
    step = timing.bit_period * rate
    tol = timing.slot_tolerance * rate
    first, last = int(peaks[0]), int(peaks[-1])
    out = []
    for j in range(FRAME_BITS):
        i0 = first - int(round(j * step))
        if i0 < -tol:
            break
        if last - i0 <= (FRAME_BITS - 1) * step + tol:
            out.append(i0)
    return out


def _decode_train(scan: _Scan, peaks: np.ndarray, timing: PulseTiming) -> DecodedFrame:
    best = None
    first_error = None
    for n_try, i0 in enumerate(_anchors(peaks, timing, scan.rate)):
        bits, overrun, args, vals = _read_slots(scan, i0, timing)
        frame = BitFrame(tuple(bits))
        onset = scan.start_time + max(i0, 0) / scan.rate
        if not frame.delimiters_ok:
            err = DelimiterError(
                f"train at {onset:.3f} s reads {frame}: delimiters must be 11....11"
            )
        elif overrun:
            err = AmbiguousTrain(
                f"train at {onset:.3f} s has a '1' in slot {FRAME_BITS + 1}, "
                f"more than {FRAME_BITS} slots"
            )
        else:
            strength = float(np.min(vals[list(DELIMITER_SLOTS)]))
            if best is None or strength > best[0]:
                best = (strength, n_try, i0, frame, args)
            continue
        first_error = first_error or err
    if best is None:
        if first_error is None:
            span = (peaks[-1] - peaks[0]) / scan.rate
            first_error = AmbiguousTrain(
                f"peaks span {span:.2f} s, more than {FRAME_BITS} slots"
            )
        raise first_error
    _, n_try, i0, frame, args = best
    centres = i0 + np.round(np.arange(FRAME_BITS) * timing.bit_period * scan.rate)
    hit = np.asarray(frame.bits)
    on_grid = np.all(np.abs(args[:FRAME_BITS][hit] - centres[hit]) <= 1)
    exact = n_try == 0 and on_grid and len(peaks) == int(hit.sum())
    times = scan.start_time + args[:FRAME_BITS][hit] / scan.rate
    return DecodedFrame(
        frame.payload,
        float(times[0]),
        tuple(float(t) for t in times),
        Confidence.EXACT if exact else Confidence.RECOVERED,
        frame,
    )


def decode(
    accel_magnitude: UniformSeries,
    timing: PulseTiming = PulseTiming(),
    thresholds: DecodeThresholds | None = None,
) -> DecodedFrame:
    """Decode the dominant vibration train in a recording.

    The train with the most detected peaks wins (earliest on ties). Its first
    peak anchors the slot grid; a slot reads '1' when the windowed deviation
    peaks inside the band within ``slot_tolerance`` of the slot time.
    """
    if len(accel_magnitude) / accel_magnitude.rate < FRAME_BITS * timing.bit_period:
        raise ValueError(
            f"recording of {accel_magnitude.duration:.2f} s cannot hold an "
            f"{FRAME_BITS}-slot frame"
        )
    scan = _scan(accel_magnitude, timing, thresholds)
    trains = _trains(scan, timing)
    if not trains:
        th = scan.thresholds
        raise NoTrainFound(f"no vibration between {th.lower:.3g} and {th.upper:.3g} m/s^2")
    best = max(range(len(trains)), key=lambda i: (len(trains[i]), -i))
    return _decode_train(scan, trains[best], timing)


def decode_all(
    accel_magnitude: UniformSeries,
    timing: PulseTiming = PulseTiming(),
    thresholds: DecodeThresholds | None = None,
    min_peaks: int = 4,
) -> tuple[list[DecodedFrame], list[tuple[float, str]]]:
    """Decode every train in a long recording.

    Returns the decoded frames in time order plus ``(onset, message)`` for
    each train that failed validation. Groups with fewer than ``min_peaks``
    peaks cannot be frames (four delimiter '1's) and are reported as failures.
    """
    scan = _scan(accel_magnitude, timing, thresholds)
    frames, failures = [], []
    for peaks in _trains(scan, timing):
        onset = float(scan.start_time + peaks[0] / scan.rate)
        if len(peaks) < min_peaks:
            failures.append((onset, f"isolated burst group of {len(peaks)} peak(s)"))
            continue
        try:
            frames.append(_decode_train(scan, peaks, timing))
        except DecodeError as exc:
            failures.append((onset, str(exc)))
    return frames, failures


def parse_thresholds(text: str) -> DecodeThresholds:
    lo, hi = (float(v) for v in text.split(","))
    return DecodeThresholds(lo, hi)
