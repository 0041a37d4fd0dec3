"""Uniformly sampled series and the numeric kernels shared by every estimator.

Everything here is a pure function of its inputs. Series are immutable in
spirit: operations return new ``UniformSeries`` objects and never write into
the sample buffers they were given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import signal as sps

# Rounding slack when converting times to sample indices.
_GRID_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class UniformSeries:
    """Regularly sampled multi-channel signal.

    Row ``i`` is stamped ``start_time + i / rate``; no per-row timestamps are
    stored. NaN rows mark gaps (see :func:`fill_gaps`).
    """

    start_time: float
    rate: float
    channel_names: tuple[str, ...]
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D, got shape {samples.shape}")
        names = tuple(self.channel_names)
        if len(names) != samples.shape[1]:
            raise ValueError(
                f"{len(names)} channel names for {samples.shape[1]} columns"
            )
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ValueError(f"rate must be positive, got {self.rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "rate", float(self.rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) / self.rate

    @property
    def end_time(self) -> float:
        return self.start_time + (len(self) - 1) / self.rate

    @property
    def duration(self) -> float:
        return (len(self) - 1) / self.rate

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.samples[:, self.channel_names.index(name)]
        except ValueError:
            raise KeyError(f"no channel {name!r} in {self.channel_names}") from None

    def select(self, *names: str) -> "UniformSeries":
        cols = [self.channel_names.index(n) for n in names]
        return UniformSeries(self.start_time, self.rate, names, self.samples[:, cols])

    def replace(self, samples=None, channel_names=None, start_time=None) -> "UniformSeries":
        return UniformSeries(
            self.start_time if start_time is None else start_time,
            self.rate,
            self.channel_names if channel_names is None else channel_names,
            self.samples if samples is None else samples,
        )

    def shifted(self, dt: float) -> "UniformSeries":
        """Same samples, stamped ``dt`` seconds later."""
        return self.replace(start_time=self.start_time + dt)

    def index_range(self, start: float, end: float) -> tuple[int, int]:
        """Row span ``[i0, i1)`` carved on the grid: start rounded down, end up."""
        i0 = math.floor((start - self.start_time) * self.rate + _GRID_EPS)
        i1 = math.ceil((end - self.start_time) * self.rate - _GRID_EPS) + 1
        return i0, i1

    def crop(self, start: float, end: float) -> "UniformSeries":
        """Rows covering ``[start, end]``, clipped to the available data."""
        i0, i1 = self.index_range(start, end)
        i0 = max(i0, 0)
        i1 = min(i1, len(self))
        if i1 - i0 < 1:
            raise ValueError(
                f"window [{start:.3f}, {end:.3f}] s does not intersect series "
                f"[{self.start_time:.3f}, {self.end_time:.3f}] s"
            )
        return UniformSeries(
            self.start_time + i0 / self.rate, self.rate, self.channel_names, self.samples[i0:i1]
        )


class Method(str, Enum):
    ACCELERATION = "acceleration"
    FORCE = "force"
    GYRO_PERTURBATION = "gyro-perturbation"


class Quality(str, Enum):
    OK = "ok"
    LOW_CORRELATION = "low_correlation"
    NEAR_WINDOW_EDGE = "near_window_edge"


@dataclass(frozen=True)
class LagEstimate:
    """Lag in seconds; positive means the probe lags the reference."""

    lag: float
    peak_correlation: float
    method: Method | None = None
    quality: Quality = Quality.OK
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lag": self.lag,
            "peak_correlation": self.peak_correlation,
            "method": None if self.method is None else self.method.value,
            "quality": self.quality.value,
            "diagnostics": dict(self.diagnostics),
        }

    def with_method(self, method: Method, **diagnostics) -> "LagEstimate":
        diag = dict(self.diagnostics)
        diag.update(diagnostics)
        return LagEstimate(self.lag, self.peak_correlation, method, self.quality, diag)


def _snap(u: np.ndarray) -> np.ndarray:
    r = np.rint(u)
    return np.where(np.abs(u - r) < _GRID_EPS, r, u)


def interpolate_at(series: UniformSeries, times: np.ndarray) -> np.ndarray:
    """Linear interpolation of every channel at arbitrary ``times``.

    Times outside the series span yield NaN rows.
    """
    u = _snap((np.asarray(times, dtype=float) - series.start_time) * series.rate)
    return _interp_index(series.samples, u)


def _interp_index(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    out = np.full((u.shape[0], x.shape[1]), np.nan)
    inside = (u >= 0) & (u <= n - 1)
    ui = u[inside]
    i = np.minimum(np.floor(ui).astype(np.int64), n - 2) if n > 1 else np.zeros(ui.shape, np.int64)
    frac = (ui - i)[:, None]
    if n == 1:
        out[inside] = x[0]
        return out
    lo = x[i]
    hi = x[i + 1]
    # exact knot reproduction: frac == 0 must return lo untouched
    out[inside] = np.where(frac == 0.0, lo, np.where(frac == 1.0, hi, lo + frac * (hi - lo)))
    return out


def resample(series: UniformSeries, target_rate: float, origin: float | None = None) -> UniformSeries:
    """Linearly interpolate ``series`` onto a uniform grid at ``target_rate``.

    The output grid is ``origin + k / target_rate`` (``origin`` defaults to the
    series start) restricted to the original span, so the last output row never
    extrapolates past the last input timestamp.
    """
    if not target_rate > 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if len(series) < 2:
        raise ValueError("need at least 2 samples to resample")
    if origin is None:
        origin = series.start_time
    k0 = math.ceil((series.start_time - origin) * target_rate - _GRID_EPS)
    k1 = math.floor((series.end_time - origin) * target_rate + _GRID_EPS)
    if k1 < k0:
        raise ValueError("target grid has no points inside the series span")
    k = np.arange(k0, k1 + 1, dtype=float)
    # index arithmetic kept in sample units so integer-ratio knots are exact
    u = k * series.rate / target_rate + (origin - series.start_time) * series.rate
    samples = _interp_index(series.samples, _snap(u))
    return UniformSeries(origin + k0 / target_rate, target_rate, series.channel_names, samples)


def magnitude(series: UniformSeries, name: str = "norm") -> UniformSeries:
    """Per-row Euclidean norm of a 3-channel series."""
    if series.n_channels != 3:
        raise ValueError(f"magnitude needs exactly 3 channels, got {series.n_channels}")
    return series.replace(samples=np.linalg.norm(series.samples, axis=1), channel_names=(name,))


def butterworth_lowpass(cutoff: float, rate: float, order: int = 2):
    """Digital Butterworth (bilinear transform, pre-warped) as ``(b, a)``."""
    if not 0 < cutoff < rate / 2:
        raise ValueError(f"cutoff {cutoff} Hz must lie in (0, Nyquist={rate / 2} Hz)")
    return sps.butter(order, cutoff, btype="low", fs=rate)


def lowpass_zero_phase(series: UniformSeries, cutoff: float, order: int = 2) -> UniformSeries:
    """Forward-backward Butterworth low-pass with zero net phase.

    Each end is padded by ``3 * (order + 1)`` samples of point reflection
    (``2 x[0] - x[k]``) and the passes start from Gustafsson initial
    conditions, which makes the result exactly time-reversal symmetric.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    b, a = butterworth_lowpass(cutoff, series.rate, order)
    pad = 3 * (order + 1)
    n = len(series)
    if n <= pad:
        raise ValueError(f"series of {n} samples too short for {pad}-sample edge padding")
    x = series.samples
    head = 2 * x[0] - x[pad:0:-1]
    tail = 2 * x[-1] - x[-2 : -pad - 2 : -1]
    xp = np.concatenate([head, x, tail], axis=0)
    # truncating the impulse response where it has decayed below 1e-12 keeps
    # the Gustafsson solve cheap on long records without visible error
    radius = float(np.max(np.abs(np.roots(a))))
    irlen = int(math.ceil(math.log(1e-12) / math.log(radius))) if radius > 0 else 1
    y = sps.filtfilt(b, a, xp, axis=0, method="gust", irlen=irlen if irlen < len(xp) else None)
    return series.replace(samples=y[pad:-pad])


def fill_gaps(series: UniformSeries, max_gap: int = 10) -> UniformSeries:
    """Linearly bridge NaN runs of at most ``max_gap`` rows; longer runs stay NaN.

    Leading and trailing gaps are never extrapolated.
    """
    x = series.samples.copy()
    for c in range(x.shape[1]):
        col = x[:, c]
        bad = ~np.isfinite(col)
        if not bad.any():
            continue
        for i0, i1 in _runs(bad):
            if i0 == 0 or i1 == len(col) or i1 - i0 > max_gap:
                continue
            lo, hi = col[i0 - 1], col[i1]
            frac = np.arange(1, i1 - i0 + 1) / (i1 - i0 + 1)
            col[i0:i1] = lo + frac * (hi - lo)
    return series.replace(samples=x)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """``[start, stop)`` pairs of consecutive True entries."""
    m = np.concatenate([[False], mask.astype(bool), [False]])
    edges = np.flatnonzero(np.diff(m.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def finite_runs(series: UniformSeries) -> list[tuple[int, int]]:
    """Row spans where every channel is finite."""
    return _runs(np.isfinite(series.samples).all(axis=1))


# --------------------------------------------------------------------------
# normalized cross-correlation


def _sliding_sums(r, mr, p, mp, m_lo, m_hi, method):
    """The six masked sums needed for Pearson correlation at shifts m.

    Shift m pairs ``r[i]`` with ``p[i + m]``.
    """
    rz = np.where(mr, r, 0.0)
    pz = np.where(mp, p, 0.0)
    fr = mr.astype(float)
    fp = mp.astype(float)
    pairs = {
        "n": (fr, fp),
        "sr": (rz, fp),
        "sp": (fr, pz),
        "srr": (rz * rz, fp),
        "spp": (fr, pz * pz),
        "srp": (rz, pz),
    }
    ms = np.arange(m_lo, m_hi + 1)
    out = {}
    if method == "fft":
        nr = len(r)
        for key, (u, v) in pairs.items():
            # correlate(v, u)[j] = sum_i v[i + j - (nr - 1)] * u[i]
            full = sps.correlate(v, u, mode="full", method="fft")
            idx = ms + nr - 1
            vals = np.zeros(len(ms))
            ok = (idx >= 0) & (idx < len(full))
            vals[ok] = full[idx[ok]]
            out[key] = vals
        out["n"] = np.rint(out["n"])
    elif method == "direct":
        nr, npr = len(r), len(p)
        for key in pairs:
            out[key] = np.zeros(len(ms))
        for j, m in enumerate(ms):
            i0 = max(0, -m)
            i1 = min(nr, npr - m)
            if i1 <= i0:
                continue
            for key, (u, v) in pairs.items():
                out[key][j] = np.dot(u[i0:i1], v[i0 + m : i1 + m])
    else:
        raise ValueError(f"unknown correlation method {method!r}")
    return ms, out


def normalized_xcorr(
    reference: np.ndarray,
    probe: np.ndarray,
    m_lo: int,
    m_hi: int,
    method: str = "fft",
):
    """Pearson correlation of ``reference[i]`` with ``probe[i + m]`` over the overlap.

    NaN entries are excluded from every overlap. Returns ``(m, corr, n)``
    where ``n`` counts the valid pairs at each shift; shifts whose overlap
    has zero variance get NaN.
    """
    r = np.asarray(reference, dtype=float)
    p = np.asarray(probe, dtype=float)
    mr = np.isfinite(r)
    mp = np.isfinite(p)
    if not mr.any() or not mp.any():
        raise ValueError("series has no finite samples")
    # remove global means first to keep the variance terms well conditioned
    r = r - r[mr].mean()
    p = p - p[mp].mean()
    ms, s = _sliding_sums(r, mr, p, mp, m_lo, m_hi, method)
    n = s["n"]
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = s["srp"] - s["sr"] * s["sp"] / n
        vr = s["srr"] - s["sr"] ** 2 / n
        vp = s["spp"] - s["sp"] ** 2 / n
        scale_r = np.max(np.abs(r[mr])) ** 2
        scale_p = np.max(np.abs(p[mp])) ** 2
        degenerate = (vr <= 1e-12 * n * scale_r) | (vp <= 1e-12 * n * scale_p) | (n < 2)
        corr = np.where(degenerate, np.nan, cov / np.sqrt(np.abs(vr * vp)))
    return ms, np.clip(corr, -1.0, 1.0), n.astype(np.int64)


def parabolic_peak(y_left: float, y_mid: float, y_right: float) -> float:
    """Offset in [-0.5, 0.5] of the vertex of the parabola through three points."""
    denom = y_left - 2.0 * y_mid + y_right
    if not np.isfinite(denom) or denom >= 0:
        return 0.0
    delta = 0.5 * (y_left - y_right) / denom
    return float(np.clip(delta, -0.5, 0.5))


def _as_column(series: UniformSeries, channel: str | None) -> np.ndarray:
    if channel is not None:
        return series.channel(channel)
    if series.n_channels != 1:
        raise ValueError(
            f"expected a 1-channel series (or an explicit channel), got {series.channel_names}"
        )
    return series.samples[:, 0]


LOW_CORRELATION = 0.2


def estimate_lag(
    reference: UniformSeries,
    probe: UniformSeries,
    max_lag: float = 2.0,
    subsample: bool = True,
    *,
    channel: str | None = None,
    min_overlap: float = 1.0,
    method: str = "fft",
) -> LagEstimate:
    """Lag of ``probe`` relative to ``reference`` by normalized cross-correlation.

    Positive lag means ``probe(t) ~ reference(t - lag)``. The search covers
    integer-sample lags in ``[-max_lag, max_lag]``; with ``subsample`` the
    integer argmax is refined by a parabola through its neighbours.

    Both series must share a rate. If the probe grid is not phase-aligned with
    the reference grid it is linearly re-interpolated onto it first.
    """
    if abs(reference.rate - probe.rate) > 1e-9 * reference.rate:
        raise ValueError(f"rate mismatch: {reference.rate} Hz vs {probe.rate} Hz")
    rate = reference.rate
    d_exact = (probe.start_time - reference.start_time) * rate
    d = round(d_exact)
    if abs(d_exact - d) > 1e-6:
        probe = resample(probe, rate, origin=reference.start_time)
        d = round((probe.start_time - reference.start_time) * rate)
    r = _as_column(reference, channel)
    p = _as_column(probe, channel)
    for name, x in (("reference", r), ("probe", p)):
        fin = x[np.isfinite(x)]
        if fin.size < 2 or np.ptp(fin) == 0:
            raise ValueError(f"{name} signal has zero variance")

    k_max = int(math.floor(max_lag * rate + _GRID_EPS))
    # lag k pairs r[i] with probe-grid sample i + k, i.e. p[i + k - d]
    ms, corr, n = normalized_xcorr(r, p, -k_max - d, k_max - d, method=method)
    lags = ms + d
    need = min_overlap * rate
    if n.min() < need:
        raise ValueError(
            f"insufficient overlap: {n.min() / rate:.3f} s at some lag in "
            f"[-{max_lag}, {max_lag}] s, need {min_overlap} s"
        )
    if not np.isfinite(corr).any():
        raise ValueError("correlation undefined at every lag (zero-variance overlap)")

    j = int(np.nanargmax(corr))
    peak = float(corr[j])
    k = float(lags[j])
    if subsample and 0 < j < len(corr) - 1:
        k += parabolic_peak(corr[j - 1], corr[j], corr[j + 1])
    lag = float(np.clip(k / rate, -max_lag, max_lag))

    quality = Quality.OK
    if peak < LOW_CORRELATION:
        quality = Quality.LOW_CORRELATION
    elif abs(lags[j]) >= k_max - 2:
        quality = Quality.NEAR_WINDOW_EDGE
    return LagEstimate(lag, peak, None, quality, {"overlap_s": float(n[j] / rate)})


def delayed(series: UniformSeries, samples: int) -> UniformSeries:
    """Integer-sample delay: ``out(t) = series(t - samples / rate)``."""
    return series.shifted(samples / series.rate)


def stack(series: Sequence[UniformSeries]) -> UniformSeries:
    """Join same-grid series column-wise."""
    first = series[0]
    for s in series[1:]:
        if len(s) != len(first) or s.rate != first.rate or abs(s.start_time - first.start_time) > 1e-9:
            raise ValueError("series are not on the same grid")
    names = tuple(n for s in series for n in s.channel_names)
    return first.replace(samples=np.hstack([s.samples for s in series]), channel_names=names)
