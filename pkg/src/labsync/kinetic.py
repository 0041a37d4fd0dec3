"""Force-based residual lag between a waist phone and the force plates.

Newton's second law per foot, summed over both feet, ties the ground
reaction forces to the specific force measured at the centre of mass:
``||f_left|| + ||f_right|| = m * ||a + g||``. The phone measures ``a + g``
directly, so its raw magnitude is compared with the summed force magnitude
divided by body mass; gravity stays in both signals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .timeseries import (
    LagEstimate,
    Method,
    UniformSeries,
    estimate_lag,
    interpolate_at,
    lowpass_zero_phase,
    magnitude,
    resample,
)

MIN_MASS, MAX_MASS = 20.0, 300.0
VERTICAL_TOLERANCE = -5.0  # N
# both magnitudes are low-passed before correlating: the 1 kHz plate noise and
# the phone noise are white, and their cross term swamps slow balance sway
DEFAULT_PREFILTER = 3.0  # Hz


@dataclass(frozen=True)
class BodyParams:
    mass: float = 70.0

    def __post_init__(self):
        if not MIN_MASS <= self.mass <= MAX_MASS:
            raise ValueError(f"body mass {self.mass} kg outside [{MIN_MASS}, {MAX_MASS}]")


@dataclass(frozen=True)
class ForcePlatePair:
    left: UniformSeries
    right: UniformSeries
    vertical: str = "z"

    def __post_init__(self):
        l, r = self.left, self.right
        if l.rate != r.rate or len(l) != len(r) or abs(l.start_time - r.start_time) > 1e-9:
            raise ValueError("left and right plates must share rate, start and length")
        if l.n_channels != 3 or r.n_channels != 3:
            raise ValueError("each plate needs 3 force channels")
        for side, s in (("left", l), ("right", r)):
            fz = s.channel(self.vertical) if self.vertical in s.channel_names else s.samples[:, 2]
            low = np.nanmin(fz) if np.isfinite(fz).any() else 0.0
            if low < VERTICAL_TOLERANCE:
                raise ValueError(
                    f"{side} plate vertical force reaches {low:.2f} N, below {VERTICAL_TOLERANCE} N"
                )

    @property
    def rate(self) -> float:
        return self.left.rate


def summed_force_magnitude(plates: ForcePlatePair) -> UniformSeries:
    """``||f_left|| + ||f_right||`` per row (sum of norms, not norm of sum)."""
    total = magnitude(plates.left).samples + magnitude(plates.right).samples
    return plates.left.replace(samples=total, channel_names=("force_norm",))


def _mask_intervals(series: UniformSeries, intervals) -> UniformSeries:
    if not intervals:
        return series
    t = series.times
    keep = np.zeros(len(series), dtype=bool)
    for a, b in intervals:
        keep |= (t >= a) & (t <= b)
    x = series.samples.copy()
    x[~keep] = np.nan
    return series.replace(samples=x)


def force_lag(
    com_accel: UniformSeries,
    plates: ForcePlatePair,
    body: BodyParams = BodyParams(),
    max_lag: float = 2.0,
    *,
    common_rate: str | float = "max",
    intervals=None,
    min_overlap: float = 5.0,
    subsample: bool = True,
    prefilter: float | None = DEFAULT_PREFILTER,
) -> LagEstimate:
    """Lag of the phone's specific-force magnitude relative to ``||f|| / m``.

    ``common_rate`` is ``"max"`` (upsample the slower stream, the default),
    ``"min"`` or an explicit rate. ``intervals`` optionally restricts the
    correlation to ``(start, end)`` windows on the plate clock, e.g. the
    time the subject spends on overground plates. ``prefilter`` is the
    cutoff of a zero-phase low-pass applied to both magnitudes at the common
    rate (``None`` disables it).

    Normalized correlation makes the lag independent of ``body.mass``; the
    mass only enters the residual diagnostic ``||f||/m - ||a||``.
    """
    if com_accel.n_channels != 3:
        raise ValueError("phone acceleration needs 3 channels")
    force = summed_force_magnitude(plates)
    force = force.replace(samples=force.samples / body.mass)
    phone = magnitude(com_accel, "accel_norm")
    if common_rate == "max":
        rate = max(force.rate, phone.rate)
    elif common_rate == "min":
        rate = min(force.rate, phone.rate)
    else:
        rate = float(common_rate)
    if force.rate != rate:
        force = resample(force, rate)
    phase = (phone.start_time - force.start_time) * rate
    if phone.rate != rate or abs(phase - round(phase)) > 1e-6:
        phone = resample(phone, rate, origin=force.start_time)
    if prefilter is not None and prefilter < rate / 2:
        force = lowpass_zero_phase(force, prefilter)
        phone = lowpass_zero_phase(phone, prefilter)
    force = _mask_intervals(force, intervals)

    est = estimate_lag(force, phone, max_lag, subsample, min_overlap=min_overlap)
    # residual of the magnitude identity after removing the estimated lag
    ph = interpolate_at(phone, force.times + est.lag)[:, 0]
    res = force.samples[:, 0] - ph
    res = res[np.isfinite(res)]
    rms = float(np.sqrt(np.mean(res**2))) if res.size else float("nan")
    return est.with_method(Method.FORCE, residual_rms=rms, common_rate=rate)
