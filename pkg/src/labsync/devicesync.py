"""Phone-to-phone alignment from a shared rocking perturbation.

All phones lie in one half-tube while it is rocked, so their gyroscopes see
the same decaying oscillation. Cross-correlating one gyro axis against the
reference phone gives each phone's lag at that moment; a second rocking at
the end of the session turns the two lags into an affine clock model.

Sign conventions
----------------
``align_event`` returns a :class:`LagEstimate`: positive lag means the
event shows up later on the probe clock than on the reference clock.
``fit_clock_model`` takes *corrections*, i.e. reference time minus probe
time of the same event, which is the negated lag. With that reading the
skew is ``1 + (correction_end - correction_start) / (t_end - t_start)``.
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
    resample,
)

SKEW_BOUND = 1e-3
MIN_EVENT_SPACING = 60.0  # s
MIN_EVENT_LENGTH = 2.0  # s


@dataclass(frozen=True)
class PerturbationEvent:
    """Approximate rocking window on the reference clock."""

    start: float
    end: float
    axis: str | None = None

    def __post_init__(self):
        if not self.end - self.start >= MIN_EVENT_LENGTH:
            raise ValueError(
                f"perturbation window [{self.start}, {self.end}] s is shorter "
                f"than {MIN_EVENT_LENGTH} s"
            )

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)


@dataclass(frozen=True)
class ClockModel:
    """``t_reference = skew * t_device + offset``."""

    skew: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not abs(self.skew - 1.0) < SKEW_BOUND:
            raise ValueError(
                f"clock skew {self.skew!r} outside the sanity bound 1 +- {SKEW_BOUND}"
            )

    def apply_time(self, t):
        return self.skew * np.asarray(t, dtype=float) + self.offset

    def inverse(self) -> "ClockModel":
        return ClockModel(1.0 / self.skew, -self.offset / self.skew)

    def compose(self, inner: "ClockModel") -> "ClockModel":
        """``self(inner(t))``."""
        return ClockModel(self.skew * inner.skew, self.skew * inner.offset + self.offset)

    @property
    def is_identity(self) -> bool:
        return self.skew == 1.0 and self.offset == 0.0

    def to_dict(self) -> dict:
        return {"skew": self.skew, "offset": self.offset}


def max_variance_axis(gyro: UniformSeries, start: float, end: float) -> str:
    seg = gyro.crop(start, end).samples
    var = np.nanvar(seg, axis=0)
    return gyro.channel_names[int(np.argmax(var))]


def _common_rate(a: UniformSeries, b: UniformSeries) -> tuple[UniformSeries, UniformSeries]:
    rate = max(a.rate, b.rate)
    if a.rate != rate:
        a = resample(a, rate)
    if b.rate != rate:
        b = resample(b, rate, origin=a.start_time)
    return a, b


def align_event(
    reference_gyro: UniformSeries,
    probe_gyro: UniformSeries,
    event: PerturbationEvent,
    max_lag: float = 2.0,
    *,
    reference_axis: str | None = None,
    probe_axis: str | None = None,
) -> LagEstimate:
    """Lag of the probe phone relative to the reference at one rocking event.

    The reference is cut to the event window and the probe to the window
    widened by ``max_lag``, so the probe is free to slide by up to that much.
    Without an explicit axis each phone uses its own highest-variance axis
    inside the window (phones need not share an orientation).
    """
    for name, s in (("reference", reference_gyro), ("probe", probe_gyro)):
        if event.start < s.start_time or event.end > s.end_time:
            raise ValueError(
                f"perturbation window [{event.start:.3f}, {event.end:.3f}] s lies "
                f"outside the {name} series [{s.start_time:.3f}, {s.end_time:.3f}] s"
            )
    ref_axis = reference_axis or event.axis or max_variance_axis(
        reference_gyro, event.start, event.end
    )
    prb_axis = probe_axis or event.axis or max_variance_axis(probe_gyro, event.start, event.end)
    ref = reference_gyro.select(ref_axis).crop(event.start, event.end)
    prb = probe_gyro.select(prb_axis).crop(event.start - max_lag, event.end + max_lag)
    ref, prb = _common_rate(ref, prb)
    est = estimate_lag(ref, prb, max_lag, subsample=True, min_overlap=min(1.0, 0.5 * ref.duration))
    return est.with_method(
        Method.GYRO_PERTURBATION,
        reference_axis=ref_axis,
        probe_axis=prb_axis,
        event_start=event.start,
        event_end=event.end,
    )


def fit_clock_model(
    lag_start: float, t_start: float, lag_end: float, t_end: float
) -> ClockModel:
    """Affine map from probe time to reference time through two corrections.

    ``lag_*`` is reference time minus probe time of the same event and
    ``t_*`` the event time on the probe clock. The map sends ``t_start`` to
    ``t_start + lag_start`` and ``t_end`` to ``t_end + lag_end``.
    """
    span = t_end - t_start
    if not span > MIN_EVENT_SPACING:
        raise ValueError(
            f"perturbation events {span:.1f} s apart; need more than "
            f"{MIN_EVENT_SPACING:.0f} s to identify drift"
        )
    skew = 1.0 + (lag_end - lag_start) / span
    if not abs(skew - 1.0) < SKEW_BOUND:
        raise ValueError(
            f"fitted skew {skew!r} outside the sanity bound 1 +- {SKEW_BOUND}; "
            f"check the perturbation windows"
        )
    offset = t_start + lag_start - skew * t_start
    return ClockModel(skew, offset)


def apply_clock_model(series: UniformSeries, model: ClockModel) -> UniformSeries:
    """Restamp a device series onto the reference clock at its original rate.

    Row ``i`` of the input happened at reference time ``model(t_i)``; the
    output grid starts at ``model(t_0)`` with spacing ``1 / rate`` and is
    filled by linear interpolation through the remapped rows.
    """
    start = float(model.apply_time(series.start_time))
    if model.skew == 1.0:
        return series.replace(start_time=start)
    # output row k sits at reference time start + k/rate, i.e. device row
    # position (start + k/rate - offset)/skew mapped back to the input grid
    n_out = int(np.floor(series.duration * model.skew * series.rate + 1e-9)) + 1
    t_ref = start + np.arange(n_out) / series.rate
    t_dev = model.inverse().apply_time(t_ref)
    t_dev = np.clip(t_dev, series.start_time, series.end_time)
    return UniformSeries(start, series.rate, series.channel_names, interpolate_at(series, t_dev))


@dataclass(frozen=True)
class DeviceAlignment:
    device_id: str
    model: ClockModel
    lags: tuple[LagEstimate, LagEstimate]

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "clock_model": self.model.to_dict(),
            "event_lags": [e.to_dict() for e in self.lags],
        }


def clock_model_from_events(
    reference_gyro: UniformSeries,
    probe_gyro: UniformSeries,
    events: tuple[PerturbationEvent, PerturbationEvent],
    max_lag: float = 2.0,
) -> tuple[ClockModel, tuple[LagEstimate, LagEstimate]]:
    """Align at both events and fit the drift model through them."""
    first, last = events
    est_a = align_event(reference_gyro, probe_gyro, first, max_lag)
    est_b = align_event(reference_gyro, probe_gyro, last, max_lag)
    # the event midpoint on the reference clock sits at midpoint + lag on the probe
    t_a = first.midpoint + est_a.lag
    t_b = last.midpoint + est_b.lag
    model = fit_clock_model(-est_a.lag, t_a, -est_b.lag, t_b)
    return model, (est_a, est_b)
