"""Acceleration-based residual lag between a phone and its marker triad.

Three markers rigidly attached to the phone give its orientation in the lab
frame at every mocap sample. Rotating the phone's specific force into the lab
frame and removing gravity yields a kinematic acceleration that can be
compared directly with the second derivative of a marker trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .timeseries import (
    LagEstimate,
    Method,
    UniformSeries,
    estimate_lag,
    fill_gaps,
    finite_runs,
    interpolate_at,
    lowpass_zero_phase,
)

MIN_SINE = 0.05
AXES = ("x", "y", "z")


class DegenerateTriad(ValueError):
    pass


@dataclass(frozen=True)
class Rotation:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {m.shape}")
        if np.max(np.abs(m @ m.T - np.eye(3))) > 1e-9 or abs(np.linalg.det(m) - 1) > 1e-9:
            raise ValueError("matrix is not a proper rotation")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def about_axis(cls, axis: str, degrees: float) -> "Rotation":
        c, s = np.cos(np.radians(degrees)), np.sin(np.radians(degrees))
        i = AXES.index(axis)
        j, k = (i + 1) % 3, (i + 2) % 3
        m = np.eye(3)
        m[j, j], m[j, k], m[k, j], m[k, k] = c, -s, s, c
        return cls(m)

    def to_list(self) -> list[list[float]]:
        return self.matrix.tolist()


@dataclass(frozen=True)
class FrameConventions:
    up_axis: str = "z"
    gravity: float = 9.80665
    mount_rotation: Rotation = field(default_factory=Rotation.identity)

    def __post_init__(self):
        if self.up_axis not in AXES:
            raise ValueError(f"up_axis must be one of {AXES}, got {self.up_axis!r}")
        if not self.gravity > 0:
            raise ValueError("gravity must be positive")

    @property
    def up(self) -> np.ndarray:
        v = np.zeros(3)
        v[AXES.index(self.up_axis)] = 1.0
        return v

    def to_dict(self) -> dict:
        return {
            "up_axis": self.up_axis,
            "gravity": self.gravity,
            "mount_rotation": self.mount_rotation.to_list(),
        }


def marker_basis(m1, m2, m3) -> np.ndarray:
    """Orthonormal triad basis, marker frame to lab frame.

    Accepts single points of shape ``(3,)`` or stacks of shape ``(n, 3)``
    and returns ``(3, 3)`` or ``(n, 3, 3)`` matrices whose columns are
    ``e1, e2, e3``.
    """
    m1, m2, m3 = (np.asarray(m, dtype=float) for m in (m1, m2, m3))
    single = m1.ndim == 1
    m1, m2, m3 = (np.atleast_2d(m) for m in (m1, m2, m3))
    u, v = m2 - m1, m3 - m1
    nu, nv = np.linalg.norm(u, axis=1), np.linalg.norm(v, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sine = np.linalg.norm(np.cross(u, v), axis=1) / (nu * nv)
    bad = ~(sine > MIN_SINE)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateTriad(
            f"marker triad degenerate at row {i}: edge sine {sine[i]:.3g} <= {MIN_SINE}"
        )
    e1 = u / nu[:, None]
    w = v - np.sum(v * e1, axis=1)[:, None] * e1
    e2 = w / np.linalg.norm(w, axis=1)[:, None]
    e3 = np.cross(e1, e2)
    basis = np.stack([e1, e2, e3], axis=2)
    return basis[0] if single else basis


@dataclass(frozen=True)
class MarkerTriad:
    """Three marker trajectories (metres, lab frame) on a shared grid."""

    m1: UniformSeries
    m2: UniformSeries
    m3: UniformSeries

    def __post_init__(self):
        for m in (self.m2, self.m3):
            if m.rate != self.m1.rate or len(m) != len(self.m1) or m.start_time != self.m1.start_time:
                raise ValueError("triad markers must share rate, start and length")
        for m in self.markers:
            if m.n_channels != 3:
                raise ValueError("each marker needs 3 position channels")

    @property
    def markers(self) -> tuple[UniformSeries, UniformSeries, UniformSeries]:
        return (self.m1, self.m2, self.m3)

    @property
    def rate(self) -> float:
        return self.m1.rate

    def centroid(self) -> UniformSeries:
        c = (self.m1.samples + self.m2.samples + self.m3.samples) / 3.0
        return self.m1.replace(samples=c)

    def filled(self, max_gap: int = 10) -> "MarkerTriad":
        return MarkerTriad(*(fill_gaps(m, max_gap) for m in self.markers))

    def bases(self) -> np.ndarray:
        """Per-row basis; gap rows come back as NaN matrices."""
        ok = np.all(np.isfinite(np.hstack([m.samples for m in self.markers])), axis=1)
        out = np.full((len(self.m1), 3, 3), np.nan)
        if ok.any():
            out[ok] = marker_basis(*(m.samples[ok] for m in self.markers))
        return out


def phone_accel_to_lab(
    phone_accel: UniformSeries,
    triad: MarkerTriad,
    conventions: FrameConventions = FrameConventions(),
) -> UniformSeries:
    """Gravity-free phone acceleration on the triad grid, lab axes.

    The phone signal is first interpolated onto the mocap timestamps, then
    ``a_lab = R(t) M a_phone(t) - g * up``: a phone at rest reads ``+g``
    along up, which the subtraction cancels.
    """
    if phone_accel.n_channels != 3:
        raise ValueError("phone acceleration needs 3 channels")
    t = triad.m1.times
    if phone_accel.start_time > t[0] + 1e-9 or phone_accel.end_time < t[-1] - 1e-9:
        raise ValueError(
            f"phone series [{phone_accel.start_time:.3f}, {phone_accel.end_time:.3f}] s "
            f"does not cover the triad span [{t[0]:.3f}, {t[-1]:.3f}] s"
        )
    a = interpolate_at(phone_accel, t)
    R = triad.bases()
    RM = R @ conventions.mount_rotation.matrix
    lab = np.einsum("nij,nj->ni", RM, a) - conventions.gravity * conventions.up
    return UniformSeries(t[0], triad.rate, AXES, lab)


def _second_difference(p: np.ndarray, rate: float) -> np.ndarray:
    a = np.empty_like(p)
    a[1:-1] = p[2:] - 2.0 * p[1:-1] + p[:-2]
    # one-sided second differences at the ends
    a[0] = 2 * p[0] - 5 * p[1] + 4 * p[2] - p[3]
    a[-1] = 2 * p[-1] - 5 * p[-2] + 4 * p[-3] - p[-4]
    return a * rate**2


def marker_acceleration(
    position: UniformSeries, cutoff: float = 6.0, order: int = 2, max_gap: int = 10
) -> UniformSeries:
    """Second derivative of a filtered marker trajectory.

    Gaps of up to ``max_gap`` rows are bridged linearly; longer gaps split
    the trajectory into runs that are filtered and differentiated on their
    own. Runs too short to filter stay NaN.
    """
    if len(position) < 5:
        raise ValueError(f"need at least 5 samples to differentiate, got {len(position)}")
    if not cutoff < position.rate / 2:
        raise ValueError(f"cutoff {cutoff} Hz must be below Nyquist {position.rate / 2} Hz")
    filled = fill_gaps(position, max_gap)
    out = np.full(filled.samples.shape, np.nan)
    pad = 3 * (order + 1)
    for i0, i1 in finite_runs(filled):
        if i1 - i0 <= max(pad, 4):
            continue
        run = filled.replace(samples=filled.samples[i0:i1])
        smooth = lowpass_zero_phase(run, cutoff, order).samples
        out[i0:i1] = _second_difference(smooth, position.rate)
    return position.replace(samples=out)


def acceleration_lag(
    phone_accel_lab: UniformSeries,
    marker_accel: UniformSeries,
    axis: str = "z",
    max_lag: float = 2.0,
    *,
    subsample: bool = True,
) -> LagEstimate:
    """Lag of the phone relative to the markers along one lab axis."""
    est = estimate_lag(
        marker_accel.select(axis), phone_accel_lab.select(axis), max_lag, subsample
    )
    return est.with_method(Method.ACCELERATION, axis=axis)


def kinematic_lag(
    phone_accel: UniformSeries,
    triad: MarkerTriad,
    conventions: FrameConventions = FrameConventions(),
    max_lag: float = 2.0,
    *,
    marker: int = 0,
    axis: str | None = None,
    cutoff: float = 6.0,
) -> LagEstimate:
    """Full acceleration-based estimate for one test execution.

    The phone is compared with the acceleration of one triad marker (all
    three share the phone's translation); the comparison axis defaults to
    the up axis.
    """
    triad = triad.filled()
    lab = phone_accel_to_lab(phone_accel, triad, conventions)
    acc = marker_acceleration(triad.markers[marker], cutoff)
    return acceleration_lag(lab, acc, axis or conventions.up_axis, max_lag)
