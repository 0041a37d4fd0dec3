import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labsync.timeseries import (
    Quality,
    UniformSeries,
    delayed,
    estimate_lag,
    fill_gaps,
    finite_runs,
    interpolate_at,
    lowpass_zero_phase,
    magnitude,
    normalized_xcorr,
    parabolic_peak,
    resample,
    stack,
)


def series(x, rate=50.0, start=0.0, names=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return UniformSeries(start, rate, names or tuple(f"c{i}" for i in range(x.shape[1])), x)


def noise(n, seed=0):
    return np.random.default_rng(seed).standard_normal(n)


# -- the grid ---------------------------------------------------------------


def test_times_and_span():
    s = series(np.zeros(11), rate=10.0, start=2.0)
    assert s.times[0] == 2.0 and s.times[-1] == pytest.approx(3.0)
    assert s.duration == pytest.approx(1.0)
    assert s.end_time == pytest.approx(3.0)


def test_index_range_carves_whole_rows():
    s = series(np.zeros(5000), rate=50.0)
    assert s.index_range(10.0, 70.0) == (500, 3501)
    c = s.crop(10.0, 70.0)
    assert len(c) == 3001 and c.start_time == pytest.approx(10.0)


def test_index_range_rounds_outwards():
    s = series(np.zeros(100), rate=10.0)
    assert s.index_range(1.05, 2.01) == (10, 22)


def test_crop_outside_raises():
    with pytest.raises(ValueError, match="does not intersect"):
        series(np.zeros(10)).crop(5.0, 6.0)


def test_validation():
    with pytest.raises(ValueError):
        UniformSeries(0.0, 0.0, ("a",), np.zeros(3))
    with pytest.raises(ValueError):
        UniformSeries(0.0, 10.0, ("a", "b"), np.zeros((3, 3)))


def test_select_and_channel():
    s = series(np.arange(12).reshape(4, 3), names=("x", "y", "z"))
    assert s.select("z", "x").channel_names == ("z", "x")
    np.testing.assert_array_equal(s.channel("y"), [1, 4, 7, 10])
    with pytest.raises(KeyError):
        s.channel("w")


def test_magnitude_and_stack():
    s = series([[3.0, 4.0, 0.0], [0.0, 0.0, 2.0]])
    np.testing.assert_allclose(magnitude(s).samples[:, 0], [5.0, 2.0])
    both = stack([s.select("c0"), s.select("c2")])
    assert both.channel_names == ("c0", "c2")
    with pytest.raises(ValueError):
        magnitude(s.select("c0"))


# -- interpolation ----------------------------------------------------------


@given(st.integers(2, 5), st.integers(20, 80))
def test_upsample_reproduces_knots_exactly(factor, n):
    x = noise(n, seed=n)
    s = series(x, rate=10.0, start=0.3)
    up = resample(s, 10.0 * factor)
    np.testing.assert_array_equal(up.samples[::factor, 0], x)
    assert up.end_time <= s.end_time + 1e-12


def test_linear_signal_is_resampled_exactly():
    t = np.arange(101) / 50.0
    s = series(3.0 * t - 1.0, rate=50.0)
    r = resample(s, 37.0)
    np.testing.assert_allclose(r.samples[:, 0], 3.0 * r.times - 1.0, atol=1e-12)


def test_interpolate_outside_is_nan():
    s = series([0.0, 1.0, 2.0], rate=1.0)
    out = interpolate_at(s, np.array([-0.5, 0.5, 2.0, 2.5]))[:, 0]
    assert np.isnan(out[0]) and np.isnan(out[3])
    np.testing.assert_allclose(out[1:3], [0.5, 2.0])


def test_resample_origin_pins_grid_phase():
    s = series(np.arange(100.0), rate=50.0, start=0.013)
    r = resample(s, 1000.0, origin=0.0)
    phase = r.start_time * 1000.0
    assert abs(phase - round(phase)) < 1e-9
    assert r.start_time >= s.start_time


def test_fill_gaps_bridges_short_runs_only():
    x = np.arange(30, dtype=float)
    x[5:8] = np.nan
    x[12:25] = np.nan
    out = fill_gaps(series(x), max_gap=10).samples[:, 0]
    np.testing.assert_allclose(out[5:8], [5, 6, 7])
    assert np.isnan(out[12:25]).all()
    assert finite_runs(series(out)) == [(0, 12), (25, 30)]


def test_fill_gaps_never_extrapolates():
    x = np.array([np.nan, 1.0, 2.0, np.nan])
    out = fill_gaps(series(x)).samples[:, 0]
    assert np.isnan(out[0]) and np.isnan(out[3])


# -- Butterworth ------------------------------------------------------------


def butterworth_power(f, fc, fs, order):
    # squared magnitude of the bilinear-transformed Butterworth low-pass
    return 1.0 / (1.0 + (np.tan(np.pi * f / fs) / np.tan(np.pi * fc / fs)) ** (2 * order))


def test_dc_gain_is_unity():
    s = series(np.full(500, 9.80665), rate=50.0)
    out = lowpass_zero_phase(s, 6.0).samples[:, 0]
    np.testing.assert_allclose(out, 9.80665, rtol=1e-6)


@pytest.mark.parametrize("order", [2, 4])
@pytest.mark.parametrize("f", [1.0, 4.0, 6.0, 9.0])
def test_tone_gain_matches_analytic_response(order, f):
    fs, fc = 100.0, 6.0
    t = np.arange(4000) / fs
    y = lowpass_zero_phase(series(np.sin(2 * np.pi * f * t), rate=fs), fc, order).samples[:, 0]
    mid = slice(1000, 3000)
    # filtfilt applies |H|^2 and no phase: project onto the input tone
    gain = 2 * np.mean(y[mid] * np.sin(2 * np.pi * f * t[mid]))
    quad = 2 * np.mean(y[mid] * np.cos(2 * np.pi * f * t[mid]))
    assert gain == pytest.approx(butterworth_power(f, fc, fs, order), rel=1e-3, abs=1e-6)
    assert abs(quad) < 1e-6


def test_one_hertz_tone_has_subsample_phase():
    fs = 50.0
    t = np.arange(3000) / fs
    x = np.sin(2 * np.pi * t)
    y = lowpass_zero_phase(series(x, rate=fs), 6.0).samples[:, 0]
    est = estimate_lag(series(x, rate=fs), series(y, rate=fs), max_lag=0.5)
    assert abs(est.lag) < 0.1 / fs


def test_filter_is_time_reversal_symmetric():
    x = noise(700, seed=3)
    fwd = lowpass_zero_phase(series(x), 5.0).samples[:, 0]
    rev = lowpass_zero_phase(series(x[::-1]), 5.0).samples[::-1, 0]
    np.testing.assert_allclose(fwd, rev, atol=1e-10)


def test_filter_rejects_bad_arguments():
    with pytest.raises(ValueError):
        lowpass_zero_phase(series(noise(100)), 30.0)
    with pytest.raises(ValueError):
        lowpass_zero_phase(series(noise(100)), 5.0, order=3)
    with pytest.raises(ValueError, match="too short"):
        lowpass_zero_phase(series(noise(6)), 5.0)


# -- cross-correlation ------------------------------------------------------


def corrcoef_oracle(r, p, m):
    i = np.arange(len(r))
    j = i + m
    ok = (j >= 0) & (j < len(p))
    a, b = r[i[ok]], p[j[ok]]
    keep = np.isfinite(a) & np.isfinite(b)
    return np.corrcoef(a[keep], b[keep])[0, 1]


@settings(max_examples=30, deadline=None)
@given(st.integers(30, 120), st.integers(30, 120), st.integers(0, 10_000))
def test_xcorr_matches_pearson_oracle(nr, np_, seed):
    rng = np.random.default_rng(seed)
    r, p = rng.standard_normal(nr), rng.standard_normal(np_)
    r[rng.integers(0, nr, 3)] = np.nan
    for method in ("fft", "direct"):
        ms, c, n = normalized_xcorr(r, p, -10, 10, method=method)
        for m, cm in zip(ms, c):
            np.testing.assert_allclose(cm, corrcoef_oracle(r, p, m), atol=1e-9)


def test_fft_and_direct_paths_agree():
    r, p = noise(400, 1), noise(450, 2)
    a = normalized_xcorr(r, p, -40, 40, method="fft")
    b = normalized_xcorr(r, p, -40, 40, method="direct")
    np.testing.assert_allclose(a[1], b[1], atol=1e-10)
    np.testing.assert_array_equal(a[2], b[2])


def test_parabolic_peak_recovers_vertex():
    f = lambda x: -((x - 0.3) ** 2)
    assert parabolic_peak(f(-1), f(0), f(1)) == pytest.approx(0.3)
    assert parabolic_peak(1.0, 1.0, 1.0) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(-40, 40), st.integers(0, 1000))
def test_lag_is_shift_equivariant(k, seed):
    x = lowpass_zero_phase(series(noise(1500, seed)), 8.0)
    est = estimate_lag(x, delayed(x, k), max_lag=1.0)
    assert est.lag == pytest.approx(k / 50.0, abs=1e-9)
    assert est.peak_correlation == pytest.approx(1.0)


def test_positive_lag_means_probe_is_late():
    t = np.arange(2000) / 100.0
    ref = series(np.sin(2 * np.pi * 0.7 * t) + 0.5 * np.sin(2 * np.pi * 1.9 * t), rate=100.0)
    late = series(np.sin(2 * np.pi * 0.7 * (t - 0.13)) + 0.5 * np.sin(2 * np.pi * 1.9 * (t - 0.13)), rate=100.0)
    assert estimate_lag(ref, late, 1.0).lag == pytest.approx(0.13, abs=1e-3)


def test_subsample_refinement_beats_grid():
    fs, true = 50.0, 0.0137
    t = np.arange(3000) / fs
    sig = lambda tt: np.sin(2 * np.pi * 0.9 * tt) + 0.4 * np.sin(2 * np.pi * 2.3 * tt)
    a = estimate_lag(series(sig(t), fs), series(sig(t - true), fs), 1.0, subsample=True)
    b = estimate_lag(series(sig(t), fs), series(sig(t - true), fs), 1.0, subsample=False)
    assert abs(a.lag - true) < abs(b.lag - true)
    assert abs(a.lag - true) < 0.002


def test_lag_ignores_gain_and_offset():
    x = lowpass_zero_phase(series(noise(1000, 5)), 6.0)
    y = delayed(x.replace(samples=3.0 * x.samples + 7.0), 4)
    assert estimate_lag(x, y, 1.0).lag == pytest.approx(0.08, abs=1e-9)


def test_misaligned_probe_grid_is_reinterpolated():
    t = np.arange(2000) / 50.0
    f = lambda tt: np.sin(2 * np.pi * 0.4 * tt) + 0.3 * np.sin(2 * np.pi * 1.1 * tt)
    ref = series(f(t), 50.0)
    probe = series(f(t + 0.007 - 0.05), 50.0, start=0.007)
    assert estimate_lag(ref, probe, 1.0).lag == pytest.approx(0.05, abs=2e-3)


def test_quality_flags():
    x = lowpass_zero_phase(series(noise(1000, 8)), 6.0)
    assert estimate_lag(x, delayed(x, 49), 1.0).quality == Quality.NEAR_WINDOW_EDGE
    assert estimate_lag(x, series(noise(1000, 99)), 1.0).quality in (
        Quality.LOW_CORRELATION,
        Quality.NEAR_WINDOW_EDGE,
    )


def test_lag_errors():
    x = series(noise(200))
    with pytest.raises(ValueError, match="zero variance"):
        estimate_lag(x, series(np.ones(200)))
    with pytest.raises(ValueError, match="rate mismatch"):
        estimate_lag(x, series(noise(200), rate=100.0))
    with pytest.raises(ValueError, match="insufficient overlap"):
        estimate_lag(x, series(noise(60)), max_lag=1.0, min_overlap=1.0)
    with pytest.raises(ValueError):
        estimate_lag(series(noise(200).reshape(100, 2)), x)


def test_lag_estimate_serializes():
    x = lowpass_zero_phase(series(noise(500)), 6.0)
    d = estimate_lag(x, delayed(x, 2), 1.0).to_dict()
    assert set(d) >= {"lag", "peak_correlation", "quality", "diagnostics"}
    assert math.isfinite(d["lag"])
