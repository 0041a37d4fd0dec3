import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labsync.kinetic import BodyParams, ForcePlatePair, force_lag, summed_force_magnitude
from labsync.simulator import ScenarioParams, simulate_test
from labsync.timeseries import Method, UniformSeries, magnitude

# one millisecond, a twentieth of a 50 Hz phone sample
SUBSAMPLE_TOLERANCE = 1e-3


@pytest.fixture(scope="module")
def gait():
    return simulate_test(ScenarioParams(kind="gait", duration=40.0, seed=3))


def scaled(plates, k):
    return ForcePlatePair(
        plates.left.replace(samples=k * plates.left.samples),
        plates.right.replace(samples=k * plates.right.samples),
    )


@pytest.mark.parametrize("kind", ["gait", "balance"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_force_identity_before_noise(kind, seed):
    p = ScenarioParams(kind=kind, seed=seed, duration=20.0).noiseless()
    rec = simulate_test(p)
    total = summed_force_magnitude(rec.plates).samples[:, 0]
    a = magnitude(rec.truth["com_specific_force"]).samples[:, 0]
    assert np.max(np.abs(total - p.mass * a)) <= 1e-9


def test_summed_magnitude_is_sum_of_norms():
    left = UniformSeries(0.0, 1000.0, ("x", "y", "z"), [[3.0, 0.0, 4.0], [0.0, 0.0, 1.0]])
    right = UniformSeries(0.0, 1000.0, ("x", "y", "z"), [[-3.0, 0.0, 4.0], [0.0, 0.0, 2.0]])
    total = summed_force_magnitude(ForcePlatePair(left, right)).samples[:, 0]
    np.testing.assert_allclose(total, [10.0, 3.0])


def test_gait_force_lag(gait):
    est = force_lag(gait.phone_accel, gait.plates)
    assert est.method == Method.FORCE
    assert est.lag == pytest.approx(gait.injected_lag, abs=5e-3)
    assert est.diagnostics["common_rate"] == 1000.0
    assert est.diagnostics["residual_rms"] < 0.5


@settings(max_examples=5, deadline=None)
@given(st.floats(20.0, 300.0))
def test_lag_does_not_depend_on_mass(gait, mass):
    ref = force_lag(gait.phone_accel, gait.plates, BodyParams(70.0))
    est = force_lag(gait.phone_accel, gait.plates, BodyParams(mass))
    assert est.lag == pytest.approx(ref.lag, abs=1e-12)


def test_lag_ignores_plate_calibration(gait):
    a = force_lag(gait.phone_accel, gait.plates)
    b = force_lag(gait.phone_accel, scaled(gait.plates, 2.0))
    assert b.lag == pytest.approx(a.lag, abs=1e-12)


def test_upsampling_direction_is_irrelevant(gait):
    up = force_lag(gait.phone_accel, gait.plates, common_rate="max")
    down = force_lag(gait.phone_accel, gait.plates, common_rate="min")
    assert down.diagnostics["common_rate"] == 50.0
    assert abs(up.lag - down.lag) <= SUBSAMPLE_TOLERANCE


def test_interval_mask_restricts_correlation(gait):
    full = force_lag(gait.phone_accel, gait.plates)
    masked = force_lag(gait.phone_accel, gait.plates, intervals=[(5.0, 15.0), (25.0, 35.0)])
    assert masked.lag == pytest.approx(full.lag, abs=5e-3)
    assert masked.diagnostics["overlap_s"] < full.diagnostics["overlap_s"]


def test_prefilter_can_be_disabled(gait):
    est = force_lag(gait.phone_accel, gait.plates, prefilter=None)
    assert est.lag == pytest.approx(gait.injected_lag, abs=5e-3)


def test_body_mass_bounds():
    with pytest.raises(ValueError):
        BodyParams(10.0)
    with pytest.raises(ValueError):
        BodyParams(400.0)


def test_plates_validation():
    z = np.zeros((10, 3))
    ok = UniformSeries(0.0, 1000.0, ("x", "y", "z"), z)
    with pytest.raises(ValueError, match="share"):
        ForcePlatePair(ok, UniformSeries(0.0, 500.0, ("x", "y", "z"), z))
    pulled = z.copy()
    pulled[3, 2] = -20.0
    with pytest.raises(ValueError, match="below"):
        ForcePlatePair(ok, UniformSeries(0.0, 1000.0, ("x", "y", "z"), pulled))


def test_unloaded_plates_have_no_lag(gait):
    empty = ForcePlatePair(
        gait.plates.left.replace(samples=np.zeros_like(gait.plates.left.samples)),
        gait.plates.right.replace(samples=np.zeros_like(gait.plates.right.samples)),
    )
    with pytest.raises(ValueError, match="zero variance"):
        force_lag(gait.phone_accel, empty)
