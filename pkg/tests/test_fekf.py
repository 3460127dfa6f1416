from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from robocar_twin.errors import ValidationError
from robocar_twin.fekf import (
    BicycleProcess,
    EkfEstimate,
    FederatedEstimator,
    FilterSettings,
    NoiseConfig,
    PointProcess,
    chi2_band,
    ekf_bm_step,
    ekf_pm_step,
    ekf_predict,
    ekf_update,
    master_fuse,
    nees,
)
from robocar_twin.sensors import LidarSample, SensorConfig, SensorFrame, SensorSuite, lidar_variance
from robocar_twin.vehicle_models import (
    BicycleState,
    ChassisParams,
    ControlInput,
    MotorParams,
    VehicleParams,
    VehicleTwin,
)


def vehicle() -> VehicleParams:
    return VehicleParams(
        motor=MotorParams(p1=62.0, p2=12.5, p3=6.25, gear_ratio=0.1, wheel_radius=0.033),
        chassis=ChassisParams(mass=2.75, yaw_inertia=0.033, lf=0.128, lr=0.128, cf=25.0, cr=25.0),
    )


def quiet_sensors() -> SensorConfig:
    return SensorConfig(
        imu_accel_std=0.0,
        imu_gyro_std=0.0,
        imu_heading_std=0.0,
        encoder_std=0.0,
        lidar_pos_std=0.0,
        lidar_heading_std=0.0,
        spike_probability=0.0,
        score_jitter=0.0,
    )


def bm_prior(state: BicycleState, spread: float = 1e-4) -> EkfEstimate:
    return EkfEstimate(mean=state.as_array(), cov=spread * np.eye(6), t=0.0)


def pm_estimate(mean: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0), cov: np.ndarray | None = None) -> EkfEstimate:
    return EkfEstimate(mean=np.array(mean, dtype=float), cov=np.eye(4) if cov is None else cov, t=0.0)


def twin_run(u: ControlInput, ticks: int, sensors: SensorConfig, seed: int = 0):
    """Truth states and sensor frames of an open-loop twin run."""

    params = vehicle()
    twin = VehicleTwin(params, BicycleState(0.0, 0.0, 0.8, 0.0, 0.0, 0.0))
    suite = SensorSuite(sensors, np.random.default_rng(seed))
    states, frames = [], []
    for _ in range(ticks):
        states.append(twin.state)
        frames.append(suite.emit(twin.sample(u)))
        twin.step(u)
    return states, frames


def test_point_prediction_matches_hand_product() -> None:
    dt = 0.01
    est = pm_estimate()
    out = ekf_predict(est, (0.0, 0.0, 0.0), dt, np.zeros((4, 4)), PointProcess())
    f = np.array([[1, 0, dt, 0], [0, 1, 0, dt], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
    assert np.allclose(out.cov, f @ f.T, atol=1e-15)
    assert out.t == pytest.approx(dt)


def test_prediction_adds_process_noise_exactly() -> None:
    rng = np.random.default_rng(4)
    m = rng.normal(size=(4, 4))
    est = pm_estimate(mean=(0.3, -0.2, 0.5, 0.1), cov=m @ m.T + np.eye(4))
    q = np.diag([1e-3, 2e-3, 3e-3, 4e-3])
    out = ekf_predict(est, (0.2, -0.1, 0.7), 0.01, q, PointProcess())
    f = PointProcess().jacobian(est.mean, (0.2, -0.1, 0.7), 0.01)
    assert np.allclose(out.cov - f @ est.cov @ f.T, q, atol=1e-12)


def test_zero_covariance_is_a_fixed_point() -> None:
    est = pm_estimate(mean=(1.0, 2.0, 0.0, 0.0), cov=np.zeros((4, 4)))
    out = ekf_predict(est, (0.0, 0.0, 0.4), 0.01, np.zeros(4), PointProcess())
    assert np.array_equal(out.cov, np.zeros((4, 4)))
    assert np.array_equal(out.mean, est.mean)


def test_scalar_update_arithmetic() -> None:
    est = pm_estimate()
    out = ekf_update(est, {"x": 1.0}, {"x": 1.0}, PointProcess())
    assert out.mean[0] == pytest.approx(0.5)
    assert out.cov[0, 0] == pytest.approx(0.5)
    assert out.mean[1:] == pytest.approx(np.zeros(3))
    assert out.cov[1, 1] == pytest.approx(1.0)


def test_uninformative_measurements_leave_estimate_unchanged() -> None:
    est = bm_prior(BicycleState(0.1, 0.2, 0.8, 0.3, 0.01, 0.2), spread=0.01)
    z = {"x": 5.0, "y": -5.0, "v": 2.0, "psi": 1.0, "r": -1.0}
    huge = {channel: 1e30 for channel in z}
    out = ekf_update(est, z, huge, BicycleProcess(vehicle()))
    assert np.allclose(out.mean, est.mean, atol=1e-9)
    assert np.allclose(out.cov, est.cov, atol=1e-9)
    skipped = ekf_update(est, z, {channel: math.inf for channel in z}, BicycleProcess(vehicle()))
    assert np.array_equal(skipped.mean, est.mean)


def test_perfect_measurement_pins_the_channel() -> None:
    est = pm_estimate(mean=(0.4, 0.0, 0.0, 0.0))
    out = ekf_update(est, {"x": 1.25}, {"x": 0.0}, PointProcess())
    assert out.mean[0] == pytest.approx(1.25)
    assert out.cov[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_heading_innovation_is_wrapped() -> None:
    est = bm_prior(BicycleState(0.0, 0.0, 0.8, 3.1, 0.0, 0.0), spread=1.0)
    out = ekf_update(est, {"psi": -3.1}, {"psi": 1.0}, BicycleProcess(vehicle()))
    assert out.mean[3] == pytest.approx(3.1 + 0.5 * (2.0 * math.pi - 6.2))


def test_update_channel_checks() -> None:
    est = pm_estimate()
    assert ekf_update(est, {}, {}, PointProcess()) is est
    with pytest.raises(ValidationError):
        ekf_update(est, {"psi": 0.0}, {"psi": 1.0}, PointProcess())


@pytest.mark.parametrize(
    "state",
    [
        BicycleState(0.0, 0.0, 0.5, 0.0, 0.0, 0.0),
        BicycleState(1.0, -2.0, 1.2, 0.7, 0.03, 0.4),
        BicycleState(-3.0, 4.0, 2.0, -2.5, -0.05, -0.8),
    ],
)
def test_bicycle_jacobian_spot_checks(state: BicycleState) -> None:
    params = vehicle()
    model = BicycleProcess(params)
    dt = 0.01
    u = ControlInput(va=params.motor.steady_voltage(state.v), delta=0.05)
    jac = model.jacobian(state.as_array(), u, dt)
    # positions do not feed back into the dynamics
    assert jac[:, 0] == pytest.approx(np.eye(6)[0], abs=1e-8)
    assert jac[:, 1] == pytest.approx(np.eye(6)[1], abs=1e-8)
    # heading only rotates the position increments
    assert jac[3, 3] == pytest.approx(1.0, abs=1e-8)
    assert jac[2, 3] == pytest.approx(0.0, abs=1e-8)
    # the speed channel is a first-order lag: RK4 of exp(-P2 dt)
    a = params.motor.p2 * dt
    assert jac[2, 2] == pytest.approx(1 - a + a**2 / 2 - a**3 / 6 + a**4 / 24, abs=1e-7)
    heading = state.psi + state.beta
    assert jac[0, 3] == pytest.approx(-dt * state.v * math.sin(heading), rel=0.05, abs=1e-5)


def test_bicycle_filter_tracks_noiseless_twin() -> None:
    u = ControlInput(va=0.25, delta=0.05)
    states, frames = twin_run(u, 1000, quiet_sensors())
    settings = FilterSettings(params=vehicle(), sensors=quiet_sensors())
    est = bm_prior(states[0])
    worst = 0.0
    for state, frame in zip(states, frames):
        est = ekf_bm_step(est, frame, u, settings)
        worst = max(worst, float(np.max(np.abs(est.mean - state.as_array()))))
    assert worst < 1e-6


def test_position_uncertainty_grows_without_lidar() -> None:
    u = ControlInput(va=0.25, delta=0.05)
    _, frames = twin_run(u, 101, SensorConfig(spike_probability=0.0), seed=2)
    settings = FilterSettings(params=vehicle())
    est = bm_prior(BicycleState(0.0, 0.0, 0.8, 0.0, 0.0, 0.0))
    traces = []
    for tick, frame in enumerate(frames):
        est = ekf_bm_step(est, dataclasses.replace(frame, lidar=None), u, settings)
        if tick % 10 == 0:
            traces.append(float(np.trace(est.position_cov)))
    assert all(later > earlier for earlier, later in zip(traces, traces[1:]))


def test_spiked_lidar_sample_barely_moves_the_estimate() -> None:
    u = ControlInput(va=0.25, delta=0.0)
    sensors = SensorConfig(spike_probability=0.0)
    states, frames = twin_run(u, 201, sensors, seed=5)
    settings = FilterSettings(params=vehicle(), sensors=sensors)
    est = bm_prior(states[0])
    for frame in frames[:-1]:
        est = ekf_bm_step(est, frame, u, settings)
    last = frames[-1]
    assert last.lidar is not None
    spike = dataclasses.replace(
        last,
        lidar=LidarSample(
            x=last.lidar.x + 0.5,
            y=last.lidar.y,
            psi=last.lidar.psi,
            score=sensors.score_on_spike,
            spike=True,
        ),
    )
    nominal = ekf_bm_step(est, last, u, settings)
    spiked = ekf_bm_step(est, spike, u, settings)
    assert lidar_variance(sensors.score_on_spike, "x", sensors) >= 100 * lidar_variance(1.0, "x", sensors)
    assert np.linalg.norm(spiked.position - nominal.position) < 0.05


def test_point_filter_without_motion_stays_put() -> None:
    settings = FilterSettings(params=vehicle(), sensors=quiet_sensors())
    est = pm_estimate(mean=(0.5, -0.5, 0.0, 0.0), cov=1e-4 * np.eye(4))
    for tick in range(1, 50):
        frame = SensorFrame(t=tick * 0.01, tick=tick, ax=0.0, ay=0.0, r=0.0, imu_psi=0.0, omega=0.0)
        est = ekf_pm_step(est, frame, 0.0, settings)
    assert est.position == pytest.approx(np.array([0.5, -0.5]))


def test_point_filter_double_integrates_constant_acceleration() -> None:
    settings = FilterSettings(params=vehicle(), sensors=quiet_sensors())
    est = pm_estimate(cov=1e-4 * np.eye(4))
    for tick in range(1, 101):
        frame = SensorFrame(t=round(tick * 0.01, 10), tick=tick, ax=1.0, ay=0.0, r=0.0, imu_psi=0.0, omega=0.0)
        est = ekf_pm_step(est, frame, 0.0, settings)
    assert est.mean[2] == pytest.approx(1.0, abs=1e-9)
    assert est.mean[0] == pytest.approx(0.5, abs=1e-9)
    assert est.mean[1] == pytest.approx(0.0, abs=1e-12)


def test_lidar_bounds_point_filter_drift() -> None:
    sensors = SensorConfig(spike_probability=0.0)
    settings = FilterSettings(params=vehicle(), sensors=sensors)
    rng = np.random.default_rng(9)
    corrected = pm_estimate(cov=1e-4 * np.eye(4))
    dead = pm_estimate(cov=1e-4 * np.eye(4))
    for tick in range(1, 3001):
        lidar = None
        if tick % 10 == 0:
            lidar = LidarSample(x=rng.normal(0.0, 0.02), y=rng.normal(0.0, 0.02), psi=0.0, score=1.0)
        ax = 0.02 + rng.normal(0.0, 0.05)
        frame = SensorFrame(t=round(tick * 0.01, 10), tick=tick, ax=ax, ay=0.0, r=0.0, imu_psi=0.0, omega=0.0, lidar=lidar)
        corrected = ekf_pm_step(corrected, frame, 0.0, settings)
        dead = ekf_pm_step(dead, dataclasses.replace(frame, lidar=None), 0.0, settings)
    assert np.linalg.norm(corrected.position) < 0.2
    assert np.linalg.norm(dead.position) > 2.0


def bm_with_position(position: tuple[float, float], cov: np.ndarray) -> EkfEstimate:
    full = np.eye(6)
    full[:2, :2] = cov
    return EkfEstimate(mean=np.array([*position, 0.8, 0.0, 0.0, 0.0]), cov=full)


def pm_with_position(position: tuple[float, float], cov: np.ndarray) -> EkfEstimate:
    full = np.eye(4)
    full[:2, :2] = cov
    return EkfEstimate(mean=np.array([*position, 0.0, 0.0]), cov=full)


def test_master_fuse_equal_weights() -> None:
    sigma2 = 0.04
    fused = master_fuse(
        bm_with_position((1.0, 0.0), sigma2 * np.eye(2)),
        pm_with_position((0.0, 1.0), sigma2 * np.eye(2)),
    )
    assert fused.position == pytest.approx(np.array([0.5, 0.5]))
    assert fused.cov == pytest.approx(sigma2 / 2 * np.eye(2))
    assert fused.source == "fused"


def test_master_fuse_harmonic_weights() -> None:
    p_bm, p_pm = np.array([2.0, -1.0]), np.array([-2.0, 3.0])
    fused = master_fuse(
        bm_with_position(tuple(p_bm), 0.01 * np.eye(2)),
        pm_with_position(tuple(p_pm), 0.03 * np.eye(2)),
    )
    assert fused.position == pytest.approx(0.75 * p_bm + 0.25 * p_pm)
    assert fused.cov == pytest.approx(0.0075 * np.eye(2))


def test_master_fuse_ignores_an_uninformative_filter() -> None:
    cov = np.array([[0.02, 0.005], [0.005, 0.01]])
    fused = master_fuse(bm_with_position((1.0, 2.0), cov), pm_with_position((-4.0, 7.0), 1e12 * np.eye(2)))
    assert fused.position == pytest.approx(np.array([1.0, 2.0]), abs=1e-9)
    assert fused.cov == pytest.approx(cov, abs=1e-12)


def test_master_fuse_falls_back_on_singular_block() -> None:
    fused = master_fuse(bm_with_position((1.0, 2.0), np.zeros((2, 2))), pm_with_position((0.0, 0.0), 0.01 * np.eye(2)))
    assert fused.source == "pm"
    assert fused.degraded
    assert fused.position == pytest.approx(np.zeros(2))


def test_fusion_dominates_and_is_symmetric_on_random_pairs() -> None:
    rng = np.random.default_rng(21)
    for _ in range(1000):
        m1, m2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        a = m1 @ m1.T + 1e-3 * np.eye(2)
        b = m2 @ m2.T + 1e-3 * np.eye(2)
        pa, pb = rng.normal(size=2), rng.normal(size=2)
        fused = master_fuse(bm_with_position(tuple(pa), a), pm_with_position(tuple(pb), b))
        assert np.min(np.linalg.eigvalsh(a - fused.cov)) >= -1e-10
        assert np.min(np.linalg.eigvalsh(b - fused.cov)) >= -1e-10
        assert np.min(np.linalg.eigvalsh(fused.cov)) >= -1e-10
        swapped = master_fuse(bm_with_position(tuple(pb), b), pm_with_position(tuple(pa), a))
        assert np.allclose(swapped.position, fused.position, atol=1e-9)
        assert np.allclose(swapped.cov, fused.cov, atol=1e-9)


def test_federated_estimator_keeps_local_filters_independent() -> None:
    u = ControlInput(va=0.25, delta=0.05)
    sensors = SensorConfig(spike_probability=0.05)
    states, frames = twin_run(u, 300, sensors, seed=13)
    settings = FilterSettings(params=vehicle(), sensors=sensors, noise=NoiseConfig(psi_source="imu"))
    start_bm = bm_prior(states[0])
    start_pm = pm_estimate(mean=(0.0, 0.0, 0.8, 0.0), cov=1e-4 * np.eye(4))
    federated = FederatedEstimator(settings, start_bm, start_pm)
    bm, pm = start_bm, start_pm
    previous = None
    for frame in frames:
        snapshot = federated.step(frame, u)
        bm = ekf_bm_step(bm, frame, u, settings)
        if previous is None:
            pm = ekf_pm_step(pm, frame, 0.0, settings)
        else:
            pm = ekf_pm_step(pm, frame, previous.imu_psi, settings, imu=(previous.ax, previous.ay))
        previous = frame
        assert np.array_equal(snapshot.bm.mean, bm.mean)
        assert np.array_equal(snapshot.bm.cov, bm.cov)
        assert np.array_equal(snapshot.pm.mean, pm.mean)
        assert np.array_equal(snapshot.pm.cov, pm.cov)


def test_nees_and_chi2_band() -> None:
    assert nees(np.array([1.0, 0.0]), np.diag([4.0, 1.0])) == pytest.approx(0.25)
    low, high = chi2_band(2)
    assert low == pytest.approx(0.0506356, rel=1e-5)
    assert high == pytest.approx(7.377759, rel=1e-6)
    with pytest.raises(ValidationError):
        chi2_band(0)


def test_noise_config_validation() -> None:
    with pytest.raises(ValidationError):
        NoiseConfig(q_bm=(1.0, 1.0))
    with pytest.raises(ValidationError):
        NoiseConfig(psi_source="compass")
    with pytest.raises(ValidationError):
        NoiseConfig(q_pm=(1e-7, 0.0, 1e-6, 1e-6))
