from __future__ import annotations

import math

import numpy as np
import pytest

from robocar_twin.errors import DomainError, ValidationError
from robocar_twin.sensors import (
    LidarVarianceMap,
    SensorConfig,
    SensorSuite,
    frames_to_frame,
    lidar_variance,
    sample_sensors,
)
from robocar_twin.vehicle_models import BicycleState, TruthSample


def truth(**overrides: float) -> TruthSample:
    state = dict(x=1.0, y=-0.5, v=0.8, psi=0.4, beta=0.02, r=0.3)
    state.update(overrides)
    return TruthSample(state=BicycleState(**state), ax=0.1, ay=0.24, omega=24.0)


def quiet_config(**overrides: object) -> SensorConfig:
    values: dict[str, object] = dict(
        imu_accel_std=0.0,
        imu_gyro_std=0.0,
        imu_heading_std=0.0,
        encoder_std=0.0,
        lidar_pos_std=0.0,
        lidar_heading_std=0.0,
        spike_probability=0.0,
        score_jitter=0.0,
    )
    values.update(overrides)
    return SensorConfig(**values)  # type: ignore[arg-type]


def test_noiseless_frame_equals_truth() -> None:
    sample = truth()
    frame = sample_sensors(sample, 20, quiet_config(), np.random.default_rng(0))
    assert (frame.ax, frame.ay, frame.r, frame.omega) == (0.1, 0.24, 0.3, 24.0)
    assert frame.imu_psi == 0.4
    assert frame.lidar is not None
    assert (frame.lidar.x, frame.lidar.y, frame.lidar.psi) == (1.0, -0.5, 0.4)
    assert frame.lidar.score == 1.0
    assert frame.t == pytest.approx(0.2)


def test_lidar_rate_schedule() -> None:
    rng = np.random.default_rng(1)
    cfg = SensorConfig()
    assert sample_sensors(truth(), 7, cfg, rng).lidar is None
    assert sample_sensors(truth(), 10, cfg, rng).lidar is not None
    suite = SensorSuite(cfg, np.random.default_rng(2))
    frames = [suite.emit(truth()) for _ in range(100)]
    assert sum(frame.has_lidar for frame in frames) == 10
    assert [frame.tick for frame in frames if frame.has_lidar] == list(range(0, 100, 10))


def test_forced_spikes_move_every_lidar_sample() -> None:
    cfg = quiet_config(spike_probability=1.0)
    suite = SensorSuite(cfg, np.random.default_rng(3))
    for _ in range(200):
        frame = suite.emit(truth())
        if frame.lidar is None:
            continue
        offset = math.hypot(frame.lidar.x - 1.0, frame.lidar.y + 0.5)
        assert offset >= 0.3 - 1e-12
        assert offset <= 1.0 + 1e-12
        assert frame.lidar.score == cfg.score_on_spike
        assert frame.lidar.spike
    assert suite.spikes == 20


def test_equal_seeds_give_identical_streams() -> None:
    first = SensorSuite(SensorConfig(spike_probability=0.2), np.random.default_rng(11))
    second = SensorSuite(SensorConfig(spike_probability=0.2), np.random.default_rng(11))
    a = [first.emit(truth()) for _ in range(300)]
    b = [second.emit(truth()) for _ in range(300)]
    assert a == b


def test_lidar_variance_examples() -> None:
    k = LidarVarianceMap(k1=1.0, k2=2.0, k3=1.0, k4=1.0)
    cfg = SensorConfig(kappa={"x": k})
    assert lidar_variance(1.0, "x", cfg) == pytest.approx(math.tanh(1.0) + 1.0)
    assert lidar_variance(1.0, "x", cfg) == pytest.approx(1.7616, abs=1e-4)
    assert lidar_variance(2.0, "x", cfg) == pytest.approx(1.0)
    assert lidar_variance(1e9, "x", cfg) == pytest.approx(1.0 - math.tanh(1.0), rel=1e-6)


def test_lidar_variance_rejects_non_positive_score() -> None:
    with pytest.raises(DomainError):
        lidar_variance(0.0, "x", SensorConfig())
    with pytest.raises(DomainError):
        lidar_variance(-1.0, "psi", SensorConfig())


def test_lidar_variance_is_strictly_decreasing() -> None:
    cfg = SensorConfig()
    scores = np.linspace(0.02, 20.0, 2000)
    for channel in ("x", "y", "psi"):
        values = np.array([lidar_variance(float(score), channel, cfg) for score in scores])
        assert np.all(np.diff(values) < 0)


def test_default_variance_map_matches_configured_noise() -> None:
    cfg = SensorConfig(lidar_pos_std=0.02, lidar_heading_std=0.05)
    assert lidar_variance(cfg.score_nominal, "x", cfg) == pytest.approx(0.02**2, rel=1e-9)
    assert lidar_variance(cfg.score_nominal, "psi", cfg) == pytest.approx(0.05**2, rel=1e-9)
    spike = lidar_variance(cfg.score_on_spike, "y", cfg)
    assert spike >= 100.0 * 0.02**2


def test_sensor_config_validation() -> None:
    with pytest.raises(ValidationError):
        SensorConfig(imu_accel_std=-0.1)
    with pytest.raises(ValidationError):
        SensorConfig(spike_probability=1.5)
    with pytest.raises(ValidationError):
        LidarVarianceMap(k1=1.0, k2=1.0, k3=1.0, k4=0.0)
    with pytest.raises(ValidationError):
        SensorConfig(kappa={"z": LidarVarianceMap(k1=1.0, k2=2.0, k3=1.0, k4=1.0)})


def test_frame_log_has_empty_lidar_cells_between_lidar_ticks() -> None:
    suite = SensorSuite(quiet_config(), np.random.default_rng(0))
    table = frames_to_frame(suite.emit(truth()) for _ in range(12))
    assert len(table) == 12
    assert table["lidar_x"].notna().tolist() == [True] + [False] * 9 + [True, False]
    assert table["omega"].notna().all()
