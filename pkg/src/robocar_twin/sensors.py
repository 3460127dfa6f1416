"""Multi-rate sensor emulation for the digital twin.

IMU (accelerations, yaw rate, orientation) and the motor encoder are sampled on
every 10 ms tick; the lidar localisation pose arrives on every tenth tick with a
quality score. The score is mapped to a measurement variance by
:func:`lidar_variance`, which the estimators use for their lidar updates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import DomainError, ValidationError
from .vehicle_models import SAMPLE_TIME, TruthSample, wrap_angle

LOGGER = logging.getLogger(__name__)

LIDAR_CHANNELS = ("x", "y", "psi")
FRAME_COLUMNS = (
    "t",
    "ax",
    "ay",
    "r",
    "imu_psi",
    "omega",
    "lidar_x",
    "lidar_y",
    "lidar_psi",
    "lidar_score",
)


@dataclass(frozen=True, slots=True)
class LidarVarianceMap:
    """Coefficients of ``R = k1 * tanh(k2 / score - k3) + k4`` for one lidar channel."""

    k1: float
    k2: float
    k3: float
    k4: float

    def __post_init__(self) -> None:
        for name in ("k1", "k2", "k3", "k4"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                msg = f"Lidar variance coefficient {name} must be positive"
                raise ValidationError(msg)
        if self.k4 - self.k1 * math.tanh(self.k3) <= 0:
            msg = "Lidar variance map must stay positive for large scores (k4 > k1*tanh(k3))"
            raise ValidationError(msg)

    @classmethod
    def for_std(cls, std: float, score_nominal: float = 1.0) -> "LidarVarianceMap":
        """Coefficients whose variance at ``score_nominal`` equals ``std**2``.

        The floor for very good scores sits at half the nominal variance and a
        score twenty times below nominal yields roughly two hundred times it.
        """

        if std <= 0:
            msg = "Lidar standard deviation must be positive to derive a variance map"
            raise ValidationError(msg)
        variance = std**2
        k3 = 3.0
        k1 = 100.0 * variance
        k4 = k1 * math.tanh(k3) + 0.5 * variance
        k2 = score_nominal * (math.atanh((variance - k4) / k1) + k3)
        return cls(k1=k1, k2=k2, k3=k3, k4=k4)

    def as_dict(self) -> dict[str, float]:
        return {"k1": self.k1, "k2": self.k2, "k3": self.k3, "k4": self.k4}


@dataclass(slots=True)
class SensorConfig:
    imu_accel_std: float = 0.05
    imu_gyro_std: float = 0.01
    imu_heading_std: float = 0.03
    encoder_std: float = 0.002
    lidar_pos_std: float = 0.02
    lidar_heading_std: float = 0.02
    spike_probability: float = 0.01
    spike_magnitude_range: tuple[float, float] = (0.3, 1.0)
    score_nominal: float = 1.0
    score_on_spike: float = 0.05
    score_jitter: float = 0.05
    lidar_period: int = 10
    kappa: dict[str, LidarVarianceMap] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in (
            "imu_accel_std",
            "imu_gyro_std",
            "imu_heading_std",
            "encoder_std",
            "lidar_pos_std",
            "lidar_heading_std",
            "score_jitter",
        ):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                msg = f"Sensor setting {name} must be a non negative number"
                raise ValidationError(msg)
        if not 0.0 <= self.spike_probability <= 1.0:
            msg = "spike_probability must lie in [0, 1]"
            raise ValidationError(msg)
        low, high = self.spike_magnitude_range
        if low < 0 or high < low:
            msg = "spike_magnitude_range must be an ordered pair of non negative magnitudes"
            raise ValidationError(msg)
        if self.score_nominal <= 0 or self.score_on_spike <= 0:
            msg = "Lidar scores must be positive"
            raise ValidationError(msg)
        if self.lidar_period < 1:
            msg = "lidar_period must be at least one tick"
            raise ValidationError(msg)
        unknown = set(self.kappa) - set(LIDAR_CHANNELS)
        if unknown:
            msg = f"Unknown lidar channels in kappa: {', '.join(sorted(unknown))}"
            raise ValidationError(msg)

    def variance_map(self, channel: str) -> LidarVarianceMap:
        """Configured coefficients for ``channel`` or the defaults derived from its std."""

        if channel not in LIDAR_CHANNELS:
            msg = f"Unknown lidar channel {channel!r}"
            raise ValidationError(msg)
        explicit = self.kappa.get(channel)
        if explicit is not None:
            return explicit
        std = self.lidar_heading_std if channel == "psi" else self.lidar_pos_std
        # a noiseless lidar still needs a usable variance in the filters
        return LidarVarianceMap.for_std(max(std, 1e-4), self.score_nominal)


@dataclass(frozen=True, slots=True)
class LidarSample:
    x: float
    y: float
    psi: float
    score: float
    spike: bool = False


@dataclass(frozen=True, slots=True)
class SensorFrame:
    """Everything the sensors report at one tick; ``lidar`` is ``None`` between lidar ticks."""

    t: float
    tick: int
    ax: float
    ay: float
    r: float
    imu_psi: float
    omega: float
    lidar: LidarSample | None = None

    @property
    def has_lidar(self) -> bool:
        return self.lidar is not None

    def as_row(self) -> dict[str, float | None]:
        lidar = self.lidar
        return {
            "t": self.t,
            "ax": self.ax,
            "ay": self.ay,
            "r": self.r,
            "imu_psi": self.imu_psi,
            "omega": self.omega,
            "lidar_x": lidar.x if lidar else None,
            "lidar_y": lidar.y if lidar else None,
            "lidar_psi": lidar.psi if lidar else None,
            "lidar_score": lidar.score if lidar else None,
        }


def lidar_variance(score: float, channel: str, cfg: SensorConfig) -> float:
    """Measurement variance of a lidar channel for a given ``lidar_score``."""

    if not math.isfinite(score) or score <= 0:
        msg = f"lidar_score must be positive, got {score!r}"
        raise DomainError(msg)
    k = cfg.variance_map(channel)
    return k.k1 * math.tanh(k.k2 / score - k.k3) + k.k4


def _spike_offset(cfg: SensorConfig, rng: np.random.Generator) -> tuple[float, float]:
    low, high = cfg.spike_magnitude_range
    direction = rng.uniform(-math.pi, math.pi)
    magnitude = rng.uniform(low, high)
    return magnitude * math.cos(direction), magnitude * math.sin(direction)


def sample_sensors(
    truth: TruthSample,
    tick: int,
    cfg: SensorConfig,
    rng: np.random.Generator,
    *,
    dt: float = SAMPLE_TIME,
) -> SensorFrame:
    """Noisy sensor frame for the ground truth at ``tick``.

    Draw order is fixed (IMU, encoder, then lidar) so equal seeds give equal
    streams.
    """

    if tick < 0:
        msg = "Sensor tick index must be non negative"
        raise ValidationError(msg)
    state = truth.state
    ax = truth.ax + rng.normal(0.0, cfg.imu_accel_std)
    ay = truth.ay + rng.normal(0.0, cfg.imu_accel_std)
    r = state.r + rng.normal(0.0, cfg.imu_gyro_std)
    imu_psi = wrap_angle(state.psi + rng.normal(0.0, cfg.imu_heading_std))
    omega = truth.omega + rng.normal(0.0, cfg.encoder_std)
    lidar = None
    if tick % cfg.lidar_period == 0:
        psi = wrap_angle(state.psi + rng.normal(0.0, cfg.lidar_heading_std))
        if rng.random() < cfg.spike_probability:
            off_x, off_y = _spike_offset(cfg, rng)
            lidar = LidarSample(
                x=state.x + off_x,
                y=state.y + off_y,
                psi=psi,
                score=cfg.score_on_spike,
                spike=True,
            )
            LOGGER.debug("Lidar spike injected", extra={"tick": tick, "offset": math.hypot(off_x, off_y)})
        else:
            score = cfg.score_nominal * (1.0 + rng.normal(0.0, cfg.score_jitter))
            lidar = LidarSample(
                x=state.x + rng.normal(0.0, cfg.lidar_pos_std),
                y=state.y + rng.normal(0.0, cfg.lidar_pos_std),
                psi=psi,
                score=max(score, 0.01 * cfg.score_nominal),
            )
    return SensorFrame(
        t=round(tick * dt, 10),
        tick=tick,
        ax=ax,
        ay=ay,
        r=r,
        imu_psi=imu_psi,
        omega=omega,
        lidar=lidar,
    )


class SensorSuite:
    """Owns the seeded stream and the tick counter of one sensor set."""

    def __init__(self, cfg: SensorConfig, rng: np.random.Generator, *, dt: float = SAMPLE_TIME) -> None:
        self._cfg = cfg
        self._rng = rng
        self._dt = dt
        self._tick = 0
        self.spikes = 0

    @property
    def config(self) -> SensorConfig:
        return self._cfg

    @property
    def tick(self) -> int:
        return self._tick

    def emit(self, truth: TruthSample) -> SensorFrame:
        frame = sample_sensors(truth, self._tick, self._cfg, self._rng, dt=self._dt)
        if frame.lidar is not None and frame.lidar.spike:
            self.spikes += 1
        self._tick += 1
        return frame


def frames_to_frame(frames: Iterable[SensorFrame]) -> pd.DataFrame:
    """Frame log table; lidar cells are empty between lidar ticks."""

    return pd.DataFrame([frame.as_row() for frame in frames], columns=list(FRAME_COLUMNS))


def parse_variance_maps(raw: Mapping[str, Mapping[str, float]]) -> dict[str, LidarVarianceMap]:
    maps: dict[str, LidarVarianceMap] = {}
    for channel, values in raw.items():
        try:
            maps[str(channel)] = LidarVarianceMap(
                k1=float(values["k1"]),
                k2=float(values["k2"]),
                k3=float(values["k3"]),
                k4=float(values["k4"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            msg = f"Lidar variance map for {channel!r} needs numeric k1..k4"
            raise ValidationError(msg) from exc
    return maps


__all__ = [
    "FRAME_COLUMNS",
    "LIDAR_CHANNELS",
    "LidarSample",
    "LidarVarianceMap",
    "SensorConfig",
    "SensorFrame",
    "SensorSuite",
    "frames_to_frame",
    "lidar_variance",
    "parse_variance_maps",
    "sample_sensors",
]
