"""Federated no-reset estimator.

Two local extended Kalman filters run side by side on the sensor stream:

* the bicycle-model filter (6 states) predicts with the applied inputs and is
  corrected by the encoder, the gyro and, on lidar ticks, the lidar pose;
* the point-model filter (4 states) predicts with the IMU accelerations rotated
  by an externally supplied heading and is corrected by the lidar position.

The master combines the two position blocks through their information matrices
on every tick. Nothing flows back from the master to the local filters.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol, Sequence

import numpy as np
from scipy.stats import chi2

from .errors import NumericalError, ValidationError
from .sensors import SensorConfig, SensorFrame, lidar_variance
from .vehicle_models import (
    BICYCLE_STATES,
    POINT_STATES,
    SAMPLE_TIME,
    ControlInput,
    VehicleParams,
    bicycle_field,
    integrate_step,
    point_field,
    wrap_angle,
)

LOGGER = logging.getLogger(__name__)

PSI_SOURCES = ("lidar_held", "imu", "ekf_bm")
PSD_TOLERANCE = 1e-10
CONDITION_LIMIT = 1e12
_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True, slots=True, eq=False)
class EkfEstimate:
    """Mean, covariance and time stamp of one local filter."""

    mean: np.ndarray
    cov: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        n = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (n, n):
            msg = f"Covariance shape {self.cov.shape} does not match a {n}-state mean"
            raise ValidationError(msg)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2].copy()

    @property
    def position_cov(self) -> np.ndarray:
        return self.cov[:2, :2].copy()


@dataclass(frozen=True, slots=True, eq=False)
class FusedPosition:
    """Output of the master filter; ``source`` is ``fused``, ``bm`` or ``pm``."""

    position: np.ndarray
    cov: np.ndarray
    source: str = "fused"

    @property
    def degraded(self) -> bool:
        return self.source != "fused"


@dataclass(slots=True)
class NoiseConfig:
    """Process noise of both filters and the fixed measurement variances.

    ``r_speed`` and ``r_yaw_rate`` default to the variances implied by the
    encoder and gyro noise of the sensor configuration.
    """

    q_bm: tuple[float, ...] = (1e-8, 1e-8, 2.5e-5, 1e-8, 1e-8, 1e-4)
    q_pm: tuple[float, ...] = (1e-7, 1e-7, 4e-6, 4e-6)
    r_speed: float | None = None
    r_yaw_rate: float | None = None
    psi_source: str = "lidar_held"

    def __post_init__(self) -> None:
        if len(self.q_bm) != len(BICYCLE_STATES) or len(self.q_pm) != len(POINT_STATES):
            msg = "Process noise diagonals must have 6 (bicycle) and 4 (point) entries"
            raise ValidationError(msg)
        if any(not value > 0 for value in (*self.q_bm, *self.q_pm)):
            msg = "Process noise diagonals must be positive"
            raise ValidationError(msg)
        for name in ("r_speed", "r_yaw_rate"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                msg = f"{name} must be positive"
                raise ValidationError(msg)
        if self.psi_source not in PSI_SOURCES:
            msg = f"psi_source must be one of {', '.join(PSI_SOURCES)}"
            raise ValidationError(msg)


@dataclass(slots=True)
class FilterSettings:
    """Everything the local filters need besides their estimates."""

    params: VehicleParams
    sensors: SensorConfig = field(default_factory=SensorConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    dt: float = SAMPLE_TIME

    def speed_variance(self) -> float:
        if self.noise.r_speed is not None:
            return self.noise.r_speed
        std = self.params.motor.speed_gain * self.sensors.encoder_std
        return max(std**2, _VARIANCE_FLOOR)

    def yaw_rate_variance(self) -> float:
        if self.noise.r_yaw_rate is not None:
            return self.noise.r_yaw_rate
        return max(self.sensors.imu_gyro_std**2, _VARIANCE_FLOOR)


class ProcessModel(Protocol):
    """Discrete process model of a local filter."""

    name: str
    states: tuple[str, ...]
    outputs: Mapping[str, int]
    angle_outputs: frozenset[str]

    def propagate(self, x: np.ndarray, u: Any, dt: float) -> np.ndarray:
        ...

    def jacobian(self, x: np.ndarray, u: Any, dt: float) -> np.ndarray:
        ...


class BicycleProcess:
    """Bicycle model with frozen lateral rows below ``V_MIN``; Jacobian by central differences."""

    name = "bm"
    states = BICYCLE_STATES
    outputs: Mapping[str, int] = {"x": 0, "y": 1, "v": 2, "psi": 3, "r": 5}
    angle_outputs = frozenset({"psi"})

    def __init__(self, params: VehicleParams) -> None:
        self._chassis = params.chassis
        self._motor = params.motor

    def _field(self, x: np.ndarray, u: ControlInput) -> np.ndarray:
        return bicycle_field(x, u, self._chassis, self._motor, freeze_lateral=True)

    def propagate(self, x: np.ndarray, u: ControlInput, dt: float) -> np.ndarray:
        return integrate_step(np.asarray(x, dtype=float), u, dt, self._field)

    def jacobian(self, x: np.ndarray, u: ControlInput, dt: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        jac = np.empty((n, n))
        for i in range(n):
            h = 1e-6 * max(1.0, abs(x[i]))
            up = x.copy()
            down = x.copy()
            up[i] += h
            down[i] -= h
            jac[:, i] = (self.propagate(up, u, dt) - self.propagate(down, u, dt)) / (2.0 * h)
        return jac


class PointProcess:
    """Double integrator driven by body accelerations ``u = (ax, ay, psi)``."""

    name = "pm"
    states = POINT_STATES
    outputs: Mapping[str, int] = {"x": 0, "y": 1}
    angle_outputs: frozenset[str] = frozenset()

    @staticmethod
    def _field(x: np.ndarray, u: tuple[float, float, float]) -> np.ndarray:
        return point_field(x, (u[0], u[1]), u[2])

    def propagate(self, x: np.ndarray, u: tuple[float, float, float], dt: float) -> np.ndarray:
        return integrate_step(np.asarray(x, dtype=float), u, dt, self._field)

    def jacobian(self, x: np.ndarray, u: tuple[float, float, float], dt: float) -> np.ndarray:
        jac = np.eye(4)
        jac[0, 2] = dt
        jac[1, 3] = dt
        return jac


def _as_matrix(q: np.ndarray | Sequence[float], n: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        q = np.diag(q)
    if q.shape != (n, n):
        msg = f"Process noise must be {n}x{n}"
        raise ValidationError(msg)
    return q


def _check_covariance(cov: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(cov)):
        msg = f"Covariance became non-finite during {where}"
        raise NumericalError(msg)
    cov = 0.5 * (cov + cov.T)
    smallest = float(np.min(np.linalg.eigvalsh(cov)))
    if smallest < -PSD_TOLERANCE:
        msg = f"Covariance lost positive semi-definiteness during {where} (min eigenvalue {smallest:.3e})"
        raise NumericalError(msg)
    return cov


def ekf_predict(
    est: EkfEstimate,
    u: Any,
    dt: float,
    q: np.ndarray | Sequence[float],
    model: ProcessModel,
) -> EkfEstimate:
    """Propagate the mean by one RK4 step and the covariance by ``F P F^T + Q``."""

    n = est.mean.shape[0]
    q = _as_matrix(q, n)
    mean = model.propagate(est.mean, u, dt)
    if not np.all(np.isfinite(mean)):
        msg = f"{model.name} prediction produced a non-finite mean"
        raise NumericalError(msg)
    jac = model.jacobian(est.mean, u, dt)
    cov = _check_covariance(jac @ est.cov @ jac.T + q, f"{model.name} prediction")
    return EkfEstimate(mean=mean, cov=cov, t=est.t + dt)


def ekf_update(
    est: EkfEstimate,
    z: Mapping[str, float],
    r: Mapping[str, float],
    model: ProcessModel,
) -> EkfEstimate:
    """Sequential scalar Joseph-form updates, one per measured channel.

    Channels are processed in the order of ``model.outputs``. An infinite
    variance leaves the estimate untouched for that channel.
    """

    unknown = set(z) - set(model.outputs)
    if unknown:
        msg = f"{model.name} filter cannot measure {', '.join(sorted(unknown))}"
        raise ValidationError(msg)
    if not z:
        return est
    mean = est.mean.copy()
    cov = est.cov.copy()
    n = mean.shape[0]
    identity = np.eye(n)
    for channel, index in model.outputs.items():
        if channel not in z:
            continue
        if channel not in r:
            msg = f"No measurement variance given for {channel}"
            raise ValidationError(msg)
        variance = float(r[channel])
        if math.isnan(variance) or variance < 0:
            msg = f"Measurement variance for {channel} must be non negative"
            raise ValidationError(msg)
        if math.isinf(variance):
            continue
        innovation = float(z[channel]) - mean[index]
        if channel in model.angle_outputs:
            innovation = wrap_angle(innovation)
        s = cov[index, index] + variance
        if not s > 0:
            msg = f"Innovation variance for {channel} is not positive"
            raise NumericalError(msg)
        gain = cov[:, index] / s
        mean = mean + gain * innovation
        reduce = identity - np.outer(gain, identity[index])
        cov = reduce @ cov @ reduce.T + variance * np.outer(gain, gain)
    cov = _check_covariance(cov, f"{model.name} update")
    return EkfEstimate(mean=mean, cov=cov, t=est.t)


def _lidar_measurements(
    frame: SensorFrame,
    cfg: SensorConfig,
    channels: Sequence[str],
) -> tuple[dict[str, float], dict[str, float]]:
    lidar = frame.lidar
    if lidar is None:
        return {}, {}
    values = {"x": lidar.x, "y": lidar.y, "psi": lidar.psi}
    z = {channel: values[channel] for channel in channels}
    r = {channel: lidar_variance(lidar.score, channel, cfg) for channel in channels}
    return z, r


def ekf_bm_step(
    est: EkfEstimate,
    frame: SensorFrame,
    u: ControlInput,
    cfg: FilterSettings,
    *,
    model: BicycleProcess | None = None,
) -> EkfEstimate:
    """Bicycle-model filter tick: predict to ``frame.t`` with ``u``, then correct.

    ``u`` is the input applied over the interval ending at the frame.
    """

    model = model or BicycleProcess(cfg.params)
    dt = frame.t - est.t
    if dt > 1e-9:
        est = ekf_predict(est, u, dt, cfg.noise.q_bm, model)
    z = {"v": cfg.params.motor.speed_gain * frame.omega, "r": frame.r}
    r = {"v": cfg.speed_variance(), "r": cfg.yaw_rate_variance()}
    lidar_z, lidar_r = _lidar_measurements(frame, cfg.sensors, ("x", "y", "psi"))
    z.update(lidar_z)
    r.update(lidar_r)
    return ekf_update(est, z, r, model)


def ekf_pm_step(
    est: EkfEstimate,
    frame: SensorFrame,
    psi_source: float,
    cfg: FilterSettings,
    *,
    imu: tuple[float, float] | None = None,
) -> EkfEstimate:
    """Point-model filter tick: IMU prediction rotated by ``psi_source``, lidar position update.

    ``imu`` holds the body accelerations valid over the prediction interval;
    the frame's own reading is used when omitted.
    """

    model = PointProcess()
    dt = frame.t - est.t
    if dt > 1e-9:
        ax, ay = imu if imu is not None else (frame.ax, frame.ay)
        est = ekf_predict(est, (ax, ay, psi_source), dt, cfg.noise.q_pm, model)
    z, r = _lidar_measurements(frame, cfg.sensors, ("x", "y"))
    return ekf_update(est, z, r, model)


def _condition(matrix: np.ndarray) -> float:
    if not np.all(np.isfinite(matrix)):
        return math.inf
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular[-1] <= 0:
        return math.inf
    return float(singular[0] / singular[-1])


def master_fuse(bm: EkfEstimate, pm: EkfEstimate) -> FusedPosition:
    """Information-weighted combination of the two position blocks.

    Falls back to the better-conditioned local filter when either block (or
    their sum) is numerically singular.
    """

    a = bm.position_cov
    b = pm.position_cov
    pa = bm.position
    pb = pm.position
    cond_a = _condition(a)
    cond_b = _condition(b)
    total = a + b
    if max(cond_a, cond_b, _condition(total)) > CONDITION_LIMIT:
        source = "bm" if cond_a <= cond_b else "pm"
        LOGGER.warning(
            "Singular position covariance, falling back to one local filter",
            extra={"source": source, "cond_bm": cond_a, "cond_pm": cond_b},
        )
        chosen = bm if source == "bm" else pm
        return FusedPosition(position=chosen.position, cov=chosen.position_cov, source=source)
    weight_a = np.linalg.solve(total.T, b.T).T  # B (A+B)^-1
    weight_b = np.linalg.solve(total.T, a.T).T  # A (A+B)^-1
    cov = weight_b @ b
    cov = 0.5 * (cov + cov.T)
    return FusedPosition(position=weight_a @ pa + weight_b @ pb, cov=cov)


def nees(error: np.ndarray, cov: np.ndarray) -> float:
    """Normalised estimation error squared ``e^T P^-1 e``."""

    error = np.asarray(error, dtype=float)
    try:
        return float(error @ np.linalg.solve(cov, error))
    except np.linalg.LinAlgError as exc:
        msg = "NEES needs an invertible covariance"
        raise NumericalError(msg) from exc


def chi2_band(dof: int, confidence: float = 0.95) -> tuple[float, float]:
    """Two-sided chi-square acceptance band for a single NEES sample."""

    if dof < 1 or not 0.0 < confidence < 1.0:
        msg = "chi2_band needs dof >= 1 and a confidence in (0, 1)"
        raise ValidationError(msg)
    tail = 0.5 * (1.0 - confidence)
    return float(chi2.ppf(tail, dof)), float(chi2.ppf(1.0 - tail, dof))


@dataclass(frozen=True, slots=True)
class FusionSnapshot:
    bm: EkfEstimate
    pm: EkfEstimate
    fused: FusedPosition
    psi_used: float


class FederatedEstimator:
    """Runs both local filters and the master on every tick."""

    def __init__(
        self,
        settings: FilterSettings,
        bm_initial: EkfEstimate,
        pm_initial: EkfEstimate,
        *,
        initial_psi: float | None = None,
    ) -> None:
        if bm_initial.mean.shape != (len(BICYCLE_STATES),) or pm_initial.mean.shape != (len(POINT_STATES),):
            msg = "Federated estimator needs a 6-state bicycle and a 4-state point estimate"
            raise ValidationError(msg)
        self._settings = settings
        self._model = BicycleProcess(settings.params)
        self.bm = bm_initial
        self.pm = pm_initial
        self._psi_source = settings.noise.psi_source
        self._held_psi = float(bm_initial.mean[3]) if initial_psi is None else initial_psi
        self._prev: SensorFrame | None = None
        self._prev_bm_psi = float(bm_initial.mean[3])

    @property
    def psi_source(self) -> str:
        return self._psi_source

    def _prediction_heading(self) -> float:
        assert self._prev is not None
        if self._psi_source == "imu":
            return self._prev.imu_psi
        if self._psi_source == "ekf_bm":
            return self._prev_bm_psi
        return self._held_psi

    def step(self, frame: SensorFrame, u: ControlInput) -> FusionSnapshot:
        """Advance both filters to ``frame`` (``u`` applied since the previous frame) and fuse."""

        imu = None
        psi = self._held_psi
        if self._prev is not None:
            imu = (self._prev.ax, self._prev.ay)
            psi = self._prediction_heading()
        self.bm = ekf_bm_step(self.bm, frame, u, self._settings, model=self._model)
        self.pm = ekf_pm_step(self.pm, frame, psi, self._settings, imu=imu)
        if frame.lidar is not None:
            self._held_psi = frame.lidar.psi
        self._prev_bm_psi = float(self.bm.mean[3])
        self._prev = frame
        fused = master_fuse(self.bm, self.pm)
        return FusionSnapshot(bm=self.bm, pm=self.pm, fused=fused, psi_used=psi)


__all__ = [
    "BicycleProcess",
    "CONDITION_LIMIT",
    "EkfEstimate",
    "FederatedEstimator",
    "FilterSettings",
    "FusedPosition",
    "FusionSnapshot",
    "NoiseConfig",
    "PSI_SOURCES",
    "PointProcess",
    "ProcessModel",
    "chi2_band",
    "ekf_bm_step",
    "ekf_pm_step",
    "ekf_predict",
    "ekf_update",
    "master_fuse",
    "nees",
]
