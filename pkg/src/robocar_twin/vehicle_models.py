"""Continuous-time vehicle models and the fixed-step integrator.

The same equations serve three consumers: the digital twin that plays the part
of the real car, the prediction step of the local estimators and the
identification routines. Everything here is a pure function over immutable
values except :class:`VehicleTwin`, which owns the integrated state.

State vectors use the order ``[X, Y, v, psi, beta, r]`` for the bicycle model
and ``[X, Y, Vx, Vy]`` for the point model.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, TypeVar

import numpy as np

from .errors import DomainError, SingularityError, ValidationError

LOGGER = logging.getLogger(__name__)

SAMPLE_TIME = 0.01
V_MIN = 0.05

BICYCLE_STATES = ("X", "Y", "v", "psi", "beta", "r")
POINT_STATES = ("X", "Y", "Vx", "Vy")

StateT = TypeVar("StateT", float, np.ndarray)


def _require_positive(name: str, value: float) -> None:
    if not math.isfinite(value) or value <= 0:
        msg = f"{name} must be a positive finite number, got {value!r}"
        raise ValidationError(msg)


def _sign(value: float) -> float:
    if value > 0:
        return 1.0
    if value < 0:
        return -1.0
    return 0.0


def wrap_angle(angle: float) -> float:
    """Wrap an angle to ``(-pi, pi]``."""

    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True, slots=True)
class MotorParams:
    """Lumped DC-motor and driveline parameters."""

    p1: float
    p2: float
    p3: float
    gear_ratio: float
    wheel_radius: float

    def __post_init__(self) -> None:
        _require_positive("P1", self.p1)
        _require_positive("P2", self.p2)
        if not math.isfinite(self.p3) or self.p3 < 0:
            msg = f"P3 must be non negative, got {self.p3!r}"
            raise ValidationError(msg)
        _require_positive("gear_ratio", self.gear_ratio)
        _require_positive("wheel_radius", self.wheel_radius)

    @classmethod
    def from_dc_line(
        cls,
        slope: float,
        offset: float,
        p2: float,
        *,
        gear_ratio: float,
        wheel_radius: float,
    ) -> "MotorParams":
        """Build parameters whose steady state lies on ``omega = slope*Va - offset``."""

        return cls(
            p1=slope * p2,
            p2=p2,
            p3=offset * p2,
            gear_ratio=gear_ratio,
            wheel_radius=wheel_radius,
        )

    @property
    def speed_gain(self) -> float:
        """Ratio between vehicle speed and motor speed (``G / Rw``)."""

        return self.gear_ratio / self.wheel_radius

    @property
    def dc_slope(self) -> float:
        return self.p1 / self.p2

    @property
    def dc_offset(self) -> float:
        return self.p3 / self.p2

    def steady_voltage(self, v: float) -> float:
        """Armature voltage that holds the forward speed ``v`` (> 0)."""

        omega = v / self.speed_gain
        return (self.p2 * omega + self.p3) / self.p1


@dataclass(frozen=True, slots=True)
class ChassisParams:
    """Geometry, inertia and linear tyre stiffness of the chassis."""

    mass: float
    yaw_inertia: float
    lf: float
    lr: float
    cf: float
    cr: float
    delta_max: float = math.radians(30.0)
    width: float = 0.19

    def __post_init__(self) -> None:
        for name in ("mass", "yaw_inertia", "lf", "lr", "cf", "cr", "delta_max", "width"):
            _require_positive(name, getattr(self, name))
        if self.delta_max >= math.pi / 2:
            msg = "delta_max must stay below 90 degrees"
            raise ValidationError(msg)

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr


@dataclass(frozen=True, slots=True)
class VehicleParams:
    """Single source of truth shared by twin, filters and controllers."""

    motor: MotorParams
    chassis: ChassisParams

    @classmethod
    def from_mapping(cls, raw: Mapping[str, object]) -> "VehicleParams":
        """Parse the flat ``key: value`` vehicle parameter file."""

        required = ("mass", "yaw_inertia", "lf", "lr", "cf", "cr", "p1", "p2", "p3", "gear_ratio", "wheel_radius")
        missing = [key for key in required if key not in raw]
        if missing:
            msg = f"Vehicle parameters are missing keys: {', '.join(missing)}"
            raise ValidationError(msg)
        try:
            values = {key: float(raw[key]) for key in required}  # type: ignore[arg-type]
            delta_max = math.radians(float(raw.get("delta_max_deg", 30.0)))  # type: ignore[arg-type]
            width = float(raw.get("width", 0.19))  # type: ignore[arg-type]
        except (TypeError, ValueError) as exc:
            msg = "Vehicle parameters must be numeric"
            raise ValidationError(msg) from exc
        motor = MotorParams(
            p1=values["p1"],
            p2=values["p2"],
            p3=values["p3"],
            gear_ratio=values["gear_ratio"],
            wheel_radius=values["wheel_radius"],
        )
        chassis = ChassisParams(
            mass=values["mass"],
            yaw_inertia=values["yaw_inertia"],
            lf=values["lf"],
            lr=values["lr"],
            cf=values["cf"],
            cr=values["cr"],
            delta_max=delta_max,
            width=width,
        )
        return cls(motor=motor, chassis=chassis)


@dataclass(frozen=True, slots=True)
class BicycleState:
    """State of the bicycle model; also used to carry its time derivative."""

    x: float
    y: float
    v: float
    psi: float
    beta: float
    r: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.psi, self.beta, self.r], dtype=float)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "BicycleState":
        x, y, v, psi, beta, r = (float(item) for item in values)
        return cls(x=x, y=y, v=v, psi=psi, beta=beta, r=r)


@dataclass(frozen=True, slots=True)
class PointState:
    """State of the kinematic point model."""

    x: float
    y: float
    vx: float
    vy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy], dtype=float)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "PointState":
        x, y, vx, vy = (float(item) for item in values)
        return cls(x=x, y=y, vx=vx, vy=vy)


@dataclass(frozen=True, slots=True)
class ControlInput:
    """Armature voltage (V) and front steering angle (rad)."""

    va: float
    delta: float


@dataclass(frozen=True, slots=True)
class TruthSample:
    """Ground truth handed to the sensor emulation at one tick."""

    state: BicycleState
    ax: float
    ay: float
    omega: float


def motor_speed_derivative(omega: StateT, va: StateT, p: MotorParams) -> StateT:
    """Return ``P1*Va - P2*omega - P3*sgn(omega)`` with ``sgn(0) = 0``.

    Works element-wise on arrays so identification can simulate several
    experiments in one pass.
    """

    if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(va))):
        msg = "Motor speed derivative requires finite inputs"
        raise DomainError(msg)
    return p.p1 * va - p.p2 * omega - p.p3 * np.sign(omega)


def wheel_speed(omega: StateT, p: MotorParams) -> StateT:
    if not np.all(np.isfinite(omega)):
        msg = "Wheel speed requires a finite motor speed"
        raise DomainError(msg)
    return p.speed_gain * omega


def lateral_rates(beta, r, delta, v, cp: ChassisParams, v_dot=0.0):
    """Sideslip and yaw accelerations of the linear single-track model.

    All arguments may be floats or broadcastable arrays; ``v`` must already be
    above :data:`V_MIN`.
    """

    m = cp.mass
    cf, cr, lf, lr = cp.cf, cp.cr, cp.lf, cp.lr
    beta_dot = (
        -(cf + cr + m * v_dot) * beta - (cf * lf / v - cr * lr / v + m * v) * r + cf * delta
    ) / (m * v)
    r_dot = (-(cf * lf - cr * lr) * beta - (cf * lf**2 / v + cr * lr**2 / v) * r + cf * lf * delta) / cp.yaw_inertia
    return beta_dot, r_dot


def bicycle_field(
    x: np.ndarray,
    u: ControlInput,
    cp: ChassisParams,
    mp: MotorParams,
    *,
    freeze_lateral: bool = False,
) -> np.ndarray:
    """Array form of :func:`bicycle_derivative` used by integrators and filters."""

    _, _, v, psi, beta, r = (float(item) for item in x)
    gain = mp.speed_gain
    v_dot = gain * mp.p1 * u.va - mp.p2 * v - gain * mp.p3 * _sign(v)
    heading = beta + psi
    if v <= V_MIN:
        if not freeze_lateral:
            msg = f"Lateral model evaluated at v={v:.4f} m/s, below v_min={V_MIN} m/s"
            raise SingularityError(msg)
        beta_dot = 0.0
        r_dot = 0.0
    else:
        beta_dot, r_dot = lateral_rates(beta, r, u.delta, v, cp, v_dot)
    return np.array([v * math.cos(heading), v * math.sin(heading), v_dot, r, beta_dot, r_dot])


def bicycle_derivative(
    s: BicycleState,
    u: ControlInput,
    cp: ChassisParams,
    mp: MotorParams,
    *,
    freeze_lateral: bool = False,
) -> BicycleState:
    """Time derivative of the bicycle state.

    The ``m * v_dot`` damping term of the sideslip equation uses the speed
    derivative computed in the same call. Below :data:`V_MIN` the lateral
    equations are singular: a :class:`SingularityError` is raised unless
    ``freeze_lateral`` is set, in which case sideslip and yaw rate are held.
    """

    values = s.as_array()
    if not (np.all(np.isfinite(values)) and math.isfinite(u.va) and math.isfinite(u.delta)):
        msg = "Bicycle derivative requires finite state and input"
        raise DomainError(msg)
    if abs(u.delta) > cp.delta_max * (1.0 + 1e-9):
        msg = f"Steering angle {u.delta:.4f} rad exceeds delta_max {cp.delta_max:.4f} rad"
        raise DomainError(msg)
    return BicycleState.from_array(bicycle_field(values, u, cp, mp, freeze_lateral=freeze_lateral))


def point_field(x: np.ndarray, accel: tuple[float, float], psi: float) -> np.ndarray:
    ax, ay = accel
    cos_psi = math.cos(psi)
    sin_psi = math.sin(psi)
    return np.array([x[2], x[3], ax * cos_psi - ay * sin_psi, ax * sin_psi + ay * cos_psi])


def point_derivative(s: PointState, ax_body: float, ay_body: float, psi: float) -> PointState:
    """Kinematic point model driven by body-frame accelerations rotated by ``psi``."""

    return PointState.from_array(point_field(s.as_array(), (ax_body, ay_body), psi))


def kinematic_sideslip(delta: float, cp: ChassisParams) -> float:
    """Kinematic sideslip approximation ``arctan(Cf/(Cf+Cr)) * tan(delta)``."""

    if abs(delta) >= math.pi / 2:
        msg = "Kinematic sideslip requires |delta| < pi/2"
        raise DomainError(msg)
    return math.atan(cp.cf / (cp.cf + cp.cr)) * math.tan(delta)


def understeer_gradient(cp: ChassisParams, v: float) -> float:
    """Steering per unit steady lateral acceleration, ``(Cf Lf^2 + Cr Lr^2)/(Cf Lf v^2)``.

    Exact for neutral-steer chassis (``Cf*Lf == Cr*Lr``); used by the lateral
    identification constraint.
    """

    if v <= 0:
        msg = "Understeer gradient requires v > 0"
        raise DomainError(msg)
    return (cp.cf * cp.lf**2 + cp.cr * cp.lr**2) / (cp.cf * cp.lf * v**2)


def understeer_coefficient(cp: ChassisParams) -> float:
    """Mass-dependent steady-state steering term ``m (Cr Lr - Cf Lf) / (Cf Cr L)``."""

    return cp.mass * (cp.cr * cp.lr - cp.cf * cp.lf) / (cp.cf * cp.cr * cp.wheelbase)


def steady_state_cornering(cp: ChassisParams, v: float, kappa: float) -> tuple[float, float, float]:
    """Exact linear steady state ``(beta, r, delta)`` on a circle of curvature ``kappa``."""

    if v <= V_MIN:
        msg = f"Steady cornering requires v > {V_MIN} m/s"
        raise SingularityError(msg)
    r = v * kappa
    beta = kappa * (cp.lr - cp.mass * cp.lf * v**2 / (cp.cr * cp.wheelbase))
    delta = cp.wheelbase * kappa + understeer_coefficient(cp) * v**2 * kappa
    return beta, r, delta


def body_accelerations(x: np.ndarray, rates: np.ndarray) -> tuple[float, float]:
    """Body-frame accelerations at the centre of gravity from state and rates."""

    v, beta = float(x[2]), float(x[4])
    v_dot, beta_dot, r = float(rates[2]), float(rates[4]), float(x[5])
    turn = v * (beta_dot + r)
    ax = v_dot * math.cos(beta) - turn * math.sin(beta)
    ay = v_dot * math.sin(beta) + turn * math.cos(beta)
    return ax, ay


def integrate_step(
    state: StateT,
    u: object,
    dt: float,
    derivative_fn: Callable[[StateT, object], StateT],
) -> StateT:
    """Advance ``state`` by one classical fourth-order Runge-Kutta step."""

    if not dt > 0:
        msg = f"Integration step must be positive, got {dt!r}"
        raise ValidationError(msg)
    k1 = derivative_fn(state, u)
    k2 = derivative_fn(state + 0.5 * dt * k1, u)
    k3 = derivative_fn(state + 0.5 * dt * k2, u)
    k4 = derivative_fn(state + dt * k3, u)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True, slots=True)
class TwinDisturbance:
    """Per-step Gaussian kicks on speed (m/s) and yaw rate (rad/s)."""

    speed_std: float = 0.0
    yaw_rate_std: float = 0.0

    def __post_init__(self) -> None:
        if self.speed_std < 0 or self.yaw_rate_std < 0:
            msg = "Twin disturbance standard deviations must be non negative"
            raise ValidationError(msg)

    @property
    def active(self) -> bool:
        return self.speed_std > 0 or self.yaw_rate_std > 0


class VehicleTwin:
    """Digital twin of the car: the bicycle model stepped with RK4."""

    def __init__(
        self,
        params: VehicleParams,
        initial: BicycleState,
        *,
        dt: float = SAMPLE_TIME,
        disturbance: TwinDisturbance | None = None,
        rng: np.random.Generator | None = None,
    ) -> None:
        self._params = params
        self._dt = dt
        self._x = initial.as_array()
        self._disturbance = disturbance or TwinDisturbance()
        if self._disturbance.active and rng is None:
            msg = "A seeded generator is required when the twin is disturbed"
            raise ValidationError(msg)
        self._rng = rng
        self.t = 0.0

    @property
    def params(self) -> VehicleParams:
        return self._params

    @property
    def state(self) -> BicycleState:
        return BicycleState.from_array(self._x)

    @property
    def vector(self) -> np.ndarray:
        return self._x.copy()

    def _field(self, x: np.ndarray, u: ControlInput) -> np.ndarray:
        return bicycle_field(x, u, self._params.chassis, self._params.motor, freeze_lateral=True)

    def sample(self, u: ControlInput) -> TruthSample:
        """Truth for the sensors: current state plus the accelerations under ``u``."""

        rates = self._field(self._x, u)
        ax, ay = body_accelerations(self._x, rates)
        omega = float(self._x[2]) / self._params.motor.speed_gain
        return TruthSample(state=self.state, ax=ax, ay=ay, omega=omega)

    def step(self, u: ControlInput) -> BicycleState:
        self._x = integrate_step(self._x, u, self._dt, self._field)
        if self._disturbance.active:
            assert self._rng is not None
            self._x[2] += self._rng.normal(0.0, self._disturbance.speed_std)
            self._x[5] += self._rng.normal(0.0, self._disturbance.yaw_rate_std)
        if not np.all(np.isfinite(self._x)):
            msg = "Twin state became non-finite"
            raise DomainError(msg)
        self.t += self._dt
        return self.state


__all__ = [
    "BICYCLE_STATES",
    "BicycleState",
    "ChassisParams",
    "ControlInput",
    "MotorParams",
    "POINT_STATES",
    "PointState",
    "SAMPLE_TIME",
    "TruthSample",
    "TwinDisturbance",
    "VehicleParams",
    "VehicleTwin",
    "V_MIN",
    "bicycle_derivative",
    "bicycle_field",
    "body_accelerations",
    "integrate_step",
    "kinematic_sideslip",
    "lateral_rates",
    "motor_speed_derivative",
    "point_derivative",
    "point_field",
    "steady_state_cornering",
    "understeer_coefficient",
    "understeer_gradient",
    "wheel_speed",
    "wrap_angle",
]
