"""Benchmark controllers: PI speed loop and the three steering laws.

Steering laws work on the tracking-error vector ``x_e = [dy, dy_dot, dpsi, dr]``
and return a front wheel angle already clamped to ``delta_max``. The LQ gains
come from the zero-order-hold discretisation of the linear error dynamics and a
fixed-point iteration of the discrete Riccati equation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from .errors import SingularityError, SolverError, ValidationError
from .paths import TrackingErrors
from .vehicle_models import SAMPLE_TIME, V_MIN, ChassisParams, steady_state_cornering, understeer_coefficient

LOGGER = logging.getLogger(__name__)

DEFAULT_Q = (30.0, 1.0, 5.0, 1.0)
DEFAULT_R = 20.0
RESCHEDULE_DV = 0.05
RICCATI_ROUNDING = 1e3 * float(np.finfo(float).eps)


def _clamp(value: float, low: float, high: float) -> float:
    return min(max(value, low), high)


@dataclass(frozen=True, slots=True, eq=False)
class ErrorStateModel:
    """Continuous ``(A, B)`` and zero-order-hold ``(Ad, Bd)`` of the error dynamics at speed ``v``."""

    a: np.ndarray
    b: np.ndarray
    ad: np.ndarray
    bd: np.ndarray
    v: float
    dt: float


@dataclass(frozen=True, slots=True, eq=False)
class LqGain:
    k: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r: float
    v_design: float
    spectral_radius: float
    iterations: int = 0

    def as_dict(self) -> dict[str, object]:
        return {
            "K": [float(value) for value in self.k],
            "Q_diag": [float(value) for value in np.diag(self.q)],
            "R": self.r,
            "v_design": self.v_design,
            "spectral_radius": self.spectral_radius,
        }


@dataclass(frozen=True, slots=True)
class SteeringLimits:
    delta_max: float = math.radians(30.0)
    delta_dot_max: float = math.radians(70.0)

    def __post_init__(self) -> None:
        if not self.delta_max > 0 or not self.delta_dot_max > 0:
            msg = "Steering limits must be positive"
            raise ValidationError(msg)


@dataclass(frozen=True, slots=True)
class FfFbGains:
    """Lateral gain ``k_y`` (rad/m) and look-ahead distance ``d_la`` (m)."""

    k_y: float = -2.0
    look_ahead: float = 0.4


@dataclass(frozen=True, slots=True)
class PiGains:
    kp: float = 0.2
    ki: float = 1.5
    va_min: float = 0.0
    va_max: float = 3.0
    integral_limit: float = 5.0

    def __post_init__(self) -> None:
        if self.kp < 0 or self.ki < 0:
            msg = "PI gains must be non negative"
            raise ValidationError(msg)
        if self.va_max <= self.va_min:
            msg = "PI output limits must satisfy va_min < va_max"
            raise ValidationError(msg)
        if self.integral_limit <= 0:
            msg = "PI integral clamp must be positive"
            raise ValidationError(msg)


@dataclass(slots=True)
class PiState:
    gains: PiGains = field(default_factory=PiGains)
    integral: float = 0.0


def error_state_model(v: float, cp: ChassisParams, dt: float = SAMPLE_TIME) -> ErrorStateModel:
    """Linear lateral error dynamics at speed ``v`` and their ZOH discretisation."""

    if v <= V_MIN:
        msg = f"Error-state model needs v > {V_MIN} m/s, got {v:.4f}"
        raise SingularityError(msg)
    if not dt > 0:
        msg = "Discretisation step must be positive"
        raise ValidationError(msg)
    m, ig = cp.mass, cp.yaw_inertia
    cf, cr, lf, lr = cp.cf, cp.cr, cp.lf, cp.lr
    a = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [0.0, -(cf + cr) / (m * v), (cf + cr) / m, (-cf * lf + cr * lr) / (m * v)],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, (-cf * lf + cr * lr) / (ig * v), (cf * lf - cr * lr) / ig, -(cf * lf**2 + cr * lr**2) / (ig * v)],
        ]
    )
    b = np.array([[0.0], [cf / m], [0.0], [cf * lf / ig]])
    augmented = np.zeros((5, 5))
    augmented[:4, :4] = a
    augmented[:4, 4:] = b
    phi = expm(augmented * dt)
    return ErrorStateModel(a=a, b=b, ad=phi[:4, :4], bd=phi[:4, 4:], v=v, dt=dt)


def solve_discrete_riccati(
    ad: np.ndarray,
    bd: np.ndarray,
    q: np.ndarray,
    r: float | np.ndarray,
    *,
    v_design: float = 0.0,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> LqGain:
    """Fixed-point iteration of the discrete Riccati equation starting from ``P = Q``.

    Convergence is declared when the largest change of ``P`` drops below
    ``tol``. Once ``max|P|`` is large enough that ``tol`` falls under float64
    rounding, the threshold becomes ``RICCATI_ROUNDING * max|P|`` instead.
    """

    ad = np.atleast_2d(np.asarray(ad, dtype=float))
    bd = np.asarray(bd, dtype=float).reshape(ad.shape[0], -1)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r_mat = np.atleast_2d(np.asarray(r, dtype=float))
    if np.any(np.linalg.eigvalsh(r_mat) <= 0):
        msg = "Input weight R must be positive definite"
        raise ValidationError(msg)
    if np.min(np.linalg.eigvalsh(0.5 * (q + q.T))) < -1e-12:
        msg = "State weight Q must be positive semi-definite"
        raise ValidationError(msg)
    p = q.copy()
    for iteration in range(1, max_iter + 1):
        bt_p = bd.T @ p
        gain = np.linalg.solve(r_mat + bt_p @ bd, bt_p @ ad)
        nxt = ad.T @ p @ ad - ad.T @ p @ bd @ gain + q
        nxt = 0.5 * (nxt + nxt.T)
        if not np.all(np.isfinite(nxt)):
            msg = "Riccati iteration diverged"
            raise SolverError(msg)
        change = float(np.max(np.abs(nxt - p)))
        p = nxt
        if change < max(tol, RICCATI_ROUNDING * float(np.max(np.abs(p)))):
            break
    else:
        msg = f"Riccati iteration did not converge in {max_iter} iterations"
        raise SolverError(msg)
    bt_p = bd.T @ p
    k = np.linalg.solve(r_mat + bt_p @ bd, bt_p @ ad)
    radius = float(np.max(np.abs(np.linalg.eigvals(ad - bd @ k))))
    if radius >= 1.0:
        msg = f"LQ gain does not stabilise the loop (spectral radius {radius:.6f})"
        raise SolverError(msg)
    LOGGER.debug("Riccati solved", extra={"iterations": iteration, "spectral_radius": radius, "v_design": v_design})
    r_value = float(r_mat[0, 0]) if r_mat.size == 1 else float(np.trace(r_mat))
    return LqGain(
        k=k.ravel() if k.shape[0] == 1 else k,
        p=p,
        q=q,
        r=r_value,
        v_design=v_design,
        spectral_radius=radius,
        iterations=iteration,
    )


def design_lq(
    v: float,
    cp: ChassisParams,
    *,
    q: tuple[float, ...] = DEFAULT_Q,
    r: float = DEFAULT_R,
    dt: float = SAMPLE_TIME,
) -> LqGain:
    model = error_state_model(v, cp, dt)
    return solve_discrete_riccati(model.ad, model.bd, np.diag(q), r, v_design=v)


def balance_heading_weight(
    v: float,
    cp: ChassisParams,
    *,
    q: tuple[float, ...] = DEFAULT_Q,
    r: float = DEFAULT_R,
    dt: float = SAMPLE_TIME,
    upper: float = 1e6,
) -> float:
    """Heading weight ``Q[2]`` for which ``lq_ed`` holds no steady lateral error on a circle at ``v``.

    The steady heading error of a circle is minus the sideslip, so enough
    heading feedback produces the whole steady steering angle and the curvature
    feedforward of ``lq_cm`` vanishes. The root is bracketed on ``[0, upper]``.
    """

    def residual(weight: float) -> float:
        gain = design_lq(v, cp, q=(q[0], q[1], weight, q[3]), r=r, dt=dt)
        return curvature_feedforward(gain, 1.0, v, cp)

    low_value, high_value = residual(0.0), residual(upper)
    if low_value * high_value > 0:
        msg = f"No heading weight in [0, {upper:g}] removes the steady lateral error at v={v}"
        raise SolverError(msg)
    weight = float(brentq(residual, 0.0, upper, xtol=1e-9, rtol=1e-12))
    LOGGER.debug("Heading weight balanced", extra={"v": v, "q_heading": weight})
    return weight


class LqScheduler:
    """Keeps an LQ gain designed within ``RESCHEDULE_DV`` of the current speed."""

    def __init__(
        self,
        cp: ChassisParams,
        *,
        q: tuple[float, ...] = DEFAULT_Q,
        r: float = DEFAULT_R,
        dt: float = SAMPLE_TIME,
        v_floor: float = 0.1,
    ) -> None:
        self._cp = cp
        self._q = q
        self._r = r
        self._dt = dt
        self._v_floor = v_floor
        self._gain: LqGain | None = None
        self.redesigns = 0

    @property
    def gain(self) -> LqGain | None:
        return self._gain

    def gain_for(self, v: float) -> LqGain:
        v = max(v, self._v_floor)
        if self._gain is None or abs(v - self._gain.v_design) > RESCHEDULE_DV:
            self._gain = design_lq(v, self._cp, q=self._q, r=self._r, dt=self._dt)
            self.redesigns += 1
        return self._gain


def lq_ed(xe: TrackingErrors, gain: LqGain, delta_max: float = math.radians(30.0)) -> float:
    """Expert demonstrator law ``delta = -K x_e``, clamped."""

    delta = -float(np.dot(gain.k, xe.as_array()))
    return _clamp(delta, -delta_max, delta_max)


def curvature_feedforward(gain: LqGain, kappa_ref: float, v: float, cp: ChassisParams) -> float:
    """Steering that cancels the steady lateral error on a constant-curvature path.

    The steady cornering angle is corrected by the feedback the gain applies to
    the steady heading error, which equals minus the steady sideslip.
    """

    if kappa_ref == 0.0:
        return 0.0
    beta_ss, _, delta_ss = steady_state_cornering(cp, v, kappa_ref)
    return delta_ss + float(gain.k[2]) * (-beta_ss)


def lq_cm(xe: TrackingErrors, gain: LqGain, kappa_ref: float, v: float, cp: ChassisParams) -> float:
    """LQ feedback plus the curvature feedforward, clamped."""

    delta = -float(np.dot(gain.k, xe.as_array())) + curvature_feedforward(gain, kappa_ref, v, cp)
    return _clamp(delta, -cp.delta_max, cp.delta_max)


def ff_fb(xe: TrackingErrors, kappa_ref: float, v: float, gains: FfFbGains, cp: ChassisParams) -> float:
    """Kinematic feedforward plus a look-ahead lateral feedback."""

    feedforward = (cp.wheelbase + understeer_coefficient(cp) * v**2) * kappa_ref
    delta = feedforward + gains.k_y * (xe.dy + gains.look_ahead * xe.dpsi)
    return _clamp(delta, -cp.delta_max, cp.delta_max)


def pi_speed(v_ref: float, v: float, dt: float, state: PiState) -> float:
    """PI speed loop with conditional integration; updates ``state.integral`` in place."""

    if not dt > 0:
        msg = "PI step must be positive"
        raise ValidationError(msg)
    gains = state.gains
    error = v_ref - v
    candidate = _clamp(state.integral + error * dt, -gains.integral_limit, gains.integral_limit)
    unsaturated = gains.kp * error + gains.ki * candidate
    winding_up = (unsaturated > gains.va_max and error > 0) or (unsaturated < gains.va_min and error < 0)
    if not winding_up:
        state.integral = candidate
    return _clamp(gains.kp * error + gains.ki * state.integral, gains.va_min, gains.va_max)


def rate_limit_and_saturate(delta_cmd: float, delta_prev: float, dt: float, limits: SteeringLimits) -> float:
    if not dt > 0:
        msg = "Rate limiter step must be positive"
        raise ValidationError(msg)
    step = limits.delta_dot_max * dt
    delta = _clamp(delta_cmd, delta_prev - step, delta_prev + step)
    return _clamp(delta, -limits.delta_max, limits.delta_max)


__all__ = [
    "DEFAULT_Q",
    "DEFAULT_R",
    "ErrorStateModel",
    "FfFbGains",
    "LqGain",
    "LqScheduler",
    "PiGains",
    "PiState",
    "RESCHEDULE_DV",
    "RICCATI_ROUNDING",
    "SteeringLimits",
    "balance_heading_weight",
    "curvature_feedforward",
    "design_lq",
    "error_state_model",
    "ff_fb",
    "lq_cm",
    "lq_ed",
    "pi_speed",
    "rate_limit_and_saturate",
    "solve_discrete_riccati",
]
