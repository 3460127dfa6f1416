"""Two-stage identification of the motor and tyre parameters from step tests.

Stage one fits a straight line through steady-state points; stage two searches
the one remaining free parameter so that simulated step responses match the
measured transients. The line is enforced as a constraint, so every candidate
model reproduces the fitted steady state exactly.

Measured and simulated responses both go through :func:`smooth_zero_phase`
before they are compared.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.ndimage import uniform_filter1d
from scipy.optimize import minimize_scalar

from .errors import DegenerateDesignError, DomainError, InfeasibleBoundsError, ValidationError
from .vehicle_models import (
    SAMPLE_TIME,
    BicycleState,
    ChassisParams,
    ControlInput,
    MotorParams,
    VehicleParams,
    bicycle_field,
    body_accelerations,
    integrate_step,
    lateral_rates,
    motor_speed_derivative,
)

LOGGER = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("longitudinal", "lateral")
EXPERIMENT_COLUMNS = ("t", "input", "output")
GRID_POINTS = 50
DEFAULT_WINDOW = 15


@dataclass(frozen=True, eq=False)
class StepExperiment:
    """One step test sampled on a uniform grid.

    ``output`` is the motor speed (rad/s) for longitudinal tests and the
    lateral acceleration (m/s^2) for lateral ones. ``initial`` is the output
    before the step.
    """

    kind: str
    input_level: float
    t: np.ndarray
    output: np.ndarray
    initial: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            msg = f"Unknown experiment kind {self.kind!r}"
            raise ValidationError(msg)
        if len(self.t) != len(self.output) or len(self.t) < 2:
            msg = "Experiment needs at least two samples with matching time stamps"
            raise ValidationError(msg)
        if not (np.all(np.isfinite(self.output)) and math.isfinite(self.input_level)):
            msg = "Experiment samples must be finite"
            raise DomainError(msg)
        steps = np.diff(self.t)
        if not np.allclose(steps, steps[0], rtol=0.0, atol=1e-9) or steps[0] <= 0:
            msg = "Experiment samples must be uniformly spaced"
            raise ValidationError(msg)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def duration(self) -> float:
        return len(self.t) * self.dt

    def __len__(self) -> int:
        return len(self.t)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"t": self.t, "input": np.full(len(self.t), self.input_level), "output": self.output}
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, kind: str) -> "StepExperiment":
        missing = [column for column in EXPERIMENT_COLUMNS if column not in frame.columns]
        if missing:
            msg = f"Experiment file is missing columns: {', '.join(missing)}"
            raise ValidationError(msg)
        inputs = frame["input"].to_numpy(dtype=float)
        if not np.allclose(inputs, inputs[-1]):
            msg = "Experiment input must be a constant step level"
            raise ValidationError(msg)
        return cls(
            kind=kind,
            input_level=float(inputs[-1]),
            t=frame["t"].to_numpy(dtype=float),
            output=frame["output"].to_numpy(dtype=float),
        )


@dataclass(frozen=True, slots=True)
class SteadyStatePoint:
    input_level: float
    steady_output: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.input_level) and math.isfinite(self.steady_output)):
            msg = "Steady-state point must be finite"
            raise DomainError(msg)


@dataclass(frozen=True, slots=True)
class LongitudinalFit:
    """Steady line ``omega_s = m_l*Va - b_l`` and the constrained motor parameters."""

    m_l: float
    b_l: float
    p2: float
    p1: float
    p3: float

    def __post_init__(self) -> None:
        if self.m_l <= 0:
            msg = "Steady-state slope must be positive"
            raise DegenerateDesignError(msg)
        if not math.isclose(self.p1, self.m_l * self.p2, rel_tol=1e-12) or not math.isclose(
            self.p3, self.b_l * self.p2, rel_tol=1e-12, abs_tol=1e-12
        ):
            msg = "Motor parameters must satisfy P1 = m_l*P2 and P3 = b_l*P2"
            raise ValidationError(msg)

    @classmethod
    def from_line(cls, m_l: float, b_l: float, p2: float) -> "LongitudinalFit":
        return cls(m_l=m_l, b_l=b_l, p2=p2, p1=m_l * p2, p3=b_l * p2)

    def to_motor(self, template: MotorParams) -> MotorParams:
        return replace(template, p1=self.p1, p2=self.p2, p3=self.p3)

    def as_dict(self) -> dict[str, float]:
        return {"m_l": self.m_l, "b_l": self.b_l, "P1": self.p1, "P2": self.p2, "P3": self.p3}


@dataclass(frozen=True, slots=True)
class LateralFit:
    k_su: float
    cf: float
    cr: float

    def __post_init__(self) -> None:
        if self.cf <= 0 or self.cr <= 0:
            msg = "Identified cornering stiffnesses must be positive"
            raise InfeasibleBoundsError(msg)

    def to_chassis(self, template: ChassisParams) -> ChassisParams:
        return replace(template, cf=self.cf, cr=self.cr)

    def as_dict(self) -> dict[str, float]:
        return {"k_su": self.k_su, "Cf": self.cf, "Cr": self.cr}


@dataclass(frozen=True, eq=False)
class ScanResult:
    """Grid scan of a scalar cost followed by bounded refinement."""

    grid: np.ndarray
    costs: np.ndarray
    argmin: float
    cost: float
    evaluations: int

    def to_frame(self, parameter: str) -> pd.DataFrame:
        return pd.DataFrame({parameter: self.grid, "cost": self.costs})


def smooth_zero_phase(values: np.ndarray, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Centred moving average (no phase lag); ``window`` must be odd."""

    if window < 1 or window % 2 == 0:
        msg = f"Smoothing window must be a positive odd number, got {window}"
        raise ValidationError(msg)
    values = np.asarray(values, dtype=float)
    if window == 1:
        return values.copy()
    return uniform_filter1d(values, size=window, axis=0, mode="nearest")


def steady_state_point(experiment: StepExperiment, tail_fraction: float = 0.25) -> SteadyStatePoint:
    """Average of the last ``tail_fraction`` of the response."""

    if not 0.0 < tail_fraction <= 1.0:
        msg = "tail_fraction must lie in (0, 1]"
        raise ValidationError(msg)
    count = max(1, int(round(len(experiment) * tail_fraction)))
    return SteadyStatePoint(experiment.input_level, float(np.mean(experiment.output[-count:])))


def fit_steady_state_line(points: Sequence[SteadyStatePoint]) -> tuple[float, float]:
    """Least-squares ``(m_l, b_l)`` of ``omega_s = m_l*Va - b_l``."""

    inputs = np.array([point.input_level for point in points], dtype=float)
    outputs = np.array([point.steady_output for point in points], dtype=float)
    if len(np.unique(inputs)) < 2:
        msg = "Steady-state line needs at least two distinct input levels"
        raise DegenerateDesignError(msg)
    design = np.column_stack([inputs, -np.ones_like(inputs)])
    (m_l, b_l), *_ = np.linalg.lstsq(design, outputs, rcond=None)
    LOGGER.info("Steady-state line fitted", extra={"m_l": float(m_l), "b_l": float(b_l), "points": len(points)})
    return float(m_l), float(b_l)


def fit_understeer_gradient(points: Sequence[SteadyStatePoint]) -> float:
    """Through-origin fit of ``a_ys = delta / k_su``: ``k_su = sum(delta^2) / sum(delta*a)``."""

    deltas = np.array([point.input_level for point in points], dtype=float)
    accels = np.array([point.steady_output for point in points], dtype=float)
    if not np.any(deltas != 0.0):
        msg = "Understeer gradient needs at least one non-zero steering input"
        raise DegenerateDesignError(msg)
    cross = float(np.dot(deltas, accels))
    if cross <= 0:
        msg = "Lateral acceleration has the wrong sign for the steering inputs"
        raise DegenerateDesignError(msg)
    return float(np.dot(deltas, deltas)) / cross


def bounded_search(cost: Callable[[float], float], low: float, high: float, *, grid_points: int = GRID_POINTS, rtol: float = 1e-6) -> ScanResult:
    """Grid scan on ``[low, high]`` then a bounded Brent/golden refinement around the best cell."""

    if not (math.isfinite(low) and math.isfinite(high)) or low <= 0 or high <= low:
        msg = f"Search bounds must satisfy 0 < low < high, got [{low}, {high}]"
        raise ValidationError(msg)
    grid = np.linspace(low, high, grid_points)
    costs = np.array([cost(float(value)) for value in grid])
    best = int(np.argmin(costs))
    left = float(grid[max(best - 1, 0)])
    right = float(grid[min(best + 1, grid_points - 1)])
    refined = minimize_scalar(
        cost,
        bounds=(left, right),
        method="bounded",
        options={"xatol": rtol * max(abs(grid[best]), 1e-12)},
    )
    argmin, value = float(refined.x), float(refined.fun)
    if costs[best] < value:
        argmin, value = float(grid[best]), float(costs[best])
    return ScanResult(grid=grid, costs=costs, argmin=argmin, cost=value, evaluations=grid_points + int(refined.nfev))


def _require_experiments(experiments: Sequence[StepExperiment], kind: str) -> None:
    if not experiments:
        msg = "At least one step experiment is required"
        raise ValidationError(msg)
    wrong = [exp.kind for exp in experiments if exp.kind != kind]
    if wrong:
        msg = f"Expected {kind} experiments, got {', '.join(sorted(set(wrong)))}"
        raise ValidationError(msg)
    dts = {round(exp.dt, 12) for exp in experiments}
    if len(dts) != 1:
        msg = "All experiments must share one sample time"
        raise ValidationError(msg)


def simulate_motor_steps(
    motor: MotorParams,
    levels: np.ndarray,
    samples: int,
    dt: float = SAMPLE_TIME,
    initial: np.ndarray | float = 0.0,
) -> np.ndarray:
    """RK4 motor-speed step responses, one column per voltage level."""

    levels = np.asarray(levels, dtype=float)
    omega = np.broadcast_to(np.asarray(initial, dtype=float), levels.shape).copy()
    out = np.empty((samples, levels.size))
    for k in range(samples):
        out[k] = omega
        omega = integrate_step(omega, levels, dt, lambda w, va: motor_speed_derivative(w, va, motor))
    return out


def simulate_lateral_steps(
    chassis: ChassisParams,
    deltas: np.ndarray,
    v: float,
    samples: int,
    dt: float = SAMPLE_TIME,
) -> np.ndarray:
    """Lateral acceleration ``v*(beta_dot + r)`` of steering steps at constant speed."""

    deltas = np.asarray(deltas, dtype=float)
    state = np.zeros((2, deltas.size))

    def field(x: np.ndarray, delta: np.ndarray) -> np.ndarray:
        return np.array(lateral_rates(x[0], x[1], delta, v, chassis))

    out = np.empty((samples, deltas.size))
    for k in range(samples):
        beta_dot, _ = lateral_rates(state[0], state[1], deltas, v, chassis)
        out[k] = v * (beta_dot + state[1])
        state = integrate_step(state, deltas, dt, field)
    return out


def _transient_cost(experiments: Sequence[StepExperiment], simulated: np.ndarray, measured: Sequence[np.ndarray], window: int) -> float:
    total = 0.0
    for j, exp in enumerate(experiments):
        response = smooth_zero_phase(simulated[: len(exp), j], window)
        total += float(np.sum((measured[j] - response) ** 2)) * exp.dt / exp.duration
    return total


def longitudinal_cost(
    experiments: Sequence[StepExperiment],
    m_l: float,
    b_l: float,
    *,
    window: int = DEFAULT_WINDOW,
) -> Callable[[float], float]:
    """Time-averaged squared speed mismatch as a function of ``P2``."""

    _require_experiments(experiments, "longitudinal")
    measured = [smooth_zero_phase(exp.output, window) for exp in experiments]
    levels = np.array([exp.input_level for exp in experiments])
    initial = np.array([exp.initial for exp in experiments])
    samples = max(len(exp) for exp in experiments)
    dt = experiments[0].dt

    def cost(p2: float) -> float:
        # the driveline ratio does not enter the motor-speed equation
        motor = MotorParams.from_dc_line(m_l, b_l, p2, gear_ratio=1.0, wheel_radius=1.0)
        simulated = simulate_motor_steps(motor, levels, samples, dt, initial)
        return _transient_cost(experiments, simulated, measured, window)

    return cost


def identify_p2_scan(
    experiments: Sequence[StepExperiment],
    m_l: float,
    b_l: float,
    bounds: tuple[float, float],
    *,
    window: int = DEFAULT_WINDOW,
) -> ScanResult:
    if b_l < 0:
        msg = "Steady-state line implies a negative Coulomb term (b_l < 0)"
        raise DegenerateDesignError(msg)
    cost = longitudinal_cost(experiments, m_l, b_l, window=window)
    return bounded_search(cost, *bounds)


def identify_p2(
    experiments: Sequence[StepExperiment],
    m_l: float,
    b_l: float,
    bounds: tuple[float, float],
    *,
    window: int = DEFAULT_WINDOW,
) -> float:
    """``P2`` minimising the transient mismatch with ``P1 = m_l*P2`` and ``P3 = b_l*P2``."""

    scan = identify_p2_scan(experiments, m_l, b_l, bounds, window=window)
    LOGGER.info("P2 identified", extra={"p2": scan.argmin, "cost": scan.cost, "evaluations": scan.evaluations})
    return scan.argmin


def rear_stiffness(cf: float | np.ndarray, k_su: float, v: float, chassis: ChassisParams) -> float | np.ndarray:
    """``Cr`` implied by ``Cf`` and the understeer gradient at speed ``v``."""

    lf, lr = chassis.lf, chassis.lr
    return (k_su * cf * lf * v**2 - cf * lf**2) / lr**2


def lateral_cost(
    experiments: Sequence[StepExperiment],
    k_su: float,
    v: float,
    chassis: ChassisParams,
    *,
    window: int = DEFAULT_WINDOW,
) -> Callable[[float], float]:
    _require_experiments(experiments, "lateral")
    if not v > 0:
        msg = "Lateral identification speed must be positive"
        raise ValidationError(msg)
    measured = [smooth_zero_phase(exp.output, window) for exp in experiments]
    deltas = np.array([exp.input_level for exp in experiments])
    samples = max(len(exp) for exp in experiments)
    dt = experiments[0].dt

    def cost(cf: float) -> float:
        candidate = replace(chassis, cf=cf, cr=float(rear_stiffness(cf, k_su, v, chassis)))
        simulated = simulate_lateral_steps(candidate, deltas, v, samples, dt)
        return _transient_cost(experiments, simulated, measured, window)

    return cost


def identify_cf_scan(
    experiments: Sequence[StepExperiment],
    k_su: float,
    v: float,
    chassis: ChassisParams,
    bounds: tuple[float, float],
    *,
    window: int = DEFAULT_WINDOW,
) -> ScanResult:
    low, high = bounds
    if low <= 0 or high <= low:
        msg = f"Cf bounds must satisfy 0 < low < high, got {bounds}"
        raise ValidationError(msg)
    if not v > 0:
        msg = "Lateral identification speed must be positive"
        raise ValidationError(msg)
    if min(rear_stiffness(low, k_su, v, chassis), rear_stiffness(high, k_su, v, chassis)) <= 0:
        msg = f"Understeer gradient {k_su:.5g} gives Cr <= 0 inside the Cf bounds"
        raise InfeasibleBoundsError(msg)
    cost = lateral_cost(experiments, k_su, v, chassis, window=window)
    return bounded_search(cost, low, high)


def identify_cf(
    experiments: Sequence[StepExperiment],
    k_su: float,
    v: float,
    chassis: ChassisParams,
    bounds: tuple[float, float],
    *,
    window: int = DEFAULT_WINDOW,
) -> tuple[float, float]:
    """``(Cf, Cr)`` minimising the lateral-acceleration mismatch under the understeer constraint."""

    scan = identify_cf_scan(experiments, k_su, v, chassis, bounds, window=window)
    cf = scan.argmin
    cr = float(rear_stiffness(cf, k_su, v, chassis))
    LOGGER.info("Cf identified", extra={"cf": cf, "cr": cr, "cost": scan.cost})
    return cf, cr


def rmse_percent(measured: Sequence[float] | np.ndarray, predicted: Sequence[float] | np.ndarray) -> float:
    """RMSE normalised by the range of the measured signal, in percent."""

    measured = np.asarray(measured, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if measured.shape != predicted.shape or measured.size == 0:
        msg = "Measured and predicted series must have the same non-zero length"
        raise ValidationError(msg)
    span = float(np.max(measured) - np.min(measured))
    if span == 0.0:
        msg = "Measured series is flat; percentage RMSE is undefined"
        raise DomainError(msg)
    return 100.0 * math.sqrt(float(np.mean((measured - predicted) ** 2))) / span


def synthesize_experiments(
    kind: str,
    levels: Sequence[float],
    duration: float,
    params: VehicleParams,
    *,
    v: float = 1.5,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
    dt: float = SAMPLE_TIME,
) -> list[StepExperiment]:
    """Step tests produced by the ground-truth model, optionally with Gaussian output noise."""

    if duration <= 0:
        msg = "Experiment duration must be positive"
        raise ValidationError(msg)
    if noise_std > 0 and rng is None:
        msg = "A seeded generator is required for noisy experiments"
        raise ValidationError(msg)
    samples = int(round(duration / dt))
    t = np.round(np.arange(samples) * dt, 10)
    if kind == "longitudinal":
        outputs = simulate_motor_steps(params.motor, np.asarray(levels, dtype=float), samples, dt)
    elif kind == "lateral":
        outputs = simulate_lateral_steps(params.chassis, np.asarray(levels, dtype=float), v, samples, dt)
    else:
        msg = f"Unknown experiment kind {kind!r}"
        raise ValidationError(msg)
    experiments = []
    for j, level in enumerate(levels):
        output = outputs[:, j].copy()
        if noise_std > 0:
            assert rng is not None
            output += rng.normal(0.0, noise_std, size=samples)
        experiments.append(StepExperiment(kind=kind, input_level=float(level), t=t, output=output))
    return experiments


def simulated_responses(
    experiments: Sequence[StepExperiment],
    params: VehicleParams,
    *,
    v: float = 1.5,
) -> list[np.ndarray]:
    """Responses of ``params`` to the inputs of ``experiments`` (for RMSE reporting)."""

    if not experiments:
        return []
    samples = max(len(exp) for exp in experiments)
    levels = np.array([exp.input_level for exp in experiments])
    dt = experiments[0].dt
    if experiments[0].kind == "longitudinal":
        initial = np.array([exp.initial for exp in experiments])
        outputs = simulate_motor_steps(params.motor, levels, samples, dt, initial)
    else:
        outputs = simulate_lateral_steps(params.chassis, levels, v, samples, dt)
    return [outputs[: len(exp), j] for j, exp in enumerate(experiments)]


def replay_inputs(
    params: VehicleParams,
    initial: BicycleState,
    va: np.ndarray,
    delta: np.ndarray,
    dt: float = SAMPLE_TIME,
) -> pd.DataFrame:
    """Open-loop replay of recorded ``(Va, delta)`` through the bicycle model.

    Returns speed, body accelerations and yaw rate per tick, the signals used to
    validate an identified model against a recorded drive.
    """

    if len(va) != len(delta):
        msg = "Recorded voltage and steering series differ in length"
        raise ValidationError(msg)
    cp, mp = params.chassis, params.motor
    x = initial.as_array()
    rows = []

    def field(state: np.ndarray, u: ControlInput) -> np.ndarray:
        return bicycle_field(state, u, cp, mp, freeze_lateral=True)

    for va_k, delta_k in zip(va, delta):
        u = ControlInput(va=float(va_k), delta=float(delta_k))
        ax, ay = body_accelerations(x, field(x, u))
        rows.append({"v": float(x[2]), "ax": ax, "ay": ay, "r": float(x[5])})
        x = integrate_step(x, u, dt, field)
    return pd.DataFrame(rows, columns=["v", "ax", "ay", "r"])


__all__ = [
    "DEFAULT_WINDOW",
    "EXPERIMENT_KINDS",
    "LateralFit",
    "LongitudinalFit",
    "ScanResult",
    "StepExperiment",
    "SteadyStatePoint",
    "bounded_search",
    "fit_steady_state_line",
    "fit_understeer_gradient",
    "identify_cf",
    "identify_cf_scan",
    "identify_p2",
    "identify_p2_scan",
    "lateral_cost",
    "longitudinal_cost",
    "rear_stiffness",
    "replay_inputs",
    "rmse_percent",
    "simulate_lateral_steps",
    "simulate_motor_steps",
    "simulated_responses",
    "smooth_zero_phase",
    "steady_state_point",
    "synthesize_experiments",
]
