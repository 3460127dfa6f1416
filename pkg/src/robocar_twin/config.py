"""Configuration for the workbench experiments.

A typed wrapper around ``config/workbench.yml`` and the flat vehicle parameter
file it references. Every section is a dataclass that validates itself; the
YAML layer only maps keys onto those dataclasses, so unknown keys are rejected
early instead of being silently ignored.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .controllers import DEFAULT_Q, DEFAULT_R, FfFbGains, PiGains
from .drl import DdpgConfig, EnvConfig, RewardWeights
from .errors import ValidationError
from .fekf import NoiseConfig
from .paths import PATH_KINDS, PathGeometry
from .sensors import SensorConfig, parse_variance_maps
from .vehicle_models import SAMPLE_TIME, TwinDisturbance, VehicleParams

CONTROLLERS = ("lq_ed", "lq_cm", "ff_fb", "drl")


def _parse_bool(value: object) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return value != 0
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in {"1", "true", "t", "yes", "y", "on"}:
            return True
        if lowered in {"0", "false", "f", "no", "n", "off", ""}:
            return False
    msg = f"Cannot interpret {value!r} as a boolean"
    raise ValidationError(msg)


def _pair(value: Sequence[float], name: str) -> tuple[float, float]:
    if len(value) != 2:
        msg = f"{name} must be a [low, high] pair"
        raise ValidationError(msg)
    low, high = float(value[0]), float(value[1])
    if not 0 < low < high:
        msg = f"{name} must satisfy 0 < low < high"
        raise ValidationError(msg)
    return low, high


@dataclass(slots=True)
class IdentificationConfig:
    """Step-test design for both identification stages and their validation sets."""

    voltages: tuple[float, ...] = (0.75, 1.25, 1.5, 2.0, 2.5)
    steering_deg: tuple[float, ...] = (4.0, 7.0, 9.0, 11.0, 13.0)
    validation_voltages: tuple[float, ...] = (1.1, 1.35, 1.85, 2.25)
    validation_steering_deg: tuple[float, ...] = (5.5, 8.5, 10.5, 12.5)
    longitudinal_duration: float = 15.0
    lateral_duration: float = 3.0
    steady_tail_fraction: float = 0.8
    lateral_speed: float = 1.5
    omega_noise_std: float = 0.0
    accel_noise_std: float = 0.0
    p2_bounds: tuple[float, float] = (1.0, 50.0)
    cf_bounds: tuple[float, float] = (5.0, 100.0)
    smoothing_window: int = 15
    track_validation: bool = True

    def __post_init__(self) -> None:
        for name in ("voltages", "steering_deg"):
            if len(set(getattr(self, name))) < 2:
                msg = f"identification.{name} needs at least two distinct levels"
                raise ValidationError(msg)
        if min(self.longitudinal_duration, self.lateral_duration, self.lateral_speed) <= 0:
            msg = "Identification durations and speed must be positive"
            raise ValidationError(msg)
        if self.omega_noise_std < 0 or self.accel_noise_std < 0:
            msg = "Identification noise must be non negative"
            raise ValidationError(msg)
        if not 0.0 < self.steady_tail_fraction <= 1.0:
            msg = "identification.steady_tail_fraction must lie in (0, 1]"
            raise ValidationError(msg)
        self.p2_bounds = _pair(self.p2_bounds, "identification.p2_bounds")
        self.cf_bounds = _pair(self.cf_bounds, "identification.cf_bounds")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            msg = "identification.smoothing_window must be a positive odd integer"
            raise ValidationError(msg)

    @property
    def steering(self) -> tuple[float, ...]:
        return tuple(math.radians(value) for value in self.steering_deg)

    @property
    def validation_steering(self) -> tuple[float, ...]:
        return tuple(math.radians(value) for value in self.validation_steering_deg)


@dataclass(slots=True)
class FekfConfig:
    """Oval manoeuvre driven by PI speed and LQ steering while the estimator runs."""

    duration: float = 60.0
    v_ref: float = 0.5
    corner_speed_factor: float = 1.0
    path: str = "oval"
    initial_spread: float = 1e-4

    def __post_init__(self) -> None:
        if self.duration <= 0 or self.v_ref <= 0 or self.initial_spread <= 0:
            msg = "fekf duration, v_ref and initial_spread must be positive"
            raise ValidationError(msg)
        if not 0 < self.corner_speed_factor <= 1.0:
            msg = "fekf.corner_speed_factor must lie in (0, 1]"
            raise ValidationError(msg)
        if self.path not in PATH_KINDS:
            msg = f"fekf.path must be one of {', '.join(PATH_KINDS)}"
            raise ValidationError(msg)


@dataclass(slots=True)
class ControllerConfig:
    """LQ weights and the gains of the other laws.

    With ``balance_speed`` set, ``q[2]`` is replaced by the heading weight that
    removes the steady lateral error of ``lq_ed`` at that speed.
    """

    q: tuple[float, ...] = DEFAULT_Q
    r: float = DEFAULT_R
    balance_speed: float | None = None
    ff_fb: FfFbGains = field(default_factory=FfFbGains)
    pi: PiGains = field(default_factory=PiGains)

    def __post_init__(self) -> None:
        if len(self.q) != 4 or any(value < 0 for value in self.q):
            msg = "controllers.q must hold four non negative weights"
            raise ValidationError(msg)
        if not self.r > 0:
            msg = "controllers.r must be positive"
            raise ValidationError(msg)
        if self.balance_speed is not None and not self.balance_speed > 0:
            msg = "controllers.balance_speed must be positive when set"
            raise ValidationError(msg)


@dataclass(slots=True)
class DrlConfig:
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    env: EnvConfig = field(default_factory=EnvConfig)
    use_demonstrator: bool = True
    training_path: str = "s_shape"
    evaluation_paths: tuple[str, ...] = ("s_shape", "o_shape")

    def __post_init__(self) -> None:
        for kind in (self.training_path, *self.evaluation_paths):
            if kind not in PATH_KINDS:
                msg = f"Unknown DRL path {kind!r}; expected one of {', '.join(PATH_KINDS)}"
                raise ValidationError(msg)


@dataclass(slots=True)
class TrackingConfig:
    paths: tuple[str, ...] = ("o_shape", "infinity", "c_shape")
    controllers: tuple[str, ...] = CONTROLLERS
    v_ref: float = 0.5
    initial_dy: float = 0.0
    policy_file: Path | None = None

    def __post_init__(self) -> None:
        unknown = [kind for kind in self.paths if kind not in PATH_KINDS]
        if unknown:
            msg = f"Unknown tracking paths: {', '.join(unknown)}"
            raise ValidationError(msg)
        unknown = [name for name in self.controllers if name not in CONTROLLERS]
        if unknown:
            msg = f"Unknown controllers: {', '.join(unknown)}; expected {', '.join(CONTROLLERS)}"
            raise ValidationError(msg)
        if not self.v_ref > 0:
            msg = "tracking.v_ref must be positive"
            raise ValidationError(msg)
        if self.policy_file is not None:
            self.policy_file = Path(self.policy_file)


@dataclass(slots=True)
class OutputConfig:
    """Where artifacts go; ``out_dir_env`` overrides the file, ``--out`` overrides both."""

    out_dir: Path = Path("out")
    out_dir_env: str | None = "ROBOCAR_TWIN_OUT"

    def __post_init__(self) -> None:
        env_name = self.out_dir_env.strip() if isinstance(self.out_dir_env, str) else None
        if env_name:
            env_value = os.getenv(env_name)
            if env_value:
                self.out_dir = Path(env_value.strip())
        self.out_dir = Path(self.out_dir)
        self.out_dir_env = env_name or None


@dataclass(slots=True)
class WorkbenchConfig:
    """Top level configuration; ``seed`` drives every random stream of a run."""

    vehicle: VehicleParams
    seed: int = 0
    dt: float = SAMPLE_TIME
    vehicle_file: Path | None = None
    sensors: SensorConfig = field(default_factory=SensorConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    disturbance: TwinDisturbance = field(default_factory=TwinDisturbance)
    identification: IdentificationConfig = field(default_factory=IdentificationConfig)
    fekf: FekfConfig = field(default_factory=FekfConfig)
    paths: PathGeometry = field(default_factory=PathGeometry)
    controllers: ControllerConfig = field(default_factory=ControllerConfig)
    drl: DrlConfig = field(default_factory=DrlConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            msg = "seed must be a non negative integer"
            raise ValidationError(msg)
        if not self.dt > 0:
            msg = "Sample time must be positive"
            raise ValidationError(msg)

    def with_overrides(self, *, seed: int | None = None, out_dir: Path | str | None = None) -> "WorkbenchConfig":
        updated = self
        if seed is not None:
            updated = replace(updated, seed=seed)
        if out_dir is not None:
            updated = replace(updated, output=replace(updated.output, out_dir=Path(out_dir), out_dir_env=None))
        return updated


def _freeze(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_freeze(item) for item in value)
    return value


def _build(cls: type, raw: object, section: str, **extra: Any) -> Any:
    """Instantiate the dataclass ``cls`` from a YAML mapping, rejecting unknown keys."""

    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        msg = f"Section {section!r} must be a mapping"
        raise ValidationError(msg)
    known = {item.name for item in fields(cls)}
    values = {str(key): _freeze(value) for key, value in raw.items()}
    values.update(extra)
    unknown = sorted(set(values) - known)
    if unknown:
        msg = f"Unknown keys in {section!r}: {', '.join(unknown)}"
        raise ValidationError(msg)
    try:
        return cls(**values)
    except TypeError as exc:
        msg = f"Invalid values in {section!r}: {exc}"
        raise ValidationError(msg) from exc


def _pop_degrees(raw: Mapping[str, object] | None, key_deg: str, key: str) -> dict[str, object]:
    values = dict(raw or {})
    if key_deg in values:
        try:
            values[key] = math.radians(float(values.pop(key_deg)))  # type: ignore[arg-type]
        except (TypeError, ValueError) as exc:
            msg = f"{key_deg} must be a number of degrees"
            raise ValidationError(msg) from exc
    return values


def _parse_sensors(raw: Mapping[str, object] | None) -> SensorConfig:
    values = dict(raw or {})
    kappa = values.pop("kappa", None)
    maps = parse_variance_maps(kappa) if isinstance(kappa, Mapping) else {}
    return _build(SensorConfig, values, "sensors", kappa=maps)


def _parse_controllers(raw: Mapping[str, object] | None) -> ControllerConfig:
    values = dict(raw or {})
    ff_fb = _build(FfFbGains, values.pop("ff_fb", None), "controllers.ff_fb")
    pi = _build(PiGains, values.pop("pi", None), "controllers.pi")
    return _build(ControllerConfig, values, "controllers", ff_fb=ff_fb, pi=pi)


def _parse_drl(raw: Mapping[str, object] | None, dt: float) -> DrlConfig:
    values = dict(raw or {})
    ddpg = _build(DdpgConfig, values.pop("ddpg", None), "drl.ddpg")
    weights = _build(RewardWeights, values.pop("reward", None), "drl.reward")
    env_raw = values.pop("env", None)
    env_values = _pop_degrees(env_raw if isinstance(env_raw, Mapping) else None, "delta_dot_max_deg", "delta_dot_max")
    env_values.setdefault("dt", dt)
    env = _build(EnvConfig, env_values, "drl.env")
    if "use_demonstrator" in values:
        values["use_demonstrator"] = _parse_bool(values["use_demonstrator"])
    return _build(DrlConfig, values, "drl", ddpg=ddpg, reward=weights, env=env)


def _parse_tracking(raw: Mapping[str, object] | None, base: Path) -> TrackingConfig:
    values = dict(raw or {})
    policy = values.get("policy_file")
    if policy:
        values["policy_file"] = _resolve(base, str(policy))
    return _build(TrackingConfig, values, "tracking")


def _resolve(base: Path, reference: str) -> Path:
    path = Path(reference)
    return path if path.is_absolute() else base / path


def _load_yaml(path: Path) -> Mapping[str, object]:
    try:
        import yaml  # type: ignore
    except ModuleNotFoundError as exc:  # pragma: no cover - requires optional dependency
        msg = "PyYAML is required to load configuration files"
        raise RuntimeError(msg) from exc
    if not path.exists():
        msg = f"Configuration file {path} not found"
        raise ValidationError(msg)
    with path.open("r", encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    if not isinstance(data, Mapping):
        msg = f"Configuration file {path} must contain a mapping"
        raise ValidationError(msg)
    return data


def load_vehicle(path: Path | str) -> VehicleParams:
    """Load the flat vehicle parameter file."""

    return VehicleParams.from_mapping(_load_yaml(Path(path)))


def load_config(path: Path | str) -> WorkbenchConfig:
    """Load the workbench configuration and the vehicle file it references."""

    path = Path(path)
    data = _load_yaml(path)
    base = path.parent

    if "seed" not in data:
        msg = "Configuration requires a 'seed'"
        raise ValidationError(msg)
    vehicle_ref = data.get("vehicle_file")
    if not vehicle_ref:
        msg = "Configuration requires a 'vehicle_file'"
        raise ValidationError(msg)
    vehicle_file = _resolve(base, str(vehicle_ref))
    vehicle = load_vehicle(vehicle_file)
    dt = float(data.get("dt", SAMPLE_TIME))  # type: ignore[arg-type]

    known = {
        "seed",
        "dt",
        "vehicle_file",
        "sensors",
        "estimator",
        "disturbance",
        "identification",
        "fekf",
        "paths",
        "controllers",
        "drl",
        "tracking",
        "output",
    }
    unknown = sorted(set(map(str, data)) - known)
    if unknown:
        msg = f"Unknown configuration sections: {', '.join(unknown)}"
        raise ValidationError(msg)

    output_raw = data.get("output")
    output_values = dict(output_raw) if isinstance(output_raw, Mapping) else {}
    if "out_dir" in output_values:
        output_values["out_dir"] = Path(str(output_values["out_dir"]))

    return WorkbenchConfig(
        vehicle=vehicle,
        seed=data["seed"],  # type: ignore[arg-type]
        dt=dt,
        vehicle_file=vehicle_file,
        sensors=_parse_sensors(data.get("sensors")),  # type: ignore[arg-type]
        noise=_build(NoiseConfig, data.get("estimator"), "estimator"),
        disturbance=_build(TwinDisturbance, data.get("disturbance"), "disturbance"),
        identification=_build(IdentificationConfig, data.get("identification"), "identification"),
        fekf=_build(FekfConfig, data.get("fekf"), "fekf"),
        paths=_build(PathGeometry, data.get("paths"), "paths"),
        controllers=_parse_controllers(data.get("controllers")),  # type: ignore[arg-type]
        drl=_parse_drl(data.get("drl"), dt),  # type: ignore[arg-type]
        tracking=_parse_tracking(data.get("tracking"), base),  # type: ignore[arg-type]
        output=_build(OutputConfig, output_values, "output"),
    )


__all__ = [
    "CONTROLLERS",
    "ControllerConfig",
    "DrlConfig",
    "FekfConfig",
    "IdentificationConfig",
    "OutputConfig",
    "TrackingConfig",
    "WorkbenchConfig",
    "load_config",
    "load_vehicle",
]
