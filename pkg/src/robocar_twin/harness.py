"""End-to-end experiments behind the CLI subcommands.

Each ``run_*`` function takes a :class:`WorkbenchConfig`, derives every random
stream from ``config.seed`` and returns a JSON-ready report. When an
:class:`OutputLayout` is given the traces and the report are written too.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .artifacts import OutputLayout
from .config import WorkbenchConfig
from .controllers import LqScheduler, balance_heading_weight, ff_fb, lq_cm, lq_ed
from .drl import (
    TRACE_COLUMNS,
    EnvConfig,
    MlpPolicy,
    PathTrackingEnv,
    ddpg_train,
    evaluate_policy,
    export_policy,
    load_policy,
    rollout_row,
)
from .errors import DomainError, ValidationError
from .fekf import EkfEstimate, FederatedEstimator, FilterSettings, chi2_band, nees
from .identification import (
    LateralFit,
    LongitudinalFit,
    StepExperiment,
    fit_steady_state_line,
    fit_understeer_gradient,
    identify_cf_scan,
    identify_p2_scan,
    rear_stiffness,
    replay_inputs,
    rmse_percent,
    simulated_responses,
    steady_state_point,
    synthesize_experiments,
)
from .kpis import KpiReport, compute_kpis, relative_change
from .paths import Path, check_gates, generate_path, lookup
from .sensors import SensorSuite, frames_to_frame
from .vehicle_models import ChassisParams, ControlInput, VehicleParams, kinematic_sideslip, wrap_angle

LOGGER = logging.getLogger(__name__)

MODEL_CONTROLLERS = ("lq_ed", "lq_cm", "ff_fb")
REFERENCE_CONTROLLER = "ff_fb"


def _streams(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(count)]


def build_path(config: WorkbenchConfig, kind: str) -> Path:
    return generate_path(kind, config.paths)


@lru_cache(maxsize=16)
def _balanced_weights(cp: ChassisParams, q: tuple[float, ...], r: float, dt: float, speed: float) -> tuple[float, ...]:
    heading = balance_heading_weight(speed, cp, q=q, r=r, dt=dt)
    return (q[0], q[1], heading, q[3])


def lq_weights(config: WorkbenchConfig) -> tuple[float, ...]:
    """State weights used by both LQ variants, heading weight balanced when configured."""

    ctl = config.controllers
    q = tuple(float(value) for value in ctl.q)
    if ctl.balance_speed is None:
        return q
    return _balanced_weights(config.vehicle.chassis, q, float(ctl.r), config.dt, float(ctl.balance_speed))


def _scheduler(config: WorkbenchConfig) -> LqScheduler:
    ctl = config.controllers
    return LqScheduler(config.vehicle.chassis, q=lq_weights(config), r=ctl.r, dt=config.dt)


def _env_config(config: WorkbenchConfig, **overrides: Any) -> EnvConfig:
    return replace(config.drl.env, dt=config.dt, **overrides)


def _model_env(config: WorkbenchConfig, path: Path, env_config: EnvConfig, **kwargs: Any) -> PathTrackingEnv:
    return PathTrackingEnv(
        config.vehicle,
        path,
        config=env_config,
        weights=config.drl.reward,
        pi_gains=config.controllers.pi,
        demonstrator=_scheduler(config),
        **kwargs,
    )


def steering_command(controller: str, env: PathTrackingEnv, config: WorkbenchConfig) -> float:
    """Steering angle requested by a model-based controller for the current tick."""

    state = env.state
    xe = env.errors
    cp = config.vehicle.chassis
    kappa = lookup(env.path, env.s).kappa
    if controller == "ff_fb":
        return ff_fb(xe, kappa, state.v, config.controllers.ff_fb, cp)
    gain = env.demonstrator.gain_for(state.v)
    if controller == "lq_ed":
        return lq_ed(xe, gain, cp.delta_max)
    if controller == "lq_cm":
        return lq_cm(xe, gain, kappa, state.v, cp)
    msg = f"Unknown model-based controller {controller!r}"
    raise ValidationError(msg)


# Identification -----------------------------------------------------------


def _parameter_table(params: VehicleParams) -> dict[str, float]:
    return {
        "P1": params.motor.p1,
        "P2": params.motor.p2,
        "P3": params.motor.p3,
        "Cf": params.chassis.cf,
        "Cr": params.chassis.cr,
    }


def _rmse_rows(experiments: Sequence[StepExperiment], params: VehicleParams, v: float, label: str) -> list[dict[str, Any]]:
    predicted = simulated_responses(experiments, params, v=v)
    return [
        {
            "set": label,
            "kind": exp.kind,
            "input": exp.input_level,
            "rmse_percent": rmse_percent(exp.output, prediction),
        }
        for exp, prediction in zip(experiments, predicted)
    ]


def _step_frame(experiments: Sequence[StepExperiment], params: VehicleParams, v: float, label: str) -> pd.DataFrame:
    predicted = simulated_responses(experiments, params, v=v)
    frames = [
        pd.DataFrame(
            {
                "set": label,
                "input": exp.input_level,
                "t": exp.t,
                "measured": exp.output,
                "simulated": prediction,
            }
        )
        for exp, prediction in zip(experiments, predicted)
    ]
    return pd.concat(frames, ignore_index=True)


def track_validation(config: WorkbenchConfig, identified: VehicleParams) -> tuple[dict[str, float | None], pd.DataFrame]:
    """Replay the inputs of a closed-loop oval drive of the truth through ``identified``."""

    path = build_path(config, "oval")
    env = _model_env(config, path, _env_config(config, v_ref=config.fekf.v_ref, initial_dy=0.0))
    env.reset(0.0, initial_speed=0.1)
    initial = env.state
    rows = []
    while not env.done:
        outcome = env.step_steering(steering_command("lq_cm", env, config))
        truth = env.last_truth
        assert truth is not None
        rows.append(
            {
                "va": outcome.va,
                "delta": outcome.delta,
                "v": truth.state.v,
                "ax": truth.ax,
                "ay": truth.ay,
                "r": truth.state.r,
            }
        )
    recorded = pd.DataFrame(rows)
    replayed = replay_inputs(identified, initial, recorded["va"].to_numpy(), recorded["delta"].to_numpy(), config.dt)
    metrics: dict[str, float | None] = {}
    for signal in ("v", "ax", "r", "ay"):
        try:
            metrics[signal] = rmse_percent(recorded[signal].to_numpy(), replayed[signal].to_numpy())
        except DomainError:
            LOGGER.warning("Flat signal in track validation", extra={"signal": signal})
            metrics[signal] = None
    frame = recorded.join(replayed.add_suffix("_model"))
    frame.insert(0, "t", np.round(np.arange(len(frame)) * config.dt, 10))
    return metrics, frame


def run_identification(config: WorkbenchConfig, layout: OutputLayout | None = None) -> dict[str, Any]:
    """Two-stage identification of the twin from synthetic step experiments."""

    ident = config.identification
    truth = config.vehicle
    v = ident.lateral_speed
    rng_long, rng_lat, rng_val = _streams(config.seed, 3)
    LOGGER.info("Running identification", extra={"experiment": "identification", "seed": config.seed})

    longitudinal = synthesize_experiments(
        "longitudinal",
        ident.voltages,
        ident.longitudinal_duration,
        truth,
        noise_std=ident.omega_noise_std,
        rng=rng_long,
        dt=config.dt,
    )
    long_points = [steady_state_point(exp, ident.steady_tail_fraction) for exp in longitudinal]
    m_l, b_l = fit_steady_state_line(long_points)
    p2_scan = identify_p2_scan(longitudinal, m_l, b_l, ident.p2_bounds, window=ident.smoothing_window)
    motor_fit = LongitudinalFit.from_line(m_l, b_l, p2_scan.argmin)

    lateral = synthesize_experiments(
        "lateral",
        ident.steering,
        ident.lateral_duration,
        truth,
        v=v,
        noise_std=ident.accel_noise_std,
        rng=rng_lat,
        dt=config.dt,
    )
    lat_points = [steady_state_point(exp, ident.steady_tail_fraction) for exp in lateral]
    k_su = fit_understeer_gradient(lat_points)
    cf_scan = identify_cf_scan(lateral, k_su, v, truth.chassis, ident.cf_bounds, window=ident.smoothing_window)
    lateral_fit = LateralFit(k_su=k_su, cf=cf_scan.argmin, cr=float(rear_stiffness(cf_scan.argmin, k_su, v, truth.chassis)))

    identified = VehicleParams(motor=motor_fit.to_motor(truth.motor), chassis=lateral_fit.to_chassis(truth.chassis))

    val_long = synthesize_experiments(
        "longitudinal",
        ident.validation_voltages,
        ident.longitudinal_duration,
        truth,
        noise_std=ident.omega_noise_std,
        rng=rng_val,
        dt=config.dt,
    )
    val_lat = synthesize_experiments(
        "lateral",
        ident.validation_steering,
        ident.lateral_duration,
        truth,
        v=v,
        noise_std=ident.accel_noise_std,
        rng=rng_val,
        dt=config.dt,
    )
    rmse_identification = _rmse_rows(longitudinal, identified, v, "identification") + _rmse_rows(
        lateral, identified, v, "identification"
    )
    rmse_validation = _rmse_rows(val_long, identified, v, "validation") + _rmse_rows(val_lat, identified, v, "validation")

    truth_table = _parameter_table(truth)
    identified_table = _parameter_table(identified)
    line_error = max(abs(m_l * p.input_level - b_l - p.steady_output) for p in long_points)
    report: dict[str, Any] = {
        "experiment": "identification",
        "seed": config.seed,
        "truth": truth_table,
        "identified": {**identified_table, "m_l": m_l, "b_l": b_l, "k_su": k_su},
        "relative_error_percent": {
            name: relative_change(identified_table[name], truth_table[name]) for name in truth_table
        },
        "steady_state_line": {"m_l": m_l, "b_l": b_l, "max_error": line_error},
        "search": {
            "P2": {"cost": p2_scan.cost, "evaluations": p2_scan.evaluations},
            "Cf": {"cost": cf_scan.cost, "evaluations": cf_scan.evaluations},
        },
        "rmse_percent": {"identification": rmse_identification, "validation": rmse_validation},
        "track_validation": None,
    }
    track_frame = None
    if ident.track_validation:
        report["track_validation"], track_frame = track_validation(config, identified)

    LOGGER.info(
        "Identification finished",
        extra={"experiment": "identification", "p2": motor_fit.p2, "cf": lateral_fit.cf, "cr": lateral_fit.cr},
    )
    if layout is not None:
        steady = pd.DataFrame(
            [{"kind": "longitudinal", "input": p.input_level, "steady_output": p.steady_output} for p in long_points]
            + [{"kind": "lateral", "input": p.input_level, "steady_output": p.steady_output} for p in lat_points]
        )
        layout.write_trace("steady_state_points", steady, "steady-state wheel speed vs Va and lateral acceleration vs delta")
        layout.write_trace(
            "longitudinal_steps",
            pd.concat([_step_frame(longitudinal, identified, v, "identification"), _step_frame(val_long, identified, v, "validation")]),
            "measured vs identified wheel-speed step responses: set,input,t,measured,simulated",
        )
        layout.write_trace(
            "lateral_steps",
            pd.concat([_step_frame(lateral, identified, v, "identification"), _step_frame(val_lat, identified, v, "validation")]),
            "measured vs identified lateral-acceleration step responses: set,input,t,measured,simulated",
        )
        layout.write_trace("p2_cost", p2_scan.to_frame("P2"), "transient cost over the P2 search grid")
        layout.write_trace("cf_cost", cf_scan.to_frame("Cf"), "transient cost over the Cf search grid")
        if track_frame is not None:
            layout.write_trace("track_validation", track_frame, "recorded oval drive vs open-loop replay of the identified model")
        layout.write_report(report)
    return report


# Estimator validation -------------------------------------------------------


def _max_jump(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 2:
        return 0.0
    return float(np.max(np.hypot(np.diff(x), np.diff(y))))


def run_fekf_validation(config: WorkbenchConfig, layout: OutputLayout | None = None) -> dict[str, Any]:
    """Drive the oval with noisy sensors and compare local, fused and raw estimates with the truth."""

    fekf_cfg = config.fekf
    cp = config.vehicle.chassis
    twin_rng, sensor_rng = _streams(config.seed, 2)
    path = build_path(config, fekf_cfg.path)
    ticks = int(round(fekf_cfg.duration / config.dt))
    laps = max(1, math.ceil(fekf_cfg.duration * fekf_cfg.v_ref / path.length) + 1) if path.closed else 1
    env_config = _env_config(
        config,
        v_ref=fekf_cfg.v_ref,
        corner_speed_factor=fekf_cfg.corner_speed_factor,
        laps=laps,
        initial_dy=0.0,
    )
    env = _model_env(config, path, env_config, disturbance=config.disturbance, rng=twin_rng)
    env.reset(0.0)
    suite = SensorSuite(config.sensors, sensor_rng, dt=config.dt)
    settings = FilterSettings(params=config.vehicle, sensors=config.sensors, noise=config.noise, dt=config.dt)
    start = env.state
    heading = start.psi + start.beta
    estimator = FederatedEstimator(
        settings,
        EkfEstimate(mean=start.as_array(), cov=fekf_cfg.initial_spread * np.eye(6)),
        EkfEstimate(
            mean=np.array([start.x, start.y, start.v * math.cos(heading), start.v * math.sin(heading)]),
            cov=fekf_cfg.initial_spread * np.eye(4),
        ),
    )
    LOGGER.info(
        "Running estimator validation",
        extra={"experiment": "fekf", "seed": config.seed, "path": path.name, "ticks": ticks},
    )
    low, high = chi2_band(6)
    previous_u = ControlInput(va=0.0, delta=env.delta)
    rows = []
    frames = []
    for _ in range(ticks):
        if env.done:
            LOGGER.warning("Estimator run ended early", extra={"path": path.name, "t": env.t})
            break
        outcome = env.step_steering(steering_command("lq_cm", env, config))
        truth = env.last_truth
        assert truth is not None
        frame = suite.emit(truth)
        frames.append(frame)
        snapshot = estimator.step(frame, previous_u)
        previous_u = ControlInput(va=outcome.va, delta=outcome.delta)
        state = truth.state
        error = snapshot.bm.mean - state.as_array()
        error[3] = wrap_angle(float(error[3]))
        lidar = frame.lidar
        rows.append(
            {
                "t": frame.t,
                "X": state.x,
                "Y": state.y,
                "v": state.v,
                "psi": state.psi,
                "beta": state.beta,
                "r": state.r,
                "bm_X": snapshot.bm.mean[0],
                "bm_Y": snapshot.bm.mean[1],
                "bm_v": snapshot.bm.mean[2],
                "bm_psi": snapshot.bm.mean[3],
                "bm_beta": snapshot.bm.mean[4],
                "bm_r": snapshot.bm.mean[5],
                "pm_X": snapshot.pm.mean[0],
                "pm_Y": snapshot.pm.mean[1],
                "fused_X": snapshot.fused.position[0],
                "fused_Y": snapshot.fused.position[1],
                "fused_source": snapshot.fused.source,
                "lidar_X": lidar.x if lidar else np.nan,
                "lidar_Y": lidar.y if lidar else np.nan,
                "lidar_spike": bool(lidar.spike) if lidar else False,
                "beta_kinematic": kinematic_sideslip(outcome.delta, cp),
                "nees_bm": nees(error, snapshot.bm.cov),
            }
        )
    trace = pd.DataFrame(rows)
    lidar_rows = trace.dropna(subset=["lidar_X"])
    lidar_error = np.hypot(lidar_rows["lidar_X"] - lidar_rows["X"], lidar_rows["lidar_Y"] - lidar_rows["Y"])
    fused_error = np.hypot(trace["fused_X"] - trace["X"], trace["fused_Y"] - trace["Y"])
    fused_at_lidar = fused_error[lidar_rows.index]
    in_band = (trace["nees_bm"] >= low) & (trace["nees_bm"] <= high)
    report: dict[str, Any] = {
        "experiment": "fekf",
        "seed": config.seed,
        "path": path.name,
        "duration": len(trace) * config.dt,
        "psi_source": config.noise.psi_source,
        "corner_speed_factor": fekf_cfg.corner_speed_factor,
        "position_rmse": {
            "lidar": float(np.sqrt(np.mean(lidar_error**2))),
            "fused": float(np.sqrt(np.mean(fused_error**2))),
            "fused_at_lidar_ticks": float(np.sqrt(np.mean(fused_at_lidar**2))),
            "bm": float(np.sqrt(np.mean((trace["bm_X"] - trace["X"]) ** 2 + (trace["bm_Y"] - trace["Y"]) ** 2))),
            "pm": float(np.sqrt(np.mean((trace["pm_X"] - trace["X"]) ** 2 + (trace["pm_Y"] - trace["Y"]) ** 2))),
        },
        "max_jump": {
            "lidar": _max_jump(lidar_rows["lidar_X"].to_numpy(), lidar_rows["lidar_Y"].to_numpy()),
            "fused": _max_jump(trace["fused_X"].to_numpy(), trace["fused_Y"].to_numpy()),
        },
        "sideslip_rmse": {
            "ekf_bm": float(np.sqrt(np.mean((trace["bm_beta"] - trace["beta"]) ** 2))),
            "kinematic": float(np.sqrt(np.mean((trace["beta_kinematic"] - trace["beta"]) ** 2))),
        },
        "nees": {
            "dof": 6,
            "band": [low, high],
            "fraction_in_band": float(np.mean(in_band)),
            "mean": float(trace["nees_bm"].mean()),
        },
        "lidar_samples": int(len(lidar_rows)),
        "spikes": int(trace["lidar_spike"].sum()),
        "degraded_ticks": int((trace["fused_source"] != "fused").sum()),
    }
    LOGGER.info(
        "Estimator validation finished",
        extra={
            "experiment": "fekf",
            "fused_rmse": report["position_rmse"]["fused"],
            "lidar_rmse": report["position_rmse"]["lidar"],
            "nees_in_band": report["nees"]["fraction_in_band"],
        },
    )
    if layout is not None:
        states = trace[["t", "X", "Y", "v", "psi", "beta", "r", "bm_X", "bm_Y", "bm_v", "bm_psi", "bm_beta", "bm_r", "beta_kinematic", "nees_bm"]]
        layout.write_trace("fekf_states", states, "truth vs bicycle-filter estimates and kinematic sideslip")
        fused = trace[["t", "X", "Y", "lidar_X", "lidar_Y", "lidar_spike", "pm_X", "pm_Y", "fused_X", "fused_Y", "fused_source"]]
        layout.write_trace("fekf_fused_path", fused, "truth, raw lidar, point-filter and fused positions")
        layout.write_trace("sensor_frames", frames_to_frame(frames), "emulated sensor frames; lidar cells empty between lidar ticks")
        layout.write_report(report)
    return report


# Tracking comparison --------------------------------------------------------


@dataclass(slots=True)
class TrackingRun:
    controller: str
    path: str
    kpis: KpiReport
    terminated: bool
    trace: pd.DataFrame = field(default_factory=pd.DataFrame)


def run_controller(
    config: WorkbenchConfig,
    path: Path,
    controller: str,
    *,
    policy: MlpPolicy | None = None,
    initial_dy: float | None = None,
) -> TrackingRun:
    """One closed-loop pass of ``controller`` along ``path`` at the tracking speed."""

    offset = config.tracking.initial_dy if initial_dy is None else initial_dy
    env = _model_env(config, path, _env_config(config, v_ref=config.tracking.v_ref, initial_dy=abs(offset)))
    if controller == "drl":
        if policy is None:
            msg = "The DRL controller needs a policy"
            raise ValidationError(msg)
        evaluation = evaluate_policy(policy, env, initial_dy=offset, controller=controller)
        kpis, trace, terminated = evaluation.kpis, evaluation.trace, evaluation.terminated
    else:
        if controller not in MODEL_CONTROLLERS:
            msg = f"Unknown controller {controller!r}"
            raise ValidationError(msg)
        env.reset(offset)
        rows = []
        terminated = False
        while not env.done:
            outcome = env.step_steering(steering_command(controller, env, config))
            rows.append(rollout_row(env, outcome))
            terminated = outcome.breached
        trace = pd.DataFrame(rows, columns=list(TRACE_COLUMNS))
        kpis = compute_kpis(trace["dy"], trace["delta"], config.dt, controller=controller, path=path.name)
    if path.gates is not None:
        report = check_gates(path, trace["X"], trace["Y"], config.vehicle.chassis.width)
        kpis = replace(kpis, gates=dict(report.margins))
    LOGGER.info(
        "Tracking run finished",
        extra={"controller": controller, "path": path.name, "rmse": kpis.rmse, "terminated": terminated},
    )
    return TrackingRun(controller=controller, path=path.name, kpis=kpis, terminated=terminated, trace=trace)


def _resolve_policy(config: WorkbenchConfig, policy: MlpPolicy | None) -> MlpPolicy | None:
    if policy is not None:
        return policy
    policy_file = config.tracking.policy_file
    if policy_file is None or not policy_file.exists():
        LOGGER.warning(
            "No policy file; skipping the DRL controller",
            extra={"policy_file": str(policy_file) if policy_file else None},
        )
        return None
    return load_policy(policy_file)


def kpi_deltas(runs: dict[str, TrackingRun], reference: str = REFERENCE_CONTROLLER) -> dict[str, dict[str, float]]:
    """Percentage change of RMSE, ME and IACA of every controller relative to ``reference``."""

    base = runs.get(reference)
    if base is None:
        return {}
    return {
        name: {
            "RMSE": relative_change(run.kpis.rmse, base.kpis.rmse),
            "ME": relative_change(run.kpis.me, base.kpis.me),
            "IACA": relative_change(run.kpis.iaca, base.kpis.iaca),
        }
        for name, run in runs.items()
        if name != reference
    }


def run_tracking_comparison(
    config: WorkbenchConfig,
    layout: OutputLayout | None = None,
    *,
    policy: MlpPolicy | None = None,
) -> dict[str, Any]:
    """Every configured controller on every configured validation path."""

    tracking = config.tracking
    if "drl" in tracking.controllers:
        policy = _resolve_policy(config, policy)
    LOGGER.info(
        "Running tracking comparison",
        extra={"experiment": "tracking", "seed": config.seed, "paths": list(tracking.paths)},
    )
    per_path: dict[str, Any] = {}
    for kind in tracking.paths:
        path = build_path(config, kind)
        runs: dict[str, TrackingRun] = {}
        skipped: dict[str, str] = {}
        for controller in tracking.controllers:
            if controller == "drl" and policy is None:
                skipped[controller] = "no policy file"
                continue
            run = run_controller(config, path, controller, policy=policy)
            runs[controller] = run
            if layout is not None:
                layout.write_trace(
                    f"{kind}_{controller}",
                    run.trace,
                    f"{controller} on {kind}: {','.join(TRACE_COLUMNS)}",
                )
        per_path[kind] = {
            "controllers": {
                name: {**run.kpis.as_dict(), "terminated": run.terminated} for name, run in runs.items()
            },
            "skipped": skipped,
            "deltas_vs_ff_fb": kpi_deltas(runs),
        }
    report = {"experiment": "tracking", "seed": config.seed, "v_ref": tracking.v_ref, "paths": per_path}
    if layout is not None:
        layout.write_report(report)
    return report


# Training ---------------------------------------------------------------------


def run_training(
    config: WorkbenchConfig,
    layout: OutputLayout | None = None,
    *,
    episodes: int | None = None,
    use_demonstrator: bool | None = None,
) -> dict[str, Any]:
    """Train the steering-rate agent on the training path and evaluate it on the evaluation paths."""

    drl = config.drl
    ddpg = replace(drl.ddpg, episodes=episodes) if episodes is not None else drl.ddpg
    demo = drl.use_demonstrator if use_demonstrator is None else use_demonstrator
    path = build_path(config, drl.training_path)
    env = PathTrackingEnv(
        config.vehicle,
        path,
        config=_env_config(config),
        weights=drl.reward,
        use_demonstrator=demo,
        pi_gains=config.controllers.pi,
        demonstrator=_scheduler(config),
    )
    LOGGER.info(
        "Running DRL training",
        extra={"experiment": "train", "seed": config.seed, "episodes": ddpg.episodes, "use_demonstrator": demo},
    )
    result = ddpg_train(env, ddpg, config.seed)
    evaluations: dict[str, Any] = {}
    traces: dict[str, pd.DataFrame] = {}
    for kind in drl.evaluation_paths:
        eval_path = build_path(config, kind)
        eval_env = _model_env(config, eval_path, _env_config(config, initial_dy=0.0))
        evaluation = evaluate_policy(result.policy, eval_env)
        evaluations[kind] = {**evaluation.kpis.as_dict(), "terminated": evaluation.terminated}
        traces[kind] = evaluation.trace
    report: dict[str, Any] = {
        "experiment": "train",
        "seed": config.seed,
        "training_path": path.name,
        "episodes": int(len(result.curve)),
        "use_demonstrator": demo,
        "diverged": result.diverged,
        "random_policy_baseline": result.baseline,
        "updates": result.updates,
        "final_mean_reward": float(result.curve["mean_reward"].iloc[-1]),
        "evaluation": evaluations,
    }
    if result.diverged:
        LOGGER.error("Training failed to beat the random-policy baseline", extra={"experiment": "train", "seed": config.seed})
    if layout is not None:
        policy_file = export_policy(result.policy, layout.directory / "policy.json")
        report["policy_file"] = policy_file.name
        layout.write_trace("learning_curve", result.curve, "per-episode discounted return and running mean")
        for kind, trace in traces.items():
            layout.write_trace(f"evaluation_{kind}", trace, f"policy evaluation on {kind}: {','.join(TRACE_COLUMNS)}")
        layout.write_report(report)
    return report


__all__ = [
    "KpiReport",
    "MODEL_CONTROLLERS",
    "TrackingRun",
    "build_path",
    "compute_kpis",
    "kpi_deltas",
    "lq_weights",
    "run_controller",
    "run_fekf_validation",
    "run_identification",
    "run_tracking_comparison",
    "run_training",
    "steering_command",
    "track_validation",
]
