from __future__ import annotations

import json
import math
import statistics
from pathlib import Path

import numpy as np
import pytest

from robocar_twin.artifacts import OutputLayout, read_trace, round_significant
from robocar_twin.config import IdentificationConfig, TrackingConfig, WorkbenchConfig, load_config
from robocar_twin.controllers import DEFAULT_Q
from robocar_twin.drl import MlpPolicy, PathTrackingEnv, load_policy
from robocar_twin.errors import ValidationError
from robocar_twin.harness import (
    TrackingRun,
    build_path,
    compute_kpis,
    kpi_deltas,
    lq_weights,
    run_controller,
    run_fekf_validation,
    run_identification,
    run_tracking_comparison,
    run_training,
    steering_command,
)
from robocar_twin.paths import PathGeometry
from robocar_twin.vehicle_models import ChassisParams, MotorParams, VehicleParams

REPO_CONFIG = Path(__file__).resolve().parents[1] / "config" / "workbench.yml"


def vehicle() -> VehicleParams:
    motor = MotorParams(p1=62.0, p2=12.5, p3=6.25, gear_ratio=0.1, wheel_radius=0.033)
    chassis = ChassisParams(mass=2.75, yaw_inertia=0.033, lf=0.128, lr=0.128, cf=25.0, cr=25.0)
    return VehicleParams(motor=motor, chassis=chassis)


def straight_config(**tracking: object) -> WorkbenchConfig:
    values: dict[str, object] = dict(paths=("straight",), controllers=("lq_ed", "lq_cm", "drl"), initial_dy=0.05)
    values.update(tracking)
    return WorkbenchConfig(
        vehicle=vehicle(),
        seed=11,
        paths=PathGeometry(straight_length=1.5),
        tracking=TrackingConfig(**values),  # type: ignore[arg-type]
    )


def run(name: str, dy: tuple[float, float], steering: float) -> TrackingRun:
    kpis = compute_kpis(list(dy), [steering, steering], 0.01)
    return TrackingRun(controller=name, path="o_shape", kpis=kpis, terminated=False)


def test_lq_cm_matches_lq_ed_on_straight_path() -> None:
    config = straight_config()
    path = build_path(config, "straight")
    ed = run_controller(config, path, "lq_ed")
    cm = run_controller(config, path, "lq_cm")
    assert cm.kpis.rmse == ed.kpis.rmse
    assert cm.kpis.me == ed.kpis.me
    assert cm.kpis.iaca == ed.kpis.iaca
    assert cm.trace["delta"].equals(ed.trace["delta"])


def test_model_controllers_respect_steering_limit() -> None:
    config = straight_config()
    path = build_path(config, "straight")
    delta_max = config.vehicle.chassis.delta_max
    for controller in ("lq_ed", "lq_cm", "ff_fb"):
        result = run_controller(config, path, controller, initial_dy=0.1)
        assert np.all(np.isfinite(result.trace["dy"]))
        assert np.all(np.abs(result.trace["delta"]) <= delta_max + 1e-15)
        assert not result.terminated


def test_unknown_controllers_are_rejected() -> None:
    config = straight_config()
    path = build_path(config, "straight")
    with pytest.raises(ValidationError):
        run_controller(config, path, "pid")
    with pytest.raises(ValidationError):
        run_controller(config, path, "drl")
    env = PathTrackingEnv(config.vehicle, path)
    env.reset(0.0)
    with pytest.raises(ValidationError):
        steering_command("drl", env, config)


def test_tracking_without_policy_skips_drl(tmp_path) -> None:
    config = straight_config(policy_file=tmp_path / "missing.json")
    layout = OutputLayout.for_run(tmp_path, "tracking", config.seed)
    report = run_tracking_comparison(config, layout)
    entry = report["paths"]["straight"]
    assert entry["skipped"] == {"drl": "no policy file"}
    assert set(entry["controllers"]) == {"lq_ed", "lq_cm"}
    assert (layout.directory / "report.json").exists()
    assert layout.trace_path("straight_lq_ed").exists()
    assert not layout.trace_path("straight_drl").exists()


def test_reported_kpis_are_reproduced_from_traces(tmp_path) -> None:
    config = straight_config(controllers=("lq_ed",))
    layout = OutputLayout.for_run(tmp_path, "tracking", config.seed)
    run_tracking_comparison(config, layout)
    report = json.loads((layout.directory / "report.json").read_text(encoding="utf-8"))
    reported = report["paths"]["straight"]["controllers"]["lq_ed"]
    trace = read_trace(layout.trace_path("straight_lq_ed"), ("dy", "delta"))
    recomputed = compute_kpis(trace["dy"], trace["delta"], config.dt)
    assert round_significant(recomputed.rmse) == reported["RMSE"]
    assert round_significant(recomputed.me) == reported["ME"]
    assert round_significant(recomputed.iaca) == reported["IACA"]


def test_tracking_outputs_are_byte_identical(tmp_path) -> None:
    config = straight_config(controllers=("lq_ed", "ff_fb"))
    first = OutputLayout.for_run(tmp_path / "a", "tracking", config.seed)
    second = OutputLayout.for_run(tmp_path / "b", "tracking", config.seed)
    run_tracking_comparison(config, first)
    run_tracking_comparison(config, second)
    for name in ("report.json", "traces/straight_lq_ed.csv", "traces/straight_ff_fb.csv"):
        assert (first.directory / name).read_bytes() == (second.directory / name).read_bytes()


def test_kpi_deltas_relative_to_ff_fb() -> None:
    runs = {"ff_fb": run("ff_fb", (0.08, 0.04), 0.1), "lq_ed": run("lq_ed", (0.06, 0.02), 0.1)}
    deltas = kpi_deltas(runs)
    assert set(deltas) == {"lq_ed"}
    assert deltas["lq_ed"]["IACA"] == pytest.approx(0.0)
    assert deltas["lq_ed"]["RMSE"] < 0.0
    assert kpi_deltas({"lq_ed": runs["lq_ed"]}) == {}


@pytest.mark.slow
def test_noise_free_identification_recovers_parameters(tmp_path) -> None:
    config = WorkbenchConfig(vehicle=vehicle(), seed=0)
    layout = OutputLayout.for_run(tmp_path, "identification", config.seed)
    report = run_identification(config, layout)
    for name, error in report["relative_error_percent"].items():
        assert abs(error) < 0.1, name
    assert layout.trace_path("p2_cost").exists()
    assert layout.trace_path("cf_cost").exists()
    assert set(report["track_validation"]) == {"v", "ax", "r", "ay"}


@pytest.mark.slow
def test_estimator_validation_on_oval(tmp_path) -> None:
    config = WorkbenchConfig(vehicle=vehicle(), seed=0)
    report = run_fekf_validation(config, OutputLayout.for_run(tmp_path, "fekf", config.seed))
    assert report["duration"] == pytest.approx(60.0)
    assert report["position_rmse"]["fused"] < report["position_rmse"]["lidar"]
    assert report["max_jump"]["fused"] < 0.2 * report["max_jump"]["lidar"]
    assert report["sideslip_rmse"]["ekf_bm"] < report["sideslip_rmse"]["kinematic"]
    assert math.isfinite(report["nees"]["mean"])


@pytest.mark.slow
def test_estimator_nees_stays_in_band_with_process_disturbance(tmp_path) -> None:
    config = load_config(REPO_CONFIG)
    assert config.disturbance.active
    report = run_fekf_validation(config, OutputLayout.for_run(tmp_path, "fekf", config.seed))
    assert report["nees"]["fraction_in_band"] >= 0.8


def test_repository_weights_balance_the_heading_term() -> None:
    config = load_config(REPO_CONFIG)
    weights = lq_weights(config)
    assert weights[0] == config.controllers.q[0]
    assert weights[2] > config.controllers.q[2]
    assert lq_weights(straight_config()) == DEFAULT_Q


@pytest.mark.slow
def test_noisy_identification_median_error_over_seeds() -> None:
    ident = IdentificationConfig(omega_noise_std=0.5, accel_noise_std=0.05, track_validation=False)
    errors: dict[str, list[float]] = {}
    for seed in range(20):
        report = run_identification(WorkbenchConfig(vehicle=vehicle(), seed=seed, identification=ident))
        for name, error in report["relative_error_percent"].items():
            errors.setdefault(name, []).append(abs(error))
    assert set(errors) == {"P1", "P2", "P3", "Cf", "Cr"}
    for name, values in errors.items():
        assert statistics.median(values) < 5.0, name


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["infinity", "c_shape"])
def test_lq_variants_track_alike_and_pass_the_gates(kind: str) -> None:
    config = load_config(REPO_CONFIG)
    path = build_path(config, kind)
    runs = {name: run_controller(config, path, name) for name in ("lq_ed", "lq_cm", "ff_fb")}
    ed, cm = runs["lq_ed"].kpis, runs["lq_cm"].kpis
    for metric in ("rmse", "me", "iaca"):
        assert getattr(ed, metric) == pytest.approx(getattr(cm, metric), rel=0.2), metric
    assert not runs["lq_ed"].terminated
    assert not runs["lq_cm"].terminated
    if path.gates is not None:
        assert ed.gates_passed
        assert cm.gates_passed


@pytest.mark.slow
def test_ff_fb_trails_lq_cm_on_o_path() -> None:
    config = load_config(REPO_CONFIG)
    path = build_path(config, "o_shape")
    assert run_controller(config, path, "ff_fb").kpis.rmse > run_controller(config, path, "lq_cm").kpis.rmse


def train(config: WorkbenchConfig, directory: Path, *, use_demonstrator: bool) -> tuple[dict[str, object], MlpPolicy]:
    layout = OutputLayout.for_run(directory, "train", config.seed)
    report = run_training(config, layout, use_demonstrator=use_demonstrator)
    return report, load_policy(layout.directory / "policy.json")


@pytest.fixture(scope="module")
def demonstrated(tmp_path_factory) -> tuple[dict[str, object], MlpPolicy]:
    return train(load_config(REPO_CONFIG), tmp_path_factory.mktemp("demonstrated"), use_demonstrator=True)


@pytest.mark.slow
def test_trained_agent_tracks_s_and_o_paths(demonstrated) -> None:
    report, _ = demonstrated
    assert not report["diverged"]
    evaluation = report["evaluation"]
    assert evaluation["s_shape"]["RMSE"] < 0.05
    assert not evaluation["o_shape"]["terminated"]


@pytest.mark.slow
def test_trained_agent_beats_ff_fb_on_infinity(demonstrated) -> None:
    _, policy = demonstrated
    config = load_config(REPO_CONFIG)
    path = build_path(config, "infinity")
    drl = run_controller(config, path, "drl", policy=policy)
    assert not drl.terminated
    assert drl.kpis.rmse < run_controller(config, path, "ff_fb").kpis.rmse


@pytest.mark.slow
def test_demonstrator_term_improves_o_path_tracking(demonstrated, tmp_path) -> None:
    report, _ = demonstrated
    ablated, _ = train(load_config(REPO_CONFIG), tmp_path, use_demonstrator=False)
    assert report["evaluation"]["o_shape"]["RMSE"] < ablated["evaluation"]["o_shape"]["RMSE"]
