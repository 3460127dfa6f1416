from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from robocar_twin.cli import main

VEHICLE_YAML = """\
mass: 2.75
yaw_inertia: 0.033
lf: 0.128
lr: 0.128
cf: 25.0
cr: 25.0
p1: 62.0
p2: 12.5
p3: 6.25
gear_ratio: 0.1
wheel_radius: 0.033
"""

WORKBENCH_YAML = """\
seed: 7
vehicle_file: "vehicle.yml"
paths:
  straight_length: 0.5
drl:
  training_path: "straight"
  evaluation_paths: ["straight"]
  ddpg:
    episodes: 2
    batch_size: 8
    buffer_size: 1000
    actor_hidden: [16, 16]
    critic_state_hidden: [16, 16]
    critic_action_hidden: [8, 16]
tracking:
  paths: ["straight"]
  controllers: ["lq_ed", "drl"]
  policy_file: "missing-policy.json"
"""


def write_config(tmp_path: Path) -> Path:
    (tmp_path / "vehicle.yml").write_text(VEHICLE_YAML, encoding="utf-8")
    target = tmp_path / "workbench.yml"
    target.write_text(WORKBENCH_YAML, encoding="utf-8")
    return target


def test_kpi_on_constant_trace(tmp_path, capsys) -> None:
    t = np.arange(101) * 0.01
    trace = tmp_path / "run.csv"
    pd.DataFrame({"t": t, "dy": np.full(101, 0.02), "delta": np.full(101, -0.1)}).to_csv(trace, index=False)
    assert main(["kpi", "--trace", str(trace)]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["ME"] == pytest.approx(0.02)
    assert result["RMSE"] == pytest.approx(0.02)
    assert result["IACA"] == pytest.approx(0.1)
    assert result["T_f"] == pytest.approx(1.0)


def test_kpi_rejects_bad_traces(tmp_path) -> None:
    trace = tmp_path / "uneven.csv"
    pd.DataFrame({"t": [0.0, 0.01, 0.05], "dy": [0.0, 0.0, 0.0], "delta": [0.0, 0.0, 0.0]}).to_csv(trace, index=False)
    assert main(["kpi", "--trace", str(trace)]) == 1
    assert main(["kpi", "--trace", str(tmp_path / "missing.csv")]) == 1


def test_usage_errors_exit_with_one(tmp_path) -> None:
    assert main([]) == 1
    assert main(["identify", "--bogus"]) == 1
    assert main(["paths", "export", "--kind", "spiral"]) == 1
    assert main(["fekf", "--config", str(tmp_path / "nope.yml")]) == 1


def test_track_without_policy_marks_drl_skipped(tmp_path) -> None:
    config = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["track", "--config", str(config), "--out", str(out)]) == 0
    report = json.loads((out / "tracking" / "seed-7" / "report.json").read_text(encoding="utf-8"))
    assert report["paths"]["straight"]["skipped"] == {"drl": "no policy file"}
    assert "lq_ed" in report["paths"]["straight"]["controllers"]


def test_paths_export_writes_table_and_gates(tmp_path) -> None:
    config = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["paths", "export", "--kind", "c_shape", "--config", str(config), "--out", str(out)]) == 0
    table = pd.read_csv(out / "paths" / "c_shape" / "c_shape.csv", comment="#")
    assert list(table.columns) == ["s", "X", "Y", "psi", "kappa"]
    gates = json.loads((out / "paths" / "c_shape" / "gates.json").read_text(encoding="utf-8"))
    assert len(gates["gates"]) > 0
    assert main(["paths", "export", "--kind", "straight", "--config", str(config), "--out", str(out)]) == 0
    assert not (out / "paths" / "straight" / "gates.json").exists()


def test_train_twice_gives_identical_files(tmp_path) -> None:
    config = write_config(tmp_path)
    for run in ("a", "b"):
        assert main(["train", "--config", str(config), "--seed", "3", "--out", str(tmp_path / run)]) == 0
    first = tmp_path / "a" / "train" / "seed-3"
    second = tmp_path / "b" / "train" / "seed-3"
    for name in ("traces/learning_curve.csv", "policy.json", "report.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_trained_policy_drives_the_tracking_comparison(tmp_path) -> None:
    config = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["train", "--config", str(config), "--out", str(out), "--no-demonstrator"]) == 0
    policy = out / "train" / "seed-7" / "policy.json"
    assert main(["track", "--config", str(config), "--out", str(out), "--policy", str(policy)]) == 0
    report = json.loads((out / "tracking" / "seed-7" / "report.json").read_text(encoding="utf-8"))
    assert report["paths"]["straight"]["skipped"] == {}
    assert "drl" in report["paths"]["straight"]["controllers"]


SHORT_EXPERIMENTS_YAML = """\
identification:
  voltages: [1.0, 2.0]
  steering_deg: [5.0, 10.0]
  validation_voltages: [1.5]
  validation_steering_deg: [7.5]
  longitudinal_duration: 1.0
  lateral_duration: 1.0
  steady_tail_fraction: 0.5
  track_validation: false
fekf:
  duration: 2.0
"""


def file_bytes(root: Path) -> dict[str, bytes]:
    return {str(item.relative_to(root)): item.read_bytes() for item in sorted(root.rglob("*")) if item.is_file()}


@pytest.mark.parametrize(
    ("argv", "produced"),
    [
        (["identify"], "identification/seed-7"),
        (["fekf"], "fekf/seed-7"),
        (["paths", "export", "--kind", "c_shape"], "paths/c_shape"),
    ],
)
def test_repeated_runs_write_identical_files(tmp_path, argv: list[str], produced: str) -> None:
    config = write_config(tmp_path)
    with config.open("a", encoding="utf-8") as handle:
        handle.write(SHORT_EXPERIMENTS_YAML)
    for run in ("a", "b"):
        assert main([*argv, "--config", str(config), "--out", str(tmp_path / run)]) == 0
    first = file_bytes(tmp_path / "a" / produced)
    assert "report.json" in first or "gates.json" in first
    assert first == file_bytes(tmp_path / "b" / produced)


def test_debug_module_sets_only_the_named_logger(tmp_path) -> None:
    config = write_config(tmp_path)
    target = logging.getLogger("robocar_twin.paths")
    try:
        argv = ["paths", "export", "--kind", "straight", "--config", str(config), "--out", str(tmp_path / "out")]
        assert main([*argv, "--debug-module", "robocar_twin.paths"]) == 0
        assert target.level == logging.DEBUG
        assert logging.getLogger("robocar_twin.drl").level == logging.NOTSET
    finally:
        target.setLevel(logging.NOTSET)
