from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from robocar_twin.errors import SingularityError, ValidationError
from robocar_twin.paths import (
    GateLayout,
    PathGeometry,
    PathPoint,
    TrackingErrors,
    check_gates,
    generate_path,
    lookup,
    path_from_frame,
    path_to_frame,
    tracking_errors,
    travelled_distance_rate,
)
from robocar_twin.vehicle_models import BicycleState


def test_circle_has_constant_curvature() -> None:
    path = generate_path("o_shape", PathGeometry(o_radius=1.5))
    assert np.allclose(path.kappa, 1.0 / 1.5)
    assert path.closed
    assert path.length == pytest.approx(2.0 * math.pi * 1.5)


def test_straight_path_has_zero_curvature_and_constant_heading() -> None:
    path = generate_path("straight", PathGeometry(straight_length=3.0))
    assert np.all(path.kappa == 0.0)
    assert np.all(path.psi == path.psi[0])
    assert not path.closed


@pytest.mark.parametrize("kind", ["s_shape", "oval", "o_shape", "infinity", "c_shape"])
def test_generated_paths_are_consistent(kind: str) -> None:
    path = generate_path(kind)
    steps = np.diff(path.s)
    assert np.all(steps > 0)
    assert np.max(steps) == pytest.approx(0.01, rel=0.05)
    # heading continuous after unwrapping
    assert np.max(np.abs(np.diff(path.psi))) < 0.05
    # positions advance by one table step
    hops = np.hypot(np.diff(path.x), np.diff(path.y))
    assert np.allclose(hops, steps, rtol=1e-3)


def test_lemniscate_total_signed_curvature_is_zero() -> None:
    path = generate_path("infinity", PathGeometry(infinity_half_width=1.5))
    total = trapezoid(path.kappa, path.s)
    assert abs(total) < 1e-3
    assert path.psi[-1] - path.psi[0] == pytest.approx(0.0, abs=1e-6)
    assert np.max(np.abs(path.kappa)) == pytest.approx(3.0 / 1.5, rel=1e-3)


def test_lookup_returns_knot_rows_and_midpoints() -> None:
    path = generate_path("straight", PathGeometry(straight_length=2.0))
    knot = lookup(path, float(path.s[37]))
    assert knot.x == path.x[37]
    assert knot.y == path.y[37]
    mid = lookup(path, 1.005)
    assert mid.x == pytest.approx(1.005)
    assert mid.y == pytest.approx(0.0)


def test_lookup_on_circle_quarter_turn() -> None:
    path = generate_path("o_shape", PathGeometry(o_radius=1.5))
    start = lookup(path, 0.0)
    quarter = lookup(path, path.length / 4)
    assert quarter.psi - start.psi == pytest.approx(math.pi / 2, abs=1e-9)


def test_lookup_wraps_closed_and_clamps_open_paths() -> None:
    circle = generate_path("o_shape")
    assert lookup(circle, circle.length + 0.25).x == pytest.approx(lookup(circle, 0.25).x)
    line = generate_path("straight", PathGeometry(straight_length=2.0))
    assert lookup(line, 5.0).x == pytest.approx(2.0)
    assert lookup(line, -1.0).x == pytest.approx(0.0)


def test_tracking_errors_on_path_are_zero() -> None:
    ref = PathPoint(s=1.0, x=2.0, y=-1.0, psi=0.7, kappa=0.0)
    state = BicycleState(x=2.0, y=-1.0, v=0.5, psi=0.7, beta=0.0, r=0.0)
    errors = tracking_errors(state, ref)
    assert errors.as_array() == pytest.approx(np.zeros(4), abs=1e-15)


def test_tracking_errors_sign_convention() -> None:
    ref = PathPoint(s=0.0, x=0.0, y=0.0, psi=0.0, kappa=0.0)
    left = BicycleState(x=0.0, y=0.2, v=0.5, psi=0.0, beta=0.0, r=0.0)
    assert tracking_errors(left, ref).dy == pytest.approx(0.2)
    flipped = PathPoint(s=0.0, x=0.0, y=0.0, psi=math.pi, kappa=0.0)
    assert tracking_errors(left, flipped).dy == pytest.approx(-0.2)

    north = PathPoint(s=0.0, x=3.0, y=4.0, psi=math.pi / 2, kappa=0.0)
    east = BicycleState(x=4.0, y=4.0, v=0.5, psi=math.pi / 2, beta=0.0, r=0.0)
    assert tracking_errors(east, north).dy == pytest.approx(-1.0)


def test_heading_error_is_wrapped() -> None:
    ref = PathPoint(s=0.0, x=0.0, y=0.0, psi=3.0, kappa=0.0)
    state = BicycleState(x=0.0, y=0.0, v=0.5, psi=-3.0, beta=0.0, r=0.0)
    dpsi = tracking_errors(state, ref).dpsi
    assert -math.pi < dpsi <= math.pi
    assert dpsi == pytest.approx(2.0 * math.pi - 6.0)


def test_travelled_distance_rate_examples() -> None:
    state = BicycleState(x=0.0, y=0.0, v=1.0, psi=0.0, beta=0.0, r=0.0)
    ref = PathPoint(s=0.0, x=0.0, y=0.0, psi=0.0, kappa=0.0)
    aligned = TrackingErrors(dy=0.0, dy_dot=0.0, dpsi=0.0, dr=0.0)
    assert travelled_distance_rate(state, aligned, ref) == pytest.approx(1.0)
    across = TrackingErrors(dy=0.0, dy_dot=1.0, dpsi=math.pi / 2, dr=0.0)
    assert travelled_distance_rate(state, across, ref) == pytest.approx(0.0, abs=1e-15)
    curved = PathPoint(s=0.0, x=0.0, y=0.0, psi=0.0, kappa=1.0)
    inside = TrackingErrors(dy=0.5, dy_dot=0.0, dpsi=0.0, dr=0.0)
    assert travelled_distance_rate(state, inside, curved) == pytest.approx(2.0)


def test_travelled_distance_rate_singularity() -> None:
    state = BicycleState(x=0.0, y=0.0, v=1.0, psi=0.0, beta=0.0, r=0.0)
    ref = PathPoint(s=0.0, x=0.0, y=0.0, psi=0.0, kappa=2.0)
    errors = TrackingErrors(dy=0.5, dy_dot=0.0, dpsi=0.0, dr=0.0)
    with pytest.raises(SingularityError):
        travelled_distance_rate(state, errors, ref)


def test_tracking_errors_at_centre_of_curvature_stay_finite() -> None:
    ref = PathPoint(s=0.0, x=0.0, y=0.0, psi=0.0, kappa=2.0)
    state = BicycleState(x=0.0, y=0.5, v=1.0, psi=0.0, beta=0.0, r=0.0)
    errors = tracking_errors(state, ref)
    assert np.all(np.isfinite(errors.as_array()))
    assert errors.dy == pytest.approx(0.5)
    assert errors.dr == pytest.approx(-2.0)


@pytest.mark.parametrize("kind", ["s_shape", "oval", "infinity", "c_shape"])
def test_perfect_tracking_recovers_path_length(kind: str) -> None:
    path = generate_path(kind)
    v, dt = 0.5, 0.01
    s = 0.0
    steps = 0
    while s < path.length:
        ref = lookup(path, s)
        state = BicycleState(x=ref.x, y=ref.y, v=v, psi=ref.psi, beta=0.0, r=v * ref.kappa)
        errors = tracking_errors(state, ref)
        assert errors.dy == pytest.approx(0.0, abs=1e-12)
        assert errors.dpsi == pytest.approx(0.0, abs=1e-12)
        s += travelled_distance_rate(state, errors, ref) * dt
        steps += 1
    assert steps * v * dt == pytest.approx(path.length, rel=1e-3)


def test_iso_reference_path_passes_its_own_gates() -> None:
    params = PathGeometry()
    path = generate_path("c_shape", params)
    report = check_gates(path, path.x, path.y, params.vehicle_width)
    assert report.passed
    assert all(margin > 0 for margin in report.margins.values())
    assert set(report.margins) == {"section_1", "section_3", "section_5"}


def test_gate_check_flags_a_shifted_trajectory() -> None:
    path = generate_path("c_shape")
    assert path.gates is not None
    normal_x = -np.sin(path.psi)
    normal_y = np.cos(path.psi)
    report = check_gates(path, path.x + 0.1 * normal_x, path.y + 0.1 * normal_y, 0.19)
    assert not report.passed


def test_gate_layout_round_trips_through_dict() -> None:
    path = generate_path("c_shape")
    assert path.gates is not None
    assert GateLayout.from_dict(path.gates.as_dict()) == path.gates
    with pytest.raises(ValidationError):
        GateLayout.from_dict({"origin": [0.0]})


def test_path_frame_import() -> None:
    path = generate_path("oval")
    restored = path_from_frame(path_to_frame(path), name="oval", closed=True)
    assert np.array_equal(restored.x, path.x)
    assert restored.closed


def test_invalid_geometry_and_kind() -> None:
    with pytest.raises(ValidationError):
        PathGeometry(o_radius=-1.0)
    with pytest.raises(ValidationError):
        generate_path("spiral")
