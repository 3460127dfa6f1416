"""Reference paths indexed by arc length, tracking errors and travelled distance.

Paths are tables sampled every ``resolution`` metres (1 cm by default) and are
immutable once generated. Piecewise paths (S, O, oval, straight, C-shape) are
evaluated in closed form per constant-curvature segment; the lemniscate is
sampled densely in its parameter and resampled by arc length.

Sign convention: ``dy > 0`` means the vehicle is left of the path, seen in the
frame of the reference heading.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from .errors import SingularityError, ValidationError
from .vehicle_models import BicycleState, wrap_angle

LOGGER = logging.getLogger(__name__)

PATH_KINDS = ("s_shape", "oval", "o_shape", "infinity", "c_shape", "straight")
_LEMNISCATE_SAMPLES = 200_001
CENTRE_TOLERANCE = 1e-6


@dataclass(frozen=True, slots=True)
class PathPoint:
    s: float
    x: float
    y: float
    psi: float
    kappa: float


@dataclass(frozen=True, slots=True)
class TrackingErrors:
    """Error vector ``[dy, dy_dot, dpsi, dr]`` of the vehicle against the reference."""

    dy: float
    dy_dot: float
    dpsi: float
    dr: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dy, self.dy_dot, self.dpsi, self.dr], dtype=float)


@dataclass(frozen=True, slots=True)
class Gate:
    """Corridor of one ISO section in the manoeuvre frame (``u`` along, ``w`` left)."""

    name: str
    u_start: float
    u_end: float
    w_center: float
    width: float


@dataclass(frozen=True, slots=True)
class GateLayout:
    """Corridors of the scaled double lane change plus the frame they live in."""

    origin_x: float
    origin_y: float
    heading: float
    gates: tuple[Gate, ...]

    def to_local(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dx = np.asarray(x, dtype=float) - self.origin_x
        dy = np.asarray(y, dtype=float) - self.origin_y
        cos_h, sin_h = math.cos(self.heading), math.sin(self.heading)
        return dx * cos_h + dy * sin_h, -dx * sin_h + dy * cos_h

    def as_dict(self) -> dict[str, object]:
        return {
            "origin": [self.origin_x, self.origin_y],
            "heading": self.heading,
            "gates": [
                {"name": g.name, "u_start": g.u_start, "u_end": g.u_end, "w_center": g.w_center, "width": g.width}
                for g in self.gates
            ],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, object]) -> "GateLayout":
        try:
            origin = raw["origin"]
            gates = tuple(
                Gate(
                    name=str(item["name"]),
                    u_start=float(item["u_start"]),
                    u_end=float(item["u_end"]),
                    w_center=float(item["w_center"]),
                    width=float(item["width"]),
                )
                for item in raw["gates"]  # type: ignore[union-attr]
            )
            return cls(
                origin_x=float(origin[0]),  # type: ignore[index]
                origin_y=float(origin[1]),  # type: ignore[index]
                heading=float(raw["heading"]),  # type: ignore[arg-type]
                gates=gates,
            )
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            msg = "Malformed gate definition"
            raise ValidationError(msg) from exc


@dataclass(frozen=True, slots=True)
class GateReport:
    margins: dict[str, float]
    vehicle_width: float

    @property
    def passed(self) -> bool:
        return all(margin >= 0.0 for margin in self.margins.values())


@dataclass(frozen=True, eq=False)
class Path:
    """Arc-length table of a reference path."""

    name: str
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    kappa: np.ndarray
    closed: bool = False
    gates: GateLayout | None = None

    def __post_init__(self) -> None:
        n = len(self.s)
        if n < 2:
            msg = "A path needs at least two samples"
            raise ValidationError(msg)
        for name in ("x", "y", "psi", "kappa"):
            if len(getattr(self, name)) != n:
                msg = f"Path column {name} does not match the arc-length table"
                raise ValidationError(msg)
        if not np.all(np.diff(self.s) > 0):
            msg = "Path arc length must be strictly increasing"
            raise ValidationError(msg)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def __len__(self) -> int:
        return len(self.s)

    def point(self, index: int) -> PathPoint:
        return PathPoint(
            s=float(self.s[index]),
            x=float(self.x[index]),
            y=float(self.y[index]),
            psi=float(self.psi[index]),
            kappa=float(self.kappa[index]),
        )


@dataclass(frozen=True, slots=True)
class PathGeometry:
    """Dimensions of the generated paths; every field can be overridden in config."""

    resolution: float = 0.01
    s_radius: float = 2.0
    s_straight: float = 1.0
    s_arc_angle: float = math.pi / 2
    o_radius: float = 1.5
    oval_radius: float = 1.0
    oval_straight: float = 2.0
    infinity_half_width: float = 1.5
    straight_length: float = 5.0
    u_turn_radius: float = 1.0
    c_lead_in: float = 0.5
    c_gap: float = 1.0
    c_lead_out: float = 1.0
    iso_sections: tuple[float, ...] = (1.2, 1.35, 2.5, 1.25, 1.2)
    vehicle_width: float = 0.19
    lane_offset: float | None = None

    def __post_init__(self) -> None:
        positive = (
            "resolution",
            "s_radius",
            "s_arc_angle",
            "o_radius",
            "oval_radius",
            "infinity_half_width",
            "straight_length",
            "u_turn_radius",
            "vehicle_width",
        )
        for name in positive:
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                msg = f"Path geometry field {name} must be positive"
                raise ValidationError(msg)
        for name in ("s_straight", "oval_straight", "c_lead_in", "c_gap", "c_lead_out"):
            if getattr(self, name) < 0:
                msg = f"Path geometry field {name} must be non negative"
                raise ValidationError(msg)
        if len(self.iso_sections) != 5 or any(length <= 0 for length in self.iso_sections):
            msg = "ISO lane change needs five positive section lengths"
            raise ValidationError(msg)
        if self.lane_offset is not None and self.lane_offset <= 0:
            msg = "Lane offset must be positive"
            raise ValidationError(msg)

    def iso_widths(self) -> tuple[float, float, float]:
        """Corridor widths of sections 1, 3 and 5 scaled by ten."""

        w = self.vehicle_width
        return 1.1 * w + 0.025, w + 0.1, min(1.3 * w + 0.025, 0.3)

    def iso_offset(self) -> float:
        if self.lane_offset is not None:
            return self.lane_offset
        w1, w3, _ = self.iso_widths()
        return w1 / 2 + 0.1 + w3 / 2


@dataclass(frozen=True, slots=True)
class _Segment:
    length: float
    kappa: float


def _sample_segments(
    segments: Sequence[_Segment],
    resolution: float,
    start: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, list[tuple[float, float, float]]]:
    segments = [segment for segment in segments if segment.length > 0]
    poses = [start]
    for segment in segments:
        x0, y0, psi0 = poses[-1]
        poses.append(_advance(x0, y0, psi0, segment.kappa, segment.length))
    boundaries = np.concatenate([[0.0], np.cumsum([segment.length for segment in segments])])
    total = float(boundaries[-1])
    n = max(int(round(total / resolution)), 1)
    s = np.linspace(0.0, total, n + 1)
    index = np.clip(np.searchsorted(boundaries, s, side="right") - 1, 0, len(segments) - 1)
    x = np.empty_like(s)
    y = np.empty_like(s)
    psi = np.empty_like(s)
    kappa = np.empty_like(s)
    for k, segment in enumerate(segments):
        mask = index == k
        if not np.any(mask):
            continue
        x0, y0, psi0 = poses[k]
        d = s[mask] - boundaries[k]
        x[mask], y[mask], psi[mask] = _advance_many(x0, y0, psi0, segment.kappa, d)
        kappa[mask] = segment.kappa
    return s, x, y, psi, kappa, poses


def _advance(x0: float, y0: float, psi0: float, kappa: float, d: float) -> tuple[float, float, float]:
    xs, ys, psis = _advance_many(x0, y0, psi0, kappa, np.array([d]))
    return float(xs[0]), float(ys[0]), float(psis[0])


def _advance_many(x0: float, y0: float, psi0: float, kappa: float, d: np.ndarray):
    psi = psi0 + kappa * d
    if kappa == 0.0:
        return x0 + d * math.cos(psi0), y0 + d * math.sin(psi0), psi
    x = x0 + (np.sin(psi) - math.sin(psi0)) / kappa
    y = y0 - (np.cos(psi) - math.cos(psi0)) / kappa
    return x, y, psi


def _lane_change(longitudinal: float, offset: float) -> list[_Segment]:
    """Two opposite arcs shifting the path ``offset`` to the left over ``longitudinal``."""

    theta = 2.0 * math.atan2(abs(offset), longitudinal)
    radius = longitudinal / (2.0 * math.sin(theta))
    turn = 1.0 if offset > 0 else -1.0
    return [_Segment(radius * theta, turn / radius), _Segment(radius * theta, -turn / radius)]


def _lemniscate(half_width: float, resolution: float):
    t = np.linspace(0.0, 2.0 * math.pi, _LEMNISCATE_SAMPLES)
    sin_t, cos_t = np.sin(t), np.cos(t)
    denom = 1.0 + sin_t**2
    x = half_width * cos_t / denom
    y = half_width * sin_t * cos_t / denom
    dx = -half_width * sin_t * (3.0 - sin_t**2) / denom**2
    dy = half_width * (np.cos(2.0 * t) * denom - 2.0 * sin_t**2 * cos_t**2) / denom**2
    ddx = np.gradient(dx, t, edge_order=2)
    ddy = np.gradient(dy, t, edge_order=2)
    speed = np.hypot(dx, dy)
    curvature = (dx * ddy - dy * ddx) / speed**3
    arc = cumulative_trapezoid(speed, t, initial=0.0)
    heading = np.unwrap(np.arctan2(dy, dx))
    total = float(arc[-1])
    n = max(int(round(total / resolution)), 1)
    s = np.linspace(0.0, total, n + 1)
    return (
        s,
        np.interp(s, arc, x),
        np.interp(s, arc, y),
        np.interp(s, arc, heading),
        np.interp(s, arc, curvature),
    )


def generate_path(kind: str, params: PathGeometry | None = None) -> Path:
    """Generate one of the reference paths as an arc-length table."""

    params = params or PathGeometry()
    res = params.resolution
    if kind == "straight":
        s, x, y, psi, kappa, _ = _sample_segments([_Segment(params.straight_length, 0.0)], res)
        return Path("straight", s, x, y, psi, kappa)
    if kind == "o_shape":
        radius = params.o_radius
        s, x, y, psi, kappa, _ = _sample_segments([_Segment(2.0 * math.pi * radius, 1.0 / radius)], res)
        return Path("o_shape", s, x, y, psi, kappa, closed=True)
    if kind == "oval":
        radius, straight = params.oval_radius, params.oval_straight
        half = _Segment(math.pi * radius, 1.0 / radius)
        segments = [_Segment(straight, 0.0), half, _Segment(straight, 0.0), half]
        s, x, y, psi, kappa, _ = _sample_segments(segments, res)
        return Path("oval", s, x, y, psi, kappa, closed=True)
    if kind == "s_shape":
        radius, straight, angle = params.s_radius, params.s_straight, params.s_arc_angle
        segments = [
            _Segment(straight, 0.0),
            _Segment(radius * angle, 1.0 / radius),
            _Segment(straight, 0.0),
            _Segment(radius * angle, -1.0 / radius),
            _Segment(straight, 0.0),
        ]
        s, x, y, psi, kappa, _ = _sample_segments(segments, res)
        return Path("s_shape", s, x, y, psi, kappa)
    if kind == "infinity":
        s, x, y, psi, kappa = _lemniscate(params.infinity_half_width, res)
        return Path("infinity", s, x, y, psi, kappa, closed=True)
    if kind == "c_shape":
        return _c_shape(params)
    msg = f"Unknown path kind {kind!r}; expected one of {', '.join(PATH_KINDS)}"
    raise ValidationError(msg)


def _c_shape(params: PathGeometry) -> Path:
    sec1, sec2, sec3, sec4, sec5 = params.iso_sections
    offset = params.iso_offset()
    w1, w3, w5 = params.iso_widths()
    radius = params.u_turn_radius
    segments = [
        _Segment(params.c_lead_in, 0.0),
        _Segment(math.pi * radius, 1.0 / radius),
        _Segment(params.c_gap, 0.0),
        _Segment(sec1, 0.0),
        *_lane_change(sec2, offset),
        _Segment(sec3, 0.0),
        *_lane_change(sec4, -offset),
        _Segment(sec5, 0.0),
        _Segment(params.c_lead_out, 0.0),
    ]
    s, x, y, psi, kappa, poses = _sample_segments(segments, params.resolution)
    # pose at the entry of ISO section 1
    entry = sum(1 for seg in segments[:3] if seg.length > 0)
    origin_x, origin_y, heading = poses[entry]
    u3 = sec1 + sec2
    u5 = u3 + sec3 + sec4
    gates = GateLayout(
        origin_x=origin_x,
        origin_y=origin_y,
        heading=heading,
        gates=(
            Gate("section_1", 0.0, sec1, 0.0, w1),
            Gate("section_3", u3, u3 + sec3, offset, w3),
            Gate("section_5", u5, u5 + sec5, 0.0, w5),
        ),
    )
    LOGGER.debug("Generated C-shape path", extra={"length": float(s[-1]), "lane_offset": offset})
    return Path("c_shape", s, x, y, psi, kappa, closed=False, gates=gates)


def lookup(path: Path, s: float) -> PathPoint:
    """Interpolate the path at arc length ``s`` (wrapped on closed paths, clamped otherwise)."""

    if len(path) == 0:
        msg = "Cannot look up an empty path"
        raise ValidationError(msg)
    length = path.length
    if path.closed:
        s = s % length
    else:
        s = min(max(s, 0.0), length)
    i = int(np.searchsorted(path.s, s, side="right")) - 1
    i = min(max(i, 0), len(path) - 2)
    s0, s1 = path.s[i], path.s[i + 1]
    frac = (s - s0) / (s1 - s0)
    keep = 1.0 - frac
    psi0 = float(path.psi[i])
    return PathPoint(
        s=float(s),
        x=float(path.x[i] * keep + path.x[i + 1] * frac),
        y=float(path.y[i] * keep + path.y[i + 1] * frac),
        psi=psi0 + frac * wrap_angle(float(path.psi[i + 1]) - psi0),
        kappa=float(path.kappa[i] * keep + path.kappa[i + 1] * frac),
    )


def _distance_rate(v: float, beta: float, dy: float, dpsi: float, kappa: float) -> float:
    denom = 1.0 - kappa * dy
    if abs(denom) < CENTRE_TOLERANCE:
        msg = "Vehicle sits at the centre of curvature of the reference path"
        raise SingularityError(msg)
    return v * math.cos(beta + dpsi) / denom


def travelled_distance_rate(state: BicycleState, errors: TrackingErrors, ref: PathPoint) -> float:
    """Rate of the arc-length coordinate, ``(vx cos dpsi - vy sin dpsi)/(1 - kappa dy)``."""

    return _distance_rate(state.v, state.beta, errors.dy, errors.dpsi, ref.kappa)


def tracking_errors(state: BicycleState, ref: PathPoint) -> TrackingErrors:
    """Error vector of ``state`` against ``ref``; finite for every finite state.

    At the centre of curvature ``dr`` uses the along-track speed in place of
    the undefined arc-length rate.
    """

    cos_ref, sin_ref = math.cos(ref.psi), math.sin(ref.psi)
    ex = state.x - ref.x
    ey = state.y - ref.y
    dy = ey * cos_ref - ex * sin_ref
    dpsi = wrap_angle(state.psi - ref.psi)
    dy_dot = state.v * math.sin(dpsi + state.beta)
    if abs(1.0 - ref.kappa * dy) < CENTRE_TOLERANCE:
        s_dot = state.v * math.cos(state.beta + dpsi)
    else:
        s_dot = _distance_rate(state.v, state.beta, dy, dpsi, ref.kappa)
    return TrackingErrors(dy=dy, dy_dot=dy_dot, dpsi=dpsi, dr=state.r - ref.kappa * s_dot)



def check_gates(path: Path, x: Iterable[float], y: Iterable[float], vehicle_width: float) -> GateReport:
    """Smallest clearance between the vehicle body and each ISO corridor edge."""

    if path.gates is None:
        msg = f"Path {path.name} carries no gate layout"
        raise ValidationError(msg)
    u, w = path.gates.to_local(np.fromiter(x, dtype=float), np.fromiter(y, dtype=float))
    margins: dict[str, float] = {}
    for gate in path.gates.gates:
        inside = (u >= gate.u_start) & (u <= gate.u_end)
        if not np.any(inside):
            margins[gate.name] = -math.inf
            continue
        clearance = gate.width / 2 - vehicle_width / 2 - np.abs(w[inside] - gate.w_center)
        margins[gate.name] = float(np.min(clearance))
    return GateReport(margins=margins, vehicle_width=vehicle_width)


def path_to_frame(path: Path) -> pd.DataFrame:
    return pd.DataFrame({"s": path.s, "X": path.x, "Y": path.y, "psi": path.psi, "kappa": path.kappa})


def path_from_frame(frame: pd.DataFrame, *, name: str = "imported", closed: bool = False) -> Path:
    missing = [column for column in ("s", "X", "Y", "psi", "kappa") if column not in frame.columns]
    if missing:
        msg = f"Path table is missing columns: {', '.join(missing)}"
        raise ValidationError(msg)
    return Path(
        name=name,
        s=frame["s"].to_numpy(dtype=float),
        x=frame["X"].to_numpy(dtype=float),
        y=frame["Y"].to_numpy(dtype=float),
        psi=frame["psi"].to_numpy(dtype=float),
        kappa=frame["kappa"].to_numpy(dtype=float),
        closed=closed,
    )


__all__ = [
    "Gate",
    "GateLayout",
    "GateReport",
    "PATH_KINDS",
    "Path",
    "PathGeometry",
    "PathPoint",
    "TrackingErrors",
    "check_gates",
    "generate_path",
    "lookup",
    "path_from_frame",
    "path_to_frame",
    "tracking_errors",
    "travelled_distance_rate",
]
