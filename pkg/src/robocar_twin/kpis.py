"""Tracking key performance indicators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import ValidationError


@dataclass(frozen=True, slots=True)
class KpiReport:
    """Maximum error ``me``, ``rmse`` (m) and time-averaged absolute steering ``iaca`` (rad)."""

    me: float
    rmse: float
    iaca: float
    duration: float
    controller: str = ""
    path: str = ""
    gates: dict[str, float] = field(default_factory=dict)

    @property
    def gates_passed(self) -> bool | None:
        if not self.gates:
            return None
        return all(margin >= 0.0 for margin in self.gates.values())

    def as_dict(self) -> dict[str, object]:
        payload: dict[str, object] = {
            "controller": self.controller,
            "path": self.path,
            "ME": self.me,
            "RMSE": self.rmse,
            "IACA": self.iaca,
            "T_f": self.duration,
        }
        if self.gates:
            payload["gates"] = dict(self.gates)
            payload["gates_passed"] = self.gates_passed
        return payload


def compute_kpis(
    dy: Sequence[float] | np.ndarray,
    delta: Sequence[float] | np.ndarray,
    dt: float,
    duration: float | None = None,
    *,
    controller: str = "",
    path: str = "",
) -> KpiReport:
    """KPIs of uniformly sampled traces; integrals use the trapezoidal rule.

    ``duration`` defaults to the span of the samples, ``(n - 1) * dt``.
    """

    dy = np.asarray(dy, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if dy.size == 0 or delta.size == 0:
        msg = "KPIs need non-empty traces"
        raise ValidationError(msg)
    if dy.shape != delta.shape:
        msg = "Lateral error and steering traces differ in length"
        raise ValidationError(msg)
    if not dt > 0:
        msg = "KPI sample time must be positive"
        raise ValidationError(msg)
    if duration is None:
        duration = (dy.size - 1) * dt
    if dy.size == 1 or duration <= 0:
        # a single sample has no extent in time
        return KpiReport(
            me=float(abs(dy[0])), rmse=float(abs(dy[0])), iaca=float(abs(delta[0])),
            duration=0.0, controller=controller, path=path,
        )
    rmse = math.sqrt(float(trapezoid(dy**2, dx=dt)) / duration)
    iaca = float(trapezoid(np.abs(delta), dx=dt)) / duration
    return KpiReport(
        me=float(np.max(np.abs(dy))),
        rmse=rmse,
        iaca=iaca,
        duration=float(duration),
        controller=controller,
        path=path,
    )


def relative_change(value: float, reference: float) -> float:
    """Percentage change of ``value`` against ``reference``."""

    if reference == 0.0:
        return math.inf if value != 0.0 else 0.0
    return 100.0 * (value - reference) / reference


__all__ = ["KpiReport", "compute_kpis", "relative_change"]
