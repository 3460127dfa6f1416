"""Digital-twin workbench for a scaled robotic car."""

from __future__ import annotations

__all__ = [
    "artifacts",
    "cli",
    "config",
    "controllers",
    "drl",
    "errors",
    "fekf",
    "harness",
    "identification",
    "kpis",
    "logging_setup",
    "networks",
    "paths",
    "sensors",
    "vehicle_models",
]
