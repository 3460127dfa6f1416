"""Write experiment traces and reports to the output directory."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd

from .errors import ValidationError

LOGGER = logging.getLogger(__name__)

REPORT_NAME = "report.json"
SIGNIFICANT_DIGITS = 12


@dataclass(slots=True)
class OutputLayout:
    """``<root>/<experiment>/<tag>/`` with traces under ``traces/``."""

    root: Path
    experiment: str
    tag: str

    @classmethod
    def for_run(cls, root: Path | str, experiment: str, seed: int, tag: str | None = None) -> "OutputLayout":
        return cls(root=Path(root), experiment=experiment, tag=tag or f"seed-{seed}")

    @property
    def directory(self) -> Path:
        return self.root / self.experiment / self.tag

    @property
    def traces(self) -> Path:
        return self.directory / "traces"

    def trace_path(self, name: str) -> Path:
        return self.traces / f"{name}.csv"

    def write_trace(self, name: str, frame: pd.DataFrame, schema: str) -> Path:
        return write_csv(self.trace_path(name), frame, schema)

    def write_report(self, payload: Mapping[str, Any], name: str = REPORT_NAME) -> Path:
        return write_json(self.directory / name, payload)


def round_significant(value: float, digits: int = SIGNIFICANT_DIGITS) -> float | None:
    if not math.isfinite(value):
        return None
    return float(f"{value:.{digits}g}")


def _jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(item) for item in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return round_significant(float(value))
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: Path | str, payload: Mapping[str, Any]) -> Path:
    """Deterministic JSON: sorted keys, floats rounded, non-finite values as ``null``."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False)
    target.write_text(text + "\n", encoding="utf-8")
    LOGGER.info("Wrote report", extra={"artifact": str(target)})
    return target


def write_csv(path: Path | str, frame: pd.DataFrame, schema: str) -> Path:
    """CSV preceded by one ``# schema:`` line; floats keep their shortest exact repr."""

    if "\n" in schema:
        msg = "Schema description must fit on one line"
        raise ValidationError(msg)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as handle:
        handle.write(f"# schema: {schema}\n")
        frame.to_csv(handle, index=False, lineterminator="\n")
    LOGGER.debug("Wrote trace", extra={"artifact": str(target), "rows": len(frame)})
    return target


def read_trace(path: Path | str, required: tuple[str, ...] = ()) -> pd.DataFrame:
    source = Path(path)
    if not source.exists():
        msg = f"Trace file {source} not found"
        raise ValidationError(msg)
    frame = pd.read_csv(source, comment="#", float_precision="round_trip")
    missing = [column for column in required if column not in frame.columns]
    if missing:
        msg = f"Trace {source} is missing columns: {', '.join(missing)}"
        raise ValidationError(msg)
    return frame


def read_schema(path: Path | str) -> str | None:
    with Path(path).open("r", encoding="utf-8") as handle:
        first = handle.readline().rstrip("\n")
    prefix = "# schema: "
    return first[len(prefix) :] if first.startswith(prefix) else None


__all__ = [
    "OutputLayout",
    "REPORT_NAME",
    "read_schema",
    "read_trace",
    "round_significant",
    "write_csv",
    "write_json",
]
