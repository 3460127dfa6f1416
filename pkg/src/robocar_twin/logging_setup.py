"""Logging helpers for the workbench CLI and experiments."""
from __future__ import annotations

import logging
from typing import Iterable

_FORMAT = "%(asctime)s %(levelname)s %(name)s - %(message)s"


def configure_logging(
    level: int = logging.INFO,
    *,
    modules: Iterable[str] | None = None,
    quiet_numerics: bool = True,
) -> None:
    """Configure plain structured logging for CLI commands.

    ``modules`` names workbench loggers to follow at DEBUG while the rest stays
    at ``level``, e.g. ``["robocar_twin.drl"]`` during training.
    ``quiet_numerics`` pins the numerics packages at WARNING.
    """

    logging.basicConfig(level=level, format=_FORMAT)
    for module in modules or ():
        logging.getLogger(module).setLevel(logging.DEBUG)
    if quiet_numerics:
        for noisy in ("numexpr", "scipy"):
            logging.getLogger(noisy).setLevel(logging.WARNING)


__all__ = ["configure_logging"]
