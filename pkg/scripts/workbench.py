"""CLI entry point of the robotic-car digital-twin workbench."""
from __future__ import annotations

import sys

from robocar_twin.cli import main

if __name__ == "__main__":
    sys.exit(main())
