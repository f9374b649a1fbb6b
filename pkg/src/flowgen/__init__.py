"""flowgen: compile natural-language ETL flow descriptions into workflow graphs."""

from __future__ import annotations

from pathlib import Path

__version__ = "0.1.0"


def fixture_path(*parts: str) -> Path:
    """Absolute path of a bundled fixture file."""
    return Path(__file__).parent.joinpath("fixtures", *parts)
