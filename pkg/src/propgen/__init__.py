"""Toolkit for studying how well detector outputs generalize as object proposals."""

from pathlib import Path

__version__ = "0.1.0"

FIXTURES = Path(__file__).parent / "fixtures"
