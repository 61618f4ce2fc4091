"""Blended joint/task-space impedance control with a friction observer."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def data_file(name: str) -> Path:
    """Path of a bundled model, gain, trajectory or scenario file."""
    return Path(str(resources.files(__package__) / "data" / name))
