"""Game-theoretic DIFT defense: min-cut trap placement and game simulation."""

from __future__ import annotations

from importlib import resources

__version__ = "0.1.0"


def data_path(name: str) -> str:
    """Filesystem path of a bundled fixture or config."""
    return str(resources.files(__package__).joinpath("data", name))
