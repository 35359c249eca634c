"""Bundled graph descriptions, platform skeletons, and measurement tables."""

from importlib import resources


def data_path(name: str):
    """Return a filesystem path for a bundled JSON data file."""
    return resources.files(__name__) / name
