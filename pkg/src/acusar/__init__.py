"""Airborne acoustic victim detection and localization toolkit."""

from . import (cli, errors, features, fusion, geometry, localization, mae,
               mission, ringbuffer, scene)

__all__ = [
    "cli", "errors", "features", "fusion", "geometry", "localization",
    "mae", "mission", "ringbuffer", "scene",
]

__version__ = "0.1.0"
