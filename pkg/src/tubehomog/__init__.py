"""Effective drift and diffusivity of drift-diffusion in periodic tubes."""

__version__ = "0.1.0"

from .effective import EffectiveParams, compute_effective  # noqa: E402
from .geometry import Box, TubeSpec, build_cell, finger, load_geometry, mirror, slanted_finger, straight  # noqa: E402
from .grid import rasterize  # noqa: E402

__all__ = ["Box", "EffectiveParams", "TubeSpec", "build_cell", "compute_effective", "finger", "load_geometry",
           "mirror", "rasterize", "slanted_finger", "straight", "__version__"]
