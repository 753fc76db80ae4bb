"""Two-stage Gaussian splatting with a spherical background shell.

Pipeline: ingest a COLMAP reconstruction plus per-view depth, segment each view
into nearby/background via global distance maps, optimize a shell of background
Gaussians, then optimize the nearby content over the frozen background, and
finally extract environment maps from the background shell.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    CameraView,
    GaussianCloud,
    InvalidGaussianError,
    SceneShell,
)
