"""Global human trajectory and camera reconstruction from occluded
camera-space pose observations.

The package turns per-frame, camera-coordinate body pose estimates with
missing stretches into a consistent world-frame account of every person
and of the camera itself: occlusion-aware infilling over an egocentric
trajectory representation, closed-form camera initialization from
visible frames, and a joint energy minimization that reconciles the
reprojection evidence with the infilled motion.
"""

from .geometry import Heading, Rotation, Transform

__version__ = "0.1.0"

__all__ = [
    "Heading",
    "Rotation",
    "Transform",
    "__version__",
]
