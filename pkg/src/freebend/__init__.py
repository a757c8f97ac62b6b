"""Free-form pipe routing in the Frenet frame.

Builds collision-free, manufacturable pipe centerlines by optimizing
curvature/torsion profiles with a stage-guided PPO agent, then maps the
result to six-axis free-bending die trajectories.
"""

from .frenet import (
    Frame,
    PathState,
    Polyline,
    analytic_helix,
    frame_from_tangent,
    frenet_step,
    integrate_segment,
    reorthonormalize,
    rotate_frame_about_tangent,
)
from .profile import GeoProfile, admissible_bounds, hermite_coeffs

__all__ = [
    "Frame",
    "GeoProfile",
    "PathState",
    "Polyline",
    "admissible_bounds",
    "analytic_helix",
    "frame_from_tangent",
    "frenet_step",
    "hermite_coeffs",
    "integrate_segment",
    "reorthonormalize",
    "rotate_frame_about_tangent",
]
