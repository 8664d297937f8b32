"""gmtkit: constructive geometric-measure-theory machinery.

Plane rotations and Grassmannian sampling, smooth cube retractions and
central projections, Whitney/cubical complexes, the smooth skeleton
deformation pipeline, discrete varifolds with anisotropic functionals and
slicing, and a discrete mod-2 Plateau minimizer with homological spanning.
"""

from .grassmann import (
    Plane,
    PlaneRotation,
    build_rotation,
    haar_sample,
    projector_distance,
    tilt_measure_excess,
)

__version__ = "0.1.0"

__all__ = [
    "Plane",
    "PlaneRotation",
    "build_rotation",
    "haar_sample",
    "projector_distance",
    "tilt_measure_excess",
]
