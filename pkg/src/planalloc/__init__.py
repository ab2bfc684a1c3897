"""Connected allocation of planar Lebesgue measure to point centers.

The construction composes three machines: the Euclidean minimal spanning
tree of the centers, a numerical Riemann map of each hull-minus-tree face
onto the upper half-plane, and a site-optimal stable allocation with
appetites run on the half-plane images.
"""

from .allocation import (Assignment, Center, Site, StableAllocator,
                         check_stability, column_prefix_check,
                         stable_allocate_balls, stable_allocate_stages,
                         UNCLAIMED, UNDEFINED)
from .conformal import (BoundarySamples, GeodesicMap, build_map,
                        elementary_forward, elementary_inverse, gap_stats,
                        slit_params, trace_boundary)
from .errors import (ConformalError, DataError, DegeneracyError,
                     InvariantError, NumericalError, PlanallocError,
                     UsageError)
from .msf import (EuclideanMSF, Face, convex_hull, extract_faces, hull_area,
                  sector_angles, verify_minimax)
from .pipeline import (AppetiteMode, CellGrid, ConnectedAllocation,
                       GlobalAllocation, compute_appetites, discretize_face,
                       satedness_report, verify_connectivity)
from .pointproc import (Domain, PointSample, read_points, sample_poisson,
                        sample_uniform_count, write_points)

__version__ = "0.1.0"

__all__ = [
    "AppetiteMode", "Assignment", "BoundarySamples", "CellGrid", "Center",
    "ConformalError", "ConnectedAllocation", "DataError", "DegeneracyError",
    "Domain", "EuclideanMSF", "Face", "GeodesicMap", "GlobalAllocation",
    "InvariantError", "NumericalError", "PlanallocError", "PointSample",
    "Site", "StableAllocator", "UNCLAIMED", "UNDEFINED", "UsageError",
    "build_map", "check_stability", "column_prefix_check", "compute_appetites",
    "convex_hull", "discretize_face", "elementary_forward",
    "elementary_inverse", "extract_faces", "gap_stats", "hull_area",
    "read_points", "sample_poisson", "sample_uniform_count", "satedness_report",
    "sector_angles", "slit_params", "stable_allocate_balls",
    "stable_allocate_stages", "trace_boundary", "verify_connectivity",
    "verify_minimax", "write_points",
]
