"""Small planar-geometry helpers shared by the face pipeline."""

from __future__ import annotations

import numpy as np


def point_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd containment test, vectorized over complex query points.

    ``poly`` is a closed walk given by its vertices in order; edges doubled
    by slit traversals cancel in the crossing parity, so the test sees the
    underlying region.
    """
    points = np.asarray(points, dtype=complex).ravel()
    px, py = points.real, points.imag
    inside = np.zeros(len(points), dtype=bool)
    x0, y0 = poly.real, poly.imag
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        if ay == by:
            continue
        crosses = (ay <= py) != (by <= py)
        if not crosses.any():
            continue
        t = (py - ay) / (by - ay)
        xi = ax + t * (bx - ax)
        inside ^= crosses & (px < xi)
    return inside


def segment_distance(points: np.ndarray, a: complex, b: complex) -> np.ndarray:
    """Distance from each query point to the segment [a, b]."""
    points = np.asarray(points, dtype=complex).ravel()
    ab = b - a
    L2 = abs(ab) ** 2
    if L2 == 0:
        return np.abs(points - a)
    t = np.clip(((points - a) * np.conj(ab)).real / L2, 0.0, 1.0)
    return np.abs(points - (a + t * ab))


def min_boundary_distance(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from each query point to the closed polygonal walk."""
    points = np.asarray(points, dtype=complex).ravel()
    best = np.full(len(points), np.inf)
    nxt = np.roll(poly, -1)
    for a, b in zip(poly, nxt):
        np.minimum(best, segment_distance(points, a, b), out=best)
    return best


def interior_point(poly: np.ndarray, samples: int = 24) -> complex:
    """A point well inside the region bounded by the (possibly slit) walk.

    Scans a coarse grid over the bounding box and returns the contained
    point farthest from the boundary; refines the grid if nothing is found.
    """
    poly = np.asarray(poly, dtype=complex).ravel()
    lo_x, hi_x = poly.real.min(), poly.real.max()
    lo_y, hi_y = poly.imag.min(), poly.imag.max()
    for m in (samples, 4 * samples, 16 * samples):
        xs = np.linspace(lo_x, hi_x, m + 2)[1:-1]
        ys = np.linspace(lo_y, hi_y, m + 2)[1:-1]
        gx, gy = np.meshgrid(xs, ys)
        cand = (gx + 1j * gy).ravel()
        keep = point_in_polygon(cand, poly)
        if not keep.any():
            continue
        cand = cand[keep]
        dist = min_boundary_distance(cand, poly)
        k = int(np.argmax(dist))
        if dist[k] > 0:
            return complex(cand[k])
    raise ValueError("could not find an interior point of the face")
