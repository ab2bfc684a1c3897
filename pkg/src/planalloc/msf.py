"""Euclidean minimal spanning trees, rotation systems, and hull-minus-tree faces.

The planar graph formed by the tree edges plus the convex-hull edges has one
bounded face per component of hull-minus-tree.  Faces are traversed
counterclockwise (interior on the left); a tree edge interior to the hull
borders bounded faces on both sides and appears twice across the face walks,
a hull edge appears exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DegeneracyError

TWO_PI = 2.0 * np.pi


class EuclideanMSF(BaseEstimator):
    """Minimal spanning forest of a planar point set.

    For a finite set in general position (all pairwise distances distinct)
    this is the unique Euclidean minimum spanning tree.  ``fit`` computes the
    edge list, edge lengths, and the counterclockwise rotation system used
    for face traversal.

    Attributes
    ----------
    edges_ : ndarray of shape (n-1, 2)
        Vertex index pairs (i < j), sorted lexicographically.
    lengths_ : ndarray of shape (n-1,)
        Euclidean edge lengths, aligned with ``edges_``.
    rotation_ : list of ndarray
        Per vertex, the neighboring vertex ids in counterclockwise order
        of outgoing direction.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("expected planar points of shape (n, 2)")
        n = len(X)
        if n < 2:
            raise ValueError("need at least two points")
        key = np.lexsort((X[:, 1], X[:, 0]))
        if np.any(np.all(X[key[1:]] == X[key[:-1]], axis=1)):
            raise DegeneracyError("duplicate points")
        self.X_ = X
        parent, lengths = _prim(X)
        edges = np.array(
            sorted((min(p, j), max(p, j)) for j, p in enumerate(parent) if p >= 0),
            dtype=int,
        )
        self.edges_ = edges
        d = X[edges[:, 0]] - X[edges[:, 1]]
        self.lengths_ = np.hypot(d[:, 0], d[:, 1])
        self.rotation_ = _rotation_system(X, self._adjacency(n, edges))
        return self

    @staticmethod
    def _adjacency(n, edges):
        adj = [[] for _ in range(n)]
        for i, j in edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def minimax_ok(self):
        check_is_fitted(self, "edges_")
        ok, _ = verify_minimax(self.X_, self.edges_)
        return ok


def _prim(X: np.ndarray):
    """O(n^2) Prim; deterministic tie-breaking by lowest index."""
    n = len(X)
    best = np.hypot(X[:, 0] - X[0, 0], X[:, 1] - X[0, 1])
    best[0] = np.inf
    parent = np.zeros(n, dtype=int)
    parent[0] = -1
    intree = np.zeros(n, dtype=bool)
    intree[0] = True
    lengths = np.zeros(n)
    for _ in range(n - 1):
        j = int(np.argmin(best))
        lengths[j] = best[j]
        intree[j] = True
        best[j] = np.inf
        nd = np.hypot(X[:, 0] - X[j, 0], X[:, 1] - X[j, 1])
        upd = (~intree) & (nd < best)
        best[upd] = nd[upd]
        parent[upd] = j
    return parent, lengths


def _rotation_system(X, adj):
    rot = []
    for v, nbrs in enumerate(adj):
        nbrs = np.array(nbrs, dtype=int)
        ang = np.arctan2(X[nbrs, 1] - X[v, 1], X[nbrs, 0] - X[v, 0])
        rot.append(nbrs[np.argsort(ang, kind="stable")])
    return rot


def verify_minimax(X, edges) -> tuple[bool, tuple | None]:
    """Check the defining property of the minimal spanning forest.

    An edge (u, v) belongs to the forest exactly when no u-v path exists
    using only strictly shorter edges.  Returns (ok, first_violation);
    a violation is (u, v, length).
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    if len(edges) != n - 1:
        return False, ("edge count", len(edges), n - 1)
    dmat = np.hypot(X[:, None, 0] - X[None, :, 0], X[:, None, 1] - X[None, :, 1])
    for u, v in edges:
        ln = dmat[u, v]
        if _connected_below(dmat, ln, u, v):
            return False, (int(u), int(v), float(ln))
    # the edge set must also span
    adj = EuclideanMSF._adjacency(n, edges)
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        w = stack.pop()
        for y in adj[w]:
            if not seen[y]:
                seen[y] = True
                stack.append(y)
    if not seen.all():
        return False, ("not spanning",)
    return True, None


def _connected_below(dmat, threshold, u, v) -> bool:
    """Is there a u-v path in the complete graph with all edges < threshold?"""
    n = len(dmat)
    seen = np.zeros(n, dtype=bool)
    seen[u] = True
    stack = [u]
    while stack:
        w = stack.pop()
        nxt = np.where((dmat[w] < threshold) & ~seen)[0]
        if v in nxt:
            return True
        seen[nxt] = True
        stack.extend(int(x) for x in nxt)
    return False


def convex_hull(X) -> np.ndarray:
    """Indices of hull vertices in counterclockwise order (monotone chain)."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n < 3:
        raise DegeneracyError("hull needs at least three points")
    order = np.lexsort((X[:, 1], X[:, 0]))

    def cross(o, a, b):
        return ((X[a, 0] - X[o, 0]) * (X[b, 1] - X[o, 1])
                - (X[a, 1] - X[o, 1]) * (X[b, 0] - X[o, 0]))

    lower: list[int] = []
    for idx in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], idx) <= 0:
            lower.pop()
        lower.append(int(idx))
    upper: list[int] = []
    for idx in order[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], idx) <= 0:
            upper.pop()
        upper.append(int(idx))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegeneracyError("all points collinear; no bounded face")
    return np.array(hull, dtype=int)


@dataclass
class Face:
    """One bounded face of the tree-plus-hull graph.

    The walk is stored as darts (directed edges); step i sits at vertex
    ``darts[i, 0]``, arrives along ``darts[i-1]`` and leaves along
    ``darts[i]``.  ``twin_step[i]`` is the step traversing the same edge in
    the opposite direction within this same walk (slit edges), else -1.
    """

    id: int
    darts: np.ndarray          # (k, 2) int
    corner_angles: np.ndarray  # (k,) float, interior angle at darts[i, 0]
    polygon: np.ndarray        # (k,) complex, coordinates of darts[:, 0]
    area: float
    twin_step: np.ndarray      # (k,) int
    hull_step: np.ndarray      # (k,) bool

    def __len__(self) -> int:
        return len(self.darts)

    @property
    def vertices(self) -> np.ndarray:
        return self.darts[:, 0]

    def step_lengths(self) -> np.ndarray:
        nxt = np.roll(self.polygon, -1)
        return np.abs(nxt - self.polygon)


def extract_faces(X, forest: EuclideanMSF) -> list[Face]:
    """Bounded faces of the planar graph tree-edges + hull-edges.

    Traversal follows the rotation system: arriving at v along edge e, the
    walk departs along the next edge after reverse(e) in clockwise order,
    which makes every bounded face counterclockwise.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n < 3:
        raise DegeneracyError("need at least three points for a bounded face")
    hull = convex_hull(X)
    hull_edges = {tuple(sorted((int(hull[i]), int(hull[(i + 1) % len(hull)]))))
                  for i in range(len(hull))}
    edge_set = {tuple(sorted((int(i), int(j)))) for i, j in forest.edges_}
    edge_set |= hull_edges
    adj = [[] for _ in range(n)]
    for i, j in edge_set:
        adj[i].append(j)
        adj[j].append(i)
    rot = _rotation_system(X, adj)
    rank = [dict((int(w), k) for k, w in enumerate(r)) for r in rot]

    faces: list[Face] = []
    seen: set[tuple[int, int]] = set()
    zc = X[:, 0] + 1j * X[:, 1]
    for i, j in sorted(edge_set):
        for dart in ((i, j), (j, i)):
            if dart in seen:
                continue
            walk = _trace_orbit(dart, rot, rank)
            seen.update(walk)
            darts = np.array(walk, dtype=int)
            poly = zc[darts[:, 0]]
            area = _shoelace(poly)
            if area <= 0:
                continue  # outer face
            faces.append(_make_face(len(faces), darts, poly, area, hull_edges))
    if not faces:
        raise DegeneracyError("no bounded face found")
    return faces


def _trace_orbit(start, rot, rank):
    walk = []
    dart = start
    while True:
        walk.append(dart)
        u, v = dart
        r = rot[v]
        k = rank[v][u]
        w = int(r[(k - 1) % len(r)])
        dart = (v, w)
        if dart == start:
            return walk


def _shoelace(poly: np.ndarray) -> float:
    nxt = np.roll(poly, -1)
    return float(0.5 * np.sum(poly.real * nxt.imag - poly.imag * nxt.real))


def _make_face(fid, darts, poly, area, hull_edges) -> Face:
    k = len(darts)
    nxt = np.roll(poly, -1)
    d_out = nxt - poly
    d_in = poly - np.roll(poly, 1)
    ang = (np.angle(-d_in) - np.angle(d_out)) % TWO_PI
    ang[ang == 0.0] = TWO_PI  # slit tips turn through the full angle
    dart_keys = {}
    twin = -np.ones(k, dtype=int)
    for s, (u, v) in enumerate(darts):
        dart_keys[(int(u), int(v))] = s
    for s, (u, v) in enumerate(darts):
        t = dart_keys.get((int(v), int(u)), -1)
        twin[s] = t
    hull_step = np.array([tuple(sorted((int(u), int(v)))) in hull_edges
                          for u, v in darts])
    return Face(fid, darts, ang, poly.copy(), area, twin, hull_step)


def sector_angles(X, faces: list[Face]) -> dict[int, list[tuple[int, float]]]:
    """Per vertex, the list of (face id, interior sector angle) over all visits.

    Interior vertices close up to a full turn; hull vertices to the hull's
    interior angle at that corner.
    """
    out: dict[int, list[tuple[int, float]]] = {}
    for face in faces:
        for s in range(len(face)):
            v = int(face.darts[s, 0])
            out.setdefault(v, []).append((face.id, float(face.corner_angles[s])))
    return out


def hull_area(X) -> float:
    hull = convex_hull(X)
    zc = X[hull, 0] + 1j * X[hull, 1]
    return _shoelace(zc)
