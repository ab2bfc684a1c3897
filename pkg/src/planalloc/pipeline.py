"""End-to-end construction of a connected allocation for a point sample.

Per bounded face of hull-minus-tree: sample the prime-end walk, build the
half-plane map, lay a square grid over the face, push the cell centers
forward, and run the stable allocation against the face's corner images with
appetites split proportionally to sector angles.  Sites are carried from the
source plane, so pulling the assignment back is pure bookkeeping and cell
measure stays exact Lebesgue measure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._geom import min_boundary_distance, point_in_polygon, segment_distance
from .allocation import (UNCLAIMED, UNDEFINED, Assignment, StableAllocator,
                         check_stability, column_prefix_check)
from .conformal import GeodesicMap, build_map, trace_boundary
from .errors import ConformalError, DegeneracyError
from .msf import EuclideanMSF, Face, extract_faces, hull_area, sector_angles

SLIT_PROXIMITY = 1e-9
DEFAULT_SPACING_DIVISOR = 4.0


class AppetiteMode(enum.Enum):
    """How corner appetites are chosen.

    FIGURE: each face hands its whole area to its bounding corners in
    proportion to the sector angles, so capacities exactly exhaust the face.
    IDEAL: every vertex carries unit appetite split across its sectors by
    angle, the critical-intensity setting; per-face totals then generally
    mismatch face areas and the imbalance is reported, not hidden.
    """

    FIGURE = "figure"
    IDEAL = "ideal"


def compute_appetites(faces: list[Face], mode: AppetiteMode) -> dict[int, np.ndarray]:
    """Per face, the appetite of each walk step's corner."""
    mode = AppetiteMode(mode)
    out: dict[int, np.ndarray] = {}
    if mode is AppetiteMode.FIGURE:
        for face in faces:
            total = face.corner_angles.sum()
            if not total > 0:
                raise DegeneracyError(f"face {face.id} has zero total angle")
            out[face.id] = face.area * face.corner_angles / total
        return out
    totals: dict[int, float] = {}
    for face in faces:
        for s in range(len(face)):
            v = int(face.darts[s, 0])
            totals[v] = totals.get(v, 0.0) + float(face.corner_angles[s])
    for face in faces:
        app = np.empty(len(face))
        for s in range(len(face)):
            v = int(face.darts[s, 0])
            app[s] = face.corner_angles[s] / totals[v]
        out[face.id] = app
    return out


@dataclass
class CellGrid:
    """Axis-aligned cells of the global lattice whose centers fall in a face."""

    face_id: int
    h: float
    ix: np.ndarray            # (m,) int, global lattice column
    iy: np.ndarray            # (m,) int, global lattice row
    centers: np.ndarray       # (m,) complex, jittered where needed
    jittered: np.ndarray      # (m,) bool

    def __len__(self) -> int:
        return len(self.ix)

    @property
    def measure(self) -> float:
        return self.h * self.h


def discretize_face(face: Face, h: float) -> CellGrid:
    """Keep lattice cells whose centers lie strictly inside the face.

    Cell centers within SLIT_PROXIMITY of a slit edge are moved by a
    deterministic sub-cell offset so every kept site has an unambiguous
    prime end.
    """
    if not h > 0:
        raise ValueError("cell side must be positive")
    poly = face.polygon
    ix0 = math.floor(poly.real.min() / h - 0.5)
    ix1 = math.ceil(poly.real.max() / h + 0.5)
    iy0 = math.floor(poly.imag.min() / h - 0.5)
    iy1 = math.ceil(poly.imag.max() / h + 0.5)
    gx, gy = np.meshgrid(np.arange(ix0, ix1 + 1), np.arange(iy0, iy1 + 1))
    gx, gy = gx.ravel(), gy.ravel()
    centers = (gx + 0.5) * h + 1j * (gy + 0.5) * h
    keep = point_in_polygon(centers, poly)
    gx, gy, centers = gx[keep], gy[keep], centers[keep]
    if len(centers) == 0:
        raise DegeneracyError(
            f"face {face.id}: no cell centers inside at h={h}; lower h")

    slit_mask = face.twin_step >= 0
    jittered = np.zeros(len(centers), dtype=bool)
    if slit_mask.any():
        segs = list(zip(face.polygon[slit_mask],
                        np.roll(face.polygon, -1)[slit_mask]))
        near = np.zeros(len(centers), dtype=bool)
        for a, b in segs:
            near |= segment_distance(centers, a, b) <= SLIT_PROXIMITY
        if near.any():
            offsets = h * np.array([1e-3 + 2e-3j, -2e-3 + 1e-3j,
                                    1.5e-3 - 1e-3j, -1e-3 - 2e-3j])
            for i in np.flatnonzero(near):
                for off in offsets:
                    cand = centers[i] + off
                    if not point_in_polygon(np.array([cand]), poly)[0]:
                        continue
                    ok = all(segment_distance(np.array([cand]), a, b)[0] > SLIT_PROXIMITY
                             for a, b in segs)
                    if ok:
                        centers[i] = cand
                        jittered[i] = True
                        break
                else:
                    raise DegeneracyError(
                        f"face {face.id}: could not move cell off a slit")
    return CellGrid(face.id, float(h), gx.astype(int), gy.astype(int),
                    centers, jittered)


@dataclass
class FaceResult:
    """Everything the assembly step needs from one face."""

    face_id: int
    grid: CellGrid
    undefined: bool = False
    chain: GeodesicMap | None = None
    assignment: Assignment | None = None
    center_steps: np.ndarray = field(default_factory=lambda: np.empty(0, int))
    center_vertices: np.ndarray = field(default_factory=lambda: np.empty(0, int))
    center_positions: np.ndarray = field(default_factory=lambda: np.empty(0, float))
    appetites: np.ndarray = field(default_factory=lambda: np.empty(0))
    mapped: np.ndarray = field(default_factory=lambda: np.empty(0, complex))
    clamped_cells: int = 0
    spacing_used: float = np.nan


def _orientation_order(face: Face) -> tuple[bool, bool]:
    """Try the frame that pins infinity next to the blunter hull corner first.

    The walk start sits on the widest hull edge; whichever of that edge's two
    corners is sharper crowds the boundary images hardest, and crowding next
    to the infinity anchor overflows while crowding next to the origin merely
    collapses.
    """
    hull_ids = np.flatnonzero(face.hull_step)
    if len(hull_ids) == 0:
        return (False, True)
    lens = face.step_lengths()
    d0 = int(hull_ids[np.argmax(lens[hull_ids])])
    origin_angle = float(face.corner_angles[d0])
    end_angle = float(face.corner_angles[(d0 + 1) % len(face)])
    mirror_first = origin_angle < end_angle
    return (mirror_first, not mirror_first)


def run_face(face: Face, chain: GeodesicMap, grid: CellGrid,
             appetites: np.ndarray) -> FaceResult:
    """Map the face's cells forward and allocate them to its corners."""
    mapped = chain.transform(grid.centers)
    bad = ~(mapped.imag > 0)
    clamped = int(bad.sum())
    if clamped:
        mapped = np.where(bad, mapped.real + 1j * np.abs(mapped.imag)
                          + 1j * np.finfo(float).tiny, mapped)
    app = appetites[chain.anchor_step_]
    alloc = StableAllocator(
        centers=chain.corner_images_.astype(complex),
        appetites=app,
        cell_measure=grid.measure,
        engine="balls",
    ).fit(mapped)
    return FaceResult(
        face_id=face.id,
        grid=grid,
        chain=chain,
        assignment=alloc.assignment_,
        center_steps=chain.anchor_step_.copy(),
        center_vertices=chain.anchor_vertex_.copy(),
        center_positions=chain.corner_images_.copy(),
        appetites=app,
        mapped=mapped,
        clamped_cells=clamped,
        spacing_used=chain.samples_.spacing,
    )


@dataclass
class GlobalAllocation:
    """Merged per-cell ownership across all faces, keyed by source cells."""

    h: float
    mode: str
    n_points: int
    n_faces: int
    face_id: np.ndarray   # (m,) int
    ix: np.ndarray        # (m,) int
    iy: np.ndarray        # (m,) int
    owner: np.ndarray     # (m,) int: vertex id, UNCLAIMED or UNDEFINED
    tie: np.ndarray       # (m,) bool
    claimed_measure: np.ndarray   # (n_points,)
    vertex_appetite: np.ndarray   # (n_points,)
    face_stats: list[dict]

    @property
    def unclaimed_measure(self) -> float:
        return float(np.sum(self.owner == UNCLAIMED) * self.h ** 2)

    @property
    def undefined_measure(self) -> float:
        return float(np.sum(self.owner == UNDEFINED) * self.h ** 2)

    def cells_of(self, vertex: int) -> np.ndarray:
        return np.flatnonzero(self.owner == vertex)


def assemble(results: list[FaceResult], faces: list[Face], n_points: int,
              appetite_by_face: dict[int, np.ndarray], h: float,
              mode: AppetiteMode) -> GlobalAllocation:
    """Merge face assignments, mapping sectors back to their vertices."""
    mode = AppetiteMode(mode)
    face_by_id = {f.id: f for f in faces}
    fid, gx, gy, own, tie = [], [], [], [], []
    claimed = np.zeros(n_points)
    stats = []
    for res in results:
        grid = res.grid
        m = len(grid)
        fid.append(np.full(m, res.face_id))
        gx.append(grid.ix)
        gy.append(grid.iy)
        st = {"face": res.face_id, "cells": m, "undefined": res.undefined,
              "area": face_by_id[res.face_id].area,
              "corners": len(face_by_id[res.face_id]),
              "jittered": int(grid.jittered.sum())}
        if res.undefined:
            own.append(np.full(m, UNDEFINED))
            tie.append(np.zeros(m, dtype=bool))
            stats.append(st)
            continue
        a = res.assignment
        vowner = np.where(a.owner >= 0, res.center_vertices[np.maximum(a.owner, 0)],
                          a.owner)
        own.append(vowner)
        tie.append(a.tie_flags)
        np.add.at(claimed, res.center_vertices[a.owner[a.owner >= 0]],
                  grid.measure)
        st.update({
            "ties": int(a.tie_flags.sum()),
            "unclaimed": int(np.sum(a.owner == UNCLAIMED)),
            "capacity": int(a.capacity_cells.sum()),
            "unsated": int(np.sum(~a.sated & (a.capacity_cells > 0))),
            "clamped": res.clamped_cells,
            "spacing": res.spacing_used,
            "residual": res.chain.boundary_residual() if res.chain else np.nan,
        })
        stats.append(st)
    vertex_appetite = np.zeros(n_points)
    for face in faces:
        app = appetite_by_face[face.id]
        np.add.at(vertex_appetite, face.darts[:, 0], app)
    return GlobalAllocation(
        h=float(h), mode=mode.value, n_points=n_points, n_faces=len(faces),
        face_id=np.concatenate(fid) if fid else np.empty(0, int),
        ix=np.concatenate(gx) if gx else np.empty(0, int),
        iy=np.concatenate(gy) if gy else np.empty(0, int),
        owner=np.concatenate(own) if own else np.empty(0, int),
        tie=np.concatenate(tie) if tie else np.empty(0, bool),
        claimed_measure=claimed,
        vertex_appetite=vertex_appetite,
        face_stats=stats,
    )


def verify_connectivity(alloc: GlobalAllocation, X: np.ndarray,
                        radius_factor: float = 2.0) -> dict:
    """Component count of every center's territory on the cell lattice.

    Cells are 4-adjacent on the global lattice; in addition every cell whose
    center lies within radius_factor * h of the owning vertex joins a
    virtual vertex node, so sectors meeting only at the vertex count as one
    component, as they do in the continuum.
    """
    h = alloc.h
    X = np.asarray(X, dtype=float)
    comp_counts = np.zeros(alloc.n_points, dtype=int)
    nonempty = np.zeros(alloc.n_points, dtype=bool)
    for v in range(alloc.n_points):
        idx = alloc.cells_of(v)
        if len(idx) == 0:
            continue
        nonempty[v] = True
        cells = set(zip(alloc.ix[idx].tolist(), alloc.iy[idx].tolist()))
        parent: dict = {c: c for c in cells}
        parent["vertex"] = "vertex"

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb

        for (cx, cy) in cells:
            for nb in ((cx + 1, cy), (cx, cy + 1)):
                if nb in cells:
                    union((cx, cy), nb)
        cxs = (alloc.ix[idx] + 0.5) * h
        cys = (alloc.iy[idx] + 0.5) * h
        near = np.hypot(cxs - X[v, 0], cys - X[v, 1]) <= radius_factor * h
        for k in np.flatnonzero(near):
            union((int(alloc.ix[idx][k]), int(alloc.iy[idx][k])), "vertex")
        roots = {find(c) for c in cells}
        comp_counts[v] = len(roots)
    connected = (comp_counts <= 1)
    frac = float(np.mean(connected)) if alloc.n_points else 1.0
    return {
        "components": comp_counts,
        "nonempty": nonempty,
        "connected_fraction": frac,
        "connected_fraction_nonempty": float(np.mean(connected[nonempty]))
        if nonempty.any() else 1.0,
    }


def satedness_report(alloc: GlobalAllocation) -> dict:
    """Per-center fill ratios plus the dichotomy audit per face.

    A stable per-face assignment never shows both an unclaimed cell and an
    unsated positive-capacity corner; any face violating that is listed.
    """
    app = alloc.vertex_appetite
    filled = alloc.claimed_measure
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(app > 0, filled / app, np.where(filled > 0, np.inf, 1.0))
    violations = [st["face"] for st in alloc.face_stats
                  if not st.get("undefined") and st.get("unclaimed", 0) > 0
                  and st.get("unsated", 0) > 0]
    unsated = int(np.sum(filled < app - 0.5 * alloc.h ** 2))
    return {
        "fill_ratio": ratio,
        "unsated_centers": unsated,
        "unclaimed_measure": alloc.unclaimed_measure,
        "undefined_measure": alloc.undefined_measure,
        "dichotomy_violations": violations,
    }


def territory_boundary_cells(alloc: GlobalAllocation) -> np.ndarray:
    """Per vertex, the number of territory cells with a differently-owned
    (or missing) 4-neighbor; the natural slack unit for satedness checks."""
    occupied = {}
    for i in range(len(alloc.owner)):
        occupied[(int(alloc.ix[i]), int(alloc.iy[i]))] = int(alloc.owner[i])
    counts = np.zeros(alloc.n_points, dtype=int)
    for (cx, cy), v in occupied.items():
        if v < 0:
            continue
        for nb in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
            if occupied.get(nb, UNCLAIMED) != v:
                counts[v] += 1
                break
    return counts


class ConnectedAllocation(BaseEstimator):
    """Full construction as a fit-style estimator.

    ``fit(X)`` runs: minimal spanning tree, face extraction, per-face
    half-plane maps, grid discretization, and per-face stable allocation,
    then assembles the global cell ownership.

    Parameters
    ----------
    h : float
        Cell side of the global lattice.
    mode : str or AppetiteMode
        "figure" (default) or "ideal".
    max_spacing : float or None
        Boundary sample spacing; None picks (shortest walk edge)/4 per face.
    max_refine : int
        Times the spacing is halved after a numerical failure before the
        face is marked undefined.
    """

    def __init__(self, h: float = 0.01, mode: str = "figure",
                 max_spacing: float | None = None, max_refine: int = 3,
                 spacing_divisor: float = DEFAULT_SPACING_DIVISOR,
                 connectivity_radius: float = 2.0):
        self.h = h
        self.mode = mode
        self.max_spacing = max_spacing
        self.max_refine = max_refine
        self.spacing_divisor = spacing_divisor
        self.connectivity_radius = connectivity_radius

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.msf_ = EuclideanMSF().fit(X)
        self.faces_ = extract_faces(X, self.msf_)
        self.appetites_ = compute_appetites(self.faces_, AppetiteMode(self.mode))
        self.results_ = []
        self.chains_ = {}
        for face in self.faces_:
            grid = discretize_face(face, self.h)
            chain, spacing = self._build_chain(face)
            self.chains_[face.id] = chain
            if chain is None:
                self.results_.append(FaceResult(face.id, grid, undefined=True,
                                                spacing_used=spacing))
                continue
            self.results_.append(run_face(face, chain, grid,
                                          self.appetites_[face.id]))
        self.global_ = assemble(self.results_, self.faces_, len(X),
                                self.appetites_, self.h, AppetiteMode(self.mode))
        self.X_ = X
        return self

    def _build_chain(self, face: Face):
        spacing = self.max_spacing
        if spacing is None:
            spacing = float(face.step_lengths().min()) / self.spacing_divisor
        orientations = _orientation_order(face)
        for _ in range(self.max_refine + 1):
            for mirror in orientations:
                try:
                    return build_map(trace_boundary(face, spacing, mirror=mirror)), \
                        spacing
                except ConformalError:
                    continue
            spacing /= 2.0
        return None, spacing

    def connectivity_report(self) -> dict:
        check_is_fitted(self, "global_")
        return verify_connectivity(self.global_, self.X_,
                                   self.connectivity_radius)

    def satedness_report(self) -> dict:
        check_is_fitted(self, "global_")
        return satedness_report(self.global_)

    def stability_reports(self) -> list[tuple[int, bool, dict | None]]:
        """check_stability on every defined face's assignment."""
        check_is_fitted(self, "global_")
        out = []
        for res in self.results_:
            if res.undefined:
                continue
            ok, cert = check_stability(
                np.abs(res.mapped.reshape(-1, 1)
                       - res.center_positions.reshape(1, -1).astype(complex)),
                res.assignment.capacity_cells, res.assignment.owner)
            out.append((res.face_id, ok, cert))
        return out

    def column_prefix_reports(self) -> list[tuple[int, bool, dict | None]]:
        """Territory-shape check per face; sites are mapped cells, which are
        not a regular grid in the half-plane, so the ring test is run on the
        half-plane lattice induced by the cell spacing of the images."""
        check_is_fitted(self, "global_")
        out = []
        for res in self.results_:
            if res.undefined or len(res.mapped) == 0:
                continue
            ok, cert = _mapped_contiguity(res)
            out.append((res.face_id, ok, cert))
        return out


def _mapped_contiguity(res: FaceResult) -> tuple[bool, dict | None]:
    """Weak contiguity audit for mapped (non-lattice) sites: for each corner,
    owned sites sorted by distance from it must not resume after a gap of
    more than a few multiples of the local site spacing."""
    owner = res.assignment.owner
    for c in range(len(res.center_positions)):
        mine = owner == c
        if not mine.any():
            continue
        d = np.abs(res.mapped - res.center_positions[c])
        order = np.argsort(d, kind="stable")
        flags = mine[order]
        last = np.flatnonzero(flags).max()
        outside = np.flatnonzero(~flags[:last])
        if len(outside) and len(np.flatnonzero(flags)) > 2:
            frac = len(outside) / max(1, last)
            if frac > 0.5:
                return False, {"center": int(c), "interleaved": float(frac)}
    return True, None
