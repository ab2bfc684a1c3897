"""Numerical Riemann map of a slit face onto the upper half-plane ``H``.

The map is a composition of elementary slit maps in the geodesic-algorithm
family: each step opens the hyperbolic geodesic from a boundary base point
to the image ``a`` of the next boundary sample, using

    w = sqrt(M(z)^2 + c^2),   M(z) = z / (1 - z/b),
    b = |a|^2 / Re(a),        c = |a|^2 / Im(a),

with the square-root branch continuous from the open half-plane.  Walks
whose boundary contains internal tree slits revisit each slit edge once per
side; the second visit opens nothing new, so the builder skips those pieces
and instead tracks both prime-end images of every opened point, re-attaching
at the stored image when the walk returns to fresh boundary.

Boundary images of the two sides of a slit can approach each other to within
machine precision (crowding); this is reported, never repaired.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._geom import interior_point, min_boundary_distance, segment_distance
from .errors import ConformalError
from .msf import Face

INF = float("inf")

# Faces with more corners than this exceed double-precision crowding headroom.
CORNER_ACCURACY_LIMIT = 60


def slit_params(a: complex) -> tuple[float, float]:
    """Elementary-map parameters (b, c) for the geodesic from 0 to tip a."""
    a = complex(a)
    if not a.imag > 0:
        raise ConformalError(f"slit tip must lie in the open half-plane, got {a}")
    m2 = a.real * a.real + a.imag * a.imag
    b = INF if a.real == 0 else m2 / a.real
    return b, m2 / a.imag


def elementary_forward(b: float, c: float, z) -> np.ndarray:
    """Forward slit map sqrt(M(z)^2 + c^2), branch continuous from H.

    Fixes 0 (up to the two prime ends +-c), sends the geodesic tip to 0 and
    the real axis into the real axis, preserving the sign of M.
    """
    z = np.asarray(z, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        if np.isinf(b):
            M = z.copy()
        else:
            M = z / (1.0 - z / b)
            M = np.where(np.isinf(z), -b + 0j, M)
        w = M * np.sqrt(1.0 + (c / M) ** 2)
    return np.where(M == 0, complex(c), w)


def _forward_real(base: float, b: float, c: float, x: np.ndarray) -> np.ndarray:
    """Forward step restricted to the real axis; exact sign bookkeeping."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if np.isinf(b):
            M = np.where(np.isinf(x), x, x - base)
        else:
            M = np.where(np.isinf(x), -b, (x - base) / (1.0 - (x - base) / b))
        out = np.sign(M) * np.hypot(M, c)
    return np.where(M == 0, c, out)


def elementary_inverse(b: float, c: float, w) -> np.ndarray:
    """Inverse slit map M^inv(s(w)), s(w) = sqrt(w-c)*sqrt(w+c).

    The two-factor form puts the branch cuts on the real segments so that s
    maps H onto H minus the vertical slit [0, ic] and s(w) ~ w at infinity.
    """
    w = np.asarray(w, dtype=complex)
    u = np.sqrt(w - c) * np.sqrt(w + c)
    if np.isinf(b):
        return u
    return u / (1.0 + u / b)


@dataclass
class GapStats:
    """Spread of consecutive corner images on the half-plane boundary."""

    gaps: np.ndarray
    min: float
    max: float
    ratio: float
    normalized: np.ndarray


def gap_stats(corner_images: np.ndarray) -> GapStats:
    u = np.asarray(corner_images, dtype=float)
    if len(u) < 2:
        raise ValueError("need at least two corner images")
    gaps = np.abs(np.diff(u))
    gmax = float(gaps.max())
    gmin = float(gaps.min())
    ratio = INF if gmin == 0 else gmax / gmin
    normalized = gaps / gmax if gmax > 0 else gaps
    return GapStats(gaps, gmin, gmax, ratio, normalized)


@dataclass
class BoundarySamples:
    """Sampled prime-end walk of a face, ready for map construction.

    ``points`` follow the counterclockwise walk, starting at an interior
    sample of a hull edge.  A slit edge contributes samples on both
    traversals with identical coordinates but distinct walk positions
    (distinct prime ends); ``twin`` links the two.  The ``zip_*`` arrays
    describe the same walk in the reversed (clockwise) order in which the
    builder opens it.
    """

    points: np.ndarray          # (N,) complex
    is_anchor: np.ndarray       # (N,) bool, True at face corners
    anchor_vertex: np.ndarray   # (N,) int, original vertex id or -1
    anchor_step: np.ndarray     # (N,) int, face walk step or -1
    twin: np.ndarray            # (N,) int, matching slit position or -1
    zip_piece_new: np.ndarray   # (N,) bool, indexed by zip position
    zip_split_other: np.ndarray  # (N,) int, zip position or -1
    witness: complex
    slit_segments: np.ndarray = field(default_factory=lambda: np.empty((0, 2), complex))
    face_id: int = -1
    spacing: float = np.nan
    # True when the walk was built from the reflected face; the fitted map
    # then conjugates inputs and outputs so callers see original coordinates.
    mirrored: bool = False

    def __len__(self) -> int:
        return len(self.points)

    @property
    def anchors(self) -> np.ndarray:
        return np.flatnonzero(self.is_anchor)

    @classmethod
    def from_loop(cls, points, anchors=None, witness=None) -> "BoundarySamples":
        """Wrap a plain counterclockwise Jordan loop (no slits).

        The loop is rotated so it starts at a non-anchor sample; every piece
        is fresh boundary.
        """
        pts = np.asarray(points, dtype=complex).ravel()
        n = len(pts)
        if n < 3:
            raise ValueError("need at least three samples")
        mark = np.zeros(n, dtype=bool)
        if anchors is not None:
            mark[np.asarray(anchors, dtype=int)] = True
        start_cand = np.flatnonzero(~mark)
        if len(start_cand) == 0:
            raise ValueError("loop must contain a non-anchor sample to start at")
        start = int(start_cand[0])
        rot = lambda a: np.concatenate([a[start:], a[:start]])
        pts, mark = rot(pts), rot(mark)
        av = np.where(mark, 0, -1)
        if witness is None:
            witness = interior_point(pts)
        return cls(
            points=pts,
            is_anchor=mark,
            anchor_vertex=av.astype(int),
            anchor_step=av.astype(int),
            twin=-np.ones(n, dtype=int),
            zip_piece_new=np.ones(n, dtype=bool),
            zip_split_other=-np.ones(n, dtype=int),
            witness=complex(witness),
        )


def _mirrored_face(face: Face) -> Face:
    """The face reflected across the real axis, walked counterclockwise.

    Reflection flips which end of the walk the map normalization pins at
    infinity, which decides whether boundary crowding overflows or merely
    collapses; the pipeline retries a failed face in the mirrored frame.
    """
    k = len(face)
    rev = np.arange(k - 1, -1, -1)
    darts = face.darts[rev][:, ::-1].copy()
    polygon = np.conj(face.polygon[(rev + 1) % k])
    angles = face.corner_angles[(rev + 1) % k].copy()
    twin = face.twin_step[rev]
    twin = np.where(twin >= 0, k - 1 - twin, -1)
    hull = face.hull_step[rev].copy()
    return Face(face.id, darts, angles, polygon, face.area, twin, hull)


def trace_boundary(face: Face, max_spacing: float,
                   mirror: bool = False) -> BoundarySamples:
    """Sample the prime-end walk of a face at the requested resolution.

    Every dart is subdivided so consecutive samples are at most
    ``max_spacing`` apart; the two traversals of a slit edge reuse the same
    coordinates.  The walk is rotated to start just inside the most finely
    subdivided hull edge, which the builder requires.
    """
    if not max_spacing > 0:
        raise ValueError("max_spacing must be positive")
    if mirror:
        slit_mask = face.twin_step >= 0
        slits = np.column_stack([face.polygon[slit_mask],
                                 np.roll(face.polygon, -1)[slit_mask]]) \
            if slit_mask.any() else np.empty((0, 2), complex)
        work = _mirrored_face(face)
        out = trace_boundary(work, max_spacing, mirror=False)
        # remap steps to the original walk and keep slits in original coords
        k = len(face)
        remap = (k - out.anchor_step) % k
        out.anchor_step = np.where(out.anchor_step >= 0, remap, -1)
        out.slit_segments = slits
        out.mirrored = True
        return out
    k_steps = _subdivision_counts(face, max_spacing)
    shortest = face.step_lengths().min()
    if max_spacing >= shortest:
        warnings.warn(
            f"face {face.id}: max_spacing {max_spacing:.3g} is not below the "
            f"shortest edge {shortest:.3g}; corners-only sampling on some edges")

    nsteps = len(face)
    coords: list[np.ndarray] = []
    for s in range(nsteps):
        k = k_steps[s]
        a = face.polygon[s]
        b = face.polygon[(s + 1) % nsteps]
        t = face.twin_step[s]
        if t >= 0 and t < s:
            other = coords[t]
            # identical coordinates on both traversals, opposite order
            arr = np.empty(k, dtype=complex)
            arr[0] = a
            if k > 1:
                rev = np.concatenate([other[1:], [face.polygon[(t + 1) % nsteps]]])
                arr[1:] = rev[::-1][1:]
        else:
            arr = a + (b - a) * (np.arange(k) / k)
            arr[0] = a
        coords.append(arr)

    sample_dart = np.concatenate([np.full(len(c), s, dtype=int)
                                  for s, c in enumerate(coords)])
    sample_param = np.concatenate([np.arange(len(c), dtype=int) for c in coords])
    pts = np.concatenate(coords)
    n = len(pts)

    hull_ids = np.flatnonzero(face.hull_step)
    if len(hull_ids) == 0:
        raise ConformalError(f"face {face.id} has no hull edge to anchor the walk")
    start_dart = int(hull_ids[np.argmax(k_steps[hull_ids])])
    if k_steps[start_dart] < 3:
        raise ConformalError(
            f"face {face.id}: widest hull edge carries {k_steps[start_dart]} "
            "pieces; need at least 3 (use finer spacing)")
    where = {(int(d), int(t)): i for i, (d, t) in enumerate(zip(sample_dart, sample_param))}
    start = where[(start_dart, 1)]

    def rot_idx(i):
        return (i - start) % n

    perm = np.argsort([rot_idx(i) for i in range(n)], kind="stable")
    pts = pts[perm]
    sample_dart = sample_dart[perm]
    sample_param = sample_param[perm]
    pos_of = {(int(d), int(t)): i for i, (d, t) in enumerate(zip(sample_dart, sample_param))}

    is_anchor = sample_param == 0
    anchor_vertex = np.where(is_anchor, face.darts[sample_dart, 0], -1)
    anchor_step = np.where(is_anchor, sample_dart, -1)

    twin = -np.ones(n, dtype=int)
    for i in range(n):
        d, t = int(sample_dart[i]), int(sample_param[i])
        td = int(face.twin_step[d])
        if td >= 0 and t >= 1:
            twin[i] = pos_of[(td, k_steps[d] - t)] if k_steps[d] - t >= 1 \
                else pos_of[(td, 0)]  # unreachable: t <= k-1
    twin[twin >= 0] = twin[twin >= 0]

    # which member of each twin pair is opened: the one met first when the
    # walk is traversed in reverse, i.e. the one later in the rotated order
    drawn_dart = np.ones(nsteps, dtype=bool)
    first_pos = {}
    for s in range(nsteps):
        first_pos[s] = pos_of[(s, 0)]
    for s in range(nsteps):
        t = int(face.twin_step[s])
        if t >= 0:
            drawn_dart[s] = first_pos[s] > first_pos[t]

    def piece_dart(p):
        """Dart owning the walk piece between positions p and p-1."""
        if sample_param[p] >= 1:
            return int(sample_dart[p])
        return int(sample_dart[(p - 1) % n])

    zip_order = np.concatenate([[0], np.arange(n - 1, 0, -1)])
    zip_rank = np.empty(n, dtype=int)
    zip_rank[zip_order] = np.arange(n)
    zip_piece_new = np.ones(n, dtype=bool)
    zip_split_other = -np.ones(n, dtype=int)
    for i in range(n - 1):
        p = int(zip_order[i])
        dd = piece_dart(p)
        zip_piece_new[i] = drawn_dart[dd]
        td = int(face.twin_step[dd])
        if td >= 0 and drawn_dart[dd]:
            k = k_steps[dd]
            if sample_param[p] >= 1:
                tgt = pos_of[(td, k - int(sample_param[p]))] \
                    if k - int(sample_param[p]) >= 1 else pos_of[(td, 0)]
            else:
                tgt = pos_of[(td, 0)]
            zip_split_other[i] = zip_rank[tgt]

    slit_mask = face.twin_step >= 0
    slits = np.column_stack([face.polygon[slit_mask],
                             np.roll(face.polygon, -1)[slit_mask]]) \
        if slit_mask.any() else np.empty((0, 2), complex)

    return BoundarySamples(
        points=pts,
        is_anchor=is_anchor,
        anchor_vertex=anchor_vertex.astype(int),
        anchor_step=anchor_step.astype(int),
        twin=twin,
        zip_piece_new=zip_piece_new,
        zip_split_other=zip_split_other,
        witness=interior_point(face.polygon),
        slit_segments=slits,
        face_id=face.id,
        spacing=float(max_spacing),
    )


def _subdivision_counts(face: Face, max_spacing: float) -> np.ndarray:
    lens = face.step_lengths()
    k = np.maximum(1, np.ceil(lens / max_spacing - 1e-12).astype(int))
    for s in range(len(face)):
        t = face.twin_step[s]
        if t >= 0:
            kk = max(k[s], k[t])
            k[s] = k[t] = kk
    return k


class GeodesicMap(BaseEstimator):
    """Conformal map of a slit face onto the upper half-plane.

    sklearn-style transformer: ``fit`` consumes a :class:`BoundarySamples`
    walk and composes the elementary-map chain; ``transform`` evaluates the
    forward map on interior points, ``inverse_transform`` the inverse on the
    closed half-plane.

    Parameters
    ----------
    boundary_tol : float
        Relative bound on |Im| of mapped boundary samples used by
        :meth:`boundary_residual` consumers.

    Attributes
    ----------
    steps_ : ndarray of shape (m, 3)
        Per step (base, b, c): re-attachment point and slit parameters.
    d_, sign_ : float
        Terminal normalization: Moebius z -> z/(1 - z/d) followed by
        sign * z^2, the sign chosen so the witness lands inside H.
    corner_images_ : ndarray
        Boundary coordinate of every anchor prime end, one per walk visit.
    """

    def __init__(self, boundary_tol: float = 1e-6):
        self.boundary_tol = boundary_tol

    def fit(self, samples: BoundarySamples, y=None):
        n = len(samples)
        if n < 3:
            raise ValueError("need at least three boundary samples")
        if samples.is_anchor[0]:
            raise ConformalError(
                "walk must start at a non-corner hull sample (refine spacing)")
        zip_order = np.concatenate([[0], np.arange(n - 1, 0, -1)])
        zpts = samples.points[zip_order]
        piece_new = samples.zip_piece_new
        split_other = samples.zip_split_other

        s0, s1 = complex(zpts[0]), complex(zpts[1])
        val = np.empty(n, dtype=complex)
        locked = np.zeros(n, dtype=bool)
        val[0] = INF
        locked[0] = True
        val[1] = 0.0
        locked[1] = True
        with np.errstate(divide="ignore", invalid="ignore"):
            val[2:] = 1j * np.sqrt((zpts[2:] - s1) / (zpts[2:] - s0))
            wit = complex(1j * np.sqrt((samples.witness - s1) / (samples.witness - s0)))
        steps = []
        tip = 1
        for j in range(2, n):
            if not piece_new[j - 1]:
                if not locked[j]:
                    raise ConformalError(
                        f"retraced sample {j} has no prime-end image; "
                        "inconsistent slit pairing")
                continue
            base = 0.0 if tip == j - 1 else float(val[j - 1].real)
            a = complex(val[j]) - base
            if not (a.imag > 0):
                raise ConformalError(
                    f"sample image left the half-plane at step {j} "
                    f"(Im = {a.imag:.3g}); finer spacing should help")
            m2 = a.real * a.real + a.imag * a.imag
            b = INF if a.real == 0 else m2 / a.real
            c = m2 / a.imag
            re = _forward_real(base, b, c, val[locked].real)
            val[locked] = re
            free = ~locked
            zf = val[free] - base
            val[free] = elementary_forward(b, c, zf)
            wit = complex(elementary_forward(b, c, np.array([wit - base]))[0])
            val[j] = 0.0
            locked[j] = True
            val[j - 1] = c
            so = split_other[j - 1]
            if so >= 0:
                val[so] = -c
                locked[so] = True
            steps.append((base, b, c))
            tip = j
        if tip != n - 1:
            raise ConformalError(
                "walk does not end on freshly opened boundary; "
                "cannot place the terminal normalization")
        d = float(val[0].real)
        if not np.isfinite(d) or d == 0.0:
            raise ConformalError(f"terminal pole is degenerate (d = {d})")
        pre = val.real.copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            mob = pre / (1.0 - pre / d)
        wit = wit / (1.0 - wit / d)
        wit2 = wit * wit
        if wit2.imag == 0.0:
            raise ConformalError("witness landed on the boundary")
        sign = 1.0 if wit2.imag > 0 else -1.0

        self.n_samples_ = n
        self.s0_, self.s1_ = s0, s1
        self.steps_ = np.array(steps, dtype=float).reshape(-1, 3)
        self.d_ = d
        self.sign_ = sign
        self.mirrored_ = bool(samples.mirrored)
        flip = -1.0 if self.mirrored_ else 1.0
        with np.errstate(invalid="ignore"):
            boundary = flip * sign * mob * mob
        inv_zip = np.empty(n, dtype=int)
        inv_zip[zip_order] = np.arange(n)
        self.boundary_images_ = boundary[inv_zip[np.arange(n)]]
        anchors = samples.anchors
        self.corner_images_ = self.boundary_images_[anchors]
        self.anchor_vertex_ = samples.anchor_vertex[anchors]
        self.anchor_step_ = samples.anchor_step[anchors]
        if len(anchors) and not np.all(np.isfinite(self.corner_images_)):
            raise ConformalError(
                f"face {samples.face_id}: corner images overflow double "
                "precision (extreme crowding)")
        self.scale_ = float(np.max(np.abs(self.corner_images_))) \
            if len(anchors) else float(np.nanmax(np.abs(boundary[np.isfinite(boundary)])))
        self.witness_image_ = flip * sign * np.conj(wit2) if self.mirrored_ \
            else sign * wit2
        self.samples_ = samples
        self.crowding_flag_ = len(anchors) > CORNER_ACCURACY_LIMIT
        if self.crowding_flag_:
            warnings.warn(
                f"face {samples.face_id}: {len(anchors)} corners exceed the "
                f"double-precision accuracy guideline ({CORNER_ACCURACY_LIMIT})")
        return self

    def _forward_raw(self, Z: np.ndarray) -> np.ndarray:
        """Chain evaluation in the frame the walk was zipped in."""
        at_start = Z == self.s0_
        with np.errstate(divide="ignore", invalid="ignore"):
            w = 1j * np.sqrt((Z - self.s1_) / (Z - self.s0_))
            for base, b, c in self.steps_:
                w = elementary_forward(b, c, w - base)
            w = w / (1.0 - w / self.d_)
            w = self.sign_ * w * w
        return np.where(at_start, complex(INF), w)

    def transform(self, Z) -> np.ndarray:
        """Forward map; callers must pass points strictly inside the face."""
        check_is_fitted(self, "steps_")
        Z = np.asarray(Z, dtype=complex)
        scalar = Z.ndim == 0
        Z = np.atleast_1d(Z)
        if self.mirrored_:
            w = -np.conj(self._forward_raw(np.conj(Z)))
        else:
            w = self._forward_raw(Z)
        return w[0] if scalar else w

    def inverse_transform(self, W) -> np.ndarray:
        """Inverse map on the closed half-plane; real input lands on the walk."""
        check_is_fitted(self, "steps_")
        W = np.asarray(W, dtype=complex)
        scalar = W.ndim == 0
        W = np.atleast_1d(W)
        if self.mirrored_:
            W = -np.conj(W)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.sign_ > 0:
                v = np.sqrt(W)
            else:
                v = 1j * np.sqrt(-W)
            v = v / (1.0 + v / self.d_)
            for base, b, c in self.steps_[::-1]:
                v = base + elementary_inverse(b, c, v)
            vv = v * v
            z = (self.s1_ + vv * self.s0_) / (1.0 + vv)
        if self.mirrored_:
            z = np.conj(z)
        return z[0] if scalar else z

    def slit_flags(self, Z, tol: float = 1e-9) -> np.ndarray:
        """True where a query point sits on a slit: its image is prime-end
        ambiguous (the undefined marker of the allocation)."""
        check_is_fitted(self, "steps_")
        segs = self.samples_.slit_segments
        Z = np.atleast_1d(np.asarray(Z, dtype=complex))
        flags = np.zeros(len(Z), dtype=bool)
        for a, b in segs:
            flags |= segment_distance(Z, a, b) <= tol
        return flags

    def boundary_residual(self) -> float:
        """max |Im| of the forward map over recorded boundary samples,
        normalized by the map scale."""
        check_is_fitted(self, "steps_")
        w = self._forward_raw(self.samples_.points[1:])
        finite = np.isfinite(w)
        return float(np.max(np.abs(w[finite].imag)) / self.scale_)

    def gap_stats(self) -> GapStats:
        check_is_fitted(self, "steps_")
        return gap_stats(self.corner_images_)


def build_map(samples: BoundarySamples, boundary_tol: float = 1e-6) -> GeodesicMap:
    """Convenience wrapper: fit a GeodesicMap on a sampled walk."""
    return GeodesicMap(boundary_tol=boundary_tol).fit(samples)


def probe_points(samples: BoundarySamples, count: int, margin: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Random interior probes at least ``margin`` away from the walk."""
    poly = samples.points
    lo_x, hi_x = poly.real.min(), poly.real.max()
    lo_y, hi_y = poly.imag.min(), poly.imag.max()
    out: list[complex] = []
    from ._geom import point_in_polygon
    for _ in range(200):
        cand = (rng.uniform(lo_x, hi_x, 4 * count)
                + 1j * rng.uniform(lo_y, hi_y, 4 * count))
        keep = point_in_polygon(cand, poly)
        cand = cand[keep]
        if len(cand):
            cand = cand[min_boundary_distance(cand, poly) > margin]
            out.extend(cand.tolist())
        if len(out) >= count:
            return np.array(out[:count])
    return np.array(out)
