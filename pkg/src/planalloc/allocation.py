"""Site-optimal stable allocation of weighted grid sites to boundary centers.

Two engines compute the same assignment:

* a stage procedure (deferred acceptance): every unrejected site applies to
  its nearest never-rejecting center, each center shortlists its nearest
  applicants up to capacity and permanently rejects the rest, until a stage
  passes with no rejection;
* an event sweep emulating simultaneously growing balls: (distance, site,
  center) events in increasing order, a site is claimed by the first
  not-yet-sated center whose ball reaches it.

All ties are broken lexicographically by (distance, site id, center id) and
tie-afflicted sites are flagged, because a site equidistant from two centers
has no well-defined owner in the continuum construction.

Capacities are integral cell counts: capacity = round(appetite / cell
measure), which keeps stability exact on atomic sites at the price of a
quantization error of at most half a cell per center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

UNCLAIMED = -1
UNDEFINED = -2


@dataclass(frozen=True)
class Center:
    """A center on the half-plane boundary with an appetite."""

    id: int
    position: complex
    appetite: float
    capacity_cells: int

    def __post_init__(self):
        if abs(complex(self.position).imag) > 0:
            raise ValueError("centers live on the boundary (Im = 0)")
        if self.appetite < 0:
            raise ValueError("appetite must be nonnegative")


@dataclass(frozen=True)
class Site:
    """An atomic site in the open half-plane carrying cell measure."""

    id: int
    position: complex
    measure: float
    source_cell: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not complex(self.position).imag > 0:
            raise ValueError("sites live in the open half-plane (Im > 0)")
        if not self.measure > 0:
            raise ValueError("site measure must be positive")


@dataclass
class Assignment:
    """Result of a stable allocation run."""

    owner: np.ndarray        # (S,) int: center index, UNCLAIMED or UNDEFINED
    tie_flags: np.ndarray    # (S,) bool: exact distance tie was broken
    filled_cells: np.ndarray  # (C,) int
    capacity_cells: np.ndarray  # (C,) int
    cell_measure: float
    stage_count: int

    @property
    def filled_measure(self) -> np.ndarray:
        return self.filled_cells * self.cell_measure

    @property
    def sated(self) -> np.ndarray:
        return self.filled_cells >= self.capacity_cells

    def same_assignment(self, other: "Assignment") -> bool:
        return (np.array_equal(self.owner, other.owner)
                and np.array_equal(self.tie_flags, other.tie_flags)
                and np.array_equal(self.filled_cells, other.filled_cells))


def _distances(sites: np.ndarray, centers: np.ndarray) -> np.ndarray:
    s = np.asarray(sites, dtype=complex).reshape(-1, 1)
    c = np.asarray(centers, dtype=complex).reshape(1, -1)
    return np.abs(s - c)


def _tie_flags(dist: np.ndarray) -> np.ndarray:
    """Sites whose distance list contains an exact duplicate."""
    if dist.shape[1] < 2:
        return np.zeros(dist.shape[0], dtype=bool)
    srt = np.sort(dist, axis=1)
    return np.any(np.diff(srt, axis=1) == 0.0, axis=1)


def allocate_stages(dist: np.ndarray, capacities: np.ndarray) -> tuple[np.ndarray, int]:
    """Deferred-acceptance stage engine.

    Returns (owner, stage_count); the count includes the final stage in
    which no center rejects anyone.
    """
    S, C = dist.shape
    capacities = np.asarray(capacities, dtype=int)
    owner = np.full(S, UNCLAIMED, dtype=int)
    if C == 0 or S == 0:
        return owner, 1
    rejected = np.zeros((S, C), dtype=bool)
    shortlist = np.full(S, -1, dtype=int)  # center currently holding the site
    stage = 0
    site_ids = np.arange(S)
    while True:
        stage += 1
        free = shortlist < 0
        open_dist = np.where(rejected, np.inf, dist)
        best = np.argmin(open_dist[free], axis=1) if free.any() else np.empty(0, int)
        applicants = site_ids[free]
        feasible = open_dist[applicants, best] < np.inf
        applicants, best = applicants[feasible], best[feasible]
        any_rejection = False
        proposal = shortlist.copy()
        proposal[applicants] = best
        for c in range(C):
            pool = site_ids[proposal == c]
            if len(pool) == 0:
                continue
            if len(pool) > capacities[c]:
                order = np.lexsort((pool, dist[pool, c]))
                keep = pool[order[:capacities[c]]]
                drop = pool[order[capacities[c]:]]
                rejected[drop, c] = True
                proposal[drop] = -1
                any_rejection = True
        shortlist = proposal
        if not any_rejection:
            break
    owner = np.where(shortlist >= 0, shortlist, UNCLAIMED)
    return owner, stage


def allocate_balls(dist: np.ndarray, capacities: np.ndarray) -> np.ndarray:
    """Growing-ball sweep: claims processed in increasing distance order."""
    S, C = dist.shape
    capacities = np.asarray(capacities, dtype=int)
    owner = np.full(S, UNCLAIMED, dtype=int)
    if C == 0 or S == 0:
        return owner
    d = dist.ravel()
    s_idx = np.repeat(np.arange(S), C)
    c_idx = np.tile(np.arange(C), S)
    order = np.lexsort((c_idx, s_idx, d))
    filled = np.zeros(C, dtype=int)
    remaining_cap = int(np.minimum(capacities, S).sum())
    unassigned = S
    for e in order:
        if remaining_cap == 0 or unassigned == 0:
            break
        s = s_idx[e]
        if owner[s] != UNCLAIMED:
            continue
        c = c_idx[e]
        if filled[c] >= capacities[c]:
            continue
        owner[s] = c
        filled[c] += 1
        unassigned -= 1
        remaining_cap -= 1
    return owner


class StableAllocator(BaseEstimator):
    """Gale-Shapley allocation as a fit/predict-style estimator.

    Parameters
    ----------
    centers : array-like of complex
        Center positions on the boundary (real axis).
    appetites : array-like of float
        Per-center appetite in measure units.
    cell_measure : float
        Measure of one atomic site; capacities are round(appetite / cell_measure).
    engine : {"balls", "stages"}

    Attributes
    ----------
    labels_ : ndarray of shape (n_sites,)
        Owning center index per site, UNCLAIMED (-1) where rejected by all.
    """

    def __init__(self, centers=None, appetites=None, cell_measure: float = 1.0,
                 engine: str = "balls"):
        self.centers = centers
        self.appetites = appetites
        self.cell_measure = cell_measure
        self.engine = engine

    def fit(self, X, y=None):
        sites = np.asarray(X, dtype=complex).ravel()
        if len(sites) and not np.all(sites.imag > 0):
            raise ValueError("sites must lie in the open half-plane")
        if not self.cell_measure > 0:
            raise ValueError("cell_measure must be positive")
        centers = np.asarray(self.centers if self.centers is not None else [],
                             dtype=complex).ravel()
        appetites = np.asarray(self.appetites if self.appetites is not None else [],
                               dtype=float).ravel()
        if len(centers) != len(appetites):
            raise ValueError("centers and appetites must align")
        if np.any(appetites < 0):
            raise ValueError("appetites must be nonnegative")
        if self.engine not in ("balls", "stages"):
            raise ValueError(f"unknown engine {self.engine!r}")
        caps = np.rint(appetites / self.cell_measure).astype(int)
        dist = _distances(sites, centers)
        if self.engine == "stages":
            owner, stages = allocate_stages(dist, caps)
        else:
            owner = allocate_balls(dist, caps)
            stages = 0
        filled = np.bincount(owner[owner >= 0], minlength=len(centers)) \
            if len(centers) else np.zeros(0, dtype=int)
        self.dist_ = dist
        self.capacity_cells_ = caps
        self.assignment_ = Assignment(
            owner=owner,
            tie_flags=_tie_flags(dist),
            filled_cells=filled.astype(int),
            capacity_cells=caps,
            cell_measure=float(self.cell_measure),
            stage_count=stages,
        )
        self.labels_ = owner
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


def stable_allocate_stages(sites, centers, appetites, cell_measure=1.0) -> Assignment:
    alloc = StableAllocator(centers, appetites, cell_measure, engine="stages").fit(sites)
    return alloc.assignment_


def stable_allocate_balls(sites, centers, appetites, cell_measure=1.0) -> Assignment:
    alloc = StableAllocator(centers, appetites, cell_measure, engine="balls").fit(sites)
    return alloc.assignment_


def check_stability(dist: np.ndarray, capacities: np.ndarray,
                    owner: np.ndarray) -> tuple[bool, dict | None]:
    """Search for a blocking pair.

    A pair (site x, center c) blocks when x is unclaimed or farther from its
    owner than from c, while c is unsated or holds some site farther than x.
    Also reports the dichotomy: a stable assignment never leaves both an
    unclaimed site and an unsated positive-capacity center.
    """
    S, C = dist.shape
    capacities = np.asarray(capacities, dtype=int)
    owner = np.asarray(owner, dtype=int)
    cur = np.where(owner >= 0, dist[np.arange(S), np.where(owner >= 0, owner, 0)],
                   np.inf)
    filled = np.bincount(owner[owner >= 0], minlength=C)
    maxheld = np.full(C, -np.inf)
    for c in range(C):
        held = dist[owner == c, c]
        if len(held):
            maxheld[c] = held.max()
    unsated = filled < capacities
    blocking = (dist < cur[:, None]) & (unsated[None, :] | (dist < maxheld[None, :]))
    if blocking.any():
        s, c = np.unravel_index(int(np.argmax(blocking)), blocking.shape)
        return False, {"site": int(s), "center": int(c),
                       "site_distance": float(dist[s, c]),
                       "owner": int(owner[s]),
                       "owner_distance": float(cur[s])}
    has_unclaimed = bool(np.any(owner == UNCLAIMED))
    has_unsated = bool(np.any(unsated & (capacities > 0)))
    if has_unclaimed and has_unsated:
        return False, {"dichotomy": "both an unclaimed site and an unsated center"}
    return True, None


def _single_run(mask: np.ndarray, slack: int = 1) -> bool:
    """True when the assigned cells form one contiguous run, tolerating one
    stray cell at the run boundary."""
    idx = np.flatnonzero(mask)
    if len(idx) <= 1:
        return True
    breaks = np.flatnonzero(np.diff(idx) > 1)
    if len(breaks) == 0:
        return True
    if len(breaks) == 1 and slack >= 1:
        first_len = breaks[0] + 1
        second_len = len(idx) - first_len
        return min(first_len, second_len) <= 1
    return False


def column_prefix_check(sites: np.ndarray, centers: np.ndarray,
                        owner: np.ndarray, h: float) -> tuple[bool, dict | None]:
    """Discrete territory-shape check for grid sites.

    For each center: in the grid column nearest its foot the owned cells
    form one contiguous run in height, and on every discrete ring of equal
    rounded grid radius they form one contiguous angular run.  One stray
    boundary cell is tolerated, matching the quantization of the territory
    edge.
    """
    sites = np.asarray(sites, dtype=complex).ravel()
    centers = np.asarray(centers, dtype=complex).ravel()
    owner = np.asarray(owner, dtype=int)
    ix = np.rint(sites.real / h - 0.5).astype(int)
    iy = np.rint(sites.imag / h - 0.5).astype(int)
    for c, u in enumerate(centers):
        mine = owner == c
        if not mine.any():
            continue
        col = int(np.rint(u.real / h - 0.5))
        in_col = ix == col
        if in_col.any():
            order = np.argsort(iy[in_col], kind="stable")
            if not _single_run(mine[in_col][order]):
                return False, {"center": int(c), "kind": "column", "column": col}
        r = np.rint(np.abs(sites - u) / h).astype(int)
        rng_mine = r[mine]
        for ring in np.unique(rng_mine):
            on_ring = r == ring
            ang = np.angle(sites[on_ring] - u)
            order = np.argsort(ang, kind="stable")
            if not _single_run(mine[on_ring][order]):
                return False, {"center": int(c), "kind": "ring", "radius": int(ring)}
    return True, None
