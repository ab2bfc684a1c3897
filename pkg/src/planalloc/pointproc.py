"""Finite planar point configurations: sampling, general position, file I/O.

Randomness comes from numpy's PCG64 generator, so a (domain, parameters,
seed) triple always reproduces the same configuration bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

# Pairwise distances closer than this are treated as ties and jittered away.
TIE_TOLERANCE = 1e-12
JITTER_MAGNITUDE = 1e-9

# Full O(n^2) general-position audits are skipped above this size.
_GP_CHECK_LIMIT = 4096


@dataclass(frozen=True)
class Domain:
    """Sampling region: a disk or an axis-aligned rectangle."""

    kind: str
    params: tuple[float, ...]

    @classmethod
    def disk(cls, cx: float = 0.0, cy: float = 0.0, r: float = 1.0) -> "Domain":
        if not r > 0:
            raise ValueError(f"disk radius must be positive, got {r}")
        return cls("disk", (float(cx), float(cy), float(r)))

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> "Domain":
        if not (x1 > x0 and y1 > y0):
            raise ValueError("rectangle needs positive width and height")
        return cls("rectangle", (float(x0), float(y0), float(x1), float(y1)))

    @property
    def area(self) -> float:
        if self.kind == "disk":
            return float(np.pi * self.params[2] ** 2)
        x0, y0, x1, y1 = self.params
        return (x1 - x0) * (y1 - y0)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Strict interior test, vectorized over an (n, 2) array."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        if self.kind == "disk":
            cx, cy, r = self.params
            return (points[:, 0] - cx) ** 2 + (points[:, 1] - cy) ** 2 < r * r
        x0, y0, x1, y1 = self.params
        return ((points[:, 0] > x0) & (points[:, 0] < x1)
                & (points[:, 1] > y0) & (points[:, 1] < y1))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n i.i.d. uniform points, exact for both region kinds."""
        if self.kind == "disk":
            cx, cy, r = self.params
            rad = r * np.sqrt(rng.random(n))
            ang = rng.random(n) * 2.0 * np.pi
            return np.column_stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)])
        x0, y0, x1, y1 = self.params
        return np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])

    def spec(self) -> str:
        return f"{self.kind} " + " ".join(f"{v:.17g}" for v in self.params)

    @classmethod
    def from_spec(cls, text: str) -> "Domain":
        parts = text.split()
        if parts and parts[0] == "disk" and len(parts) == 4:
            return cls.disk(*map(float, parts[1:]))
        if parts and parts[0] == "rectangle" and len(parts) == 5:
            return cls.rectangle(*map(float, parts[1:]))
        raise DataError(f"bad domain spec: {text!r}")


@dataclass
class PointSample:
    """An ordered finite point set together with how it was produced."""

    points: np.ndarray
    domain: Domain
    seed: int
    how: str = "unspecified"
    jittered: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def complex_points(self) -> np.ndarray:
        return self.points[:, 0] + 1j * self.points[:, 1]


def _distance_tie(points: np.ndarray) -> tuple[int, int, int, int] | None:
    """First pair of point pairs with equal distance, or None.

    Exhaustive above _GP_CHECK_LIMIT points would be quadratic in memory,
    so only exact duplicates are screened there.
    """
    n = len(points)
    if n < 2:
        return None
    order = np.lexsort((points[:, 1], points[:, 0]))
    dup = np.all(points[order[1:]] == points[order[:-1]], axis=1)
    if dup.any():
        k = int(np.argmax(dup))
        i, j = int(order[k]), int(order[k + 1])
        return (i, j, i, j)
    if n > _GP_CHECK_LIMIT:
        return None
    ii, jj = np.triu_indices(n, k=1)
    d = np.hypot(points[ii, 0] - points[jj, 0], points[ii, 1] - points[jj, 1])
    srt = np.argsort(d, kind="stable")
    close = np.diff(d[srt]) <= TIE_TOLERANCE
    if close.any():
        k = int(np.argmax(close))
        a, b = srt[k], srt[k + 1]
        return (int(ii[a]), int(jj[a]), int(ii[b]), int(jj[b]))
    return None


def ensure_general_position(points: np.ndarray, domain: Domain) -> tuple[np.ndarray, list[int]]:
    """Perturb until all pairwise distances are distinct.

    The jitter is a deterministic function of the offending index and the
    retry round, so repeated runs stay reproducible.
    """
    pts = np.array(points, dtype=float)
    moved: list[int] = []
    for attempt in range(32):
        tie = _distance_tie(pts)
        if tie is None:
            return pts, sorted(set(moved))
        victim = tie[1]
        ang = 2.399963229728653 * (victim + 1) * (attempt + 1)  # golden angle
        step = JITTER_MAGNITUDE * (attempt + 1)
        cand = pts[victim] + step * np.array([np.cos(ang), np.sin(ang)])
        if not domain.contains(cand[None, :])[0]:
            cand = pts[victim] - step * np.array([np.cos(ang), np.sin(ang)])
        pts[victim] = cand
        moved.append(victim)
    raise DataError("could not reach general position after 32 jitter rounds")


def sample_poisson(domain: Domain, intensity: float, seed: int) -> PointSample:
    """Poisson point process restricted to the domain.

    The count is Poisson(intensity * area); locations are i.i.d. uniform.
    Zero intensity is legal and yields the empty configuration.
    """
    if intensity < 0:
        raise ValueError(f"intensity must be nonnegative, got {intensity}")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(intensity * domain.area))
    pts = domain.sample(rng, n)
    pts, moved = ensure_general_position(pts, domain)
    return PointSample(pts, domain, seed, how=f"poisson:{intensity:.17g}", jittered=moved)


def sample_uniform_count(domain: Domain, n: int, seed: int) -> PointSample:
    """Exactly n i.i.d. uniform points inside the domain."""
    if n < 1:
        raise ValueError(f"need at least one point, got n={n}")
    rng = np.random.default_rng(seed)
    pts = domain.sample(rng, int(n))
    pts, moved = ensure_general_position(pts, domain)
    return PointSample(pts, domain, seed, how=f"uniform:{n}", jittered=moved)


def write_points(sample: PointSample, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# planalloc points v1\n")
        fh.write(f"# domain: {sample.domain.spec()}\n")
        fh.write(f"# seed: {sample.seed}\n")
        fh.write(f"# how: {sample.how}\n")
        for x, y in sample.points:
            fh.write(f"{x:.17g} {y:.17g}\n")


def format_points(sample: PointSample) -> str:
    lines = ["# planalloc points v1",
             f"# domain: {sample.domain.spec()}",
             f"# seed: {sample.seed}",
             f"# how: {sample.how}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in sample.points]
    return "\n".join(lines) + "\n"


def read_points(path) -> PointSample:
    """Parse a points file; malformed lines are reported by line number."""
    pts: list[tuple[float, float]] = []
    domain: Domain | None = None
    seed = 0
    how = f"file:{path}"
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("domain:"):
                    domain = Domain.from_spec(body[len("domain:"):].strip())
                elif body.startswith("seed:"):
                    try:
                        seed = int(body[len("seed:"):].strip())
                    except ValueError:
                        pass
                continue
            fields = line.split()
            if len(fields) != 2:
                raise DataError(f"{path}:{lineno}: expected 'x y', got {line!r}")
            try:
                pts.append((float(fields[0]), float(fields[1])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable coordinates {line!r}")
    arr = np.array(pts, dtype=float).reshape(-1, 2)
    if len(arr) == 0:
        warnings.warn(f"{path}: empty points file")
    if domain is None:
        if len(arr) == 0:
            domain = Domain.rectangle(0.0, 0.0, 1.0, 1.0)
        else:
            lo = arr.min(axis=0) - 1.0
            hi = arr.max(axis=0) + 1.0
            domain = Domain.rectangle(lo[0], lo[1], hi[0], hi[1])
    return PointSample(arr, domain, seed, how=how)
