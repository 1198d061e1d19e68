"""Lattice DLA in the sub-linear wedge W = {(x, y) : x >= 0, 0 <= y <= x**alpha}.

Walkers move by simple random walk on the subgraph of Z^2 induced by the
wedge: each step goes to a uniformly chosen in-wedge nearest neighbour.
A walker is launched uniformly on the column x = 2 L + margin (L the
current leading tip) and restarted from there if it wanders past twice that
column. When it steps onto an occupied site, the site it came from joins
the aggregate.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numba as nb
import numpy as np

from .errors import InvariantViolation, ResourceCapError, ValidationError
from .rng import stream

LAUNCH_MARGIN = 64
STEP_BUDGET = 10**8
RESAMPLE_CAP = 10_000
_REL_EPS = 1e-12


def column_height(x: int, alpha: float) -> int:
    """Largest y with y <= x**alpha, or -1 for x < 0."""
    if x < 0:
        return -1
    if x == 0:
        return 0
    if alpha == 0.5:
        return math.isqrt(x)
    return math.floor(math.exp(alpha * math.log(x)) * (1.0 + _REL_EPS))


@dataclass(frozen=True)
class WedgeGeometry:
    alpha: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and 0.0 < self.alpha < 1.0):
            raise ValidationError("alpha", f"must lie in (0, 1), got {self.alpha!r}")

    def heights(self, upto: int) -> np.ndarray:
        return np.array([column_height(x, self.alpha) for x in range(upto + 1)], dtype=np.int64)


def in_wedge(point, geom: WedgeGeometry) -> bool:
    x, y = point
    return x >= 0 and 0 <= y <= column_height(x, geom.alpha)


class UnionFind:
    def __init__(self, items: Iterable = ()):
        self._parent = {}
        self._size = {}
        self.components = 0
        for item in items:
            self.add(item)

    def add(self, item):
        if item not in self._parent:
            self._parent[item] = item
            self._size[item] = 1
            self.components += 1

    def find(self, item):
        root = item
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[item] != root:
            self._parent[item], item = root, self._parent[item]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]
        self.components -= 1


@dataclass(frozen=True)
class TipGap:
    l_tip: int
    r_tip: Optional[int]

    @property
    def r_defined(self) -> bool:
        return self.r_tip is not None

    @property
    def gap(self) -> int:
        """L - R, or L itself when R is undefined."""
        return self.l_tip - self.r_tip if self.r_tip is not None else self.l_tip


@dataclass
class WedgeAggregate:
    geom: WedgeGeometry
    particles: list = field(default_factory=lambda: [(0, 0)])
    edges: list = field(default_factory=list)
    tip_history: list = field(default_factory=list)
    _grid: np.ndarray = field(default=None, repr=False)
    _heights: np.ndarray = field(default=None, repr=False)
    _counts: np.ndarray = field(default=None, repr=False)
    l_tip: int = 0
    _r_tip: int = -1

    def __post_init__(self):
        if self._grid is None:
            self._reserve(256)
            for x, y in self.particles:
                self._mark(x, y)
        self.tip_history.append((len(self.particles) - 1, self.l_tip, self.r_tip))

    @classmethod
    def from_sites(cls, geom: WedgeGeometry, sites) -> "WedgeAggregate":
        """Build an aggregate from an explicit site list without growth checks."""
        sites = [(int(x), int(y)) for x, y in sites]
        for p in sites:
            if not in_wedge(p, geom):
                raise ValidationError("sites", f"{p} lies outside the wedge")
        agg = cls(geom, particles=sites)
        return agg

    @property
    def r_tip(self) -> Optional[int]:
        return self._r_tip if self._r_tip >= 0 else None

    @property
    def size(self) -> int:
        return len(self.particles)

    @property
    def column_counts(self) -> dict:
        nz = np.flatnonzero(self._counts)
        return {int(x): int(self._counts[x]) for x in nz}

    def __contains__(self, point) -> bool:
        x, y = point
        if not (0 <= x < self._grid.shape[0] and 0 <= y < self._grid.shape[1]):
            return False
        return bool(self._grid[x, y])

    def _reserve(self, columns: int):
        old = 0 if self._grid is None else self._grid.shape[0]
        if columns <= old:
            return
        cap = max(columns, 2 * old)
        heights = self.geom.heights(cap)
        grid = np.zeros((cap + 1, int(heights.max()) + 2), dtype=np.uint8)
        counts = np.zeros(cap + 1, dtype=np.int64)
        if self._grid is not None:
            grid[: self._grid.shape[0], : self._grid.shape[1]] = self._grid
            counts[: len(self._counts)] = self._counts
        self._grid, self._heights, self._counts = grid, heights, counts

    def _mark(self, x: int, y: int):
        self._reserve(x + 1)
        if self._grid[x, y]:
            raise InvariantViolation(f"site {(x, y)} is already occupied")
        self._grid[x, y] = 1
        self._counts[x] += 1
        if self._counts[x] == 1 and x > self.l_tip:
            self.l_tip = x
        if self._counts[x] == 2 and x > self._r_tip:
            self._r_tip = x

    def add_site(self, x: int, y: int, hit=None):
        self._mark(x, y)
        self.particles.append((x, y))
        if hit is not None:
            self.edges.append(((x, y), hit))
        self.tip_history.append((len(self.particles) - 1, self.l_tip, self.r_tip))

    def check_invariants(self):
        """Raise InvariantViolation unless the aggregate is a valid growth state."""
        if self.particles[0] != (0, 0):
            raise InvariantViolation("aggregate must start from the origin")
        if len(set(self.particles)) != len(self.particles):
            raise InvariantViolation("duplicate sites")
        seen = {self.particles[0]}
        for k, (x, y) in enumerate(self.particles[1:], start=1):
            if not in_wedge((x, y), self.geom):
                raise InvariantViolation(f"particle {k} at {(x, y)} lies outside the wedge")
            if not any(q in seen for q in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1))):
                raise InvariantViolation(f"particle {k} at {(x, y)} is not adjacent to the aggregate")
            seen.add((x, y))
        counts = {}
        for x, _ in self.particles:
            counts[x] = counts.get(x, 0) + 1
        l_tip = max(counts)
        doubles = [x for x, c in counts.items() if c >= 2]
        r_tip = max(doubles) if doubles else None
        if (l_tip, r_tip) != (self.l_tip, self.r_tip):
            raise InvariantViolation(f"tips {(self.l_tip, self.r_tip)} disagree with recount {(l_tip, r_tip)}")
        ls = [h[1] for h in self.tip_history]
        rs = [-1 if h[2] is None else h[2] for h in self.tip_history]
        if any(b < a for a, b in zip(ls, ls[1:])) or any(b < a for a, b in zip(rs, rs[1:])):
            raise InvariantViolation("tip coordinates decreased")

    def occupancy_pgm(self) -> bytes:
        """Binary PGM of the occupied columns, y increasing upward."""
        width = self.l_tip + 1
        height = int(self._heights[: width].max()) + 1
        img = np.where(self._grid[:width, :height].T[::-1], 0, 255).astype(np.uint8)
        return f"P5\n{width} {height}\n255\n".encode() + img.tobytes()


def tip_gap(agg: WedgeAggregate) -> TipGap:
    return TipGap(agg.l_tip, agg.r_tip)


@nb.njit(cache=True)
def _release(rng, grid, heights, x_launch, x_escape, step_budget, resample_cap):
    # returns (status, prev_x, prev_y, hit_x, hit_y, resamples); status 0 = stuck
    nx = np.empty(4, np.int64)
    ny = np.empty(4, np.int64)
    for attempt in range(resample_cap + 1):
        x = x_launch
        y = int(rng.random() * (heights[x] + 1))
        for _ in range(step_budget):
            k = 0
            if y <= heights[x + 1]:
                nx[k] = x + 1
                ny[k] = y
                k += 1
            if x >= 1 and y <= heights[x - 1]:
                nx[k] = x - 1
                ny[k] = y
                k += 1
            if y + 1 <= heights[x]:
                nx[k] = x
                ny[k] = y + 1
                k += 1
            if y >= 1:
                nx[k] = x
                ny[k] = y - 1
                k += 1
            j = int(rng.random() * k)
            qx = nx[j]
            qy = ny[j]
            if grid[qx, qy]:
                return 0, x, y, qx, qy, attempt
            x = qx
            y = qy
            if x > x_escape:
                break
    return 1, -1, -1, -1, -1, resample_cap


def attach_particle(
    agg: WedgeAggregate,
    rng: np.random.Generator,
    launch_margin: int = LAUNCH_MARGIN,
    step_budget: int = STEP_BUDGET,
    resample_cap: int = RESAMPLE_CAP,
) -> tuple:
    """Release one walker and attach the last site it visited before hitting.

    Returns the attached site.
    """
    x_launch = 2 * agg.l_tip + launch_margin
    x_escape = 2 * x_launch
    agg._reserve(x_escape + 2)
    status, px, py, hx, hy, _ = _release(
        rng, agg._grid, agg._heights, x_launch, x_escape, step_budget, resample_cap
    )
    if status:
        raise ResourceCapError(
            f"walker failed to hit the aggregate after {resample_cap} restarts "
            f"(step budget {step_budget} each)"
        )
    agg.add_site(int(px), int(py), hit=(int(hx), int(hy)))
    return int(px), int(py)


def sample_attachments(
    agg: WedgeAggregate,
    rng: np.random.Generator,
    walkers: int,
    launch_margin: int = LAUNCH_MARGIN,
    step_budget: int = STEP_BUDGET,
    resample_cap: int = RESAMPLE_CAP,
) -> Counter:
    """Attachment sites of ``walkers`` independent walkers released at ``agg``.

    The aggregate is left unchanged, so the counts estimate the law of the
    next attached site.
    """
    x_launch = 2 * agg.l_tip + launch_margin
    x_escape = 2 * x_launch
    agg._reserve(x_escape + 2)
    hits: Counter = Counter()
    for _ in range(walkers):
        status, px, py, _, _, _ = _release(
            rng, agg._grid, agg._heights, x_launch, x_escape, step_budget, resample_cap
        )
        if status:
            raise ResourceCapError(f"walker failed to hit the aggregate after {resample_cap} restarts")
        hits[(int(px), int(py))] += 1
    return hits


def grow(
    geom: WedgeGeometry,
    particles: int,
    seed: int,
    launch_margin: int = LAUNCH_MARGIN,
    step_budget: int = STEP_BUDGET,
    resample_cap: int = RESAMPLE_CAP,
    aggregate: Optional[WedgeAggregate] = None,
) -> WedgeAggregate:
    """Grow ``particles`` attachments from A_0 = {(0, 0)} (or from ``aggregate``)."""
    if particles < 0:
        raise ValidationError("particles", f"must be >= 0, got {particles}")
    if launch_margin < 1:
        raise ValidationError("launch_margin", f"must be >= 1, got {launch_margin}")
    agg = WedgeAggregate(geom) if aggregate is None else aggregate
    rng = stream(seed)
    for _ in range(particles):
        attach_particle(agg, rng, launch_margin, step_budget, resample_cap)
    return agg


def ends_estimate(sites, r: float) -> int:
    """Number of nearest-neighbour components of the sites outside the closed ball B(r)."""
    if r < 0:
        raise ValidationError("r", f"must be >= 0, got {r}")
    pts = sites.particles if isinstance(sites, WedgeAggregate) else sites
    r2 = float(r) * float(r)
    survivors = {(int(x), int(y)) for x, y in pts if x * x + y * y > r2}
    uf = UnionFind(survivors)
    for x, y in survivors:
        for q in ((x + 1, y), (x, y + 1)):
            if q in survivors:
                uf.union((x, y), q)
    return uf.components
