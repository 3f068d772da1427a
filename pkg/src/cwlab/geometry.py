"""Grid spaces, cell sets, and hyperspace metrics.

Cells are indexed row-major: ``index = j*nx + i`` with i counting columns
(x direction) and j counting rows (y direction).  Every distance reported by
this module is a cell-center distance; the discretization error budget is one
cell size per operation.

Connectivity convention: eight-connectivity for sets, four-connectivity for
complements, so discrete Jordan-type separation behaves correctly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as _graph_components
from scipy.spatial import ConvexHull

RECTANGLE = "rectangle"
TORUS = "torus"
SPHERE = "sphere"

# (di, dj) neighbor offsets.
OFFSETS_8 = np.array(
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)],
    dtype=np.int64,
)
OFFSETS_4 = np.array([(0, -1), (-1, 0), (1, 0), (0, 1)], dtype=np.int64)

# Exhaustive pairwise work above this size is refused rather than silently slow.
_BRUTE_PAIR_CAP = 25000


@dataclass(frozen=True)
class GridSpace:
    """A discretized compact surface chart.

    kind is one of "rectangle" (plain Euclidean metric on an axis-aligned
    box), "torus" (unit square, metric = min over integer translates) or
    "sphere" (unit square modulo p ~ -p, metric = min over the two
    representatives; fundamental domain [0,1]x[0,1/2)).
    """

    kind: str
    resolution: int
    bounds: tuple
    nx: int
    ny: int

    @property
    def cell_size(self) -> float:
        return 1.0 / self.resolution

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    # -- index <-> coordinate plumbing ------------------------------------

    def cell_ij(self, cells):
        cells = np.asarray(cells, dtype=np.int64)
        j, i = np.divmod(cells, self.nx)
        return i, j

    def cell_index(self, i, j):
        return np.asarray(j, dtype=np.int64) * self.nx + np.asarray(i, dtype=np.int64)

    def centers(self, cells):
        i, j = self.cell_ij(cells)
        x0, y0 = self.bounds[0], self.bounds[1]
        c = self.cell_size
        return np.stack([x0 + (i + 0.5) * c, y0 + (j + 0.5) * c], axis=-1)

    def all_cells(self):
        return np.arange(self.ncells, dtype=np.int64)

    def canonical_ij(self, i, j):
        """Map raw (i, j) grids to canonical cells.

        Returns (i, j, valid).  For the rectangle, out-of-range cells are
        flagged invalid; periodic kinds always wrap.  The sphere wraps on the
        full torus first and then folds the upper half row range through the
        negation (i, j) -> (res-1-i, res-1-j).
        """
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        if self.kind == RECTANGLE:
            valid = (i >= 0) & (i < self.nx) & (j >= 0) & (j < self.ny)
            return i, j, valid
        if self.kind == TORUS:
            return i % self.nx, j % self.ny, np.ones(np.shape(i), dtype=bool)
        res = self.resolution
        i = i % res
        j = j % res
        upper = j >= self.ny
        i = np.where(upper, res - 1 - i, i)
        j = np.where(upper, res - 1 - j, j)
        return i, j, np.ones(np.shape(i), dtype=bool)

    def cell_at(self, points):
        """Cell indices containing the given points (shape (..., 2))."""
        pts = np.asarray(points, dtype=float)
        x0, y0, x1, y1 = self.bounds
        c = self.cell_size
        if self.kind == RECTANGLE:
            eps = 1e-9
            if np.any(pts[..., 0] < x0 - eps) or np.any(pts[..., 0] > x1 + eps) or \
               np.any(pts[..., 1] < y0 - eps) or np.any(pts[..., 1] > y1 + eps):
                raise ValueError("point outside rectangle bounds")
            i = np.clip(np.floor((pts[..., 0] - x0) / c).astype(np.int64), 0, self.nx - 1)
            j = np.clip(np.floor((pts[..., 1] - y0) / c).astype(np.int64), 0, self.ny - 1)
            return self.cell_index(i, j)
        # periodic kinds live on the unit square
        i = np.floor(np.mod(pts[..., 0], 1.0) * self.resolution).astype(np.int64)
        j = np.floor(np.mod(pts[..., 1], 1.0) * self.resolution).astype(np.int64)
        i, j, _ = self.canonical_ij(i, j)
        return self.cell_index(i, j)

    def neighbors(self, cells, connectivity=8):
        """Canonical neighbor indices, shape (n, connectivity); -1 = off space."""
        offs = OFFSETS_8 if connectivity == 8 else OFFSETS_4
        i, j = self.cell_ij(cells)
        ii = i[..., None] + offs[:, 0]
        jj = j[..., None] + offs[:, 1]
        ci, cj, valid = self.canonical_ij(ii, jj)
        out = self.cell_index(ci, cj)
        out[~valid] = -1
        return out

    # -- metric ------------------------------------------------------------

    def point_distance(self, p, q):
        """Metric between aligned point arrays (broadcasting, shape (..., 2))."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.kind == RECTANGLE:
            d = p - q
            return np.hypot(d[..., 0], d[..., 1])
        d = p - q
        d = d - np.round(d)
        direct = np.hypot(d[..., 0], d[..., 1])
        if self.kind == TORUS:
            return direct
        # sphere: the negated representative of q is -q, so compare p - (-q)
        e = p + q
        e = e - np.round(e)
        return np.minimum(direct, np.hypot(e[..., 0], e[..., 1]))

    def pairwise_distance(self, p, q):
        """Full (n, m) distance matrix between two point clouds."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        return self.point_distance(p[:, None, :], q[None, :, :])

    def cell_distance(self, cells_a, cells_b):
        return self.point_distance(self.centers(cells_a), self.centers(cells_b))

    # -- integer-offset metric (shared by the transform and oracle routes) --

    def _sq_offsets(self, ia, ja, ib, jb):
        """Squared index-space distances between aligned cell coordinate arrays.

        Working in integers keeps the fast route and the brute-force oracle
        bitwise comparable: both end as sqrt(integer) * cell_size.
        """
        di = ia - ib
        dj = ja - jb
        if self.kind == RECTANGLE:
            return di * di + dj * dj
        if self.kind == TORUS:
            di = np.abs(di)
            dj = np.abs(dj)
            di = np.minimum(di, self.nx - di)
            dj = np.minimum(dj, self.ny - dj)
            return di * di + dj * dj
        res = self.resolution
        di = np.abs(di) % res
        dj = np.abs(dj) % res
        di = np.minimum(di, res - di)
        dj = np.minimum(dj, res - dj)
        direct = di * di + dj * dj
        # negated representative: (res-1-ib, res-1-jb)
        di2 = np.abs(ia + ib - (res - 1)) % res
        dj2 = np.abs(ja + jb - (res - 1)) % res
        di2 = np.minimum(di2, res - di2)
        dj2 = np.minimum(dj2, res - dj2)
        return np.minimum(direct, di2 * di2 + dj2 * dj2)


def rectangle(bounds, resolution) -> GridSpace:
    """Axis-aligned rectangle chart; bounds snap to whole cells."""
    if resolution < 8:
        raise ValueError("resolution must be an integer >= 8")
    x0, y0, x1, y1 = (float(v) for v in bounds)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("rectangle bounds must have positive extent")
    nx = int(round((x1 - x0) * resolution))
    ny = int(round((y1 - y0) * resolution))
    if nx < 1 or ny < 1:
        raise ValueError("rectangle bounds smaller than one cell")
    c = 1.0 / resolution
    return GridSpace(RECTANGLE, int(resolution), (x0, y0, x0 + nx * c, y0 + ny * c), nx, ny)


def torus(resolution) -> GridSpace:
    if resolution < 8:
        raise ValueError("resolution must be an integer >= 8")
    r = int(resolution)
    return GridSpace(TORUS, r, (0.0, 0.0, 1.0, 1.0), r, r)


def sphere_quotient(resolution) -> GridSpace:
    """T^2 / (p ~ -p), fundamental domain [0,1] x [0,1/2).

    Needs even resolution so the negation is a fixed-point-free involution
    on cells and the canonical rows j < res/2 pick one cell per orbit.
    """
    if resolution < 8:
        raise ValueError("resolution must be an integer >= 8")
    if resolution % 2:
        raise ValueError("sphere quotient needs an even resolution")
    r = int(resolution)
    return GridSpace(SPHERE, r, (0.0, 0.0, 1.0, 0.5), r, r // 2)


# ---------------------------------------------------------------------------
# cell sets


@dataclass(frozen=True)
class CellSet:
    """A finite set of cells (sorted unique indices) in one space."""

    space: GridSpace
    cells: np.ndarray

    def __len__(self):
        return int(self.cells.size)

    def centers(self):
        return self.space.centers(self.cells)

    def mask(self):
        m = np.zeros((self.space.ny, self.space.nx), dtype=bool)
        i, j = self.space.cell_ij(self.cells)
        m[j, i] = True
        return m

    def contains(self, cells):
        cells = np.asarray(cells, dtype=np.int64)
        pos, found = _positions_in(self.cells, cells)
        return found

    def union(self, other):
        _check_same_space(self, other)
        return CellSet(self.space, np.union1d(self.cells, other.cells))

    def intersection(self, other):
        _check_same_space(self, other)
        return CellSet(self.space, np.intersect1d(self.cells, other.cells))

    def difference(self, other):
        _check_same_space(self, other)
        return CellSet(self.space, np.setdiff1d(self.cells, other.cells))

    def equals(self, other):
        return self.space == other.space and np.array_equal(self.cells, other.cells)


class Continuum(CellSet):
    """A CellSet guaranteed eight-connected (single component)."""


def cellset(space: GridSpace, cells) -> CellSet:
    arr = np.unique(np.asarray(cells, dtype=np.int64))
    if arr.size and (arr[0] < 0 or arr[-1] >= space.ncells):
        raise ValueError("cell index out of range for the space")
    return CellSet(space, arr)


def continuum(space: GridSpace, cells) -> Continuum:
    s = cellset(space, cells)
    if len(s) == 0:
        raise ValueError("a continuum is nonempty")
    if len(components(s)) != 1:
        raise ValueError("cell set is not connected")
    return Continuum(space, s.cells)


def _check_same_space(a: CellSet, b: CellSet):
    if a.space != b.space:
        raise ValueError("cell sets live in different spaces")


def _positions_in(sorted_cells, query):
    """(positions, found) of query values inside a sorted unique array."""
    query = np.asarray(query, dtype=np.int64)
    if sorted_cells.size == 0:
        return np.zeros(query.shape, dtype=np.int64), np.zeros(query.shape, dtype=bool)
    pos = np.searchsorted(sorted_cells, query)
    pos_c = np.minimum(pos, sorted_cells.size - 1)
    found = (sorted_cells[pos_c] == query) & (query >= 0)
    return pos_c, found


def components(s: CellSet) -> list:
    """Maximal eight-connected pieces, lowest cell index first."""
    n = len(s)
    if n == 0:
        return []
    cells = s.cells
    nbr = s.space.neighbors(cells, 8)
    pos, found = _positions_in(cells, nbr)
    rows = np.repeat(np.arange(n), nbr.shape[1])[found.ravel()]
    cols = pos[found]
    graph = csr_matrix(
        (np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n)
    )
    ncomp, labels = _graph_components(graph, directed=False)
    _, first = np.unique(labels, return_index=True)
    ordered = labels[np.sort(first)]
    return [Continuum(s.space, cells[labels == lab]) for lab in ordered]


# ---------------------------------------------------------------------------
# distance transforms and the Hausdorff metric


def distance_transform(s: CellSet):
    """Exact cell-center distance to s for every cell, as a flat field.

    Euclidean distance transforms are exact at cell centers; the periodic
    kinds reduce to the plane by tiling (torus: 3x3 tiles, any distance
    realized within one translate because diam <= sqrt(2)/2 < 1) and the
    sphere by lifting s together with its negated copy to the double cover.
    """
    if len(s) == 0:
        raise ValueError("distance transform of an empty set")
    sp = s.space
    m = s.mask()
    if sp.kind == RECTANGLE:
        d = ndimage.distance_transform_edt(~m)
    elif sp.kind == TORUS:
        big = np.tile(m, (3, 3))
        d = ndimage.distance_transform_edt(~big)[sp.ny : 2 * sp.ny, sp.nx : 2 * sp.nx]
    else:
        res = sp.resolution
        lift = np.zeros((res, res), dtype=bool)
        lift[: sp.ny] = m
        lift[sp.ny :] = m[::-1, ::-1]
        big = np.tile(lift, (3, 3))
        d = ndimage.distance_transform_edt(~big)[res : res + sp.ny, res : 2 * res]
    return np.ascontiguousarray(d).ravel() * sp.cell_size


def distance_transform_bruteforce(s: CellSet):
    """Per-cell pairwise minimum; the oracle route for distance_transform."""
    if len(s) == 0:
        raise ValueError("distance transform of an empty set")
    sp = s.space
    ia, ja = sp.cell_ij(sp.all_cells())
    ib, jb = sp.cell_ij(s.cells)
    out = np.full(sp.ncells, np.iinfo(np.int64).max, dtype=np.int64)
    for k0 in range(0, len(s), 2048):
        sl = slice(k0, k0 + 2048)
        sq = sp._sq_offsets(ia[:, None], ja[:, None], ib[None, sl], jb[None, sl])
        out = np.minimum(out, sq.min(axis=1))
    return np.sqrt(out.astype(float)) * sp.cell_size


def hausdorff_distance(a: CellSet, b: CellSet) -> float:
    """max(sup_a d(a,B), sup_b d(b,A)) via two distance transforms."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty set has no Hausdorff distance")
    _check_same_space(a, b)
    dt_b = distance_transform(b)
    dt_a = distance_transform(a)
    return float(max(dt_b[a.cells].max(), dt_a[b.cells].max()))


def hausdorff_bruteforce(a: CellSet, b: CellSet) -> float:
    """O(|A||B|) pairwise oracle for hausdorff_distance."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty set has no Hausdorff distance")
    _check_same_space(a, b)
    sp = a.space
    ia, ja = sp.cell_ij(a.cells)
    ib, jb = sp.cell_ij(b.cells)
    sq = sp._sq_offsets(ia[:, None], ja[:, None], ib[None, :], jb[None, :])
    worst = max(sq.min(axis=1).max(), sq.min(axis=0).max())
    return float(np.sqrt(float(worst)) * sp.cell_size)


# ---------------------------------------------------------------------------
# diameter


def _unwrap_axis(values, period):
    """Shift circular integer coordinates so the largest empty arc wraps.

    Returns (shifted values, ok): ok means the unwrapped extent fits in half
    the period, so plain differences realize every min-translate difference.
    """
    vals = np.unique(values)
    if vals.size == 1:
        return values - vals[0], True
    gaps = np.diff(vals)
    wrap_gap = period - (vals[-1] - vals[0])
    k = int(np.argmax(gaps)) if gaps.size and gaps.max() > wrap_gap else -1
    if k >= 0:
        start = vals[k + 1]
        extent = period - int(gaps[k])
    else:
        start = vals[0]
        extent = int(vals[-1] - vals[0])
    if extent > period // 2:
        return values, False
    return (values - start) % period, True


def _planar_diameter_sq(i, j, brute_cutoff=1000):
    pts = np.stack([i, j], axis=1)
    if len(pts) > brute_cutoff:
        hull = ConvexHull(pts.astype(float), qhull_options="QJ")
        pts = pts[hull.vertices]
    di = pts[:, 0][:, None] - pts[:, 0][None, :]
    dj = pts[:, 1][:, None] - pts[:, 1][None, :]
    return int((di * di + dj * dj).max())


def diameter(s: CellSet) -> float:
    """Max pairwise cell-center distance (hull route and brute route agree)."""
    if len(s) == 0:
        raise ValueError("diameter of an empty set")
    sp = s.space
    i, j = sp.cell_ij(s.cells)
    if len(s) == 1:
        return 0.0
    if sp.kind == RECTANGLE:
        return float(np.sqrt(_planar_diameter_sq(i, j))) * sp.cell_size
    if sp.kind == TORUS:
        ui, ok_i = _unwrap_axis(i, sp.nx)
        uj, ok_j = _unwrap_axis(j, sp.ny)
        if ok_i and ok_j:
            return float(np.sqrt(_planar_diameter_sq(ui, uj))) * sp.cell_size
    if len(s) > _BRUTE_PAIR_CAP:
        raise ValueError(
            "set too large for exact diameter on a wrapped space; "
            "use diameter_at_least for decision queries"
        )
    return diameter_bruteforce(s)


def diameter_bruteforce(s: CellSet) -> float:
    if len(s) == 0:
        raise ValueError("diameter of an empty set")
    sp = s.space
    i, j = sp.cell_ij(s.cells)
    worst = 0
    for k0 in range(0, len(s), 2048):
        sl = slice(k0, k0 + 2048)
        sq = sp._sq_offsets(i[:, None], j[:, None], i[None, sl], j[None, sl])
        worst = max(worst, int(sq.max()))
    return float(np.sqrt(float(worst)) * sp.cell_size)


def diameter_at_least(s: CellSet, bound: float) -> bool:
    """Exact decision diam(s) >= bound for connected sets.

    On wrapped kinds a connected set whose projection covers more than half
    of an axis circle contains two cells at circular distance >= 1/2 on that
    axis, so diam >= 1/2 without enumerating pairs.
    """
    if len(s) == 0:
        raise ValueError("diameter of an empty set")
    sp = s.space
    if sp.kind == RECTANGLE or len(s) <= _BRUTE_PAIR_CAP:
        return diameter(s) >= bound
    i, j = sp.cell_ij(s.cells)
    ui, ok_i = _unwrap_axis(i, sp.nx)
    uj, ok_j = _unwrap_axis(j, sp.ny)
    if ok_i and ok_j:
        return float(np.sqrt(_planar_diameter_sq(ui, uj))) * sp.cell_size >= bound
    if bound <= 0.5:
        return True
    raise ValueError("cannot decide diameter bound above 1/2 for this set size")


# ---------------------------------------------------------------------------
# Whitney size


def _farthest_field_sq(s: CellSet):
    sp = s.space
    ia, ja = sp.cell_ij(sp.all_cells())
    ib, jb = sp.cell_ij(s.cells)
    out = np.zeros(sp.ncells, dtype=np.int64)
    for k0 in range(0, len(s), 2048):
        sl = slice(k0, k0 + 2048)
        sq = sp._sq_offsets(ia[:, None], ja[:, None], ib[None, sl], jb[None, sl])
        out = np.maximum(out, sq.max(axis=1))
    return out


def whitney_size(a: CellSet) -> float:
    """Size function mu(A): mean over cells x of max_{p in A} d(x,p) - d(x,A).

    Zero exactly on singletons; strictly monotone under strict inclusion
    (adding p' drops the min term to zero at x = p' while no summand shrinks).
    """
    if len(a) == 0:
        raise ValueError("whitney size of an empty set")
    d_far = np.sqrt(_farthest_field_sq(a).astype(float)) * a.space.cell_size
    d_near = distance_transform(a)
    return float(np.mean(d_far - d_near))


class SpreadTracker:
    """Incremental whitney_size over a growing cell sequence with undo.

    push(cell) extends the set, pop() undoes the latest push; value() is
    mu(current set).  Used to walk size profiles along plaque geodesics
    without recomputing the field per prefix.
    """

    def __init__(self, space: GridSpace):
        self.space = space
        ia, ja = space.cell_ij(space.all_cells())
        self._ia, self._ja = ia, ja
        self._max2 = None
        self._min2 = None
        self._undo = []

    def __len__(self):
        return len(self._undo)

    def push(self, cell):
        sp = self.space
        i, j = sp.cell_ij(np.asarray([cell], dtype=np.int64))
        sq = sp._sq_offsets(self._ia, self._ja, i, j)
        if self._max2 is None:
            self._max2 = sq.copy()
            self._min2 = sq.copy()
            self._undo.append(None)
            return
        hi = np.nonzero(sq > self._max2)[0]
        lo = np.nonzero(sq < self._min2)[0]
        self._undo.append((hi, self._max2[hi].copy(), lo, self._min2[lo].copy()))
        self._max2[hi] = sq[hi]
        self._min2[lo] = sq[lo]

    def pop(self):
        rec = self._undo.pop()
        if rec is None:
            self._max2 = None
            self._min2 = None
            return
        hi, old_hi, lo, old_lo = rec
        self._max2[hi] = old_hi
        self._min2[lo] = old_lo

    def value(self) -> float:
        if self._max2 is None:
            raise ValueError("whitney size of an empty set")
        c = self.space.cell_size
        spread = np.sqrt(self._max2.astype(float)) - np.sqrt(self._min2.astype(float))
        return float(np.mean(spread)) * c


# ---------------------------------------------------------------------------
# small set utilities used across modules


def ball_cells(space: GridSpace, center, radius: float) -> CellSet:
    """Cells whose centers lie within radius of the given point."""
    pts = space.centers(space.all_cells())
    d = space.point_distance(pts, np.asarray(center, dtype=float))
    return CellSet(space, np.nonzero(d <= radius)[0].astype(np.int64))


def boundary_cells(space: GridSpace, region: CellSet) -> CellSet:
    """Cells of the region with a four-neighbor outside it (or off the space)."""
    nbr = space.neighbors(region.cells, 4)
    inside = region.contains(nbr) & (nbr >= 0)
    on_edge = ~inside.all(axis=1)
    return CellSet(space, region.cells[on_edge])


def dilate(s: CellSet, steps: int = 1, connectivity: int = 8) -> CellSet:
    cells = s.cells
    for _ in range(steps):
        nbr = s.space.neighbors(cells, connectivity)
        cells = np.union1d(cells, np.unique(nbr[nbr >= 0]))
    return CellSet(s.space, cells)
