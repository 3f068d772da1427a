"""Graph-like continua, the vertical-flow decomposition, and the example
continuum generators.

A graph-like continuum C lives in a rectangle I×J, meets every column in a
single nonempty vertical run, stays off the top and bottom boundary rows, and
has empty interior.  The flow decomposition pushes every off-C cell to the
near boundary at speed dist(p, C) and groups cells by arrival parameter.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import geometry as G
from .geometry import CellSet, GridSpace, cellset
from .decomposition import LabelField, label_field

T_CAP = 700.0

# a thin analytic set rasterizes to cells whose centers sit half a cell off
# the set, so the compensated distance dt + cell/2 matches the analytic
# distance to first order (exactly, for axis-aligned segments)
_HALF_CELL_COMP = 0.5


# ---------------------------------------------------------------------------
# the continuum type and its validation


@dataclass(frozen=True)
class GraphLikeContinuum:
    space: GridSpace
    cells: CellSet
    slice_lo: np.ndarray  # per column, lowest C row
    slice_hi: np.ndarray  # per column, highest C row


def graphlike(space: GridSpace, cells) -> GraphLikeContinuum:
    cset = cells if isinstance(cells, CellSet) else cellset(space, cells)
    i, j = space.cell_ij(cset.cells)
    lo = np.full(space.nx, space.ny, dtype=np.int64)
    hi = np.full(space.nx, -1, dtype=np.int64)
    np.minimum.at(lo, i, j)
    np.maximum.at(hi, i, j)
    lo[lo == space.ny] = -1
    return GraphLikeContinuum(space, cset, lo, hi)


def validate_graphlike(c) -> tuple:
    """(True, None) or (False, first violating column)."""
    g = c if isinstance(c, GraphLikeContinuum) else graphlike(c.space, c)
    sp = g.space
    counts = np.zeros(sp.nx, dtype=np.int64)
    i, j = sp.cell_ij(g.cells.cells)
    np.add.at(counts, i, 1)
    for x in range(sp.nx):
        if counts[x] == 0:
            return False, x
        if counts[x] != g.slice_hi[x] - g.slice_lo[x] + 1:
            return False, x  # column slice has a gap
        if g.slice_lo[x] == 0 or g.slice_hi[x] == sp.ny - 1:
            return False, x  # touches a horizontal boundary row
    # empty interior: no filled 3x3 block
    grid = np.zeros((sp.ny, sp.nx), dtype=bool)
    grid[j, i] = True
    inner = grid[:-2, :-2] & grid[:-2, 1:-1] & grid[:-2, 2:] & \
        grid[1:-1, :-2] & grid[1:-1, 1:-1] & grid[1:-1, 2:] & \
        grid[2:, :-2] & grid[2:, 1:-1] & grid[2:, 2:]
    if inner.any():
        return False, int(np.nonzero(inner.any(axis=0))[0][0])
    return True, None


# ---------------------------------------------------------------------------
# flow decomposition


class FlowDecomposition:
    """Level bands of the vertical escape flow away from C.

    T(x, y) is the travel time to the near horizontal boundary at speed
    dist(p, C), integrated by per-column trapezoid quadrature; cells are
    grouped by uniform bands of the arrival parameter a = exp(-T), so the
    top and bottom boundary rows land in band zero of their side.  Cells of
    C form one plaque.  Bands deeper than the shallowest column's reach are
    clamped into the last band common to all columns, which keeps every
    off-C plaque a band crossing the full width.
    """

    def __init__(self, source: GraphLikeContinuum):
        ok, col = validate_graphlike(source)
        if not ok:
            raise ValueError(f"not graph-like: column {col}")
        self.source = source
        sp = source.space
        c = sp.cell_size
        nx, ny = sp.nx, sp.ny

        d = (G.distance_transform(source.cells) + _HALF_CELL_COMP * c).reshape(ny, nx)
        rows = np.arange(ny)[:, None]
        above = rows > source.slice_hi[None, :]
        below = rows < source.slice_lo[None, :]

        inv = 1.0 / d
        # upward travel: T(top row) = (c/2)/d_top, then trapezoid downward
        t_up = np.zeros((ny, nx))
        incr = c * 0.5 * (inv[:-1] + inv[1:])          # step between rows j, j+1
        csum = np.vstack([np.cumsum(incr[::-1], axis=0)[::-1], np.zeros((1, nx))])
        t_up = csum + (0.5 * c) * inv[-1][None, :]
        # downward travel for the lower region
        csum_dn = np.vstack([np.zeros((1, nx)), np.cumsum(incr, axis=0)])
        t_dn = csum_dn + (0.5 * c) * inv[0][None, :]

        t = np.where(above, t_up, np.where(below, t_dn, 0.0))
        if np.any(t[above | below] > T_CAP):
            warnings.warn("travel time clamped at cap", RuntimeWarning)
            t = np.minimum(t, T_CAP)
        a = np.exp(-t)

        off = above | below
        steps = np.abs(np.diff(a, axis=0))
        same = (above[:-1] & above[1:]) | (below[:-1] & below[1:])
        delta = float(steps[same].max()) if same.any() else 1.0
        delta = max(delta, float((1.0 - a[-1]).max()), float((1.0 - a[0]).max()))
        delta *= 1.0 + 1e-9

        band = np.floor((1.0 - a) / delta).astype(np.int64)
        deep_up = band[source.slice_hi + 1 == rows]    # one per column
        deep_dn = band[source.slice_lo - 1 == rows]
        b_up = int(deep_up.min())
        b_dn = int(deep_dn.min())

        labels = np.zeros((ny, nx), dtype=np.int64)
        labels[above] = 1 + np.minimum(band, b_up)[above]
        labels[below] = 2 + b_up + np.minimum(band, b_dn)[below]

        self.T = np.where(off, t, np.inf).ravel()
        self.a = np.where(off, a, 0.0).ravel()
        self.delta_a = delta
        self.bands_above = b_up + 1
        self.bands_below = b_dn + 1
        self._above = above.ravel()
        self._below = below.ravel()
        domain = cellset(sp, sp.all_cells())
        self.field = label_field(domain, labels.ravel(), validate=True)

    @property
    def space(self) -> GridSpace:
        return self.source.space

    def contains(self, point) -> bool:
        x0, y0, x1, y1 = self.space.bounds
        p = np.asarray(point, dtype=float)
        return bool(x0 <= p[0] <= x1 and y0 <= p[1] <= y1)

    def plaque_near(self, point) -> CellSet:
        """The arrival-level curve through the exact point (C for C-points).

        Per column, the cell of the point's regime whose arrival parameter
        is nearest the point's, with vertical runs bridging adjacent columns
        so the curve stays the staircase graph of a function (where the
        level jumps past an obstacle the bridge sweeps the gap, which is
        what carries a plaque along a wall the level itself cannot enter).
        The stored field quantizes these curves into bands; the curve form
        keeps plaque comparisons at nearby points within the vertical
        quantization error of the levels themselves.
        """
        sp = self.space
        cell = int(sp.cell_at(np.asarray(point, dtype=float)))
        if self._above[cell]:
            mask = self._above
        elif self._below[cell]:
            mask = self._below
        else:
            return CellSet(sp, self.source.cells.cells)
        gap = np.where(mask, np.abs(self.a - self.a[cell]), np.inf)
        rows = np.argmin(gap.reshape(sp.ny, sp.nx), axis=0)
        lo = np.minimum(rows, np.concatenate([rows[:1], rows[:-1]]))
        hi = np.maximum(rows, np.concatenate([rows[:1], rows[:-1]]))
        cells = np.concatenate(
            [sp.cell_index(np.full(h - l + 1, i), np.arange(l, h + 1))
             for i, (l, h) in enumerate(zip(lo, hi))]
        )
        return CellSet(sp, np.sort(cells))


def flow_decomposition(source: GraphLikeContinuum) -> FlowDecomposition:
    return FlowDecomposition(source)


def contact_sets(flow: FlowDecomposition):
    """(C ∩ ∂U⁺, C ∩ ∂U⁻): C-cells adjacent to the upper / lower regime."""
    sp = flow.space
    ccells = flow.source.cells.cells
    nbr = sp.neighbors(ccells, 8)
    valid = nbr >= 0
    safe = np.where(valid, nbr, 0)
    up = (flow._above[safe] & valid).any(axis=1)
    dn = (flow._below[safe] & valid).any(axis=1)
    return CellSet(sp, ccells[up]), CellSet(sp, ccells[dn])


class FlowGenerator:
    """Resolution-indexed flow decompositions (semicontinuity protocol)."""

    def __init__(self, builder):
        self._builder = builder
        self._cache = {}

    def instantiate(self, resolution: int) -> FlowDecomposition:
        res = int(resolution)
        if res not in self._cache:
            self._cache[res] = FlowDecomposition(self._builder(res))
        return self._cache[res]


# ---------------------------------------------------------------------------
# raster helpers


def _mark_by_distance(space: GridSpace, dist_fn) -> np.ndarray:
    """Boolean grid of cells whose center is within cell/√2 of the set."""
    cells = space.all_cells()
    pts = space.centers(cells)
    d = dist_fn(pts[:, 0], pts[:, 1])
    mask = np.zeros((space.ny, space.nx), dtype=bool)
    i, j = space.cell_ij(cells)
    mask[j, i] = d <= space.cell_size / math.sqrt(2.0)
    return mask


def _run_complete(mask: np.ndarray) -> np.ndarray:
    """Fill each column between its lowest and highest marked cell."""
    out = mask.copy()
    ny, nx = mask.shape
    rows = np.arange(ny)[:, None]
    any_col = mask.any(axis=0)
    lo = np.where(any_col, np.argmax(mask, axis=0), ny)
    hi = np.where(any_col, ny - 1 - np.argmax(mask[::-1], axis=0), -1)
    out |= (rows >= lo[None, :]) & (rows <= hi[None, :])
    return out


def _mask_to_cells(space: GridSpace, mask: np.ndarray) -> CellSet:
    j, i = np.nonzero(mask)
    return cellset(space, space.cell_index(i, j))


# ---------------------------------------------------------------------------
# generators


def make_flat_bar(resolution: int) -> GraphLikeContinuum:
    """The middle bar [−1,1]×{0} in [−1,1]²: travel time integrates 1/|y|,
    so T(x, y) = −ln(y) up to quadrature error."""
    space = G.rectangle((-1.0, -1.0, 1.0, 1.0), resolution)
    mask = _run_complete(_mark_by_distance(space, lambda x, y: np.abs(y)))
    return graphlike(space, _mask_to_cells(space, mask))


def make_cocarc(resolution: int) -> GraphLikeContinuum:
    """A flat bar with one vertical spike: [−1,1]×{0} ∪ {0}×[0,1/2].

    The flow decomposition of this continuum is continuous at points over
    the flat part and discontinuous at the spike (resolution = cells per
    unit length).
    """
    space = G.rectangle((-1.0, -1.0, 1.0, 1.0), resolution)

    def dist(x, y):
        d_bar = np.abs(y)
        dy = np.maximum(np.maximum(-y, y - 0.5), 0.0)
        d_spike = np.hypot(x, dy)
        return np.minimum(d_bar, d_spike)

    mask = _run_complete(_mark_by_distance(space, dist))
    return graphlike(space, _mask_to_cells(space, mask))


def make_sin_one_over_x(resolution: int) -> GraphLikeContinuum:
    """The closed sin(1/x) continuum: {0}×[−1,1] ∪ graph of sin(1/x), x ∈ (0,1].

    A column is resolved when the curve's within-column swing at an extremum
    stays under half a cell (x ≥ (cell_size/4)^¼); resolved columns raster
    from the exact per-column extrema.  Closer to the wall the oscillation outruns
    the grid, so those columns carry a stand-in oscillation: a triangle wave
    sweeping the full band, half-period matching the true one down to the
    two-column floor, one flat cell at every ±1 fold.  The stand-in keeps
    every slice a thin run (the envelope would fill a solid block) while
    oscillation density still grows with resolution.  The innermost four
    columns are a fixed fold-sweep-fold figure so that cells next to the
    wall keep contact with both sides of the band.
    """
    space = G.rectangle((0.0, -1.5, 1.0, 1.5), resolution)
    c = space.cell_size
    pad = c / math.sqrt(2.0)
    ny, nx = space.ny, space.nx
    mask = np.zeros((ny, nx), dtype=bool)
    y0 = space.bounds[1]

    def rows_between(y_lo, y_hi):
        j_lo = int(np.floor((y_lo - pad - y0) / c - 0.5)) + 1
        j_hi = int(np.floor((y_hi + pad - y0) / c - 0.5))
        return max(j_lo, 0), min(j_hi, ny - 1)

    def row_inside(y):
        # last row whose center does not pass y (snaps ±1 endpoints inward
        # so fold rows line up with the wall's end rows)
        return int(np.floor((y - y0) / c - 0.5 + 1e-9))

    def mark(i, y_lo, y_hi):
        j_lo = row_inside(y_lo) + 1 if y_lo == -1.0 else rows_between(y_lo, 0)[0]
        j_hi = row_inside(y_hi) if y_hi == 1.0 else rows_between(0, y_hi)[1]
        mask[max(j_lo, 0) : min(j_hi, ny - 1) + 1, i] = True

    # wall {0}×[−1,1]
    spine_cols = np.nonzero((np.arange(nx) + 0.5) * c <= pad)[0]
    for i in spine_cols:
        mark(i, -1.0, 1.0)

    x_cut = (c / 4.0) ** 0.25
    cut = max(int(spine_cols.max()) + 6, int(math.ceil(x_cut / c)))

    # aliased zone, walked leftward from the junction value: bridge columns
    # step toward the current fold target, each fold is one flat column
    v = math.sin(1.0 / (cut * c))
    target = 1.0 if math.cos(1.0 / (cut * c)) >= 0 else -1.0
    for i in range(cut - 1, 4, -1):
        half = math.pi * (i * c) ** 2 / c
        step = 2.0 / max(1.0, round(half) - 1.0)
        if v == target:
            mark(i, target, target)
            target = -target
        else:
            nv = v + math.copysign(step, target - v)
            if (target - nv) * (target - v) <= 0 or abs(target - nv) <= 0.5 * step:
                nv = target
            mark(i, min(v, nv), max(v, nv))
            v = nv

    # fixed ending: bridge to the fold, fold, full sweep, opposite fold
    mark(4, min(v, target), max(v, target))
    mark(3, target, target)
    mark(2, -1.0, 1.0)
    mark(1, -target, -target)

    for i in range(cut, nx):
        xl = i * c
        xr = (i + 1) * c
        # exact extrema: endpoints plus critical points 1/x = π/2 + kπ
        vals = [math.sin(1.0 / xl), math.sin(1.0 / xr)]
        k = math.ceil((1.0 / xr - math.pi / 2) / math.pi)
        while True:
            u = math.pi / 2 + k * math.pi
            if u <= 0:
                k += 1
                continue
            x_crit = 1.0 / u
            if x_crit < xl:
                break
            if x_crit <= xr:
                vals.append(math.sin(u))
            k += 1
        j_lo, j_hi = rows_between(min(vals), max(vals))
        mask[j_lo : j_hi + 1, i] = True

    mask = _run_complete(mask)
    return graphlike(space, _mask_to_cells(space, mask))


def make_cantor_square(resolution: int) -> GraphLikeContinuum:
    """Cantor comb: middle-thirds dust of vertical teeth over y ∈ [1/3, 2/3],
    rooted in the base segment [0,1]×{1/3}.

    The dust recurses on grid columns directly (split a range in near-equal
    thirds, drop the middle, stop at two columns).  Rasterizing the analytic
    set cannot stay thin here: truncated at any depth its bars are either
    wide enough to contain solid squares or separated by sub-cell gaps that
    the raster bridges.  Column recursion keeps every tooth at most two
    cells wide and every gap at least one, with tooth count still doubling
    per ~tripled resolution.
    """
    space = G.rectangle((0.0, 0.0, 1.0, 1.0), resolution)
    c = space.cell_size
    pad = c / math.sqrt(2.0)
    ny, nx = space.ny, space.nx

    teeth = np.zeros(nx, dtype=bool)

    def carve(a: int, b: int) -> None:
        w = b - a
        if w <= 2:
            teeth[a:b] = True
            return
        side = int(round(w / 3.0))
        carve(a, a + side)
        carve(b - side, b)

    carve(0, nx)

    centers_y = (np.arange(ny) + 0.5) * c
    base = np.abs(centers_y - 1.0 / 3.0) <= pad
    band = (centers_y >= 1.0 / 3.0 - pad) & (centers_y <= 2.0 / 3.0 + pad)

    mask = np.zeros((ny, nx), dtype=bool)
    mask[base, :] = True
    mask[np.ix_(band, teeth)] = True
    return graphlike(space, _mask_to_cells(space, mask))


# ---------------------------------------------------------------------------
# devil's backgammon


def ternary_binary_map(x: float, depth: int = 40) -> float:
    """g(Σ 2/3^{n_i}) = Σ 1/2^{n_i} for points of the ternary Cantor set."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x outside [0, 1]")
    g = 0.0
    t = float(x)
    for pos in range(1, depth + 1):
        # 53-bit input noise is amplified threefold per extracted digit
        tol = 1e-14 * 3.0**pos
        if t < tol:
            break
        t *= 3.0
        digit = int(math.floor(t + 1e-9))
        if digit == 1 and t > 2.0 - 3.0 * tol:
            digit = 2
        t -= digit
        if digit == 1:
            raise ValueError(f"not in the Cantor set: ternary digit 1 at position {pos}")
        if digit == 2:
            g += 0.5**pos
    return g


def _ternary_start(bits: int, depth: int) -> float:
    x = 0.0
    for i in range(depth):
        if bits >> (depth - 1 - i) & 1:
            x += 2.0 / 3.0 ** (i + 1)
    return x


def backgammon_segments(resolution: int, depth: int | None = None):
    """Base abscissas and top abscissas of the truncated segment family.

    Tops snap to the shared dyadic of each fiber pair (the depth-d g-value
    of the pair's left member falls 2^-d short of its limit, which would
    leave the pair split at the top instead of joined)."""
    d = depth if depth is not None else max(2, math.ceil(math.log2(resolution)))
    n = 2**d
    ks = np.arange(n)
    base = np.array([_ternary_start(int(k), d) for k in ks])
    top = ((ks + 1) // 2) * 2 / n
    return base, top


def _fiber_pair(k: int) -> int:
    """Pair id joining the two finite-depth approximants of each dyadic
    g-fiber: odd k pairs with k+1; the two extremes stay alone."""
    return 0 if k == 0 else (k + 1) // 2


def make_backgammon(resolution: int, depth: int | None = None):
    """The segment fan X = base ∪ ⋃ I_x with its two decompositions.

    Segments run from (x, 0) to (g(x), 1) for the depth-truncated Cantor
    points x.  Q_U has one plaque below y = 2/3 and fiber-pair plaques
    above; Q_V has fiber-pair plaques above y = 1/3 and singletons below.
    Rows are rasterized one cell per segment with a one-cell sidestep on
    collision (a crowded cluster spreads, never breaks); labels are split
    into connected components afterwards, so both fields are valid monotone
    partitions at every resolution.
    """
    space = G.rectangle((0.0, 0.0, 1.0, 1.0), resolution)
    c = space.cell_size
    nx, ny = space.nx, space.ny
    base, top = backgammon_segments(resolution, depth)
    n = base.size

    seg_grid = np.full((ny, nx), -1, dtype=np.int64)
    for j in range(ny):
        y = (j + 0.5) * c
        pos = (1.0 - y) * base + y * top
        cols = np.clip(np.floor(pos / c).astype(np.int64), 0, nx - 1)
        for k in range(n):
            col = int(cols[k])
            placed = False
            for cand in (col, col - 1, col + 1):
                if 0 <= cand < nx and seg_grid[j, cand] < 0:
                    seg_grid[j, cand] = k
                    placed = True
                    break
            if not placed:
                pass  # crowded row: the cluster already covers this cell
    base_row = 0
    on_seg = seg_grid >= 0
    xmask = on_seg.copy()
    xmask[base_row, :] = True
    x_cells = _mask_to_cells(space, xmask)

    i, j = space.cell_ij(x_cells.cells)
    y = (j + 0.5) * c
    seg = seg_grid[j, i]
    pair = np.where(seg > 0, (seg + 1) // 2, 0)
    pair[seg < 0] = -1

    # Q_U: one plaque below 2/3, fiber pairs above
    raw_u = np.where(y < 2.0 / 3.0, 0, pair + 1)
    q_u = _component_field(x_cells, raw_u)

    # Q_V: fiber pairs above 1/3, singletons below
    raw_v = np.where(y > 1.0 / 3.0, pair, -1)
    singles = np.nonzero(raw_v < 0)[0]
    raw_v[singles] = pair.max() + 1 + np.arange(singles.size)
    q_v = _component_field(x_cells, raw_v)
    return x_cells, q_u, q_v


def _component_field(domain: CellSet, raw) -> LabelField:
    """LabelField from raw labels, splitting each label into its connected
    components so the monotone invariant holds by construction."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components

    raw = np.asarray(raw, dtype=np.int64)
    n = len(domain)
    nbr = domain.space.neighbors(domain.cells, 8)
    pos, found = G._positions_in(domain.cells, nbr)
    same = found & (raw[pos] == raw[:, None])
    rows = np.repeat(np.arange(n), nbr.shape[1]).reshape(nbr.shape)[same]
    cols = pos[same]
    graph = csr_matrix((np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return LabelField(domain, labels, validate=False)


def backgammon_probe_point(y: float = 0.9):
    """A point high on the segment rising from x = 2/3 (the g = 1/2 fiber)."""
    return ((1.0 - y) * (2.0 / 3.0) + y * 0.5, y)


# ---------------------------------------------------------------------------
# anomalous stable set


def make_anomalous_stable_set(resolution: int) -> CellSet:
    """Baseline plus the contracted copies of the segment family
    E = ({1} ∪ {1+1/m, m ≥ 2})×[0,1] under p ↦ p/2, clipped to
    [−0.5, 2.5]×[−0.5, 1.5].

    Level n survives while 2⁻ⁿ ≥ cell; within a level, segment m survives
    while the gap to its neighbor, 2⁻ⁿ/(m(m+1)), is at least one cell.
    """
    space = G.rectangle((-0.5, -0.5, 2.5, 1.5), resolution)
    c = space.cell_size
    segs = []  # (x, height)
    level = 0
    while 2.0**-level >= c:
        s = 2.0**-level
        segs.append((s, s))
        m = 2
        while s / (m * (m + 1)) >= c and s * (1 + 1 / m) <= 2.5:
            segs.append((s * (1 + 1 / m), s))
            m += 1
        level += 1

    pad = c / math.sqrt(2.0)
    x0, y0 = space.bounds[0], space.bounds[1]
    xc = x0 + (np.arange(space.nx) + 0.5) * c
    yc = y0 + (np.arange(space.ny) + 0.5) * c
    mask = np.zeros((space.ny, space.nx), dtype=bool)
    mask[np.abs(yc) <= pad, :] = True  # baseline
    for x, h in segs:
        for ci in np.nonzero(np.abs(xc - x) <= pad)[0]:
            lim = math.sqrt(max(pad * pad - (xc[ci] - x) ** 2, 0.0))
            mask[(yc >= -lim) & (yc <= h + lim), ci] = True
    return _mask_to_cells(space, mask)


def segment_components_near(fs: CellSet, center=(0.0, 0.0), radius: float = 0.1) -> int:
    """Number of segment stubs the grid resolves inside the ball: components
    of the ball intersection after removing the baseline rows."""
    sp = fs.space
    ball = G.ball_cells(sp, center, radius)
    hit = fs.intersection(ball)
    _, j = sp.cell_ij(hit.cells)
    y = sp.bounds[1] + (j + 0.5) * sp.cell_size
    off_base = hit.cells[np.abs(y) > sp.cell_size / math.sqrt(2.0)]
    if off_base.size == 0:
        return 0
    return len(G.components(CellSet(sp, off_base)))
