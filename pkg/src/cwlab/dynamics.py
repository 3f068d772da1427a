"""Hyperbolic surface dynamics at cell granularity.

The maps here are integer unimodular matrices acting on the unit torus,
optionally pushed to the half-domain quotient by the point negation.  A
cell stands for every point inside it and its center is the representative
we can iterate exactly, so each diameter constraint at horizon n carries a
representation allowance: the center sits within c/sqrt(2) of any point it
stands for and n steps of the map amplify that offset by at most the
expansion rate per step.  Checks therefore compare image diameters against

    delta + sqrt(2) * c * rate**n

which never rejects the cell raster of a true diameter-delta continuum.
Without the allowance no two distinct cells survive a deep horizon at all:
center differences are exact lattice multiples of c, and the best offset
toward the stable line still carries a fraction of a cell of unstable
component, which the matrix doubles and more per step.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import geometry as G
from .geometry import CellSet, Continuum, GridSpace

SQRT2 = math.sqrt(2.0)

# Fixed points of the negation on the unit torus; under the quotient these
# become the cone points where a stable or unstable line folds back on
# itself in a single prong.
ONE_PRONGS = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [0.5, 0.5]])


# ---------------------------------------------------------------------------
# maps


@lru_cache(maxsize=None)
def _splitting(matrix):
    """(rate, stable_unit, unstable_unit); directions None when degenerate."""
    a = np.array(matrix, dtype=float)
    vals, vecs = np.linalg.eig(a)
    if np.iscomplexobj(vals):
        if np.abs(vals.imag).max() > 1e-12:
            return 1.0, None, None
        vals, vecs = vals.real, vecs.real
    order = np.argsort(np.abs(vals))
    lo, hi = order[0], order[1]
    rate = float(abs(vals[hi]))
    if abs(vals[hi]) - abs(vals[lo]) < 1e-9:
        return rate, None, None
    s = vecs[:, lo] / np.linalg.norm(vecs[:, lo])
    u = vecs[:, hi] / np.linalg.norm(vecs[:, hi])
    if s[0] < 0 or (s[0] == 0 and s[1] < 0):
        s = -s
    if u[0] < 0 or (u[0] == 0 and u[1] < 0):
        u = -u
    return rate, s, u


@dataclass(frozen=True)
class SurfaceMap:
    """Integer unimodular torus map, optionally on the negation quotient.

    forward and inverse act on coordinate arrays of shape (..., 2) and
    reduce mod 1; canonical additionally folds quotient representatives
    into the half domain.  The matrix must have determinant +-1 so the
    inverse is again an integer matrix and the lattice is preserved.
    """

    name: str
    matrix: tuple
    quotient: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.shape != (2, 2) or not np.issubdtype(m.dtype, np.integer):
            raise ValueError("matrix must be a 2x2 integer array")
        (a, b), (c, d) = self.matrix
        if a * d - b * c not in (1, -1):
            raise ValueError("matrix must be unimodular (integer, det +-1)")

    @property
    def inverse_matrix(self):
        # det is +-1, so the adjugate over det stays integer.
        (a, b), (c, d) = self.matrix
        det = a * d - b * c
        return ((d * det, -b * det), (-c * det, a * det))

    @property
    def expansion_rate(self) -> float:
        return _splitting(self.matrix)[0]

    @property
    def stable_direction(self):
        s = _splitting(self.matrix)[1]
        if s is None:
            raise ValueError("map has no hyperbolic splitting")
        return s

    @property
    def unstable_direction(self):
        u = _splitting(self.matrix)[2]
        if u is None:
            raise ValueError("map has no hyperbolic splitting")
        return u

    def forward(self, points):
        pts = np.asarray(points, dtype=float)
        return np.mod(pts @ np.asarray(self.matrix, dtype=float).T, 1.0)

    def inverse(self, points):
        pts = np.asarray(points, dtype=float)
        return np.mod(pts @ np.asarray(self.inverse_matrix, dtype=float).T, 1.0)

    def canonical(self, points):
        """Reduce mod 1 and, on the quotient, fold into the half domain."""
        q = np.mod(np.asarray(points, dtype=float), 1.0)
        if not self.quotient:
            return q
        x, y = q[..., 0], q[..., 1]
        edge = (y == 0.0) | (y == 0.5)
        flip = (y > 0.5) | (edge & (x > 0.5))
        return np.where(flip[..., None], np.mod(-q, 1.0), q)

    def space(self, resolution: int) -> GridSpace:
        return G.sphere_quotient(resolution) if self.quotient else G.torus(resolution)


def torus_anosov() -> SurfaceMap:
    return SurfaceMap("torus-anosov", ((2, 1), (1, 1)))


def sphere_pseudo_anosov() -> SurfaceMap:
    """The torus map pushed to the negation quotient.

    Linearity makes the push well defined (negating the input negates the
    output) and the four negation fixed points become one-prong cone
    points: the origin stays fixed and the other three cycle.
    """
    return SurfaceMap("sphere-pseudo-anosov", ((2, 1), (1, 1)), quotient=True)


def identity_map() -> SurfaceMap:
    """Degenerate control case: nothing separates, nothing contracts."""
    return SurfaceMap("identity", ((1, 0), (0, 1)))


def _require_space(m: SurfaceMap, space: GridSpace):
    want = G.SPHERE if m.quotient else G.TORUS
    if space.kind != want:
        raise ValueError("map and space kinds disagree")


def orbit(m: SurfaceMap, point, n: int):
    """Canonical representative of the n-th image (negative n runs inverse)."""
    q = np.asarray(point, dtype=float)
    step = m.forward if n >= 0 else m.inverse
    for _ in range(abs(int(n))):
        q = step(q)
    return m.canonical(q)


# ---------------------------------------------------------------------------
# finite-horizon plaques


@dataclass(frozen=True)
class PlaqueSpec:
    """Growth parameters: base point, diameter budget, horizon, direction."""

    point: tuple
    delta: float
    horizon: int
    direction: str = "stable"

    def __post_init__(self):
        if self.direction not in ("stable", "unstable"):
            raise ValueError("direction must be 'stable' or 'unstable'")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise ValueError("horizon must be a nonnegative integer")


def _budgets(m: SurfaceMap, space: GridSpace, delta: float, horizon: int):
    n = np.arange(horizon + 1)
    return delta + SQRT2 * space.cell_size * m.expansion_rate ** n


def _matrix_powers(m: SurfaceMap, direction: str, horizon: int):
    a = np.array(m.matrix if direction == "stable" else m.inverse_matrix, dtype=float)
    mats = np.empty((horizon + 1, 2, 2))
    mats[0] = np.eye(2)
    for k in range(1, horizon + 1):
        mats[k] = mats[k - 1] @ a
    return mats


def _grow_plaque(m, space, point, delta, horizon, direction, allowed=None):
    """Greedy maximal cell set whose image diameters fit every horizon budget.

    A continuum of diameter under half the torus lifts single-valued, so a
    pairwise difference evolves as the exact linear image of its value at
    horizon zero, never re-reduced mod 1: re-wrapping would let a cell pair
    masquerade as close after its true offset has grown past a full turn.
    On the quotient, a pair may instead stay close through the fold at a
    cone point; that channel is the linear image of the pair sum reduced
    once at horizon zero (twice a cone point is a lattice point).

    Frontier is ordered by cell index and a rejected cell is never retried:
    image diameters only grow as cells are accepted, so later acceptance is
    impossible and the greedy result is maximal for this scan order.
    Returns (sorted cells, per-horizon diameter profile).
    """
    c = space.cell_size
    if delta < 4 * c:
        raise ValueError("delta is below the grid floor at this resolution")
    budget = _budgets(m, space, delta, horizon) + 1e-12
    mats = _matrix_powers(m, direction, horizon)

    base = int(space.cell_at(np.asarray(point, dtype=float)))
    if allowed is not None and allowed[np.searchsorted(allowed, base) % allowed.size] != base:
        raise ValueError("base point lies outside the allowed region")

    cap = 64
    pts = np.empty((cap, 2))
    diam = np.zeros(horizon + 1)
    count = 0
    accepted = []
    heap = [base]
    seen = {base}
    while heap:
        cell = heapq.heappop(heap)
        q = space.centers(np.array([cell], dtype=np.int64))[0]
        if count:
            v0 = pts[:count] - q
            v0 -= np.round(v0)
            dv = np.einsum("nij,sj->nsi", mats, v0)
            d = np.hypot(dv[..., 0], dv[..., 1])
            if m.quotient:
                w0 = pts[:count] + q
                w0 -= np.round(w0)
                dw = np.einsum("nij,sj->nsi", mats, w0)
                d = np.minimum(d, np.hypot(dw[..., 0], dw[..., 1]))
            new_diam = np.maximum(diam, d.max(axis=1))
        else:
            new_diam = diam
        if not np.all(new_diam <= budget):
            continue
        diam = new_diam
        if count == cap:
            cap *= 2
            bigger = np.empty((cap, 2))
            bigger[:count] = pts[:count]
            pts = bigger
        pts[count] = q
        count += 1
        accepted.append(cell)
        for nb in space.neighbors(np.array([cell], dtype=np.int64), 8)[0]:
            nb = int(nb)
            if nb < 0 or nb in seen:
                continue
            if allowed is not None and allowed[np.searchsorted(allowed, nb) % allowed.size] != nb:
                continue
            seen.add(nb)
            heapq.heappush(heap, nb)
    return np.array(sorted(accepted), dtype=np.int64), diam


def finite_horizon_plaque(m: SurfaceMap, spec: PlaqueSpec, space: GridSpace) -> Continuum:
    """Maximal connected cell set around the point whose first `horizon`
    images (forward for stable, inverse for unstable) all fit the budget."""
    _require_space(m, space)
    cells, _ = _grow_plaque(m, space, spec.point, spec.delta, spec.horizon, spec.direction)
    return G.continuum(space, cells)


def local_stable_set(m: SurfaceMap, point, epsilon: float, horizon: int, space: GridSpace) -> CellSet:
    """Cells whose centers stay epsilon-close to the point's orbit up to the
    horizon, each horizon padded by the center's own amplified offset."""
    _require_space(m, space)
    c = space.cell_size
    if epsilon < 4 * c:
        raise ValueError("epsilon is below the grid floor at this resolution")
    if horizon < 0:
        raise ValueError("horizon must be a nonnegative integer")
    rate = m.expansion_rate
    pts = space.centers(space.all_cells())
    q = np.asarray(point, dtype=float)
    keep = np.ones(space.ncells, dtype=bool)
    for n in range(horizon + 1):
        if n:
            pts = m.forward(pts)
            q = m.forward(q)
        d = space.point_distance(pts, q)
        keep &= d <= epsilon + (c / SQRT2) * rate ** n + 1e-12
    return CellSet(space, np.nonzero(keep)[0].astype(np.int64))


# ---------------------------------------------------------------------------
# crossing number estimate


@dataclass(frozen=True)
class CwnReport:
    """Component counts of stable/unstable plaque crossings per sample."""

    counts: tuple
    max_count: int
    witnesses: tuple
    delta: float
    horizon: int
    samples: int
    seed: int

    def histogram(self):
        out = {}
        for k in self.counts:
            out[k] = out.get(k, 0) + 1
        return out


def _degenerate_check(profile, delta, c):
    # A working hyperbolic pair contracts somewhere below the budget; a
    # plaque that saturates it at every horizon is a ball that never moves.
    if np.all(profile >= delta - 4 * c):
        raise RuntimeError("plaque exceeded diameter budget at every horizon")


def _crossing_count(space, s_cells, u_cells):
    """Components of the intersection that the unstable plaque passes through.

    Cell rasters a couple of cells thick can touch without the underlying
    continua meeting (near a fold both leaves shave past the cone point),
    so a component only counts when the unstable plaque leaves it on two
    sides of the stable one.
    """
    cross = np.intersect1d(s_cells, u_cells)
    if not cross.size:
        return 0
    n = 0
    for comp in G.components(CellSet(space, cross)):
        around = G.dilate(comp, 2).cells
        outside = np.setdiff1d(np.intersect1d(u_cells, around), s_cells)
        if outside.size and len(G.components(CellSet(space, outside))) >= 2:
            n += 1
    return n


def cwn_estimate(m: SurfaceMap, delta: float, horizon: int, samples: int, seed: int,
                 space: GridSpace) -> CwnReport:
    """Sampled upper-crossing estimate: grow a stable plaque at x and an
    unstable plaque at a nearby y, count components of their intersection.

    On the quotient, half the samples are steered next to the cone points
    where a folded stable plaque can cut an unstable arc twice.
    """
    _require_space(m, space)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if horizon < 1:
        raise ValueError("horizon must be >= 1 to expose degenerate dynamics")
    c = space.cell_size
    rng = np.random.default_rng(seed)
    xs = rng.random((samples, 2))
    ang2 = rng.uniform(0.0, 2.0 * np.pi, samples)
    rad2 = rng.uniform(2 * c, max(delta / 4, 3 * c), samples)
    ys = xs + rad2[:, None] * np.stack([np.cos(ang2), np.sin(ang2)], axis=-1)
    if m.quotient:
        # Steer half the pairs next to a cone point, keeping each leaf's
        # closest pass at least four cells away from it: closer passes put
        # the fold bend and a crossing in the same few cells, where the
        # raster cannot tell a pass-by from a meeting.
        prong = ONE_PRONGS[rng.integers(0, 4, samples)]
        along = rng.uniform(-0.03, 0.03, (samples, 2))
        offs = rng.uniform(4 * c, max(0.02, 6 * c), (samples, 2))
        offs *= np.where(rng.random((samples, 2)) < 0.5, -1.0, 1.0)
        s_hat, u_hat = _splitting(m.matrix)[1:]
        if u_hat is not None:
            steered = np.arange(samples) % 2 == 1
            xs = np.where(steered[:, None],
                          prong + along[:, :1] * s_hat + offs[:, :1] * u_hat, xs)
            ys = np.where(steered[:, None],
                          prong + offs[:, 1:] * s_hat + along[:, 1:] * u_hat, ys)

    counts = []
    witnesses = []
    best = -1
    for k in range(samples):
        s_cells, s_prof = _grow_plaque(m, space, xs[k], delta, horizon, "stable")
        _degenerate_check(s_prof, delta, c)
        u_cells, u_prof = _grow_plaque(m, space, ys[k], delta, horizon, "unstable")
        _degenerate_check(u_prof, delta, c)
        n = _crossing_count(space, s_cells, u_cells)
        counts.append(n)
        if n > best:
            best = n
            witnesses = [(tuple(xs[k]), tuple(ys[k]))]
        elif n == best:
            witnesses.append((tuple(xs[k]), tuple(ys[k])))
    return CwnReport(tuple(counts), best, tuple(witnesses), delta, horizon, samples, seed)


# ---------------------------------------------------------------------------
# doubling construction inside a local stable set


@dataclass(frozen=True)
class CantorResult:
    points: np.ndarray
    arc_positions: tuple
    seed_point: np.ndarray
    complete: bool
    level_reached: int
    epsilon: float
    horizon: int
    notes: tuple


def _recurrent_seed(m, epsilon, orbit_budget, rng, space):
    """Best recurring sample point: latest return within epsilon/2, kept
    clear of the cone points so the arc parametrization stays single."""
    pool = rng.random((48, 2))
    d_prong = space.point_distance(pool[:, None, :], ONE_PRONGS[None, :, :]).min(axis=1)
    cur = pool.copy()
    last = np.zeros(48, dtype=int)
    for n in range(1, orbit_budget + 1):
        cur = m.forward(cur)
        hit = space.point_distance(cur, pool) <= epsilon / 2
        last[hit] = n
    score = np.where(d_prong >= 0.05, last, -1)
    return pool[int(np.argmax(score))]


def _lattice_candidates(p, x, tol, span, s_hat, u_hat):
    """Arc positions t with p + t*u_hat a near-pure stable offset from x.

    Solves the integer translate per unit step of the arc: for each m1 the
    stable-annihilating m2 is unique once tol is under half a lattice
    spacing, so candidates come sorted by |t| from a single vector scan.
    """
    ts = []
    for sign in (1.0, -1.0):
        d = p - sign * np.asarray(x, dtype=float)
        m1 = np.arange(-int(span * abs(u_hat[0]) + 3), int(span * abs(u_hat[0]) + 3) + 1,
                       dtype=float)
        m2 = np.round(-d[1] - (s_hat[0] / s_hat[1]) * (d[0] + m1))
        sigma = (d[0] + m1) * s_hat[0] + (d[1] + m2) * s_hat[1]
        t = -((d[0] + m1) * u_hat[0] + (d[1] + m2) * u_hat[1])
        keep = (np.abs(sigma) <= 0.9 * tol) & (np.abs(t) <= span) & (np.abs(t) > 1e-9)
        ts.append(t[keep])
    ts = np.concatenate(ts)
    return ts[np.argsort(np.abs(ts), kind="stable")]


def _arc_return(m, space, p, x, tol, horizon, existing, member_cells, u_hat, s_hat,
                epsilon):
    """Admissible return with the widest clearance from the points held so
    far.  Taking the first hit by |t| instead tends to park early points in
    exactly the slots the finest round enumerates, starving it.

    Candidates must shadow the target x within tol while the whole family
    stays pairwise within epsilon along the orbit window; checking the
    family bound directly wastes none of the triangle-inequality slack a
    root-anchored bound would."""
    c = space.cell_size
    ex = np.asarray(existing, dtype=float)
    span0 = max(64.0, 8.0 / tol)
    for span in (span0, 4 * span0):
        best = None
        for t in _lattice_candidates(p, x, tol, span, s_hat, u_hat):
            y = p + t * u_hat
            a, b, e = y, np.asarray(x, dtype=float), ex.copy()
            ok = True
            for _ in range(horizon + 1):
                if (space.point_distance(a, b) > tol
                        or space.point_distance(e, a).max() > epsilon):
                    ok = False
                    break
                a, b, e = m.forward(a), m.forward(b), m.forward(e)
            if not ok:
                continue
            clearance = space.point_distance(ex, y).min()
            if clearance < 4 * c:
                continue
            cell = int(space.cell_at(m.canonical(y)))
            if member_cells[np.searchsorted(member_cells, cell) % member_cells.size] != cell:
                continue
            if best is None or clearance > best[0] + 1e-15:
                best = (clearance, y, float(t))
        if best is not None:
            return best[1], best[2]
    return None, None


def cantor_in_stable(m: SurfaceMap, epsilon: float, levels: int, space: GridSpace,
                     orbit_budget: int = 64, seed: int = 0) -> CantorResult:
    """Doubling family on one unstable arc: each round adds, for every point
    held so far, a distinct arc point lying in its local stable set at half
    the previous tolerance.  Level k therefore holds 2**(k+1) points.

    Runs on the quotient map only, where the folded returns exist at every
    scale.  The search enumerates exact integer translates along the arc,
    verifies candidates by honest orbit distances at the working horizon,
    and finally checks grid membership cell by cell.  The finished family
    is pairwise epsilon-stable over the whole window by construction.
    """
    _require_space(m, space)
    if not m.quotient:
        raise ValueError("doubling needs the quotient dynamics")
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if levels > 4:
        raise ValueError("levels beyond desk scale (max 4)")
    c = space.cell_size
    finest = epsilon / 2.0 ** (levels + 1)
    if finest < 4 * c:
        raise ValueError("tolerance falls below the grid floor at the deepest level")
    rate, s_hat, u_hat = _splitting(m.matrix)
    if u_hat is None:
        raise ValueError("map has no hyperbolic splitting")
    # Deepest horizon at which a cell's own amplified offset still fits
    # inside the finest tolerance; deeper checks would only measure the grid.
    horizon = max(1, int(math.floor(math.log(finest / c) / math.log(rate))))
    rng = np.random.default_rng(seed)
    p = _recurrent_seed(m, epsilon, orbit_budget, rng, space)

    pts = [np.asarray(p, dtype=float)]
    ts = [0.0]
    notes = []
    for k in range(levels + 1):
        tol = epsilon / 2.0 ** (k + 1)
        snapshot = list(pts)
        for i, x in enumerate(snapshot):
            members = local_stable_set(m, m.canonical(x), tol, horizon, space).cells
            y, t = _arc_return(m, space, p, x, tol, horizon, pts, members,
                               u_hat, s_hat, epsilon)
            if y is None:
                notes.append(
                    f"level {k}: no admissible return on the arc for point {i} "
                    f"(tolerance {tol:.4g})")
                return CantorResult(m.canonical(np.array(pts)), tuple(ts),
                                    np.asarray(p, dtype=float), False,
                                    k - 1, epsilon, horizon, tuple(notes))
            pts.append(y)
            ts.append(t)
    return CantorResult(m.canonical(np.array(pts)), tuple(ts),
                        np.asarray(p, dtype=float), True, levels,
                        epsilon, horizon, tuple(notes))


# ---------------------------------------------------------------------------
# capacitor crossing


@dataclass(frozen=True)
class CapacitorReport:
    crossing: Continuum | None
    meets_a: bool
    meets_b: bool
    separation: float
    gamma: tuple
    interval: tuple | None
    notes: tuple


def _bfs_path(space, carrier, sources, targets):
    """Ordered cell path from a source to a target inside carrier, or None."""
    carrier = np.asarray(carrier, dtype=np.int64)
    target_set = set(int(v) for v in targets)
    parent = {int(v): int(v) for v in sources}
    frontier = [int(v) for v in sources]
    hit = next((v for v in frontier if v in target_set), None)
    while frontier and hit is None:
        nxt = []
        nbr = space.neighbors(np.array(frontier, dtype=np.int64), 8)
        for row, cell in zip(nbr, frontier):
            for nb in row:
                nb = int(nb)
                if nb < 0 or nb in parent:
                    continue
                if carrier[np.searchsorted(carrier, nb) % carrier.size] != nb:
                    continue
                parent[nb] = cell
                if nb in target_set:
                    hit = nb
                    break
                nxt.append(nb)
            if hit is not None:
                break
        frontier = nxt
    if hit is None:
        return None
    path = [hit]
    while parent[path[-1]] != path[-1]:
        path.append(parent[path[-1]])
    return path[::-1]


def capacitor_cross(m: SurfaceMap, plate_a: CellSet, plate_b: CellSet, region: CellSet,
                    radius: float, point, space: GridSpace, horizon: int = 8) -> CapacitorReport:
    """Hunt a connected crossing of the region from plate to plate.

    Checks the capacitor shape first: disjoint connected plates, region
    boundary pinned to the plates inside the ball, and a connecting path
    gamma inside the half ball.  Then bisects gamma, growing an unstable
    plaque clipped to the region at each probe; the invariant keeps the
    low end reaching plate A and the high end plate B.
    """
    _require_space(m, space)
    for plate in (plate_a, plate_b):
        if len(G.components(plate)) != 1:
            raise ValueError("plate is not connected")
    if np.intersect1d(plate_a.cells, plate_b.cells).size:
        raise ValueError("plates not disjoint")
    c = space.cell_size
    if radius < 8 * c:
        raise ValueError("radius is below the grid floor at this resolution")
    pt = np.asarray(point, dtype=float)
    ball = G.ball_cells(space, pt, radius)
    half = G.ball_cells(space, pt, radius / 2)
    plates = np.union1d(plate_a.cells, plate_b.cells)

    bd = np.intersect1d(G.boundary_cells(space, region).cells, ball.cells)
    if bd.size:
        on_plate = np.isin(bd, plates)
        nbr = space.neighbors(bd, 8)
        near_plate = np.isin(nbr, plates) & (nbr >= 0)
        loose = ~(on_plate | near_plate.any(axis=1))
        if loose.any():
            raise ValueError(
                f"region boundary escapes the plates inside the ball "
                f"({int(loose.sum())} cells)")

    carrier_half = np.intersect1d(np.union1d(region.cells, plates), half.cells)
    src = np.intersect1d(plate_a.cells, carrier_half)
    dst = np.intersect1d(plate_b.cells, carrier_half)
    gamma = None
    if src.size and dst.size:
        gamma = _bfs_path(space, carrier_half, src, dst)
    if gamma is None:
        raise ValueError("no connecting continuum from plate to plate inside the half ball")

    dt_a = G.distance_transform(plate_a)
    dt_b = G.distance_transform(plate_b)
    separation = float(min(dt_a[region.cells].max(), dt_b[region.cells].max()))

    allowed = np.intersect1d(np.union1d(region.cells, plates), ball.cells)
    notes = []
    labels = {}

    def probe(idx):
        if idx not in labels:
            seed_pt = space.centers(np.array([gamma[idx]], dtype=np.int64))[0]
            cells, _ = _grow_plaque(m, space, seed_pt, 2 * radius, horizon,
                                    "unstable", allowed=allowed)
            labels[idx] = (cells,
                           bool(np.intersect1d(cells, plate_a.cells).size),
                           bool(np.intersect1d(cells, plate_b.cells).size))
        return labels[idx]

    lo, hi = 0, len(gamma) - 1
    for idx in (lo, hi):
        cells, ma, mb = probe(idx)
        if ma and mb:
            return CapacitorReport(G.continuum(space, cells), True, True, separation,
                                   tuple(gamma), None, tuple(notes))
    while hi - lo > 1:
        mid = (lo + hi) // 2
        cells, ma, mb = probe(mid)
        if ma and mb:
            return CapacitorReport(G.continuum(space, cells), True, True, separation,
                                   tuple(gamma), None, tuple(notes))
        if ma:
            lo = mid
        elif mb:
            hi = mid
        else:
            # The probe reached neither plate: fall toward the nearer one so
            # the bracket keeps shrinking, and say so in the report.
            notes.append(f"probe at gamma index {mid} reached neither plate")
            if dt_a[gamma[mid]] <= dt_b[gamma[mid]]:
                lo = mid
            else:
                hi = mid
    return CapacitorReport(None, False, False, separation, tuple(gamma),
                           (int(gamma[lo]), int(gamma[hi])), tuple(notes))


# ---------------------------------------------------------------------------
# expansivity floor


@dataclass(frozen=True)
class ExpansivityFloor:
    """Largest whole-cell separation every sampled distinct pair achieves
    somewhere along the two-sided orbit window."""

    value: float
    min_separation: float
    witness: tuple
    resolution: int
    horizon: int
    stride: int
    map_name: str


def expansivity_floor(m: SurfaceMap, horizon: int, space: GridSpace) -> ExpansivityFloor:
    """Min over sampled cell pairs of the max orbit distance within the
    horizon window, rounded down to whole cells.

    The sample walks the canonical grid at a stride that caps the pair
    count; the reported stride and resolution make floors comparable
    across resolutions.  The identity map bottoms out at one cell: the
    sample's own packing, the floor any map reports on this grid.
    """
    _require_space(m, space)
    if horizon < 0:
        raise ValueError("horizon must be a nonnegative integer")
    c = space.cell_size
    stride = max(1, space.resolution // 64)
    ii = np.arange(0, space.nx, stride)
    jj = np.arange(0, space.ny, stride)
    I, J = np.meshgrid(ii, jj, indexing="ij")
    coarse = space.cell_index(I.ravel(), J.ravel()).astype(np.int64)
    if space.kind == G.SPHERE:
        # Refine to single cells around the fold points: pairs straddling a
        # fold can hide from separation at distances that refine with the
        # grid, and a stride-coarse lattice would freeze the floor there.
        # The torus has no folds and keeps the pure stride lattice.
        rho = max(8 * c, min(0.04, 20 * c))
        fine = [G.ball_cells(space, w, rho).cells for w in ONE_PRONGS]
        cells = np.unique(np.concatenate([coarse] + fine))
    else:
        cells = np.sort(coarse)
    k = cells.size

    tracks = np.empty((2 * horizon + 1, k, 2))
    pts = space.centers(cells)
    tracks[horizon] = pts
    fw = pts.copy()
    for n in range(1, horizon + 1):
        fw = m.forward(fw)
        tracks[horizon + n] = fw
    bw = pts.copy()
    for n in range(1, horizon + 1):
        bw = m.inverse(bw)
        tracks[horizon - n] = bw

    worst = np.zeros((k, k), dtype=np.float32)
    for lo in range(0, k, 512):
        hi = min(lo + 512, k)
        acc = np.zeros((hi - lo, k))
        for h in range(2 * horizon + 1):
            d = space.point_distance(tracks[h][lo:hi, None, :], tracks[h][None, :, :])
            np.maximum(acc, d, out=acc)
        worst[lo:hi] = acc
    np.fill_diagonal(worst, np.inf)
    flat = int(np.argmin(worst))
    i, j = divmod(flat, k)
    min_sep = float(worst[i, j])
    value = math.floor(min_sep / c + 1e-9) * c
    return ExpansivityFloor(value, min_sep, (int(cells[i]), int(cells[j])),
                            space.resolution, horizon, stride, m.name)
