"""Monotone partitions of cell sets and their diagnostics.

A LabelField assigns every cell of a domain to a plaque (connected label
class).  On top of that sit restriction, quotient graphs, dendrite and
cw-decomposition tests, semicontinuity profiling across resolutions,
C-smoothness sampling, product structures and generating-pair search.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from . import geometry as G
from .geometry import (
    CellSet,
    Continuum,
    GridSpace,
    _positions_in,
    cellset,
    components,
)


class PlaqueNotArcError(ValueError):
    """A plaque fails the dendrite proxy where an arc structure is required."""


# ---------------------------------------------------------------------------
# label fields


class LabelField:
    """Monotone partition: every cell carries a plaque id, plaques connected.

    Plaque ids are dense and canonical: plaques are numbered by their lowest
    cell index, so two constructions of the same partition compare equal
    array-wise.
    """

    def __init__(self, domain: CellSet, labels, validate: bool = True):
        if len(domain) == 0:
            raise ValueError("label field needs a nonempty domain")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != domain.cells.shape:
            raise ValueError("labels misaligned with the domain cells")
        self.domain = domain
        self.labels = _dense_renumber(labels)
        self.nplaques = int(self.labels.max()) + 1
        if validate:
            self._validate_monotone()

    @property
    def space(self) -> GridSpace:
        return self.domain.space

    def _validate_monotone(self):
        for pid in range(self.nplaques):
            piece = CellSet(self.space, self.plaque_cells[pid])
            if len(components(piece)) != 1:
                raise ValueError(f"plaque {pid} is not connected")

    @cached_property
    def plaque_cells(self):
        order = np.argsort(self.labels, kind="stable")
        counts = np.bincount(self.labels, minlength=self.nplaques)
        out = []
        start = 0
        sorted_cells = self.domain.cells[order]
        for c in counts:
            out.append(sorted_cells[start : start + c])
            start += c
        return out

    def plaque(self, pid: int) -> Continuum:
        return Continuum(self.space, self.plaque_cells[int(pid)])

    def labels_at(self, cells):
        pos, found = _positions_in(self.domain.cells, cells)
        if not np.all(found):
            raise ValueError("cell outside the field domain")
        return self.labels[pos]

    def contains_point(self, point) -> bool:
        try:
            cell = self.space.cell_at(np.asarray(point, dtype=float))
        except ValueError:
            return False
        return bool(self.domain.contains(np.asarray([cell]))[0])

    def plaque_at_point(self, point) -> int:
        cell = self.space.cell_at(np.asarray(point, dtype=float))
        return int(self.labels_at(np.asarray([cell]))[0])

    @cached_property
    def adjacency(self):
        """Per-plaque sorted arrays of adjacent plaque ids.

        Plaques are adjacent when cells share an edge, or share a corner
        that is not blocked: a corner contact where both off-diagonal cells
        carry one common third plaque is a rasterization artifact (that
        plaque passes through the corner) and does not count.
        """
        sp = self.space
        cells = self.domain.cells

        def lab_at(offsets):
            """Label of cell+offset, -1 where off the domain."""
            i, j = sp.cell_ij(cells)
            ci, cj, valid = sp.canonical_ij(i + offsets[0], j + offsets[1])
            nb = sp.cell_index(ci, cj)
            nb[~valid] = -1
            pos, found = _positions_in(cells, np.where(nb < 0, 0, nb))
            out = np.where(found & (nb >= 0), self.labels[pos], -1)
            return out

        lab0 = self.labels
        pair_list = []
        for off in ((1, 0), (0, 1)):
            lab1 = lab_at(off)
            keep = (lab1 >= 0) & (lab1 != lab0)
            pair_list.append(np.stack([lab0[keep], lab1[keep]], axis=1))
        for off, blockers in (
            ((1, 1), ((1, 0), (0, 1))),
            ((1, -1), ((1, 0), (0, -1))),
        ):
            lab1 = lab_at(off)
            ba = lab_at(blockers[0])
            bb = lab_at(blockers[1])
            blocked = (ba >= 0) & (ba == bb) & (ba != lab0) & (ba != lab1)
            keep = (lab1 >= 0) & (lab1 != lab0) & ~blocked
            pair_list.append(np.stack([lab0[keep], lab1[keep]], axis=1))
        pairs = np.concatenate(pair_list, axis=0)
        if pairs.size:
            pairs = np.unique(np.sort(pairs, axis=1), axis=0)
        out = [[] for _ in range(self.nplaques)]
        for a, b in pairs:
            out[int(a)].append(int(b))
            out[int(b)].append(int(a))
        return [np.array(sorted(v), dtype=np.int64) for v in out]

    def equals(self, other: "LabelField") -> bool:
        return self.domain.equals(other.domain) and np.array_equal(
            self.labels, other.labels
        )


def _dense_renumber(raw):
    """Renumber labels densely by first occurrence along sorted domain cells."""
    uniq, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(uniq.size)
    return rank[inverse]


def label_field(domain: CellSet, labels, validate: bool = True) -> LabelField:
    return LabelField(domain, labels, validate=validate)


def single_plaque_field(domain: CellSet) -> LabelField:
    return LabelField(domain, np.zeros(len(domain), dtype=np.int64), validate=True)


def singleton_field(domain: CellSet) -> LabelField:
    """Q_min: every cell its own plaque."""
    return LabelField(domain, np.arange(len(domain)), validate=False)


# ---------------------------------------------------------------------------
# discrete discs


@dataclass(frozen=True)
class Disc:
    """A disc-shaped domain with its boundary marked at construction.

    The boundary convention is fixed: cells of the region with a
    four-neighbor outside it (or off the space).  origin_ij anchors local
    unwrapped coordinates for cubical computations on periodic spaces.
    """

    region: CellSet
    boundary: CellSet
    origin_ij: tuple


def disc(space: GridSpace, region_cells) -> Disc:
    region = region_cells if isinstance(region_cells, CellSet) else cellset(space, region_cells)
    if len(region) == 0:
        raise ValueError("disc region is empty")
    i, j = space.cell_ij(region.cells)
    if space.kind == G.RECTANGLE:
        origin = (0, 0)
    else:
        ui, ok_i = G._unwrap_axis(i, space.nx)
        uj, ok_j = G._unwrap_axis(j, space.ny)
        if not (ok_i and ok_j):
            raise ValueError("disc region wraps around the space")
        origin = (int((i - ui)[0] % space.nx), int((j - uj)[0] % space.ny))
    return Disc(region, G.boundary_cells(space, region), origin)


def _local_ij(space: GridSpace, disc_: Disc, cells):
    i, j = space.cell_ij(cells)
    if space.kind == G.RECTANGLE:
        return i, j
    return (i - disc_.origin_ij[0]) % space.nx, (j - disc_.origin_ij[1]) % space.ny


# ---------------------------------------------------------------------------
# restriction


def monotone_restriction(field: LabelField, y: CellSet) -> LabelField:
    """Plaque of x in the result = component of (plaque of x) ∩ Y containing x."""
    if not np.all(field.domain.contains(y.cells)):
        raise ValueError("restriction target is not contained in the field domain")
    if len(y) == 0:
        raise ValueError("restriction to an empty set")
    old = field.labels_at(y.cells)
    raw = np.empty(len(y), dtype=np.int64)
    counter = 0
    for lab in np.unique(old):
        sel = np.nonzero(old == lab)[0]
        piece = CellSet(field.space, y.cells[sel])
        for comp in components(piece):
            pos, _ = _positions_in(y.cells, comp.cells)
            raw[pos] = counter
            counter += 1
    return LabelField(y, raw, validate=False)


# ---------------------------------------------------------------------------
# quotient graphs


class QuotientGraph:
    """Plaque adjacency graph with per-node annotations."""

    def __init__(self, field: LabelField, disc_: Disc | None = None):
        self.nplaques = field.nplaques
        self.neighbor_lists = field.adjacency
        self.edges = np.array(
            sorted(
                (a, int(b))
                for a in range(self.nplaques)
                for b in self.neighbor_lists[a]
                if a < b
            ),
            dtype=np.int64,
        ).reshape(-1, 2)
        self.node_diameter = np.array(
            [G.diameter(field.plaque(p)) for p in range(self.nplaques)], dtype=float
        )
        if disc_ is not None:
            self.boundary_contact = np.array(
                [
                    bool(np.intersect1d(field.plaque_cells[p], disc_.boundary.cells).size)
                    for p in range(self.nplaques)
                ]
            )
        else:
            self.boundary_contact = None

    def degree(self, node: int) -> int:
        return len(self.neighbor_lists[int(node)])

    def degrees(self):
        return np.array([len(v) for v in self.neighbor_lists], dtype=np.int64)

    def bfs_parents(self, start: int):
        parents = np.full(self.nplaques, -1, dtype=np.int64)
        seen = np.zeros(self.nplaques, dtype=bool)
        seen[start] = True
        queue = [int(start)]
        while queue:
            u = queue.pop(0)
            for v in self.neighbor_lists[u]:
                v = int(v)
                if not seen[v]:
                    seen[v] = True
                    parents[v] = u
                    queue.append(v)
        return parents, seen

    def is_connected(self) -> bool:
        _, seen = self.bfs_parents(0)
        return bool(seen.all())

    def find_cycle(self):
        """A cycle as a list of node ids, or None when the graph is a forest."""
        parents = np.full(self.nplaques, -1, dtype=np.int64)
        seen = np.zeros(self.nplaques, dtype=bool)
        for root in range(self.nplaques):
            if seen[root]:
                continue
            seen[root] = True
            queue = [root]
            while queue:
                u = queue.pop(0)
                for v in self.neighbor_lists[u]:
                    v = int(v)
                    if not seen[v]:
                        seen[v] = True
                        parents[v] = u
                        queue.append(v)
                    elif v != parents[u]:
                        return _close_cycle(parents, u, v)
        return None

    def path(self, a: int, b: int):
        parents, seen = self.bfs_parents(a)
        if not seen[b]:
            return None
        out = [int(b)]
        while out[-1] != a:
            out.append(int(parents[out[-1]]))
        return out[::-1]


def _close_cycle(parents, u, v):
    up, vp = [int(u)], [int(v)]
    while parents[up[-1]] >= 0:
        up.append(int(parents[up[-1]]))
    while parents[vp[-1]] >= 0:
        vp.append(int(parents[vp[-1]]))
    common = set(up) & set(vp)
    cut_u = next(i for i, n in enumerate(up) if n in common)
    cut_v = next(i for i, n in enumerate(vp) if n in common)
    # u .. lca .. v, then close the non-tree edge v-u
    return up[: cut_u + 1] + vp[:cut_v][::-1]


def quotient_graph(field: LabelField, disc_: Disc | None = None) -> QuotientGraph:
    return QuotientGraph(field, disc_)


def is_dendrite_quotient(field: LabelField):
    """(True, None) when the quotient is a tree; (False, cycle) otherwise."""
    graph = quotient_graph(field)
    if not graph.is_connected():
        raise ValueError("domain is not connected")
    cycle = graph.find_cycle()
    if cycle is not None:
        return False, cycle
    # connected + acyclic <=> |E| = |V| - 1
    assert len(graph.edges) == graph.nplaques - 1
    return True, None


def is_quotient_path(field: LabelField) -> bool:
    ok, _ = is_dendrite_quotient(field)
    if not ok:
        return False
    return bool((quotient_graph(field).degrees() <= 2).all())


def classify_quotient_point(field: LabelField, pid: int) -> str:
    ok, _ = is_dendrite_quotient(field)
    if not ok:
        raise ValueError("quotient is not a dendrite")
    deg = quotient_graph(field).degree(pid)
    if deg <= 1:
        return "end"
    if deg == 2:
        return "regular"
    return f"ramification({deg})"


def separating_plaque(field: LabelField, p1: int, p2: int, p3: int):
    """Median node of the quotient tree for three plaques.

    Returns (plaque id, None) when removing that plaque leaves p1, p2, p3 in
    three distinct components, or (None, explanation) when one of the three
    already separates the other two.
    """
    ok, _ = is_dendrite_quotient(field)
    if not ok:
        raise ValueError("quotient is not a dendrite")
    ids = (int(p1), int(p2), int(p3))
    if len(set(ids)) != 3:
        raise ValueError("the three plaques must be pairwise distinct")
    graph = quotient_graph(field)
    path12 = graph.path(ids[0], ids[1])
    path13 = graph.path(ids[0], ids[2])
    path23 = graph.path(ids[1], ids[2])
    median = set(path12) & set(path13) & set(path23)
    assert len(median) == 1  # unique in a tree
    m = median.pop()
    if m in ids:
        others = [p for p in ids if p != m]
        return None, (
            f"plaque {m} lies between plaques {others[0]} and {others[1]}: "
            "no third plaque separates all three"
        )
    return m, None


# ---------------------------------------------------------------------------
# cw-decomposition test


def euler_characteristic(space: GridSpace, disc_: Disc, cells) -> int:
    """Cubical chi = V - E + F of the closed cells, in local coordinates."""
    i, j = _local_ij(space, disc_, cells)
    w = int(i.max()) + 2
    corners = set()
    h_edges = set()
    v_edges = set()
    for ii, jj in zip(i.tolist(), j.tolist()):
        corners.update(
            (ii + a) + w * (jj + b) for a in (0, 1) for b in (0, 1)
        )
        h_edges.update((ii + w * (jj + b)) for b in (0, 1))
        v_edges.update(((ii + a) + w * jj) for a in (0, 1))
    return len(corners) - (len(h_edges) + len(v_edges)) + len(cells)


def _has_filled_block(space: GridSpace, disc_: Disc, cells) -> bool:
    i, j = _local_ij(space, disc_, cells)
    i = i - i.min() + 1
    j = j - j.min() + 1
    m = np.zeros((int(j.max()) + 2, int(i.max()) + 2), dtype=bool)
    m[j, i] = True
    return bool(ndimage.binary_erosion(m, np.ones((3, 3), dtype=bool)).any())


@dataclass
class CwDecompositionReport:
    ok: bool
    failures: list

    def __bool__(self):
        return self.ok


def is_cw_decomposition(field: LabelField, disc_: Disc) -> CwDecompositionReport:
    """Every plaque meets the marked boundary, has empty interior, and passes
    the dendrite proxy (connected + cubical chi = 1)."""
    if not isinstance(disc_, Disc):
        raise TypeError("domain without marked boundary; build it with disc()")
    if not field.domain.equals(disc_.region):
        raise ValueError("field domain differs from the disc region")
    failures = []
    sp = field.space
    for pid in range(field.nplaques):
        cells = field.plaque_cells[pid]
        if not np.intersect1d(cells, disc_.boundary.cells).size:
            failures.append((pid, "plaque misses boundary"))
        if _has_filled_block(sp, disc_, cells):
            failures.append((pid, "plaque has interior (filled 3x3 block)"))
        elif euler_characteristic(sp, disc_, cells) != 1:
            failures.append((pid, "plaque fails the dendrite proxy"))
    return CwDecompositionReport(not failures, failures)


def genericity_fraction(field: LabelField, disc_: Disc) -> float:
    """Fraction of cells whose plaque meets the boundary in 1 or 2 components."""
    good_cells = 0
    for pid in range(field.nplaques):
        cells = field.plaque_cells[pid]
        touch = np.intersect1d(cells, disc_.boundary.cells)
        if touch.size:
            ncomp = len(components(CellSet(field.space, touch)))
            if ncomp <= 2:
                good_cells += cells.size
    return good_cells / len(field.domain)


# ---------------------------------------------------------------------------
# semicontinuity profiling

_COMPASS = np.array(
    [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)],
    dtype=float,
)
_COMPASS /= np.linalg.norm(_COMPASS, axis=1)[:, None]

APPROACH_DISTANCES = tuple(0.1 * 0.5**k for k in range(6))


class FieldPlaqueQuery:
    """Adapter exposing plaque lookup near points for a LabelField."""

    def __init__(self, field: LabelField):
        self.field = field

    @property
    def space(self):
        return self.field.space

    def contains(self, point) -> bool:
        return self.field.contains_point(point)

    def plaque_near(self, point) -> CellSet:
        pid = self.field.plaque_at_point(point)
        return CellSet(self.space, self.field.plaque_cells[pid])


@dataclass
class SemicontinuityReport:
    point: tuple
    resolutions: list
    upper: list
    symmetric: list
    cell_sizes: list
    per_direction: list

    def upper_trend_ok(self, factor: float = 2.0) -> bool:
        return self.upper[-1] <= factor * self.cell_sizes[-1]


def semicontinuity_profile(generator, point, resolutions) -> SemicontinuityReport:
    """Approach the point along 8 compass directions, halving from 0.1.

    The limit plaque of a direction is taken at the finest approach point the
    grid can distinguish from the point's own plaque; approach points whose
    plaque coincides with the point's are treated as folded into it.  The
    symmetric defect is the Hausdorff distance from the limit plaque to the
    plaque at the point, the upper defect the one-sided excess of the limit
    plaque (nonzero when limits overshoot the plaque, the upper
    semicontinuity direction).
    """
    point = np.asarray(point, dtype=float)
    uppers, symmetrics, csizes, details = [], [], [], []
    for res in resolutions:
        query = generator.instantiate(int(res))
        if not query.contains(point):
            raise ValueError("point outside domain")
        base = query.plaque_near(point)
        base_dt = G.distance_transform(base)
        res_detail = []
        up_worst = 0.0
        sym_worst = 0.0
        for direction in _COMPASS:
            limit = None
            limit_dist = None
            for dist in APPROACH_DISTANCES:
                q = point + dist * direction
                if not query.contains(q):
                    continue
                plq = query.plaque_near(q)
                if not np.array_equal(plq.cells, base.cells):
                    limit = plq
                    limit_dist = dist
            if limit is None:
                res_detail.append({"direction": tuple(direction), "upper": 0.0,
                                   "symmetric": 0.0, "approach": None})
                continue
            upper = float(base_dt[limit.cells].max())
            limit_dt = G.distance_transform(limit)
            symmetric = max(upper, float(limit_dt[base.cells].max()))
            up_worst = max(up_worst, upper)
            sym_worst = max(sym_worst, symmetric)
            res_detail.append({"direction": tuple(direction), "upper": upper,
                               "symmetric": symmetric, "approach": limit_dist})
        uppers.append(up_worst)
        symmetrics.append(sym_worst)
        csizes.append(query.space.cell_size)
        details.append(res_detail)
    return SemicontinuityReport(
        tuple(point), list(resolutions), uppers, symmetrics, csizes, details
    )


# ---------------------------------------------------------------------------
# plaque arcs and C-smoothness


def plaque_path(field: LabelField, pid: int, cell_a: int, cell_b: int) -> Continuum:
    """Shortest cell path between two cells inside one plaque.

    Breadth-first with neighbors visited in ascending cell order, so ties
    break lexicographically and reruns are identical.
    """
    cells = field.plaque_cells[int(pid)]
    pos_a, found_a = _positions_in(cells, np.asarray([cell_a]))
    pos_b, found_b = _positions_in(cells, np.asarray([cell_b]))
    if not (found_a[0] and found_b[0]):
        raise ValueError("cells are not inside the plaque")
    n = cells.size
    nbr = field.space.neighbors(cells, 8)
    pos, found = _positions_in(cells, nbr)
    parents = np.full(n, -1, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    start, goal = int(pos_a[0]), int(pos_b[0])
    seen[start] = True
    frontier = [start]
    while frontier and not seen[goal]:
        nxt = []
        for u in frontier:
            for k in range(nbr.shape[1]):
                if found[u, k]:
                    v = int(pos[u, k])
                    if not seen[v]:
                        seen[v] = True
                        parents[v] = u
                        nxt.append(v)
        nxt.sort()
        frontier = nxt
    if not seen[goal]:
        raise ValueError("plaque is not connected")
    trail = [goal]
    while trail[-1] != start:
        trail.append(int(parents[trail[-1]]))
    return Continuum(field.space, np.sort(cells[np.array(trail)]))


def _require_arc_plaques(field: LabelField, disc_: Disc | None = None):
    d = disc_ if disc_ is not None else disc(field.space, field.domain)
    for pid in range(field.nplaques):
        cells = field.plaque_cells[pid]
        if _has_filled_block(field.space, d, cells) or \
                euler_characteristic(field.space, d, cells) != 1:
            raise PlaqueNotArcError(
                f"plaque {pid} not arc-connected (fails the dendrite proxy)"
            )


def csmooth_defect(field: LabelField, samples: int = 40, seed: int = 0,
                   disc_: Disc | None = None) -> float:
    """Worst sampled response of plaque arcs to a one-cell perturbation.

    Picks x, y in a plaque, maps them to the nearest cells x', y' of an
    adjacent plaque, and compares the arcs Q(x,y), Q(x',y') by Hausdorff
    distance, normalized to a per-cell perturbation:
    defect = H(arc, arc') * cell_size / max(d(x,x'), d(y,y')).
    """
    _require_arc_plaques(field, disc_)
    rng = np.random.default_rng(seed)
    sp = field.space
    eligible = [
        p
        for p in range(field.nplaques)
        if field.plaque_cells[p].size >= 2 and field.adjacency[p].size
    ]
    if not eligible:
        return 0.0
    worst = 0.0
    for _ in range(samples):
        pid = int(rng.choice(eligible))
        cells = field.plaque_cells[pid]
        a, b = rng.choice(cells.size, size=2, replace=True)
        qid = int(rng.choice(field.adjacency[pid]))
        other = field.plaque_cells[qid]
        pert = 0.0
        moved = []
        for c in (int(cells[a]), int(cells[b])):
            d = sp.cell_distance(np.full(other.size, c), other)
            k = int(np.argmin(d))  # ties -> lowest cell index (cells sorted)
            moved.append(int(other[k]))
            pert = max(pert, float(d[k]))
        arc = plaque_path(field, pid, int(cells[a]), int(cells[b]))
        arc2 = plaque_path(field, qid, moved[0], moved[1])
        h = G.hausdorff_distance(arc, arc2)
        worst = max(worst, h * sp.cell_size / pert)
    return worst


# ---------------------------------------------------------------------------
# product structure


@dataclass
class ProductFailure:
    reason: str
    details: str = ""

    def __bool__(self):
        return False


@dataclass
class ProductStructure:
    field: LabelField
    transversal: np.ndarray      # ordered cells of the arc A1
    pi_cell: np.ndarray          # per plaque: its cell on A1
    h1: np.ndarray               # per cell in domain order: transversal coordinate
    h2: np.ndarray               # per cell: normalized size along the plaque arc
    injective: bool
    band_span_cells: int         # worst per-plaque spread of h1 in target cells

    def __bool__(self):
        return True


def _ordered_arc(space: GridSpace, arc_cells, start_cell):
    """Order the cells of a thin arc by BFS distance from one end."""
    n = arc_cells.size
    nbr = space.neighbors(arc_cells, 8)
    pos, found = _positions_in(arc_cells, nbr)
    start = int(np.nonzero(arc_cells == start_cell)[0][0])
    dist = np.full(n, -1, dtype=np.int64)
    dist[start] = 0
    frontier = [start]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for u in frontier:
            for k in range(nbr.shape[1]):
                if found[u, k] and dist[pos[u, k]] < 0:
                    dist[pos[u, k]] = d
                    nxt.append(int(pos[u, k]))
        frontier = sorted(nxt)
    order = np.lexsort((arc_cells, dist))
    return arc_cells[order]


def product_structure(field: LabelField, disc_: Disc,
                      csmooth_threshold: float | None = None,
                      csmooth_samples: int = 40, seed: int = 0):
    """Conjugacy coordinates h(z) = (position of the plaque on a transversal
    boundary arc, normalized size of the plaque arc from the transversal to z).

    Returns ProductStructure on success, ProductFailure with a named
    diagnostic when a hypothesis fails.
    """
    sp = field.space
    cell = sp.cell_size
    if csmooth_threshold is None:
        csmooth_threshold = 6 * cell

    cw = is_cw_decomposition(field, disc_)
    if not cw.ok:
        reasons = {r for _, r in cw.failures}
        if reasons == {"plaque misses boundary"}:
            return ProductFailure("plaque misses boundary", str(cw.failures[:4]))
        return ProductFailure(
            "plaque not arc-connected",
            f"interior or proxy failures: {cw.failures[:4]}",
        )
    if not is_quotient_path(field):
        return ProductFailure("quotient not an arc")

    # the two extreme plaques must be the two boundary plaques, non-singleton
    contained = [
        p
        for p in range(field.nplaques)
        if np.all(np.isin(field.plaque_cells[p], disc_.boundary.cells))
    ]
    if len(contained) != 2:
        return ProductFailure(
            "expected two boundary plaques", f"found {len(contained)}"
        )
    if any(field.plaque_cells[p].size == 1 for p in contained):
        return ProductFailure("boundary plaque trivial")
    graph = quotient_graph(field)
    ends = [p for p in range(field.nplaques) if graph.degree(p) <= 1]
    if sorted(ends) != sorted(contained):
        return ProductFailure(
            "boundary plaques are not the quotient ends",
            f"ends {ends}, boundary plaques {contained}",
        )

    try:
        defect = csmooth_defect(field, csmooth_samples, seed, disc_)
    except PlaqueNotArcError as err:
        return ProductFailure("plaque not arc-connected", str(err))
    if defect > csmooth_threshold:
        return ProductFailure(
            "C-smooth defect exceeded",
            f"defect {defect:.6f} > threshold {csmooth_threshold:.6f}",
        )

    e1, e2 = sorted(contained)
    side = np.setdiff1d(
        disc_.boundary.cells,
        np.concatenate([field.plaque_cells[e1], field.plaque_cells[e2]]),
    )
    candidates = []
    for comp in components(CellSet(sp, side)):
        grown = G.dilate(comp, 1).cells
        if np.intersect1d(grown, field.plaque_cells[e1]).size and \
                np.intersect1d(grown, field.plaque_cells[e2]).size:
            candidates.append(comp)
    if not candidates:
        return ProductFailure("no transversal boundary arc joins the end plaques")
    arc = min(candidates, key=lambda cset: int(cset.cells[0]))

    # order from the end adjacent to plaque e1, then extend the arc by one
    # corner cell of each end plaque so every plaque meets it
    near_e1 = arc.cells[
        np.isin(arc.cells, G.dilate(CellSet(sp, field.plaque_cells[e1]), 1).cells)
    ]
    ordered = _ordered_arc(sp, arc.cells, int(near_e1[0]))
    corner1 = np.intersect1d(
        field.plaque_cells[e1], G.dilate(CellSet(sp, ordered[:1]), 1).cells
    )[0]
    corner2 = np.intersect1d(
        field.plaque_cells[e2], G.dilate(CellSet(sp, ordered[-1:]), 1).cells
    )[0]
    ordered = np.concatenate([[corner1], ordered, [corner2]])
    arc_rank = {int(c): k for k, c in enumerate(ordered)}
    denom = max(len(ordered) - 1, 1)

    pi_cell = np.full(field.nplaques, -1, dtype=np.int64)
    for pid in range(field.nplaques):
        hit = np.intersect1d(field.plaque_cells[pid], ordered)
        if not hit.size:
            return ProductFailure(
                "plaque misses the transversal arc", f"plaque {pid}"
            )
        pi_cell[pid] = hit[0]

    h1 = np.empty(len(field.domain), dtype=float)
    h2 = np.empty(len(field.domain), dtype=float)
    for pid in range(field.nplaques):
        cells = field.plaque_cells[pid]
        pos, _ = _positions_in(field.domain.cells, cells)
        h1[pos] = arc_rank[int(pi_cell[pid])] / denom
        h2[pos] = _arc_size_profile(field, pid, int(pi_cell[pid]))

    pairs = np.stack([h1, h2], axis=1)
    injective = np.unique(pairs, axis=0).shape[0] == pairs.shape[0]
    # h1 is constant per plaque by construction; report the worst spread in
    # cells of the target grid anyway, as the band-height certificate
    span = 0
    for pid in range(field.nplaques):
        pos, _ = _positions_in(field.domain.cells, field.plaque_cells[pid])
        vals = h1[pos]
        span = max(span, int(round((vals.max() - vals.min()) * sp.resolution)))
    return ProductStructure(field, ordered, pi_cell, h1, h2, injective, span)


def _arc_size_profile(field: LabelField, pid: int, root_cell: int):
    """Normalized whitney size of the plaque arc from the root to each cell.

    Walks the BFS tree of the plaque from its transversal cell with an
    incremental size tracker (push on descend, pop on backtrack), so the
    profile is exact for every cell at one pass cost.
    """
    cells = field.plaque_cells[pid]
    sp = field.space
    n = cells.size
    nbr = sp.neighbors(cells, 8)
    pos, found = _positions_in(cells, nbr)
    root = int(np.nonzero(cells == root_cell)[0][0])
    parents = np.full(n, -1, dtype=np.int64)
    order = []
    seen = np.zeros(n, dtype=bool)
    seen[root] = True
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            order.append(u)
            for k in range(nbr.shape[1]):
                if found[u, k] and not seen[pos[u, k]]:
                    seen[pos[u, k]] = True
                    parents[pos[u, k]] = u
                    nxt.append(int(pos[u, k]))
        frontier = sorted(set(nxt))
    children = [[] for _ in range(n)]
    for v in range(n):
        if parents[v] >= 0:
            children[parents[v]].append(v)
    for ch in children:
        ch.sort()

    mu = np.zeros(n, dtype=float)
    tracker = G.SpreadTracker(sp)
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            tracker.pop()
            continue
        tracker.push(int(cells[node]))
        mu[node] = tracker.value()
        stack.append((node, True))
        for chd in reversed(children[node]):
            stack.append((chd, False))
    total = G.whitney_size(CellSet(sp, cells))
    out = mu / total if total > 0 else np.zeros(n)
    return out


# ---------------------------------------------------------------------------
# pair product structure


@dataclass
class PairFailure:
    reason: str
    witness_cell: int | None = None
    details: str = ""

    def __bool__(self):
        return False


@dataclass
class PairProduct:
    coords: np.ndarray        # per domain cell: (rank along Q1 path, rank along Q2 path)
    corner_labels: tuple      # (q1_a, q2_b, q1_c, q2_d) of the boundary rectangle

    def __bool__(self):
        return True


def _boundary_cycle(space: GridSpace, disc_: Disc):
    """Cells of the boundary in cyclic order around the region centroid.

    Valid for convex regions (the shapes this structure applies to); near
    diagonal corners the boundary cell graph grows chords that defeat a
    plain adjacency walk, while the angular order stays unambiguous.
    """
    cells = disc_.boundary.cells
    pts = space.centers(cells)
    centroid = space.centers(disc_.region.cells).mean(axis=0)
    ang = np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0])
    rad = np.hypot(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0])
    order = np.lexsort((rad, ang))
    ordered = cells[order]
    # sanity: consecutive cells (cyclically) must stay within a small hop
    i, j = space.cell_ij(ordered)
    di = np.abs(np.diff(np.concatenate([i, i[:1]])))
    dj = np.abs(np.diff(np.concatenate([j, j[:1]])))
    if np.any(np.maximum(di, dj) > 2):
        raise ValueError("boundary is not a simple cycle")
    return ordered


def pair_product_structure(q1: LabelField, q2: LabelField, disc_: Disc):
    """Joint coordinates from two decompositions crossing once per pair."""
    if not (q1.domain.equals(disc_.region) and q2.domain.equals(disc_.region)):
        raise ValueError("fields must share the disc region as domain")
    n2 = q2.nplaques
    codes = q1.labels * n2 + q2.labels
    counts = np.bincount(codes, minlength=q1.nplaques * n2)
    per_cell = counts[codes]
    if np.any(per_cell >= 2):
        w = int(q1.domain.cells[np.argmax(per_cell >= 2)])
        return PairFailure(
            "plaque intersection is not a single cell",
            witness_cell=w,
            details=f"|Q1(x) ∩ Q2(x)| = {int(per_cell.max())}",
        )
    if counts.min() < 1:
        return PairFailure(
            "some plaque pair never meets",
            details=f"{int((counts == 0).sum())} empty pairs",
        )

    cycle = _boundary_cycle(q1.space, disc_)
    l1 = q1.labels_at(cycle)
    l2 = q2.labels_at(cycle)
    corner = _four_arc_cover(l1, l2)
    if corner is None:
        return PairFailure("boundary is not a rectangle for the pair")

    r1 = _path_rank(q1)
    r2 = _path_rank(q2)
    coords = np.stack([r1[q1.labels], r2[q2.labels]], axis=1)
    return PairProduct(coords, corner)


def _path_rank(field: LabelField):
    """Rank of each plaque along the quotient path (falls back to label order)."""
    if not is_quotient_path(field):
        return np.arange(field.nplaques, dtype=np.int64)
    graph = quotient_graph(field)
    degs = graph.degrees()
    if field.nplaques == 1:
        return np.zeros(1, dtype=np.int64)
    start = int(np.nonzero(degs <= 1)[0][0])
    order = [start]
    prev = -1
    while len(order) < field.nplaques:
        nxt = [int(v) for v in graph.neighbor_lists[order[-1]] if v != prev]
        prev = order[-1]
        order.append(nxt[0])
    rank = np.empty(field.nplaques, dtype=np.int64)
    rank[np.array(order)] = np.arange(field.nplaques)
    return rank


def _four_arc_cover(l1, l2):
    """Find a cyclic cover by arcs constant in l1, l2, l1, l2 (corner-sharing
    allowed).  Returns the four labels or None."""
    m = len(l1)

    def run_lengths(lab):
        ext = np.concatenate([lab, lab])
        out = np.ones(2 * m, dtype=np.int64)
        for i in range(2 * m - 2, -1, -1):
            if ext[i] == ext[i + 1]:
                out[i] = out[i + 1] + 1
        return np.minimum(out[:m], m)

    run1 = run_lengths(l1)
    run2 = run_lengths(l2)
    for s in range(m):
        a1 = int(run1[s])
        for shift1 in (a1 - 1, a1):
            p1 = (s + shift1) % m
            b1 = int(run2[p1])
            covered1 = shift1 + b1
            for shift2 in (covered1 - 1, covered1):
                p2 = (s + shift2) % m
                a2 = int(run1[p2])
                covered2 = shift2 + a2
                for shift3 in (covered2 - 1, covered2):
                    p3 = (s + shift3) % m
                    b2 = int(run2[p3])
                    if shift3 + b2 >= m:
                        la, lb = int(l1[s]), int(l2[p1])
                        lc, ld = int(l1[p2]), int(l2[p3])
                        if la != lc and lb != ld:
                            return la, lb, lc, ld
    return None


# ---------------------------------------------------------------------------
# generating pairs


@dataclass
class GeneratingPairResult:
    delta: float
    witness_cell: int | None
    witness_direction: tuple | None
    # nearest violator of each crossing condition, as (cell, direction);
    # distinct directions certify an asymmetric (one-sided) failure
    first_miss_q1x: tuple | None = None
    first_miss_q2x: tuple | None = None

    def __bool__(self):
        return self.delta > 0

    def asymmetric(self) -> bool:
        a, b = self.first_miss_q1x, self.first_miss_q2x
        if a is None or b is None:
            return a is not b
        return a[1] != b[1]


def generating_pair_test(q1: LabelField, q2: LabelField, x_cell: int,
                         eps: float) -> GeneratingPairResult:
    """Largest grid-multiple δ with Q1(x)∩Q2(y) and Q2(x)∩Q1(y) nonempty for
    every y within δ, after restricting both fields to the ε-ball at x."""
    sp = q1.space
    center = sp.centers(np.asarray([x_cell]))[0]
    if sp.kind == G.RECTANGLE:
        x0, y0, x1, y1 = sp.bounds
        if (center[0] - eps < x0 or center[0] + eps > x1 or
                center[1] - eps < y0 or center[1] + eps > y1):
            raise ValueError("x too close to the domain boundary for the ε-ball")
    ball = G.ball_cells(sp, center, eps)
    if not (np.all(q1.domain.contains(ball.cells)) and
            np.all(q2.domain.contains(ball.cells))):
        raise ValueError("x too close to the domain boundary for the ε-ball")
    r1 = monotone_restriction(q1, ball)
    r2 = monotone_restriction(q2, ball)
    lab1 = r1.labels_at(np.asarray([x_cell]))[0]
    lab2 = r2.labels_at(np.asarray([x_cell]))[0]
    p1x = r1.plaque_cells[lab1]
    p2x = r2.plaque_cells[lab2]
    # Q1(x) meets Q2(y) iff y's r2-label appears on Q1(x), and symmetrically
    good2 = np.zeros(r2.nplaques, dtype=bool)
    good2[np.unique(r2.labels_at(p1x))] = True
    good1 = np.zeros(r1.nplaques, dtype=bool)
    good1[np.unique(r1.labels_at(p2x))] = True
    ok_a = good2[r2.labels]          # Q1(x) ∩ Q2(y) ≠ ∅
    ok_b = good1[r1.labels]          # Q2(x) ∩ Q1(y) ≠ ∅

    d = sp.point_distance(ball.centers(), center)
    order = np.lexsort((ball.cells, d))
    cell = sp.cell_size

    def direction_of(cell_id):
        wv = sp.centers(np.asarray([cell_id]))[0] - center
        return (
            float(np.sign(np.round(wv[0] / cell))),
            float(np.sign(np.round(wv[1] / cell))),
        )

    def first_violator(ok):
        bad = np.nonzero(~ok[order])[0]
        if bad.size == 0:
            return None
        c = int(ball.cells[order][int(bad[0])])
        return c, direction_of(c), float(d[order][int(bad[0])])

    va = first_violator(ok_a)
    vb = first_violator(ok_b)
    miss_a = (va[0], va[1]) if va else None
    miss_b = (vb[0], vb[1]) if vb else None
    if va is None and vb is None:
        return GeneratingPairResult(
            float(np.floor(eps / cell) * cell), None, None, None, None
        )
    nearest = min((v for v in (va, vb) if v is not None), key=lambda v: (v[2], v[0]))
    delta = max(float(np.floor((nearest[2] - 1e-12) / cell) * cell), 0.0)
    return GeneratingPairResult(delta, nearest[0], nearest[1], miss_a, miss_b)


# ---------------------------------------------------------------------------
# foliation generators (test and CLI fodder)


def horizontal_foliation(space: GridSpace) -> LabelField:
    """One plaque per row of the full space."""
    domain = cellset(space, space.all_cells())
    _, j = space.cell_ij(domain.cells)
    return LabelField(domain, j, validate=False)


def vertical_foliation(space: GridSpace) -> LabelField:
    domain = cellset(space, space.all_cells())
    i, _ = space.cell_ij(domain.cells)
    return LabelField(domain, i, validate=False)


def sheared_band_foliation(space: GridSpace, slope: float = 0.3):
    """Sloped lines, one cell per column, kept only where they span the full
    width of the space.

    Returns (field, disc): the domain is the band between the two extreme
    full-width lines, so exactly those two plaques lie inside the boundary.
    """
    if abs(slope) > 1:
        raise ValueError("slope must not exceed 1 for eight-connected lines")
    cells = space.all_cells()
    i, j = space.cell_ij(cells)
    k = np.round((j + 0.5) - slope * (i + 0.5)).astype(np.int64)
    full = [
        lab
        for lab in range(int(k.min()), int(k.max()) + 1)
        if np.unique(i[k == lab]).size == space.nx
    ]
    if not full:
        raise ValueError("space too small for a full-width sheared band")
    keep = np.isin(k, np.array(full))
    domain = CellSet(space, cells[keep])
    field = LabelField(domain, k[keep] - min(full), validate=True)
    return field, disc(space, domain)


def radial_annulus_field(space: GridSpace, center=(0.5, 0.5), r_in: float = 0.15,
                         r_out: float = 0.4, sectors: int = 16) -> LabelField:
    """Annulus cut into radial sectors; its quotient is a cycle."""
    cells = space.all_cells()
    pts = space.centers(cells)
    dx = pts[:, 0] - center[0]
    dy = pts[:, 1] - center[1]
    r = np.hypot(dx, dy)
    keep = (r >= r_in) & (r <= r_out)
    ang = np.mod(np.arctan2(dy[keep], dx[keep]), 2 * np.pi)
    sector = np.minimum((ang / (2 * np.pi) * sectors).astype(np.int64), sectors - 1)
    return LabelField(CellSet(space, cells[keep]), sector, validate=True)


def h_tree_field(space: GridSpace) -> LabelField:
    """An H-shaped domain whose quotient tree is the letter H.

    Each leg is a column of singleton plaques; the two junction plaques span
    two cells so the diagonal contacts of the grid stay inside them, which
    keeps the junction degree at exactly three.
    """
    nx, ny = space.nx, space.ny
    col_a, col_b = nx // 4, 3 * nx // 4
    if col_b - col_a < 4:
        raise ValueError("space too small for the H shape")
    row_m = ny // 2
    cells, labels = [], []
    lab = 0
    for col in (col_a, col_b):
        for j in range(ny):
            if j != row_m:
                cells.append(space.cell_index(col, j))
                labels.append(lab)
                lab += 1
    for pair in ((col_a, col_a + 1), (col_b - 1, col_b)):
        for i in pair:
            cells.append(space.cell_index(i, row_m))
            labels.append(lab)
        lab += 1
    bar = [space.cell_index(i, row_m) for i in range(col_a + 2, col_b - 1)]
    cells.extend(bar)
    labels.extend([lab] * len(bar))
    order = np.argsort(cells)
    return LabelField(
        CellSet(space, np.array(cells, dtype=np.int64)[order]),
        np.array(labels, dtype=np.int64)[order],
        validate=True,
    )


def star_field(space: GridSpace) -> LabelField:
    """Three arms of singleton plaques around a plus-shaped hub plaque.

    The hub absorbs the diagonal contacts between arms, so the quotient is a
    star tree with one ramification(3) point.
    """
    nx, ny = space.nx, space.ny
    ci, cj = nx // 2, ny // 2
    arm = min(nx, ny) // 3
    if arm < 3:
        raise ValueError("space too small for the star shape")
    hub = [
        space.cell_index(ci, cj),
        space.cell_index(ci - 1, cj),
        space.cell_index(ci + 1, cj),
        space.cell_index(ci, cj + 1),
    ]
    cells = list(hub)
    labels = [0, 0, 0, 0]
    lab = 1
    for t in range(2, arm):
        for c in (
            space.cell_index(ci - t, cj),
            space.cell_index(ci + t, cj),
            space.cell_index(ci, cj + t),
        ):
            cells.append(c)
            labels.append(lab)
            lab += 1
    order = np.argsort(cells)
    return LabelField(
        CellSet(space, np.array(cells, dtype=np.int64)[order]),
        np.array(labels, dtype=np.int64)[order],
        validate=True,
    )


def tangency_pair(space: GridSpace):
    """Horizontal rows against upward parabolas y = x² + k·cell.

    The curves are tangent to the rows along x = 0.  Curves whose vertex
    would fall below the space are dropped from the domain (their raster
    splits into two branches), so both fields restrict to the kept cells.
    Needs |x| ≤ 0.5 over the space for eight-connected curve plaques.
    """
    c = space.cell_size
    y0 = space.bounds[1]
    cells = space.all_cells()
    pts = space.centers(cells)
    k = np.round((pts[:, 1] - pts[:, 0] ** 2) / c).astype(np.int64)
    keep = k * c >= y0 + 0.5 * c
    domain = CellSet(space, cells[keep])
    _, j = space.cell_ij(domain.cells)
    q1 = LabelField(domain, j, validate=True)
    q2 = LabelField(domain, k[keep], validate=True)
    return q1, q2


def tangency_probe_cell(space: GridSpace) -> int:
    """A cell on the tangency line x = 0, mid-height."""
    y_mid = 0.5 * (space.bounds[1] + space.bounds[3])
    c = space.cell_size
    return int(space.cell_at(np.array([c / 4, y_mid + c / 4])))


def parabola_pocket_pair(space: GridSpace, bend: float = 0.4):
    """Vertical lines against a pocket field: rows below the axis y = 0,
    right-opening parabola arms x = k·cell + bend·y² above it.

    Arms through cells just above the axis never reach columns left of
    their vertex, while the rows cross every column, so the pair fails to
    generate along the axis and the failure is one-sided.
    """
    c = space.cell_size
    domain = cellset(space, space.all_cells())
    pts = space.centers(domain.cells)
    q1 = vertical_foliation(space)
    upper = pts[:, 1] > 0
    k = np.round((pts[:, 0] - bend * pts[:, 1] ** 2) / c).astype(np.int64)
    _, j = space.cell_ij(domain.cells)
    raw = np.where(upper, 2 * k + 1, 2 * j)
    q2 = LabelField(domain, raw, validate=True)
    return q1, q2


def pocket_probe_cell(space: GridSpace) -> int:
    """The cell just above the axis at x = 0, on the vertex line of the arms."""
    c = space.cell_size
    return int(space.cell_at(np.array([c / 4, c / 4])))


def diagonal_trimmed_pair(space: GridSpace):
    """Horizontal rows against slope-one diagonals, trimmed to a parallelogram
    on which every row crosses every diagonal exactly once.

    Returns (q1, q2, disc) ready for pair_product_structure.
    """
    c = space.cell_size
    x0, y0, x1, y1 = space.bounds
    cells = space.all_cells()
    pts = space.centers(cells)
    k = np.round((pts[:, 1] - pts[:, 0]) / c).astype(np.int64)
    third = (y1 - y0) / 3
    j_keep = (pts[:, 1] > y0 + third) & (pts[:, 1] < y1 - third)
    # a kept diagonal must cross every kept row inside the x-range
    k_lo = int(np.ceil((y1 - third - x1 + 0.5 * c) / c))
    k_hi = int(np.floor((y0 + third - x0 - 0.5 * c) / c))
    keep = j_keep & (k >= k_lo) & (k <= k_hi)
    domain = CellSet(space, cells[keep])
    _, j = space.cell_ij(domain.cells)
    q1 = LabelField(domain, j, validate=True)
    q2 = LabelField(domain, k[keep] - k_lo, validate=True)
    return q1, q2, disc(space, domain)


class FoliationGenerator:
    """Instantiates a named foliation at any resolution (profiling protocol)."""

    def __init__(self, builder, bounds):
        self._builder = builder
        self._bounds = bounds

    def instantiate(self, resolution: int) -> FieldPlaqueQuery:
        space = G.rectangle(self._bounds, resolution)
        return FieldPlaqueQuery(self._builder(space))


def horizontal_generator(bounds=(0.0, 0.0, 1.0, 1.0)) -> FoliationGenerator:
    return FoliationGenerator(horizontal_foliation, bounds)
