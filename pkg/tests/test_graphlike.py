import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cwlab import geometry as G
from cwlab import decomposition as D
from cwlab import graphlike as GL


def quiet_flow(source):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return GL.FlowDecomposition(source)


@pytest.fixture(scope="module")
def bar128():
    return quiet_flow(GL.make_flat_bar(128))


@pytest.fixture(scope="module")
def cocarc128():
    return quiet_flow(GL.make_cocarc(128))


@pytest.fixture(scope="module")
def sin128():
    return quiet_flow(GL.make_sin_one_over_x(128))


@pytest.fixture(scope="module")
def cantor128():
    return quiet_flow(GL.make_cantor_square(128))


@pytest.fixture(scope="module")
def flows128(bar128, cocarc128, sin128, cantor128):
    return {"bar": bar128, "cocarc": cocarc128, "sin": sin128, "cantor": cantor128}


def rows_of(space, cells):
    return space.cell_ij(cells)[1]


# ---------------------------------------------------------------------------
# validation


def test_validate_middle_row():
    sp = G.rectangle((0.0, 0.0, 1.0, 1.0), 16)
    row = sp.cell_index(np.arange(sp.nx), np.full(sp.nx, 8))
    ok, col = GL.validate_graphlike(G.cellset(sp, row))
    assert ok and col is None


def test_validate_reports_missing_column():
    sp = G.rectangle((0.0, 0.0, 1.0, 1.0), 16)
    row = sp.cell_index(np.arange(sp.nx), np.full(sp.nx, 8))
    ok, col = GL.validate_graphlike(G.cellset(sp, row[np.arange(sp.nx) != 5]))
    assert not ok and col == 5


def test_validate_reports_broken_slice():
    sp = G.rectangle((0.0, 0.0, 1.0, 1.0), 16)
    i = np.arange(sp.nx)
    cells = np.concatenate([sp.cell_index(i, np.full(sp.nx, 8)),
                            sp.cell_index(np.array([3]), np.array([11]))])
    ok, col = GL.validate_graphlike(G.cellset(sp, np.sort(cells)))
    assert not ok and col == 3


def test_validate_rejects_boundary_contact():
    sp = G.rectangle((0.0, 0.0, 1.0, 1.0), 16)
    i = np.arange(sp.nx)
    cells = sp.cell_index(i, np.where(i == 7, sp.ny - 1, 8))
    cells = np.sort(np.concatenate([cells, sp.cell_index(np.array([7]), np.arange(8, sp.ny - 1))]))
    ok, col = GL.validate_graphlike(G.cellset(sp, cells))
    assert not ok and col == 7


def test_validate_rejects_solid_block():
    sp = G.rectangle((0.0, 0.0, 1.0, 1.0), 16)
    i = np.arange(sp.nx)
    runs = [sp.cell_index(i, np.full(sp.nx, 8))]
    for col in (4, 5, 6):
        runs.append(sp.cell_index(np.array([col, col]), np.array([9, 10])))
    ok, col = GL.validate_graphlike(G.cellset(sp, np.sort(np.concatenate(runs))))
    assert not ok and col == 4


def test_flow_refuses_invalid_input():
    sp = G.rectangle((0.0, 0.0, 1.0, 1.0), 16)
    row = sp.cell_index(np.arange(sp.nx), np.full(sp.nx, 8))
    bad = G.cellset(sp, row[np.arange(sp.nx) != 5])
    with pytest.raises(ValueError, match="not graph-like: column 5"):
        GL.FlowDecomposition(GL.graphlike(sp, bad))


# ---------------------------------------------------------------------------
# travel time


def test_bar_travel_time_matches_log():
    # T(x, y) = -ln(y) for the bottom-edge bar; compare at cell centers,
    # where the discrete field actually samples
    flow = quiet_flow(GL.make_flat_bar(256))
    sp = flow.space
    c = sp.cell_size
    for y in np.arange(0.05, 0.951, 0.05):
        cell = sp.cell_at(np.array([0.5, y]))
        yc = sp.bounds[1] + (rows_of(sp, np.array([cell]))[0] + 0.5) * c
        assert abs(flow.T[cell] + math.log(yc)) <= 0.01 * abs(math.log(yc))


def test_travel_time_cap_warns():
    # one-cell canyon between two near-full-height walls: the column integral
    # picks up ~1 per canyon cell, far past the cap
    sp = G.rectangle((0.0, 0.0, 1.0, 1.0), 1280)
    mask = np.zeros((sp.ny, sp.nx), dtype=bool)
    mask[2, :] = True
    mask[2:1274, 500] = True
    mask[2:1274, 502] = True
    j, i = np.nonzero(mask)
    c = GL.graphlike(sp, G.cellset(sp, np.sort(sp.cell_index(i, j))))
    with pytest.warns(RuntimeWarning, match="travel time clamped at cap"):
        GL.FlowDecomposition(c)


def test_travel_time_monotone_along_columns(flows128):
    for flow in flows128.values():
        sp = flow.space
        T = flow.T.reshape(sp.ny, sp.nx)
        above = flow._above.reshape(sp.ny, sp.nx)
        below = flow._below.reshape(sp.ny, sp.nx)
        for i in range(0, sp.nx, 7):
            ta = T[above[:, i], i]
            tb = T[below[:, i], i][::-1]
            assert ta.size == 0 or (np.diff(ta) < 0).all()
            assert tb.size == 0 or (np.diff(tb) < 0).all()


# ---------------------------------------------------------------------------
# flow decomposition structure


def test_quotient_is_path(flows128):
    for flow in flows128.values():
        assert D.is_quotient_path(flow.field)


def test_off_source_plaques_span_all_columns(flows128):
    for flow in flows128.values():
        sp = flow.space
        src = flow.field.plaque_at_point(sp.centers(flow.source.cells.cells[:1])[0])
        for pid in range(flow.field.nplaques):
            if pid == src:
                continue
            i = sp.cell_ij(flow.field.plaque(pid).cells)[0]
            assert i.min() == 0 and i.max() == sp.nx - 1


def test_extreme_plaques_are_boundary_rows(flows128):
    for flow in flows128.values():
        sp = flow.space
        f = flow.field
        top = f.labels[np.searchsorted(f.domain.cells,
                                       sp.cell_index(np.arange(sp.nx), np.full(sp.nx, sp.ny - 1)))]
        bot = f.labels[np.searchsorted(f.domain.cells,
                                       sp.cell_index(np.arange(sp.nx), np.zeros(sp.nx, dtype=int)))]
        assert np.unique(top).size == 1
        assert np.unique(bot).size == 1


def test_source_plaque_is_source(cocarc128):
    plq = cocarc128.plaque_near(np.array([0.0, 0.25]))  # spike point
    assert np.array_equal(plq.cells, cocarc128.source.cells.cells)


def test_generator_cache_reuses_flows():
    gen = GL.FlowGenerator(GL.make_flat_bar)
    assert gen.instantiate(64) is gen.instantiate(64)


# ---------------------------------------------------------------------------
# cocarc: bending plaques and the two marked points


def test_cocarc_plaque_separates_spike_from_top(cocarc128):
    from scipy import ndimage

    sp = cocarc128.space
    plq = cocarc128.plaque_near(np.array([-0.9, 0.9]))
    m = np.ones(sp.nx * sp.ny, dtype=bool)
    m[plq.cells] = False
    cross = [[0, 1, 0], [1, 1, 1], [0, 1, 0]]
    lab, n = ndimage.label(m.reshape(sp.ny, sp.nx), structure=cross)
    assert n == 2
    lab = lab.ravel()
    cc = cocarc128.source.cells.cells
    pts = sp.centers(cc)
    spike = cc[(np.abs(pts[:, 0]) < sp.cell_size) & (pts[:, 1] > 0.1)]
    top = sp.cell_index(np.arange(sp.nx), np.full(sp.nx, sp.ny - 1))
    assert set(lab[spike]).isdisjoint(set(lab[top]))


def test_cocarc_defect_small_at_marked_x():
    gen = GL.FlowGenerator(GL.make_cocarc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = D.semicontinuity_profile(gen, np.array([-0.9, 0.9]), [128, 256])
    for sym, c in zip(r.symmetric, r.cell_sizes):
        assert sym <= 2 * c + 1e-12


def test_cocarc_defect_large_at_marked_y():
    gen = GL.FlowGenerator(GL.make_cocarc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = D.semicontinuity_profile(gen, np.array([0.0, 0.0]), [128, 256])
    assert all(sym >= 0.2 for sym in r.symmetric)


def test_contact_sets_split_on_spike(cocarc128):
    up, dn = GL.contact_sets(cocarc128)
    assert G.hausdorff_distance(up, dn) >= 0.2


def test_contact_sets_agree_on_oscillation():
    for res in (128, 256):
        flow = quiet_flow(GL.make_sin_one_over_x(res))
        up, dn = GL.contact_sets(flow)
        assert G.hausdorff_distance(up, dn) <= 2 * flow.space.cell_size + 1e-12


# ---------------------------------------------------------------------------
# discrete continuity off the source


def test_profile_flat_off_source(flows128):
    # gentle-modulus probes: defect at the grid scale once the point is
    # clear of the source and of any steep arrival gradient
    probes = {
        "bar": [(0.3, 0.45), (0.7, 0.8), (0.5, 0.2)],
        "cocarc": [(-0.6, 0.5), (0.6, -0.4), (-0.4, -0.7)],
        "cantor": [(0.5, 0.8), (0.25, 0.15), (0.5, 0.5)],
    }
    builders = {"bar": GL.make_flat_bar, "cocarc": GL.make_cocarc,
                "cantor": GL.make_cantor_square}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for name, pts in probes.items():
            gen = GL.FlowGenerator(builders[name])
            flow = gen.instantiate(128)
            dt = G.distance_transform(flow.source.cells)
            for p in pts:
                p = np.array(p)
                assert dt[flow.space.cell_at(p)] >= 0.1
                r = D.semicontinuity_profile(gen, p, [128])
                assert r.symmetric[0] <= 2 * r.cell_sizes[0] + 1e-12, (name, tuple(p))


# ---------------------------------------------------------------------------
# generators: oscillation


def test_sin_validates_across_resolutions():
    for res in (128, 256, 512):
        ok, col = GL.validate_graphlike(GL.make_sin_one_over_x(res))
        assert ok, f"column {col} at resolution {res}"


def test_sin_is_connected():
    assert len(G.components(GL.make_sin_one_over_x(128).cells)) == 1


def test_sin_slice_pins():
    c128 = GL.make_sin_one_over_x(128)
    sp = c128.space
    c = sp.cell_size
    m = np.zeros(sp.nx * sp.ny, dtype=bool)
    m[c128.cells.cells] = True
    m = m.reshape(sp.ny, sp.nx)
    # wall column carries the whole [-1, 1] slice
    wall = np.nonzero(m[:, 0])[0]
    ys = sp.bounds[1] + (wall + 0.5) * c
    assert abs(ys.min() + 1.0) <= c and abs(ys.max() - 1.0) <= c
    # column at 2/pi peaks at y = 1
    col = int((2.0 / math.pi - sp.bounds[0]) / c)
    peak = np.nonzero(m[:, col])[0]
    yc = sp.bounds[1] + (peak + 0.5) * c
    assert abs(yc.mean() - 1.0) <= 2 * c


# ---------------------------------------------------------------------------
# generators: cantor comb


def test_cantor_validates_across_resolutions():
    for res in (128, 256, 512):
        ok, col = GL.validate_graphlike(GL.make_cantor_square(res))
        assert ok, f"column {col} at resolution {res}"


def test_cantor_slice_pins():
    comb = GL.make_cantor_square(128)
    sp = comb.space
    c = sp.cell_size
    m = np.zeros(sp.nx * sp.ny, dtype=bool)
    m[comb.cells.cells] = True
    m = m.reshape(sp.ny, sp.nx)
    # x = 0 lies in the dust: band plus base
    tooth = np.nonzero(m[:, 0])[0]
    ys = (tooth + 0.5) * c
    assert abs(ys.min() - 1.0 / 3.0) <= c and abs(ys.max() - 2.0 / 3.0) <= c
    # x = 1/2 lies in the removed middle: base row only
    gap = np.nonzero(m[:, sp.nx // 2])[0]
    assert gap.size <= 2
    assert np.allclose((gap + 0.5) * c, 1.0 / 3.0, atol=c)


def test_cantor_teeth_thin_and_separated():
    for res in (128, 256):
        comb = GL.make_cantor_square(res)
        sp = comb.space
        m = np.zeros(sp.nx * sp.ny, dtype=bool)
        m[comb.cells.cells] = True
        tall = (m.reshape(sp.ny, sp.nx).sum(axis=0) > 2).astype(int)
        runs = np.diff(np.nonzero(np.diff(np.concatenate([[0], tall, [0]])))[0])[::2]
        assert runs.max() <= 2


def test_cantor_tooth_count_grows():
    def count(res):
        comb = GL.make_cantor_square(res)
        sp = comb.space
        m = np.zeros(sp.nx * sp.ny, dtype=bool)
        m[comb.cells.cells] = True
        tall = (m.reshape(sp.ny, sp.nx).sum(axis=0) > 2).astype(int)
        return (np.diff(np.concatenate([[0], tall])) == 1).sum()

    # teeth double per tripled resolution: monotone, strict across 128 -> 512
    n128, n256, n512 = count(128), count(256), count(512)
    assert n128 <= n256 <= n512
    assert n128 < n512


# ---------------------------------------------------------------------------
# ternary-binary map


def test_ternary_binary_values():
    assert GL.ternary_binary_map(0.0) == 0.0
    assert GL.ternary_binary_map(2.0 / 3.0) == 0.5
    assert GL.ternary_binary_map(2.0 / 9.0 + 2.0 / 27.0) == 0.375


def test_ternary_binary_rejects_middle_third():
    with pytest.raises(ValueError, match="position 1"):
        GL.ternary_binary_map(0.5)
    with pytest.raises(ValueError, match="position 2"):
        GL.ternary_binary_map(0.2)


@settings(max_examples=40, derandomize=True)
@given(st.sets(st.integers(min_value=1, max_value=12), min_size=0, max_size=8))
def test_ternary_binary_series(positions):
    x = sum(2.0 / 3.0**n for n in positions)
    expected = sum(1.0 / 2.0**n for n in positions)
    assert GL.ternary_binary_map(x) == pytest.approx(expected, abs=1e-9)


# ---------------------------------------------------------------------------
# backgammon


def test_backgammon_connected_and_valid():
    for res in (128, 256):
        X, qu, qv = GL.make_backgammon(res)
        assert len(G.components(X)) == 1
        D.LabelField(X, qu.labels, validate=True)
        D.LabelField(X, qv.labels, validate=True)


def test_backgammon_lower_decomposition_is_single_plaque():
    X, qu, _ = GL.make_backgammon(128)
    sp = X.space
    y = (rows_of(sp, X.cells) + 0.5) * sp.cell_size
    assert np.unique(qu.labels[y < 2.0 / 3.0 - sp.cell_size]).size == 1


def test_backgammon_probe_plaque_joins_fiber_pair():
    X, _, qv = GL.make_backgammon(128)
    sp = X.space
    c = sp.cell_size
    plq = qv.plaque(qv.plaque_at_point(np.array(GL.backgammon_probe_point(0.9))))
    i, j = sp.cell_ij(plq.cells)
    mid = np.unique(i[j == sp.ny // 2])
    assert mid.size == 2 and np.ptp(mid) > 8  # two separate branches
    top = np.unique(i[j == sp.ny - 1])
    assert np.ptp(top) <= 1  # joined at the top
    assert (j.max() + 0.5) * c > 0.99


def test_backgammon_component_strictly_contains_plaque():
    X, _, qv = GL.make_backgammon(128)
    sp = X.space
    p = np.array(GL.backgammon_probe_point(0.9))
    plq = qv.plaque(qv.plaque_at_point(p))
    y = (rows_of(sp, X.cells) + 0.5) * sp.cell_size
    upper = G.cellset(sp, X.cells[y > 1.0 / 3.0])
    cell = sp.cell_at(p)
    comp = next(cc for cc in G.components(upper) if np.isin(cell, cc.cells))
    assert len(comp) > len(plq)
    assert np.isin(plq.cells, comp.cells).all()
    assert G.hausdorff_distance(comp, plq) >= 0.2


# ---------------------------------------------------------------------------
# anomalous stable set


def test_anomalous_connected_across_resolutions():
    for res in (128, 256, 512):
        assert len(G.components(GL.make_anomalous_stable_set(res))) == 1


def test_anomalous_baseline_present():
    fs = GL.make_anomalous_stable_set(128)
    sp = fs.space
    m = np.zeros(sp.nx * sp.ny, dtype=bool)
    m[fs.cells] = True
    m = m.reshape(sp.ny, sp.nx)
    yc = sp.bounds[1] + (np.arange(sp.ny) + 0.5) * sp.cell_size
    base = np.abs(yc) <= sp.cell_size / math.sqrt(2.0)
    assert m[base, :].all()


def test_anomalous_segment_count_grows_toward_origin():
    counts = [GL.segment_components_near(GL.make_anomalous_stable_set(res))
              for res in (128, 256, 512)]
    assert counts[0] < counts[1] < counts[2]
