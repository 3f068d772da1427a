import numpy as np
import pytest
from scipy import ndimage

from cwlab import geometry as G
from cwlab import dynamics as D

GOLD = (1 + np.sqrt(5)) / 2


def t128():
    return G.torus(128)


def t256():
    return G.torus(256)


def s256():
    return G.sphere_quotient(256)


def min_image(d):
    d = np.asarray(d, dtype=float)
    return d - np.round(d)


def principal_axis_deg(space, cells, base):
    d = min_image(space.centers(cells) - np.asarray(base, dtype=float))
    cov = d.T @ d
    _, vecs = np.linalg.eigh(cov)
    ax = vecs[:, -1]
    return np.degrees(np.arctan2(ax[1], ax[0])) % 180.0


def angle_gap(a, b):
    g = abs(a - b) % 180.0
    return min(g, 180.0 - g)


# ------------------------------------------------------------------ surface maps


def test_torus_matrix_and_eigenstructure():
    m = D.torus_anosov()
    assert m.matrix == ((2, 1), (1, 1))
    assert m.expansion_rate == pytest.approx((3 + np.sqrt(5)) / 2, abs=1e-12)
    s, u = m.stable_direction, m.unstable_direction
    # slopes -(1+sqrt5)/2 and (sqrt5-1)/2
    assert s[1] / s[0] == pytest.approx(-GOLD, abs=1e-12)
    assert u[1] / u[0] == pytest.approx(GOLD - 1, abs=1e-12)


def test_non_unimodular_matrix_rejected():
    with pytest.raises(ValueError, match="unimodular"):
        D.SurfaceMap("bad", ((2, 0), (0, 2)))
    with pytest.raises(ValueError, match="2x2 integer"):
        D.SurfaceMap("bad", ((2.5, 1), (1, 1)))


def test_forward_inverse_identity_to_1e12():
    rng = np.random.default_rng(7)
    pts = rng.random((1000, 2))
    for m in (D.torus_anosov(), D.sphere_pseudo_anosov()):
        sp = m.space(128)
        back = m.canonical(m.inverse(m.forward(pts)))
        there = m.canonical(pts)
        assert sp.point_distance(back, there).max() < 1e-12


def test_fixed_points():
    m = D.torus_anosov()
    for n in (1, 2, 5, -3):
        assert np.allclose(D.orbit(m, (0.0, 0.0), n), (0.0, 0.0))
    q = D.sphere_pseudo_anosov()
    z = q.canonical(np.array([0.0, 0.0]))
    assert np.allclose(D.orbit(q, z, 3), z)


def test_orbit_hand_value_and_return():
    m = D.torus_anosov()
    assert np.allclose(D.orbit(m, (0.25, 0.25), 1), (0.75, 0.5))
    p = np.array([0.318, 0.772])
    sp = m.space(128)
    back = D.orbit(m, D.orbit(m, p, 9), -9)
    assert sp.point_distance(back, p) < 1e-12


def test_sphere_push_well_defined():
    # the torus map commutes with negation, so it descends to the quotient
    q = D.sphere_pseudo_anosov()
    rng = np.random.default_rng(3)
    pts = rng.random((500, 2))
    a = q.forward(pts)
    b = np.mod(-np.dot(np.mod(-pts, 1.0), np.array(q.matrix, dtype=float).T), 1.0)
    sp = q.space(128)
    assert sp.point_distance(q.canonical(a), q.canonical(b)).max() < 1e-12


def test_prong_orbit_structure():
    q = D.sphere_pseudo_anosov()
    sp = q.space(128)
    cyc = [np.array(v) for v in ((0.5, 0.0), (0.0, 0.5), (0.5, 0.5))]
    for a, b in zip(cyc, cyc[1:] + cyc[:1]):
        assert sp.point_distance(D.orbit(q, a, 1), q.canonical(b)) < 1e-12


def test_identity_map_has_no_splitting():
    m = D.identity_map()
    with pytest.raises(ValueError, match="no hyperbolic splitting"):
        m.stable_direction


def test_map_space_kind_mismatch():
    with pytest.raises(ValueError, match="kinds disagree"):
        D.orbit_space_check = D._require_space(D.torus_anosov(), s256())


# ------------------------------------------------------------------ plaque spec


def test_plaque_spec_validation():
    with pytest.raises(ValueError, match="delta must be positive"):
        D.PlaqueSpec((0.5, 0.5), 0.0, 3)
    with pytest.raises(ValueError, match="nonnegative"):
        D.PlaqueSpec((0.5, 0.5), 0.1, -1)
    with pytest.raises(ValueError, match="direction"):
        D.PlaqueSpec((0.5, 0.5), 0.1, 3, direction="sideways")


# ------------------------------------------------------------------ plaques


def test_plaque_horizon_zero_is_delta_blob():
    sp = t128()
    x = (0.4, 0.6)
    p = D.finite_horizon_plaque(D.torus_anosov(), D.PlaqueSpec(x, 0.1, 0), sp)
    assert sp.cell_at(np.asarray(x)) in p.cells
    assert len(G.components(p)) == 1
    d = min_image(sp.centers(p.cells) - np.asarray(x))
    # diameter budget plus the seed's own offset from its cell center
    reach = 0.1 + np.sqrt(2) * sp.cell_size + sp.cell_size / np.sqrt(2)
    assert np.hypot(d[:, 0], d[:, 1]).max() <= reach


def test_plaque_delta_floor_error():
    sp = t128()
    with pytest.raises(ValueError, match="grid floor"):
        D.finite_horizon_plaque(D.torus_anosov(), D.PlaqueSpec((0.5, 0.5), 2 / 128, 3), sp)


def test_torus_plaque_axes_match_eigendirections():
    m = D.torus_anosov()
    sp = t256()
    x = (0.3, 0.7)
    for direction, unit in (("stable", m.stable_direction),
                            ("unstable", m.unstable_direction)):
        plaque = D.finite_horizon_plaque(m, D.PlaqueSpec(x, 0.15, 10, direction), sp)
        got = principal_axis_deg(sp, plaque.cells, x)
        want = np.degrees(np.arctan2(unit[1], unit[0])) % 180.0
        assert angle_gap(got, want) <= 5.0


def test_plaques_reach_budget_never_collapse():
    # delta=0.1, N=10: diameters stay above half the budget at sampled bases
    rng = np.random.default_rng(0)
    for m, sp in ((D.torus_anosov(), t256()), (D.sphere_pseudo_anosov(), s256())):
        for x in m.canonical(rng.random((4, 2))) if m.quotient else rng.random((4, 2)):
            for direction in ("stable", "unstable"):
                p = D.finite_horizon_plaque(m, D.PlaqueSpec(x, 0.1, 10, direction), sp)
                assert G.diameter(p) >= 0.05


def test_no_stable_plaque_contains_5x5_block():
    for m, sp, x in ((D.torus_anosov(), G.torus(512), (0.3, 0.7)),
                     (D.sphere_pseudo_anosov(), G.sphere_quotient(512),
                      D.sphere_pseudo_anosov().canonical(np.array([0.3, 0.2])))):
        p = D.finite_horizon_plaque(m, D.PlaqueSpec(x, 0.1, 12), sp)
        assert not ndimage.binary_erosion(p.mask(), structure=np.ones((5, 5))).any()


def test_plaque_image_diameters_fit_budgets():
    # independent re-measurement of the advertised contract: every forward
    # image of the plaque's cell centers fits that horizon's budget (checked
    # where the budget is small enough for min-image distances to be exact)
    m = D.torus_anosov()
    sp = t256()
    delta, horizon = 0.15, 6
    budgets = delta + np.sqrt(2) * sp.cell_size * m.expansion_rate ** np.arange(horizon + 1)
    for x in ((0.3, 0.7), (0.62, 0.18)):
        p = D.finite_horizon_plaque(m, D.PlaqueSpec(x, delta, horizon), sp)
        cur = sp.centers(p.cells)
        for n in range(horizon + 1):
            if budgets[n] < 0.45:
                d = min_image(cur[:, None, :] - cur[None, :, :])
                assert np.hypot(d[..., 0], d[..., 1]).max() <= budgets[n] + 1e-9
            cur = m.forward(cur)


def test_prong_plaque_is_one_sided():
    # clipped to a ball the budget never binds, so endpoint structure is
    # geometry: a 1-prong seed leaves one arm, a generic seed leaves two
    q = D.sphere_pseudo_anosov()
    sp = s256()
    c = sp.cell_size

    def arms(x):
        ball = G.ball_cells(sp, x, 0.05)
        cells, _ = D._grow_plaque(q, sp, x, 0.12, 6, "unstable", allowed=ball.cells)
        rest = np.setdiff1d(cells, G.ball_cells(sp, x, 2.5 * c).cells)
        return len(G.components(G.cellset(sp, rest)))

    for prong in D.ONE_PRONGS:
        assert arms(q.canonical(np.array(prong))) == 1
    assert arms(q.canonical(np.array([0.31, 0.17]))) == 2
    assert arms(q.canonical(np.array([0.62, 0.05]))) == 2


# ------------------------------------------------------------------ local stable sets


def test_local_stable_horizon_zero_is_eps_ball():
    sp = t128()
    p = (0.37, 0.58)
    got = D.local_stable_set(D.torus_anosov(), p, 0.1, 0, sp)
    inner = G.ball_cells(sp, p, 0.1)
    outer = G.ball_cells(sp, p, 0.1 + 1.5 * sp.cell_size)
    assert np.isin(inner.cells, got.cells).all()
    assert np.isin(got.cells, outer.cells).all()


def test_local_stable_fixed_point_hugs_stable_line():
    m = D.torus_anosov()
    sp = t256()
    w = D.local_stable_set(m, (0.0, 0.0), 0.1, 8, sp)
    assert w.cells.size > 0
    d = min_image(sp.centers(w.cells))
    u = np.abs(d @ m.unstable_direction)
    s = d @ m.stable_direction
    assert u.max() <= 1.5 * sp.cell_size
    assert s.max() - s.min() >= 1.5 * 0.1


def test_local_stable_eps_floor_and_nesting():
    m = D.torus_anosov()
    sp = t128()
    with pytest.raises(ValueError, match="grid floor"):
        D.local_stable_set(m, (0.5, 0.5), 2 / 128, 3, sp)
    a = D.local_stable_set(m, (0.21, 0.83), 0.1, 5, sp)
    b = D.local_stable_set(m, (0.21, 0.83), 0.1, 2, sp)
    assert np.isin(a.cells, b.cells).all()


def test_sphere_stable_set_holds_points_off_the_leaf():
    # doubling returns lie on the unstable arc yet inside the stable set
    q = D.sphere_pseudo_anosov()
    sp = s256()
    r = D.cantor_in_stable(q, 0.3, 0, sp, seed=1)
    assert r.complete
    root, other = r.points[0], r.points[1]
    t1 = r.arc_positions[1]
    assert abs(t1) > 1e-9
    members = D.local_stable_set(q, root, 0.15, r.horizon, sp).cells
    assert sp.cell_at(other) in members


# ------------------------------------------------------------------ cwn estimation


def test_cwn_torus_max_one():
    rep = D.cwn_estimate(D.torus_anosov(), 0.15, 10, 20, 11, t256())
    assert rep.max_count == 1
    assert rep.samples == 20 and len(rep.counts) == 20
    assert sum(rep.histogram().values()) == 20


def test_cwn_sphere_max_two():
    rep = D.cwn_estimate(D.sphere_pseudo_anosov(), 0.15, 10, 20, 11, s256())
    assert rep.max_count == 2
    prongs = np.array(D.ONE_PRONGS)
    sp = s256()
    near = min(sp.point_distance(np.array(x), prongs).min() for x, _ in rep.witnesses)
    assert near <= 0.05


def test_cwn_identity_aborts():
    with pytest.raises(RuntimeError, match="plaque exceeded diameter budget at every horizon"):
        D.cwn_estimate(D.identity_map(), 0.1, 2, 4, 0, t128())


def test_cwn_delta_ladder_monotone():
    maxima = [D.cwn_estimate(D.torus_anosov(), d, 6, 10, 3, t128()).max_count
              for d in (0.2, 0.15, 0.1, 0.075)]
    assert all(a >= b for a, b in zip(maxima, maxima[1:]))


def test_cwn_validation():
    with pytest.raises(ValueError, match="samples"):
        D.cwn_estimate(D.torus_anosov(), 0.1, 5, 0, 0, t128())
    with pytest.raises(ValueError, match="horizon must be >= 1"):
        D.cwn_estimate(D.torus_anosov(), 0.1, 0, 5, 0, t128())


# ------------------------------------------------------------------ doubling construction


def test_cantor_level_zero_pair():
    q = D.sphere_pseudo_anosov()
    sp = s256()
    r = D.cantor_in_stable(q, 0.3, 0, sp, seed=0)
    assert r.complete and r.level_reached == 0
    assert len(r.points) == 2
    assert sp.point_distance(r.points[0], r.points[1]) >= 4 * sp.cell_size


def test_cantor_three_levels_sixteen_points():
    q = D.sphere_pseudo_anosov()
    sp = G.sphere_quotient(512)
    c = sp.cell_size
    r = D.cantor_in_stable(q, 0.3, 3, sp, seed=0)
    assert r.complete and len(r.points) == 16
    dm = sp.point_distance(r.points[:, None, :], r.points[None, :, :])
    np.fill_diagonal(dm, np.inf)
    assert dm.min() >= 4 * c
    # every point realizes its recorded arc position
    arc = q.canonical(r.seed_point
                      + np.array(r.arc_positions)[:, None] * q.unstable_direction)
    assert sp.point_distance(arc, r.points).max() <= 2 * c
    # the family is jointly epsilon-stable over the working window
    cur = r.points.copy()
    for _ in range(r.horizon + 1):
        dd = sp.point_distance(cur[:, None, :], cur[None, :, :])
        assert dd.max() <= r.epsilon + 1e-12
        cur = q.forward(cur)


def test_cantor_validation():
    sp = s256()
    q = D.sphere_pseudo_anosov()
    with pytest.raises(ValueError, match="quotient"):
        D.cantor_in_stable(D.torus_anosov(), 0.3, 2, t256())
    with pytest.raises(ValueError, match="desk scale"):
        D.cantor_in_stable(q, 0.3, 5, sp)
    with pytest.raises(ValueError, match="grid floor at the deepest level"):
        D.cantor_in_stable(q, 0.05, 3, sp)


# ------------------------------------------------------------------ capacitors


def capacitor_fixture(sp, gap=0.05, s_half=0.16, u_hi=None):
    m = D.torus_anosov()
    c = sp.cell_size
    p = np.array([0.37, 0.61])
    cent = sp.centers(sp.all_cells())
    d = min_image(cent - p)
    su, uu = d @ m.stable_direction, d @ m.unstable_direction

    def strip(u_lo, u_hi, s_half):
        keep = (uu > u_lo) & (uu < u_hi) & (np.abs(su) <= s_half)
        return sp.all_cells()[keep]

    plate_a = G.continuum(sp, strip(-1.5 * c, 1.5 * c, s_half))
    plate_b = G.continuum(sp, strip(gap - 1.5 * c, gap + 1.5 * c, s_half))
    region = G.cellset(sp, strip(1.5 * c, (u_hi or gap) - 1.5 * c, s_half))
    x = p + (gap / 2) * m.unstable_direction
    return m, plate_a, plate_b, region, x, strip


def test_capacitor_finds_unstable_crossing():
    sp = t256()
    m, a, b, region, x, _ = capacitor_fixture(sp)
    rep = D.capacitor_cross(m, a, b, region, 0.1, x, sp)
    assert rep.crossing is not None and rep.meets_a and rep.meets_b
    assert 0.03 <= rep.separation <= 0.05
    d = min_image(sp.centers(rep.crossing.cells) - x)
    u, s = d @ m.unstable_direction, d @ m.stable_direction
    # a thin unstable-direction continuum spanning the gap
    assert s.max() - s.min() <= 4 * sp.cell_size
    assert u.max() - u.min() >= 0.05


def test_capacitor_error_paths():
    sp = t256()
    m, a, b, region, x, strip = capacitor_fixture(sp)
    c = sp.cell_size
    with pytest.raises(ValueError, match="grid floor"):
        D.capacitor_cross(m, a, b, region, 0.02, x, sp)
    with pytest.raises(ValueError, match="plates not disjoint"):
        D.capacitor_cross(m, a, a, region, 0.1, x, sp)
    with pytest.raises(ValueError, match="plate is not connected"):
        bad = G.cellset(sp, np.array([sp.cell_index(3, 3), sp.cell_index(80, 80)],
                                     dtype=np.int64))
        D.capacitor_cross(m, bad, b, region, 0.1, x, sp)
    with pytest.raises(ValueError, match="no connecting continuum"):
        D.capacitor_cross(m, a, b, region, 0.04, x, sp)
    with pytest.raises(ValueError, match="boundary escapes the plates"):
        loose = G.cellset(sp, strip(1.5 * c, 0.09, 0.16))
        D.capacitor_cross(m, a, b, loose, 0.1, x, sp)


# ------------------------------------------------------------------ expansivity floor


def test_floor_identity_is_grid_floor():
    sp = G.torus(64)
    f = D.expansivity_floor(D.identity_map(), 3, sp)
    assert f.value == pytest.approx(sp.cell_size)


def test_floor_torus_stable_under_refinement():
    a = D.expansivity_floor(D.torus_anosov(), 12, t128())
    b = D.expansivity_floor(D.torus_anosov(), 12, t256())
    assert b.value + 1e-9 >= a.value
    assert a.witness[0] != a.witness[1]
    assert a.min_separation >= a.value


def test_floor_sphere_shrinks_under_refinement():
    a = D.expansivity_floor(D.sphere_pseudo_anosov(), 10, G.sphere_quotient(128))
    b = D.expansivity_floor(D.sphere_pseudo_anosov(), 10, s256())
    assert b.value < a.value
    assert b.resolution == 256 and b.map_name == "sphere-pseudo-anosov"
