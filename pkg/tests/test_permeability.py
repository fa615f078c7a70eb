import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permea.geom import EUCLIDEAN, CellSet, Norm, PolyPath, Segment, neighborhood, path_length
from permea.ifs import approximate_level, compose
from permea.obstacles import cantor_level, extrude, product_cells, svc_gap_width, svc_level, theta_squares
from permea.permeability import (
    NoPath,
    NotFound,
    PermeabilityError,
    ProfileSeries,
    WitnessReport,
    _point_at,
    angle_excess,
    cone_witness,
    count_intersections,
    finite_type_witness_2d,
    gap_midline_path,
    profile,
    repair_path,
    verdict_hint,
    witness_path,
)

L1 = Norm.p_norm(1)
LINF = Norm.p_norm(math.inf)


def slab(res):
    return neighborhood(Segment((0, 0), (1, 0)), 0, resolution=res)


def box_cells(res, i0, i1, j0, j1):
    return CellSet(res, [(i, j) for i in range(i0, i1) for j in range(j0, j1)])


# ---------------------------------------------------------------- verdicts and counting


def test_verdict_hint_taxonomy():
    assert verdict_hint(0, 0, 0.1) == "null-like"
    assert verdict_hint(0.05, 3, 0.1) == "finite-like"
    assert verdict_hint(0.05, 1000, 0.1) == "countable-like"
    assert verdict_hint(0.2, 0, 0.1) == "blocked"


def test_count_intersections_examples():
    res = F(1, 16)
    two = box_cells(res, 4, 5, -2, 2).union(box_cells(res, 10, 11, -2, 2))
    assert count_intersections(PolyPath([(0, F(1, 2)), (1, F(1, 2))]), two).count == 0
    hit = count_intersections(PolyPath([(0, 0), (1, 0)]), two)
    assert hit.count == 2 and hit.exact
    # running along an edge of a closed cell is one contact
    edge = count_intersections(PolyPath([(F(5, 16), F(1, 8)), (F(9, 16), F(1, 8))]), box_cells(res, 6, 8, 0, 2))
    assert edge.count == 1
    (s, e), = edge.components
    assert (s, e) == (F(1, 4), F(3, 4))


def test_count_intersections_corner_touch_and_point_path():
    cells = box_cells(F(1, 4), 1, 2, 1, 2)
    assert count_intersections(PolyPath([(0, F(1, 2)), (F(1, 4), F(1, 4)), (F(1, 2), 0)]), cells).count == 1
    assert count_intersections(PolyPath([(F(3, 8), F(3, 8))]), cells).count == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), min_size=1, max_size=20), st.integers(0, 15), st.integers(0, 15))
def test_count_intersections_matches_sampling_on_horizontal_lines(cells, row, _):
    res = F(1, 16)
    cs = CellSet(res, cells)
    y = (row + F(1, 2)) * res
    got = count_intersections(PolyPath([(-1, y), (2, y)]), cs).count
    # oracle: runs of blocked columns in this row
    cols = sorted({i for i, j in cells if j == row})
    runs = sum(1 for k, c in enumerate(cols) if k == 0 or c != cols[k - 1] + 1)
    assert got == runs


# ---------------------------------------------------------------- witness paths


def test_witness_without_obstacle_is_straight():
    r = witness_path(CellSet.empty(F(1, 64)), (0, 0), (1, 0), 0.1)
    assert isinstance(r, WitnessReport)
    assert r.excess == 0 and r.intersection_components == 0 and len(r.path) == 2
    assert r.verdict == "null-like"


@pytest.mark.parametrize("res", [F(1, 64), F(1, 128)])
def test_witness_crosses_slab_once(res):
    r = witness_path(slab(res), (0.5, -0.2), (0.5, 0.2), 0.5, crossing_penalty=0.0)
    assert r.intersection_components == 1
    assert float(r.excess) <= math.sqrt(2) * float(res)


def test_witness_slab_resolutions_agree():
    a = witness_path(slab(F(1, 64)), (0.3, -0.2), (0.6, 0.2), 0.5, crossing_penalty=0.0)
    b = witness_path(slab(F(1, 128)), (0.3, -0.2), (0.6, 0.2), 0.5, crossing_penalty=0.0)
    assert abs(float(a.length) - float(b.length)) <= math.sqrt(2) / 64


def test_witness_oblique_crossing_is_not_refracted():
    # the inside cost bends the grid route; the crossing-aware pulling pass straightens it
    res = F(1, 256)
    r = witness_path(slab(res), (0.4, -0.2), (0.6, 0.2), 0.1, crossing_penalty=0.0)
    assert r.intersection_components == 1
    assert float(r.excess) <= 2 * math.sqrt(2) * float(res)


def test_witness_blocked_without_penalty():
    assert isinstance(witness_path(slab(F(1, 64)), (0.5, -0.2), (0.5, 0.2), 0.5), NoPath)
    full = box_cells(F(1, 16), 0, 16, 0, 16)
    r = witness_path(full, (0.5, -0.1), (0.5, 1.1), 0.01)
    assert isinstance(r, NoPath) and not r.found


def test_witness_input_errors():
    empty = CellSet.empty(F(1, 8))
    with pytest.raises(PermeabilityError):
        witness_path(empty, (0, 0), (1, 0), 0)
    with pytest.raises(PermeabilityError):
        witness_path(empty, (0, 0), (1, 0), 0.1, margin=0.1)
    r = witness_path(empty, (F(1, 3), 0), (F(1, 3), 0), 0.1)
    assert r.length == 0 and r.excess == 0


def _never_enters(path, cells):
    return count_intersections(path, cells).count == 0


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.integers(2, 29), st.integers(-6, 6)), min_size=1, max_size=40), st.integers(-5, 5), st.integers(-5, 5))
def test_witness_output_avoids_cells(blocks, y0, y1):
    res = F(1, 32)
    cells = CellSet(res, blocks)
    r = witness_path(cells, (0, y0 * res), (1, y1 * res), 0.3)
    if r.found:
        assert _never_enters(r.path, cells)
        assert float(r.excess) >= -1e-12


def test_profile_levels_and_nesting_slack():
    # nested Cantor dust: excess at a finer level never exceeds the coarser one by more than a cell diagonal
    x, y = (-0.1, 0.45), (1.1, 0.55)

    def dust(n):
        return product_cells(cantor_level(n), cantor_level(n), F(1, 3 ** (n + 1)))

    series = profile(dust, [1, 2, 3, 4], x, y, 0.05, crossing_penalty=0.02)
    assert series.levels == (1, 2, 3, 4)
    assert [r.level for r in series.reports] == [1, 2, 3, 4]
    ex = series.excesses
    for lv, a, b in zip(series.levels[1:], ex, ex[1:]):
        assert b <= a + math.sqrt(2) / 3 ** (lv + 1) + 1e-12
    threaded = profile(dust, [1, 2, 3, 4], x, y, 0.05, crossing_penalty=0.02, workers=3)
    assert threaded.excesses == ex


def test_profile_series_rejects_unsorted_levels():
    r = NoPath("x", 0.1)
    with pytest.raises(PermeabilityError):
        ProfileSeries((0, 0), (1, 0), 0.1, (2, 1), (r, r))
    s = ProfileSeries((0, 0), (1, 0), 0.1, (1, 2), (r, r))
    assert s.all_blocked and s.excesses == [math.inf, math.inf]


# ---------------------------------------------------------------- repair


def test_repair_leaves_disjoint_path_alone():
    p = PolyPath([(0, 0), (1, 0)])
    rep = repair_path(p, box_cells(F(1, 16), 4, 5, 4, 5), C=1.5, delta=0.01)
    assert rep.path == p and rep.complete and rep.clusters == 0


def test_repair_around_single_cell():
    res = F(1, 16)
    cell = box_cells(res, 8, 9, 7, 8)
    p = PolyPath([(0, F(15, 32)), (1, F(15, 32))])
    rep = repair_path(p, cell, C=2, delta=0.01)
    assert rep.complete and rep.components_after == 0
    assert rep.added_length <= 4 * float(res)
    assert rep.within_bound


def test_repair_rejects_bad_input():
    cell = box_cells(F(1, 16), 0, 1, 0, 1)
    with pytest.raises(PermeabilityError):
        repair_path(PolyPath([(0.01, 0.01), (1, 1)]), cell)
    with pytest.raises(PermeabilityError):
        repair_path(PolyPath([(-1, 0), (1, 1)]), cell, C=0.5)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_repair_threads_svc_squares(n):
    lam = svc_level(n - 1).intervals[0][1]
    x, y = (lam / 2, lam / 6), (lam / 6, lam / 2)
    res = svc_gap_width(n) / 8
    cells = theta_squares(n, res, window=((0, 0), (lam, lam)))
    d = math.dist(map(float, x), map(float, y))
    rep = repair_path(PolyPath([x, y]), cells, C=math.sqrt(2), delta=d / 20)
    assert rep.complete and rep.components_after == 0 and rep.within_bound
    assert rep.length <= math.sqrt(2) * d + d / 20
    # oracle route: the axis-parallel path through gap midlines avoids the same sides at length sqrt(2) d
    oracle = gap_midline_path(x, y, n)
    assert count_intersections(oracle, cells).count == 0
    assert float(path_length(oracle)) == pytest.approx(math.sqrt(2) * d)
    assert rep.length <= float(path_length(oracle)) + d / 20


def test_gap_midline_path_avoids_vertical_sides():
    for n in (1, 2, 3):
        p = gap_midline_path((F(1, 10), F(-1, 10)), (F(9, 10), F(11, 10)), n)
        c = p.vertices[1][0]
        assert any(a < c < b for a, b in svc_level(n).gaps())
        assert not svc_level(n).contains(c)
    with pytest.raises(PermeabilityError):
        gap_midline_path((0, 0), (1, 1), 0)


# ---------------------------------------------------------------- cone witness


def test_cone_witness_empty_obstacle():
    r = cone_witness(CellSet.empty(F(1, 32)), (0, 0), (1, 0), 0.1)
    assert r.found and r.info["attempt"] == 1
    assert float(r.length) <= math.sqrt(1 + 4 * 0.01)


def test_cone_witness_through_dust():
    n = 4
    res = F(1, 243)
    dust = product_cells(cantor_level(n), cantor_level(n), res)
    x, y = (-0.1, 0.45), (1.1, 0.55)
    r = cone_witness(dust, x, y, 0.05, attempts=64)
    assert r.found and r.intersection_components == 0
    assert float(r.length) <= math.sqrt(1.2**2 + 0.1**2 + 4 * 0.05**2)
    # exhaustive mid-disk check: most apex offsets give a free two-segment path
    d = np.array([1.2, 0.1])
    nrm = np.array([-d[1], d[0]]) / np.linalg.norm(d)
    mid = np.array([0.5, 0.5])
    free = sum(
        count_intersections(PolyPath([x, tuple(mid + s * nrm), y]), dust).count == 0 for s in np.linspace(-0.05, 0.05, 41)
    )
    assert free > 20


def test_cone_witness_extruded_cantor_not_found():
    slabs = extrude(cantor_level(2), resolution=F(1, 81))
    r = cone_witness(slabs, (-0.2, 0.5), (1.2, 0.5), 0.1, attempts=100)
    assert isinstance(r, NotFound) and r.best_components >= 4
    # oracle: one fiber of the cone, the straight line, meets all four slabs
    assert count_intersections(PolyPath([(-0.2, 0.5), (1.2, 0.5)]), slabs).count == 4


def test_cone_witness_errors():
    with pytest.raises(PermeabilityError):
        cone_witness(CellSet.empty(F(1, 4)), (0, 0), (0, 0), 0.1)
    with pytest.raises(PermeabilityError):
        cone_witness(CellSet.empty(F(1, 4)), (0, 0), (1, 0), 0)


# ---------------------------------------------------------------- angle excess


def test_angle_excess_examples():
    z = (1, 1)
    assert angle_excess(PolyPath([(0, 0), z]), z, 0.01) == 0
    stair = PolyPath([(0, 0), (1, 0), (1, 1)])
    assert angle_excess(stair, z, math.pi / 8) == pytest.approx(2)
    assert angle_excess(stair, z, math.pi / 8, L1) == pytest.approx(2)
    inside = PolyPath([(0, 0), (0.6, 0.5), (1, 1)])
    assert angle_excess(inside, z, math.pi / 8) == 0
    with pytest.raises(PermeabilityError):
        angle_excess(stair, (0, 0), 0.1)


def _cone_path(z, eps, rng, k):
    """Random path 0 -> z whose segments stay strictly within angle eps of z."""
    z = np.asarray(z, float)
    u = z / np.linalg.norm(z)
    nrm = np.array([-u[1], u[0]])
    ts = np.sort(np.concatenate([[0, 1], rng.uniform(0, 1, k)]))
    L = np.linalg.norm(z)
    off = np.zeros(len(ts))
    for i in range(1, len(ts) - 1):
        step = (ts[i] - ts[i - 1]) * L * math.tan(eps) * 0.9
        lo = max(off[i - 1] - step, -(ts[-1] - ts[i]) * L * math.tan(eps) * 0.9)
        hi = min(off[i - 1] + step, (ts[-1] - ts[i]) * L * math.tan(eps) * 0.9)
        off[i] = rng.uniform(lo, hi) if hi > lo else 0.0
    pts = [tuple(t * z + o * nrm) for t, o in zip(ts, off)]
    pts[-1] = tuple(z)
    return PolyPath(pts)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.2, 3), st.floats(0, 2 * math.pi), st.floats(0.01, 0.6), st.integers(0, 2**31), st.integers(1, 12))
def test_cone_bound(length, theta, eps, seed, k):
    z = (length * math.cos(theta), length * math.sin(theta))
    p = _cone_path(z, eps, np.random.default_rng(seed), k)
    assert angle_excess(p, z, eps) == 0
    assert float(path_length(p)) <= length / math.cos(eps) * (1 + 1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 2), st.floats(0, 2 * math.pi), st.integers(0, 2**31))
def test_vanishing_angle_excess_gives_norm_length(length, theta, seed):
    rng = np.random.default_rng(seed)
    z = (length * math.cos(theta), length * math.sin(theta))
    for n in (1, 4, 16):
        eps = 0.2 / n
        p = _cone_path(z, eps / 2, rng, 8)
        assert angle_excess(p, z, eps) == 0
        for nm in (EUCLIDEAN, L1, LINF):
            assert abs(float(path_length(p, nm)) - float(nm(z))) <= 10 * eps


# ---------------------------------------------------------------- planar finite-type witness


@pytest.fixture(scope="module")
def tri_cells8(tri):
    return approximate_level(tri, 8)


def test_finite_type_witness_on_triangle(tri, tri_closure, tri_H, tri_seq, tri_cells8):
    x, y = (-0.2, 0.3), (1.2, 0.3)
    r = finite_type_witness_2d(tri, tri_closure, tri_H, tri_seq, x, y, 0.1, tri_cells8)
    assert float(r.excess) <= 0.1
    # independent recount, and the contact bound
    ci = count_intersections(r.path, tri_cells8)
    assert ci.count == r.intersection_components
    assert r.intersection_components <= r.info["contact_bound"]
    assert r.info["contact_bound"] == r.info["pieces"] * len(tri_H)
    # every contact sits within one cell of a scaled intersection point
    imgs = np.array(
        [[float(v) for v in compose(tri, tuple(w))(tuple(h))] for ws in r.info["words"] for w in ws for h in tri_H.points]
    )
    diag = math.sqrt(2) * float(tri_cells8.resolution)
    for s, e in ci.components:
        for par in (s, e):
            p = np.array([float(v) for v in _point_at(r.path, par)])
            assert np.min(np.linalg.norm(imgs - p, axis=1)) <= diag


def test_finite_type_witness_misses_K(tri, tri_closure, tri_H, tri_seq, tri_cells8):
    r = finite_type_witness_2d(tri, tri_closure, tri_H, tri_seq, (-0.2, 1.3), (1.2, 1.3), 0.1, tri_cells8)
    assert r.excess == 0 and r.intersection_components == 0 and len(r.path) == 2


def test_finite_type_witness_preconditions(tri, tri_closure, tri_H, tri_seq, tri_cells8, carpet):
    from permea.neighbors import intersection_points, neighbor_closure

    cc = neighbor_closure(carpet, 0, 5)
    cH = intersection_points(carpet, cc, frame="neighbors")
    with pytest.raises(PermeabilityError, match="certified"):
        finite_type_witness_2d(carpet, cc, cH, tri_seq, (-0.1, 0.5), (1.1, 0.5), 0.1, tri_cells8)
    with pytest.raises(PermeabilityError, match="off the"):
        finite_type_witness_2d(tri, tri_closure, tri_H, tri_seq, (0, 0), (1.2, 0.3), 0.1, tri_cells8)
