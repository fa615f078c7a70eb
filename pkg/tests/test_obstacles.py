import heapq
import json
import warnings
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permea.geom import GeometryError
from permea.obstacles import (
    BMCPattern,
    IntervalSet,
    bmc_cells,
    bmc_nested,
    bmc_pattern,
    bmc_window_check,
    cantor_level,
    empty_pattern,
    extrude,
    full_pattern,
    load_pattern,
    min_crossing_variation,
    product_cells,
    svc_gap_width,
    svc_level,
    theta_segments,
    theta_squares,
)

# ---------------------------------------------------------------- interval sets


def test_svc_level_examples():
    assert svc_level(0).intervals == ((0, 1),)
    assert svc_level(1).intervals == ((0, F(3, 8)), (F(5, 8), 1))
    two = svc_level(2)
    assert len(two) == 4 and two.common_length == F(5, 32)
    assert two.measure == F(5, 8)


@pytest.mark.parametrize("n", range(13))
def test_svc_measure_identity(n):
    s = svc_level(n)
    assert s.measure == F(1, 2) + F(1, 2 ** (n + 1))
    assert len(s) == 2**n and s.common_length is not None


@pytest.mark.parametrize("n", range(12))
def test_svc_nesting(n):
    assert svc_level(n + 1).nests_in(svc_level(n))


def test_svc_gaps_match_gap_width():
    s = svc_level(3)
    widths = sorted({b - a for a, b in s.gaps()})
    assert widths == [svc_gap_width(3), svc_gap_width(2), svc_gap_width(1)]


def test_cantor_level_examples():
    assert cantor_level(1).intervals == ((0, F(1, 3)), (F(2, 3), 1))
    two = cantor_level(2)
    assert len(two) == 4 and two.common_length == F(1, 9)
    for n in range(9):
        assert cantor_level(n).measure == F(2, 3) ** n
        assert cantor_level(n + 1).nests_in(cantor_level(n))


def test_interval_set_rejects_bad_input():
    with pytest.raises(GeometryError):
        IntervalSet(0, ((F(1, 2), F(1, 4)),))
    with pytest.raises(GeometryError):
        IntervalSet(0, ((0, F(1, 2)), (F(1, 2), 1)))
    with pytest.raises(GeometryError):
        IntervalSet(0, ((0, 2),))
    with pytest.raises(ValueError):
        svc_level(-1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 6), st.integers(3, 9))
def test_index_ranges_cover_exactly_the_meeting_cells(n, k):
    s = svc_level(n)
    res = F(1, 2**k)
    ranges = s.index_ranges(res)
    marked = {i for lo, hi in ranges for i in range(lo, hi + 1)}
    # oracle: closed cell [i r, (i+1) r] meets a closed interval
    oracle = {i for i in range(-1, 2**k + 1) if any(a <= (i + 1) * res and i * res <= b for a, b in s.intervals)}
    assert marked == oracle


# ---------------------------------------------------------------- extrusions and products


def test_extrude_examples():
    res = F(1, 16)
    full = extrude(IntervalSet(0, ((0, 1),)), resolution=res)
    assert full.index_set == {(i, j) for i in range(-1, 17) for j in range(-1, 17)}
    slabs = extrude(cantor_level(1), resolution=F(1, 27))
    assert len(slabs.components(4)) == 2
    cols = {i for i, _ in slabs.index_set}
    assert cols == set(range(-1, 10)) | set(range(17, 28))


def test_extrusions_intersect_to_four_squares():
    res = F(1, 64)
    s = svc_level(1)
    both = extrude(s, 0, resolution=res).intersection(extrude(s, 1, resolution=res))
    comps = both.components(8)
    assert len(comps) == 4
    # oracle: product of the meeting index ranges per axis
    r = s.index_ranges(res)
    oracle = {(i, j) for a in r for b in r for i in range(a[0], a[1] + 1) for j in range(b[0], b[1] + 1)}
    assert both.index_set == oracle
    assert product_cells(s, s, res).materialize() == both


# ---------------------------------------------------------------- theta squares


def test_theta_squares_level_zero_is_unit_square_boundary():
    res = F(1, 8)
    cs = theta_squares(0, res)
    for i in range(-1, 9):
        for j in range(-1, 9):
            on_edge = i in (-1, 0, 7, 8) or j in (-1, 0, 7, 8)
            assert ((i, j) in cs) == on_edge


def test_theta_squares_level_one_adds_four_squares():
    segs = set(theta_segments(1))
    for a, b in [(0, F(3, 8)), (F(5, 8), 1)]:
        for c, d in [(0, F(3, 8)), (F(5, 8), 1)]:
            assert ((a, c), (b, c)) in segs and ((b, c), (b, d)) in segs
    assert len(segs) == 4 + 16


@pytest.mark.parametrize("n_max", range(5))
def test_theta_segment_count(n_max):
    # 4^n squares of F_n × F_n, each with 4 sides; sides at different levels never coincide
    assert len(theta_segments(n_max)) == sum(4 * 4**n for n in range(n_max + 1))


def test_theta_squares_warns_when_gaps_are_unresolved():
    with pytest.warns(UserWarning):
        theta_squares(3, F(1, 32))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        theta_squares(3, F(1, 128))


def test_theta_squares_window_clips():
    win = ((0, 0), (F(3, 8), F(3, 8)))
    cs = theta_squares(2, F(1, 128), window=win)
    lo, hi = cs.bounds()
    assert lo.min() >= -1 / 128 - 1e-12 and hi.max() <= 3 / 8 + 1 / 128 + 1e-12
    # a gap midline of level 1 inside the window stays free away from the level-0 edge
    assert not cs.contains_point((F(3, 16), F(3, 16)))


# ---------------------------------------------------------------- carpets


def test_bmc_pattern_examples():
    p = bmc_pattern()
    assert len(p) == 216
    assert (0, 7) not in p.cells
    assert (2, 2) not in p.cells
    for i in range(48):
        rows = {j for c, j in p.cells if c == i}
        if i % 2:
            assert not rows
        else:
            assert len(rows) == 9
            assert set(range(10)) - rows == {(5 * (i // 2) + 7) % 10}


def test_bmc_pattern_rejects_out_of_grid_and_round_trips(tmp_path):
    with pytest.raises(GeometryError):
        BMCPattern(4, 2, frozenset({(4, 0)}))
    p = bmc_pattern()
    path = tmp_path / "p.json"
    path.write_text(json.dumps(p.to_json()))
    assert load_pattern(path).cells == p.cells
    path.write_text("{ bad")
    with pytest.raises(GeometryError, match="line 1"):
        load_pattern(path)


def test_window_check_examples():
    ok = bmc_window_check(bmc_pattern())
    assert ok.passed and ok.windows == 228
    assert bmc_window_check(full_pattern()).passed
    bad = bmc_window_check(empty_pattern())
    assert not bad.passed and bad.failing == (0, 0)


def test_window_check_against_brute_force():
    p = bmc_pattern()
    r2 = p.cells | {(i, j + 10) for i, j in p.cells}
    fails = [(nu, j) for nu in range(12) for j in range(19) if not any({(i, j), (i, j + 1)} <= r2 for i in (4 * nu, 4 * nu + 2))]
    assert fails == []
    # knock out one column pair; the check must point to that block
    q = BMCPattern(48, 10, frozenset(c for c in p.cells if c[0] not in (8, 10)))
    res = bmc_window_check(q)
    assert not res.passed and res.failing[0] == 2


@pytest.mark.parametrize("level", [1, 2, 3, 4])
def test_bmc_measure(level):
    cells = bmc_cells(bmc_pattern(), level)
    assert cells.measure == F(9, 20) ** level
    assert cells.count == 216**level
    if level <= 2:
        assert len(cells.rectangles()) * F(1, 480**level) == F(9, 20) ** level


def test_bmc_level_one_rectangles():
    cells = bmc_cells(bmc_pattern(), 1)
    rects = cells.rectangles()
    assert len(rects) == 216
    assert {tuple(r) for r in rects} == set(bmc_pattern().cells)
    (x0, y0), (x1, y1) = cells.rect_box(2, 3)
    assert (x1 - x0, y1 - y0) == (F(1, 48), F(1, 10))


def test_bmc_nesting_and_materialization_limit():
    p = bmc_pattern()
    assert bmc_nested(p, 1)
    assert bmc_nested(BMCPattern(4, 3, frozenset({(0, 0), (2, 1), (3, 2)})), 2)
    with pytest.raises(GeometryError, match="limit"):
        bmc_cells(p, 3).rectangles(limit=1000)


def test_bmc_cells_blocked_matches_rectangles():
    p = bmc_pattern()
    cells = bmc_cells(p, 1, resolution=F(1, 96))
    rng = np.random.default_rng(3)
    q = rng.integers(-2, 98, size=(3000, 2))
    got = cells.cells_blocked(q)
    r = F(1, 96)
    for (i, j), g in zip(q[:400], got[:400]):
        want = any(
            c * F(1, 48) <= (i + 1) * r and i * r <= (c + 1) * F(1, 48) and k * F(1, 10) <= (j + 1) * r and j * r <= (k + 1) * F(1, 10)
            for c, k in p.cells
        )
        assert g == want


# ---------------------------------------------------------------- crossing bound


def _crossing_oracle(p: BMCPattern, level: int) -> F | None:
    """Dijkstra on (column, row) nodes of the doubled level-l grid."""
    cols, rows = p.n**level, p.m**level

    def present(c, r):
        r %= rows
        for _ in range(level):
            if (c % p.n, r % p.m) not in p.cells:
                return False
            c, r = c // p.n, r // p.m
        return True

    free = np.array([[not present(c, r) for r in range(2 * rows)] for c in range(cols)])
    dist = np.full(free.shape, np.inf)
    heap = []
    for r in range(2 * rows):
        if free[0, r]:
            dist[0, r] = 0
            heap.append((0, 0, r))
    heapq.heapify(heap)
    while heap:
        d, c, r = heapq.heappop(heap)
        if d > dist[c, r]:
            continue
        if c == cols - 1:
            return F(int(d), rows)
        for nc, nr, w in ((c + 1, r, 0), (c, r + 1, 1), (c, r - 1, 1)):
            if nc < cols and 0 <= nr < 2 * rows and free[nc, nr] and d + w < dist[nc, nr]:
                dist[nc, nr] = d + w
                heapq.heappush(heap, (d + w, nc, nr))
    return None


def test_crossing_variation_empty_and_full():
    for lv in (1, 2):
        assert min_crossing_variation(empty_pattern(), lv).value == 0
    assert min_crossing_variation(full_pattern(), 1).blocked


def test_crossing_variation_bmc_pattern_level_one():
    b = min_crossing_variation(bmc_pattern(), 1)
    assert b.value == _crossing_oracle(bmc_pattern(), 1) == F(23, 2)
    assert (b.columns, b.rows) == (48, 20)


def test_crossing_variation_bmc_pattern_level_two():
    b = min_crossing_variation(bmc_pattern(), 2)
    assert b.value == _crossing_oracle(bmc_pattern(), 2) == F(943, 100)
    assert b.value > 0


@settings(max_examples=25, deadline=None)
@given(st.sets(st.tuples(st.integers(0, 7), st.integers(0, 3)), max_size=24))
def test_crossing_variation_matches_dijkstra(cells):
    p = BMCPattern(8, 4, frozenset(cells))
    for lv in (1, 2):
        assert min_crossing_variation(p, lv).value == _crossing_oracle(p, lv)
