import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permea.ifs import IFSSystem, approximate_level
from permea.neighbors import (
    closure_is_closed,
    epsilon_sweep,
    intersection_points,
    neighbor_closure,
    pairwise_finiteness,
)

from conftest import S, H3, split_ifs, triangle_ifs

OVERLAP = IFSSystem((S(F(1, 2)), S(F(1, 2), translate=(1 / math.sqrt(2), 0)), S(F(1, 2), translate=(1, 0))), "overlap")


def _fixed_point(f):
    a, t = f.affine()
    return np.linalg.solve(np.eye(2) - a, t)


def _side_midpoints_oracle(ifs):
    """Common images f_i(p_j) = f_j(p_i) of the vertex fixed points."""
    fps = [_fixed_point(f) for f in ifs.maps]
    out = []
    for i in range(3):
        for j in range(i + 1, 3):
            a, t = ifs.maps[i].affine()
            b, u = ifs.maps[j].affine()
            p, q = a @ fps[j] + t, b @ fps[i] + u
            assert np.allclose(p, q)
            out.append(p)
    return np.array(out)


def test_disconnected_ifs_has_empty_closure():
    sp = split_ifs()
    cl = neighbor_closure(sp, 0, 6)
    assert cl.stabilized and len(cl) == 0
    H = intersection_points(sp, cl)
    assert H.certified and len(H) == 0
    v = pairwise_finiteness(sp)[(1, 2)]
    assert v.verdict == "finite" and v.clusters == 0


def test_triangle_closure_stabilizes_and_is_closed(tri, tri_closure):
    assert tri_closure.stabilized
    assert len(tri_closure) == 18
    assert closure_is_closed(tri, tri_closure)
    q = 1e-9
    assert neighbor_closure(tri, 0, 4).keys(q) == tri_closure.keys(q)


def test_touching_line_pair_is_finite_type():
    line = IFSSystem((S(F(1, 2)), S(F(1, 2), translate=(1 / math.sqrt(2), 0))), "touching")
    assert neighbor_closure(line, 0, 6).stabilized


def test_overlapping_line_system_overflows():
    cl = neighbor_closure(OVERLAP, 0, 6, max_maps=500)
    assert cl.status == "overflow"
    counts = cl.round_counts
    assert len(counts) >= 5
    assert all(b > a for a, b in zip(counts, counts[1:]))


def test_triangle_intersection_points_match_oracle(tri, tri_closure):
    H = intersection_points(tri, tri_closure, frame="pieces")
    assert H.certified and len(H) == 3
    got = H.as_array()
    want = _side_midpoints_oracle(tri)
    assert np.allclose(want, [(0.5, 0), (0.25, H3), (0.75, H3)])
    for w in want:
        assert np.min(np.hypot(*(got - w).T)) < 1e-6


def test_triangle_neighbor_frame_points_are_vertices(tri_H, tri):
    # K ∩ h(K) for h = f_i^-1 f_j: the vertices of the triangle
    assert tri_H.certified and len(tri_H) == 3
    got = tri_H.as_array()
    for f in tri.maps:
        assert np.min(np.hypot(*(got - _fixed_point(f)).T)) < 1e-6


def test_intersection_enclosures_disjoint_and_inside_cells(tri_H, tri):
    pts, rad = tri_H.as_array(), np.array(tri_H.radii)
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            assert np.hypot(*(pts[i] - pts[j])) > rad[i] + rad[j]
    cells = approximate_level(tri, 6)
    for p in pts:
        assert cells.contains_point(tuple(p))


def test_carpet_pairwise_and_intersection_points(carpet):
    verdicts = pairwise_finiteness(carpet)
    maps = carpet.maps
    for (i, j), v in verdicts.items():
        a, b = np.array(maps[i - 1].translation, dtype=float), np.array(maps[j - 1].translation, dtype=float)
        if np.abs(a - b).sum() == pytest.approx(1 / 3):  # edge-adjacent
            assert v.verdict == "suspected-infinite"
            assert 0.8 <= v.extents[-1] / v.extents[0] <= 1.2
        else:
            assert v.verdict == "finite"
    cl = neighbor_closure(carpet, 0, 5)
    assert cl.stabilized
    assert intersection_points(carpet, cl, frame="neighbors").status == "suspected-infinite"


def test_triangle_pairwise_single_point(tri):
    for v in pairwise_finiteness(tri).values():
        assert v.verdict == "finite" and v.clusters == 1
        assert v.extents[-1] < v.extents[0] / 4


def test_epsilon_sweep_keeps_the_base_closure(tri):
    sw = epsilon_sweep(tri, [0.05, 0.1, 0.25, 0.5])
    assert sw.chosen == 0.25
    assert sw.counts[0] == 18 and sw.counts[-1] > 18


def test_closure_ratios_in_range(tri_closure, tri):
    for h in tri_closure.maps:
        assert tri.r_min <= h.ratio <= 1 / tri.r_min
        assert not h.map.is_identity()


@settings(max_examples=8, deadline=None)
@given(st.floats(0, 0.4), st.floats(0, 0.4))
def test_closure_monotone_in_eps(e1, e2):
    tri = triangle_ifs()
    lo, hi = sorted((e1, e2))
    q = 1e-9
    assert neighbor_closure(tri, lo, 5).keys(q) <= neighbor_closure(tri, hi, 5).keys(q)


@settings(max_examples=5, deadline=None)
@given(st.integers(3, 5), st.floats(0, 0.3))
def test_deeper_level_never_adds_maps(level, eps):
    tri = triangle_ifs()
    q = 1e-9
    assert neighbor_closure(tri, eps, level + 1).keys(q) <= neighbor_closure(tri, eps, level).keys(q)
