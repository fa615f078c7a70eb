import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permea.geom import (
    EUCLIDEAN,
    CellSet,
    GeometryError,
    Norm,
    PolyPath,
    Segment,
    cells_containing_point,
    double_cone_point,
    neighborhood,
    path_length,
    segment_angle,
)

L1 = Norm.p_norm(1)
LINF = Norm.p_norm(math.inf)

coord = st.fractions(min_value=-10, max_value=10, max_denominator=50)
point = st.tuples(coord, coord)
paths = st.lists(point, min_size=2, max_size=8)


def test_path_length_examples():
    assert path_length(PolyPath([(0, 0), (3, 4)])) == 5
    assert path_length(PolyPath([(0, 0), (1, 0), (1, 1)])) == 2
    assert path_length(PolyPath([(0, 0), (3, 4)]), L1) == 7


def test_path_length_exact_for_rational_p_norms():
    p = PolyPath([(0, 0), (F(1, 3), F(1, 7)), (1, 1)])
    assert path_length(p, L1) == F(2)
    assert isinstance(path_length(p, LINF), F)


def test_path_length_rejects_session_dimension():
    with pytest.raises(GeometryError):
        path_length(PolyPath([(0, 0), (1, 1)]), dim=3)


def test_polypath_collapses_duplicates_and_rejects_mixed_dims():
    assert len(PolyPath([(0, 0), (0, 0), (1, 0), (1, 0)])) == 2
    with pytest.raises(GeometryError):
        PolyPath([(0, 0), (1, 0, 0)])


def test_segment_angle_examples():
    assert segment_angle(Segment((0, 0), (1, 0)), Segment((5, 5), (7, 5))) == pytest.approx(0)
    assert segment_angle(Segment((0, 0), (1, 0)), Segment((0, 0), (-1, 0))) == pytest.approx(math.pi)
    assert segment_angle(Segment((0, 0), (1, 0)), Segment((0, 0), (0, 3))) == pytest.approx(math.pi / 2)
    with pytest.raises(GeometryError):
        segment_angle(Segment((0, 0), (0, 0)), Segment((0, 0), (1, 0)))


def test_double_cone_examples():
    z = (0, F(1, 2))
    assert double_cone_point((0, 0), (2, 0), 1, -1, z) == (0, 0)
    assert double_cone_point((0, 0), (2, 0), 1, 1, z) == (2, 0)
    assert double_cone_point((0, 0), (2, 0), 1, 0, z) == (1, F(1, 2))


@pytest.mark.parametrize("s,z", [(F(3, 2), (0, 0)), (0, (F(1, 2), F(1, 2))), (0, (0, 2))])
def test_double_cone_errors(s, z):
    with pytest.raises(GeometryError):
        double_cone_point((0, 0), (2, 0), 1, s, z)


def test_neighborhood_of_point_covers_unit_disk():
    res = F(1, 16)
    cov = neighborhood([(0, 0)], 1, resolution=res)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, size=(4000, 2))
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) <= 1]
    for p in pts[:500]:
        assert cov.cells_blocked(cells_containing_point(tuple(p), res)).all()
    # no cell farther than eps from the origin
    c = cov.centers()
    assert np.all(np.hypot(c[:, 0], c[:, 1]) - float(res) / math.sqrt(2) <= 1 + 1e-9)


def test_neighborhood_of_segment_is_a_stadium():
    res = F(1, 64)
    eps = F(1, 10)
    cov = neighborhood(Segment((0, 0), (1, 0)), eps, resolution=res)
    # oracle: dense sampling of the stadium
    rng = np.random.default_rng(2)
    pts = rng.uniform([-0.1, -0.1], [1.1, 0.1], size=(20000, 2))
    d = np.where(pts[:, 0] < 0, np.hypot(pts[:, 0], pts[:, 1]), np.where(pts[:, 0] > 1, np.hypot(pts[:, 0] - 1, pts[:, 1]), np.abs(pts[:, 1])))
    inside = pts[d <= 0.1]
    idx = np.floor(inside / float(res)).astype(np.int64)
    assert cov.cells_blocked(idx).all()
    # and nothing far outside it
    c = cov.centers()
    dc = np.where(c[:, 0] < 0, np.hypot(c[:, 0], c[:, 1]), np.where(c[:, 0] > 1, np.hypot(c[:, 0] - 1, c[:, 1]), np.abs(c[:, 1])))
    assert np.all(dc <= 0.1 + float(res) * math.sqrt(2) / 2 + 1e-9)


def test_neighborhood_zero_closed_is_closure_and_empty_input():
    res = F(1, 4)
    cov = neighborhood([(F(1, 8), F(1, 8))], 0, closed=True, resolution=res)
    assert cov.index_set == {(0, 0)}
    assert len(neighborhood([], 1, resolution=res)) == 0
    with pytest.raises(GeometryError):
        neighborhood([(0, 0)], 0, closed=False, resolution=res)


def test_cellset_membership_contract():
    cs = CellSet(F(1, 2), [(0, 0), (0, 0), (1, 1)])
    assert len(cs) == 2
    assert cs.contains_point((F(1, 4), F(1, 4)))
    assert cs.contains_point((F(1, 2), F(1, 2)))  # shared corner of two closed cells
    assert not cs.contains_point((F(1, 4), F(3, 4)))


# ---------------------------------------------------------------- properties


@settings(max_examples=60, deadline=None)
@given(paths, st.floats(0, 2 * math.pi), point)
def test_length_invariant_under_isometry(vs, angle, shift):
    p = PolyPath(vs)
    c, s = math.cos(angle), math.sin(angle)
    q = PolyPath([(c * float(x) - s * float(y) + float(shift[0]), s * float(x) + c * float(y) + float(shift[1])) for x, y in vs])
    assert float(path_length(q)) == pytest.approx(float(path_length(p)), abs=1e-12 * max(1.0, float(path_length(p))) * 10)


@settings(max_examples=60, deadline=None)
@given(paths)
def test_norm_comparison_in_the_plane(vs):
    p = PolyPath(vs)
    l2, l1 = float(path_length(p)), float(path_length(p, L1))
    assert l2 <= l1 + 1e-9
    assert l1 <= math.sqrt(2) * l2 + 1e-9


@settings(max_examples=60, deadline=None)
@given(paths)
def test_reversed_and_concat_lengths(vs):
    p = PolyPath(vs)
    assert path_length(p.reversed(), L1) == path_length(p, L1)
    q = PolyPath([vs[-1], (vs[-1][0] + 1, vs[-1][1])])
    assert path_length(p.concat(q), L1) == path_length(p, L1) + path_length(q, L1)


@settings(max_examples=60, deadline=None)
@given(point, point, st.floats(-1, 1), st.floats(-1, 1))
def test_double_cone_is_piecewise_affine_in_s(x, y, s1, t):
    if x == y:
        return
    d = (float(y[0] - x[0]), float(y[1] - x[1]))
    nrm = math.hypot(*d)
    z = (-d[1] / nrm * t * 0.5, d[0] / nrm * t * 0.5)
    xs, ys = tuple(map(float, x)), tuple(map(float, y))
    s1 = abs(s1)  # stay on [0, 1]
    a = np.array(double_cone_point(xs, ys, 0.5, 0.0, z, tol=1e-9), dtype=float)
    b = np.array(double_cone_point(xs, ys, 0.5, s1, z, tol=1e-9), dtype=float)
    m = np.array(double_cone_point(xs, ys, 0.5, s1 / 2, z, tol=1e-9), dtype=float)
    assert np.allclose(m, (a + b) / 2, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(point, min_size=1, max_size=4), st.fractions(F(1, 20), 1), st.fractions(F(1, 20), 1))
def test_neighborhood_monotone(pts, e1, e2):
    e1, e2 = sorted((e1, e2))
    res = F(1, 8)
    assert neighborhood(pts, e1, resolution=res).issubset(neighborhood(pts, e2, resolution=res))


@settings(max_examples=40, deadline=None)
@given(st.tuples(*[st.floats(-5, 5)] * 2), st.tuples(*[st.floats(-5, 5)] * 2), st.tuples(*[st.floats(-5, 5)] * 2))
def test_norm_axioms(a, b, c):
    for nm in (EUCLIDEAN, L1, LINF, Norm.polygon([(1, 0), (0, 1), (-1, 0), (0, -1)])):
        va, vb = np.array(a), np.array(b)
        assert float(nm(tuple(va + vb))) <= float(nm(a)) + float(nm(b)) + 1e-9
        assert float(nm(tuple(2.5 * va))) == pytest.approx(2.5 * float(nm(a)), abs=1e-9)
        assert float(nm(tuple(-va))) == pytest.approx(float(nm(a)), abs=1e-12)
    assert float(EUCLIDEAN((0, 0))) == 0
