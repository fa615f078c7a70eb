"""Square covers, the delta/k constants, cover layers and surrounding loops,
separated covers, porosity scans and box-counting dimension."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import shapely
import shapely.affinity
from scipy import stats
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .geom import (
    PAD,
    CellSet,
    GeometryError,
    Number,
    PolyPath,
    Segment,
    as_point,
    is_exact,
    segment_cells,
    to_number,
)
from .ifs import IFSSystem, Similarity, compose, curtail, curtailed_pieces, level_resolution, approximate, pieces_from_maps
from .neighbors import IntersectionSet, NeighborClosure

__all__ = [
    "CoverError",
    "SquareCover",
    "grid_cover",
    "Exclusion",
    "DistanceBound",
    "copy_distance",
    "DeltaChoice",
    "select_delta_k",
    "CoverLayer",
    "CoverSequence",
    "cover_sequence",
    "piece_count_constant",
    "default_piece_constant",
    "LoopResult",
    "surrounding_loop",
    "CoverFamily",
    "nagata_cover",
    "PorosityReport",
    "porosity_scan",
    "DimensionEstimate",
    "box_counts",
    "box_dimension",
]


class CoverError(GeometryError):
    """A certification step failed; ``level`` records how far refinement got."""

    def __init__(self, message: str, level: int | None = None):
        super().__init__(message if level is None else f"{message} (level {level})")
        self.level = level


# ---------------------------------------------------------------- grid covers


@dataclass(frozen=True, eq=False)
class SquareCover:
    """Open squares ``(-eta/2, eta/2)^2 + k * eta/2`` for integer rows ``k`` of ``idx``."""

    eta: Number
    idx: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        arr = np.asarray(self.idx, dtype=np.int64).reshape(-1, 2)
        if len(arr):
            arr = _unique_rows(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "idx", arr)
        object.__setattr__(self, "eta", to_number(self.eta))

    def __len__(self) -> int:
        return len(self.idx)

    def center(self, k) -> tuple:
        h = self.eta / 2
        return tuple(int(v) * h for v in k)

    def centers(self) -> np.ndarray:
        return self.idx.astype(float) * (float(self.eta) / 2)

    def boxes(self) -> np.ndarray:
        """Float ``(xmin, ymin, xmax, ymax)`` per square."""
        c = self.centers()
        h = float(self.eta) / 2
        return np.hstack([c - h, c + h])

    @property
    def perimeter(self) -> Number:
        return 4 * self.eta * len(self)

    @cached_property
    def union(self):
        """Shapely union of the closed squares."""
        b = self.boxes()
        return shapely.unary_union(shapely.box(b[:, 0], b[:, 1], b[:, 2], b[:, 3]))

    def intersect(self, other: "SquareCover") -> "SquareCover":
        if self.eta != other.eta:
            raise GeometryError("covers use different square sizes")
        if not len(self) or not len(other):
            return SquareCover(self.eta, np.zeros((0, 2), dtype=np.int64), self.provenance)
        keep = CellSet(1, other.idx).cells_blocked(self.idx)
        return SquareCover(self.eta, self.idx[keep], self.provenance)


def _unique_rows(arr: np.ndarray) -> np.ndarray:
    """Sorted unique integer pairs (packs each row into one int64 key)."""
    lo = arr.min(axis=0)
    span = int(arr[:, 1].max() - lo[1]) + 1
    key = np.unique((arr[:, 0] - lo[0]) * span + (arr[:, 1] - lo[1]))
    return np.stack([key // span + lo[0], key % span + lo[1]], axis=1)


def _lattice_range(lo, hi, eta):
    """Integers ``k`` with the open interval ``(k-1, k+1) * eta/2`` meeting ``[lo, hi]``."""
    a, b = 2 * lo / eta, 2 * hi / eta
    return math.floor(a - 1) + 1, math.ceil(b + 1) - 1


def grid_cover(source, eta) -> SquareCover:
    """The squares of the ``eta/2``-lattice meeting ``source``.

    ``source`` is a CellSet (closed cells), a sequence of points, or an
    axis-parallel Segment.  Squares are open, so a square whose boundary only
    touches the source is not selected.  Exact for rational data.
    """
    eta = to_number(eta)
    if eta <= 0:
        raise GeometryError("eta must be positive")
    if isinstance(source, CellSet):
        if source.dim != 2:
            raise GeometryError("square covers are planar")
        return _grid_cover_cells(source, eta)
    if isinstance(source, Segment):
        a, b = source.start, source.end
        if len(a) != 2:
            raise GeometryError("square covers are planar")
        if a[0] != b[0] and a[1] != b[1]:
            raise GeometryError("only axis-parallel segments are supported; rasterize others first")
        boxes = [((min(a[0], b[0]), min(a[1], b[1])), (max(a[0], b[0]), max(a[1], b[1])))]
    else:
        pts = [as_point(p) for p in source]
        if any(len(p) != 2 for p in pts):
            raise GeometryError("square covers are planar")
        boxes = [(p, p) for p in pts]
    rows = []
    for lo, hi in boxes:
        kx = _lattice_range(lo[0], hi[0], eta)
        ky = _lattice_range(lo[1], hi[1], eta)
        for i in range(kx[0], kx[1] + 1):
            for j in range(ky[0], ky[1] + 1):
                rows.append((i, j))
    return SquareCover(eta, np.array(rows, dtype=np.int64).reshape(-1, 2), "points")


def _grid_cover_cells(cells: CellSet, eta) -> SquareCover:
    if not len(cells):
        return SquareCover(eta, np.zeros((0, 2), dtype=np.int64), cells.provenance)
    q = Fraction(2 * cells.resolution / eta) if is_exact(cells.resolution) and is_exact(eta) else None
    idx = cells.idx
    if q is not None:
        p, s = q.numerator, q.denominator
        lo = np.floor_divide(idx * p, s)  # floor(i q)
        hi = -np.floor_divide(-(idx + 1) * p, s)  # ceil((i + 1) q)
    else:
        qf = 2 * float(cells.resolution) / float(eta)
        lo = np.floor(idx * qf - PAD).astype(np.int64)
        hi = np.ceil((idx + 1) * qf + PAD).astype(np.int64)
    span = hi - lo + 1
    out = []
    for nx in np.unique(span[:, 0]):
        for ny in np.unique(span[:, 1]):
            sel = (span[:, 0] == nx) & (span[:, 1] == ny)
            if not sel.any():
                continue
            ox, oy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
            offs = np.stack([ox.ravel(), oy.ravel()], axis=1)
            out.append((lo[sel][:, None, :] + offs[None, :, :]).reshape(-1, 2))
    return SquareCover(eta, np.vstack(out), cells.provenance)


# ---------------------------------------------------------------- distances between pieces of K


@dataclass(frozen=True)
class Exclusion:
    """Neighborhood of radius ``radius`` around ``points`` removed from a set.

    ``pad`` holds enclosure radii of the points (their true positions are
    within ``pad`` of the stored ones).  ``closed`` selects ``[P]_r`` instead
    of ``(P)_r``.
    """

    points: np.ndarray
    radius: float
    pad: np.ndarray | float = 0.0
    closed: bool = False

    def _dist(self, centers):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        return cdist(np.asarray(centers, dtype=float).reshape(-1, pts.shape[1] if len(pts) else 2), pts)

    def swallows(self, centers, radii) -> np.ndarray:
        """Balls that certainly lie inside the removed neighborhood."""
        if not len(np.asarray(self.points).reshape(-1)):
            return np.zeros(len(centers), dtype=bool)
        reach = self._dist(centers) + np.asarray(radii)[:, None] + np.asarray(self.pad)
        reach = reach * (1 + PAD) + PAD
        inside = reach <= self.radius if self.closed else reach < self.radius
        return inside.any(axis=1)

    def outside(self, pts) -> np.ndarray:
        """Points that certainly survive the removal."""
        if not len(np.asarray(self.points).reshape(-1)):
            return np.ones(len(pts), dtype=bool)
        d = (self._dist(pts) - np.asarray(self.pad)) * (1 - PAD) - PAD
        ok = d > self.radius if self.closed else d >= self.radius
        return ok.all(axis=1)


@dataclass(frozen=True)
class DistanceBound:
    lower: float
    upper: float
    level: int
    pairs: int


def copy_distance(
    ifs: IFSSystem,
    g: Similarity | None = None,
    exclude_a: Exclusion | None = None,
    exclude_b: Exclusion | None = None,
    point=None,
    levels: int = 40,
    rel_tol: float = 1e-2,
    abs_tol: float = 0.0,
    max_pairs: int = 400_000,
) -> DistanceBound:
    """Bounds on ``dist(A, g(B))`` with ``A = K \\ exclude_a`` (or a single
    ``point``) and ``B = K \\ exclude_b``, by branch and bound over ball pairs.

    The lower bound is certified (float with outward padding); the upper bound
    comes from actual points of the sets.  An empty ``A`` or ``B`` gives
    ``inf``.
    """
    d = ifs.dim
    c = np.array([float(v) for v in ifs.center])
    R = float(ifs.radius)
    p0 = np.array([float(v) for v in ifs.maps[0].fixed_point()])
    fa, ft = ifs.affines
    fr = np.array([float(r) for r in ifs.ratios])
    g = g if g is not None else Similarity.identity(d)
    ga, gt = g.affine()
    gs = float(g.ratio)
    m = ifs.m

    ident = pieces_from_maps([Similarity.identity(d)])
    a_a, a_t, a_s = ident.a, ident.t, ident.sr
    fixed_a = point is not None
    if fixed_a:
        pt = np.array([float(v) for v in as_point(point)])
        a_s = np.zeros(1)
    b_a, b_t, b_s = ident.a.copy(), ident.t.copy(), ident.sr.copy()
    upper = math.inf
    lower = 0.0
    level = 0

    def place(a, t, s, side_b):
        cen = np.einsum("nij,j->ni", a, c) + t
        rep = np.einsum("nij,j->ni", a, p0) + t
        rad = s * R
        ok = np.ones(len(s), dtype=bool)
        excl = exclude_b if side_b else exclude_a
        if excl is not None:
            ok = ~excl.swallows(cen, rad)
            rep_ok = excl.outside(rep)
        else:
            rep_ok = np.ones(len(s), dtype=bool)
        if side_b:
            cen = cen @ ga.T + gt
            rep = rep @ ga.T + gt
            rad = rad * gs
        return cen, rad, rep, ok, rep_ok

    def children(a, t, s):
        ca = np.einsum("nij,kjl->nkil", a, fa).reshape(-1, d, d)
        ct = (np.einsum("nij,kj->nki", a, ft) + t[:, None, :]).reshape(-1, d)
        cs = (s[:, None] * fr[None, :]).reshape(-1)
        return ca, ct, cs

    for level in range(levels + 1):
        if fixed_a:
            xa = np.broadcast_to(pt, (len(b_s), d))
            ra = np.zeros(len(b_s))
            repa = xa
            oka = np.ones(len(b_s), dtype=bool)
            repoka = oka
        else:
            xa, ra, repa, oka, repoka = place(a_a, a_t, a_s, False)
        xb, rb, repb, okb, repokb = place(b_a, b_t, b_s, True)
        alive = oka & okb
        if not alive.any():
            return DistanceBound(math.inf if math.isinf(upper) else upper, upper, level, 0)
        rep_ok = alive & repoka & repokb
        if rep_ok.any():
            upper = min(upper, float(np.linalg.norm(repa[rep_ok] - repb[rep_ok], axis=1).min()))
        gap = np.linalg.norm(xa - xb, axis=1) - ra - rb
        keep = alive & (gap <= upper)
        gap_kept = gap[keep]
        lower = max(0.0, float(gap_kept.min()) if len(gap_kept) else upper)
        lower = max(0.0, lower * (1 - PAD) - PAD * (1 + R))
        if (math.isfinite(upper) and upper - lower <= rel_tol * upper + abs_tol) or level == levels:
            break
        n = int(keep.sum())
        if n * m * m > max_pairs:
            break
        if not fixed_a:
            a_a, a_t, a_s = a_a[keep], a_t[keep], a_s[keep]
        b_a, b_t, b_s = b_a[keep], b_t[keep], b_s[keep]
        # refine the larger side of every pair (both when equal)
        sa = a_s if not fixed_a else np.zeros(n)
        sb = b_s * gs
        ref_a = (sa >= sb * (1 - 1e-12)) & (not fixed_a)
        ref_b = sb >= sa * (1 - 1e-12)
        parts = []
        for sel, ra_, rb_ in ((ref_a & ref_b, True, True), (ref_a & ~ref_b, True, False), (~ref_a & ref_b, False, True)):
            idx = np.flatnonzero(sel)
            if not len(idx):
                continue
            side_a = (a_a[idx], a_t[idx], a_s[idx]) if not fixed_a else None
            side_b = (b_a[idx], b_t[idx], b_s[idx])
            if ra_ and rb_:
                ca = children(*side_a)
                side_a = tuple(np.repeat(x, m, axis=0) for x in ca)
                cb = children(*side_b)
                side_b = tuple(np.tile(x.reshape(len(idx), m, *x.shape[1:]), (1, m) + (1,) * (x.ndim - 1)).reshape(-1, *x.shape[1:]) for x in cb)
            elif ra_:
                side_a = children(*side_a)
                side_b = tuple(np.repeat(x, m, axis=0) for x in side_b)
            else:
                side_b = children(*side_b)
                if side_a is not None:
                    side_a = tuple(np.repeat(x, m, axis=0) for x in side_a)
            parts.append((side_a, side_b))
        if not fixed_a:
            a_a = np.concatenate([p[0][0] for p in parts])
            a_t = np.concatenate([p[0][1] for p in parts])
            a_s = np.concatenate([p[0][2] for p in parts])
        b_a = np.concatenate([p[1][0] for p in parts])
        b_t = np.concatenate([p[1][1] for p in parts])
        b_s = np.concatenate([p[1][2] for p in parts])
    return DistanceBound(lower, upper, level, int(keep.sum()))


# ---------------------------------------------------------------- delta and k


@dataclass(frozen=True)
class DeltaChoice:
    delta: Fraction
    k: int
    eps: float
    h_min_distance: float
    bound: float  # delta must lie strictly below this
    separation: float  # certified lower bound on dist(K \ (H)_delta, union of neighbor copies)
    halvings: int

    def __iter__(self):
        return iter((self.delta, self.k))

    @property
    def eta(self) -> Fraction:
        return self.delta / 2 ** self.k


def _h_array(H: IntersectionSet):
    pts = np.array(H.points, dtype=float).reshape(-1, 2)
    rad = np.array(H.radii, dtype=float).reshape(-1)
    return pts, rad


def _min_pairwise(pts: np.ndarray) -> float:
    if len(pts) < 2:
        return math.inf
    d = cdist(pts, pts)
    d[np.diag_indices(len(pts))] = math.inf
    return float(d.min())


def _merge_tol(closure: NeighborClosure, rad: np.ndarray) -> float:
    """Distance below which two images of enclosed points count as the same point."""
    grow = max([1.0] + [float(h.ratio) for h in closure.maps])
    return 4 * grow * (float(rad.max()) if len(rad) else 0.0) + 1e-9


def _min_distinct(pts: np.ndarray, tol: float) -> float:
    """Smallest distance between points farther apart than ``tol``."""
    if len(pts) < 2:
        return math.inf
    d = cdist(pts, pts)
    d = d[d > tol]
    return float(d.min()) if len(d) else math.inf


def _group_points(pts: np.ndarray, tol: float) -> list:
    """Label points so that points within ``tol`` (chained) share a label."""
    if tol <= 0:
        return [tuple(p) for p in pts.tolist()]
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
    n = len(pts)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) else coo_matrix((n, n))
    return list(connected_components(g, directed=False)[1])


def _dyadic_below(bound: float, bits: int = 4) -> Fraction:
    """Largest number with ``bits`` significant binary digits strictly below ``bound``."""
    if not bound > 0:
        raise CoverError("no positive delta exists")
    b = max(0, math.ceil(-math.log2(bound))) + bits
    num = math.ceil(bound * 2 ** b) - 1
    while Fraction(num, 2 ** b) >= bound:
        num -= 1
    return Fraction(num, 2 ** b)


def select_delta_k(
    ifs: IFSSystem,
    closure: NeighborClosure,
    H: IntersectionSet,
    eps: float,
    max_halvings: int = 12,
    member_tol: float = 1e-6,
) -> DeltaChoice:
    """A dyadic ``delta`` just below the first bound (four significant bits)
    satisfying both conditions, and the least ``k``.

    First condition: ``delta < 1/4 min(1, eps, min distance within H)``.
    Second: every neighbor copy ``h(K)`` coming within ``2 delta`` of a point
    ``x`` of ``H`` contains ``x``; checked by certified point-to-copy distance
    bounds, halving ``delta`` while it fails.  ``k`` is the least integer with
    ``delta / 2^(k-1)`` below a certified lower bound of the distance from
    ``K \\ (H)_delta`` to the union of the neighbor copies.
    """
    if not closure.stabilized:
        raise CoverError("neighbor closure did not stabilize")
    if H.status != "certified-finite":
        raise CoverError(f"intersection points are not certified finite ({H.status})")
    if ifs.dim != 2:
        raise CoverError("cover constructions are planar")
    pts, rad = _h_array(H)
    hmin = _min_pairwise(pts)
    bound = 0.25 * min(1.0, float(eps) if eps > 0 else math.inf, hmin)
    if not math.isfinite(bound) or bound <= 0:
        raise CoverError("eps must be positive")
    delta = _dyadic_below(bound)
    # point-to-copy distances do not depend on delta, compute them once
    dists = []
    for x, rx in zip(pts, rad):
        for h in closure.maps:
            db = copy_distance(ifs, h.map, point=x, rel_tol=1e-3, abs_tol=member_tol)
            dists.append((db, rx))
    halvings = 0
    while True:
        ok = True
        for db, rx in dists:
            if db.upper <= rx + member_tol:
                continue  # x lies in h(K)
            if db.lower - rx <= 2 * float(delta):
                ok = False
                break
        if ok:
            break
        halvings += 1
        if halvings > max_halvings:
            raise CoverError("intersection points are not isolated from neighbor copies", halvings)
        delta /= 2
    sep = math.inf
    if closure.maps and len(pts):
        excl = Exclusion(pts, float(delta), rad, closed=False)
        for h in closure.maps:
            db = copy_distance(ifs, h.map, exclude_a=excl, rel_tol=0.05)
            sep = min(sep, db.lower)
        if not sep > 0:
            raise CoverError("K \\ (H)_delta touches a neighbor copy at the resolution reached")
    elif closure.maps:
        for h in closure.maps:
            sep = min(sep, copy_distance(ifs, h.map, rel_tol=0.05).lower)
    if math.isinf(sep):
        k = 1
    else:
        # least k with delta / 2^(k-1) < sep
        k = 1
        while float(delta) / 2 ** (k - 1) >= sep:
            k += 1
    return DeltaChoice(delta, k, float(eps), hmin, bound, sep, halvings)


# ---------------------------------------------------------------- cover sequence


@dataclass(frozen=True)
class CoverLayer:
    """Squares added at step ``n``: ``maps[j]`` applied to ``covers[j]``."""

    n: int
    words: tuple
    maps: tuple
    covers: tuple

    @property
    def count(self) -> int:
        return sum(len(c) for c in self.covers)

    def perimeter(self) -> float:
        return sum(float(g.ratio) * float(c.perimeter) for g, c in zip(self.maps, self.covers))

    def quads(self) -> np.ndarray:
        """Corner coordinates, shape ``(N, 4, 2)``, counter-clockwise before mapping."""
        out = []
        for g, cov in zip(self.maps, self.covers):
            if not len(cov):
                continue
            b = cov.boxes()
            corners = np.stack(
                [b[:, [0, 1]], b[:, [2, 1]], b[:, [2, 3]], b[:, [0, 3]]], axis=1
            )
            a, t = g.affine()
            out.append(corners @ a.T + t)
        if not out:
            return np.zeros((0, 4, 2))
        return np.concatenate(out)


@dataclass(frozen=True)
class CoverSequence:
    delta: Fraction
    k: int
    eta: Fraction
    H: np.ndarray
    H_radii: np.ndarray
    cells: CellSet  # K-approximation the squares were selected against
    base_count: int  # number of squares of the eta-lattice meeting K (cell approximation)
    c: int  # level-independent piece-count constant
    layers: tuple
    p_counts: tuple  # #P_n for n = 1..n_max (zero for n = 1, where no pieces are used)
    lengths: tuple  # cumulative square-boundary length per n
    bounds: tuple  # 2^(2-k) c #C sum_{j<=n} delta^j per n

    def squares_upto(self, n: int) -> np.ndarray:
        return np.concatenate([l.quads() for l in self.layers[:n]])

    def union_upto(self, n: int, hidden: Sequence = ()):
        """Union of the squares of ``U_n``; pieces whose squares all lie in one
        of the ``hidden`` boxes ``(lo, hi)`` are left out."""
        parts = []
        for layer in self.layers[:n]:
            for g, cov in zip(layer.maps, layer.covers):
                if not len(cov):
                    continue
                a, t = g.affine()
                lo, hi = cov.boxes()[:, :2].min(axis=0), cov.boxes()[:, 2:].max(axis=0)
                corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]) @ a.T + t
                if any(np.all(corners >= blo) and np.all(corners <= bhi) for blo, bhi in hidden):
                    continue
                parts.append(shapely.affinity.affine_transform(cov.union, [a[0, 0], a[0, 1], a[1, 0], a[1, 1], t[0], t[1]]))
        return shapely.unary_union(parts) if parts else shapely.Polygon()


def _swallowed_cells(cells: CellSet, pts: np.ndarray, rad: np.ndarray, radius: float, closed: bool = False) -> np.ndarray:
    """Cells whose closed box lies inside the ``radius``-neighborhood of one of ``pts``."""
    if not len(pts) or not len(cells):
        return np.zeros(len(cells), dtype=bool)
    r = float(cells.resolution)
    lo = cells.idx * r
    hi = lo + r
    out = np.zeros(len(cells), dtype=bool)
    for p, pr in zip(pts, rad):
        far = np.maximum(np.abs(lo - p), np.abs(hi - p))
        d = np.hypot(far[:, 0], far[:, 1]) + pr
        d = d * (1 + PAD) + PAD
        out |= (d <= radius) if closed else (d < radius)
    return out


def _copy_cells(ifs: IFSSystem, g: Similarity, res, rho: float, region_center, region_radius) -> np.ndarray:
    """Cell indices covering the part of ``g(K)`` near a disc."""
    from .geom import rasterize_balls

    c = np.array([float(v) for v in ifs.center])
    R = float(ifs.radius)
    rc = np.asarray(region_center, dtype=float)

    def near(p):
        cen = np.einsum("nij,j->ni", p.a, c) + p.t
        return np.linalg.norm(cen - rc, axis=1) <= region_radius + p.sr * R

    pcs = curtailed_pieces(ifs, rho, pieces_from_maps([g]), keep=near)
    if not len(pcs):
        return np.zeros((0, 2), dtype=np.int64)
    cen = np.einsum("nij,j->ni", pcs.a, c) + pcs.t
    return rasterize_balls(cen, pcs.sr * R, res)


def _cells_for(ifs: IFSSystem, eta: Fraction, level: int | None):
    """K-approximation whose cells are at most ``eta/4`` wide."""
    if level is None:
        level = 1
        while float(level_resolution(ifs, level)) > float(eta) / 4:
            level += 1
    res = level_resolution(ifs, level)
    cells = approximate(ifs, float(ifs.r_max) ** level, res)
    object.__setattr__(cells, "level", level)
    return cells, float(ifs.r_max) ** level


def piece_count_constant(ifs: IFSSystem, centers: np.ndarray, widen: float, scales: Iterable[float]) -> int:
    """Largest number of ``Q_rho`` pieces meeting a closed ball of radius ``widen * rho``.

    Maximized over the given ball centers and scales ``rho``.  Counting uses
    piece bounding balls, so it over-counts the pieces actually needed.
    """
    c = np.array([float(v) for v in ifs.center])
    R = float(ifs.radius)
    best = 0
    for rho in scales:
        for x in np.asarray(centers, dtype=float).reshape(-1, 2):
            reach = widen * rho

            def near(p, x=x, reach=reach):
                cen = np.einsum("nij,j->ni", p.a, c) + p.t
                return np.linalg.norm(cen - x, axis=1) <= reach + p.sr * R * (1 + PAD)

            best = max(best, len(curtailed_pieces(ifs, rho, keep=near)))
    return best


def _pieces_near(ifs: IFSSystem, rho: float, pts: np.ndarray, rad: np.ndarray, radius: float, depth: int = 3):
    """Words of ``Q_rho`` whose piece meets the closed ``radius``-neighborhood of ``pts``."""
    c = np.array([float(v) for v in ifs.center])
    R = float(ifs.radius)

    def meets(p):
        cen = np.einsum("nij,j->ni", p.a, c) + p.t
        d = cdist(cen, pts) - rad[None, :]
        return (d <= radius + (p.sr * R)[:, None] * (1 + PAD) + PAD).any(axis=1)

    pcs = curtailed_pieces(ifs, rho, keep=meets, with_words=True)
    words = []
    for i in range(len(pcs)):
        sub = pcs.take([i])
        for _ in range(depth):
            sub = sub.children(ifs)
            sub = sub.take(meets(sub))
            if not len(sub):
                break
        if len(sub):
            words.append(pcs.words[i])
    return sorted(words)


def default_piece_constant(ifs: IFSSystem, H: IntersectionSet, delta) -> int:
    """``#H`` times the largest piece count near a point of ``H`` over a few scales."""
    pts, _ = _h_array(H)
    d = float(delta)
    scales = sorted({d ** a * 2 ** (-b / 3) for a in (1.5, 2.5) for b in range(3)})
    probe = pts if len(pts) else np.array([[float(v) for v in ifs.maps[0].fixed_point()]])
    return max(1, len(pts)) * piece_count_constant(ifs, probe, 1 / d, scales)


def cover_sequence(
    ifs: IFSSystem,
    closure: NeighborClosure,
    H: IntersectionSet,
    delta,
    k: int,
    n_max: int,
    level: int | None = None,
    c: int | None = None,
) -> CoverSequence:
    """Square-cover layers ``U_1, ..., U_{n_max}``.

    ``U_1`` holds the squares of side ``eta = delta 2^-k`` meeting
    ``K \\ (H)_delta``.  Layer ``n >= 2`` adds, for each piece ``f_i`` at
    scale ``delta^n`` touching ``[H]_{delta^(n-1)}``, the images
    ``f_i(V)`` of lattice squares ``V`` meeting ``K`` with ``f_i(V)`` meeting
    ``K \\ (H)_{delta^n}``.  That test runs in the frame of the piece, where
    ``f_i^{-1}(K)`` near ``K`` is ``K`` together with its neighbor copies.
    All set tests use cell approximations and keep every square that might
    qualify.
    """
    if ifs.dim != 2:
        raise CoverError("cover constructions are planar")
    if H.status != "certified-finite":
        raise CoverError(f"intersection points are not certified finite ({H.status})")
    if n_max < 1:
        raise CoverError("n_max must be at least 1")
    delta = Fraction(to_number(delta)) if is_exact(to_number(delta)) else to_number(delta)
    eta = delta / 2 ** k
    pts, rad = _h_array(H)
    cells, rho = _cells_for(ifs, eta, level)
    base = grid_cover(cells, eta)
    u1_cells = CellSet(cells.resolution, cells.idx[~_swallowed_cells(cells, pts, rad, float(delta))], "K minus (H)_delta")
    u1 = grid_cover(u1_cells, eta)
    ident = Similarity.identity(2)
    layers = [CoverLayer(1, ((),), (ident,), (u1,))]
    if c is None:
        c = default_piece_constant(ifs, H, delta)
    # local picture of f_i^{-1}(K) near K: K and its neighbor copies
    reach = float(ifs.radius) + 2 * float(eta)
    local = [cells.idx]
    for h in closure.maps:
        local.append(_copy_cells(ifs, h.map, cells.resolution, rho, ifs.center, reach))
    local_cells = CellSet(cells.resolution, np.vstack(local), "K and neighbor copies")
    full = grid_cover(local_cells, eta).intersect(base)
    cache: dict = {}
    p_counts = [0]
    for n in range(2, n_max + 1):
        words = _pieces_near(ifs, float(delta) ** n, pts, rad, float(delta) ** (n - 1)) if len(pts) else []
        p_counts.append(len(words))
        maps, covers = [], []
        for w in words:
            f = compose(ifs, w)
            inv = f.inverse()
            loc = np.array([[float(v) for v in inv(tuple(p))] for p in pts])
            radius = float(delta) ** n / float(f.ratio)
            # only H points whose removed disc reaches the local picture matter
            near = np.linalg.norm(loc - np.array([float(v) for v in ifs.center]), axis=1) < reach + radius + float(eta)
            if not near.any():
                cov = full
            else:
                key = (tuple(np.round(loc[near], 12).ravel()), round(radius, 12))
                if key not in cache:
                    drop = _swallowed_cells(local_cells, loc[near], rad[near] / float(f.ratio), radius)
                    keep = CellSet(cells.resolution, local_cells.idx[~drop], "local")
                    cache[key] = grid_cover(keep, eta).intersect(base)
                cov = cache[key]
            maps.append(f)
            covers.append(cov)
        layers.append(CoverLayer(n, tuple(words), tuple(maps), tuple(covers)))
    lengths, bounds = [], []
    total = 0.0
    for n, layer in enumerate(layers, start=1):
        total += layer.perimeter()
        lengths.append(total)
        bounds.append(2.0 ** (2 - k) * c * len(base) * sum(float(delta) ** j for j in range(1, n + 1)))
    return CoverSequence(delta, k, eta, pts, rad, cells, len(base), c, tuple(layers), tuple(p_counts), tuple(lengths), tuple(bounds))


# ---------------------------------------------------------------- surrounding loop


@dataclass(frozen=True)
class LoopResult:
    loop: PolyPath
    length: float
    n: int
    contacts: tuple  # points where the loop meets the K-approximation cells
    contact_cells: np.ndarray
    polygon: object = field(repr=False, default=None)  # shapely Polygon of the unbounded component's complement
    provenance: str = "H-neighborhoods replaced by sup-norm squares"

    def encloses(self, pts) -> np.ndarray:
        """Point-in-polygon test against the loop (boundary counts as outside)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        shell = shapely.Polygon(self.loop.as_array())
        return shapely.contains_xy(shell, pts[:, 0], pts[:, 1])


def _union_of_quads(quads: np.ndarray):
    if not len(quads):
        return shapely.Polygon()
    rings = np.concatenate([quads, quads[:, :1, :]], axis=1)
    polys = shapely.polygons(rings)
    return shapely.unary_union(polys)


def surrounding_loop(seq: CoverSequence | np.ndarray, n: int | None = None, H=None, radius=None, cells: CellSet | None = None) -> LoopResult:
    """Outer boundary of ``U_n`` together with sup-norm squares of radius ``delta^(n-1)`` around ``H``.

    ``seq`` is a CoverSequence, or a raw ``(N, 4, 2)`` array of square corners
    (then ``H`` and ``radius`` give the extra squares and ``n`` is only a
    label).  Contacts are reported against ``cells`` (default: the
    sequence's K-approximation).
    """
    if isinstance(seq, CoverSequence):
        if n is None or not 1 <= n <= len(seq.layers):
            raise CoverError("n must index a computed layer")
        pts = seq.H
        r = float(seq.delta) ** (n - 1)
        cells = seq.cells if cells is None else cells
        squares = [(p - r, p + r) for p in pts]
        covered = seq.union_upto(n, hidden=squares)
    else:
        quads = np.asarray(seq, dtype=float).reshape(-1, 4, 2)
        pts = np.zeros((0, 2)) if H is None else np.asarray(H, dtype=float).reshape(-1, 2)
        r = float(radius or 0.0)
        n = n or 0
        squares = [(p - r, p + r) for p in pts]
        covered = _union_of_quads(quads)
    if r > 0 and squares:
        covered = shapely.unary_union([covered] + [shapely.box(lo[0], lo[1], hi[0], hi[1]) for lo, hi in squares])
    union = covered
    if union.is_empty:
        raise CoverError("empty cover")
    if union.geom_type != "Polygon":
        raise CoverError(f"cover union has {len(union.geoms)} separate parts; no single loop encloses K")
    shell = shapely.Polygon(union.exterior)
    ring = np.asarray(shapely.get_coordinates(shapely.simplify(union.exterior, 0.0)))
    loop = PolyPath([tuple(p) for p in ring])
    contacts, hit_cells = [], []
    if cells is not None and len(cells):
        res = float(cells.resolution)
        for a, b in zip(ring[:-1], ring[1:]):
            cand = segment_cells(tuple(a), tuple(b), cells.resolution)
            hit = cand[cells.cells_blocked(cand)]
            for cell in hit:
                lo = cell * res
                clip = shapely.box(lo[0], lo[1], lo[0] + res, lo[1] + res).intersection(shapely.LineString([a, b]))
                if not clip.is_empty:
                    contacts.append(tuple(np.asarray(shapely.get_coordinates(clip)).mean(axis=0)))
                    hit_cells.append(cell)
    cc = np.unique(np.array(hit_cells, dtype=np.int64).reshape(-1, 2), axis=0)
    return LoopResult(loop, float(shell.exterior.length), n, tuple(contacts), cc, shell)


# ---------------------------------------------------------------- separated covers


@dataclass(frozen=True)
class CoverFamily:
    """Two families certifying the separated-cover bound at scale ``s``.

    ``balls`` are ``(center, radius)`` of ``f_i(B_{2 c1}(x))``; ``pieces`` are
    the words ``i`` standing for ``f_i(K \\ [H]_{c1})``.  ``min_gaps`` holds the
    certified smallest distance within each family (``inf`` when it has at most
    one member).  Lengths are normalized by ``scale``.
    """

    s: float
    scale: float
    eps: float
    c1: Number
    c2: float
    c: float
    balls: tuple
    pieces: tuple
    min_gaps: tuple
    max_diameter: float
    exact: bool
    violations: tuple = ()

    @property
    def families(self) -> tuple:
        return (self.balls, self.pieces)

    @property
    def certified(self) -> bool:
        return not self.violations and self.max_diameter <= self.s


def _words_for(ifs: IFSSystem, rho) -> list:
    if rho >= 1:
        return [()]
    return curtail(ifs, rho)


def _snap(x: float, r: float):
    """Simplest rational within ``r`` of ``x``."""
    f = Fraction(x)
    for den in (1, 2, 4, 8, 16, 32, 64, 128, 256, 1024, 4096, 2 ** 16, 2 ** 20):
        q = Fraction(round(x * den), den)
        if abs(float(q) - x) <= r:
            return q
    return f


def nagata_cover(
    ifs: IFSSystem,
    closure: NeighborClosure,
    H: IntersectionSet,
    s,
    eps: float,
    exact: bool | None = None,
) -> CoverFamily:
    """Two separated families covering ``K`` at scale ``s``.

    Lengths are normalized by ``scale``, the lower diameter bound rounded
    down to a multiple of 1/16 (so ``scale = 1`` reproduces the constants for
    a unit-diameter attractor); piece diameters are checked against ``s``
    with the upper diameter bound.  ``eps`` is capped strictly below the smallest distance between distinct
    points of ``Z = H ∪ h(H)``, ``c1 = eps r_min / 8``,
    ``c2 = r_min / 2 * min_h dist(K \\ (H)_c1, h(K \\ (H)_c1))`` and
    ``c = min(c1, c2)``.  Family one holds the maximal balls
    ``f_i(B_{2 c1}(x))``, ``x`` in ``H``, and family two the pieces
    ``f_i(K \\ [H]_{c1})``, ``i`` in ``Q_{s/2}``.  Both are checked to be
    ``c s``-separated; ball gaps use exact rationals when the maps and
    snapped ``H`` are rational.
    """
    if not closure.stabilized:
        raise CoverError("neighbor closure did not stabilize")
    if H.status != "certified-finite":
        raise CoverError(f"intersection points are not certified finite ({H.status})")
    s = to_number(s)
    if s <= 0:
        raise CoverError("s must be positive")
    lo_d, hi_d = ifs.diameter_bounds
    # any normalizing length works once piece diameters are certified <= s;
    # a short rational keeps the constants exact
    scale = Fraction(math.floor(lo_d * 16), 16) if lo_d >= 1 / 16 else Fraction(1)
    pts, rad = _h_array(H)
    if exact is None:
        exact = ifs.exact
    # Z = H together with its neighbor images
    z = [p for p in pts]
    for h in closure.maps:
        a, t = h.map.affine()
        z += [a @ p + t for p in pts]
    zmin = _min_distinct(np.array(z).reshape(-1, 2), _merge_tol(closure, rad)) if len(z) else math.inf
    eps_n = float(eps) / float(scale)
    if math.isfinite(zmin):
        cap = _dyadic_below(zmin / float(scale))
        eps_n = min(eps_n, float(cap))
    eps_q = Fraction(eps_n).limit_denominator(2 ** 20) if exact else eps_n
    if exact and eps_q > eps_n:
        eps_q -= Fraction(1, 2 ** 20)
    c1 = eps_q * (Fraction(ifs.r_min) if exact else float(ifs.r_min)) / 8
    c1f = float(c1 * scale)  # actual units
    # c2: smallest gap between K \ (H)_c1 and its neighbor copies
    excl_open = Exclusion(pts, c1f, rad, closed=False)
    gaps = [copy_distance(ifs, h.map, exclude_a=excl_open, exclude_b=excl_open, rel_tol=0.02).lower for h in closure.maps]
    c2 = float(ifs.r_min) / 2 * min(gaps) / scale if gaps else math.inf
    c = min(float(c1), c2)
    if not c > 0:
        raise CoverError("separation constant is not positive")
    s_n = float(s) / scale  # normalized
    words = _words_for(ifs, Fraction(s) / 2 / scale if exact and is_exact(s) else s_n / 2)
    maps = [compose(ifs, w) if w else Similarity.identity(ifs.dim) for w in words]
    target = c * float(s)  # actual units: c is dimensionless, s is actual
    violations = []

    # family one: maximal balls f_i(B_{2 c1}(x))
    balls = []
    if len(pts):
        snapped = [tuple(_snap(float(v), float(r) + 1e-12) for v in p) for p, r in zip(pts, rad)] if exact else [tuple(p) for p in pts]
        raw = []
        for f in maps:
            for x in snapped:
                cen = f(x)
                raw.append((cen, 2 * (c1 * (scale if exact else float(scale))) * f.ratio))
        best = {}
        tol = 0.0 if exact else _merge_tol(closure, rad)
        keys = _group_points(np.array([[float(v) for v in cen] for cen, _ in raw]), tol)
        for key, (cen, r) in zip(keys, raw):
            if key not in best or r > best[key][1]:
                best[key] = (cen, r)
        cand = sorted(best.values(), key=lambda b: tuple(float(v) for v in b[0]))
        # drop balls strictly inside another
        cf = np.array([[float(v) for v in b[0]] for b in cand])
        rf = np.array([float(b[1]) for b in cand])
        tree = cKDTree(cf)
        inside = np.zeros(len(cand), dtype=bool)
        for i, (p, r) in enumerate(zip(cf, rf)):
            for j in tree.query_ball_point(p, 2 * rf.max()):
                if j != i and rf[j] > r and np.linalg.norm(cf[j] - p) + r <= rf[j] * (1 + 1e-12):
                    inside[i] = True
                    break
        balls = [b for b, out in zip(cand, inside) if not out]
    ball_gap = math.inf
    if len(balls) > 1:
        cf = np.array([[float(v) for v in b[0]] for b in balls])
        rf = np.array([float(b[1]) for b in balls])
        tree = cKDTree(cf)
        pairs = tree.query_pairs(2 * rf.max() + target * 2 + 1e-9, output_type="ndarray")
        for i, j in pairs:
            (p, r), (q, t) = balls[i], balls[j]
            if exact:
                d2 = sum((a - b) ** 2 for a, b in zip(p, q))
                need = Fraction(target) + r + t
                ok = d2 >= need * need
                gap = math.sqrt(float(d2)) - float(r) - float(t)
            else:
                gap = float(np.linalg.norm(cf[i] - cf[j])) - rf[i] - rf[j] - PAD
                ok = gap >= target
            ball_gap = min(ball_gap, gap)
            if not ok:
                violations.append(("balls", i, j, gap))
        if not len(pairs):
            d = cdist(cf, cf)
            d[np.diag_indices(len(cf))] = math.inf
            ball_gap = float((d - rf[:, None] - rf[None, :]).min())

    # family two: pieces f_i(K \ [H]_c1)
    excl_closed = Exclusion(pts, c1f, rad, closed=True)
    piece_gap = math.inf
    if len(maps) > 1:
        cen0 = np.array([float(v) for v in ifs.center])
        R = float(ifs.radius)
        cf = np.array([[float(v) for v in f(ifs.center)] for f in maps])
        rf = np.array([float(f.ratio) * R for f in maps])
        tree = cKDTree(cf)
        pairs = tree.query_pairs(2 * rf.max() + target + 1e-9, output_type="ndarray")
        far = math.inf
        near_pairs = set(map(tuple, pairs.tolist()))
        if len(maps) <= 3000:
            d = cdist(cf, cf) - rf[:, None] - rf[None, :]
            for i in range(len(maps)):
                for j in range(i + 1, len(maps)):
                    if (i, j) not in near_pairs:
                        far = min(far, d[i, j])
        piece_gap = far
        cache = {}
        for i, j in sorted(near_pairs):
            g = maps[i].inverse().compose(maps[j])
            key = g.key(1e-9)
            if key not in cache:
                cache[key] = copy_distance(ifs, g, exclude_a=excl_closed, exclude_b=excl_closed, rel_tol=0.02).lower
            gap = float(maps[i].ratio) * cache[key]
            piece_gap = min(piece_gap, gap)
            if gap < target:
                violations.append(("pieces", i, j, gap))
        del cen0
    sr_max = max(float(f.ratio) for f in maps)
    diam = max(sr_max * hi_d, max((2 * float(r) for _, r in balls), default=0.0))
    return CoverFamily(
        float(s), float(scale), eps_n, c1, c2, c, tuple(balls), tuple(words), (ball_gap, piece_gap), diam, bool(exact), tuple(violations)
    )


# ---------------------------------------------------------------- porosity


@dataclass(frozen=True)
class PorosityReport:
    verdict: str  # q-porous-evidence or violated
    q: float
    witnesses: tuple  # (x, r, y) triples
    violation: tuple | None = None  # (x, r)


def porosity_scan(cells: CellSet, q, sample_points=None, radii: Sequence | None = None, density: int = 4) -> PorosityReport:
    """Search, for every sampled ``x`` and radius ``r``, an empty ball
    ``B_{qr}(y)`` inside ``B_r(x)`` missing all cells.

    Candidate centers ``y`` lie on a grid of spacing
    ``max(resolution, q r) / density``.  Evidence only: a finite sample of
    points and radii is tested.
    """
    q = float(q)
    if not 0 < q < 1:
        raise GeometryError("q must lie in (0, 1)")
    if not len(cells):
        return PorosityReport("q-porous-evidence", q, ())
    res = float(cells.resolution)
    if sample_points is None:
        cen = cells.centers()
        step = max(1, len(cen) // 64)
        sample_points = cen[::step]
    pts = np.asarray(sample_points, dtype=float).reshape(-1, 2)
    if radii is None:
        lo, hi = cells.bounds()
        size = float(np.max(hi - lo))
        radii = [size / 2 ** j for j in range(1, 5) if size / 2 ** j > 2 * res]
    mask, origin = cells.mask()
    tree = cKDTree(cells.centers())
    witnesses = []
    for x in pts:
        for r in radii:
            rr = q * r
            h = max(res, rr) / density
            span = r - rr
            k = int(math.floor(span / h))
            g = np.arange(-k, k + 1) * h
            gx, gy = np.meshgrid(g, g, indexing="ij")
            cand = np.stack([gx.ravel(), gy.ravel()], axis=1)
            cand = cand[np.hypot(cand[:, 0], cand[:, 1]) <= span * (1 - 1e-12)] + x
            # nearest cell box distance must exceed q r
            dd, _ = tree.query(cand, k=1)
            free = dd > rr + res * math.sqrt(2) / 2
            found = None
            if free.any():
                found = cand[np.flatnonzero(free)[0]]
            else:
                for y in cand[dd > rr]:
                    near = tree.query_ball_point(y, rr + res)
                    boxes = cells.idx[near] * res
                    gap = np.maximum(np.maximum(boxes - y, y - (boxes + res)), 0.0)
                    if not len(near) or np.hypot(gap[:, 0], gap[:, 1]).min() > rr * (1 + PAD):
                        found = y
                        break
            if found is None:
                return PorosityReport("violated", q, tuple(witnesses), (tuple(float(v) for v in x), float(r)))
            witnesses.append((tuple(float(v) for v in x), float(r), tuple(float(v) for v in found)))
    del mask, origin
    return PorosityReport("q-porous-evidence", q, tuple(witnesses))


# ---------------------------------------------------------------- box dimension


@dataclass(frozen=True)
class DimensionEstimate:
    value: float
    low: float
    high: float
    stderr: float
    scales: tuple
    counts: tuple

    def contains(self, x: float) -> bool:
        return self.low <= x <= self.high


def box_counts(source, scales: Iterable) -> list[tuple[float, int]]:
    """Number of half-open grid boxes of each side length meeting the source.

    ``source`` is an array of sample points or a CellSet (counted through its
    cell centers, so use scales that are multiples of the resolution).
    """
    if isinstance(source, CellSet):
        pts = source.centers()
    else:
        pts = np.asarray(source, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
    out = []
    for e in scales:
        e = float(e)
        idx = np.floor(pts / e + 1e-9).astype(np.int64)
        out.append((e, int(len(np.unique(idx, axis=0))) if len(idx) else 0))
    return out


def box_dimension(counts: Sequence, confidence: float = 0.95) -> DimensionEstimate:
    """Least-squares slope of ``log N(e)`` against ``log(1/e)``.

    ``counts`` holds ``(e, N)`` pairs.  The interval is the slope's
    t-interval from the regression residuals, widened to at least the
    spread of the local slopes between consecutive scales.
    """
    pairs = sorted((float(e), int(n)) for e, n in counts)
    if len(pairs) < 4:
        raise GeometryError("need at least four scales")
    es = np.array([e for e, _ in pairs])
    ns = np.array([n for _, n in pairs], dtype=float)
    if np.any(es <= 0) or np.any(ns <= 0):
        raise GeometryError("scales and counts must be positive")
    if math.log2(es.max() / es.min()) < 2:
        raise GeometryError("scales must span at least two octaves")
    if len(set(ns.tolist())) == 1:
        raise GeometryError("counts are constant; no dimension can be fitted")
    x = np.log(1 / es)
    y = np.log(ns)
    fit = stats.linregress(x, y)
    t = stats.t.ppf(0.5 + confidence / 2, len(x) - 2)
    half = t * fit.stderr
    local = np.diff(y) / np.diff(x)
    half = max(half, float(np.abs(local - fit.slope).max()) / 2)
    return DimensionEstimate(float(fit.slope), float(fit.slope - half), float(fit.slope + half), float(fit.stderr), tuple(es.tolist()), tuple(int(n) for n in ns))
