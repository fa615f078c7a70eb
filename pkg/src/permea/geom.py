"""Geometric primitives: exact-leaning numbers, norms, polygonal paths and cell sets.

Coordinates are kept as :class:`fractions.Fraction` whenever the input is
rational (ints, ``"p/q"`` strings, Fractions) and fall back to ``float``
otherwise.  Python mixes the two transparently, so every helper below works on
either kind and stays exact as long as all of its inputs are.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from numbers import Rational
from typing import Iterable, Iterator, Sequence, Union

import numpy as np
from scipy import ndimage

Number = Union[Fraction, float]
Point = tuple

# relative padding used whenever a floating predicate must err on the safe side
PAD = 1e-9


class GeometryError(ValueError):
    """Raised on invalid geometric input (dimension mismatch, degenerate data)."""


# ---------------------------------------------------------------- numbers


def to_number(value) -> Number:
    """Convert ``value`` to a Fraction when it is rational, else to float."""
    if isinstance(value, bool):
        raise TypeError("booleans are not coordinates")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, Rational):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise GeometryError(f"not a rational literal: {value!r}") from exc
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise GeometryError(f"non-finite coordinate {value!r}")
        return float(value)
    raise TypeError(f"unsupported number type {type(value).__name__}")


def is_exact(value) -> bool:
    return isinstance(value, Fraction)


def as_point(coords: Iterable) -> Point:
    pt = tuple(to_number(c) for c in coords)
    if not 1 <= len(pt) <= 3:
        raise GeometryError(f"points must have 1 to 3 coordinates, got {len(pt)}")
    return pt


def exact_sqrt(value: Number) -> Number:
    """Square root that stays rational for perfect rational squares."""
    if value < 0:
        raise GeometryError("square root of a negative number")
    if isinstance(value, Fraction):
        n, d = value.numerator, value.denominator
        rn, rd = math.isqrt(n), math.isqrt(d)
        if rn * rn == n and rd * rd == d:
            return Fraction(rn, rd)
    return math.sqrt(value)


def to_float_array(points) -> np.ndarray:
    return np.array([[float(c) for c in p] for p in points], dtype=float)


def sub(a: Point, b: Point) -> Point:
    return tuple(x - y for x, y in zip(a, b))


def add(a: Point, b: Point) -> Point:
    return tuple(x + y for x, y in zip(a, b))


def scale(a: Point, k) -> Point:
    return tuple(k * x for x in a)


def dot(a: Point, b: Point):
    return sum(x * y for x, y in zip(a, b))


def dist(a: Point, b: Point) -> Number:
    return exact_sqrt(dot(sub(a, b), sub(a, b)))


# ---------------------------------------------------------------- norms


@dataclass(frozen=True)
class Norm:
    """A norm on R^d: Euclidean, a p-norm, or a d=2 polygonal unit ball.

    For the polygon kind the unit ball is given by its vertices in
    counter-clockwise order; it must be convex and centrally symmetric.
    """

    kind: str = "euclidean"
    p: float | None = None
    vertices: tuple | None = None

    def __post_init__(self):
        if self.kind == "p":
            if self.p is None or not (self.p >= 1):
                raise GeometryError("p-norm needs p in [1, inf]")
        elif self.kind == "polygon":
            _check_unit_polygon(self.vertices)
        elif self.kind != "euclidean":
            raise GeometryError(f"unknown norm kind {self.kind!r}")

    @classmethod
    def euclidean(cls) -> "Norm":
        return cls("euclidean")

    @classmethod
    def p_norm(cls, p) -> "Norm":
        if p == 2:
            return cls("euclidean")
        return cls("p", p=math.inf if p == math.inf else p)

    @classmethod
    def polygon(cls, vertices: Sequence) -> "Norm":
        return cls("polygon", vertices=tuple(as_point(v) for v in vertices))

    @classmethod
    def parse(cls, text: str) -> "Norm":
        """Parse ``euclidean``, ``l1``, ``linf``, ``inf`` or a number ``p``."""
        key = text.strip().lower()
        if key in ("euclidean", "l2", "2"):
            return cls.euclidean()
        if key in ("l1", "1", "manhattan"):
            return cls.p_norm(1)
        if key in ("linf", "inf", "sup", "max"):
            return cls.p_norm(math.inf)
        try:
            return cls.p_norm(float(key.removeprefix("l").removeprefix("p=")))
        except ValueError as exc:
            raise GeometryError(f"unknown norm {text!r}") from exc

    @property
    def name(self) -> str:
        if self.kind == "euclidean":
            return "euclidean"
        if self.kind == "p":
            return "linf" if self.p == math.inf else f"l{self.p:g}"
        return "polygon"

    @property
    def strictly_convex(self) -> bool:
        if self.kind == "euclidean":
            return True
        if self.kind == "p":
            return 1 < self.p < math.inf
        return False

    def __call__(self, v: Sequence) -> Number:
        if self.kind == "euclidean":
            return exact_sqrt(sum(x * x for x in v))
        if self.kind == "p":
            if self.p == 1:
                return sum(abs(x) for x in v)
            if self.p == math.inf:
                return max(abs(x) for x in v)
            return sum(abs(float(x)) ** self.p for x in v) ** (1.0 / self.p)
        if len(v) != 2:
            raise GeometryError("polygonal norms are defined for d=2 only")
        best = None
        for nx, ny, c in _polygon_edges(self.vertices):
            val = (nx * v[0] + ny * v[1]) / c
            best = val if best is None or val > best else best
        return max(best, 0)

    def float_eval(self, v: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on rows of a float array."""
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if self.kind == "euclidean":
            return np.sqrt((v * v).sum(axis=1))
        if self.kind == "p":
            return np.linalg.norm(v, ord=self.p, axis=1)
        out = np.zeros(len(v))
        for nx, ny, c in _polygon_edges(self.vertices):
            out = np.maximum(out, (float(nx) * v[:, 0] + float(ny) * v[:, 1]) / float(c))
        return out


def _polygon_edges(vertices):
    n = len(vertices)
    for k in range(n):
        a, b = vertices[k], vertices[(k + 1) % n]
        nx, ny = b[1] - a[1], a[0] - b[0]
        yield nx, ny, nx * a[0] + ny * a[1]


def _check_unit_polygon(vertices) -> None:
    if vertices is None or len(vertices) < 4:
        raise GeometryError("a unit-ball polygon needs at least 4 vertices")
    if any(len(v) != 2 for v in vertices):
        raise GeometryError("polygonal norms are defined for d=2 only")
    n = len(vertices)
    for k in range(n):
        a, b, c = vertices[k], vertices[(k + 1) % n], vertices[(k + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross <= 0:
            raise GeometryError("unit-ball polygon must be strictly convex and counter-clockwise")
    pts = {tuple(v) for v in vertices}
    if any((-v[0], -v[1]) not in pts for v in vertices):
        raise GeometryError("unit-ball polygon must be centrally symmetric")


EUCLIDEAN = Norm.euclidean()
L1 = Norm.p_norm(1)
LINF = Norm.p_norm(math.inf)


# ---------------------------------------------------------------- segments and paths


@dataclass(frozen=True)
class Segment:
    start: Point
    end: Point

    def __post_init__(self):
        object.__setattr__(self, "start", as_point(self.start))
        object.__setattr__(self, "end", as_point(self.end))
        if len(self.start) != len(self.end):
            raise GeometryError("segment endpoints differ in dimension")

    @property
    def direction(self) -> Point:
        return sub(self.end, self.start)

    @property
    def degenerate(self) -> bool:
        return all(c == 0 for c in self.direction)


@dataclass(frozen=True, init=False)
class PolyPath:
    """Polygonal chain; consecutive duplicate vertices are dropped."""

    vertices: tuple

    def __init__(self, vertices: Iterable):
        pts = [as_point(v) for v in vertices]
        if not pts:
            raise GeometryError("a path needs at least one vertex")
        dims = {len(p) for p in pts}
        if len(dims) != 1:
            raise GeometryError("path vertices mix dimensions")
        kept = [pts[0]]
        for p in pts[1:]:
            if p != kept[-1]:
                kept.append(p)
        object.__setattr__(self, "vertices", tuple(kept))

    @property
    def dim(self) -> int:
        return len(self.vertices[0])

    def __len__(self) -> int:
        return len(self.vertices)

    def segments(self) -> Iterator[Segment]:
        for a, b in zip(self.vertices, self.vertices[1:]):
            yield Segment(a, b)

    def reversed(self) -> "PolyPath":
        return PolyPath(self.vertices[::-1])

    def concat(self, other: "PolyPath") -> "PolyPath":
        if self.vertices[-1] != other.vertices[0]:
            raise GeometryError("paths do not share an endpoint")
        return PolyPath(self.vertices + other.vertices[1:])

    def as_array(self) -> np.ndarray:
        return to_float_array(self.vertices)


def path_length(path: PolyPath, norm: Norm = EUCLIDEAN, dim: int | None = None) -> Number:
    """Sum of ``norm(v_k - v_{k-1})`` along the chain."""
    if dim is not None and path.dim != dim:
        raise GeometryError(f"path has dimension {path.dim}, session uses {dim}")
    total = Fraction(0)
    for a, b in zip(path.vertices, path.vertices[1:]):
        total = total + norm(sub(b, a))
    return total


def segment_angle(s1: Segment, s2: Segment) -> float:
    """Angle in [0, pi] between the direction vectors of two segments."""
    u, v = s1.direction, s2.direction
    if s1.degenerate or s2.degenerate:
        raise GeometryError("angle of a degenerate segment")
    if len(u) != len(v):
        raise GeometryError("segments differ in dimension")
    uv, uu, vv = dot(u, v), dot(u, u), dot(v, v)
    if uv == 0:
        return math.pi / 2
    if uv * uv == uu * vv:
        return 0.0 if uv > 0 else math.pi
    c = float(uv) / math.sqrt(float(uu) * float(vv))
    return math.acos(min(1.0, max(-1.0, c)))


def double_cone_point(x, y, delta, s, z, tol: float = 1e-12) -> Point:
    """Point ``(x+y)/2 + s(y-x)/2 + (1-|s|) z`` of the double cone over ``x, y``.

    ``z`` must lie in the ball of radius ``delta`` inside the hyperplane
    orthogonal to ``y - x``.
    """
    x, y, z = as_point(x), as_point(y), as_point(z)
    s, delta = to_number(s), to_number(delta)
    if not (len(x) == len(y) == len(z)):
        raise GeometryError("dimension mismatch")
    if x == y:
        raise GeometryError("cone apexes coincide")
    if abs(s) > 1:
        raise GeometryError("|s| must not exceed 1")
    d = sub(y, x)
    zd = dot(z, d)
    scale_ = float(dot(d, d)) ** 0.5 * max(float(dot(z, z)) ** 0.5, 1.0)
    if zd != 0 and (is_exact(zd) or abs(float(zd)) > tol * scale_):
        raise GeometryError("z is not orthogonal to y - x")
    if dot(z, z) > delta * delta * (1 + tol):
        raise GeometryError("z lies outside the mid-disk")
    mid = scale(add(x, y), Fraction(1, 2))
    return tuple(m + s * di / 2 + (1 - abs(s)) * zi for m, di, zi in zip(mid, d, z))


def cone_length_bound(x, y, delta) -> float:
    """Length bound for the two-segment cone paths through the mid-disk."""
    d = float(dot(sub(as_point(y), as_point(x)), sub(as_point(y), as_point(x))))
    return math.sqrt(d + 4 * float(delta) ** 2)


# ---------------------------------------------------------------- cells


def _canon_resolution(res) -> Number:
    r = to_number(res)
    if r <= 0:
        raise GeometryError("resolution must be positive")
    return r


@dataclass(frozen=True, eq=False)
class CellSet:
    """Finite set of closed axis-aligned grid cells ``[i*res, (i+1)*res]^d``.

    The cells stand in, conservatively, for some target set named in
    ``provenance``.
    """

    resolution: Number
    idx: np.ndarray
    provenance: str = ""
    level: int | None = None

    def __post_init__(self):
        res = _canon_resolution(self.resolution)
        arr = np.asarray(self.idx, dtype=np.int64)
        if arr.ndim != 2:
            arr = arr.reshape(-1, 2)
        if len(arr):
            arr = np.unique(arr, axis=0)
        arr.setflags(write=False)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "idx", arr)

    @classmethod
    def empty(cls, resolution, dim: int = 2, provenance: str = "") -> "CellSet":
        return cls(resolution, np.zeros((0, dim), dtype=np.int64), provenance)

    @classmethod
    def from_mask(cls, resolution, mask: np.ndarray, origin, provenance: str = "", level=None):
        nz = np.argwhere(mask) + np.asarray(origin, dtype=np.int64)
        return cls(resolution, nz.reshape(-1, mask.ndim), provenance, level)

    @property
    def dim(self) -> int:
        return self.idx.shape[1]

    def __len__(self) -> int:
        return len(self.idx)

    def __iter__(self):
        return (tuple(int(v) for v in row) for row in self.idx)

    def __eq__(self, other):
        if not isinstance(other, CellSet):
            return NotImplemented
        return self.resolution == other.resolution and self.index_set == other.index_set

    def __hash__(self):
        return hash((self.resolution, self.index_set))

    def __contains__(self, cell) -> bool:
        return tuple(int(c) for c in cell) in self.index_set

    @cached_property
    def index_set(self) -> frozenset:
        return frozenset(map(tuple, self.idx.tolist()))

    @cached_property
    def _mask(self):
        if not len(self.idx):
            return np.zeros((0,) * self.dim, dtype=bool), np.zeros(self.dim, dtype=np.int64)
        lo = self.idx.min(axis=0)
        hi = self.idx.max(axis=0)
        mask = np.zeros(tuple(hi - lo + 1), dtype=bool)
        mask[tuple((self.idx - lo).T)] = True
        mask.setflags(write=False)
        return mask, lo

    def mask(self):
        """Dense boolean array over the bounding index box, and its origin."""
        return self._mask

    def cells_blocked(self, query: np.ndarray) -> np.ndarray:
        """Vectorized membership of integer cell indices (rows of ``query``)."""
        q = np.asarray(query, dtype=np.int64).reshape(-1, self.dim)
        mask, lo = self._mask
        out = np.zeros(len(q), dtype=bool)
        if not len(self.idx) or not len(q):
            return out
        rel = q - lo
        ok = np.all((rel >= 0) & (rel < np.array(mask.shape)), axis=1)
        out[ok] = mask[tuple(rel[ok].T)]
        return out

    def contains_point(self, p) -> bool:
        """True when ``p`` lies in some closed cell."""
        return bool(self.cells_blocked(cells_containing_point(p, self.resolution)).any())

    def box(self, cell) -> tuple[Point, Point]:
        r = self.resolution
        lo = tuple(int(c) * r for c in cell)
        return lo, tuple(c + r for c in lo)

    def centers(self) -> np.ndarray:
        return (self.idx.astype(float) + 0.5) * float(self.resolution)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        r = float(self.resolution)
        return self.idx.min(axis=0) * r, (self.idx.max(axis=0) + 1) * r

    def measure(self) -> Number:
        return len(self) * self.resolution ** self.dim

    def _check(self, other: "CellSet"):
        if self.resolution != other.resolution or (len(self) and len(other) and self.dim != other.dim):
            raise GeometryError("cell sets differ in resolution or dimension")

    def union(self, other: "CellSet") -> "CellSet":
        self._check(other)
        return CellSet(self.resolution, np.vstack([self.idx, other.idx]), self.provenance)

    def intersection(self, other: "CellSet") -> "CellSet":
        self._check(other)
        keep = other.cells_blocked(self.idx)
        return CellSet(self.resolution, self.idx[keep], self.provenance)

    def difference(self, other: "CellSet") -> "CellSet":
        self._check(other)
        keep = ~other.cells_blocked(self.idx)
        return CellSet(self.resolution, self.idx[keep], self.provenance)

    def issubset(self, other: "CellSet") -> bool:
        self._check(other)
        return bool(other.cells_blocked(self.idx).all())

    def dilate(self, k: int) -> "CellSet":
        """Add every cell within ``k`` steps in the sup metric."""
        if k <= 0 or not len(self):
            return self
        mask, lo = self._mask
        padded = np.pad(mask, k)
        grown = ndimage.binary_dilation(padded, structure=np.ones((2 * k + 1,) * self.dim, dtype=bool))
        return CellSet.from_mask(self.resolution, grown, lo - k, self.provenance, self.level)

    def coarsen(self, factor: int) -> "CellSet":
        """Cells of side ``factor * resolution`` meeting this set."""
        return CellSet(self.resolution * factor, np.floor_divide(self.idx, factor), self.provenance, self.level)

    def refine(self, factor: int) -> "CellSet":
        """The same point set at ``resolution / factor``."""
        offs = np.stack(np.meshgrid(*[np.arange(factor)] * self.dim, indexing="ij"), -1).reshape(-1, self.dim)
        fine = (self.idx[:, None, :] * factor + offs[None, :, :]).reshape(-1, self.dim)
        return CellSet(self.resolution / factor, fine, self.provenance, self.level)

    def components(self, connectivity: int = 8) -> list["CellSet"]:
        """Connected clusters; 8-connectivity treats corner contact as touching."""
        if not len(self):
            return []
        mask, lo = self._mask
        structure = np.ones((3,) * self.dim, dtype=bool) if connectivity > 4 else None
        labels, n = ndimage.label(mask, structure=structure)
        out = []
        for k in range(1, n + 1):
            out.append(CellSet.from_mask(self.resolution, labels == k, lo, self.provenance, self.level))
        return out


def cells_containing_point(p, res) -> np.ndarray:
    """Indices of all closed cells containing ``p`` (several on grid lines)."""
    p = as_point(p)
    res = to_number(res)
    choices = []
    for c in p:
        q = c / res
        if is_exact(q):
            f = math.floor(q)
            choices.append([f - 1, f] if q == f else [f])
        else:
            f = math.floor(q)
            near = abs(q - round(q)) <= PAD
            choices.append(sorted({round(q) - 1, round(q)}) if near else [f])
    grid = np.stack(np.meshgrid(*choices, indexing="ij"), -1).reshape(-1, len(p))
    return grid.astype(np.int64)


def segment_cells(a, b, res) -> np.ndarray:
    """Indices of every closed cell that may meet segment ``ab`` (2D).

    The result is a superset of the exact answer: grid-line contact counts
    and floating inputs are padded.
    """
    res_f = float(res)
    ax, ay = float(a[0]) / res_f, float(a[1]) / res_f
    bx, by = float(b[0]) / res_f, float(b[1]) / res_f
    eps = PAD * max(1.0, abs(ax), abs(ay), abs(bx), abs(by))
    if ax > bx:
        ax, ay, bx, by = bx, by, ax, ay
    c0 = math.floor(ax - eps)
    c1 = math.floor(bx + eps)
    cols = np.arange(c0, c1 + 1)
    if bx - ax <= eps:
        ylo = np.full(len(cols), min(ay, by))
        yhi = np.full(len(cols), max(ay, by))
    else:
        slope = (by - ay) / (bx - ax)
        xl = np.clip(cols.astype(float), ax, bx)
        xr = np.clip(cols.astype(float) + 1.0, ax, bx)
        yl = ay + slope * (xl - ax)
        yr = ay + slope * (xr - ax)
        ylo, yhi = np.minimum(yl, yr), np.maximum(yl, yr)
    rlo = np.floor(ylo - eps).astype(np.int64)
    rhi = np.floor(yhi + eps).astype(np.int64)
    counts = rhi - rlo + 1
    colrep = np.repeat(cols, counts)
    starts = np.repeat(rlo, counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return np.stack([colrep, starts + offsets], axis=1).astype(np.int64)


def clip_segment_to_box(a, b, lo, hi):
    """Parameter interval ``[t0, t1]`` of ``a + t(b-a)`` inside the closed box.

    Returns ``None`` when the segment misses the box.  Exact for rational input.
    """
    t0, t1 = Fraction(0), Fraction(1)
    for k in range(len(a)):
        d = b[k] - a[k]
        if d == 0:
            if a[k] < lo[k] or a[k] > hi[k]:
                return None
            continue
        u0 = (lo[k] - a[k]) / d
        u1 = (hi[k] - a[k]) / d
        if u0 > u1:
            u0, u1 = u1, u0
        t0 = max(t0, u0)
        t1 = min(t1, u1)
        if t0 > t1:
            return None
    return t0, t1


def rasterize_balls(centers: np.ndarray, radii: np.ndarray, res, pad: float = PAD) -> np.ndarray:
    """Indices of cells whose closed square meets one of the closed balls (2D).

    Floating arithmetic with an outward pad, so the answer is a superset.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),))
    if not len(centers):
        return np.zeros((0, 2), dtype=np.int64)
    res_f = float(res)
    out = []
    for rad in np.unique(radii):
        sel = centers[radii == rad] / res_f
        rr = rad / res_f * (1 + pad) + pad
        k = int(math.ceil(rr)) + 1
        base = np.floor(sel).astype(np.int64)
        offs = np.arange(-k, k + 1)
        ox, oy = np.meshgrid(offs, offs, indexing="ij")
        ox, oy = ox.ravel(), oy.ravel()
        cx = base[:, 0:1] + ox[None, :]
        cy = base[:, 1:2] + oy[None, :]
        gx = np.maximum(np.maximum(cx - sel[:, 0:1], sel[:, 0:1] - (cx + 1)), 0.0)
        gy = np.maximum(np.maximum(cy - sel[:, 1:2], sel[:, 1:2] - (cy + 1)), 0.0)
        hit = gx * gx + gy * gy <= rr * rr
        out.append(np.stack([cx[hit], cy[hit]], axis=1))
    return np.vstack(out)


def _box_distance_to_points(cells: np.ndarray, res: float, pts: np.ndarray, norm: Norm) -> np.ndarray:
    """Distance from each cell box to the nearest of ``pts`` (float)."""
    lo = cells * res
    best = np.full(len(cells), np.inf)
    for p in pts:
        g = np.maximum(np.maximum(lo - p, p - (lo + res)), 0.0)
        best = np.minimum(best, norm.float_eval(g))
    return best


def _box_distance_to_segment(cells: np.ndarray, res: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance from each cell box to segment ``ab``."""
    lo = cells * res
    hi = lo + res
    d = b - a
    dd = float(d @ d)

    def point_seg(px, py):
        if dd == 0:
            return np.hypot(px - a[0], py - a[1])
        t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / dd, 0, 1)
        return np.hypot(px - a[0] - t * d[0], py - a[1] - t * d[1])

    def point_box(p):
        g = np.maximum(np.maximum(lo - p, p - hi), 0.0)
        return np.hypot(g[:, 0], g[:, 1])

    best = np.minimum(point_box(a), point_box(b))
    for cx, cy in ((lo[:, 0], lo[:, 1]), (lo[:, 0], hi[:, 1]), (hi[:, 0], lo[:, 1]), (hi[:, 0], hi[:, 1])):
        best = np.minimum(best, point_seg(cx, cy))
    # separating-axis test for a segment passing through the box interior
    overlap = (
        (np.minimum(a[0], b[0]) <= hi[:, 0]) & (np.maximum(a[0], b[0]) >= lo[:, 0])
        & (np.minimum(a[1], b[1]) <= hi[:, 1]) & (np.maximum(a[1], b[1]) >= lo[:, 1])
    )
    sides = [d[0] * (cy - a[1]) - d[1] * (cx - a[0])
             for cx, cy in ((lo[:, 0], lo[:, 1]), (lo[:, 0], hi[:, 1]), (hi[:, 0], lo[:, 1]), (hi[:, 0], hi[:, 1]))]
    sides = np.stack(sides, axis=1)
    straddle = (sides.min(axis=1) <= 0) & (sides.max(axis=1) >= 0)
    best[overlap & straddle] = 0.0
    return best


Source = Union[CellSet, Segment, PolyPath, Sequence]


def neighborhood(source: Source, eps, closed: bool = True, resolution=None, norm: Norm = EUCLIDEAN) -> CellSet:
    """Conservative cell cover of the closed (or open) ``eps``-neighborhood.

    ``source`` is a CellSet, a Segment, a PolyPath or a sequence of points.
    A cell is kept when the distance from its closed square to the source is
    at most ``eps`` (below ``eps`` for the open neighborhood), so the result
    contains every cell that meets the true neighborhood.
    """
    eps = to_number(eps)
    if eps < 0 or (eps == 0 and not closed):
        raise GeometryError("eps must be positive (or zero for the closed neighborhood)")
    if norm.kind == "polygon":
        raise GeometryError("neighborhoods support Euclidean and p-norms")
    if isinstance(source, CellSet):
        res = source.resolution if resolution is None else _canon_resolution(resolution)
        if res != source.resolution:
            source = _resample(source, res)
        return _dilate_cells(source, eps, closed, norm)
    if resolution is None:
        raise GeometryError("a resolution is required for geometric sources")
    res = _canon_resolution(resolution)
    res_f = float(res)
    pad = PAD * max(1.0, float(eps))
    if isinstance(source, Segment):
        segs = [source]
    elif isinstance(source, PolyPath):
        segs = list(source.segments()) if len(source) > 1 else None
        if segs is None:
            source = [source.vertices[0]]
    else:
        segs = None
    if segs is not None:
        if norm.kind != "euclidean":
            raise GeometryError("segment neighborhoods use the Euclidean norm")
        parts = []
        for s in segs:
            a, b = np.array(s.start, dtype=float), np.array(s.end, dtype=float)
            cand = _candidate_cells(np.vstack([a, b]), float(eps), res_f)
            dd = _box_distance_to_segment(cand, res_f, a, b)
            parts.append(cand[_keep(dd, float(eps), closed, pad)])
        return CellSet(res, np.vstack(parts), "neighborhood")
    pts = to_float_array([as_point(p) for p in source]) if len(source) else np.zeros((0, 2))
    if not len(pts):
        return CellSet.empty(res, provenance="neighborhood")
    parts = []
    for p in pts:
        cand = _candidate_cells(p[None, :], float(eps), res_f)
        dd = _box_distance_to_points(cand, res_f, p[None, :], norm)
        parts.append(cand[_keep(dd, float(eps), closed, pad)])
    return CellSet(res, np.vstack(parts), "neighborhood")


def _keep(dd, eps, closed, pad):
    return dd <= eps + pad if closed else dd < eps + pad


def _candidate_cells(pts: np.ndarray, eps: float, res: float) -> np.ndarray:
    lo = np.floor((pts.min(axis=0) - eps) / res).astype(np.int64) - 1
    hi = np.floor((pts.max(axis=0) + eps) / res).astype(np.int64) + 1
    axes = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lo))


def _resample(cells: CellSet, res) -> CellSet:
    ratio = Fraction(cells.resolution) / Fraction(res)
    if ratio.denominator == 1:
        return cells.refine(int(ratio))
    inv = 1 / ratio
    if inv.denominator == 1:
        return cells.coarsen(int(inv))
    raise GeometryError("resolutions must be integer multiples of each other")


def _dilate_cells(cells: CellSet, eps, closed: bool, norm: Norm) -> CellSet:
    if not len(cells):
        return cells
    res = float(cells.resolution)
    k = int(math.floor(float(eps) / res)) + 1
    offs = np.arange(-k, k + 1)
    grid = np.stack(np.meshgrid(*[offs] * cells.dim, indexing="ij"), -1).reshape(-1, cells.dim)
    gaps = np.maximum(np.abs(grid) - 1, 0) * res
    dd = norm.float_eval(gaps)
    pad = PAD * max(1.0, float(eps))
    stencil = (dd <= float(eps) + pad) if closed else (dd < float(eps) + pad)
    mask, lo = cells.mask()
    padded = np.pad(mask, k)
    struct = np.zeros((2 * k + 1,) * cells.dim, dtype=bool)
    struct[tuple((grid[stencil] + k).T)] = True
    grown = ndimage.binary_dilation(padded, structure=struct)
    return CellSet.from_mask(cells.resolution, grown, lo - k, "neighborhood", cells.level)
