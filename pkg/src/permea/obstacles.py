"""Exact obstacle generators: Cantor-type interval sets, square boundaries and self-affine carpets.

Everything here is rational end to end.  Sets that are too large to list cell
by cell (products of interval sets, deep carpet levels) are represented
implicitly: they expose ``resolution``, ``dim`` and a vectorized
``cells_blocked`` so the path search can query them lazily.
"""

from __future__ import annotations

import bisect
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .geom import CellSet, GeometryError, to_number

Interval = tuple  # (Fraction, Fraction), closed


# ---------------------------------------------------------------- interval sets


@dataclass(frozen=True)
class IntervalSet:
    """Sorted, pairwise disjoint closed rational intervals inside [0, 1]."""

    level: int
    intervals: tuple

    def __post_init__(self):
        ivs = tuple((Fraction(a), Fraction(b)) for a, b in self.intervals)
        for a, b in ivs:
            if not 0 <= a <= b <= 1:
                raise GeometryError(f"interval [{a}, {b}] leaves [0, 1]")
        for (_, b), (a, _) in zip(ivs, ivs[1:]):
            if not b < a:
                raise GeometryError("intervals must be sorted and disjoint")
        object.__setattr__(self, "intervals", ivs)

    def __len__(self) -> int:
        return len(self.intervals)

    @property
    def measure(self) -> Fraction:
        return sum((b - a for a, b in self.intervals), Fraction(0))

    @property
    def common_length(self) -> Fraction | None:
        lengths = {b - a for a, b in self.intervals}
        return lengths.pop() if len(lengths) == 1 else None

    def contains(self, x) -> bool:
        x = Fraction(x)
        return any(a <= x <= b for a, b in self.intervals)

    def nests_in(self, other: "IntervalSet") -> bool:
        """Every interval lies inside some interval of ``other``."""
        starts = [c for c, _ in other.intervals]
        for a, b in self.intervals:
            k = bisect.bisect_right(starts, a) - 1
            if k < 0 or b > other.intervals[k][1]:
                return False
        return True

    def gaps(self) -> list[Interval]:
        """Open gaps between consecutive intervals."""
        return [(b, a) for (_, b), (a, _) in zip(self.intervals, self.intervals[1:])]

    def index_ranges(self, res) -> np.ndarray:
        """Merged integer ranges ``[lo, hi]`` of closed cells of side ``res`` meeting the set."""
        res = Fraction(res)
        out: list[list[int]] = []
        for a, b in self.intervals:
            lo, hi = math.ceil(a / res) - 1, math.floor(b / res)
            if out and lo <= out[-1][1] + 1:
                out[-1][1] = max(out[-1][1], hi)
            else:
                out.append([lo, hi])
        return np.array(out, dtype=np.int64).reshape(-1, 2)


def svc_level(n: int) -> IntervalSet:
    """Level ``n`` of the Smith-Volterra-Cantor construction.

    Each interval loses an open middle piece of total width ``2 / 2**(2k+1)``
    at step ``k``.
    """
    if n < 0:
        raise ValueError("level must be nonnegative")
    ivs = [(Fraction(0), Fraction(1))]
    for k in range(1, n + 1):
        half_gap = Fraction(1, 2 ** (2 * k + 1))
        nxt = []
        for a, b in ivs:
            mid = (a + b) / 2
            nxt += [(a, mid - half_gap), (mid + half_gap, b)]
        ivs = nxt
    return IntervalSet(n, tuple(ivs))


def svc_gap_width(n: int) -> Fraction:
    """Width of the gaps opened at step ``n``."""
    return Fraction(2, 2 ** (2 * n + 1))


def cantor_level(n: int) -> IntervalSet:
    """The ``2**n`` closed intervals of the middle-third construction."""
    if n < 0:
        raise ValueError("level must be nonnegative")
    ivs = [(Fraction(0), Fraction(1))]
    for _ in range(n):
        nxt = []
        for a, b in ivs:
            t = (b - a) / 3
            nxt += [(a, a + t), (b - t, b)]
        ivs = nxt
    return IntervalSet(n, tuple(ivs))


# ---------------------------------------------------------------- implicit cell sets


class ImplicitCells:
    """Lazy closed-cell cover queried through ``cells_blocked``."""

    resolution: Fraction
    provenance: str = ""
    dim = 2

    def cells_blocked(self, query: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains_point(self, p) -> bool:
        from .geom import cells_containing_point

        return bool(self.cells_blocked(cells_containing_point(p, self.resolution)).any())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def materialize(self, limit: int = 4_000_000) -> CellSet:
        """Enumerate all blocked cells inside ``bounds()`` into a CellSet."""
        lo, hi = self.bounds()
        res = float(self.resolution)
        i0 = np.floor(lo / res).astype(np.int64) - 1
        i1 = np.ceil(hi / res).astype(np.int64) + 1
        total = int(np.prod(i1 - i0 + 1))
        if total > limit:
            raise GeometryError(f"{total} cells exceed the materialization limit {limit}")
        axes = [np.arange(a, b + 1) for a, b in zip(i0, i1)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2)
        return CellSet(self.resolution, grid[self.cells_blocked(grid)], self.provenance)


def _in_ranges(vals: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    if not len(ranges):
        return np.zeros(len(vals), dtype=bool)
    k = np.searchsorted(ranges[:, 0], vals, side="right") - 1
    ok = k >= 0
    out = np.zeros(len(vals), dtype=bool)
    out[ok] = vals[ok] <= ranges[k[ok], 1]
    return out


@dataclass(frozen=True, eq=False)
class ProductCells(ImplicitCells):
    """Cells meeting ``xs × ys`` (each an IntervalSet), optionally shifted."""

    xs: IntervalSet
    ys: IntervalSet
    resolution: Fraction
    provenance: str = "product"

    def __post_init__(self):
        object.__setattr__(self, "resolution", Fraction(self.resolution))

    @cached_property
    def _ranges(self):
        return self.xs.index_ranges(self.resolution), self.ys.index_ranges(self.resolution)

    def cells_blocked(self, query):
        q = np.asarray(query, dtype=np.int64).reshape(-1, 2)
        rx, ry = self._ranges
        return _in_ranges(q[:, 0], rx) & _in_ranges(q[:, 1], ry)

    def bounds(self):
        return np.array([float(self.xs.intervals[0][0]), float(self.ys.intervals[0][0])]), np.array(
            [float(self.xs.intervals[-1][1]), float(self.ys.intervals[-1][1])]
        )

    @property
    def measure(self) -> Fraction:
        return self.xs.measure * self.ys.measure


def extrude(intervals: IntervalSet, axis: int = 0, extent=(0, 1), resolution=Fraction(1, 64)) -> CellSet:
    """Cell cover of ``I × [lo, hi]`` (``axis=0``) or ``[lo, hi] × I`` (``axis=1``)."""
    lo, hi = (Fraction(to_number(v)) for v in extent)
    slab = IntervalSet(0, ((lo, hi),)) if 0 <= lo <= hi <= 1 else None
    if slab is None:
        raise GeometryError("extrusion extent must lie in [0, 1]")
    prod = ProductCells(intervals, slab, resolution) if axis == 0 else ProductCells(slab, intervals, resolution)
    cells = prod.materialize()
    return CellSet(cells.resolution, cells.idx, f"extrude(level {intervals.level}, axis {axis})")


def product_cells(xs: IntervalSet, ys: IntervalSet, resolution) -> ProductCells:
    return ProductCells(xs, ys, Fraction(resolution), f"product(levels {xs.level},{ys.level})")


# ---------------------------------------------------------------- boundaries of SVC squares


def theta_segments(n_max: int) -> list[tuple]:
    """Distinct sides of all squares of ``F_n × F_n`` for ``n ≤ n_max``.

    Sides are ``((x0, y0), (x1, y1))`` with exact rational endpoints,
    horizontal or vertical.
    """
    segs = []
    for n in range(n_max + 1):
        segs += _level_sides(n)
    return list(dict.fromkeys(segs))


def _level_sides(n: int) -> list[tuple]:
    ivs = svc_level(n).intervals
    out = []
    for a, b in ivs:
        for c, d in ivs:
            out += [((a, c), (b, c)), ((a, d), (b, d)), ((a, c), (a, d)), ((b, c), (b, d))]
    return out


def theta_squares(n_max: int, resolution, window=None) -> CellSet:
    """Closed cells meeting the union of the boundaries of ``F_n × F_n``, ``n ≤ n_max``.

    ``window = ((x0, y0), (x1, y1))`` keeps only the sides meeting that closed
    box, clipped to it.
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    res = Fraction(resolution)
    if n_max >= 1 and res > svc_gap_width(n_max):
        warnings.warn(f"resolution {res} cannot resolve the level-{n_max} gaps", stacklevel=2)
    segs = theta_segments(n_max)
    if window is not None:
        (wx0, wy0), (wx1, wy1) = [[Fraction(to_number(v)) for v in p] for p in window]
        segs = [
            ((max(x0, wx0), max(y0, wy0)), (min(x1, wx1), min(y1, wy1)))
            for (x0, y0), (x1, y1) in segs
            if x0 <= wx1 and x1 >= wx0 and y0 <= wy1 and y1 >= wy0
        ]
    parts = [np.zeros((0, 2), dtype=np.int64)]
    for (x0, y0), (x1, y1) in segs:
        xr = _closed_range(x0, x1, res)
        yr = _closed_range(y0, y1, res)
        gx, gy = np.meshgrid(np.arange(xr[0], xr[1] + 1), np.arange(yr[0], yr[1] + 1), indexing="ij")
        parts.append(np.stack([gx.ravel(), gy.ravel()], axis=1))
    return CellSet(res, np.vstack(parts), f"theta-squares(n_max={n_max})")


def _closed_range(a: Fraction, b: Fraction, res: Fraction) -> tuple[int, int]:
    return math.ceil(a / res) - 1, math.floor(b / res)


# ---------------------------------------------------------------- Bedford-McMullen patterns


@dataclass(frozen=True)
class BMCPattern:
    """Digit pattern ``R ⊆ {0..n-1} × {0..m-1}`` of a self-affine carpet."""

    n: int
    m: int
    cells: frozenset
    name: str = ""

    def __post_init__(self):
        cells = frozenset((int(i), int(j)) for i, j in self.cells)
        for i, j in cells:
            if not (0 <= i < self.n and 0 <= j < self.m):
                raise GeometryError(f"pattern cell {(i, j)} outside the {self.n}x{self.m} grid")
        object.__setattr__(self, "cells", cells)

    def __len__(self) -> int:
        return len(self.cells)

    def doubled(self) -> frozenset:
        """The pattern stacked twice: rows ``0..2m-1``."""
        return self.cells | {(i, j + self.m) for i, j in self.cells}

    @cached_property
    def table(self) -> np.ndarray:
        t = np.zeros((self.n, self.m), dtype=bool)
        for i, j in self.cells:
            t[i, j] = True
        t.setflags(write=False)
        return t

    def measure(self, level: int) -> Fraction:
        return Fraction(len(self.cells), self.n * self.m) ** level

    def to_json(self) -> dict:
        return {"n": self.n, "m": self.m, "cells": sorted([list(c) for c in self.cells])}


def bmc_pattern() -> BMCPattern:
    """48 × 10 pattern: even columns ``2i`` minus the row ``(5i + 7) mod 10``."""
    cells = {(2 * i, j) for i in range(24) for j in range(10) if j % 10 != (5 * i + 7) % 10}
    return BMCPattern(48, 10, frozenset(cells), "bmc")


def full_pattern(n: int = 48, m: int = 10) -> BMCPattern:
    return BMCPattern(n, m, frozenset((i, j) for i in range(n) for j in range(m)), "full")


def empty_pattern(n: int = 48, m: int = 10) -> BMCPattern:
    return BMCPattern(n, m, frozenset(), "empty")


def pattern_from_dict(data: dict, name: str = "") -> BMCPattern:
    try:
        return BMCPattern(int(data["n"]), int(data["m"]), frozenset(tuple(c) for c in data["cells"]), name)
    except (KeyError, TypeError, ValueError) as exc:
        raise GeometryError(f"pattern JSON needs 'n', 'm' and 'cells': {exc}") from exc


def load_pattern(path) -> BMCPattern:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GeometryError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return pattern_from_dict(data, Path(path).stem)


@dataclass(frozen=True)
class WindowCheck:
    passed: bool
    windows: int
    failing: tuple | None = None  # (block, row)


def bmc_window_check(p: BMCPattern) -> WindowCheck:
    """For every column block ``ν`` and row ``j`` of the doubled pattern, some
    column ``i ∈ {4ν, 4ν+2}`` must hold both ``(i, j)`` and ``(i, j+1)``."""
    if p.n % 4:
        raise GeometryError("window check needs the column count to be a multiple of 4")
    r2 = p.doubled()
    count = 0
    for nu in range(p.n // 4):
        for j in range(2 * p.m - 1):
            count += 1
            if not any((i, j) in r2 and (i, j + 1) in r2 for i in (4 * nu, 4 * nu + 2)):
                return WindowCheck(False, count, (nu, j))
    return WindowCheck(True, count)


@dataclass(frozen=True, eq=False)
class BMCCells(ImplicitCells):
    """Level-``l`` rectangles of the carpet, stacked ``copies`` times in y.

    A rectangle is indexed by (column, row) at level ``l``; it is present when
    every digit pair lies in the pattern.  Queries at a square resolution mark
    every square cell meeting a present closed rectangle.
    """

    pattern: BMCPattern
    level: int
    resolution: Fraction = Fraction(1, 240)
    copies: int = 1
    provenance: str = "bmc"

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("level must be at least 1")
        object.__setattr__(self, "resolution", Fraction(self.resolution))

    @property
    def columns(self) -> int:
        return self.pattern.n ** self.level

    @property
    def rows(self) -> int:
        return self.pattern.m ** self.level

    @property
    def count(self) -> int:
        return self.copies * len(self.pattern) ** self.level

    @property
    def measure(self) -> Fraction:
        return self.copies * self.pattern.measure(self.level)

    def present(self, col: np.ndarray, row: np.ndarray) -> np.ndarray:
        """Vectorized rectangle membership; rows may run over all copies."""
        col = np.asarray(col, dtype=np.int64)
        row = np.asarray(row, dtype=np.int64)
        ok = (col >= 0) & (col < self.columns) & (row >= 0) & (row < self.copies * self.rows)
        c, r = np.where(ok, col, 0), np.where(ok, row, 0) % self.rows
        for _ in range(self.level):
            ok &= self.pattern.table[c % self.pattern.n, r % self.pattern.m]
            c //= self.pattern.n
            r //= self.pattern.m
        return ok

    def column_profile(self, col: int) -> np.ndarray:
        """Blocked rows (all copies) of one level-``l`` column."""
        return self.present(np.full(self.copies * self.rows, col), np.arange(self.copies * self.rows))

    def rectangles(self, limit: int = 1_000_000) -> np.ndarray:
        """All present (column, row) pairs; refuses to list more than ``limit``."""
        if self.count > limit:
            raise GeometryError(f"level {self.level} has {self.count} rectangles, above the limit {limit}")
        digits = np.array(sorted(self.pattern.cells), dtype=np.int64).reshape(-1, 2)
        cols, rows = np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64)
        for _ in range(self.level):
            cols = (cols[:, None] * self.pattern.n + digits[None, :, 0]).ravel()
            rows = (rows[:, None] * self.pattern.m + digits[None, :, 1]).ravel()
        out = [np.stack([cols, rows + k * self.rows], axis=1) for k in range(self.copies)]
        return np.vstack(out)

    def rect_box(self, col: int, row: int) -> tuple[tuple, tuple]:
        w, h = Fraction(1, self.columns), Fraction(1, self.rows)
        return (col * w, row * h), ((col + 1) * w, (row + 1) * h)

    def cells_blocked(self, query):
        q = np.asarray(query, dtype=np.int64).reshape(-1, 2)
        res = self.resolution
        # closed cell [i r, (i+1) r] meets closed column [c/N, (c+1)/N] iff c ∈ [ceil(i r N) - 1, floor((i+1) r N)]
        c0, c1 = _meeting_range(q[:, 0], res, self.columns)
        r0, r1 = _meeting_range(q[:, 1], res, self.rows)
        out = np.zeros(len(q), dtype=bool)
        if not len(q):
            return out
        kx = int((c1 - c0).max()) + 1
        ky = int((r1 - r0).max()) + 1
        if kx * ky > 65536:
            raise GeometryError("query cells are far coarser than the carpet level")
        for dx in range(kx):
            for dy in range(ky):
                c, r = c0 + dx, r0 + dy
                valid = (c <= c1) & (r <= r1)
                out |= valid & self.present(c, r)
        return out

    def bounds(self):
        return np.zeros(2), np.array([1.0, float(self.copies)])


def _meeting_range(i: np.ndarray, res: Fraction, count: int):
    """Integer index range of width-``1/count`` slabs meeting closed cells ``i``."""
    num, den = res.numerator * count, res.denominator
    lo = -((-(i * num)) // den) - 1  # ceil(i*res*count) - 1
    hi = ((i + 1) * num) // den
    return lo, hi


def bmc_cells(p: BMCPattern, level: int, resolution=None, copies: int = 1) -> BMCCells:
    """Level-``level`` carpet rectangles; ``resolution`` defaults to the exact common grid."""
    if resolution is None:
        resolution = Fraction(1, math.lcm(p.n ** level, p.m ** level))
    return BMCCells(p, level, Fraction(resolution), copies, f"bmc({p.name or 'custom'}, level {level})")


def bmc_nested(p: BMCPattern, level: int) -> bool:
    """Every level-``level+1`` rectangle lies in its level-``level`` parent rectangle."""
    fine = bmc_cells(p, level + 1).rectangles()
    coarse = bmc_cells(p, level)
    if not len(fine):
        return True
    parents = coarse.present(fine[:, 0] // p.n, fine[:, 1] // p.m)
    return bool(parents.all())


# ---------------------------------------------------------------- crossing variation


@dataclass(frozen=True)
class CrossingBound:
    """Least vertical variation of a grid crossing; ``value`` is None when blocked."""

    level: int
    value: Fraction | None
    columns: int
    rows: int

    @property
    def blocked(self) -> bool:
        return self.value is None


def _run_transform(g: np.ndarray, free: np.ndarray) -> np.ndarray:
    """``f(y) = min g(y') + |y - y'|`` over ``y'`` in the same free run as ``y``."""
    n = len(g)
    out = np.full(n, np.inf)
    fin = free & np.isfinite(g)
    if not fin.any():
        return out
    lo = g[fin].min()
    # every same-run value lies in [0, span]; an offset above that keeps runs apart
    span = g[fin].max() - lo + n
    big = 2 * span + 1
    y = np.arange(n, dtype=float)
    starts = free & ~np.concatenate([[False], free[:-1]])
    run = np.cumsum(starts).astype(float)
    h = np.where(fin, g - lo - y, np.inf) - big * run
    fwd = np.minimum.accumulate(h) + big * run + y
    h2 = (np.where(fin, g - lo + y, np.inf) + big * run)[::-1]
    bwd = (np.minimum.accumulate(h2) - big * run[::-1])[::-1] - y
    best = np.minimum(fwd, bwd)
    ok = free & (best <= span)
    out[ok] = best[ok] + lo
    return out


def min_crossing_variation(p: BMCPattern, level: int) -> CrossingBound:
    """Least total vertical movement of a monotone-in-x crossing of [0,1]×[0,2].

    The crossing moves through the complement of the closed level-``level``
    rectangles of the doubled pattern.  It may change height only inside
    free runs of a column; a horizontal step between adjacent columns needs
    the row to be free in both.  The result is exact (rows have height
    ``m**-level``) and bounds only that restricted path class.
    """
    if level < 1:
        raise ValueError("level must be at least 1")
    cells = BMCCells(p, level, Fraction(1, 1), copies=2)
    rows = 2 * cells.rows
    free_col = np.ones(rows, dtype=bool)
    f = None
    prev_free_column = False
    for col in range(cells.columns):
        free = ~cells.column_profile(col) if _column_can_block(p, col, level) else free_col
        open_column = bool(free.all())
        if open_column and prev_free_column:
            continue
        g = np.zeros(rows) if f is None else np.where(free, f, np.inf)
        f = _run_transform(g, free)
        prev_free_column = open_column
        if not np.isfinite(f).any():
            return CrossingBound(level, None, cells.columns, rows)
    best = float(f.min())
    return CrossingBound(level, Fraction(int(round(best)), cells.rows), cells.columns, rows)


def _column_can_block(p: BMCPattern, col: int, level: int) -> bool:
    used = {i for i, _ in p.cells}
    for _ in range(level):
        if col % p.n not in used:
            return False
        col //= p.n
    return True
