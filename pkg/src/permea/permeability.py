"""Witness paths through obstacle complements, detour repair, intersection
counting, cone witnesses, the angle-excess diagnostic and the planar
finite-type witness."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np
import shapely
import shapely.affinity
import shapely.ops
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .geom import (
    EUCLIDEAN,
    PAD,
    CellSet,
    GeometryError,
    Norm,
    Number,
    PolyPath,
    Segment,
    as_point,
    cells_containing_point,
    clip_segment_to_box,
    is_exact,
    path_length,
    segment_angle,
    segment_cells,
    sub,
    to_number,
)
from .ifs import IFSSystem, pieces_from_maps
from .neighbors import IntersectionSet, NeighborClosure

__all__ = [
    "PermeabilityError",
    "IntersectionCount",
    "WitnessReport",
    "NoPath",
    "NotFound",
    "ProfileSeries",
    "verdict_hint",
    "count_intersections",
    "witness_path",
    "RepairReport",
    "repair_path",
    "cone_witness",
    "angle_excess",
    "finite_type_witness_2d",
    "gap_midline_path",
    "profile",
]

# Above this many intersection components a path is reported as countable-like.
FINITE_LIKE_MAX = 64


class PermeabilityError(GeometryError):
    pass


# ---------------------------------------------------------------- reports


def verdict_hint(excess, components: int, delta, finite_max: int = FINITE_LIKE_MAX) -> str:
    """Finite-resolution reading of a witness: null-, finite-, countable-like or blocked."""
    if float(excess) > float(delta) * (1 + 1e-12):
        return "blocked"
    if components == 0:
        return "null-like"
    return "finite-like" if components <= finite_max else "countable-like"


@dataclass(frozen=True)
class IntersectionCount:
    """Components of ``path ∩ cells`` as global parameter intervals.

    Parameter ``k + t`` is the point at fraction ``t`` of segment ``k``.
    """

    count: int
    components: tuple
    exact: bool

    def __int__(self) -> int:
        return self.count


@dataclass(frozen=True)
class WitnessReport:
    path: PolyPath
    length: Number
    distance: Number
    excess: Number
    intersection_components: int
    delta: Number
    level: int | None = None
    verdict: str = ""
    start_shift: float = 0.0  # distance from x to the free cell the search started in
    end_shift: float = 0.0
    info: dict = field(default_factory=dict, compare=False)

    @property
    def found(self) -> bool:
        return True


@dataclass(frozen=True)
class NoPath:
    reason: str
    delta: Number
    level: int | None = None
    verdict: str = "blocked"

    @property
    def found(self) -> bool:
        return False


@dataclass(frozen=True)
class NotFound:
    attempts: int
    delta: Number
    best_components: int | None = None
    verdict: str = "blocked"

    @property
    def found(self) -> bool:
        return False


@dataclass(frozen=True)
class ProfileSeries:
    """Witness reports for one ``(x, y, delta)`` across obstacle levels."""

    x: tuple
    y: tuple
    delta: Number
    levels: tuple
    reports: tuple

    def __post_init__(self):
        if len(self.levels) != len(self.reports):
            raise PermeabilityError("one report per level is required")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise PermeabilityError("levels must be strictly increasing")

    @property
    def excesses(self) -> list:
        return [float(r.excess) if r.found else math.inf for r in self.reports]

    @property
    def components(self) -> list:
        return [r.intersection_components if r.found else None for r in self.reports]

    @property
    def all_blocked(self) -> bool:
        return not any(r.found for r in self.reports)


def _report(path: PolyPath, cells, x, y, delta, norm: Norm, level=None, **kw) -> WitnessReport:
    length = path_length(path, norm)
    distance = norm(sub(y, x))
    excess = length - distance
    if not is_exact(excess) and -1e-9 < excess < 0:
        excess = 0.0
    comps = count_intersections(path, cells).count if cells is not None else 0
    return WitnessReport(path, length, distance, excess, comps, delta, level, verdict_hint(excess, comps, delta), **kw)


def _level(cells):
    return getattr(cells, "level", None)


# ---------------------------------------------------------------- intersections


def _exactify(path: PolyPath, res) -> tuple[list, bool]:
    if not is_exact(res):
        return [tuple(float(c) for c in v) for v in path.vertices], False
    return [tuple(c if is_exact(c) else Fraction(c) for c in v) for v in path.vertices], True


def count_intersections(path: PolyPath, cells) -> IntersectionCount:
    """Maximal parameter intervals of the path meeting the closed cells.

    With rational resolution the clipping runs in exact arithmetic (float
    vertices are converted exactly), so edge and corner contact count.
    """
    res = cells.resolution
    verts, exact = _exactify(path, res)
    if len(verts) == 1:
        hit = cells.contains_point(verts[0])
        return IntersectionCount(int(hit), ((0, 0),) if hit else (), exact)
    pad = 0 if exact else PAD * max(1.0, float(res))
    intervals = []
    for k, (a, b) in enumerate(zip(verts, verts[1:])):
        cand = segment_cells(a, b, res)
        cand = cand[cells.cells_blocked(cand)]
        for i, j in cand.tolist():
            lo = (i * res - pad, j * res - pad)
            hi = ((i + 1) * res + pad, (j + 1) * res + pad)
            hit = clip_segment_to_box(a, b, lo, hi)
            if hit is not None:
                intervals.append((k + hit[0], k + hit[1]))
    intervals.sort()
    merged = []
    for s, e in intervals:
        if merged and s <= merged[-1][1] + pad:
            if e > merged[-1][1]:
                merged[-1][1] = e
        else:
            merged.append([s, e])
    return IntersectionCount(len(merged), tuple((s, e) for s, e in merged), exact)


def _point_at(path: PolyPath, s) -> tuple:
    k = min(int(math.floor(s)), len(path) - 2)
    t = s - k
    a, b = path.vertices[k], path.vertices[k + 1]
    return tuple(p + t * (q - p) for p, q in zip(a, b))


def _arc_lengths(path: PolyPath) -> np.ndarray:
    arr = path.as_array()
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(arr, axis=0), axis=1))])


def _param_to_arc(cum: np.ndarray, s) -> float:
    k = min(int(math.floor(s)), len(cum) - 2)
    return float(cum[k] + (float(s) - k) * (cum[k + 1] - cum[k]))


def _arc_to_param(cum: np.ndarray, a: float) -> float:
    k = int(np.clip(np.searchsorted(cum, a, side="right") - 1, 0, len(cum) - 2))
    seg = cum[k + 1] - cum[k]
    return k + (0.0 if seg == 0 else min(1.0, max(0.0, (a - cum[k]) / seg)))


# ---------------------------------------------------------------- grid search


def _segment_free(cells, a, b) -> bool:
    cand = segment_cells(a, b, cells.resolution)
    return not cells.cells_blocked(cand).any()


_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


def _grid_search(cells, x, y, margin: float, norm: Norm, bounds, penalty, inside_cost: float = 0.0):
    """Corridor Dijkstra; returns (cell index path, start shift, end shift) or None."""
    res = float(cells.resolution)
    xf, yf = np.array([float(c) for c in x]), np.array([float(c) for c in y])
    lo = np.minimum(xf, yf) - margin
    hi = np.maximum(xf, yf) + margin
    if bounds is not None:
        lo = np.maximum(lo, np.asarray(bounds[0], dtype=float))
        hi = np.minimum(hi, np.asarray(bounds[1], dtype=float))
    i0 = np.floor(lo / res).astype(np.int64) - 1
    i1 = np.ceil(hi / res).astype(np.int64) + 1
    shape = tuple(int(v) for v in i1 - i0 + 1)
    if shape[0] <= 0 or shape[1] <= 0:
        return None
    gi, gj = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    idx = np.stack([gi.ravel() + i0[0], gj.ravel() + i0[1]], axis=1)
    blocked = cells.cells_blocked(idx).reshape(shape)
    centers = (idx + 0.5) * res
    # distance of every cell center to segment xy
    d = yf - xf
    dd = float(d @ d)
    t = np.zeros(len(idx)) if dd == 0 else np.clip(((centers - xf) @ d) / dd, 0.0, 1.0)
    near = np.linalg.norm(centers - (xf + t[:, None] * d), axis=1) <= margin
    inside = near.reshape(shape)
    if bounds is not None:
        blo = np.asarray(bounds[0], dtype=float)
        bhi = np.asarray(bounds[1], dtype=float)
        ok = np.all((idx * res >= blo - PAD) & ((idx + 1) * res <= bhi + PAD), axis=1)
        inside &= ok.reshape(shape)
    trav = inside if penalty is not None else inside & ~blocked
    n_nodes = int(trav.sum())
    if n_nodes == 0:
        return None
    ids = -np.ones(shape, dtype=np.int64)
    ids[trav] = np.arange(n_nodes)
    # leftness bias: prefer cells left of the direction x -> y among equal lengths
    nrm = np.array([-d[1], d[0]]) / (math.sqrt(dd) if dd else 1.0)
    left = ((centers - xf) @ nrm).reshape(shape)
    bias = 1e-9 * res * (margin - left) / max(margin, res)
    src, dst, wt = [], [], []
    for di, dj in _STEPS:
        a_sl = (slice(max(0, -di), shape[0] - max(0, di)), slice(max(0, -dj), shape[1] - max(0, dj)))
        b_sl = (slice(max(0, di), shape[0] - max(0, -di)), slice(max(0, dj), shape[1] - max(0, -dj)))
        ok = trav[a_sl] & trav[b_sl]
        if di and dj:
            o1 = blocked[(b_sl[0], a_sl[1])]
            o2 = blocked[(a_sl[0], b_sl[1])]
            both_blocked = blocked[a_sl] & blocked[b_sl]
            ok &= (~o1 & ~o2) | both_blocked
        step = float(norm.float_eval(np.array([[di * res, dj * res]]))[0])
        w = np.full(ok.shape, step) + bias[b_sl]
        if penalty is not None:
            w = w + penalty * (blocked[b_sl] & ~blocked[a_sl]) + inside_cost * step * blocked[b_sl]
        src.append(ids[a_sl][ok])
        dst.append(ids[b_sl][ok])
        wt.append(w[ok])
    S, T = n_nodes, n_nodes + 1

    def attach(p, pf):
        mine = cells_containing_point(p, cells.resolution) - i0
        good = [tuple(c) for c in mine if 0 <= c[0] < shape[0] and 0 <= c[1] < shape[1] and trav[tuple(c)]]
        if penalty is None:
            good = [c for c in good if not blocked[c]]
        if good:
            return [ids[c] for c in good], 0.0
        cand = trav & ~blocked
        if not cand.any():
            cand = trav
        pos = np.argwhere(cand)
        dist = np.linalg.norm((pos + i0 + 0.5) * res - pf, axis=1)
        k = int(np.argmin(dist))
        return [ids[tuple(pos[k])]], float(dist[k])

    s_nodes, s_shift = attach(x, xf)
    t_nodes, t_shift = attach(y, yf)
    pos_all = np.argwhere(trav)
    cen_all = (pos_all + i0 + 0.5) * res
    for nd in s_nodes:
        src.append(np.array([S]))
        dst.append(np.array([nd]))
        wt.append(np.array([float(norm.float_eval(cen_all[nd] - xf)[0]) + 1e-15]))
    for nd in t_nodes:
        src.append(np.array([nd]))
        dst.append(np.array([T]))
        wt.append(np.array([float(norm.float_eval(yf - cen_all[nd])[0]) + 1e-15]))
    graph = csr_matrix((np.concatenate(wt), (np.concatenate(src), np.concatenate(dst))), shape=(n_nodes + 2, n_nodes + 2))
    dist, pred = dijkstra(graph, directed=True, indices=S, return_predecessors=True, min_only=False)
    if not np.isfinite(dist[T]):
        return None
    chain = []
    v = pred[T]
    while v != S and v >= 0:
        chain.append(v)
        v = pred[v]
    chain.reverse()
    return pos_all[chain] + i0, s_shift, t_shift


def _pull(cells, pts: list, fixed_ok: Callable[[int], bool]) -> list:
    """Greedy string pulling; a shortcut over two or more edges must be obstacle-free."""
    n = len(pts)
    keep = [0]
    i = 0
    while i < n - 1:
        best = i + 1
        k = 2
        bad = None
        while i + k < n:
            if _segment_free(cells, pts[i], pts[i + k]):
                best = i + k
                k *= 2
            else:
                bad = i + k
                break
        if bad is None and best < n - 1 and _segment_free(cells, pts[i], pts[n - 1]):
            best = n - 1
        elif bad is None and best < n - 1:
            bad = n - 1
        if bad is not None:
            lo, hi = best, bad
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if _segment_free(cells, pts[i], pts[mid]):
                    lo = mid
                else:
                    hi = mid
            best = lo
        keep.append(best)
        i = best
    return keep


def _pull_through(cells, pts: list, limit: int = 64) -> list:
    """Shortcuts that may cross cells but never add intersection components.

    Undoes the refraction the inside cost causes at thin obstacles.  Paths
    longer than ``limit`` vertices are returned unchanged (quadratic cost).
    """
    if len(pts) > limit:
        return pts
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1:
            chord = count_intersections(PolyPath([pts[i], pts[j]]), cells).count
            if chord <= count_intersections(PolyPath(pts[i : j + 1]), cells).count:
                break
            j -= 1
        out.append(pts[j])
        i = j
    return out


def witness_path(
    cells,
    x,
    y,
    delta,
    norm: Norm = EUCLIDEAN,
    *,
    margin=None,
    bounds=None,
    crossing_penalty=None,
    inside_cost: float = 10.0,
    level: int | None = None,
) -> WitnessReport | NoPath:
    """Shortest corridor path from ``x`` to ``y`` around (or through) the cells.

    The search runs over 8-connected cell centers inside the closed
    ``margin``-neighborhood of segment ``xy`` (default ``max(delta, 4 res)``),
    optionally clipped to the box ``bounds``.  Diagonal steps never pass a
    corner of a blocked cell.  Without ``crossing_penalty`` blocked cells are
    impassable; with it they may be entered at that extra cost per entry,
    and every step taken inside them costs ``1 + inside_cost`` times its length.
    String pulling afterwards takes obstacle-free shortcuts, and in penalty
    mode also shortcuts through cells that keep the intersection count.
    """
    x, y = as_point(x), as_point(y)
    delta = to_number(delta)
    if delta <= 0:
        raise PermeabilityError("delta must be positive")
    if len(x) != 2 or len(y) != 2:
        raise PermeabilityError("witness paths are searched in the plane")
    level = _level(cells) if level is None else level
    res = cells.resolution
    if x == y:
        return _report(PolyPath([x]), cells, x, y, delta, norm, level)
    margin = max(float(delta), 4 * float(res)) if margin is None else float(margin)
    if margin < 2 * float(res):
        raise PermeabilityError("corridor margin is narrower than two cells")
    found = _grid_search(cells, x, y, margin, norm, bounds, crossing_penalty, inside_cost)
    if found is None:
        return NoPath("the corridor complement separates the endpoints", delta, level)
    chain, s_shift, t_shift = found
    if is_exact(res):
        centers = [tuple(Fraction(2 * int(c) + 1, 2) * res for c in row) for row in chain]
    else:
        centers = [tuple((int(c) + 0.5) * float(res) for c in row) for row in chain]
    pts = [x] + centers + [y]
    for _ in range(2):
        keep = _pull(cells, pts, lambda i: True)
        pts = [pts[i] for i in keep]
    if crossing_penalty is not None and count_intersections(PolyPath(pts), cells).count:
        pts = _pull_through(cells, pts)
    path = PolyPath(pts)
    return _report(path, cells, x, y, delta, norm, level, start_shift=s_shift, end_shift=t_shift,
                   info={"margin": margin, "grid_vertices": len(chain)})


def profile(
    cells_for_level: Callable[[int], object],
    levels: Iterable[int],
    x,
    y,
    delta,
    search: Callable | None = None,
    workers: int = 1,
    **kwargs,
) -> ProfileSeries:
    """Run one witness search per obstacle level (in parallel when ``workers > 1``)."""
    levels = tuple(sorted(levels))
    search = search or witness_path

    def run(lv):
        rep = search(cells_for_level(lv), x, y, delta, **kwargs)
        if getattr(rep, "level", lv) != lv:
            rep = replace(rep, level=lv)
        return rep

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = tuple(pool.map(run, levels))
    else:
        reports = tuple(run(lv) for lv in levels)
    return ProfileSeries(as_point(x), as_point(y), to_number(delta), levels, reports)


# ---------------------------------------------------------------- repair


@dataclass(frozen=True)
class RepairReport:
    path: PolyPath
    original_length: float
    length: float
    covered_length: float  # total length of the replaced subpaths
    inside_length: float  # length of the original path inside cells
    delta: float
    C: float
    clusters: int
    repaired: int
    complete: bool
    components_after: int

    @property
    def added_length(self) -> float:
        return self.length - self.original_length

    @property
    def bound(self) -> float:
        return self.original_length + self.C * self.covered_length + self.delta

    @property
    def within_bound(self) -> bool:
        return self.length <= self.bound * (1 + 1e-12)


def _window_labels(cells, lo, hi):
    res = float(cells.resolution)
    i0 = np.floor(np.asarray(lo) / res).astype(np.int64) - 2
    i1 = np.ceil(np.asarray(hi) / res).astype(np.int64) + 2
    shape = tuple(int(v) for v in i1 - i0 + 1)
    gi, gj = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    idx = np.stack([gi.ravel() + i0[0], gj.ravel() + i0[1]], axis=1)
    mask = cells.cells_blocked(idx).reshape(shape)
    labels, _ = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    return labels, i0


def _free_point_near(path: PolyPath, cum, cells, arc: float, limit: float, step: float):
    """Walk from arc position ``arc`` toward ``limit`` until the point leaves the cells."""
    direction = 1.0 if limit > arc else -1.0
    a = arc
    while (a - limit) * direction < 0:
        p = _point_at(path, _arc_to_param(cum, a))
        if not cells.contains_point(p):
            return a, p
        a += direction * step
    p = _point_at(path, _arc_to_param(cum, limit))
    return (limit, p) if not cells.contains_point(p) else (None, None)


def repair_path(path: PolyPath, cells, C=1.0, delta=0.0, norm: Norm = EUCLIDEAN, *, window=None) -> RepairReport:
    """Replace the subpaths that meet cells by local detours.

    Components of ``path ∩ cells`` lying in one connected obstacle cluster are
    handled together: the subpath from just before the first contact to just
    after the last is replaced by a corridor shortest path avoiding all cells,
    searched within ``C |b - a| / 2`` of the chord.  Clusters that admit no
    detour are left in place and the result is flagged incomplete.
    """
    C, delta = float(C), float(delta)
    if C < 1:
        raise PermeabilityError("C must be at least 1")
    for end in (path.vertices[0], path.vertices[-1]):
        if cells.contains_point(end):
            raise PermeabilityError("path endpoints must lie outside the cells")
    orig_len = float(path_length(path, norm))
    inter = count_intersections(path, cells)
    if inter.count == 0:
        return RepairReport(path, orig_len, orig_len, 0.0, 0.0, delta, C, 0, 0, True, 0)
    res = float(cells.resolution)
    cum = _arc_lengths(path)
    arr = path.as_array()
    reach = C * float(cum[-1]) / 2 + 4 * res
    wlo, whi = arr.min(axis=0) - reach, arr.max(axis=0) + reach
    if window is not None:
        wlo, whi = np.maximum(wlo, window[0]), np.minimum(whi, window[1])
    labels, i0 = _window_labels(cells, wlo, whi)

    # group components by the obstacle cluster they touch
    spans: dict[int, list] = {}
    inside = 0.0
    for s, e in inter.components:
        p = _point_at(path, s)
        lab = 0
        for c in cells_containing_point(p, cells.resolution):
            rel = c - i0
            if 0 <= rel[0] < labels.shape[0] and 0 <= rel[1] < labels.shape[1] and labels[tuple(rel)]:
                lab = int(labels[tuple(rel)])
                break
        a0, a1 = _param_to_arc(cum, s), _param_to_arc(cum, e)
        inside += a1 - a0
        span = spans.setdefault(lab if lab else -len(spans) - 1, [a0, a1])
        span[0], span[1] = min(span[0], a0), max(span[1], a1)
    ranges = sorted(spans.values())
    merged = []
    for a0, a1 in ranges:
        if merged and a0 <= merged[-1][1] + 2 * res:
            merged[-1][1] = max(merged[-1][1], a1)
        else:
            merged.append([a0, a1])

    pieces = []
    covered = 0.0
    cursor_arc, cursor_pt = 0.0, path.vertices[0]
    repaired = 0
    complete = True
    for k, (a0, a1) in enumerate(merged):
        prev_end = cursor_arc
        next_start = merged[k + 1][0] if k + 1 < len(merged) else float(cum[-1])
        sa, pa = _free_point_near(path, cum, cells, a0 - res, prev_end, res / 2)
        sb, pb = _free_point_near(path, cum, cells, a1 + res, next_start, res / 2)
        if sa is None or sb is None:
            complete = False
            continue
        pa, pb = tuple(float(c) for c in pa), tuple(float(c) for c in pb)
        chord = math.dist(pa, pb)
        detour = witness_path(cells, pa, pb, max(delta, res), norm, margin=C * chord / 2 + 4 * res)
        ok = detour.found and detour.intersection_components == 0
        if ok and float(detour.length) <= C * float(norm(sub(pb, pa))) + delta / max(1, len(merged)) + 4 * res:
            pieces.append(_subpath(path, cum, cursor_arc, cursor_pt, sa, pa))
            pieces.append(list(detour.path.vertices))
            cursor_arc, cursor_pt = sb, pb
            covered += sb - sa
            repaired += 1
        else:
            complete = False
    pieces.append(_subpath(path, cum, cursor_arc, cursor_pt, float(cum[-1]), path.vertices[-1]))
    verts = [v for part in pieces for v in part]
    out = PolyPath(verts)
    after = count_intersections(out, cells).count
    return RepairReport(out, orig_len, float(path_length(out, norm)), covered, inside, delta, C,
                        len(merged), repaired, complete and after == 0, after)


def _subpath(path: PolyPath, cum, a0: float, p0, a1: float, p1) -> list:
    inner = [path.vertices[i] for i in range(len(cum)) if a0 < cum[i] < a1]
    return [p0] + inner + [p1]


def gap_midline_path(x, y, n_max: int) -> PolyPath:
    """Axis-parallel path ``x -> (c, x2) -> (c, y2) -> y`` with ``c`` on a gap midline.

    ``c`` is the midpoint of a gap of ``F_n`` (``n <= n_max``) closest to the
    midpoint of ``x1, y1``; vertical travel then avoids every vertical side of
    the SVC squares up to that level.
    """
    from .obstacles import svc_level

    x, y = as_point(x), as_point(y)
    target = (x[0] + y[0]) / 2
    mids = []
    for n in range(1, n_max + 1):
        mids += [(a + b) / 2 for a, b in svc_level(n).gaps()]
    if not mids:
        raise PermeabilityError("level 0 has no gaps")
    c = min(mids, key=lambda m: (abs(m - target), m))
    return PolyPath([x, (c, x[1]), (c, y[1]), y])


# ---------------------------------------------------------------- cone witness


def cone_witness(cells, x, y, delta, attempts: int = 64, norm: Norm = EUCLIDEAN, seed: int = 0) -> WitnessReport | NotFound:
    """Two-segment path ``x -> (x+y)/2 + z -> y`` through a mid-disk point ``z``.

    The first candidate is ``z = 0``; further candidates are drawn uniformly
    from the disk of radius ``delta`` orthogonal to ``y - x``.
    """
    x, y = as_point(x), as_point(y)
    if x == y:
        raise PermeabilityError("endpoints coincide")
    if len(x) != 2:
        raise PermeabilityError("cone witnesses are implemented in the plane")
    delta = to_number(delta)
    if delta <= 0:
        raise PermeabilityError("delta must be positive")
    xf, yf = np.array([float(c) for c in x]), np.array([float(c) for c in y])
    d = yf - xf
    nrm = np.array([-d[1], d[0]]) / np.linalg.norm(d)
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0.0], rng.uniform(-float(delta), float(delta), max(0, attempts - 1))])
    mid = (xf + yf) / 2
    best = None
    for k, s in enumerate(offsets[:attempts]):
        apex = tuple(float(v) for v in mid + s * nrm)
        path = PolyPath([x, apex, y])
        comps = count_intersections(path, cells).count
        if comps == 0:
            rep = _report(path, cells, x, y, delta, norm, _level(cells), info={"attempt": k + 1, "offset": float(s)})
            bound = math.sqrt(float(np.dot(d, d)) + 4 * float(delta) ** 2)
            if float(path_length(path)) <= bound * (1 + 1e-12):
                return rep
        best = comps if best is None else min(best, comps)
    return NotFound(attempts, delta, best)


# ---------------------------------------------------------------- angle diagnostic


def angle_excess(path: PolyPath, z, eps, norm: Norm = EUCLIDEAN) -> float:
    """Total norm length of the segments turned more than ``eps`` away from ``0 -> z``."""
    z = as_point(z)
    if all(c == 0 for c in z):
        raise PermeabilityError("direction z must be nonzero")
    ref = Segment(tuple(0 for _ in z), z)
    eps = float(eps)
    total = 0.0
    for s in path.segments():
        if s.degenerate:
            continue
        if segment_angle(s, ref) > eps:
            total += float(norm(s.direction))
    return total


# ---------------------------------------------------------------- planar finite type witness


def _line_hits(cells, a: np.ndarray, b: np.ndarray):
    """Merged float parameter intervals of segment ``ab`` inside the cells."""
    res = float(cells.resolution)
    cand = segment_cells(a, b, cells.resolution)
    cand = cand[cells.cells_blocked(cand)]
    if not len(cand):
        return []
    lo, hi = cand * res, (cand + 1) * res
    d = b - a
    t0 = np.zeros(len(cand))
    t1 = np.ones(len(cand))
    for k in range(2):
        if abs(d[k]) < 1e-300:
            out = (a[k] < lo[:, k]) | (a[k] > hi[:, k])
            t1[out] = -1.0
            continue
        u0 = (lo[:, k] - a[k]) / d[k]
        u1 = (hi[:, k] - a[k]) / d[k]
        t0 = np.maximum(t0, np.minimum(u0, u1))
        t1 = np.minimum(t1, np.maximum(u0, u1))
    ok = t0 <= t1
    ivs = sorted(zip(t0[ok].tolist(), t1[ok].tolist()))
    merged = []
    for s, e in ivs:
        if merged and s <= merged[-1][1] + 1e-12:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return merged


def finite_type_witness_2d(
    ifs: IFSSystem,
    closure: NeighborClosure,
    H: IntersectionSet,
    loop,
    x,
    y,
    delta,
    cells: CellSet,
    c: int | None = None,
    norm: Norm = EUCLIDEAN,
) -> WitnessReport:
    """Spliced path along a parallel line, detouring around scaled loops.

    ``loop`` is a LoopResult (or a CoverSequence, whose second surrounding
    loop is used); ``cells`` is the K-approximation the line is scanned
    against.  Steps: pick the parallel line within ``delta/4`` of ``xy`` with
    the least measured intersection; cover each intersection interval by a
    disk; select the pieces of matching scale meeting each disk; replace the
    line inside the union of the scaled loop regions by the union's outer
    boundary.  ``info`` records the budget, the pieces and the contact bound.
    """
    from .covers import CoverSequence, _pieces_near, surrounding_loop

    if ifs.dim != 2:
        raise PermeabilityError("the planar witness needs d = 2")
    if not closure.stabilized:
        raise PermeabilityError("neighbor closure did not stabilize; finite type is not established")
    if not H.certified:
        raise PermeabilityError("intersection points are not certified finite")
    if isinstance(loop, CoverSequence):
        c = loop.c if c is None else c
        loop = surrounding_loop(loop, n=min(2, len(loop.layers)))
    if c is None:
        raise PermeabilityError("piece-count constant c is required with a bare loop")
    x, y = as_point(x), as_point(y)
    delta = float(to_number(delta))
    for p in (x, y):
        if cells.contains_point(p):
            raise PermeabilityError("endpoints must lie off the K-approximation")
    xf, yf = np.array([float(v) for v in x]), np.array([float(v) for v in y])
    d = yf - xf
    L = float(np.linalg.norm(d))
    if L == 0:
        return _report(PolyPath([x]), cells, x, y, delta, norm)
    u = d / L
    nrm = np.array([-u[1], u[0]])
    res = float(cells.resolution)
    budget = delta / (4 * c * loop.length)

    # (1) parallel line scan
    steps = int(math.floor(delta / 4 / res))
    offsets = sorted((k * res for k in range(-steps, steps + 1)), key=lambda t: (abs(t), t))
    best = None
    for t in offsets:
        a, b = xf + t * nrm, yf + t * nrm
        hits = _line_hits(cells, a, b)
        meas = sum(e - s for s, e in hits) * L
        key = (round(meas, 12), len(hits), abs(t))
        if best is None or key < best[0]:
            best = (key, t, hits)
        if meas == 0:
            break
    (_, t, hits) = best
    a, b = xf + t * nrm, yf + t * nrm
    measure = sum(e - s for s, e in hits) * L

    # (2)-(3) disks and piece selection
    poly0 = shapely.Polygon(loop.loop.as_array())
    regions, words, disks = [], [], []
    R = float(ifs.radius)
    for s, e in hits:
        center = a + (s + e) / 2 * d
        r = max((e - s) * L / 2, res / 2)
        disks.append((center, r))
        rho = min(r / R, 0.999)
        sel = _pieces_near(ifs, rho, center[None, :], np.zeros(1), r)
        words.append(sel)
        for w in sel:
            pc = pieces_from_maps([_compose(ifs, w)])
            A, tt = pc.a[0], pc.t[0]
            regions.append(shapely.affinity.affine_transform(poly0, [A[0, 0], A[0, 1], A[1, 0], A[1, 1], tt[0], tt[1]]))

    # (4) splice along the outer boundary of the region union
    line = shapely.LineString([a, b])
    verts = [x, tuple(a)]
    if regions:
        union = shapely.unary_union(regions)
        parts = list(union.geoms) if hasattr(union, "geoms") else [union]
        spans = []
        for P in parts:
            inter = line.intersection(P)
            if inter.is_empty:
                continue
            ds = [line.project(shapely.Point(q)) for g in getattr(inter, "geoms", [inter]) for q in g.coords]
            spans.append([min(ds), max(ds), P])
        spans.sort(key=lambda sp: sp[0])
        # merge interleaved components into one region with the line piece between them
        merged = []
        for s0, s1, P in spans:
            if merged and s0 <= merged[-1][1]:
                prev = merged[-1]
                bridge = shapely.LineString([line.interpolate(prev[0]).coords[0], line.interpolate(max(s1, prev[1])).coords[0]]).buffer(1e-12)
                prev[2] = shapely.unary_union([prev[2], P, bridge])
                prev[1] = max(prev[1], s1)
            else:
                merged.append([s0, s1, P])
        for s0, s1, P in merged:
            if hasattr(P, "geoms"):
                P = max(P.geoms, key=lambda g: g.area)
            ring = shapely.LinearRing(P.exterior.coords)
            pin, pout = line.interpolate(s0), line.interpolate(s1)
            r0, r1 = ring.project(pin), ring.project(pout)
            arc = _ring_arc(ring, r0, r1)
            verts += [tuple(pin.coords[0])] + arc + [tuple(pout.coords[0])]
    verts += [tuple(b), y]
    path = PolyPath(verts)
    contact_bound = sum(len(ws) for ws in words) * len(H)
    info = {
        "offset": t,
        "line_measure": measure,
        "budget": budget,
        "admissible": measure < budget,
        "disks": len(disks),
        "pieces": sum(len(ws) for ws in words),
        "contact_bound": contact_bound,
        "words": [[list(w) for w in ws] for ws in words],
        "loop_length": loop.length,
    }
    return _report(path, cells, x, y, delta, norm, _level(cells), info=info)


def _compose(ifs: IFSSystem, word):
    from .ifs import compose

    return compose(ifs, word)


def _ring_arc(ring, r0: float, r1: float) -> list:
    """Shorter boundary arc of a closed ring between two projected positions."""
    total = ring.length
    lo, hi = min(r0, r1), max(r0, r1)
    inner = shapely.ops.substring(ring, lo, hi)
    outer_len = total - (hi - lo)
    if hi - lo <= outer_len:
        pts = list(inner.coords)
    else:
        a = list(shapely.ops.substring(ring, hi, total).coords)
        b = list(shapely.ops.substring(ring, 0, lo).coords)
        pts = a + b[1:]
        pts = pts[::-1]  # runs from lo backwards to hi
    if r0 > r1:
        pts = pts[::-1]
    return [tuple(p) for p in pts]
