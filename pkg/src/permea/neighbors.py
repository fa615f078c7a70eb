"""Neighbor maps of a self-similar IFS, their closure, and intersection points.

A neighbor map relates two pieces ``f_u(K)`` and ``f_v(K)`` whose words start
with different letters: ``h = f_u^{-1} ∘ f_v``.  All overlap tests run on the
ball covers produced by :func:`permea.ifs.piece_balls`, which contain ``K``,
so a rejected map is certainly not a neighbor while an accepted one may be a
false positive at coarse levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geom import PAD, is_exact, to_number
from .ifs import (
    IFSError,
    IFSSystem,
    Pieces,
    Similarity,
    compose,
    piece_balls,
    pieces_from_maps,
)


@dataclass(frozen=True)
class NeighborMap:
    map: Similarity
    provenance: tuple  # (u, v) with map = f_u^{-1} ∘ f_v

    @property
    def ratio(self):
        return self.map.ratio

    def inverse(self) -> "NeighborMap":
        u, v = self.provenance
        return NeighborMap(self.map.inverse(), (v, u))


@dataclass(frozen=True)
class NeighborClosure:
    eps: float
    level: int
    maps: tuple
    status: str  # "stabilized" or "overflow"
    limit: int
    rounds: int
    suffix_bound: int
    round_counts: tuple = ()  # map count after the seed round and each expansion round

    @property
    def stabilized(self) -> bool:
        return self.status == "stabilized"

    def __len__(self) -> int:
        return len(self.maps)

    def keys(self, quantum: float) -> frozenset:
        return frozenset(h.map.key(quantum) for h in self.maps)


@dataclass(frozen=True)
class IntersectionSet:
    points: tuple  # float tuples
    radii: tuple
    status: str  # certified-finite, suspected-infinite, unknown
    frame: str
    extents: tuple = ()  # largest cluster extent per refinement level

    def __len__(self) -> int:
        return len(self.points)

    @property
    def certified(self) -> bool:
        return self.status == "certified-finite"

    def as_array(self) -> np.ndarray:
        return np.array(self.points, dtype=float).reshape(-1, 2 if not self.points else len(self.points[0]))


# ---------------------------------------------------------------- helpers


def suffix_bound(ifs: IFSSystem) -> int:
    """``ceil(log r_min / log r_max)``."""
    return max(1, math.ceil(math.log(float(ifs.r_min)) / math.log(float(ifs.r_max)) - 1e-12))


def dedup_quantum(ifs: IFSSystem) -> float:
    return 1e-9 * 2 * float(ifs.radius)


def _ratio_ok(ifs: IFSSystem, r) -> bool:
    lo, hi = ifs.r_min, 1 / ifs.r_min
    if is_exact(r) and is_exact(lo):
        return lo <= r <= hi
    r = float(r)
    return float(lo) * (1 - 1e-12) <= r <= float(hi) * (1 + 1e-12)


def _is_identity(ifs: IFSSystem, g: Similarity) -> bool:
    return g.is_identity(0.0 if g.exact else dedup_quantum(ifs))


class _BallCover:
    """Level-``L`` ball cover of ``K`` with a KD-tree on the centers."""

    def __init__(self, ifs: IFSSystem, level: int):
        self.ifs = ifs
        self.level = level
        self.centers, self.radii, _ = piece_balls(ifs, float(ifs.r_max) ** level)
        self.tree = cKDTree(self.centers)
        self.rmax = float(self.radii.max())
        self.lo = self.centers.min(axis=0)
        self.hi = self.centers.max(axis=0)
        # a coarser cover rejects far-apart maps cheaply; both covers contain K
        self.coarse = _BallCover(ifs, level - 3) if level > 4 else None

    def overlaps(self, g: Similarity, eps: float) -> bool:
        """Conservative test of ``[K]_eps ∩ g([K]_eps) ≠ ∅``."""
        if self.coarse is not None and not self.coarse.overlaps(g, eps):
            return False
        a, t = g.affine()
        s = float(g.ratio)
        img = self.centers @ a.T + t
        reach = self.rmax + eps + s * (self.rmax + eps)
        pad = PAD * (1 + reach)
        keep = np.all((img >= self.lo - reach - pad) & (img <= self.hi + reach + pad), axis=1)
        img = img[keep]
        if not len(img):
            return False
        if np.ptp(self.radii) == 0:
            for start in range(0, len(img), 8192):
                d, _ = self.tree.query(img[start:start + 8192], k=1, distance_upper_bound=reach + pad)
                if np.isfinite(d).any():
                    return True
            return False
        radii = self.radii[keep]
        hits = self.tree.query_ball_point(img, reach + pad)
        for b, near in enumerate(hits):
            if not near:
                continue
            near = np.asarray(near)
            d = np.linalg.norm(self.centers[near] - img[b], axis=1)
            if np.any(d <= self.radii[near] + eps + s * (radii[b] + eps) + pad):
                return True
        return False


# ---------------------------------------------------------------- closure


def neighbor_closure(
    ifs: IFSSystem,
    eps=0.0,
    level: int = 6,
    max_maps: int = 5000,
    max_rounds: int = 500,
    cover: _BallCover | None = None,
) -> NeighborClosure:
    """Neighbor maps with overlapping ``eps``-fattened copies, closed under expansion.

    Candidates ``f_a^{-1} ∘ h ∘ f_b`` (``|b| ≤ C``) are generated from every
    accepted map ``h``, starting from the identity, and kept when their ratio
    lies in ``[r_min, 1/r_min]`` and the fattened copies overlap.  Inverses of
    accepted maps are added as well.  A stabilized result contains every
    neighbor map that passes the test at this level.
    """
    eps = float(to_number(eps))
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if max_maps < 1:
        raise ValueError("max_maps must be positive")
    cover = cover or _BallCover(ifs, level)
    C = suffix_bound(ifs)
    q = dedup_quantum(ifs)
    inv = [f.inverse() for f in ifs.maps]
    suffixes = [()]
    for k in range(1, C + 1):
        suffixes += list(product(range(1, ifs.m + 1), repeat=k))
    suffix_maps = {w: compose(ifs, w) for w in suffixes}

    found: dict = {}
    order: list[NeighborMap] = []

    def consider(g: Similarity, prov) -> NeighborMap | None:
        if not _ratio_ok(ifs, g.ratio) or _is_identity(ifs, g):
            return None
        key = g.key(q)
        if key in found:
            return None
        if not cover.overlaps(g, eps):
            found[key] = None
            return None
        nm = NeighborMap(g, prov)
        found[key] = nm
        order.append(nm)
        return nm

    frontier: list[NeighborMap] = []
    # expanding the identity: f_a^{-1} ∘ f_b with b starting with a different letter
    for a in range(1, ifs.m + 1):
        for w in suffixes:
            if not w or w[0] == a:
                continue
            nm = consider(inv[a - 1].compose(suffix_maps[w]), ((a,), w))
            if nm:
                frontier.append(nm)
    rounds = 0
    status = "stabilized"
    counts = [len(order)]
    while frontier:
        rounds += 1
        if len(order) > max_maps or rounds > max_rounds:
            status = "overflow"
            break
        nxt = []
        for h in frontier:
            u, v = h.provenance
            cands = [(h.map.inverse(), (v, u))]
            for a in range(1, ifs.m + 1):
                left = inv[a - 1].compose(h.map)
                for w in suffixes:
                    cands.append((left.compose(suffix_maps[w]), (u + (a,), v + w)))
            for g, prov in cands:
                nm = consider(g, prov)
                if nm:
                    nxt.append(nm)
        frontier = nxt
        counts.append(len(order))
    if len(order) > max_maps:
        status = "overflow"
    return NeighborClosure(eps, level, tuple(order), status, max_maps, rounds, C, tuple(counts))


def closure_is_closed(ifs: IFSSystem, closure: NeighborClosure) -> bool:
    """One more expansion round adds no map."""
    cover = _BallCover(ifs, closure.level)
    q = dedup_quantum(ifs)
    keys = closure.keys(q)
    C = closure.suffix_bound
    suffixes = [()]
    for k in range(1, C + 1):
        suffixes += list(product(range(1, ifs.m + 1), repeat=k))
    for h in closure.maps:
        cands = [h.map.inverse()]
        for a in range(1, ifs.m + 1):
            left = ifs.maps[a - 1].inverse().compose(h.map)
            cands += [left.compose(compose(ifs, w)) for w in suffixes]
        for g in cands:
            if not _ratio_ok(ifs, g.ratio) or _is_identity(ifs, g) or g.key(q) in keys:
                continue
            if cover.overlaps(g, closure.eps):
                return False
    return True


@dataclass(frozen=True)
class EpsilonSweep:
    candidates: tuple
    counts: tuple
    chosen: float
    heuristic: bool = True


def epsilon_sweep(ifs: IFSSystem, candidates: Iterable, level: int = 6, max_maps: int = 5000, cap=None) -> EpsilonSweep:
    """Largest candidate ``eps`` (optionally below ``cap``) whose closure equals the ``eps = 0`` closure.

    This is a heuristic stand-in for the limit of the fattened closures; the
    result records every candidate's map count.
    """
    cover = _BallCover(ifs, level)
    q = dedup_quantum(ifs)
    base = neighbor_closure(ifs, 0.0, level, max_maps, cover=cover)
    base_keys = base.keys(q)
    cands = sorted({float(to_number(e)) for e in candidates} | {0.0})
    counts, chosen = [], 0.0
    for e in cands:
        cl = base if e == 0 else neighbor_closure(ifs, e, level, max_maps, cover=cover)
        counts.append(len(cl))
        if cl.stabilized and cl.keys(q) == base_keys and (cap is None or e < cap):
            chosen = max(chosen, e)
    return EpsilonSweep(tuple(cands), tuple(counts), chosen)


# ---------------------------------------------------------------- intersections of two copies


@dataclass
class _PairLevel:
    level: int
    clusters: list  # (center, radius)
    pairs: int


def _cluster(centers: np.ndarray, radii: np.ndarray):
    """Connected components of overlapping balls; returns (center, radius, extent) per cluster."""
    if not len(centers):
        return []
    rmax = float(radii.max())
    tree = cKDTree(centers)
    pairs = tree.query_pairs(2 * rmax * (1 + PAD) + PAD, output_type="ndarray")
    if len(pairs):
        d = np.linalg.norm(centers[pairs[:, 0]] - centers[pairs[:, 1]], axis=1)
        pairs = pairs[d <= (radii[pairs[:, 0]] + radii[pairs[:, 1]]) * (1 + PAD) + PAD]
    n = len(centers)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) else coo_matrix((n, n))
    k, labels = connected_components(g, directed=False)
    out = []
    for lab in range(k):
        sel = labels == lab
        lo = (centers[sel] - radii[sel, None]).min(axis=0)
        hi = (centers[sel] + radii[sel, None]).max(axis=0)
        mid = (lo + hi) / 2
        rad = float(np.max(np.linalg.norm(centers[sel] - mid, axis=1) + radii[sel]))
        out.append((mid, rad, float(np.linalg.norm(hi - lo))))
    out.sort(key=lambda c: tuple(np.round(c[0], 12)))
    return out


def refine_copies(
    ifs: IFSSystem,
    g1: Similarity,
    g2: Similarity,
    levels: int = 40,
    target: float = 1e-7,
    max_pairs: int = 200_000,
    start_level: int = 0,
    record: Iterable[int] | None = None,
) -> tuple[str, list[_PairLevel]]:
    """Refine overlapping ball pairs of ``g1(K)`` and ``g2(K)`` level by level.

    Returns a status (``certified-finite``, ``suspected-infinite``, ``unknown``)
    and the cluster history.  With ``record`` given, the loop runs exactly
    over those levels and only reports them.
    """
    c = np.array([float(v) for v in ifs.center])
    R = float(ifs.radius)
    fa, ft = ifs.affines
    fr = np.array([float(r) for r in ifs.ratios])
    p1, p2 = pieces_from_maps([g1]), pieces_from_maps([g2])
    a1, t1, s1 = p1.a, p1.t, p1.sr
    a2, t2, s2 = p2.a, p2.t, p2.sr
    history: list[_PairLevel] = []
    record = sorted(set(record)) if record is not None else None
    last = record[-1] if record else levels

    def children(a, t, s):
        ca = np.einsum("nij,kjl->nkil", a, fa).reshape(-1, *a.shape[1:])
        ct = (np.einsum("nij,kj->nki", a, ft) + t[:, None, :]).reshape(-1, t.shape[1])
        cs = (s[:, None] * fr[None, :]).reshape(-1)
        return ca, ct, cs

    m = ifs.m
    for lev in range(start_level, last + 1):
        x1 = np.einsum("nij,j->ni", a1, c) + t1
        x2 = np.einsum("nij,j->ni", a2, c) + t2
        r1, r2 = s1 * R, s2 * R
        keep = np.linalg.norm(x1 - x2, axis=1) <= (r1 + r2) * (1 + PAD) + PAD
        a1, t1, s1, a2, t2, s2 = a1[keep], t1[keep], s1[keep], a2[keep], t2[keep], s2[keep]
        x1, x2, r1, r2 = x1[keep], x2[keep], r1[keep], r2[keep]
        if record is None or lev in record:
            balls = np.vstack([x1, x2])
            rads = np.concatenate([r1, r2])
            if len(balls):
                key = np.round(np.hstack([balls, rads[:, None]]) / (1e-12 + 1e-9 * R), 0)
                _, uniq = np.unique(key, axis=0, return_index=True)
                balls, rads = balls[uniq], rads[uniq]
            history.append(_PairLevel(lev, _cluster(balls, rads), int(keep.sum())))
        if not len(s1):
            if record is not None:
                history += [_PairLevel(l, [], 0) for l in record if l > lev]
            return "certified-finite", history
        if record is None:
            cl = history[-1].clusters
            if max(r for _, r, _ in cl) <= target and _disjoint(cl):
                return "certified-finite", history
            if _non_shrinking(history):
                return "suspected-infinite", history
        if lev == last:
            break
        n = len(s1)
        if n * m * m > max_pairs:
            return "unknown", history
        # refine the larger side of every pair (both when equal)
        b1 = s1 >= s2 * (1 - 1e-12)
        b2 = s2 >= s1 * (1 - 1e-12)
        parts = []
        for sel, ref1, ref2 in ((b1 & b2, True, True), (b1 & ~b2, True, False), (~b1 & b2, False, True)):
            idx = np.flatnonzero(sel)
            if not len(idx):
                continue
            side1 = (a1[idx], t1[idx], s1[idx])
            side2 = (a2[idx], t2[idx], s2[idx])
            if ref1 and ref2:
                side1 = _expand_each(*children(*side1), m)
                side2 = _tile_each(*children(*side2), m)
            elif ref1:
                side1 = children(*side1)
                side2 = _expand_each(*side2, m)
            else:
                side1 = _expand_each(*side1, m)
                side2 = children(*side2)
            parts.append(side1 + side2)
        a1 = np.concatenate([p[0] for p in parts])
        t1 = np.concatenate([p[1] for p in parts])
        s1 = np.concatenate([p[2] for p in parts])
        a2 = np.concatenate([p[3] for p in parts])
        t2 = np.concatenate([p[4] for p in parts])
        s2 = np.concatenate([p[5] for p in parts])
    if record is not None:
        return "recorded", history
    return "unknown", history


def _expand_each(a, t, s, m):
    """Repeat each row ``m`` times (pairs with refined partner children)."""
    return np.repeat(a, m, axis=0), np.repeat(t, m, axis=0), np.repeat(s, m)


def _tile_each(a, t, s, m):
    """Children arrive grouped per parent (parent-major); pair every child of
    side 1 with every child of side 2 within the same parent pair."""
    n = len(s) // m
    d = a.shape[1]
    a = np.repeat(a.reshape(n, 1, m, d, d), m, axis=1).reshape(-1, d, d)
    t = np.repeat(t.reshape(n, 1, m, d), m, axis=1).reshape(-1, d)
    s = np.repeat(s.reshape(n, 1, m), m, axis=1).reshape(-1)
    return a, t, s


def _disjoint(clusters) -> bool:
    for i in range(len(clusters)):
        for j in range(i + 1, len(clusters)):
            if np.linalg.norm(clusters[i][0] - clusters[j][0]) <= clusters[i][1] + clusters[j][1]:
                return False
    return True


def _non_shrinking(history: list[_PairLevel], window: int = 3, ratio: float = 0.8) -> bool:
    if len(history) < window + 1:
        return False
    ext = [max(e for _, _, e in h.clusters) for h in history[-(window + 1):]]
    return all(b > ratio * a for a, b in zip(ext, ext[1:]))


# ---------------------------------------------------------------- intersection points


def intersection_points(
    ifs: IFSSystem,
    closure: NeighborClosure,
    target_radius: float = 1e-7,
    frame: str = "pieces",
    max_pairs: int = 200_000,
) -> IntersectionSet:
    """Enclosures of the intersection points.

    ``frame="pieces"`` returns the points shared by distinct first-level
    pieces, ``f_i(K) ∩ f_j(K)`` for ``i < j`` (pairs not linked by any map in
    the closure are skipped).  ``frame="neighbors"`` returns ``K ∩ h(K)``
    over the maps ``h`` of the closure, i.e. the same points seen from the
    normalized frame of one piece.
    """
    if not closure.stabilized:
        raise IFSError("closure did not stabilize")
    if frame not in ("pieces", "neighbors"):
        raise ValueError("frame must be 'pieces' or 'neighbors'")
    if not closure.maps:
        return IntersectionSet((), (), "certified-finite", frame)
    jobs = []
    if frame == "pieces":
        for i in range(1, ifs.m + 1):
            for j in range(i + 1, ifs.m + 1):
                jobs.append((ifs.maps[i - 1], ifs.maps[j - 1]))
    else:
        ident = Similarity.identity(ifs.dim)
        jobs = [(ident, h.map) for h in closure.maps]
    clusters, statuses, extents = [], [], []
    for g1, g2 in jobs:
        status, hist = refine_copies(ifs, g1, g2, target=target_radius, max_pairs=max_pairs)
        statuses.append(status)
        if hist:
            clusters += hist[-1].clusters
            if len(hist) > 1:
                extents.append(tuple(max((e for _, _, e in h.clusters), default=0.0) for h in hist))
    if any(s == "suspected-infinite" for s in statuses):
        status = "suspected-infinite"
    elif all(s == "certified-finite" for s in statuses):
        status = "certified-finite"
    else:
        status = "unknown"
    merged = _merge(clusters)
    if status == "certified-finite" and not _disjoint(merged):
        status = "unknown"
    pts = tuple(tuple(float(v) for v in c) for c, _, _ in merged)
    rads = tuple(float(r) for _, r, _ in merged)
    longest = max(extents, key=len) if extents else ()
    return IntersectionSet(pts, rads, status, frame, longest)


def _merge(clusters):
    """Union clusters whose enclosures overlap (the same point seen twice)."""
    out = []
    for c, r, e in sorted(clusters, key=lambda t: tuple(np.round(t[0], 12))):
        for k, (c2, r2, e2) in enumerate(out):
            if np.linalg.norm(c - c2) <= r + r2:
                lo = np.minimum(c - r, c2 - r2)
                hi = np.maximum(c + r, c2 + r2)
                mid = (lo + hi) / 2
                out[k] = (mid, float(np.linalg.norm(hi - lo)) / 2, max(e, e2))
                break
        else:
            out.append((c, r, e))
    return out


# ---------------------------------------------------------------- pairwise screening


@dataclass(frozen=True)
class PairVerdict:
    pair: tuple
    verdict: str  # finite, suspected-infinite, unknown
    clusters: int | None
    extents: tuple
    counts: tuple

    def label(self) -> str:
        return f"finite({self.clusters})" if self.verdict == "finite" else self.verdict


def pairwise_finiteness(ifs: IFSSystem, levels=range(3, 7), max_pairs: int = 400_000) -> dict:
    """Cluster count and extent of ``f_i(K) ∩ f_j(K)`` covers across ``levels``.

    ``finite(k)``: ``k`` clusters at every level with extents shrinking.
    ``suspected-infinite``: the largest extent stays within a factor
    ``[0.8, 1.2]`` from the first level to the last.  Otherwise ``unknown``.
    Both verdicts are evidence from finite covers, not proofs.
    """
    levels = sorted(levels)
    out = {}
    for i in range(1, ifs.m + 1):
        for j in range(i + 1, ifs.m + 1):
            # pieces of f_i(K) at level L are words of length L starting with i
            status, hist = refine_copies(
                ifs, ifs.maps[i - 1], ifs.maps[j - 1], start_level=1, record=[l for l in levels], max_pairs=max_pairs
            )
            counts = tuple(len(h.clusters) for h in hist)
            extents = tuple(max((e for _, _, e in h.clusters), default=0.0) for h in hist)
            if status == "unknown":
                verdict, k = "unknown", None
            elif counts and counts[-1] == 0:
                verdict, k = "finite", 0
            elif len(counts) < 2 or len(hist) < len(levels):
                verdict, k = "unknown", None
            else:
                ratio = extents[-1] / extents[0] if extents[0] else 0.0
                if 0.8 <= ratio <= 1.2:
                    verdict, k = "suspected-infinite", None
                elif len(set(counts)) == 1 and ratio < 0.8:
                    verdict, k = "finite", counts[-1]
                else:
                    verdict, k = "unknown", None
            out[(i, j)] = PairVerdict((i, j), verdict, k, extents, counts)
    return out
