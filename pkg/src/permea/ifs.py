"""Similarities, iterated function systems, words and cell approximations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geom import (
    CellSet,
    GeometryError,
    Number,
    Point,
    as_point,
    exact_sqrt,
    is_exact,
    rasterize_balls,
    to_number,
)

Word = tuple  # 1-based map indices; () is the empty word


class IFSError(GeometryError):
    """Invalid IFS input (bad JSON layout, non-contractive map, bad index)."""


# ---------------------------------------------------------------- similarities


def _rotation(deg, dim: int):
    """Rotation about the origin (d=2) or about the z-axis (d=3)."""
    deg = to_number(deg)
    quarter = deg / 90
    if is_exact(quarter) and quarter.denominator == 1:
        c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][int(quarter) % 4]
        c, s = Fraction(c), Fraction(s)
    else:
        rad = math.radians(float(deg))
        c, s = math.cos(rad), math.sin(rad)
    if dim == 2:
        return ((c, -s), (s, c))
    one, zero = Fraction(1), Fraction(0)
    return ((c, -s, zero), (s, c, zero), (zero, zero, one))


def _matmul(a, b):
    n, m, p = len(a), len(b), len(b[0])
    return tuple(tuple(sum(a[i][k] * b[k][j] for k in range(m)) for j in range(p)) for i in range(n))


def _matvec(a, v):
    return tuple(sum(a[i][k] * v[k] for k in range(len(v))) for i in range(len(a)))


def _transpose(a):
    return tuple(zip(*a))


def _identity(dim: int):
    return tuple(tuple(Fraction(int(i == j)) for j in range(dim)) for i in range(dim))


def _solve(a, b):
    """Gaussian elimination that keeps Fractions exact."""
    n = len(a)
    m = [list(row) + [b[i]] for i, row in enumerate(a)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        if m[piv][col] == 0:
            raise IFSError("singular system")
        m[col], m[piv] = m[piv], m[col]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col] / m[col][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    return tuple(m[i][n] / m[i][i] for i in range(n))


@dataclass(frozen=True)
class Similarity:
    """``x -> ratio * Q x + translation`` with ``Q`` orthogonal."""

    ratio: Number
    orth: tuple
    translation: Point

    def __post_init__(self):
        r = to_number(self.ratio)
        if r <= 0:
            raise IFSError("similarity ratio must be positive")
        object.__setattr__(self, "ratio", r)
        object.__setattr__(self, "orth", tuple(tuple(to_number(v) for v in row) for row in self.orth))
        object.__setattr__(self, "translation", as_point(self.translation))
        if len(self.orth) != len(self.translation):
            raise IFSError("orthogonal part and translation differ in dimension")

    @classmethod
    def identity(cls, dim: int = 2) -> "Similarity":
        return cls(Fraction(1), _identity(dim), (Fraction(0),) * dim)

    @classmethod
    def from_params(cls, ratio, rotation_deg=0, reflect: bool = False, translate=(0, 0), matrix=None):
        t = as_point(translate)
        dim = len(t)
        if dim not in (2, 3):
            raise IFSError("similarities are supported in d=2 and d=3")
        if matrix is not None:
            q = tuple(tuple(to_number(v) for v in row) for row in matrix)
            if len(q) != dim:
                raise IFSError("matrix dimension does not match translation")
        else:
            q = _rotation(rotation_deg, dim)
        if reflect:
            flip = _identity(dim)
            flip = tuple(tuple(-v if (i == 1 and j == 1) else v for j, v in enumerate(row)) for i, row in enumerate(flip))
            q = _matmul(q, flip)
        return cls(to_number(ratio), q, t)

    @property
    def dim(self) -> int:
        return len(self.translation)

    @property
    def exact(self) -> bool:
        vals = [self.ratio, *self.translation, *(v for row in self.orth for v in row)]
        return all(is_exact(v) for v in vals)

    def __call__(self, p) -> Point:
        q = _matvec(self.orth, as_point(p))
        return tuple(self.ratio * a + t for a, t in zip(q, self.translation))

    def compose(self, other: "Similarity") -> "Similarity":
        """``self ∘ other``."""
        q = _matmul(self.orth, other.orth)
        t = self(other.translation)
        return Similarity(self.ratio * other.ratio, q, t)

    def inverse(self) -> "Similarity":
        qt = _transpose(self.orth)
        inv_r = 1 / self.ratio
        t = tuple(-inv_r * v for v in _matvec(qt, self.translation))
        return Similarity(inv_r, qt, t)

    def fixed_point(self) -> Point:
        if self.ratio == 1 and self.orth == _identity(self.dim):
            raise IFSError("a translation has no fixed point")
        a = tuple(
            tuple((1 if i == j else 0) - self.ratio * self.orth[i][j] for j in range(self.dim))
            for i in range(self.dim)
        )
        return _solve(a, self.translation)

    def affine(self) -> tuple[np.ndarray, np.ndarray]:
        """Float linear part ``ratio * Q`` and translation."""
        a = float(self.ratio) * np.array(self.orth, dtype=float)
        return a, np.array(self.translation, dtype=float)

    def is_identity(self, tol: float = 0.0) -> bool:
        if self.exact and tol == 0:
            return self.ratio == 1 and self.orth == _identity(self.dim) and all(v == 0 for v in self.translation)
        a, t = self.affine()
        return bool(np.abs(a - np.eye(self.dim)).max() <= tol and np.abs(t).max() <= tol)

    def key(self, quantum: float) -> tuple:
        """Hashable identity: exact when rational, rounded to ``quantum`` otherwise."""
        vals = [self.ratio, *(v for row in self.orth for v in row), *self.translation]
        return tuple(v if is_exact(v) else ("~", round(float(v) / quantum)) for v in vals)

    def to_json(self) -> dict:
        return {
            "ratio": _num_json(self.ratio),
            "matrix": [[_num_json(v) for v in row] for row in self.orth],
            "translate": [_num_json(v) for v in self.translation],
        }


def _num_json(v):
    if is_exact(v):
        return str(v) if v.denominator != 1 else int(v)
    return float(v)


# ---------------------------------------------------------------- IFS


@dataclass(frozen=True)
class IFSSystem:
    """Ordered list of contracting similarities ``f_1, ..., f_m``."""

    maps: tuple
    name: str = ""

    def __post_init__(self):
        maps = tuple(self.maps)
        object.__setattr__(self, "maps", maps)
        if len(maps) < 2:
            raise IFSError("an IFS needs at least two maps")
        if len({f.dim for f in maps}) != 1:
            raise IFSError("maps mix dimensions")
        for k, f in enumerate(maps, 1):
            if not f.ratio < 1:
                raise IFSError(f"map {k} is not contractive (ratio {f.ratio})")

    @property
    def m(self) -> int:
        return len(self.maps)

    @property
    def dim(self) -> int:
        return self.maps[0].dim

    @property
    def ratios(self) -> tuple:
        return tuple(f.ratio for f in self.maps)

    @property
    def r_min(self) -> Number:
        return min(self.ratios)

    @property
    def r_max(self) -> Number:
        return max(self.ratios)

    @property
    def exact(self) -> bool:
        return all(f.exact for f in self.maps)

    @cached_property
    def ball(self) -> tuple[Point, Number]:
        """Forward-invariant ball ``B(c, R)`` with ``R = max |f_i(c) - c| / (1 - r_max)``.

        Two centers are tried, the fixed point of ``f_1`` and the centroid of
        all fixed points; the smaller ball wins.  Invariance ``f_i(B) ⊆ B`` is
        then checked (exactly for rational maps).
        """
        fps = [f.fixed_point() for f in self.maps]
        centroid = tuple(sum(p[k] for p in fps) / len(fps) for k in range(self.dim))
        best = None
        for c in (fps[0], centroid):
            spread = max(_norm_sq(tuple(a - b for a, b in zip(f(c), c))) for f in self.maps)
            rad = _sqrt_up(spread) / (1 - self.r_max)
            if best is None or rad < best[1]:
                best = (c, rad)
        c, rad = best
        if rad == 0:
            rad = Fraction(1)
        for f in self.maps:
            off = _norm_sq(tuple(a - b for a, b in zip(f(c), c)))
            slack = (1 - f.ratio) * rad
            if off > slack * slack * (1 + (0 if is_exact(off) and is_exact(slack) else 1e-12)):
                raise IFSError("bounding ball is not forward invariant")
        return c, rad

    @property
    def center(self) -> Point:
        return self.ball[0]

    @property
    def radius(self) -> Number:
        return self.ball[1]

    @cached_property
    def diameter_bounds(self) -> tuple[float, float]:
        """Lower and upper bounds on ``diam(K)``.

        The lower bound uses fixed points (which lie in ``K``); the upper
        bound uses the level-``L`` ball cover.
        """
        fps = np.array([[float(c) for c in f.fixed_point()] for f in self.maps])
        diff = fps[:, None, :] - fps[None, :, :]
        lower = float(np.sqrt((diff ** 2).sum(-1)).max())
        centers, radii, _ = piece_balls(self, float(self.r_max) ** 4)
        # diameter of the point cloud via its convex hull extremes
        if len(centers) > 2000:
            centers = centers[:: max(1, len(centers) // 2000)]
        d2 = ((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        upper = float(np.sqrt(d2.max())) + 2 * float(radii.max())
        return lower, max(lower, upper)

    @cached_property
    def affines(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.stack([f.affine()[0] for f in self.maps])
        t = np.stack([f.affine()[1] for f in self.maps])
        return a, t

    def to_json(self) -> dict:
        return {"dim": self.dim, "name": self.name, "maps": [f.to_json() for f in self.maps]}


def _norm_sq(v) -> Number:
    return sum(x * x for x in v)


def _sqrt_up(q: Number) -> Number:
    """Rational upper bound for ``sqrt(q)``, exact on perfect squares."""
    r = exact_sqrt(q)
    if is_exact(r):
        return r
    if is_exact(q):
        up = Fraction(r) * (1 + Fraction(1, 2 ** 40))
        while up * up < q:
            up *= 1 + Fraction(1, 2 ** 40)
        return up
    return r * (1 + 1e-12)


def ifs_from_dict(data: dict, name: str = "") -> IFSSystem:
    try:
        dim = int(data["dim"])
        raw = data["maps"]
    except (KeyError, TypeError, ValueError) as exc:
        raise IFSError(f"IFS JSON needs 'dim' and 'maps': {exc}") from exc
    if dim not in (2, 3):
        raise IFSError("dim must be 2 or 3")
    maps = []
    for k, spec in enumerate(raw, 1):
        try:
            f = Similarity.from_params(
                spec["ratio"],
                spec.get("rotation_deg", 0),
                bool(spec.get("reflect", False)),
                spec["translate"],
                spec.get("matrix"),
            )
        except (KeyError, TypeError) as exc:
            raise IFSError(f"map {k}: missing field {exc}") from exc
        if f.dim != dim:
            raise IFSError(f"map {k}: translation has dimension {f.dim}, expected {dim}")
        maps.append(f)
    return IFSSystem(tuple(maps), name or str(data.get("name", "")))


def load_ifs(path) -> IFSSystem:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IFSError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return ifs_from_dict(data, Path(path).stem)


# ---------------------------------------------------------------- words


def compose(ifs: IFSSystem, word: Sequence[int]) -> Similarity:
    """``f_{i_1} ∘ ... ∘ f_{i_k}``; the empty word gives the identity."""
    out = Similarity.identity(ifs.dim)
    for i in word:
        if not 1 <= i <= ifs.m:
            raise IFSError(f"word index {i} out of range 1..{ifs.m}")
        out = out.compose(ifs.maps[i - 1])
    return out


def word_ratio(ifs: IFSSystem, word: Sequence[int]) -> Number:
    r = Fraction(1)
    for i in word:
        r = r * ifs.maps[i - 1].ratio
    return r


def curtail(ifs: IFSSystem, rho) -> list:
    """Prefix-free words cut at the first ratio in ``(r_min*rho, rho]``."""
    rho = to_number(rho)
    if not 0 < rho < 1:
        raise IFSError("rho must lie in (0, 1)")
    out = []
    stack = [((), Fraction(1))]
    while stack:
        w, r = stack.pop()
        for i in range(ifs.m, 0, -1):
            rr = r * ifs.maps[i - 1].ratio
            if rr <= rho:
                out.append(w + (i,))
            else:
                stack.append((w + (i,), rr))
    return sorted(out)


# ---------------------------------------------------------------- vectorized pieces


@dataclass
class Pieces:
    """Float affine maps ``x -> A x + t`` for a batch of words."""

    a: np.ndarray  # (N, d, d)
    t: np.ndarray  # (N, d)
    sr: np.ndarray  # (N,)
    words: list | None = None

    def __len__(self) -> int:
        return len(self.sr)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Image of one point per piece (``pts`` has shape (d,) or (N, d))."""
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            return self.a @ pts + self.t
        return np.einsum("nij,nj->ni", self.a, pts) + self.t

    def children(self, ifs: IFSSystem, mask: np.ndarray | None = None) -> "Pieces":
        """Refine (the masked) pieces by one letter each."""
        fa, ft = ifs.affines
        sel = np.arange(len(self)) if mask is None else np.flatnonzero(mask)
        m = ifs.m
        a = np.einsum("nij,kjl->nkil", self.a[sel], fa).reshape(-1, self.a.shape[1], self.a.shape[2])
        t = (np.einsum("nij,kj->nki", self.a[sel], ft) + self.t[sel][:, None, :]).reshape(-1, self.t.shape[1])
        sr = (self.sr[sel][:, None] * np.array([float(r) for r in ifs.ratios])[None, :]).reshape(-1)
        words = None
        if self.words is not None:
            words = [self.words[s] + (i,) for s in sel for i in range(1, m + 1)]
        return Pieces(a, t, sr, words)

    def take(self, mask) -> "Pieces":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        words = None if self.words is None else [self.words[i] for i in idx]
        return Pieces(self.a[idx], self.t[idx], self.sr[idx], words)

    @staticmethod
    def concat(parts: list["Pieces"]) -> "Pieces":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("nothing to concatenate")
        words = None
        if all(p.words is not None for p in parts):
            words = [w for p in parts for w in p.words]
        return Pieces(
            np.concatenate([p.a for p in parts]),
            np.concatenate([p.t for p in parts]),
            np.concatenate([p.sr for p in parts]),
            words,
        )


def pieces_from_maps(maps: Iterable[Similarity], words=None) -> Pieces:
    maps = list(maps)
    a = np.stack([f.affine()[0] for f in maps])
    t = np.stack([f.affine()[1] for f in maps])
    sr = np.array([float(f.ratio) for f in maps])
    return Pieces(a, t, sr, list(words) if words is not None else None)


def curtailed_pieces(ifs: IFSSystem, rho: float, start: Pieces | None = None, keep=None, with_words=False) -> Pieces:
    """Refine ``start`` (default: the identity) down to curtailment scale ``rho``.

    ``keep`` is an optional predicate on a Pieces batch returning a boolean
    mask; pieces failing it are pruned before further refinement.
    """
    if start is None:
        start = pieces_from_maps([Similarity.identity(ifs.dim)], [()] if with_words else None)
    tol = 1 + 1e-12
    done, todo = [], start
    while len(todo):
        if keep is not None:
            todo = todo.take(keep(todo))
            if not len(todo):
                break
        fin = todo.sr <= rho * tol
        if fin.any():
            done.append(todo.take(fin))
        if fin.all():
            break
        todo = todo.children(ifs, ~fin)
    if not done:
        d = ifs.dim
        return Pieces(np.zeros((0, d, d)), np.zeros((0, d)), np.zeros(0), [] if with_words else None)
    return Pieces.concat(done)


def piece_balls(ifs: IFSSystem, rho: float, prefix: Sequence[int] = ()):
    """Centers, radii and pieces of ``f_w(ball)`` for ``w`` curtailed at ``rho``."""
    start = pieces_from_maps([compose(ifs, prefix)])
    pcs = curtailed_pieces(ifs, rho, start)
    c = np.array([float(v) for v in ifs.center])
    return pcs.apply(c), pcs.sr * float(ifs.radius), pcs


def approximate(ifs: IFSSystem, rho, resolution) -> CellSet:
    """Cells meeting ``f_w(ball)`` for some ``w`` in the curtailed word set.

    Every cell whose closed square meets one of the image balls is marked,
    so the result contains the attractor.
    """
    if ifs.dim != 2:
        raise IFSError("cell approximations are implemented for d=2")
    rho_f = float(to_number(rho))
    if not 0 < rho_f < 1:
        raise IFSError("rho must lie in (0, 1)")
    res = to_number(resolution)
    if float(res) > rho_f * 2 * float(ifs.radius):
        raise IFSError("resolution is coarser than the curtailment scale")
    centers, radii, _ = piece_balls(ifs, rho_f)
    idx = rasterize_balls(centers, radii, res)
    return CellSet(res, idx, provenance=f"attractor:{ifs.name}")


def level_rho(ifs: IFSSystem, level: int) -> float:
    return float(ifs.r_max) ** level


def level_resolution(ifs: IFSSystem, level: int, cells_per_radius: int = 2) -> Fraction:
    """Dyadic resolution about ``radius * r_max^level / cells_per_radius``."""
    target = float(ifs.radius) * level_rho(ifs, level) / cells_per_radius
    k = max(0, math.ceil(-math.log2(target)))
    return Fraction(1, 2 ** k)


def approximate_level(ifs: IFSSystem, level: int, cells_per_radius: int = 2) -> CellSet:
    cells = approximate(ifs, level_rho(ifs, level), level_resolution(ifs, level, cells_per_radius))
    object.__setattr__(cells, "level", level)
    return cells


def attractor_points(ifs: IFSSystem, level: int) -> np.ndarray:
    """Images of the first fixed point under all words of length ``level``."""
    fa, ft = ifs.affines
    pts = np.array([[float(c) for c in ifs.center]])
    for _ in range(level):
        pts = (np.einsum("kij,nj->kni", fa, pts) + ft[:, None, :]).reshape(-1, ifs.dim)
    return pts
