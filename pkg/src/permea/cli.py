"""Command-line front end: ``permea analyze|path|carpet|render``.

Every command writes one JSON report (or one SVG) at the end of the run.
Output is deterministic: floats are rounded to 12 significant digits,
rationals are written as ``"p/q"`` strings and timing is only included on
request.
"""

from __future__ import annotations

import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

import click
import jsonschema
import numpy as np
import shapely

from .covers import (
    CoverError,
    box_counts,
    box_dimension,
    cover_sequence,
    default_piece_constant,
    select_delta_k,
    surrounding_loop,
)
from .geom import EUCLIDEAN, CellSet, GeometryError, Norm, as_point, is_exact, to_number
from .ifs import IFSError, IFSSystem, approximate_level, attractor_points, ifs_from_dict
from .neighbors import epsilon_sweep, intersection_points, neighbor_closure, pairwise_finiteness
from .obstacles import (
    ImplicitCells,
    bmc_cells,
    bmc_pattern,
    bmc_window_check,
    cantor_level,
    empty_pattern,
    full_pattern,
    min_crossing_variation,
    pattern_from_dict,
    product_cells,
    svc_gap_width,
    svc_level,
    theta_squares,
)
from .permeability import ProfileSeries, profile

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_INPUT, EXIT_INCONCLUSIVE, EXIT_NO_PATH = 0, 1, 2, 3
EPS_CANDIDATES = (0.05, 0.1, 0.25, 0.5)
RENDER_CELL_LIMIT = 2_000_000


class InputError(click.ClickException):
    exit_code = EXIT_INPUT


# ---------------------------------------------------------------- JSON


def _float(x: float):
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    v = float(f"{x:.12g}")
    return 0.0 if v == 0 else v


def to_jsonable(value):
    """Recursively convert report values to JSON types with the output rounding."""
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, (Fraction, int, np.integer)):
        q = Fraction(int(value)) if not isinstance(value, Fraction) else value
        return int(q) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"
    if isinstance(value, (float, np.floating)):
        return _float(float(value))
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [to_jsonable(v) for v in value]
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(report: dict) -> str:
    return json.dumps(to_jsonable(report), indent=2, ensure_ascii=False) + "\n"


def report_schema() -> dict:
    return json.loads(resources.files("permea").joinpath("data/report.schema.json").read_text())


def validate_report(report: dict) -> None:
    jsonschema.validate(report, report_schema())


def load_report(text: str) -> dict:
    """Parse and schema-check a report produced by any command."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        validate_report(data)
    except jsonschema.ValidationError as exc:
        raise InputError(f"report does not match the schema: {exc.message}") from exc
    return data


def parse_number(value):
    """Inverse of the report encoding for a single number."""
    if isinstance(value, str):
        if value in ("inf", "-inf", "nan"):
            return float(value)
        return Fraction(value)
    return value


def _read_json(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _write(text: str, out: str | None) -> None:
    if out is None:
        click.echo(text, nl=False)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {out}: {exc.strerror}") from exc


def _workers() -> int:
    raw = os.environ.get("PERMEA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InputError(f"PERMEA_THREADS must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------- builtins


def builtin_names() -> list[str]:
    root = resources.files("permea").joinpath("data")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json") and p.name != "report.schema.json")


def _builtin(name: str) -> dict | None:
    res = resources.files("permea").joinpath(f"data/{name}.json")
    if name == "report.schema" or not res.is_file():
        return None
    return json.loads(res.read_text())


def _load_source(spec: str) -> tuple[str, dict]:
    """Resolve a builtin name or a JSON file path to ``(name, data)``."""
    data = _builtin(spec)
    if data is not None:
        return spec, data
    path = Path(spec)
    if not path.exists():
        raise InputError(f"{spec!r} is neither a file nor a builtin ({', '.join(builtin_names())})")
    return path.stem, _read_json(path)


def _kind(data: dict) -> str:
    if "kind" in data:
        return str(data["kind"])
    if "maps" in data:
        return "ifs"
    if "cells" in data and "n" in data:
        return "bmc"
    raise InputError("cannot tell what kind of input this is (no 'kind', 'maps' or pattern fields)")


def _ifs(data: dict, name: str) -> IFSSystem:
    try:
        return ifs_from_dict(data, name)
    except (IFSError, GeometryError, ValueError) as exc:
        raise InputError(str(exc)) from exc


# ---------------------------------------------------------------- analyze


def analyze_report(ifs: IFSSystem, eps="auto", level: int | None = None, max_maps: int = 5000, timing: bool = False) -> tuple[dict, int]:
    """Finite-type analysis of an IFS as a report dict and exit code."""
    level = level if level is not None else (6 if ifs.m <= 4 else 5)
    clock: dict = {}
    warnings: list[str] = []

    def tick(key, t0):
        clock[key] = time.perf_counter() - t0

    t0 = time.perf_counter()
    closure = neighbor_closure(ifs, 0.0, level, max_maps)
    tick("closure", t0)
    report: dict = {
        "schema_version": SCHEMA_VERSION,
        "command": "analyze",
        "input": {"name": ifs.name, "dim": ifs.dim, "maps": ifs.m, "exact": all(is_exact(f.ratio) for f in ifs.maps)},
        "finite_type": {
            "status": closure.status,
            "maps": len(closure),
            "eps": 0.0,
            "level": level,
            "rounds": closure.rounds,
            "limit": closure.limit,
        },
        "pairwise": [],
        "intersection_points": None,
        "constants": None,
        "dimension": None,
        "warnings": warnings,
    }
    t0 = time.perf_counter()
    verdicts = pairwise_finiteness(ifs)
    tick("pairwise", t0)
    report["pairwise"] = [
        {"pair": list(pair), "verdict": v.verdict, "clusters": v.clusters} for pair, v in sorted(verdicts.items())
    ]
    infinite = [list(p) for p, v in sorted(verdicts.items()) if v.verdict == "suspected-infinite"]
    if infinite:
        warnings.append(f"pairwise intersections suspected infinite for {len(infinite)} pairs")

    code = EXIT_OK
    if not closure.stabilized:
        warnings.append(f"neighbor closure overflowed at {len(closure)} maps")
        code = EXIT_INCONCLUSIVE
    elif ifs.dim == 2:
        t0 = time.perf_counter()
        H = intersection_points(ifs, closure, frame="neighbors")
        tick("intersection_points", t0)
        report["intersection_points"] = {"status": H.status, "frame": H.frame, "count": len(H), "points": [list(p) for p in H.points]}
        if H.certified:
            t0 = time.perf_counter()
            if eps == "auto":
                sweep = epsilon_sweep(ifs, EPS_CANDIDATES, level=level, max_maps=max_maps)
                eps_used = sweep.chosen
            else:
                eps_used = float(eps)
            if eps_used <= 0:
                warnings.append("no positive eps keeps the closure unchanged; delta not selected")
            else:
                try:
                    choice = select_delta_k(ifs, closure, H, eps_used)
                except CoverError as exc:
                    warnings.append(f"delta selection failed: {exc}")
                else:
                    report["constants"] = {
                        "eps": eps_used,
                        "delta": choice.delta,
                        "k": choice.k,
                        "eta": choice.eta,
                        "c": default_piece_constant(ifs, H, choice.delta),
                    }
            tick("constants", t0)
        else:
            warnings.append(f"intersection points not certified finite ({H.status})")

    t0 = time.perf_counter()
    report["dimension"] = _dimension(ifs)
    tick("dimension", t0)
    if timing:
        report["timing"] = clock
    return report, code


def _dimension(ifs: IFSSystem) -> dict:
    r = max(float(f.ratio) for f in ifs.maps)
    lv = max(4, int(math.log(300_000) / math.log(ifs.m))) if ifs.m > 1 else 4
    pts = attractor_points(ifs, lv)
    scales = [r ** j for j in range(1, lv - 1)]
    est = box_dimension(box_counts(pts, scales))
    return {"value": est.value, "low": est.low, "high": est.high, "level": lv, "scales": list(est.scales), "counts": list(est.counts)}


# ---------------------------------------------------------------- path


@dataclass
class Obstacle:
    """An obstacle spec: what to rasterize at each level and the default run."""

    name: str
    kind: str
    data: dict
    defaults: dict = field(default_factory=dict)

    @classmethod
    def load(cls, spec: str) -> "Obstacle":
        name, data = _load_source(spec)
        kind = _kind(data)
        if kind not in ("ifs", "cantor-product", "svc-product", "theta-squares", "bmc"):
            raise InputError(f"unknown obstacle kind {kind!r}")
        ob = cls(str(data.get("name", name)), kind, data, dict(data.get("path", {})))
        ob.check()
        return ob

    def check(self) -> None:
        if self.kind == "ifs":
            self.ifs = _ifs(self.data, self.name)
            if self.ifs.dim != 2:
                raise InputError("path search is planar")
        elif self.kind == "bmc":
            pat = self.data.get("pattern", self.data)
            try:
                self.pattern = pattern_from_dict(pat, self.name)
            except GeometryError as exc:
                raise InputError(str(exc)) from exc

    def cells(self, level: int):
        if level < 0:
            raise InputError("levels must be nonnegative")
        if self.kind == "ifs":
            return approximate_level(self.ifs, level)
        if self.kind == "cantor-product":
            iv = cantor_level(level)
            return product_cells(iv, iv, Fraction(1, 3 ** (level + 1)))
        if self.kind == "svc-product":
            iv = svc_level(level)
            return product_cells(iv, iv, svc_gap_width(level) / 4 if level else Fraction(1, 16))
        if self.kind == "theta-squares":
            res = svc_gap_width(level) / 8 if level else Fraction(1, 32)
            window = self.data.get("window")
            return theta_squares(level, res, window=window)
        res = self.defaults.get("resolutions", {}).get(str(level))
        return bmc_cells(self.pattern, level, Fraction(res) if res is not None else None, int(self.data.get("copies", 1)))


def _point(text, what: str):
    if isinstance(text, (list, tuple)):
        parts = list(text)
    else:
        parts = [p for p in str(text).replace(";", ",").split(",") if p.strip()]
    try:
        pt = as_point([to_number(p) if not isinstance(p, str) else to_number(_num_literal(p)) for p in parts])
    except (GeometryError, TypeError, ValueError) as exc:
        raise InputError(f"bad {what} point {text!r}: {exc}") from exc
    if len(pt) != 2:
        raise InputError(f"{what} point must have two coordinates")
    return pt


def _num_literal(s: str):
    s = s.strip()
    try:
        return Fraction(s)
    except ValueError:
        return float(s)


def _levels(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    out = []
    try:
        for part in str(text).split(","):
            if ".." in part:
                a, b = part.split("..")
                out += range(int(a), int(b) + 1)
            elif part.strip():
                out.append(int(part))
    except ValueError:
        raise InputError(f"bad level list {text!r}; use e.g. 3..8 or 1,2,4") from None
    if not out:
        raise InputError("no levels given")
    return tuple(sorted(set(out)))


def _witness_json(rep) -> dict:
    if not rep.found:
        return {"level": rep.level, "found": False, "verdict": rep.verdict, "reason": getattr(rep, "reason", "")}
    return {
        "level": rep.level,
        "found": True,
        "verdict": rep.verdict,
        "length": float(rep.length),
        "distance": float(rep.distance),
        "excess": float(rep.excess),
        "components": rep.intersection_components,
        "start_shift": float(rep.start_shift),
        "end_shift": float(rep.end_shift),
        "path": [[float(v) for v in p] for p in rep.path.vertices],
    }


def path_report(
    ob: Obstacle,
    x,
    y,
    delta,
    levels: Sequence[int],
    norm: Norm = EUCLIDEAN,
    penalty: float | None = None,
    workers: int = 1,
) -> tuple[dict, ProfileSeries, int]:
    kw = {"norm": norm}
    if penalty is not None:
        kw["crossing_penalty"] = float(penalty)
    if "margin" in ob.defaults:
        kw["margin"] = float(to_number(ob.defaults["margin"]))
    if "bounds" in ob.defaults:
        kw["bounds"] = tuple(tuple(to_number(v) for v in p) for p in ob.defaults["bounds"])
    try:
        series = profile(ob.cells, levels, x, y, delta, workers=workers, **kw)
    except GeometryError as exc:
        raise InputError(str(exc)) from exc
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "path",
        "input": {
            "obstacle": ob.name,
            "kind": ob.kind,
            "from": list(x),
            "to": list(y),
            "delta": to_number(delta),
            "levels": list(series.levels),
            "norm": norm.name,
            "penalty": penalty,
        },
        "reports": [_witness_json(r) for r in series.reports],
        "all_blocked": series.all_blocked,
    }
    code = EXIT_NO_PATH if series.all_blocked else EXIT_OK
    return report, series, code


def _cells_in_box(cells, lo, hi) -> CellSet:
    res = float(cells.resolution)
    if isinstance(cells, CellSet):
        keep = np.all((cells.idx + 1) * res >= lo, axis=1) & np.all(cells.idx * res <= hi, axis=1)
        return CellSet(cells.resolution, cells.idx[keep], cells.provenance)
    i0 = np.floor(np.asarray(lo) / res).astype(np.int64) - 1
    i1 = np.ceil(np.asarray(hi) / res).astype(np.int64) + 1
    if int(np.prod(i1 - i0 + 1)) > RENDER_CELL_LIMIT:
        raise InputError("viewport holds too many cells to render; use fewer levels")
    gx, gy = np.meshgrid(np.arange(i0[0], i1[0] + 1), np.arange(i0[1], i1[1] + 1), indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return CellSet(cells.resolution, grid[cells.cells_blocked(grid)], cells.provenance)


def path_scene(ob: Obstacle, series: ProfileSeries) -> "RenderSpec":
    found = [r for r in series.reports if r.found]
    pts = [np.array([float(v) for v in p]) for p in (series.x, series.y)]
    for r in found:
        pts += list(r.path.as_array())
    pts = np.array(pts)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.1 * max(float((hi - lo).max()), 1e-3)
    lo, hi = lo - pad, hi + pad
    level = (found[-1].level if found else series.levels[-1])
    cells = _cells_in_box(ob.cells(level), lo, hi)
    layers = [Layer("cells", {"resolution": cells.resolution, "cells": cells.idx.tolist()}, {"fill": "#555555"})]
    for r in found:
        last = r is found[-1]
        layers.append(
            Layer(
                "path",
                {"points": r.path.as_array().tolist()},
                {"stroke": "#d62728" if last else "#1f77b4", "stroke_width": 2.0 if last else 1.0, "opacity": 1.0 if last else 0.5},
            )
        )
    layers.append(Layer("points", {"points": pts[:2].tolist(), "radius": 3.0}, {"fill": "#2ca02c"}))
    return RenderSpec((lo[0], lo[1], hi[0], hi[1]), layers)


# ---------------------------------------------------------------- carpet


def _pattern(spec: str):
    named = {"bmc": bmc_pattern, "full": full_pattern, "empty": empty_pattern}
    if spec in named:
        return named[spec]()
    name, data = _load_source(spec)
    try:
        return pattern_from_dict(data.get("pattern", data), name)
    except GeometryError as exc:
        raise InputError(str(exc)) from exc


def carpet_report(p, check_window: bool = True, crossing_level: int = 1, measure_levels=range(1, 5)) -> dict:
    if crossing_level < 1:
        raise InputError("crossing level must be at least 1")
    window = None
    if check_window:
        try:
            w = bmc_window_check(p)
        except GeometryError as exc:
            raise InputError(str(exc)) from exc
        window = {"passed": w.passed, "windows": w.windows, "failing": list(w.failing) if w.failing else None}
    cb = min_crossing_variation(p, crossing_level)
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "carpet",
        "pattern": {"name": p.name, "n": p.n, "m": p.m, "size": len(p)},
        "window": window,
        "measures": [{"level": l, "measure": p.measure(l)} for l in measure_levels],
        "crossing": {
            "level": cb.level,
            "bound": cb.value,
            "verdict": "blocked" if cb.blocked else ("positive" if cb.value > 0 else "zero"),
        },
    }


# ---------------------------------------------------------------- render


@dataclass
class Layer:
    """One drawing layer; ``kind`` is cells, path, loop, squares or points."""

    kind: str
    data: dict
    style: dict = field(default_factory=dict)


LAYER_KINDS = ("cells", "path", "loop", "squares", "points")
DEFAULT_STYLE = {
    "cells": {"fill": "#777777"},
    "path": {"stroke": "#1f77b4"},
    "loop": {"stroke": "#d62728"},
    "squares": {"fill": "#9ecae1", "stroke": "#3182bd", "opacity": 0.6},
    "points": {"fill": "#000000"},
}


@dataclass
class RenderSpec:
    viewport: tuple  # (x0, y0, x1, y1) in world coordinates
    layers: list
    size: tuple | None = None  # pixels; height follows the aspect ratio when omitted

    def __post_init__(self):
        x0, y0, x1, y1 = (float(v) for v in self.viewport)
        if not (x1 > x0 and y1 > y0):
            raise InputError("viewport must have positive width and height")
        self.viewport = (x0, y0, x1, y1)
        for layer in self.layers:
            if layer.kind not in LAYER_KINDS:
                raise InputError(f"unknown layer kind {layer.kind!r}")
        if self.size is None:
            w = 800.0
            self.size = (w, round(w * (y1 - y0) / (x1 - x0), 6))
        self.size = tuple(float(v) for v in self.size)

    @classmethod
    def from_dict(cls, data: dict) -> "RenderSpec":
        try:
            layers = [Layer(str(l["kind"]), dict(l.get("data", {})), dict(l.get("style", {}))) for l in data.get("layers", [])]
            return cls(tuple(data["viewport"]), layers, tuple(data["size"]) if data.get("size") else None)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad render spec: {exc}") from exc

    def transform(self, pts: np.ndarray) -> np.ndarray:
        x0, y0, x1, y1 = self.viewport
        w, h = self.size
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return np.column_stack([(pts[:, 0] - x0) * w / (x1 - x0), (y1 - pts[:, 1]) * h / (y1 - y0)])


def _fmt(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def _style_attrs(kind: str, style: dict) -> str:
    st = {**DEFAULT_STYLE[kind], **style}
    fill = st.get("fill", "none" if kind in ("path", "loop") else "#000000")
    parts = [f'fill="{fill}"']
    if "stroke" in st:
        parts.append(f'stroke="{st["stroke"]}"')
        parts.append(f'stroke-width="{_fmt(float(st.get("stroke_width", 1.0)))}"')
    if "opacity" in st:
        parts.append(f'opacity="{_fmt(float(st["opacity"]))}"')
    return " ".join(parts)


def _coords(spec: RenderSpec, pts) -> str:
    return " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in spec.transform(pts))


def _clipped(spec: RenderSpec, geom):
    x0, y0, x1, y1 = spec.viewport
    return shapely.clip_by_rect(geom, x0, y0, x1, y1)


def _parts(geom) -> list:
    if geom.is_empty:
        return []
    if hasattr(geom, "geoms"):
        out = []
        for g in geom.geoms:
            out += _parts(g)
        return out
    return [geom]


def _polygon_svg(spec: RenderSpec, poly) -> str:
    rings = [poly.exterior] + list(poly.interiors)
    d = " ".join("M " + _coords(spec, np.asarray(r.coords)[:-1]) + " Z" for r in rings)
    return f'<path d="{d}" fill-rule="evenodd"/>'


def _cell_runs(res: float, idx: np.ndarray) -> list[tuple]:
    """Merge cells into horizontal runs ``(i0, i1, j)``."""
    if not len(idx):
        return []
    order = np.lexsort((idx[:, 0], idx[:, 1]))
    idx = idx[order]
    runs = []
    start = prev = idx[0]
    for c in idx[1:]:
        if c[1] == prev[1] and c[0] == prev[0] + 1:
            prev = c
            continue
        runs.append((int(start[0]), int(prev[0]), int(start[1])))
        start = prev = c
    runs.append((int(start[0]), int(prev[0]), int(start[1])))
    return runs


def _layer_svg(spec: RenderSpec, layer: Layer) -> list[str]:
    x0, y0, x1, y1 = spec.viewport
    out = []
    if layer.kind == "cells":
        res = float(to_number(layer.data.get("resolution", 1)))
        idx = np.asarray(layer.data.get("cells", []), dtype=np.int64).reshape(-1, 2)
        for i0, i1, j in _cell_runs(res, idx):
            bx0, bx1 = max(i0 * res, x0), min((i1 + 1) * res, x1)
            by0, by1 = max(j * res, y0), min((j + 1) * res, y1)
            if bx1 <= bx0 or by1 <= by0:
                continue
            (px, py), (qx, qy) = spec.transform([[bx0, by1], [bx1, by0]])
            out.append(f'<rect x="{_fmt(px)}" y="{_fmt(py)}" width="{_fmt(qx - px)}" height="{_fmt(qy - py)}"/>')
    elif layer.kind == "squares":
        for b in layer.data.get("boxes", []):
            bx0, by0, bx1, by1 = (float(v) for v in b)
            bx0, bx1, by0, by1 = max(bx0, x0), min(bx1, x1), max(by0, y0), min(by1, y1)
            if bx1 <= bx0 or by1 <= by0:
                continue
            (px, py), (qx, qy) = spec.transform([[bx0, by1], [bx1, by0]])
            out.append(f'<rect x="{_fmt(px)}" y="{_fmt(py)}" width="{_fmt(qx - px)}" height="{_fmt(qy - py)}"/>')
        polys = [shapely.Polygon(np.asarray(q, dtype=float)) for q in layer.data.get("quads", [])]
        polys += [shapely.Polygon(rings[0], rings[1:]) for rings in layer.data.get("polygons", [])]
        for poly in polys:
            for part in _parts(_clipped(spec, poly)):
                if part.geom_type == "Polygon":
                    out.append(_polygon_svg(spec, part))
    elif layer.kind == "path":
        pts = np.asarray(layer.data.get("points", []), dtype=float).reshape(-1, 2)
        if len(pts) >= 2:
            for part in _parts(_clipped(spec, shapely.LineString(pts))):
                if part.geom_type == "LineString":
                    out.append(f'<polyline points="{_coords(spec, np.asarray(part.coords))}"/>')
    elif layer.kind == "loop":
        pts = np.asarray(layer.data.get("points", []), dtype=float).reshape(-1, 2)
        if len(pts) >= 3:
            for part in _parts(_clipped(spec, shapely.Polygon(pts).exterior)):
                if part.geom_type == "LineString":
                    out.append(f'<polyline points="{_coords(spec, np.asarray(part.coords))}"/>')
    else:
        r = float(layer.data.get("radius", 2.0))
        pts = np.asarray(layer.data.get("points", []), dtype=float).reshape(-1, 2)
        inside = (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        for px, py in spec.transform(pts[inside]):
            out.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{_fmt(r)}"/>')
    return out


def render_svg(spec: RenderSpec) -> str:
    """SVG 1.1 document, layers drawn in list order (later layers on top)."""
    w, h = spec.size
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_fmt(w)}" height="{_fmt(h)}" '
        f'viewBox="0 0 {_fmt(w)} {_fmt(h)}">',
    ]
    for k, layer in enumerate(spec.layers):
        lines.append(f'<g id="layer-{k}-{layer.kind}" {_style_attrs(layer.kind, layer.style)}>')
        lines += _layer_svg(spec, layer)
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def triangle_loop_scene(n: int = 2, level: int = 6) -> RenderSpec:
    """Sierpinski triangle cells, the region bounded by the loop around ``U_n``, the loop and ``H``."""
    _, data = _load_source("sierpinski-triangle")
    ifs = _ifs(data, "sierpinski-triangle")
    closure = neighbor_closure(ifs, 0.0, 6)
    H = intersection_points(ifs, closure, frame="neighbors")
    choice = select_delta_k(ifs, closure, H, 0.25)
    seq = cover_sequence(ifs, closure, H, choice.delta, choice.k, n)
    cells = approximate_level(ifs, level)
    loop = surrounding_loop(seq, n, cells=cells)
    ring = loop.loop.as_array()
    lo, hi = ring.min(axis=0) - 0.05, ring.max(axis=0) + 0.05
    region = [
        [np.asarray(p.exterior.coords)[:-1].tolist()] + [np.asarray(r.coords)[:-1].tolist() for r in p.interiors]
        for p in _parts(loop.polygon)
    ]
    layers = [
        Layer("squares", {"polygons": region}, {}),
        Layer("cells", {"resolution": cells.resolution, "cells": cells.idx.tolist()}, {"fill": "#555555"}),
        Layer("loop", {"points": ring[:-1].tolist()}, {"stroke_width": 1.5}),
        Layer("points", {"points": seq.H.tolist(), "radius": 3.0}, {"fill": "#2ca02c"}),
    ]
    return RenderSpec((lo[0], lo[1], hi[0], hi[1]), layers)


SCENES = {"triangle-loop": triangle_loop_scene}


def _report_scene(report: dict) -> RenderSpec:
    if report.get("command") != "path":
        raise InputError("only path reports can be rendered")
    found = [r for r in report["reports"] if r["found"]]
    ends = [[float(parse_number(v)) for v in report["input"][k]] for k in ("from", "to")]
    pts = np.array(ends + [p for r in found for p in r["path"]], dtype=float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.1 * max(float((hi - lo).max()), 1e-3)
    layers = [Layer("path", {"points": r["path"]}, {"opacity": 0.5 + 0.5 * (r is found[-1])}) for r in found]
    layers.append(Layer("points", {"points": ends, "radius": 3.0}, {"fill": "#2ca02c"}))
    return RenderSpec((lo[0] - pad, lo[1] - pad, hi[0] + pad, hi[1] + pad), layers)


# ---------------------------------------------------------------- commands


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Permeability analysis of fractal obstacles."""


@cli.command()
@click.argument("source")
@click.option("--eps", default="auto", show_default=True, help="Fattening for the delta selection, or 'auto'.")
@click.option("--level", type=int, default=None, help="Ball-cover level of the closure test (default 6, 5 above 4 maps).")
@click.option("--max-maps", type=int, default=5000, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--timing", is_flag=True, help="Include wall-clock timings (breaks byte-identical output).")
def analyze(source, eps, level, max_maps, out, timing):
    """Finite-type analysis of an IFS file or builtin."""
    name, data = _load_source(source)
    ifs = _ifs(data, str(data.get("name", name)))
    if eps != "auto":
        try:
            if float(eps) < 0:
                raise ValueError
        except ValueError:
            raise InputError(f"--eps must be 'auto' or a nonnegative number, got {eps!r}") from None
    report, code = analyze_report(ifs, eps, level, max_maps, timing)
    _write(dumps(report), out)
    return code


@cli.command()
@click.argument("obstacle")
@click.option("--from", "from_", default=None, help="Start point 'x,y'.")
@click.option("--to", default=None, help="End point 'x,y'.")
@click.option("--delta", default=None, help="Allowed excess over the norm distance.")
@click.option("--levels", default=None, help="Obstacle levels, e.g. 3..8 or 1,2.")
@click.option("--norm", default="euclidean", show_default=True)
@click.option("--penalty", default=None, help="Crossing penalty; 'none' forbids crossing.")
@click.option("--svg", type=click.Path(dir_okay=False), default=None, help="Also write an SVG of cells and paths.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def path(obstacle, from_, to, delta, levels, norm, penalty, svg, out):
    """Witness paths through an obstacle, one per level."""
    ob = Obstacle.load(obstacle)
    d = ob.defaults
    missing = [k for k, v in (("--from", from_ or d.get("from")), ("--to", to or d.get("to")), ("--delta", delta or d.get("delta")), ("--levels", levels or d.get("levels"))) if v is None]
    if missing:
        raise InputError(f"missing {', '.join(missing)} (no defaults for this obstacle)")
    x = _point(from_ if from_ is not None else d["from"], "--from")
    y = _point(to if to is not None else d["to"], "--to")
    try:
        dl = to_number(_num_literal(delta) if delta is not None else d["delta"])
        nm = Norm.parse(norm)
    except (GeometryError, ValueError, TypeError) as exc:
        raise InputError(str(exc)) from exc
    if dl < 0:
        raise InputError("--delta must be nonnegative")
    lv = _levels(levels if levels is not None else d["levels"])
    if penalty is None:
        pen = d.get("penalty")
    elif penalty.lower() == "none":
        pen = None
    else:
        try:
            pen = float(penalty)
        except ValueError:
            raise InputError(f"bad --penalty {penalty!r}") from None
    report, series, code = path_report(ob, x, y, dl, lv, nm, pen, _workers())
    if svg is not None:
        _write(render_svg(path_scene(ob, series)), svg)
    _write(dumps(report), out)
    return code


@cli.command()
@click.option("--pattern", default="bmc", show_default=True, help="Builtin (bmc, full, empty) or pattern JSON file.")
@click.option("--check-window/--no-check-window", default=True, show_default=True)
@click.option("--crossing-level", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def carpet(pattern, check_window, crossing_level, out):
    """Combinatorics of a Bedford-McMullen digit pattern."""
    report = carpet_report(_pattern(pattern), check_window, crossing_level)
    _write(dumps(report), out)
    return EXIT_OK


@cli.command()
@click.argument("source")
@click.option("--svg", type=click.Path(dir_okay=False), default=None, help="Output file (stdout when omitted).")
def render(source, svg):
    """SVG of a render spec, a path report, or a builtin scene."""
    if source in SCENES:
        spec = SCENES[source]()
    else:
        _, data = _load_source(source)
        spec = _report_scene(load_report(json.dumps(data))) if "schema_version" in data else RenderSpec.from_dict(data)
    _write(render_svg(spec), svg)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    try:
        code = cli.main(args=list(argv) if argv is not None else None, prog_name="permea", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_INPUT
    except click.ClickException as exc:
        exc.show()
        return EXIT_INPUT
    except (IFSError, GeometryError) as exc:
        click.echo(f"Error: {exc}", err=True)
        return EXIT_INPUT
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
