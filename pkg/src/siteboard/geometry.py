"""Planar geometry kernel and parcel data model.

All coordinates live in a single projected metric frame. Polygon rings are
stored explicitly closed (first vertex == last vertex), exteriors
counter-clockwise, holes clockwise; validation happens at construction.
Boolean operations (intersection, union coverage) are delegated to GEOS via
shapely, with vertices snapped to a 1 mm grid first to bound floating-point
degeneracies in cadastral data. Everything else (area, containment, the
bbox tree) is implemented here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import shapely
from shapely.geometry import MultiPolygon as _ShMultiPolygon
from shapely.geometry import Polygon as _ShPolygon

SNAP_GRID_M = 0.001  # 1 mm
AREA_REL_TOL = 0.001  # declared area_m2 must match shoelace within 0.1%


class GeometryError(ValueError):
    """A ring or polygon violates a construction invariant."""


class ParcelFileError(ValueError):
    """A parcel or layer file cannot be parsed at all."""


class PlanarPoint(NamedTuple):
    x: float
    y: float


Ring = tuple[PlanarPoint, ...]


def _shoelace(ring: Ring) -> float:
    """Signed shoelace area of a closed ring (CCW positive)."""
    acc = 0.0
    for (x1, y1), (x2, y2) in zip(ring, ring[1:]):
        acc += x1 * y2 - x2 * y1
    return acc / 2.0


def _cross(o: PlanarPoint, a: PlanarPoint, b: PlanarPoint) -> float:
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)


def _on_segment(p: PlanarPoint, a: PlanarPoint, b: PlanarPoint) -> bool:
    """True when p lies on the closed segment a-b."""
    if _cross(a, b, p) != 0.0:
        return False
    return (
        min(a.x, b.x) <= p.x <= max(a.x, b.x)
        and min(a.y, b.y) <= p.y <= max(a.y, b.y)
    )


def _segments_touch(a: PlanarPoint, b: PlanarPoint, c: PlanarPoint, d: PlanarPoint) -> bool:
    """True when closed segments a-b and c-d share any point."""
    d1 = _cross(c, d, a)
    d2 = _cross(c, d, b)
    d3 = _cross(a, b, c)
    d4 = _cross(a, b, d)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    return (
        _on_segment(a, c, d)
        or _on_segment(b, c, d)
        or _on_segment(c, a, b)
        or _on_segment(d, a, b)
    )


def _validate_ring(raw: Sequence[Sequence[float]], label: str) -> Ring:
    pts = [PlanarPoint(float(p[0]), float(p[1])) for p in raw]
    for p in pts:
        if not (math.isfinite(p.x) and math.isfinite(p.y)):
            raise GeometryError(f"{label}: non-finite coordinate {p}")
    if len(pts) < 4:
        raise GeometryError(f"{label}: ring needs at least 3 distinct vertices plus explicit closure")
    if pts[0] != pts[-1]:
        raise GeometryError(f"{label}: ring not closed (first {pts[0]} != last {pts[-1]})")
    body = pts[:-1]
    if len(set(body)) < 3:
        raise GeometryError(f"{label}: fewer than 3 distinct vertices")
    for i in range(len(body)):
        if body[i] == body[(i + 1) % len(body)]:
            raise GeometryError(f"{label}: repeated consecutive vertex at index {i}")
    n = len(body)
    edges = [(body[i], body[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        a, b = edges[i]
        for j in range(i + 1, n):
            c, d = edges[j]
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            if adjacent:
                # shared endpoint is legal; any further contact is a spike/overlap
                shared = b if j == i + 1 else a
                other_i = a if shared is b else b
                other_j = d if shared == c else c
                if _on_segment(other_j, a, b) or _on_segment(other_i, c, d):
                    raise GeometryError(f"{label}: self-intersection between edges {i} and {j}")
            elif _segments_touch(a, b, c, d):
                raise GeometryError(f"{label}: self-intersection between edges {i} and {j}")
    if _shoelace(tuple(pts)) == 0.0:
        raise GeometryError(f"{label}: zero area")
    return tuple(pts)


def _oriented(ring: Ring, ccw: bool) -> Ring:
    area = _shoelace(ring)
    if (area > 0) != ccw:
        return tuple(reversed(ring))
    return ring


@dataclass(frozen=True)
class PolygonShape:
    """Simple polygon with optional holes, validated on construction."""

    exterior: Ring
    holes: tuple[Ring, ...] = ()

    def __post_init__(self) -> None:
        ext = _oriented(_validate_ring(self.exterior, "exterior"), ccw=True)
        hs = tuple(
            _oriented(_validate_ring(h, f"hole {i}"), ccw=False)
            for i, h in enumerate(self.holes)
        )
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", hs)
        if self.area() <= 0.0:
            raise GeometryError("polygon area must be strictly positive")

    def area(self) -> float:
        return _shoelace(self.exterior) - sum(-_shoelace(h) for h in self.holes)

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p.x for p in self.exterior]
        ys = [p.y for p in self.exterior]
        return (min(xs), min(ys), max(xs), max(ys))

    def contains_point(self, p: PlanarPoint) -> bool:
        """Point-in-polygon with boundary points counting as contained."""
        minx, miny, maxx, maxy = self.bounds()
        if not (minx <= p.x <= maxx and miny <= p.y <= maxy):
            return False
        for ring in (self.exterior, *self.holes):
            for a, b in zip(ring, ring[1:]):
                if _on_segment(p, a, b):
                    return True
        if not _ray_parity(p, self.exterior):
            return False
        return not any(_ray_parity(p, h) for h in self.holes)

    def coordinates(self) -> list[list[list[float]]]:
        return [[[p.x, p.y] for p in ring] for ring in (self.exterior, *self.holes)]


def _ray_parity(p: PlanarPoint, ring: Ring) -> bool:
    inside = False
    for a, b in zip(ring, ring[1:]):
        if (a.y > p.y) != (b.y > p.y):
            xint = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y)
            if p.x < xint:
                inside = not inside
    return inside


def polygon_area(shape: PolygonShape) -> float:
    """Shoelace area of the exterior minus holes, in m^2."""
    return shape.area()


Geometry = tuple[PolygonShape, ...]


def geometry_area(geometry: Geometry) -> float:
    return sum(s.area() for s in geometry)


def geometry_bounds(geometry: Geometry) -> tuple[float, float, float, float]:
    bs = [s.bounds() for s in geometry]
    return (
        min(b[0] for b in bs),
        min(b[1] for b in bs),
        max(b[2] for b in bs),
        max(b[3] for b in bs),
    )


# -- GEOS bridge -------------------------------------------------------------

@lru_cache(maxsize=8192)
def _as_geos(shape: PolygonShape):
    poly = _ShPolygon(
        [(p.x, p.y) for p in shape.exterior],
        [[(p.x, p.y) for p in h] for h in shape.holes],
    )
    return shapely.set_precision(poly, SNAP_GRID_M)


def _geos_union(geometry: Geometry):
    return shapely.union_all([_as_geos(s) for s in geometry])


def intersection_area(a: PolygonShape | Geometry, b: PolygonShape | Geometry) -> float:
    """Area of the geometric intersection of two shapes (or multi-shapes)."""
    ga = (a,) if isinstance(a, PolygonShape) else tuple(a)
    gb = (b,) if isinstance(b, PolygonShape) else tuple(b)
    ua, ub = _geos_union(ga), _geos_union(gb)
    if ua.wkb > ub.wkb:  # canonical operand order: symmetry must be exact
        ua, ub = ub, ua
    raw = ua.intersection(ub).area
    return max(0.0, min(raw, geometry_area(ga), geometry_area(gb)))


def union_intersection_area(target: Geometry, cover: Iterable[PolygonShape]) -> float:
    """Area of target covered by the union of cover polygons (deduplicated)."""
    target = tuple(target)
    if not target:
        return 0.0
    tb = geometry_bounds(target)
    cover = tuple(
        s for s in cover
        if not (
            (b := s.bounds())[0] > tb[2] or b[2] < tb[0] or b[1] > tb[3] or b[3] < tb[1]
        )
    )
    if not cover:
        return 0.0
    raw = _geos_union(target).intersection(_geos_union(cover)).area
    return max(0.0, min(raw, geometry_area(target)))


# -- Parcels -----------------------------------------------------------------

@dataclass(frozen=True)
class Parcel:
    id: str
    geometry: Geometry
    area_m2: float
    city_owned: bool
    designation: str
    attributes: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.geometry:
            raise GeometryError(f"parcel {self.id}: empty geometry")
        computed = geometry_area(self.geometry)
        if abs(self.area_m2 - computed) > AREA_REL_TOL * computed:
            raise GeometryError(
                f"parcel {self.id}: declared area {self.area_m2} deviates from "
                f"computed {computed} by more than 0.1%"
            )

    @classmethod
    def build(
        cls,
        id: str,
        geometry: Geometry,
        *,
        city_owned: bool,
        designation: str,
        area_m2: float | None = None,
        attributes: dict | None = None,
    ) -> "Parcel":
        if area_m2 is None:
            area_m2 = geometry_area(geometry)
        return cls(id, tuple(geometry), area_m2, city_owned, designation, dict(attributes or {}))

    def bounds(self) -> tuple[float, float, float, float]:
        return geometry_bounds(self.geometry)

    def contains_point(self, p: PlanarPoint) -> bool:
        return any(s.contains_point(p) for s in self.geometry)


class Severity(Enum):
    HIGHLY_RESTRICTIVE = "high"
    LESS_RESTRICTIVE = "less"


@dataclass(frozen=True)
class RestrictionLayer:
    name: str
    severity: Severity
    geometry: Geometry

    def __post_init__(self) -> None:
        if not self.geometry:
            raise GeometryError(f"layer {self.name}: geometry must be non-empty")


# -- Spatial index -----------------------------------------------------------

class BBoxTree:
    """Static STR-packed bounding-box tree."""

    __slots__ = ("_nodes", "_size")

    def __init__(self, items: Sequence[tuple[str, tuple[float, float, float, float]]], leaf_size: int = 8):
        self._size = len(items)
        if not items:
            self._nodes = None
            return
        leaves = self._pack(list(items), leaf_size)
        level: list[tuple] = [(self._merge([b for _, b in leaf]), leaf, None) for leaf in leaves]
        while len(level) > 1:
            grouped = self._pack([(None, n[0], n) for n in level], leaf_size)
            level = [
                (self._merge([b for _, b, _ in grp]), None, [n for _, _, n in grp])
                for grp in grouped
            ]
        self._nodes = level[0]

    @staticmethod
    def _merge(boxes):
        return (
            min(b[0] for b in boxes),
            min(b[1] for b in boxes),
            max(b[2] for b in boxes),
            max(b[3] for b in boxes),
        )

    @staticmethod
    def _pack(items, leaf_size):
        # sort-tile-recursive: sort by center x, slice, sort slices by center y
        def key(entry):
            b = entry[1]
            return ((b[0] + b[2]) / 2, (b[1] + b[3]) / 2)

        items = sorted(items, key=key)
        n_leaves = max(1, math.ceil(len(items) / leaf_size))
        n_slices = max(1, math.ceil(math.sqrt(n_leaves)))
        slice_len = math.ceil(len(items) / n_slices)
        out = []
        for i in range(0, len(items), slice_len):
            chunk = sorted(items[i : i + slice_len], key=lambda e: key(e)[1])
            for j in range(0, len(chunk), leaf_size):
                out.append(chunk[j : j + leaf_size])
        return out

    def query_point(self, x: float, y: float) -> list[str]:
        return self.query_bbox((x, y, x, y))

    def query_bbox(self, bbox: tuple[float, float, float, float]) -> list[str]:
        if self._nodes is None:
            return []
        qminx, qminy, qmaxx, qmaxy = bbox
        out: list[str] = []
        stack = [self._nodes]
        while stack:
            nb, leaf, children = stack.pop()
            if nb[0] > qmaxx or nb[2] < qminx or nb[1] > qmaxy or nb[3] < qminy:
                continue
            if leaf is not None:
                for item_id, b in leaf:
                    if not (b[0] > qmaxx or b[2] < qminx or b[1] > qmaxy or b[3] < qminy):
                        out.append(item_id)
            else:
                stack.extend(children)
        return out

    def __len__(self) -> int:
        return self._size


class ParcelSet:
    """Immutable id-keyed parcel collection with a bbox index. Pure reads."""

    def __init__(self, parcels: Iterable[Parcel]):
        by_id: dict[str, Parcel] = {}
        for p in parcels:
            if p.id in by_id:
                raise GeometryError(f"duplicate parcel id {p.id!r}")
            by_id[p.id] = p
        self._parcels = {pid: by_id[pid] for pid in sorted(by_id)}
        self._tree = BBoxTree([(p.id, p.bounds()) for p in self._parcels.values()])

    def __len__(self) -> int:
        return len(self._parcels)

    def __contains__(self, pid: str) -> bool:
        return pid in self._parcels

    def __iter__(self) -> Iterator[Parcel]:
        return iter(self._parcels.values())

    def ids(self) -> list[str]:
        return list(self._parcels)

    def get(self, pid: str) -> Parcel:
        return self._parcels[pid]

    def bounds(self) -> tuple[float, float, float, float]:
        return geometry_bounds(tuple(s for p in self for s in p.geometry))

    def locate(self, p: PlanarPoint) -> str | None:
        """Id of the parcel containing p; shared-edge ties resolve to the
        lexicographically smallest id; None when nothing contains p."""
        hits = [
            pid
            for pid in self._tree.query_point(p.x, p.y)
            if self._parcels[pid].contains_point(p)
        ]
        return min(hits) if hits else None


def locate_point(parcel_set: ParcelSet, p: PlanarPoint) -> str | None:
    return parcel_set.locate(p)


# -- GeoJSON ingestion -------------------------------------------------------

@dataclass(frozen=True)
class FeatureRejection:
    index: int
    feature_id: str | None
    reason: str


@dataclass(frozen=True)
class IngestResult:
    parcel_set: ParcelSet
    rejected: tuple[FeatureRejection, ...]


_REQUIRED_PROPS = ("id", "city_owned", "designation")


def _project_local_equirect(coords, origin):
    lon0, lat0 = origin
    r = 6_371_000.0
    k = math.pi / 180.0
    cos0 = math.cos(lat0 * k)
    return [[r * cos0 * (x - lon0) * k, r * (y - lat0) * k] for x, y in coords]


def _feature_rings(geom: dict, transform) -> list[Geometry]:
    gtype = geom.get("type")
    if gtype == "Polygon":
        polys = [geom["coordinates"]]
    elif gtype == "MultiPolygon":
        polys = geom["coordinates"]
    else:
        raise GeometryError(f"unsupported geometry type {gtype!r}")
    shapes: list[PolygonShape] = []
    for rings in polys:
        rings = [transform(r) for r in rings]
        shapes.append(PolygonShape(
            tuple(PlanarPoint(*p) for p in rings[0]),
            tuple(tuple(PlanarPoint(*p) for p in h) for h in rings[1:]),
        ))
    return shapes


def ingest_parcels(source: str | Path) -> IngestResult:
    """Load a GeoJSON FeatureCollection of parcels.

    Invalid features are rejected with per-feature diagnostics; the rest
    form the returned ParcelSet.
    """
    path = Path(source)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParcelFileError(f"{path}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    except OSError as e:
        raise ParcelFileError(f"{path}: {e}") from e
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParcelFileError(f"{path}: not a GeoJSON FeatureCollection")

    crs = doc.get("planar_crs")
    if crs is not None:
        if crs.get("type") != "local_equirectangular" or "origin" not in crs:
            raise ParcelFileError(f"{path}: unsupported planar_crs declaration {crs!r}")
        origin = crs["origin"]
        transform = lambda ring: _project_local_equirect(ring, origin)
    else:
        transform = lambda ring: ring

    parcels: dict[str, tuple[int, Parcel]] = {}
    rejected: list[FeatureRejection] = []
    for idx, feature in enumerate(doc.get("features", [])):
        props = feature.get("properties") or {}
        fid = props.get("id")
        try:
            missing = [k for k in _REQUIRED_PROPS if k not in props]
            if missing:
                raise GeometryError(f"missing required properties {missing}")
            if not isinstance(fid, str):
                raise GeometryError(f"id must be a string, got {fid!r}")
            if fid in parcels:
                raise GeometryError(
                    f"duplicate id {fid!r}: feature {idx} collides with feature {parcels[fid][0]}"
                )
            declared_area = props.get("area_m2")
            if declared_area is not None and not isinstance(declared_area, (int, float)):
                raise GeometryError(f"area_m2 must be numeric, got {declared_area!r}")
            geometry = tuple(_feature_rings(feature.get("geometry") or {}, transform))
            extra = {
                k: v for k, v in props.items()
                if k not in ("id", "city_owned", "designation", "area_m2")
            }
            parcel = Parcel.build(
                fid,
                geometry,
                city_owned=bool(props["city_owned"]),
                designation=str(props["designation"]),
                area_m2=declared_area,
                attributes=extra,
            )
        except GeometryError as e:
            rejected.append(FeatureRejection(idx, fid if isinstance(fid, str) else None, str(e)))
            continue
        parcels[fid] = (idx, parcel)
    return IngestResult(
        ParcelSet(p for _, p in parcels.values()),
        tuple(rejected),
    )


def export_parcels(parcel_set: ParcelSet, path: str | Path) -> None:
    """Write a ParcelSet back to GeoJSON; re-ingesting yields an identical set."""
    features = []
    for p in parcel_set:
        geoms = [s.coordinates() for s in p.geometry]
        geometry = (
            {"type": "Polygon", "coordinates": geoms[0]}
            if len(geoms) == 1
            else {"type": "MultiPolygon", "coordinates": geoms}
        )
        props = {
            "id": p.id,
            "city_owned": p.city_owned,
            "designation": p.designation,
            "area_m2": p.area_m2,
            **p.attributes,
        }
        features.append({"type": "Feature", "properties": props, "geometry": geometry})
    Path(path).write_text(json.dumps({"type": "FeatureCollection", "features": features}))


def load_restriction_layer(source: str | Path) -> RestrictionLayer:
    """Load one restriction layer file (top-level name + severity)."""
    path = Path(source)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParcelFileError(f"{path}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    name = doc.get("name")
    severity = doc.get("severity")
    if not name or severity not in ("high", "less"):
        raise ParcelFileError(f"{path}: layer file needs top-level name and severity in {{'high','less'}}")
    shapes: list[PolygonShape] = []
    for feature in doc.get("features", []):
        shapes.extend(_feature_rings(feature.get("geometry") or {}, lambda r: r))
    if not shapes:
        raise ParcelFileError(f"{path}: layer has no polygon features")
    return RestrictionLayer(str(name), Severity(severity), tuple(shapes))
