"""Deterministic synthetic city generator with a ground-truth ledger.

Generates a rectangular-parcel city partitioned into districts, plants
restriction-layer polygons covering exact per-parcel fractions, and
records every planted value (areas, coverages, expected class and
capacity, screening-relevant attributes) in a machine-readable ledger.
The ledger is the oracle test suites compare pipeline output against:
all planted coordinates are integer meters, so coverage fractions are
exact by construction.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .geometry import (
    Parcel,
    ParcelSet,
    PlanarPoint,
    PolygonShape,
    RestrictionLayer,
    Severity,
    export_parcels,
)

DEFAULT_LAYER_SPEC = (
    {"name": "nature_conservation", "severity": "high"},
    {"name": "hazard_zone", "severity": "high"},
    {"name": "parks", "severity": "less"},
    {"name": "noise", "severity": "less"},
)

BLOCK_PITCH_M = 180  # parcel block spacing; max parcel dim 150 leaves a 30 m street
DISTRICT_MARGIN_M = 50

# Archetypes drive which screening rules a parcel can match:
#   occupied   -> in_active_use, initial rejection (other land use)
#   recreation -> park-family designation, initial rejection (use conflict)
#   park_layer -> fully inside the parks layer, initial rejection (use conflict)
#   steep      -> unbuildable flag, initial rejection (technical)
#   brownfield -> contaminated flag, detailed-stage exclusion
#   exposed    -> hazard_adjacent flag, detailed-stage exclusion
#   ready      -> clean, low class, immediately available (recommendable)
#   reserve    -> clean but not immediately available (future consideration)
#   open       -> unconstrained filler exercising coverage boundaries
ARCHETYPES = (
    "occupied", "recreation", "park_layer", "steep",
    "brownfield", "exposed", "ready", "reserve", "open",
)

_DISTRICT_QUOTA = (
    ["occupied"] * 18 + ["recreation"] * 6 + ["park_layer"] * 2 + ["steep"] * 3
    + ["brownfield"] * 4 + ["exposed"] * 2 + ["ready"] * 2 + ["reserve"] * 3
)
_FILL_WEIGHTS = {
    "occupied": 30, "recreation": 12, "park_layer": 3, "steep": 5,
    "brownfield": 4, "exposed": 3, "ready": 6, "reserve": 8, "open": 29,
}

# west-slice fractions planted for highly restrictive layers; east slices
# for less restrictive ones. Same-side slices nest, so the per-severity
# union fraction is exactly the maximum planted fraction.
_OPEN_PLANTS = (
    (),
    (("high", 0.49),),
    (("high", 0.5),),
    (("high", 1.0),),
    (("less", 0.49),),
    (("less", 0.5),),
    (("high", 0.25), ("less", 0.75)),
    (("less", 0.5), ("less", 0.3)),
    (("high", 0.6), ("high", 0.25)),
    (("high", 0.25), ("high", 0.5)),
    (("less", 0.75),),
    (("high", 0.75),),
)


class LayerSpecError(ValueError):
    """Invalid layer specification for city generation."""


@dataclass(frozen=True)
class DistrictInfo:
    id: str
    name: str
    bounds: tuple[float, float, float, float]
    population: int
    current_refugees: int


@dataclass
class CityBundle:
    seed: int
    parcel_set: ParcelSet
    districts: list[DistrictInfo]
    layers: list[RestrictionLayer]
    ledger: dict


def _validate_layer_spec(layer_spec: Sequence[dict]) -> tuple[list[str], list[str]]:
    high, less = [], []
    seen = set()
    for entry in layer_spec:
        name, severity = entry.get("name"), entry.get("severity")
        if not name or not isinstance(name, str):
            raise LayerSpecError(f"layer spec entry missing name: {entry!r}")
        if name in seen:
            raise LayerSpecError(f"duplicate layer name {name!r}")
        seen.add(name)
        if severity == "high":
            high.append(name)
        elif severity == "less":
            less.append(name)
        else:
            raise LayerSpecError(
                f"layer {name!r}: severity must be 'high' or 'less', got {severity!r}"
            )
    if not high or not less:
        raise LayerSpecError("layer spec needs at least one layer of each severity")
    return high, less


def _expected_class(h: float, l: float) -> str:
    if h >= 0.5:
        return "high"
    if h == 0.0 and l < 0.5:
        return "low"
    return "medium"


def _rect(x0: int, y0: int, w: int, h: int) -> PolygonShape:
    ring = (
        PlanarPoint(x0, y0),
        PlanarPoint(x0 + w, y0),
        PlanarPoint(x0 + w, y0 + h),
        PlanarPoint(x0, y0 + h),
        PlanarPoint(x0, y0),
    )
    return PolygonShape(ring)


def _archetype_stream(rng: random.Random, count: int) -> list[str]:
    picks = list(_DISTRICT_QUOTA[:count])
    names = list(_FILL_WEIGHTS)
    weights = [_FILL_WEIGHTS[n] for n in names]
    while len(picks) < count:
        picks.append(rng.choices(names, weights=weights)[0])
    return picks


def _plants_for(archetype: str, rng: random.Random, open_idx: int):
    """Planted (severity, fraction) slices; park_layer pins the parks layer."""
    if archetype == "occupied":
        return rng.choice(((), (("less", 0.3),), (("high", 0.25),), (("less", 0.55),)))
    if archetype == "recreation":
        return rng.choice(((), (("less", 0.5),), (("less", 0.75),)))
    if archetype == "park_layer":
        return (("less", 1.0),)
    if archetype == "steep":
        return rng.choice(((("high", 0.6),), (("high", 0.75),), (("high", 1.0),)))
    if archetype in ("brownfield", "exposed"):
        return rng.choice(((), (("less", 0.25),), (("less", 0.3),)))
    if archetype == "ready":
        return rng.choice(((), (("less", 0.25),), (("less", 0.49),)))
    if archetype == "reserve":
        return rng.choice(((), (("less", 0.49),), (("less", 0.3),)))
    return _OPEN_PLANTS[open_idx % len(_OPEN_PLANTS)]


_DESIGNATIONS = {
    "occupied": ("residential", "commercial", "mixed"),
    "recreation": ("park", "playground", "sports_field"),
    "park_layer": ("vacant",),
    "steep": ("vacant", "agricultural"),
    "brownfield": ("vacant", "parking"),
    "exposed": ("vacant", "agricultural"),
    "ready": ("vacant", "agricultural", "parking"),
    "reserve": ("vacant", "agricultural", "parking"),
    "open": ("residential", "vacant", "commercial", "agricultural", "parking", "mixed"),
}

_SIZES_W = (60, 80, 100, 120)
_SIZES_H = (40, 50, 60, 80, 100, 120, 150)


def generate_city(
    seed: int = 42,
    n_parcels: int = 1000,
    layer_spec: Sequence[dict] = DEFAULT_LAYER_SPEC,
    n_districts: int = 7,
) -> CityBundle:
    if n_parcels < 1:
        raise ValueError("n_parcels must be >= 1")
    high_names, less_names = _validate_layer_spec(layer_spec)
    rng = random.Random(seed)

    per_district = [
        n_parcels // n_districts + (1 if i < n_parcels % n_districts else 0)
        for i in range(n_districts)
    ]
    per_district = [k for k in per_district if k > 0]
    max_k = max(per_district)
    grid_cols = math.ceil(math.sqrt(max_k))
    grid_rows = math.ceil(max_k / grid_cols)
    slot_w = grid_cols * BLOCK_PITCH_M + 2 * DISTRICT_MARGIN_M + 100
    slot_h = grid_rows * BLOCK_PITCH_M + 2 * DISTRICT_MARGIN_M + 100

    parcels: list[Parcel] = []
    districts: list[DistrictInfo] = []
    layer_shapes: dict[str, list[PolygonShape]] = {n: [] for n in (*high_names, *less_names)}
    ledger_parcels: dict[str, dict] = {}
    open_idx = 0
    pid_counter = 0

    for d_idx, k in enumerate(per_district):
        district_id = f"d{d_idx + 1}"
        slot_col, slot_row = d_idx % 4, d_idx // 4
        origin_x = slot_col * slot_w + DISTRICT_MARGIN_M
        origin_y = slot_row * slot_h + DISTRICT_MARGIN_M
        archetypes = _archetype_stream(rng, k)
        env = [math.inf, math.inf, -math.inf, -math.inf]

        for i, archetype in enumerate(archetypes):
            bx, by = i % grid_cols, i // grid_cols
            x0 = origin_x + bx * BLOCK_PITCH_M
            y0 = origin_y + by * BLOCK_PITCH_M
            plants = _plants_for(archetype, rng, open_idx)
            if archetype == "open":
                open_idx += 1
            # planted parcels use width 100 so every fraction slice lands
            # on integer meters and the coverage is exact
            w = 100 if plants else rng.choice(_SIZES_W)
            h = rng.choice(_SIZES_H)
            pid = f"p{pid_counter:04d}"
            pid_counter += 1

            designation = rng.choice(_DESIGNATIONS[archetype])
            attrs = {
                "district": district_id,
                "in_active_use": archetype == "occupied",
                "unbuildable": archetype == "steep",
                "contaminated": archetype == "brownfield",
                "hazard_adjacent": archetype == "exposed",
                "immediately_available": archetype == "ready",
            }
            city_owned = archetype not in ("occupied", "open") or rng.random() < 0.75

            plant_records = []
            high_max = 0.0
            less_max = 0.0
            for severity, fraction in plants:
                span = int(round(fraction * w))
                if severity == "high":
                    shape = _rect(x0, y0, span, h)
                    name = high_names[rng.randrange(len(high_names))]
                    high_max = max(high_max, span / w)
                else:
                    shape = _rect(x0 + w - span, y0, span, h)
                    if archetype == "park_layer":
                        name = "parks" if "parks" in less_names else less_names[0]
                    else:
                        name = less_names[rng.randrange(len(less_names))]
                    less_max = max(less_max, span / w)
                layer_shapes[name].append(shape)
                plant_records.append({"layer": name, "fraction": span / w})

            parcels.append(
                Parcel.build(
                    pid,
                    (_rect(x0, y0, w, h),),
                    city_owned=city_owned,
                    designation=designation,
                    attributes=attrs,
                )
            )
            area = float(w * h)
            ledger_parcels[pid] = {
                "district": district_id,
                "archetype": archetype,
                "area_m2": area,
                "designation": designation,
                "city_owned": city_owned,
                "plants": plant_records,
                "high_coverage": high_max,
                "less_coverage": less_max,
                "expected_class": _expected_class(high_max, less_max),
                "expected_capacity": math.floor(area * (1.0 - high_max) / 30.0),
                "attributes": attrs,
            }
            env[0] = min(env[0], x0)
            env[1] = min(env[1], y0)
            env[2] = max(env[2], x0 + w)
            env[3] = max(env[3], y0 + h)

        districts.append(
            DistrictInfo(
                id=district_id,
                name=f"District {d_idx + 1}",
                bounds=(
                    env[0] - DISTRICT_MARGIN_M,
                    env[1] - DISTRICT_MARGIN_M,
                    env[2] + DISTRICT_MARGIN_M,
                    env[3] + DISTRICT_MARGIN_M,
                ),
                population=rng.randrange(80_000, 320_000, 1000),
                current_refugees=rng.randrange(500, 5000, 50),
            )
        )

    layers = [
        RestrictionLayer(
            name=name,
            severity=Severity.HIGHLY_RESTRICTIVE if name in high_names else Severity.LESS_RESTRICTIVE,
            geometry=tuple(shapes),
        )
        for name, shapes in layer_shapes.items()
        if shapes
    ]
    ledger = {
        "seed": seed,
        "n_parcels": n_parcels,
        "layer_names": {"high": high_names, "less": less_names},
        "districts": [
            {
                "id": d.id,
                "name": d.name,
                "bounds": list(d.bounds),
                "population": d.population,
                "current_refugees": d.current_refugees,
            }
            for d in districts
        ],
        "parcels": ledger_parcels,
    }
    return CityBundle(
        seed=seed,
        parcel_set=ParcelSet(parcels),
        districts=districts,
        layers=layers,
        ledger=ledger,
    )


def write_city(bundle: CityBundle, out_dir: str | Path) -> dict[str, Path]:
    """Write parcels, layer files, districts, and the ledger; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "layers").mkdir(exist_ok=True)
    paths: dict[str, Path] = {}

    parcel_path = out / "parcels.geojson"
    export_parcels(bundle.parcel_set, parcel_path)
    paths["parcels"] = parcel_path

    for layer in bundle.layers:
        doc = {
            "type": "FeatureCollection",
            "name": layer.name,
            "severity": layer.severity.value,
            "features": [
                {
                    "type": "Feature",
                    "properties": {},
                    "geometry": {"type": "Polygon", "coordinates": shape.coordinates()},
                }
                for shape in layer.geometry
            ],
        }
        p = out / "layers" / f"{layer.name}.geojson"
        p.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        paths[f"layer:{layer.name}"] = p

    districts_path = out / "districts.json"
    districts_path.write_text(
        json.dumps({"districts": bundle.ledger["districts"]}, indent=1) + "\n",
        encoding="utf-8",
    )
    paths["districts"] = districts_path

    ledger_path = out / "ledger.json"
    ledger_path.write_text(json.dumps(bundle.ledger, indent=1) + "\n", encoding="utf-8")
    paths["ledger"] = ledger_path
    return paths


def load_districts(path: str | Path) -> list[DistrictInfo]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        DistrictInfo(
            id=d["id"],
            name=d["name"],
            bounds=tuple(d["bounds"]),
            population=d["population"],
            current_refugees=d["current_refugees"],
        )
        for d in doc["districts"]
    ]
