"""Parcel suitability classification from restriction-layer coverage.

Parcels are ranked into three classes by how much of their area falls
under restriction layers of two severities. Highly-restrictive coverage
at or above a significance threshold marks a parcel as highly
unsuitable; any highly-restrictive contact, or less-restrictive
coverage of half the area or more, marks it medium; the rest are low.
Capacity estimates how many accommodation places fit on the
unrestricted share of the parcel at a fixed density.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .geometry import (
    Parcel,
    ParcelFileError,
    ParcelSet,
    PolygonShape,
    RestrictionLayer,
    Severity,
    union_intersection_area,
)


class SuitabilityClass(Enum):
    """Three-way rank of unsuitability; serialized lowercase."""

    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"

    @property
    def display_color(self) -> str:
        return _CLASS_COLORS[self]


_CLASS_COLORS = {
    SuitabilityClass.HIGH: "red",
    SuitabilityClass.MEDIUM: "orange",
    SuitabilityClass.LOW: "yellow",
}


@dataclass(frozen=True)
class SuitabilityConfig:
    significance_threshold: float = 0.5
    low_class_bound: float = 0.5  # fixed: "less than 50% of the area"
    density_m2_per_place: float = 30.0

    def __post_init__(self) -> None:
        if not 0.0 < self.significance_threshold <= 1.0:
            raise ValueError("significance_threshold must be in (0, 1]")
        if self.low_class_bound != 0.5:
            raise ValueError("low_class_bound is fixed at 0.5")
        if self.density_m2_per_place <= 0:
            raise ValueError("density_m2_per_place must be positive")


DEFAULT_CONFIG = SuitabilityConfig()


@dataclass(frozen=True)
class SuitabilityAssessment:
    parcel_id: str
    suitability: SuitabilityClass
    high_coverage: float
    less_coverage: float
    capacity: int


def coverage_fraction(parcel: Parcel, layer: RestrictionLayer) -> float:
    """Fraction of the parcel's area covered by the layer's polygon union."""
    return _union_fraction(parcel, layer.geometry)


def _union_fraction(parcel: Parcel, cover: Sequence[PolygonShape]) -> float:
    if not cover or parcel.area_m2 <= 0:
        return 0.0
    raw = union_intersection_area(parcel.geometry, cover)
    return max(0.0, min(1.0, raw / parcel.area_m2))


def _severity_coverage(
    parcel: Parcel, layers: Iterable[RestrictionLayer], severity: Severity
) -> float:
    cover = tuple(
        shape for layer in layers if layer.severity is severity for shape in layer.geometry
    )
    return _union_fraction(parcel, cover)


def _class_for(high: float, less: float, cfg: SuitabilityConfig) -> SuitabilityClass:
    if high >= cfg.significance_threshold:
        return SuitabilityClass.HIGH
    if high > 0.0 or less >= cfg.low_class_bound:
        return SuitabilityClass.MEDIUM
    return SuitabilityClass.LOW


def capacity(
    parcel: Parcel, cfg: SuitabilityConfig = DEFAULT_CONFIG, high_coverage: float = 0.0
) -> int:
    """Accommodation places on the unrestricted share of the parcel."""
    usable = parcel.area_m2 * (1.0 - high_coverage)
    return max(0, math.floor(usable / cfg.density_m2_per_place))


def classify(
    parcel: Parcel,
    layers: Sequence[RestrictionLayer],
    cfg: SuitabilityConfig = DEFAULT_CONFIG,
) -> SuitabilityAssessment:
    high = _severity_coverage(parcel, layers, Severity.HIGHLY_RESTRICTIVE)
    less = _severity_coverage(parcel, layers, Severity.LESS_RESTRICTIVE)
    return SuitabilityAssessment(
        parcel_id=parcel.id,
        suitability=_class_for(high, less, cfg),
        high_coverage=high,
        less_coverage=less,
        capacity=capacity(parcel, cfg, high_coverage=high),
    )


def classify_all(
    parcel_set: ParcelSet,
    layers: Sequence[RestrictionLayer],
    cfg: SuitabilityConfig = DEFAULT_CONFIG,
) -> list[SuitabilityAssessment]:
    """One assessment per parcel, ordered by parcel id."""
    return [classify(parcel, layers, cfg) for parcel in parcel_set]


ASSESSMENT_COLUMNS = ("parcel_id", "class", "high_coverage", "less_coverage", "capacity")


def export_assessments(
    assessments: Iterable[SuitabilityAssessment], path: str | Path
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ASSESSMENT_COLUMNS)
        for a in assessments:
            writer.writerow(
                [a.parcel_id, a.suitability.value, a.high_coverage, a.less_coverage, a.capacity]
            )


def load_assessments(path: str | Path) -> list[SuitabilityAssessment]:
    path = Path(path)
    out: list[SuitabilityAssessment] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(ASSESSMENT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ParcelFileError(f"{path}: missing assessment columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(
                    SuitabilityAssessment(
                        parcel_id=row["parcel_id"],
                        suitability=SuitabilityClass(row["class"]),
                        high_coverage=float(row["high_coverage"]),
                        less_coverage=float(row["less_coverage"]),
                        capacity=int(row["capacity"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ParcelFileError(f"{path}: line {lineno}: {exc}") from exc
    return out
