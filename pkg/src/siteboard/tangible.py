"""Color-coded brick detection on a scanned tabletop grid.

Bricks sit on a square grid and are identified from below by small
square color patterns. The pipeline runs in three stages: quantize a
pixel frame into a grid of palette colors, decode contiguous colored
regions into brick detections via a rotation-tolerant lookup table,
and diff successive detection sets into placement change events.
Quadrant frames from four cameras are composed into one full-grid
frame before decoding.

The canvas is white, so near-white cells always quantize to Neutral
(empty); White therefore cannot appear inside a brick code pattern.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image


class GridError(ValueError):
    """Frame or placement violates the grid contract."""


class TornScanError(ValueError):
    """Quadrant frames from different scans cannot be composed."""


class TableError(ValueError):
    """Invalid brick lookup table."""


class ColorCell(Enum):
    RED = "Red"
    GREEN = "Green"
    BLUE = "Blue"
    YELLOW = "Yellow"
    BLACK = "Black"
    WHITE = "White"
    NEUTRAL = "Neutral"


PALETTE_RGB = {
    ColorCell.RED: (255, 0, 0),
    ColorCell.GREEN: (0, 255, 0),
    ColorCell.BLUE: (0, 0, 255),
    ColorCell.YELLOW: (255, 255, 0),
    ColorCell.BLACK: (0, 0, 0),
    ColorCell.WHITE: (255, 255, 255),
}

COLOR_TOLERANCE = 60.0

HOUSING_DENOMINATIONS = (40, 100, 250, 500, 1000, 1500)
CAPACITY_RANGE = (40, 1500)


@dataclass(frozen=True)
class GridSpec:
    rows: int = 32
    cols: int = 32
    cell_px: int = 16

    def __post_init__(self) -> None:
        if self.rows < 4 or self.cols < 4 or self.rows % 2 or self.cols % 2:
            raise GridError("grid rows and cols must be even and >= 4")
        if self.cell_px < 1:
            raise GridError("cell_px must be >= 1")

    @property
    def quadrant_rows(self) -> int:
        return self.rows // 2

    @property
    def quadrant_cols(self) -> int:
        return self.cols // 2

    @property
    def pixel_size(self) -> tuple[int, int]:
        return (self.cols * self.cell_px, self.rows * self.cell_px)


@dataclass(frozen=True)
class BrickType:
    kind: str  # "Marker" or "Housing"
    capacity: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "Marker":
            if self.capacity is not None:
                raise TableError("Marker bricks carry no capacity")
        elif self.kind == "Housing":
            if not isinstance(self.capacity, int) or self.capacity < 1:
                raise TableError("Housing bricks need a positive integer capacity")
        else:
            raise TableError(f"unknown brick kind {self.kind!r}")

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.capacity is not None:
            out["capacity"] = self.capacity
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "BrickType":
        return cls(kind=doc.get("kind", ""), capacity=doc.get("capacity"))


MARKER = BrickType("Marker")


def housing(capacity: int) -> BrickType:
    return BrickType("Housing", capacity)


Pattern = tuple[tuple[ColorCell, ...], ...]


def _rotate_pattern(p: Pattern) -> Pattern:
    return tuple(zip(*p[::-1]))


def _pattern_rotations(p: Pattern) -> list[Pattern]:
    out = [p]
    for _ in range(3):
        out.append(_rotate_pattern(out[-1]))
    return out


@dataclass(frozen=True)
class BrickCode:
    brick: BrickType
    pattern: Pattern

    def __post_init__(self) -> None:
        k = len(self.pattern)
        if k not in (1, 2) or any(len(row) != k for row in self.pattern):
            raise TableError(f"{self.brick}: pattern must be 1x1 or 2x2")
        for row in self.pattern:
            for cell in row:
                if cell is ColorCell.NEUTRAL:
                    raise TableError(f"{self.brick}: pattern may not contain Neutral")
                if cell is ColorCell.WHITE:
                    raise TableError(
                        f"{self.brick}: White reads as empty canvas and cannot encode a brick"
                    )

    @property
    def size(self) -> int:
        return len(self.pattern)


class BrickTable:
    """Rotation-collision-free lookup table from color patterns to brick types."""

    def __init__(self, codes: Sequence[BrickCode]):
        self.codes = tuple(codes)
        seen_types: set[BrickType] = set()
        lookup: dict[Pattern, BrickType] = {}
        for code in self.codes:
            if code.brick in seen_types:
                raise TableError(f"duplicate table entry for {code.brick}")
            seen_types.add(code.brick)
            for rot in _pattern_rotations(code.pattern):
                owner = lookup.get(rot)
                if owner is not None and owner != code.brick:
                    raise TableError(
                        f"rotation collision: {code.brick} pattern matches a rotation of {owner}"
                    )
                lookup[rot] = code.brick
        self._lookup = lookup
        self._by_brick = {code.brick: code for code in self.codes}

    def match(self, pattern: Pattern) -> BrickType | None:
        return self._lookup.get(pattern)

    def pattern_for(self, brick: BrickType) -> Pattern:
        try:
            return self._by_brick[brick].pattern
        except KeyError:
            raise TableError(f"brick {brick} not in table") from None

    def size_of(self, brick: BrickType) -> int:
        return len(self.pattern_for(brick))

    def bricks(self) -> list[BrickType]:
        return list(self._by_brick)

    def to_json(self) -> dict:
        return {
            "bricks": [
                {
                    "brick": code.brick.to_json(),
                    "pattern": [[cell.value for cell in row] for row in code.pattern],
                }
                for code in self.codes
            ]
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BrickTable":
        try:
            entries = doc["bricks"]
        except (TypeError, KeyError):
            raise TableError("table document needs a top-level 'bricks' list") from None
        codes = []
        for entry in entries:
            brick = BrickType.from_json(entry.get("brick", {}))
            try:
                pattern = tuple(
                    tuple(ColorCell(name) for name in row) for row in entry["pattern"]
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise TableError(f"{brick}: bad pattern: {exc}") from exc
            codes.append(BrickCode(brick=brick, pattern=pattern))
        return cls(codes)

    @classmethod
    def load(cls, path: str | Path) -> "BrickTable":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise TableError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_json(doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")


def default_table() -> BrickTable:
    R, G, B, Y, K = (
        ColorCell.RED,
        ColorCell.GREEN,
        ColorCell.BLUE,
        ColorCell.YELLOW,
        ColorCell.BLACK,
    )
    solid = lambda c: ((c, c), (c, c))
    return BrickTable(
        [
            BrickCode(MARKER, ((R,),)),
            BrickCode(housing(40), solid(G)),
            BrickCode(housing(100), solid(B)),
            BrickCode(housing(250), solid(Y)),
            BrickCode(housing(500), solid(K)),
            BrickCode(housing(1000), ((G, B), (B, G))),
            BrickCode(housing(1500), ((R, Y), (Y, R))),
        ]
    )


@dataclass(frozen=True)
class CellFrame:
    cells: tuple[tuple[ColorCell, ...], ...]
    scan_seq: int

    @property
    def rows(self) -> int:
        return len(self.cells)

    @property
    def cols(self) -> int:
        return len(self.cells[0]) if self.cells else 0


def empty_frame(spec: GridSpec, scan_seq: int = 0) -> CellFrame:
    row = (ColorCell.NEUTRAL,) * spec.cols
    return CellFrame(cells=(row,) * spec.rows, scan_seq=scan_seq)


def _check_frame(frame: CellFrame, spec: GridSpec) -> None:
    if frame.rows != spec.rows or any(len(r) != spec.cols for r in frame.cells):
        raise GridError(
            f"frame is {frame.rows}x{frame.cols}, grid expects {spec.rows}x{spec.cols}"
        )


def rotate_frame(frame: CellFrame, quarter_turns: int) -> CellFrame:
    cells = frame.cells
    for _ in range(quarter_turns % 4):
        cells = tuple(zip(*cells[::-1]))
    return CellFrame(cells=cells, scan_seq=frame.scan_seq)


@dataclass(frozen=True)
class Detection:
    brick: BrickType
    at: tuple[int, int]


@dataclass(frozen=True)
class UnknownShape:
    bbox: tuple[int, int, int, int]  # r0, c0, r1, c1 inclusive
    cells: int
    reason: str


@dataclass(frozen=True)
class DecodeResult:
    detections: frozenset[Detection]
    diagnostics: tuple[UnknownShape, ...]
    scan_seq: int


# -- quantize -----------------------------------------------------------------

_DETECTABLE = (
    ColorCell.RED,
    ColorCell.GREEN,
    ColorCell.BLUE,
    ColorCell.YELLOW,
    ColorCell.BLACK,
    ColorCell.WHITE,  # matched, then reported as Neutral (canvas)
)
_PALETTE_MATRIX = np.array([PALETTE_RGB[c] for c in _DETECTABLE], dtype=np.float64)


def quantize(
    image: Image.Image,
    spec: GridSpec,
    scan_seq: int = 0,
    tolerance: float = COLOR_TOLERANCE,
) -> CellFrame:
    """Label each grid cell with the palette color of its central region."""
    expected = spec.pixel_size
    if image.size != expected:
        raise GridError(f"image is {image.size}, grid expects {expected} pixels")
    arr = np.asarray(image.convert("RGB"), dtype=np.float64)
    c = spec.cell_px
    lo, hi = c // 4, c - c // 4
    blocks = arr.reshape(spec.rows, c, spec.cols, c, 3)
    means = blocks[:, lo:hi, :, lo:hi, :].mean(axis=(1, 3))  # rows x cols x 3
    dists = np.linalg.norm(means[:, :, None, :] - _PALETTE_MATRIX[None, None, :, :], axis=3)
    nearest = dists.argmin(axis=2)
    within = dists.min(axis=2) <= tolerance
    cells = []
    for r in range(spec.rows):
        row = []
        for col in range(spec.cols):
            if not within[r, col]:
                row.append(ColorCell.NEUTRAL)
            else:
                color = _DETECTABLE[nearest[r, col]]
                row.append(ColorCell.NEUTRAL if color is ColorCell.WHITE else color)
        cells.append(tuple(row))
    return CellFrame(cells=tuple(cells), scan_seq=scan_seq)


# -- render (synthetic frames for tests, simulation, and the webui path) ------

def validate_placements(
    placements: Iterable[Detection], table: BrickTable, spec: GridSpec
) -> list[Detection]:
    """Check footprints are in-grid, non-overlapping, and non-adjacent.

    Adjacent footprints would merge into one connected region and become
    undecodable, so validity requires a one-cell gap (diagonals allowed).
    """
    placed = sorted(placements, key=lambda d: (d.at, d.brick.kind, d.brick.capacity or 0))
    occupied: dict[tuple[int, int], Detection] = {}
    for det in placed:
        k = table.size_of(det.brick)
        r, c = det.at
        if r < 0 or c < 0 or r + k > spec.rows or c + k > spec.cols:
            raise GridError(f"{det.brick} at {det.at}: {k}x{k} footprint leaves the grid")
        for rr in range(r, r + k):
            for cc in range(c, c + k):
                if (rr, cc) in occupied:
                    raise GridError(f"{det.brick} at {det.at}: overlaps {occupied[(rr, cc)]}")
                occupied[(rr, cc)] = det
    for (r, c), det in occupied.items():
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            other = occupied.get((rr, cc))
            if other is not None and other != det:
                raise GridError(f"{det.brick} at {det.at}: touches {other}; bricks need a gap")
    return placed


def render_cells(
    placements: Iterable[Detection],
    table: BrickTable,
    spec: GridSpec,
    scan_seq: int = 0,
) -> CellFrame:
    """Grid-resolution render: the CellFrame a perfect camera would yield."""
    placed = validate_placements(placements, table, spec)
    grid = [[ColorCell.NEUTRAL] * spec.cols for _ in range(spec.rows)]
    for det in placed:
        pattern = table.pattern_for(det.brick)
        r, c = det.at
        for dr, row in enumerate(pattern):
            for dc, color in enumerate(row):
                grid[r + dr][c + dc] = color
    return CellFrame(cells=tuple(tuple(row) for row in grid), scan_seq=scan_seq)


def render(
    placements: Iterable[Detection],
    table: BrickTable,
    spec: GridSpec,
    scan_seq: int = 0,
) -> Image.Image:
    """Pixel render of the placements on a white canvas."""
    frame = render_cells(placements, table, spec, scan_seq)
    c = spec.cell_px
    arr = np.full((spec.rows * c, spec.cols * c, 3), 255, dtype=np.uint8)
    for r, row in enumerate(frame.cells):
        for col, cell in enumerate(row):
            if cell is not ColorCell.NEUTRAL:
                arr[r * c : (r + 1) * c, col * c : (col + 1) * c] = PALETTE_RGB[cell]
    return Image.fromarray(arr, mode="RGB")


def add_noise(image: Image.Image, amplitude: float = 0.1, seed: int = 0) -> Image.Image:
    """Per-channel uniform multiplicative noise in [1-amplitude, 1+amplitude]."""
    rng = np.random.default_rng(seed)
    arr = np.asarray(image.convert("RGB"), dtype=np.float64)
    noised = arr * rng.uniform(1 - amplitude, 1 + amplitude, size=arr.shape)
    return Image.fromarray(np.clip(np.rint(noised), 0, 255).astype(np.uint8), mode="RGB")


# -- decode -------------------------------------------------------------------

def decode(frame: CellFrame, table: BrickTable) -> DecodeResult:
    """Detect table bricks among the connected colored regions of a frame."""
    rows, cols = frame.rows, frame.cols
    cells = frame.cells
    seen = [[False] * cols for _ in range(rows)]
    detections: set[Detection] = set()
    diagnostics: list[UnknownShape] = []

    for r0 in range(rows):
        for c0 in range(cols):
            if seen[r0][c0] or cells[r0][c0] is ColorCell.NEUTRAL:
                continue
            # flood-fill one 4-connected non-Neutral component
            component = []
            queue = deque([(r0, c0)])
            seen[r0][c0] = True
            while queue:
                r, c = queue.popleft()
                component.append((r, c))
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if (
                        0 <= rr < rows
                        and 0 <= cc < cols
                        and not seen[rr][cc]
                        and cells[rr][cc] is not ColorCell.NEUTRAL
                    ):
                        seen[rr][cc] = True
                        queue.append((rr, cc))
            rmin = min(r for r, _ in component)
            rmax = max(r for r, _ in component)
            cmin = min(c for _, c in component)
            cmax = max(c for _, c in component)
            bbox = (rmin, cmin, rmax, cmax)
            k = rmax - rmin + 1
            if k != cmax - cmin + 1 or k not in (1, 2):
                diagnostics.append(UnknownShape(bbox, len(component), "not a code-sized square"))
                continue
            if len(component) != k * k:
                diagnostics.append(UnknownShape(bbox, len(component), "sparse square region"))
                continue
            pattern = tuple(
                tuple(cells[r][c] for c in range(cmin, cmax + 1)) for r in range(rmin, rmax + 1)
            )
            brick = table.match(pattern)
            if brick is None:
                diagnostics.append(UnknownShape(bbox, len(component), "pattern not in table"))
            else:
                detections.add(Detection(brick=brick, at=(rmin, cmin)))

    return DecodeResult(
        detections=frozenset(detections),
        diagnostics=tuple(sorted(diagnostics, key=lambda d: d.bbox)),
        scan_seq=frame.scan_seq,
    )


# -- quadrant composition -----------------------------------------------------

def split_quadrants(frame: CellFrame, spec: GridSpec) -> tuple[CellFrame, ...]:
    """NW, NE, SW, SE quadrant frames of a full-grid frame."""
    _check_frame(frame, spec)
    qr, qc = spec.quadrant_rows, spec.quadrant_cols
    quads = []
    for r_off in (0, qr):
        for c_off in (0, qc):
            quads.append(
                CellFrame(
                    cells=tuple(
                        tuple(frame.cells[r][c_off : c_off + qc]) for r in range(r_off, r_off + qr)
                    ),
                    scan_seq=frame.scan_seq,
                )
            )
    return tuple(quads)


def compose_quadrants(quadrants: Sequence[CellFrame], spec: GridSpec) -> CellFrame:
    """Stitch NW, NE, SW, SE quadrant frames into one full-grid frame."""
    if len(quadrants) != 4:
        raise GridError(f"expected 4 quadrant frames, got {len(quadrants)}")
    seqs = {q.scan_seq for q in quadrants}
    if len(seqs) != 1:
        raise TornScanError(f"torn scan: quadrant scan_seq values {sorted(seqs)} differ")
    qr, qc = spec.quadrant_rows, spec.quadrant_cols
    for i, q in enumerate(quadrants):
        if q.rows != qr or any(len(row) != qc for row in q.cells):
            raise GridError(f"quadrant {i} is {q.rows}x{q.cols}, expected {qr}x{qc}")
    nw, ne, sw, se = quadrants
    top = tuple(nw.cells[r] + ne.cells[r] for r in range(qr))
    bottom = tuple(sw.cells[r] + se.cells[r] for r in range(qr))
    return CellFrame(cells=top + bottom, scan_seq=quadrants[0].scan_seq)


# -- change detection ---------------------------------------------------------

@dataclass(frozen=True)
class BrickEvent:
    action: str  # "Placed" | "Removed" | "Moved"
    brick: BrickType
    at: tuple[int, int]
    from_: tuple[int, int] | None = None
    scan_seq: int = 0

    def __post_init__(self) -> None:
        if self.action not in ("Placed", "Removed", "Moved"):
            raise GridError(f"unknown brick event action {self.action!r}")
        if self.action == "Moved" and self.from_ is None:
            raise GridError("Moved events carry both from and at anchors")
        if self.action != "Moved" and self.from_ is not None:
            raise GridError(f"{self.action} events carry no from anchor")

    def to_json(self) -> dict:
        doc = {
            "action": self.action,
            "brick": self.brick.to_json(),
            "at": list(self.at),
            "scan_seq": self.scan_seq,
        }
        if self.from_ is not None:
            doc["from"] = list(self.from_)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "BrickEvent":
        return cls(
            action=doc["action"],
            brick=BrickType.from_json(doc["brick"]),
            at=tuple(doc["at"]),
            from_=tuple(doc["from"]) if doc.get("from") is not None else None,
            scan_seq=doc.get("scan_seq", 0),
        )


def diff_scans(prev: DecodeResult, curr: DecodeResult) -> list[BrickEvent]:
    """Translate two successive detection sets into placement change events."""
    gone = prev.detections - curr.detections
    new = curr.detections - prev.detections
    seq = curr.scan_seq

    moved: list[BrickEvent] = []
    gone_by_type: dict[BrickType, list[Detection]] = {}
    new_by_type: dict[BrickType, list[Detection]] = {}
    for d in sorted(gone, key=lambda d: d.at):
        gone_by_type.setdefault(d.brick, []).append(d)
    for d in sorted(new, key=lambda d: d.at):
        new_by_type.setdefault(d.brick, []).append(d)

    removed: list[Detection] = []
    placed: list[Detection] = []
    for brick, olds in gone_by_type.items():
        news = new_by_type.pop(brick, [])
        while olds and news:
            # greedy nearest pair; ties break toward the smaller anchors
            best = min(
                ((abs(o.at[0] - n.at[0]) + abs(o.at[1] - n.at[1]), o.at, n.at, o, n)
                 for o in olds for n in news),
                key=lambda t: t[:3],
            )
            _, _, _, o, n = best
            olds.remove(o)
            news.remove(n)
            moved.append(BrickEvent("Moved", brick, at=n.at, from_=o.at, scan_seq=seq))
        removed.extend(olds)
        placed.extend(news)
    for news in new_by_type.values():
        placed.extend(news)

    events = [BrickEvent("Removed", d.brick, at=d.at, scan_seq=seq) for d in removed]
    events.sort(key=lambda e: e.at)
    moved.sort(key=lambda e: e.at)
    placed_events = [BrickEvent("Placed", d.brick, at=d.at, scan_seq=seq) for d in placed]
    placed_events.sort(key=lambda e: e.at)
    return events + moved + placed_events


def apply_events(
    detections: frozenset[Detection], events: Iterable[BrickEvent]
) -> frozenset[Detection]:
    """Apply change events to a detection set; inverse of diff_scans."""
    out = set(detections)
    for ev in events:
        if ev.action == "Placed":
            out.add(Detection(ev.brick, ev.at))
        elif ev.action == "Removed":
            out.discard(Detection(ev.brick, ev.at))
        else:
            out.discard(Detection(ev.brick, ev.from_))
            out.add(Detection(ev.brick, ev.at))
    return frozenset(out)


def write_event_log(events: Iterable[BrickEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_json(), sort_keys=True) + "\n")


def read_event_log(path: str | Path) -> list[BrickEvent]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(BrickEvent.from_json(json.loads(line)))
    return out


# -- random valid placements (test and simulation support) --------------------

def random_placements(
    rng, table: BrickTable, spec: GridSpec, count: int
) -> list[Detection]:
    """Up to count random non-overlapping, non-adjacent placements."""
    bricks = table.bricks()
    blocked: set[tuple[int, int]] = set()
    out: list[Detection] = []
    anchors = [(r, c) for r in range(spec.rows) for c in range(spec.cols)]
    rng.shuffle(anchors)
    for r, c in anchors:
        if len(out) >= count:
            break
        brick = bricks[rng.randrange(len(bricks))]
        k = table.size_of(brick)
        if r + k > spec.rows or c + k > spec.cols:
            continue
        cells = [(rr, cc) for rr in range(r, r + k) for cc in range(c, c + k)]
        if any(cell in blocked for cell in cells):
            continue
        out.append(Detection(brick, (r, c)))
        for rr, cc in cells:
            blocked.update(
                {(rr, cc), (rr - 1, cc), (rr + 1, cc), (rr, cc - 1), (rr, cc + 1)}
            )
    return out
