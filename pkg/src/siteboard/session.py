"""Workshop session engine: stations, focus areas, proposals, countdown.

A session walks one district through three display stations (city
overview, district, neighborhood). At the neighborhood station a grid
extent is bound to the focus area, and brick events translate into
parcel queries (Marker) or capacity proposals (Housing) that drive a
campaign-wide countdown toward the accommodation target. Every applied
command is appended to a session log; replaying the log reproduces the
final state bit for bit (timestamps are never part of state).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .citygen import DistrictInfo, load_districts
from .geometry import (
    ParcelFileError,
    ParcelSet,
    PlanarPoint,
    RestrictionLayer,
    ingest_parcels,
    load_restriction_layer,
)
from .suitability import (
    SuitabilityAssessment,
    SuitabilityConfig,
    classify_all,
    coverage_fraction,
)
from .tangible import (
    HOUSING_DENOMINATIONS,
    BrickEvent,
    BrickTable,
    GridSpec,
    default_table,
)

DEFAULT_TARGET_TOTAL = 20_000


class SessionError(ValueError):
    """Domain rejection: the command is well-formed but not allowed here."""


class ProtocolError(ValueError):
    """Malformed command: violates the wire/grid contract."""


class Station(Enum):
    CITY_OVERVIEW = "CityOverview"
    DISTRICT = "District"
    NEIGHBORHOOD = "Neighborhood"


class Stance(Enum):
    PRO = "Pro"
    CON = "Con"


TOPICS = ("map_extents", "global_stats", "district_state", "proposals", "parcel_detail")


@dataclass(frozen=True)
class MapExtent:
    min_x: float
    min_y: float
    max_x: float
    max_y: float
    scale_denominator: float = 750.0

    def __post_init__(self) -> None:
        if not (self.min_x < self.max_x and self.min_y < self.max_y):
            raise SessionError("extent min corner must be strictly below max corner")

    def to_json(self) -> dict:
        return {
            "min_x": self.min_x,
            "min_y": self.min_y,
            "max_x": self.max_x,
            "max_y": self.max_y,
        }


@dataclass
class Proposal:
    id: str
    parcel_id: str
    capacity: int
    suitability_at_placement: str
    created_seq: int
    status: str = "Suggested"  # or "Withdrawn"

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "parcel_id": self.parcel_id,
            "capacity": self.capacity,
            "suitability_at_placement": self.suitability_at_placement,
            "created_seq": self.created_seq,
            "status": self.status,
        }


@dataclass(frozen=True)
class LogEntry:
    parcel_id: str
    stance: Stance
    text: str
    created_seq: int

    def to_json(self) -> dict:
        return {
            "parcel_id": self.parcel_id,
            "stance": self.stance.value,
            "text": self.text,
            "created_seq": self.created_seq,
        }


@dataclass(frozen=True)
class StateDelta:
    topic: str
    payload: dict


@dataclass(frozen=True)
class SessionConfig:
    target_total: int = DEFAULT_TARGET_TOTAL
    denominations: tuple[int, ...] = HOUSING_DENOMINATIONS
    city_scale_denominator: float = 5000.0
    district_scale_denominator: float = 750.0
    suitability: SuitabilityConfig = SuitabilityConfig()


@dataclass
class SessionState:
    session_id: str
    district_id: str
    station: Station
    target_total: int
    campaign_base: int  # Suggested capacity carried in from earlier sessions
    grid: GridSpec
    focus: MapExtent | None = None
    proposals: list[Proposal] = field(default_factory=list)
    log: list[LogEntry] = field(default_factory=list)
    seq: int = 0

    def active_proposals(self) -> list[Proposal]:
        return [p for p in self.proposals if p.status == "Suggested"]

    def session_capacity(self) -> int:
        return sum(p.capacity for p in self.active_proposals())

    def proposed_total(self) -> int:
        return self.campaign_base + self.session_capacity()

    def remaining(self) -> int:
        return self.target_total - self.proposed_total()

    def status(self) -> str:
        r = self.remaining()
        if r > 0:
            return "open"
        return "target met" if r == 0 else "target exceeded"

    def active_on_parcel(self, parcel_id: str) -> Proposal | None:
        for p in self.proposals:
            if p.status == "Suggested" and p.parcel_id == parcel_id:
                return p
        return None


def state_dict(state: SessionState) -> dict:
    """Canonical serialization of everything that defines session state."""
    return {
        "session_id": state.session_id,
        "district_id": state.district_id,
        "station": state.station.value,
        "target_total": state.target_total,
        "campaign_base": state.campaign_base,
        "grid": {"rows": state.grid.rows, "cols": state.grid.cols},
        "focus": None
        if state.focus is None
        else {**state.focus.to_json(), "scale_denominator": state.focus.scale_denominator},
        "proposals": [p.to_json() for p in state.proposals],
        "log": [e.to_json() for e in state.log],
        "seq": state.seq,
        "remaining": state.remaining(),
    }


def state_hash(state: SessionState) -> str:
    blob = json.dumps(state_dict(state), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- dataset ------------------------------------------------------------------

@dataclass
class SessionDataset:
    """Immutable inputs a session runs against."""

    parcel_set: ParcelSet
    layers: list[RestrictionLayer]
    districts: dict[str, DistrictInfo]
    table: BrickTable
    config: SessionConfig
    assessments: dict[str, SuitabilityAssessment] = field(default_factory=dict)
    _detail_cache: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.assessments:
            self.assessments = {
                a.parcel_id: a
                for a in classify_all(self.parcel_set, self.layers, self.config.suitability)
            }

    @classmethod
    def load(cls, data_dir: str | Path, config: SessionConfig | None = None) -> "SessionDataset":
        data_dir = Path(data_dir)
        parcel_file = data_dir / "parcels.geojson"
        if not parcel_file.exists():
            raise ParcelFileError(f"{parcel_file}: no parcel file in data directory")
        result = ingest_parcels(parcel_file)
        layers = []
        layer_dir = data_dir / "layers"
        if layer_dir.is_dir():
            for p in sorted(layer_dir.glob("*.geojson")):
                layers.append(load_restriction_layer(p))
        districts_file = data_dir / "districts.json"
        if not districts_file.exists():
            raise ParcelFileError(f"{districts_file}: no districts file in data directory")
        districts = {d.id: d for d in load_districts(districts_file)}
        table_file = data_dir / "bricks" / "table.json"
        table = BrickTable.load(table_file) if table_file.exists() else default_table()
        if config is None:
            # accepted housing denominations follow the loaded brick table
            caps = sorted(b.capacity for b in table.bricks() if b.kind == "Housing")
            config = SessionConfig(denominations=tuple(caps))
        return cls(
            parcel_set=result.parcel_set,
            layers=layers,
            districts=districts,
            table=table,
            config=config,
        )

    def district(self, district_id: str) -> DistrictInfo:
        try:
            return self.districts[district_id]
        except KeyError:
            raise SessionError(f"unknown district {district_id!r}") from None

    def parcel_detail(self, parcel_id: str) -> dict:
        """Attribute card shown when a Marker queries a parcel."""
        cached = self._detail_cache.get(parcel_id)
        if cached is not None:
            return cached
        parcel = self.parcel_set.get(parcel_id)
        assessment = self.assessments[parcel_id]
        restrictions = []
        for layer in self.layers:
            frac = coverage_fraction(parcel, layer)
            if frac > 0.0:
                restrictions.append({"layer": layer.name, "coverage": frac})
        regulations = sorted(
            key for key, value in parcel.attributes.items() if value is True
        )
        detail = {
            "parcel_id": parcel_id,
            "area_m2": parcel.area_m2,
            "designation": parcel.designation,
            "city_owned": parcel.city_owned,
            "regulations": regulations,
            "restrictions": restrictions,
            "suitability": assessment.suitability.value,
            "capacity": assessment.capacity,
        }
        self._detail_cache[parcel_id] = detail
        return detail


# -- extents and grid mapping -------------------------------------------------

def district_extent(ds: SessionDataset, district_id: str) -> MapExtent:
    b = ds.district(district_id).bounds
    return MapExtent(b[0], b[1], b[2], b[3], ds.config.district_scale_denominator)


def city_extent(ds: SessionDataset) -> MapExtent:
    bs = [d.bounds for d in ds.districts.values()]
    return MapExtent(
        min(b[0] for b in bs),
        min(b[1] for b in bs),
        max(b[2] for b in bs),
        max(b[3] for b in bs),
        ds.config.city_scale_denominator,
    )


def footprint_center(extent: MapExtent, grid: GridSpec, at: tuple[int, int], k: int) -> PlanarPoint:
    """Map a k x k footprint anchored at grid cell (row, col) to the plane.

    Row 0 is the north edge of the extent.
    """
    r, c = at
    fx = (c + k / 2.0) / grid.cols
    fy = (r + k / 2.0) / grid.rows
    return PlanarPoint(
        extent.min_x + fx * (extent.max_x - extent.min_x),
        extent.max_y - fy * (extent.max_y - extent.min_y),
    )


# -- delta construction -------------------------------------------------------

def _stats_payload(state: SessionState) -> dict:
    return {
        "session_id": state.session_id,
        "seq": state.seq,
        "target_total": state.target_total,
        "proposed_total": state.proposed_total(),
        "remaining": state.remaining(),
        "session_active_proposals": len(state.active_proposals()),
        "status": state.status(),
    }


def _district_payload(ds: SessionDataset, state: SessionState) -> dict:
    d = ds.district(state.district_id)
    return {
        "session_id": state.session_id,
        "seq": state.seq,
        "district_id": d.id,
        "name": d.name,
        "population": d.population,
        "current_refugees": d.current_refugees,
        "session_active_proposals": len(state.active_proposals()),
        "session_proposed_capacity": state.session_capacity(),
    }


def _extent_payload(state: SessionState, extent: MapExtent) -> dict:
    return {
        "session_id": state.session_id,
        "seq": state.seq,
        "district_id": state.district_id,
        "station": state.station.value,
        "extent": extent.to_json(),
        "scale_denominator": extent.scale_denominator,
    }


def _proposals_payload(state: SessionState, kind: str, proposal: Proposal) -> dict:
    return {
        "session_id": state.session_id,
        "seq": state.seq,
        "kind": kind,
        "proposal": proposal.to_json(),
        "active": [p.to_json() for p in state.active_proposals()],
        "session_proposed_capacity": state.session_capacity(),
    }


def _detail_delta(state: SessionState, body: dict) -> StateDelta:
    return StateDelta("parcel_detail", {"session_id": state.session_id, "seq": state.seq, **body})


# -- operations ---------------------------------------------------------------

def start_session(
    ds: SessionDataset,
    session_id: str,
    district_id: str,
    campaign_totals: int = 0,
    target_total: int | None = None,
) -> tuple[SessionState, list[StateDelta]]:
    district = ds.district(district_id)  # raises for unknown districts
    state = SessionState(
        session_id=session_id,
        district_id=district.id,
        station=Station.CITY_OVERVIEW,
        target_total=ds.config.target_total if target_total is None else target_total,
        campaign_base=campaign_totals,
        grid=GridSpec(),
        seq=1,
    )
    deltas = [
        StateDelta("map_extents", _extent_payload(state, city_extent(ds))),
        StateDelta("global_stats", _stats_payload(state)),
        StateDelta("district_state", _district_payload(ds, state)),
    ]
    return state, deltas


def change_station(ds: SessionDataset, state: SessionState, to: Station) -> list[StateDelta]:
    allowed = {
        (Station.CITY_OVERVIEW, Station.DISTRICT),
        (Station.NEIGHBORHOOD, Station.DISTRICT),
    }
    if (state.station, to) not in allowed:
        if to is Station.NEIGHBORHOOD:
            raise SessionError(
                f"cannot jump from {state.station.value} to Neighborhood; select a focus area"
            )
        raise SessionError(f"station transition {state.station.value} -> {to.value} not allowed")
    state.seq += 1
    state.station = to
    state.focus = None
    return [StateDelta("map_extents", _extent_payload(state, district_extent(ds, state.district_id)))]


def select_focus(ds: SessionDataset, state: SessionState, extent: MapExtent) -> list[StateDelta]:
    if state.station is not Station.DISTRICT:
        raise SessionError(
            f"focus areas are selected at the District station, not {state.station.value}"
        )
    bounds = ds.district(state.district_id).bounds
    overflow = []
    if extent.min_x < bounds[0]:
        overflow.append("west")
    if extent.min_y < bounds[1]:
        overflow.append("south")
    if extent.max_x > bounds[2]:
        overflow.append("east")
    if extent.max_y > bounds[3]:
        overflow.append("north")
    if overflow:
        raise SessionError(
            f"focus extent leaves the district on the {', '.join(overflow)} side"
        )
    district_width = bounds[2] - bounds[0]
    scale = ds.config.district_scale_denominator * (
        (extent.max_x - extent.min_x) / district_width
    )
    focus = MapExtent(extent.min_x, extent.min_y, extent.max_x, extent.max_y, scale)
    state.seq += 1
    state.station = Station.NEIGHBORHOOD
    state.focus = focus
    return [StateDelta("map_extents", _extent_payload(state, focus))]


def _withdraw(ds: SessionDataset, state: SessionState, proposal: Proposal) -> list[StateDelta]:
    proposal.status = "Withdrawn"
    return [
        StateDelta("proposals", _proposals_payload(state, "withdrawn", proposal)),
        StateDelta("global_stats", _stats_payload(state)),
        StateDelta("district_state", _district_payload(ds, state)),
    ]


def _propose(
    ds: SessionDataset, state: SessionState, parcel_id: str, capacity: int
) -> list[StateDelta]:
    proposal = Proposal(
        id=f"prop-{state.seq:06d}",
        parcel_id=parcel_id,
        capacity=capacity,
        suitability_at_placement=ds.assessments[parcel_id].suitability.value,
        created_seq=state.seq,
    )
    state.proposals.append(proposal)
    return [
        StateDelta("proposals", _proposals_payload(state, "created", proposal)),
        StateDelta("global_stats", _stats_payload(state)),
        StateDelta("district_state", _district_payload(ds, state)),
    ]


def apply_brick_event(
    ds: SessionDataset, state: SessionState, ev: BrickEvent
) -> list[StateDelta]:
    if state.station is not Station.NEIGHBORHOOD or state.focus is None:
        raise SessionError("brick events apply only at the Neighborhood station with a focus bound")
    if ev.brick.kind == "Housing" and ev.brick.capacity not in ds.config.denominations:
        raise SessionError(
            f"capacity {ev.brick.capacity} not in configured denominations {ds.config.denominations}"
        )
    k = ds.table.size_of(ev.brick)
    for anchor in (ev.at, ev.from_) if ev.from_ is not None else (ev.at,):
        r, c = anchor
        if r < 0 or c < 0 or r + k > state.grid.rows or c + k > state.grid.cols:
            raise ProtocolError(f"anchor {anchor} puts a {k}x{k} footprint outside the grid")

    state.seq += 1
    point = footprint_center(state.focus, state.grid, ev.at, k)
    parcel_id = ds.parcel_set.locate(point)

    if ev.brick.kind == "Marker":
        if ev.action == "Removed":
            return [_detail_delta(state, {"kind": "cleared"})]
        if parcel_id is None:
            return [_detail_delta(state, {"kind": "no_parcel", "at": {"x": point.x, "y": point.y}})]
        return [_detail_delta(state, {"kind": "detail", "detail": ds.parcel_detail(parcel_id)})]

    # Housing
    if ev.action == "Placed":
        if parcel_id is None:
            return [_detail_delta(state, {"kind": "no_parcel", "at": {"x": point.x, "y": point.y}})]
        existing = state.active_on_parcel(parcel_id)
        if existing is not None:
            return [
                _detail_delta(
                    state,
                    {
                        "kind": "rejected",
                        "parcel_id": parcel_id,
                        "reason": f"parcel already carries active proposal {existing.id}",
                    },
                )
            ]
        return _propose(ds, state, parcel_id, ev.brick.capacity)

    if ev.action == "Removed":
        if parcel_id is None:
            return [_detail_delta(state, {"kind": "no_parcel", "at": {"x": point.x, "y": point.y}})]
        proposal = state.active_on_parcel(parcel_id)
        if proposal is None:
            return [
                _detail_delta(
                    state,
                    {
                        "kind": "rejected",
                        "parcel_id": parcel_id,
                        "reason": "no active proposal to withdraw on this parcel",
                    },
                )
            ]
        return _withdraw(ds, state, proposal)

    # Moved: withdraw at the origin cell, then propose at the target cell
    deltas: list[StateDelta] = []
    from_point = footprint_center(state.focus, state.grid, ev.from_, k)
    from_parcel = ds.parcel_set.locate(from_point)
    if from_parcel is not None:
        proposal = state.active_on_parcel(from_parcel)
        if proposal is not None:
            deltas.extend(_withdraw(ds, state, proposal))
    if parcel_id is None:
        deltas.append(
            _detail_delta(state, {"kind": "no_parcel", "at": {"x": point.x, "y": point.y}})
        )
        return deltas
    existing = state.active_on_parcel(parcel_id)
    if existing is not None:
        deltas.append(
            _detail_delta(
                state,
                {
                    "kind": "rejected",
                    "parcel_id": parcel_id,
                    "reason": f"parcel already carries active proposal {existing.id}",
                },
            )
        )
        return deltas
    deltas.extend(_propose(ds, state, parcel_id, ev.brick.capacity))
    return deltas


def log_comment(
    ds: SessionDataset, state: SessionState, parcel_id: str, stance: Stance, text: str
) -> list[StateDelta]:
    if parcel_id not in ds.parcel_set:
        raise SessionError(f"unknown parcel {parcel_id!r}")
    if not text or not text.strip():
        raise SessionError("comment text must be non-empty")
    state.seq += 1
    state.log.append(LogEntry(parcel_id=parcel_id, stance=stance, text=text, created_seq=state.seq))
    return []


def export_suggestions(ds: SessionDataset, state: SessionState) -> list[dict]:
    """Suggested proposals with parcel details and comments, by created_seq."""
    comments_by_parcel: dict[str, list[dict]] = {}
    for entry in state.log:
        comments_by_parcel.setdefault(entry.parcel_id, []).append(entry.to_json())
    out = []
    for p in sorted(state.active_proposals(), key=lambda p: p.created_seq):
        out.append(
            {
                "proposal": p.to_json(),
                "parcel_detail": ds.parcel_detail(p.parcel_id),
                "comments": comments_by_parcel.get(p.parcel_id, []),
            }
        )
    return out


def write_suggestions(suggestions: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in suggestions:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_suggestions(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


# -- command dispatch (shared by live serving and headless replay) -------------

def apply_command(ds: SessionDataset, state: SessionState, cmd: dict) -> list[StateDelta]:
    """Apply one logged/scripted command; the single write path for a session."""
    kind = cmd.get("kind")
    if kind == "change_station":
        try:
            to = Station(cmd["to"])
        except (KeyError, ValueError) as exc:
            raise ProtocolError(f"bad change_station command: {exc}") from exc
        return change_station(ds, state, to)
    if kind == "select_focus":
        try:
            e = cmd["extent"]
            extent = MapExtent(e["min_x"], e["min_y"], e["max_x"], e["max_y"])
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"bad select_focus command: {exc}") from exc
        return select_focus(ds, state, extent)
    if kind == "brick":
        try:
            ev = BrickEvent.from_json(cmd["event"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad brick command: {exc}") from exc
        return apply_brick_event(ds, state, ev)
    if kind == "comment":
        try:
            stance = Stance(cmd["stance"])
        except (KeyError, ValueError) as exc:
            raise ProtocolError(f"bad comment command: {exc}") from exc
        return log_comment(ds, state, cmd.get("parcel_id", ""), stance, cmd.get("text", ""))
    raise ProtocolError(f"unknown command kind {kind!r}")


# -- session store ------------------------------------------------------------

class SessionStore:
    """Append-only per-session command logs plus a campaign totals file."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._campaign_file = self.root / "campaign.json"

    def _log_path(self, session_id: str) -> Path:
        return self.root / f"session-{session_id}.ndjson"

    def append(self, session_id: str, record: dict) -> None:
        with open(self._log_path(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()

    def read_log(self, session_id: str) -> list[dict]:
        path = self._log_path(session_id)
        if not path.exists():
            return []
        out = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    def session_ids(self) -> list[str]:
        return sorted(p.stem.removeprefix("session-") for p in self.root.glob("session-*.ndjson"))

    def campaign_totals(self) -> int:
        if not self._campaign_file.exists():
            return 0
        doc = json.loads(self._campaign_file.read_text(encoding="utf-8"))
        return sum(doc.get("sessions", {}).values())

    def record_session_total(self, session_id: str, active_capacity: int) -> None:
        doc = {"sessions": {}}
        if self._campaign_file.exists():
            doc = json.loads(self._campaign_file.read_text(encoding="utf-8"))
            doc.setdefault("sessions", {})
        doc["sessions"][session_id] = active_capacity
        self._campaign_file.write_text(
            json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )


def log_record(seq: int, kind: str, body: dict) -> dict:
    """A session-log line; ts is informational and excluded from all hashes."""
    return {"seq": seq, "kind": kind, "ts": int(time.time() * 1000), **body}


def start_and_log(
    ds: SessionDataset,
    store: SessionStore,
    session_id: str,
    district_id: str,
    target_total: int | None = None,
) -> tuple[SessionState, list[StateDelta]]:
    campaign = store.campaign_totals()
    state, deltas = start_session(ds, session_id, district_id, campaign, target_total)
    store.append(
        session_id,
        log_record(
            state.seq,
            "session_started",
            {
                "session_id": session_id,
                "district_id": district_id,
                "target_total": state.target_total,
                "campaign_base": campaign,
            },
        ),
    )
    return state, deltas


def apply_and_log(
    ds: SessionDataset, store: SessionStore, state: SessionState, cmd: dict
) -> list[StateDelta]:
    deltas = apply_command(ds, state, cmd)
    store.append(state.session_id, log_record(state.seq, "command", {"command": cmd}))
    return deltas


def replay_log(ds: SessionDataset, records: list[dict]) -> SessionState:
    """Rebuild a session state from its captured log."""
    if not records or records[0].get("kind") != "session_started":
        raise ProtocolError("session log must start with a session_started record")
    head = records[0]
    state, _ = start_session(
        ds,
        head["session_id"],
        head["district_id"],
        campaign_totals=head.get("campaign_base", 0),
        target_total=head.get("target_total"),
    )
    for record in records[1:]:
        if record.get("kind") != "command":
            raise ProtocolError(f"unexpected log record kind {record.get('kind')!r}")
        apply_command(ds, state, record["command"])
    return state
