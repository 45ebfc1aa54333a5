import json
from importlib import resources

import jsonschema
import pytest

from siteboard.citygen import DistrictInfo
from siteboard.geometry import ParcelSet, Parcel, PlanarPoint, PolygonShape, RestrictionLayer, Severity
from siteboard.session import (
    MapExtent,
    ProtocolError,
    SessionConfig,
    SessionDataset,
    SessionError,
    SessionStore,
    Stance,
    Station,
    apply_and_log,
    apply_brick_event,
    apply_command,
    change_station,
    city_extent,
    export_suggestions,
    footprint_center,
    log_comment,
    replay_log,
    select_focus,
    start_and_log,
    start_session,
    state_hash,
    write_suggestions,
    read_suggestions,
)
from siteboard.tangible import MARKER, BrickEvent, GridSpec, default_table, housing


def rect(x0, y0, w, h):
    ring = (
        PlanarPoint(x0, y0),
        PlanarPoint(x0 + w, y0),
        PlanarPoint(x0 + w, y0 + h),
        PlanarPoint(x0, y0 + h),
        PlanarPoint(x0, y0),
    )
    return PolygonShape(ring)


@pytest.fixture()
def ds():
    parcels = [
        Parcel.build("pa", (rect(100, 100, 100, 100),), city_owned=True, designation="vacant",
                     attributes={"district": "d1"}),
        Parcel.build("pb", (rect(300, 100, 100, 80),), city_owned=True, designation="vacant",
                     attributes={"district": "d1"}),
        Parcel.build("pc", (rect(500, 500, 100, 100),), city_owned=False, designation="park",
                     attributes={"district": "d1"}),
    ]
    layers = [
        RestrictionLayer("nature_conservation", Severity.HIGHLY_RESTRICTIVE, (rect(300, 100, 50, 80),)),
        RestrictionLayer("parks", Severity.LESS_RESTRICTIVE, (rect(500, 500, 100, 100),)),
    ]
    districts = {
        "d1": DistrictInfo("d1", "District 1", (0.0, 0.0, 1000.0, 1000.0), 120000, 1500),
        "d2": DistrictInfo("d2", "District 2", (1000.0, 0.0, 2000.0, 1000.0), 90000, 800),
    }
    return SessionDataset(
        parcel_set=ParcelSet(parcels),
        layers=layers,
        districts=districts,
        table=default_table(),
        config=SessionConfig(),
    )


def to_neighborhood(ds_, state, extent):
    change_station(ds_, state, Station.DISTRICT)
    select_focus(ds_, state, extent)


PA_EXTENT = MapExtent(100, 100, 200, 200)
BRICK_CENTER = (15, 15)  # 2x2 footprint centered on the focus extent


class TestStartSession:
    def test_fresh_campaign(self, ds):
        state, deltas = start_session(ds, "s1", "d1")
        assert state.station is Station.CITY_OVERVIEW
        assert state.remaining() == 20_000
        assert state.status() == "open"
        assert [d.topic for d in deltas] == ["map_extents", "global_stats", "district_state"]
        assert deltas[1].payload["remaining"] == 20_000

    def test_campaign_totals_met(self, ds):
        state, _ = start_session(ds, "s1", "d1", campaign_totals=20_000)
        assert state.remaining() == 0
        assert state.status() == "target met"

    def test_campaign_totals_exceeded(self, ds):
        state, _ = start_session(ds, "s1", "d1", campaign_totals=24_000)
        assert state.remaining() == -4_000
        assert state.status() == "target exceeded"

    def test_unknown_district(self, ds):
        with pytest.raises(SessionError, match="unknown district"):
            start_session(ds, "s1", "nowhere")

    def test_city_extent_covers_all_districts(self, ds):
        e = city_extent(ds)
        assert (e.min_x, e.min_y, e.max_x, e.max_y) == (0.0, 0.0, 2000.0, 1000.0)


class TestStations:
    def test_allowed_walk(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        deltas = change_station(ds, state, Station.DISTRICT)
        assert state.station is Station.DISTRICT
        assert deltas[0].payload["station"] == "District"
        select_focus(ds, state, PA_EXTENT)
        assert state.station is Station.NEIGHBORHOOD
        change_station(ds, state, Station.DISTRICT)
        assert state.station is Station.DISTRICT
        assert state.focus is None

    def test_jump_to_neighborhood_rejected(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        change_station(ds, state, Station.DISTRICT)
        with pytest.raises(SessionError, match="select a focus"):
            change_station(ds, state, Station.NEIGHBORHOOD)

    def test_back_to_overview_rejected(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        change_station(ds, state, Station.DISTRICT)
        with pytest.raises(SessionError, match="not allowed"):
            change_station(ds, state, Station.CITY_OVERVIEW)


class TestSelectFocus:
    def test_focus_within_district(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        change_station(ds, state, Station.DISTRICT)
        deltas = select_focus(ds, state, PA_EXTENT)
        assert state.focus is not None
        assert deltas[0].payload["extent"]["min_x"] == 100
        # zooming to a tenth of the district shrinks the scale denominator
        assert deltas[0].payload["scale_denominator"] == pytest.approx(75.0)

    def test_full_district_focus_allowed(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        change_station(ds, state, Station.DISTRICT)
        select_focus(ds, state, MapExtent(0, 0, 1000, 1000))
        assert state.focus.scale_denominator == pytest.approx(750.0)

    def test_overflow_names_sides(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        change_station(ds, state, Station.DISTRICT)
        with pytest.raises(SessionError, match="east"):
            select_focus(ds, state, MapExtent(900, 100, 1100, 200))
        with pytest.raises(SessionError, match="west, south"):
            select_focus(ds, state, MapExtent(-10, -10, 200, 200))

    def test_wrong_station_rejected(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        with pytest.raises(SessionError, match="District station"):
            select_focus(ds, state, PA_EXTENT)


class TestBrickEvents:
    def test_marker_queries_parcel_detail(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, PA_EXTENT)
        deltas = apply_brick_event(ds, state, BrickEvent("Placed", MARKER, at=BRICK_CENTER, scan_seq=1))
        assert len(deltas) == 1
        payload = deltas[0].payload
        assert payload["kind"] == "detail"
        assert payload["detail"]["parcel_id"] == "pa"
        assert payload["detail"]["area_m2"] == 10_000.0
        assert payload["detail"]["suitability"] == "low"
        assert payload["detail"]["capacity"] == 333
        assert state.proposals == []

    def test_marker_on_restricted_parcel_reports_layers(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, MapExtent(300, 100, 400, 180))
        deltas = apply_brick_event(ds, state, BrickEvent("Placed", MARKER, at=BRICK_CENTER, scan_seq=1))
        detail = deltas[0].payload["detail"]
        assert detail["parcel_id"] == "pb"
        assert detail["suitability"] == "high"
        assert detail["restrictions"] == [{"layer": "nature_conservation", "coverage": 0.5}]

    def test_housing_placed_counts_down(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, PA_EXTENT)
        deltas = apply_brick_event(ds, state, BrickEvent("Placed", housing(500), at=BRICK_CENTER, scan_seq=1))
        assert [d.topic for d in deltas] == ["proposals", "global_stats", "district_state"]
        assert state.remaining() == 19_500
        assert deltas[0].payload["kind"] == "created"
        assert deltas[0].payload["proposal"]["parcel_id"] == "pa"
        assert deltas[1].payload["remaining"] == 19_500
        assert deltas[2].payload["session_proposed_capacity"] == 500

    def test_conflicting_proposal_rejected(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, PA_EXTENT)
        apply_brick_event(ds, state, BrickEvent("Placed", housing(500), at=BRICK_CENTER, scan_seq=1))
        deltas = apply_brick_event(ds, state, BrickEvent("Placed", housing(100), at=(2, 2), scan_seq=2))
        assert len(deltas) == 1
        assert deltas[0].payload["kind"] == "rejected"
        assert "active proposal" in deltas[0].payload["reason"]
        assert state.remaining() == 19_500

    def test_remove_restores_remaining(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, PA_EXTENT)
        apply_brick_event(ds, state, BrickEvent("Placed", housing(100), at=BRICK_CENTER, scan_seq=1))
        before_active = {p.id for p in state.active_proposals()}
        deltas = apply_brick_event(ds, state, BrickEvent("Removed", housing(100), at=BRICK_CENTER, scan_seq=2))
        assert state.remaining() == 20_000
        assert state.active_proposals() == []
        assert deltas[0].payload["kind"] == "withdrawn"
        assert deltas[0].payload["proposal"]["id"] in before_active

    def test_no_parcel_cell_is_diagnostic(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, MapExtent(0, 0, 1000, 1000))
        deltas = apply_brick_event(ds, state, BrickEvent("Placed", housing(40), at=(0, 0), scan_seq=1))
        assert deltas[0].payload["kind"] == "no_parcel"
        assert state.proposals == []

    def test_moved_housing_transfers_proposal(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, MapExtent(100, 100, 400, 400))
        # footprint center (9,21) -> fx 22/32 -> x = 100 + 0.6875*300 = 306.25 -> pb? pb spans y 100..180
        # compute instead: place on pa via its center cell
        # pa center (150,150): fx = (150-100)/300 = 1/6 -> c + 1 = 32/6 -> c = 4.33; use explicit centers
        pa_anchor = (26, 4)  # fx=(4+1)/32=0.15625 -> x=146.875; fy=(26+1)/32=0.84375 -> y=400-253.125=146.875
        pb_anchor = (27, 23)  # x = 100+0.75*300 = 325, y = 400-0.875*300 = 137.5 -> inside pb
        deltas = apply_brick_event(ds, state, BrickEvent("Placed", housing(250), at=pa_anchor, scan_seq=1))
        assert deltas[0].payload["proposal"]["parcel_id"] == "pa"
        deltas = apply_brick_event(
            ds, state, BrickEvent("Moved", housing(250), at=pb_anchor, from_=pa_anchor, scan_seq=2)
        )
        kinds = [(d.topic, d.payload.get("kind")) for d in deltas]
        assert ("proposals", "withdrawn") in kinds and ("proposals", "created") in kinds
        active = state.active_proposals()
        assert len(active) == 1 and active[0].parcel_id == "pb"
        assert state.remaining() == 19_750

    def test_out_of_grid_anchor_is_protocol_error(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, PA_EXTENT)
        with pytest.raises(ProtocolError, match="outside the grid"):
            apply_brick_event(ds, state, BrickEvent("Placed", housing(40), at=(31, 31), scan_seq=1))

    def test_brick_before_focus_rejected(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        with pytest.raises(SessionError, match="Neighborhood"):
            apply_brick_event(ds, state, BrickEvent("Placed", housing(40), at=(5, 5), scan_seq=1))

    def test_unknown_denomination_rejected(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, PA_EXTENT)
        with pytest.raises(SessionError, match="denominations"):
            apply_brick_event(ds, state, BrickEvent("Placed", housing(999), at=BRICK_CENTER, scan_seq=1))

    def test_countdown_conservation_through_random_stream(self, ds):
        import random

        rng = random.Random(3)
        state, _ = start_session(ds, "s1", "d1", campaign_totals=750)
        to_neighborhood(ds, state, MapExtent(0, 0, 1000, 1000))
        anchors = {"pa": (26, 4), "pb": (27, 10), "pc": (14, 16)}
        expected_active: dict[str, int] = {}
        for step in range(200):
            pid = rng.choice(list(anchors))
            at = anchors[pid]
            cap = rng.choice([40, 100, 250, 500, 1000, 1500])
            if rng.random() < 0.5:
                apply_brick_event(ds, state, BrickEvent("Placed", housing(cap), at=at, scan_seq=step))
                if pid not in expected_active:
                    expected_active[pid] = cap
            else:
                apply_brick_event(ds, state, BrickEvent("Removed", housing(cap), at=at, scan_seq=step))
                expected_active.pop(pid, None)
            assert state.remaining() == 20_000 - 750 - sum(expected_active.values()), step

    def test_anchor_mapping_is_extent_center(self, ds):
        p = footprint_center(MapExtent(100, 100, 200, 200), GridSpec(), (15, 15), 2)
        assert (p.x, p.y) == (150.0, 150.0)
        # row 0 is north: a brick at the top maps to high y
        top = footprint_center(MapExtent(0, 0, 320, 320), GridSpec(), (0, 0), 2)
        assert top.y > 300


class TestComments:
    def test_comment_appended(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        log_comment(ds, state, "pa", Stance.PRO, "near transit")
        assert len(state.log) == 1
        assert state.log[0].stance is Stance.PRO

    def test_empty_text_rejected(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        with pytest.raises(SessionError, match="non-empty"):
            log_comment(ds, state, "pa", Stance.CON, "   ")

    def test_unknown_parcel_rejected(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        with pytest.raises(SessionError, match="unknown parcel"):
            log_comment(ds, state, "zz", Stance.PRO, "hm")

    def test_export_groups_comments_by_parcel_in_seq_order(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, MapExtent(0, 0, 1000, 1000))
        apply_brick_event(ds, state, BrickEvent("Placed", housing(40), at=(26, 4), scan_seq=1))
        apply_brick_event(ds, state, BrickEvent("Placed", housing(100), at=(27, 10), scan_seq=2))
        log_comment(ds, state, "pa", Stance.PRO, "first")
        log_comment(ds, state, "pb", Stance.CON, "noisy")
        log_comment(ds, state, "pa", Stance.CON, "second")
        export = export_suggestions(ds, state)
        by_parcel = {e["proposal"]["parcel_id"]: e for e in export}
        texts = [c["text"] for c in by_parcel["pa"]["comments"]]
        assert texts == ["first", "second"]
        assert [c["text"] for c in by_parcel["pb"]["comments"]] == ["noisy"]


class TestExport:
    def test_empty_session(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        assert export_suggestions(ds, state) == []

    def test_withdrawn_excluded(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, MapExtent(0, 0, 1000, 1000))
        apply_brick_event(ds, state, BrickEvent("Placed", housing(40), at=(26, 4), scan_seq=1))
        apply_brick_event(ds, state, BrickEvent("Placed", housing(100), at=(27, 10), scan_seq=2))
        apply_brick_event(ds, state, BrickEvent("Placed", housing(250), at=(14, 16), scan_seq=3))
        apply_brick_event(ds, state, BrickEvent("Removed", housing(100), at=(27, 10), scan_seq=4))
        export = export_suggestions(ds, state)
        assert len(export) == 2
        assert [e["proposal"]["parcel_id"] for e in export] == ["pa", "pc"]

    def test_ndjson_round_trip(self, ds, tmp_path):
        state, _ = start_session(ds, "s1", "d1")
        to_neighborhood(ds, state, PA_EXTENT)
        apply_brick_event(ds, state, BrickEvent("Placed", housing(500), at=BRICK_CENTER, scan_seq=1))
        export = export_suggestions(ds, state)
        path = tmp_path / "suggestions.ndjson"
        write_suggestions(export, path)
        assert read_suggestions(path) == export


class TestReplayDeterminism:
    def _script(self):
        return [
            {"kind": "change_station", "to": "District"},
            {"kind": "select_focus", "extent": {"min_x": 100, "min_y": 100, "max_x": 200, "max_y": 200}},
            {"kind": "brick", "event": {"action": "Placed", "brick": {"kind": "Housing", "capacity": 500},
                                        "at": [15, 15], "scan_seq": 4}},
            {"kind": "comment", "parcel_id": "pa", "stance": "Pro", "text": "quiet area"},
            {"kind": "brick", "event": {"action": "Removed", "brick": {"kind": "Housing", "capacity": 500},
                                        "at": [15, 15], "scan_seq": 5}},
            {"kind": "brick", "event": {"action": "Placed", "brick": {"kind": "Housing", "capacity": 250},
                                        "at": [15, 15], "scan_seq": 6}},
        ]

    def test_logged_session_replays_to_identical_hash(self, ds, tmp_path):
        store = SessionStore(tmp_path / "store")
        state, _ = start_and_log(ds, store, "s1", "d1")
        for cmd in self._script():
            apply_and_log(ds, store, state, cmd)
        live_hash = state_hash(state)

        replayed = replay_log(ds, store.read_log("s1"))
        assert state_hash(replayed) == live_hash
        assert replayed.remaining() == state.remaining() == 19_750

    def test_replay_is_stable_across_runs(self, ds):
        def run():
            state, _ = start_session(ds, "s1", "d1")
            for cmd in self._script():
                apply_command(ds, state, cmd)
            return state_hash(state)

        assert run() == run()

    def test_unknown_command_kind(self, ds):
        state, _ = start_session(ds, "s1", "d1")
        with pytest.raises(ProtocolError, match="unknown command"):
            apply_command(ds, state, {"kind": "dance"})


class TestSessionStore:
    def test_campaign_totals_accumulate(self, tmp_path):
        store = SessionStore(tmp_path)
        assert store.campaign_totals() == 0
        store.record_session_total("s1", 1500)
        store.record_session_total("s2", 750)
        assert store.campaign_totals() == 2250
        store.record_session_total("s1", 1000)  # rewrite, not double-count
        assert store.campaign_totals() == 1750

    def test_second_session_starts_from_campaign(self, ds, tmp_path):
        store = SessionStore(tmp_path)
        state, _ = start_and_log(ds, store, "s1", "d1")
        to_neighborhood(ds, state, PA_EXTENT)
        apply_brick_event(ds, state, BrickEvent("Placed", housing(1500), at=BRICK_CENTER, scan_seq=1))
        store.record_session_total("s1", state.session_capacity())
        state2, _ = start_and_log(ds, store, "s2", "d2")
        assert state2.campaign_base == 1500
        assert state2.remaining() == 18_500


class TestDeltaSchemas:
    def test_every_emitted_delta_validates(self, ds):
        schema_dir = resources.files("siteboard") / "schemas"
        schemas = {
            name: json.loads((schema_dir / f"{name}.json").read_text(encoding="utf-8"))
            for name in ("map_extents", "global_stats", "district_state", "proposals", "parcel_detail")
        }
        state, deltas = start_session(ds, "s1", "d1")
        all_deltas = list(deltas)
        all_deltas += change_station(ds, state, Station.DISTRICT)
        all_deltas += select_focus(ds, state, MapExtent(0, 0, 1000, 1000))
        for at, cap in (((26, 4), 500), ((27, 10), 100)):
            all_deltas += apply_brick_event(ds, state, BrickEvent("Placed", housing(cap), at=at, scan_seq=1))
        all_deltas += apply_brick_event(ds, state, BrickEvent("Placed", MARKER, at=(26, 4), scan_seq=2))
        all_deltas += apply_brick_event(ds, state, BrickEvent("Placed", housing(40), at=(26, 4), scan_seq=3))
        all_deltas += apply_brick_event(ds, state, BrickEvent("Placed", housing(40), at=(0, 0), scan_seq=4))
        all_deltas += apply_brick_event(ds, state, BrickEvent("Removed", housing(500), at=(26, 4), scan_seq=5))
        all_deltas += apply_brick_event(ds, state, BrickEvent("Removed", MARKER, at=(26, 4), scan_seq=6))
        assert {d.topic for d in all_deltas} == set(schemas)
        for delta in all_deltas:
            jsonschema.validate(delta.payload, schemas[delta.topic])
