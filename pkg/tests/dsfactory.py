"""Small handmade dataset shared by the sync/server/acceptance tests."""

from siteboard.citygen import DistrictInfo
from siteboard.geometry import Parcel, ParcelSet, PlanarPoint, PolygonShape, RestrictionLayer, Severity
from siteboard.session import SessionConfig, SessionDataset
from siteboard.tangible import default_table


def rect(x0, y0, w, h):
    ring = (
        PlanarPoint(x0, y0),
        PlanarPoint(x0 + w, y0),
        PlanarPoint(x0 + w, y0 + h),
        PlanarPoint(x0, y0 + h),
        PlanarPoint(x0, y0),
    )
    return PolygonShape(ring)


def make_dataset() -> SessionDataset:
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


# command scripts usable against make_dataset(); pa's center cell under a
# full-district focus extent is (26, 4)
FOCUS_D1 = {"kind": "select_focus",
            "extent": {"min_x": 0, "min_y": 0, "max_x": 1000, "max_y": 1000}}
TO_DISTRICT = {"kind": "change_station", "to": "District"}


def place_cmd(capacity, at, scan_seq):
    return {"kind": "brick",
            "event": {"action": "Placed", "brick": {"kind": "Housing", "capacity": capacity},
                      "at": list(at), "scan_seq": scan_seq}}
