"""Scripted workshop campaigns, replayable headless.

A scenario is an ordered list of sessions, each with a district and a
command script (station changes, focus selections, brick events,
comments). Replaying a scenario drives the real session engine through
the session store, so campaign totals carry across sessions exactly as
they would over a workshop series.

The bundled paper-scale campaign is built from a generated city's
ground-truth ledger: 161 housing proposals across 7 districts totaling
24,050 places against the 20,000 target, with every parcel picked so the
default screening rules reproduce a known funnel (117 rejected up front,
24 excluded on detailed assessment, 6 recommended, 14 kept for later).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .citygen import CityBundle
from .screening import (
    EXCLUDED_DETAILED,
    FUTURE_CONSIDERATION,
    RECOMMENDED,
    REJECTED_INITIAL,
)
from .session import (
    SessionDataset,
    SessionState,
    SessionStore,
    StateDelta,
    apply_and_log,
    export_suggestions,
    start_and_log,
    state_hash,
)

PAPER_SCALE_NAME = "paper-scale"
PAPER_SCALE_TARGET = 20_000


class ScenarioError(ValueError):
    """Scenario structure or replay failure; names the failing command."""

    def __init__(self, message: str, session_id: str | None = None, command_index: int | None = None):
        super().__init__(message)
        self.session_id = session_id
        self.command_index = command_index


@dataclass(frozen=True)
class ScenarioSession:
    session_id: str
    district_id: str
    commands: tuple[dict, ...]

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "district_id": self.district_id,
            "commands": list(self.commands),
        }


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    target_total: int
    sessions: tuple[ScenarioSession, ...]
    dataset: dict | None = None  # e.g. {"generator": {"seed": 42, "n_parcels": 1000}}

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "target_total": self.target_total,
            "dataset": self.dataset,
            "sessions": [s.to_json() for s in self.sessions],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Scenario":
        if not isinstance(doc, Mapping):
            raise ScenarioError("scenario document must be an object")
        raw_sessions = doc.get("sessions")
        if not isinstance(raw_sessions, list):
            raise ScenarioError("scenario needs a 'sessions' list")
        sessions = []
        seen = set()
        for i, raw in enumerate(raw_sessions):
            if not isinstance(raw, Mapping):
                raise ScenarioError(f"sessions[{i}]: must be an object")
            sid = raw.get("session_id")
            did = raw.get("district_id")
            if not sid or not isinstance(sid, str):
                raise ScenarioError(f"sessions[{i}]: needs a session_id")
            if sid in seen:
                raise ScenarioError(f"sessions[{i}]: duplicate session_id {sid!r}")
            seen.add(sid)
            if not did or not isinstance(did, str):
                raise ScenarioError(f"sessions[{i}]: needs a district_id")
            commands = raw.get("commands", [])
            if not isinstance(commands, list) or not all(isinstance(c, Mapping) for c in commands):
                raise ScenarioError(f"sessions[{i}]: commands must be a list of objects")
            sessions.append(ScenarioSession(sid, did, tuple(dict(c) for c in commands)))
        target = doc.get("target_total", PAPER_SCALE_TARGET)
        if not isinstance(target, int) or target <= 0:
            raise ScenarioError("target_total must be a positive integer")
        return cls(
            name=str(doc.get("name", "")),
            description=str(doc.get("description", "")),
            target_total=target,
            sessions=tuple(sessions),
            dataset=doc.get("dataset"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: not valid JSON: {exc}") from exc
        return cls.from_json(doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )


# -- replay runner --------------------------------------------------------------

StepHook = Callable[[str, int, dict, SessionState, list[StateDelta]], None]


@dataclass
class SessionRun:
    session_id: str
    district_id: str
    campaign_base: int
    state: SessionState
    final_hash: str
    suggestions: list[dict]


@dataclass
class ScenarioResult:
    scenario: Scenario
    runs: list[SessionRun] = field(default_factory=list)

    @property
    def suggestions(self) -> list[dict]:
        return [s for run in self.runs for s in run.suggestions]

    @property
    def proposed_total(self) -> int:
        return sum(run.state.session_capacity() for run in self.runs)

    @property
    def remaining(self) -> int:
        return self.scenario.target_total - self.proposed_total

    @property
    def status(self) -> str:
        r = self.remaining
        if r > 0:
            return "open"
        return "target met" if r == 0 else "target exceeded"

    def stats(self) -> dict:
        return {
            "scenario": self.scenario.name,
            "target_total": self.scenario.target_total,
            "proposed_total": self.proposed_total,
            "remaining": self.remaining,
            "status": self.status,
            "sessions": [
                {
                    "session_id": run.session_id,
                    "district_id": run.district_id,
                    "campaign_base": run.campaign_base,
                    "session_capacity": run.state.session_capacity(),
                    "state_hash": run.final_hash,
                    "suggestions": len(run.suggestions),
                }
                for run in self.runs
            ],
        }


def run_scenario(
    ds: SessionDataset,
    scenario: Scenario,
    store: SessionStore,
    step_hook: StepHook | None = None,
) -> ScenarioResult:
    """Replay every session in order, carrying campaign totals through the store."""
    result = ScenarioResult(scenario=scenario)
    for sess in scenario.sessions:
        try:
            state, _ = start_and_log(
                ds, store, sess.session_id, sess.district_id, target_total=scenario.target_total
            )
        except ValueError as exc:
            raise ScenarioError(
                f"session {sess.session_id!r}: {exc}", session_id=sess.session_id
            ) from exc
        base = state.campaign_base
        for i, cmd in enumerate(sess.commands):
            try:
                deltas = apply_and_log(ds, store, state, cmd)
            except ValueError as exc:
                raise ScenarioError(
                    f"session {sess.session_id!r} command {i}: {exc}",
                    session_id=sess.session_id,
                    command_index=i,
                ) from exc
            if step_hook is not None:
                step_hook(sess.session_id, i, cmd, state, deltas)
        store.record_session_total(sess.session_id, state.session_capacity())
        result.runs.append(
            SessionRun(
                session_id=sess.session_id,
                district_id=sess.district_id,
                campaign_base=base,
                state=state,
                final_hash=state_hash(state),
                suggestions=export_suggestions(ds, state),
            )
        )
    return result


# -- bundled paper-scale campaign ------------------------------------------------
#
# Per-district slot counts; columns are districts d1..d7 in order.
# Rows sum to 62+39+16+24+6+14 = 161 suggestions.

_SLOTS = {
    "other_use": (9, 9, 9, 9, 9, 9, 8),     # occupied parcels
    "conflict": (6, 6, 6, 6, 5, 5, 5),      # park_layer first, then recreation
    "technical": (3, 3, 2, 2, 2, 2, 2),     # steep parcels
    "detailed": (4, 4, 4, 3, 3, 3, 3),      # brownfield/exposed interleaved
    "recommended": (1, 1, 1, 1, 1, 1, 0),   # ready parcels
    "future": (2, 2, 2, 2, 2, 2, 2),        # reserve parcels
}

# Capacity bricks flattened across districts, one list per slot category.
# Column sums: 75x40 + 58x100 + 11x250 + 12x500 + 2x1000 + 3x1500 = 24,050.
_INITIAL_COUNT = sum(sum(_SLOTS[k]) for k in ("other_use", "conflict", "technical"))
_CAPACITIES = {
    "initial": [40] * 69 + [100] * (_INITIAL_COUNT - 69),
    "detailed": [500] * 9 + [1000] * 2 + [1500] * 3 + [100] * 10,
    "recommended": [40] * 6,
    "future": [250] * 11 + [500] * 3,
}

_CATEGORY_OUTCOME = {
    "other_use": (REJECTED_INITIAL, "OtherLandUse", "active-other-use"),
    "technical": (REJECTED_INITIAL, "TechnicalStructural", "unbuildable-terrain"),
    "recommended": (RECOMMENDED, None, None),
    "future": (FUTURE_CONSIDERATION, None, None),
}

_ARCHETYPE_RULE = {
    "park_layer": ("DirectUseConflict", "inside-park-layer"),
    "recreation": ("DirectUseConflict", "park-or-playground"),
    "brownfield": ("TechnicalStructural", "contaminated-site"),
    "exposed": ("TechnicalStructural", "hazard-adjacent"),
}


def _district_pool(bundle: CityBundle, district_id: str) -> dict[str, list[str]]:
    pool: dict[str, list[str]] = {}
    for pid in sorted(bundle.ledger["parcels"]):
        entry = bundle.ledger["parcels"][pid]
        if entry["district"] == district_id:
            pool.setdefault(entry["archetype"], []).append(pid)
    return pool


def _take(pool: dict[str, list[str]], archetype: str, n: int, district_id: str) -> list[str]:
    have = pool.get(archetype, [])
    if len(have) < n:
        raise ScenarioError(
            f"district {district_id!r} has {len(have)} {archetype!r} parcels, needs {n}; "
            "generate the city with more parcels"
        )
    taken, pool[archetype] = have[:n], have[n:]
    return taken


def build_paper_scale(bundle: CityBundle) -> tuple[Scenario, dict]:
    """Derive the 161-proposal campaign and its expected results from a city.

    Returns (scenario, expected) where expected records the construction's
    ground truth: totals, funnel counts, and per-parcel screening outcomes.
    """
    districts = [d.id for d in bundle.districts]
    if len(districts) < len(_SLOTS["other_use"]):
        raise ScenarioError(
            f"paper-scale campaign needs {len(_SLOTS['other_use'])} districts, city has {len(districts)}"
        )

    # pick parcels per district and category
    picks: dict[str, list[tuple[str, str]]] = {"initial": [], "detailed": [], "recommended": [], "future": []}
    per_session: dict[str, list[tuple[str, str]]] = {d: [] for d in districts[:7]}
    for col, district_id in enumerate(districts[:7]):
        pool = _district_pool(bundle, district_id)
        chosen: list[tuple[str, str]] = []  # (pid, category)
        for pid in _take(pool, "occupied", _SLOTS["other_use"][col], district_id):
            chosen.append((pid, "other_use"))
        n_conflict = _SLOTS["conflict"][col]
        conflict_pool = pool.get("park_layer", []) + pool.get("recreation", [])
        if len(conflict_pool) < n_conflict:
            raise ScenarioError(
                f"district {district_id!r} has {len(conflict_pool)} park/recreation parcels, needs {n_conflict}"
            )
        for pid in conflict_pool[:n_conflict]:
            chosen.append((pid, "conflict"))
        for pid in _take(pool, "steep", _SLOTS["technical"][col], district_id):
            chosen.append((pid, "technical"))
        n_detailed = _SLOTS["detailed"][col]
        brown = pool.get("brownfield", [])
        exposed = pool.get("exposed", [])
        mixed = []
        while len(mixed) < n_detailed and (brown or exposed):
            if brown:
                mixed.append(brown.pop(0))
            if len(mixed) < n_detailed and exposed:
                mixed.append(exposed.pop(0))
        if len(mixed) < n_detailed:
            raise ScenarioError(
                f"district {district_id!r} lacks brownfield/exposed parcels for {n_detailed} detailed slots"
            )
        for pid in mixed:
            chosen.append((pid, "detailed"))
        for pid in _take(pool, "ready", _SLOTS["recommended"][col], district_id):
            chosen.append((pid, "recommended"))
        for pid in _take(pool, "reserve", _SLOTS["future"][col], district_id):
            chosen.append((pid, "future"))
        per_session[district_id] = chosen
        for pid, category in chosen:
            key = "initial" if category in ("other_use", "conflict", "technical") else category
            picks[key].append((pid, category))

    # assign capacities in flattened category order
    capacity_of: dict[str, int] = {}
    for key, caps in _CAPACITIES.items():
        pids = [pid for pid, _ in picks[key]]
        if len(pids) != len(caps):
            raise ScenarioError(f"capacity plan for {key!r} expects {len(caps)} parcels, got {len(pids)}")
        capacity_of.update(zip(pids, caps))

    # script the sessions
    sessions = []
    outcomes: dict[str, dict] = {}
    order: list[str] = []
    ledger = bundle.ledger["parcels"]
    for district_id in districts[:7]:
        commands: list[dict] = []
        scan_seq = 0
        for pid, category in per_session[district_id]:
            parcel = bundle.parcel_set.get(pid)
            b = parcel.bounds()
            cap = capacity_of[pid]
            scan_seq += 1
            commands.append({"kind": "change_station", "to": "District"})
            commands.append(
                {
                    "kind": "select_focus",
                    "extent": {"min_x": b[0], "min_y": b[1], "max_x": b[2], "max_y": b[3]},
                }
            )
            commands.append(
                {
                    "kind": "brick",
                    "event": {
                        "action": "Placed",
                        "brick": {"kind": "Housing", "capacity": cap},
                        "at": [15, 15],
                        "scan_seq": scan_seq,
                    },
                }
            )
            if category == "recommended":
                commands.append(
                    {
                        "kind": "comment",
                        "parcel_id": pid,
                        "stance": "Pro",
                        "text": "cleared site, available at once",
                    }
                )
            archetype = ledger[pid]["archetype"]
            if category in _CATEGORY_OUTCOME:
                outcome, reason, rule = _CATEGORY_OUTCOME[category]
            else:
                reason, rule = _ARCHETYPE_RULE[archetype]
                outcome = REJECTED_INITIAL if category == "conflict" else EXCLUDED_DETAILED
            outcomes[pid] = {"capacity": cap, "outcome": outcome, "reason": reason, "rule": rule}
            order.append(pid)
        sessions.append(
            ScenarioSession(
                session_id=f"s-{district_id}",
                district_id=district_id,
                commands=tuple(commands),
            )
        )

    total = sum(o["capacity"] for o in outcomes.values())
    scenario = Scenario(
        name=PAPER_SCALE_NAME,
        description=(
            "Seven-district workshop campaign: "
            f"{len(order)} housing proposals totaling {total} places "
            f"against a target of {PAPER_SCALE_TARGET}."
        ),
        target_total=PAPER_SCALE_TARGET,
        sessions=tuple(sessions),
        dataset={"generator": {"seed": bundle.seed, "n_parcels": bundle.ledger["n_parcels"]}},
    )
    funnel_recommended = sum(1 for o in outcomes.values() if o["outcome"] == RECOMMENDED)
    expected = {
        "scenario": PAPER_SCALE_NAME,
        "proposed_total": total,
        "remaining": PAPER_SCALE_TARGET - total,
        "status": "target exceeded" if total > PAPER_SCALE_TARGET else "open",
        "funnel": {
            "suggested": len(order),
            "rejected_initial": sum(1 for o in outcomes.values() if o["outcome"] == REJECTED_INITIAL),
            "feasible": sum(1 for o in outcomes.values() if o["outcome"] != REJECTED_INITIAL),
            "excluded_detailed": sum(1 for o in outcomes.values() if o["outcome"] == EXCLUDED_DETAILED),
            "recommended": funnel_recommended,
            "future_consideration": sum(
                1 for o in outcomes.values() if o["outcome"] == FUTURE_CONSIDERATION
            ),
        },
        "recommended_capacity": sum(
            o["capacity"] for o in outcomes.values() if o["outcome"] == RECOMMENDED
        ),
        "order": order,
        "outcomes": outcomes,
    }
    return scenario, expected


def write_expected(expected: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(expected, indent=1, sort_keys=True) + "\n", encoding="utf-8")
