"""Post-workshop feasibility screening for suggested parcels.

Suggestions exported from workshop sessions run through an ordered,
two-stage rule funnel. Initial-stage rules knock out parcels that are
plainly unavailable; survivors get a detailed assessment whose matches
are excluded with a reason; whatever remains is split into recommended
sites and future considerations by a readiness predicate. Rules are
declarative JSON data, not code, so the screening criteria stay
inspectable and the published report can cite the exact rule that
rejected each parcel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping


class ScreeningError(ValueError):
    """Invalid rule set or predicate; raised before any screening runs."""


class RejectionReason(Enum):
    OTHER_LAND_USE = "OtherLandUse"
    DIRECT_USE_CONFLICT = "DirectUseConflict"
    TECHNICAL_STRUCTURAL = "TechnicalStructural"


class Stage(Enum):
    INITIAL = "Initial"
    DETAILED = "Detailed"


# Outcome labels used in reports and expected-result files.
REJECTED_INITIAL = "RejectedInitial"
EXCLUDED_DETAILED = "ExcludedDetailed"
RECOMMENDED = "Recommended"
FUTURE_CONSIDERATION = "FutureConsideration"

_SCALAR_FIELDS = ("designation", "city_owned", "area_m2", "capacity", "suitability", "proposal_capacity")
_ORDER_OPS = ("gte", "lte", "gt", "lt")
_OPS = ("eq", "ne", "in") + _ORDER_OPS


# -- predicate grammar ----------------------------------------------------------
#
# node := {"all": [node, ...]} | {"any": [node, ...]} | {"not": node}
#       | {"field": f, "op": op, "value": v}
# field := scalar field | "coverage:<layer>" | "attr:<key>"

def validate_predicate(
    node: object,
    *,
    layers: Iterable[str] | None = None,
    attrs: Iterable[str] | None = None,
    path: str = "predicate",
) -> None:
    if not isinstance(node, Mapping):
        raise ScreeningError(f"{path}: predicate node must be an object")
    combinators = [k for k in ("all", "any", "not") if k in node]
    if combinators:
        if len(node) != 1:
            raise ScreeningError(f"{path}: combinator node must hold exactly one key")
        key = combinators[0]
        if key == "not":
            validate_predicate(node["not"], layers=layers, attrs=attrs, path=f"{path}.not")
            return
        branches = node[key]
        if not isinstance(branches, list) or not branches:
            raise ScreeningError(f"{path}.{key}: needs a non-empty list of predicates")
        for i, branch in enumerate(branches):
            validate_predicate(branch, layers=layers, attrs=attrs, path=f"{path}.{key}[{i}]")
        return

    if set(node) != {"field", "op", "value"}:
        raise ScreeningError(f"{path}: leaf needs exactly the keys field, op, value")
    f, op, value = node["field"], node["op"], node["value"]
    if not isinstance(f, str):
        raise ScreeningError(f"{path}: field must be a string")
    if f.startswith("coverage:"):
        name = f.partition(":")[2]
        if not name:
            raise ScreeningError(f"{path}: coverage field needs a layer name")
        if layers is not None and name not in set(layers):
            raise ScreeningError(f"{path}: unknown restriction layer {name!r}")
    elif f.startswith("attr:"):
        key = f.partition(":")[2]
        if not key:
            raise ScreeningError(f"{path}: attr field needs an attribute key")
        if attrs is not None and key not in set(attrs):
            raise ScreeningError(f"{path}: unknown attribute {key!r}")
    elif f not in _SCALAR_FIELDS:
        raise ScreeningError(f"{path}: unknown field {f!r}")
    if op not in _OPS:
        raise ScreeningError(f"{path}: unknown op {op!r}")
    if op == "in" and not isinstance(value, list):
        raise ScreeningError(f"{path}: op 'in' needs a list value")
    if op in _ORDER_OPS and not _is_number(value):
        raise ScreeningError(f"{path}: op {op!r} needs a numeric value")


def _is_number(value: object) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _field_value(f: str, suggestion: Mapping) -> object:
    detail = suggestion.get("parcel_detail", {})
    if f == "proposal_capacity":
        return suggestion.get("proposal", {}).get("capacity")
    if f.startswith("coverage:"):
        name = f.partition(":")[2]
        for entry in detail.get("restrictions", ()):
            if entry.get("layer") == name:
                return entry.get("coverage", 0.0)
        return 0.0
    if f.startswith("attr:"):
        return f.partition(":")[2] in detail.get("regulations", ())
    return detail.get(f)


def eval_predicate(node: Mapping, suggestion: Mapping) -> bool:
    """Total over valid inputs: missing or mistyped values compare False."""
    if "all" in node:
        return all(eval_predicate(b, suggestion) for b in node["all"])
    if "any" in node:
        return any(eval_predicate(b, suggestion) for b in node["any"])
    if "not" in node:
        return not eval_predicate(node["not"], suggestion)
    value = _field_value(node["field"], suggestion)
    op, target = node["op"], node["value"]
    if op == "eq":
        return value == target
    if op == "ne":
        return value != target
    if op == "in":
        return value in target
    if not _is_number(value):
        return False
    if op == "gte":
        return value >= target
    if op == "lte":
        return value <= target
    if op == "gt":
        return value > target
    return value < target


# -- rule sets ------------------------------------------------------------------

@dataclass(frozen=True)
class ScreeningRule:
    name: str
    stage: Stage
    reason: RejectionReason
    predicate: Mapping

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "stage": self.stage.value,
            "reason": self.reason.value,
            "predicate": self.predicate,
        }


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[ScreeningRule, ...]
    readiness: Mapping
    detail_budget: int | None = None

    def validate(self, *, layers: Iterable[str] | None = None, attrs: Iterable[str] | None = None) -> None:
        seen = set()
        for rule in self.rules:
            if not rule.name:
                raise ScreeningError("rule names must be non-empty")
            if rule.name in seen:
                raise ScreeningError(f"duplicate rule name {rule.name!r}")
            seen.add(rule.name)
            validate_predicate(rule.predicate, layers=layers, attrs=attrs, path=f"rule {rule.name!r}")
        validate_predicate(self.readiness, layers=layers, attrs=attrs, path="readiness")
        if self.detail_budget is not None and (not isinstance(self.detail_budget, int) or self.detail_budget < 0):
            raise ScreeningError("detail_budget must be a non-negative integer or null")

    def staged(self, stage: Stage) -> list[ScreeningRule]:
        return [r for r in self.rules if r.stage is stage]

    def to_json(self) -> dict:
        return {
            "rules": [r.to_json() for r in self.rules],
            "readiness": self.readiness,
            "detail_budget": self.detail_budget,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "RuleSet":
        if not isinstance(doc, Mapping):
            raise ScreeningError("rule set document must be an object")
        rules = []
        raw_rules = doc.get("rules")
        if not isinstance(raw_rules, list):
            raise ScreeningError("rule set needs a top-level 'rules' list")
        for i, raw in enumerate(raw_rules):
            if not isinstance(raw, Mapping):
                raise ScreeningError(f"rules[{i}]: must be an object")
            try:
                stage = Stage(raw["stage"])
            except (KeyError, ValueError):
                raise ScreeningError(f"rules[{i}]: stage must be one of {[s.value for s in Stage]}") from None
            try:
                reason = RejectionReason(raw["reason"])
            except (KeyError, ValueError):
                raise ScreeningError(
                    f"rules[{i}]: reason must be one of {[r.value for r in RejectionReason]}"
                ) from None
            rules.append(
                ScreeningRule(
                    name=str(raw.get("name", "")),
                    stage=stage,
                    reason=reason,
                    predicate=raw.get("predicate", {}),
                )
            )
        if "readiness" not in doc:
            raise ScreeningError("rule set needs a 'readiness' predicate")
        ruleset = cls(rules=tuple(rules), readiness=doc["readiness"], detail_budget=doc.get("detail_budget"))
        ruleset.validate()
        return ruleset

    @classmethod
    def load(cls, path: str | Path) -> "RuleSet":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ScreeningError(f"{path}: not valid JSON: {exc}") from exc
        return cls.from_json(doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def default_rules() -> RuleSet:
    """Screening criteria mirroring the documented rejection families."""
    return RuleSet(
        rules=(
            ScreeningRule(
                "active-other-use",
                Stage.INITIAL,
                RejectionReason.OTHER_LAND_USE,
                {"field": "attr:in_active_use", "op": "eq", "value": True},
            ),
            ScreeningRule(
                "park-or-playground",
                Stage.INITIAL,
                RejectionReason.DIRECT_USE_CONFLICT,
                {"field": "designation", "op": "in", "value": ["park", "playground", "sports_field"]},
            ),
            ScreeningRule(
                "inside-park-layer",
                Stage.INITIAL,
                RejectionReason.DIRECT_USE_CONFLICT,
                {"field": "coverage:parks", "op": "gte", "value": 0.999},
            ),
            ScreeningRule(
                "unbuildable-terrain",
                Stage.INITIAL,
                RejectionReason.TECHNICAL_STRUCTURAL,
                {"field": "attr:unbuildable", "op": "eq", "value": True},
            ),
            ScreeningRule(
                "contaminated-site",
                Stage.DETAILED,
                RejectionReason.TECHNICAL_STRUCTURAL,
                {"field": "attr:contaminated", "op": "eq", "value": True},
            ),
            ScreeningRule(
                "hazard-adjacent",
                Stage.DETAILED,
                RejectionReason.TECHNICAL_STRUCTURAL,
                {"field": "attr:hazard_adjacent", "op": "eq", "value": True},
            ),
        ),
        readiness={
            "all": [
                {"field": "suitability", "op": "eq", "value": "low"},
                {"field": "attr:immediately_available", "op": "eq", "value": True},
            ]
        },
        detail_budget=None,
    )


# -- screening ------------------------------------------------------------------

@dataclass(frozen=True)
class SuggestionOutcome:
    proposal_id: str
    parcel_id: str
    capacity: int
    outcome: str
    reason: str | None = None
    rule: str | None = None

    def to_json(self) -> dict:
        return {
            "proposal_id": self.proposal_id,
            "parcel_id": self.parcel_id,
            "capacity": self.capacity,
            "outcome": self.outcome,
            "reason": self.reason,
            "rule": self.rule,
        }


@dataclass
class ScreeningReport:
    outcomes: list[SuggestionOutcome]
    total_proposed_capacity: int
    recommended_capacity: int
    funnel: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.funnel:
            count = lambda label: sum(1 for o in self.outcomes if o.outcome == label)
            rejected = count(REJECTED_INITIAL)
            excluded = count(EXCLUDED_DETAILED)
            recommended = count(RECOMMENDED)
            future = count(FUTURE_CONSIDERATION)
            self.funnel = {
                "suggested": len(self.outcomes),
                "rejected_initial": rejected,
                "feasible": len(self.outcomes) - rejected,
                "excluded_detailed": excluded,
                "recommended": recommended,
                "future_consideration": future,
            }

    def to_json(self) -> dict:
        return {
            "funnel": self.funnel,
            "total_proposed_capacity": self.total_proposed_capacity,
            "recommended_capacity": self.recommended_capacity,
            "outcomes": [o.to_json() for o in self.outcomes],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "ScreeningReport":
        try:
            outcomes = [
                SuggestionOutcome(
                    proposal_id=o["proposal_id"],
                    parcel_id=o["parcel_id"],
                    capacity=int(o["capacity"]),
                    outcome=o["outcome"],
                    reason=o.get("reason"),
                    rule=o.get("rule"),
                )
                for o in doc["outcomes"]
            ]
            return cls(
                outcomes=outcomes,
                total_proposed_capacity=int(doc["total_proposed_capacity"]),
                recommended_capacity=int(doc["recommended_capacity"]),
                funnel=dict(doc["funnel"]),
            )
        except (KeyError, TypeError) as exc:
            raise ScreeningError(f"malformed report document: {exc}") from exc


def load_report(path: str | Path) -> ScreeningReport:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScreeningError(f"{path}: not valid JSON: {exc}") from exc
    return ScreeningReport.from_json(doc)


def screen(suggestions: list[Mapping], ruleset: RuleSet) -> ScreeningReport:
    """Run the two-stage funnel over exported suggestions, in input order."""
    ruleset.validate()
    initial = ruleset.staged(Stage.INITIAL)
    detailed = ruleset.staged(Stage.DETAILED)

    outcomes: list[SuggestionOutcome] = []
    survivors: list[tuple[int, Mapping]] = []
    slots: dict[int, SuggestionOutcome] = {}

    for idx, suggestion in enumerate(suggestions):
        proposal = suggestion.get("proposal", {})
        pid = proposal.get("id", f"suggestion-{idx}")
        parcel = proposal.get("parcel_id", "")
        cap = int(proposal.get("capacity", 0))
        matched = next((r for r in initial if eval_predicate(r.predicate, suggestion)), None)
        if matched is not None:
            slots[idx] = SuggestionOutcome(pid, parcel, cap, REJECTED_INITIAL, matched.reason.value, matched.name)
        else:
            survivors.append((idx, suggestion))

    budget = ruleset.detail_budget
    for rank, (idx, suggestion) in enumerate(survivors):
        proposal = suggestion.get("proposal", {})
        pid = proposal.get("id", f"suggestion-{idx}")
        parcel = proposal.get("parcel_id", "")
        cap = int(proposal.get("capacity", 0))
        if budget is not None and rank >= budget:
            # over the detailed-assessment budget: parked without a verdict
            slots[idx] = SuggestionOutcome(pid, parcel, cap, FUTURE_CONSIDERATION)
            continue
        matched = next((r for r in detailed if eval_predicate(r.predicate, suggestion)), None)
        if matched is not None:
            slots[idx] = SuggestionOutcome(pid, parcel, cap, EXCLUDED_DETAILED, matched.reason.value, matched.name)
        elif eval_predicate(ruleset.readiness, suggestion):
            slots[idx] = SuggestionOutcome(pid, parcel, cap, RECOMMENDED)
        else:
            slots[idx] = SuggestionOutcome(pid, parcel, cap, FUTURE_CONSIDERATION)

    outcomes = [slots[i] for i in range(len(suggestions))]
    return ScreeningReport(
        outcomes=outcomes,
        total_proposed_capacity=sum(o.capacity for o in outcomes),
        recommended_capacity=sum(o.capacity for o in outcomes if o.outcome == RECOMMENDED),
    )


# -- report rendering -----------------------------------------------------------

def summary_line(report: ScreeningReport) -> str:
    f = report.funnel
    return (
        f"{f['suggested']} suggested / {f['feasible']} feasible / "
        f"{f['recommended']} recommended / {f['future_consideration']} future"
    )


def report_render(report: ScreeningReport) -> str:
    """Markdown screening report: funnel summary plus one line per suggestion."""
    f = report.funnel
    lines = [
        "# Screening report",
        "",
        summary_line(report),
        "",
        f"- Suggested parcels: {f['suggested']}",
        f"- Rejected in the initial assessment: {f['rejected_initial']}",
        f"- Rated feasible: {f['feasible']}",
        f"- Excluded after detailed assessment: {f['excluded_detailed']}",
        f"- Recommended for implementation: {f['recommended']}",
        f"- Kept for future consideration: {f['future_consideration']}",
        f"- Total proposed capacity: {report.total_proposed_capacity}",
        f"- Recommended capacity: {report.recommended_capacity}",
    ]
    if report.outcomes:
        lines += [
            "",
            "| proposal | parcel | capacity | outcome | reason | rule |",
            "| --- | --- | --- | --- | --- | --- |",
        ]
        for o in report.outcomes:
            lines.append(
                f"| {o.proposal_id} | {o.parcel_id} | {o.capacity} "
                f"| {o.outcome} | {o.reason or '-'} | {o.rule or '-'} |"
            )
    return "\n".join(lines) + "\n"


def write_report(report: ScreeningReport, json_path: str | Path, markdown_path: str | Path | None = None) -> None:
    Path(json_path).write_text(
        json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    if markdown_path is not None:
        Path(markdown_path).write_text(report_render(report), encoding="utf-8")
