import {
  Envelope,
  GlobalStats,
  DistrictState,
  MapExtents,
  ParcelDetail,
  ParcelInfo,
  Proposal,
  ProposalEvent,
  SessionStatus,
  Station,
} from "./protocol.js";

// Pure state derived from the five live topics. Rendering reads this
// object; nothing here touches the DOM, which keeps it testable.
export interface SessionView {
  stats: GlobalStats | null;
  district: DistrictState | null;
  extents: MapExtents | null;
  proposals: Proposal[];
  lastProposalEvent: ProposalEvent | null;
  parcel: ParcelPanel;
}

export type ParcelPanel =
  | { kind: "empty" }
  | { kind: "detail"; info: ParcelInfo }
  | { kind: "no_parcel"; x: number; y: number }
  | { kind: "rejected"; reason: string };

export function emptyView(): SessionView {
  return {
    stats: null,
    district: null,
    extents: null,
    proposals: [],
    lastProposalEvent: null,
    parcel: { kind: "empty" },
  };
}

/** Fold one envelope into the view. Returns a new object, input untouched. */
export function applyEnvelope(view: SessionView, envelope: Envelope): SessionView {
  switch (envelope.topic) {
    case "global_stats":
      return { ...view, stats: envelope.payload as GlobalStats };
    case "district_state":
      return { ...view, district: envelope.payload as DistrictState };
    case "map_extents":
      return { ...view, extents: envelope.payload as MapExtents };
    case "proposals": {
      const event = envelope.payload as ProposalEvent;
      return { ...view, proposals: event.active, lastProposalEvent: event };
    }
    case "parcel_detail":
      return { ...view, parcel: parcelPanel(envelope.payload as ParcelDetail) };
    default:
      return view;
  }
}

function parcelPanel(payload: ParcelDetail): ParcelPanel {
  switch (payload.kind) {
    case "detail":
      return payload.detail
        ? { kind: "detail", info: payload.detail }
        : { kind: "empty" };
    case "no_parcel":
      return {
        kind: "no_parcel",
        x: payload.at?.x ?? 0,
        y: payload.at?.y ?? 0,
      };
    case "rejected":
      return { kind: "rejected", reason: payload.reason ?? "placement rejected" };
    case "cleared":
      return { kind: "empty" };
  }
}

export const formatCount = (n: number): string =>
  Math.abs(n).toLocaleString("en-US");

/** Headline for the wall countdown, phrased from the facilitator's side. */
export function countdownText(stats: GlobalStats | null): string {
  if (!stats) return "waiting for session";
  if (stats.remaining > 0) return `${formatCount(stats.remaining)} places to go`;
  if (stats.remaining === 0) return "target met";
  return `${formatCount(stats.remaining)} places over target`;
}

export function statusClass(status: SessionStatus): string {
  switch (status) {
    case "open":
      return "status-open";
    case "target met":
      return "status-met";
    case "target exceeded":
      return "status-exceeded";
  }
}

export function stationRoute(station: Station): string {
  switch (station) {
    case "CityOverview":
      return "#/overview";
    case "District":
      return "#/district";
    case "Neighborhood":
      return "#/neighborhood";
  }
}

/** Stations in the order a session walks through them. */
export const STATION_SEQUENCE: Station[] = [
  "CityOverview",
  "District",
  "Neighborhood",
];

export function suitabilityLabel(s: Proposal["suitability_at_placement"]): string {
  switch (s) {
    case "high":
      return "suitable";
    case "medium":
      return "conditionally suitable";
    case "low":
      return "not suitable";
  }
}

/** One-line summary for the proposal ticker. */
export function proposalLine(p: Proposal): string {
  const verb = p.status === "Suggested" ? "holds" : "withdrew";
  return `${p.parcel_id} ${verb} ${formatCount(p.capacity)} places (${suitabilityLabel(p.suitability_at_placement)})`;
}
