// Wire types for the table server's websocket fanout. Field names and
// enum spellings mirror the JSON schemas the server validates against,
// so a payload that typechecks here is one the hub will accept.

export type Station = "CityOverview" | "District" | "Neighborhood";

export type SessionStatus = "open" | "target met" | "target exceeded";

export type Suitability = "high" | "medium" | "low";

export type ProposalStatus = "Suggested" | "Withdrawn";

export interface GlobalStats {
  session_id: string;
  seq: number;
  target_total: number;
  proposed_total: number;
  remaining: number;
  status: SessionStatus;
}

export interface DistrictState {
  session_id: string;
  seq: number;
  district_id: string;
  population: number;
  current_refugees: number;
}

export interface MapExtent {
  min_x: number;
  min_y: number;
  max_x: number;
  max_y: number;
}

export interface MapExtents {
  session_id: string;
  seq: number;
  district_id: string;
  station: Station;
  extent: MapExtent;
  scale_denominator: number;
}

export interface Proposal {
  id: string;
  parcel_id: string;
  capacity: number;
  suitability_at_placement: Suitability;
  created_seq: number;
  status: ProposalStatus;
}

export interface ProposalEvent {
  session_id: string;
  seq: number;
  kind: "created" | "withdrawn";
  proposal: Proposal;
  active: Proposal[];
}

export interface LayerCoverage {
  layer: string;
  coverage: number;
}

export interface ParcelInfo {
  parcel_id: string;
  area_m2: number;
  designation: string;
  regulations: string[];
  restrictions: LayerCoverage[];
  suitability: Suitability;
  capacity: number;
  city_owned?: boolean;
}

export interface ParcelDetail {
  session_id: string;
  seq: number;
  kind: "detail" | "no_parcel" | "rejected" | "cleared";
  detail?: ParcelInfo;
  at?: { x: number; y: number };
  reason?: string;
}

export interface TopicPayloads {
  map_extents: MapExtents;
  global_stats: GlobalStats;
  district_state: DistrictState;
  proposals: ProposalEvent;
  parcel_detail: ParcelDetail;
}

export type Topic = keyof TopicPayloads;

export const TOPICS: Topic[] = [
  "map_extents",
  "global_stats",
  "district_state",
  "proposals",
  "parcel_detail",
];

export interface Envelope<T extends Topic = Topic> {
  topic: T;
  seq: number;
  ts: number;
  payload: TopicPayloads[T];
}

export interface ErrorFrame {
  error: string;
}

// Commands the table station may submit. The server replays these through
// the same dispatcher the physical table uses, so shapes match the log.
export type Stance = "Pro" | "Con";

export interface ChangeStationCommand {
  kind: "change_station";
  to: Station;
}

export interface SelectFocusCommand {
  kind: "select_focus";
  extent: MapExtent;
}

export interface BrickEventBody {
  action: "Placed" | "Removed";
  brick: { kind: string; capacity: number };
  at: [number, number];
  scan_seq: number;
}

export interface BrickCommand {
  kind: "brick";
  event: BrickEventBody;
}

export interface CommentCommand {
  kind: "comment";
  parcel_id: string;
  stance: Stance;
  text: string;
}

export type Command =
  | ChangeStationCommand
  | SelectFocusCommand
  | BrickCommand
  | CommentCommand;

export const subscribeFrame = (topic: Topic): string =>
  JSON.stringify({ op: "subscribe", topic });

export const publishFrame = (topic: Topic, payload: unknown, token: string): string =>
  JSON.stringify({ op: "publish", topic, payload, token });

export const commandFrame = (command: Command, token: string): string =>
  JSON.stringify({ op: "command", command, token });

const isRecord = (value: unknown): value is Record<string, unknown> =>
  typeof value === "object" && value !== null && !Array.isArray(value);

export function isEnvelope(value: unknown): value is Envelope {
  if (!isRecord(value)) return false;
  return (
    typeof value.topic === "string" &&
    (TOPICS as string[]).includes(value.topic) &&
    typeof value.seq === "number" &&
    typeof value.ts === "number" &&
    isRecord(value.payload)
  );
}

export function isErrorFrame(value: unknown): value is ErrorFrame {
  return isRecord(value) && typeof value.error === "string";
}

export type Inbound =
  | { kind: "envelope"; envelope: Envelope }
  | { kind: "error"; error: string }
  | { kind: "unknown"; raw: string };

/** Parse one websocket text frame into an envelope, an error, or noise. */
export function parseInbound(raw: string): Inbound {
  let value: unknown;
  try {
    value = JSON.parse(raw);
  } catch {
    return { kind: "unknown", raw };
  }
  if (isErrorFrame(value)) return { kind: "error", error: value.error };
  if (isEnvelope(value)) return { kind: "envelope", envelope: value };
  return { kind: "unknown", raw };
}
