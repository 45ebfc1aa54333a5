import {
  Command,
  Envelope,
  Inbound,
  Topic,
  commandFrame,
  parseInbound,
  subscribeFrame,
} from "./protocol.js";

// Minimal slice of the WebSocket surface the client touches. Tests inject
// a mock factory; the browser build passes the real constructor.
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionState = "connecting" | "open" | "closed";

export type EnvelopeHandler<T extends Topic> = (
  payload: Envelope<T>["payload"],
  envelope: Envelope<T>,
) => void;

export interface HubClientOptions {
  token?: string;
  factory?: SocketFactory;
  maxBackoffMs?: number;
}

const BASE_BACKOFF_MS = 1000;

/**
 * Reconnecting client for the table server's websocket endpoint.
 *
 * Subscriptions are remembered and replayed after every reconnect, so a
 * station that loses wifi mid-workshop comes back with fresh snapshots
 * instead of a stale panel.
 */
export class HubClient {
  private socket: SocketLike | null = null;
  private handlers = new Map<Topic, EnvelopeHandler<Topic>[]>();
  private errorHandlers: ((message: string) => void)[] = [];
  private stateHandlers: ((state: ConnectionState) => void)[] = [];
  private lastSeq = new Map<Topic, number>();
  private reconnectAttempts = 0;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;
  private gapCount = 0;
  private openFlag = false;

  private readonly url: string;
  private readonly token: string;
  private readonly factory: SocketFactory;
  private readonly maxBackoffMs: number;

  constructor(url: string, options: HubClientOptions = {}) {
    this.url = url;
    this.token = options.token ?? "workshop-table";
    this.factory =
      options.factory ?? ((u) => new WebSocket(u) as unknown as SocketLike);
    this.maxBackoffMs = options.maxBackoffMs ?? 30000;
  }

  connect(): void {
    if (this.stopped) return;
    this.emitState("connecting");
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.reconnectAttempts = 0;
      this.emitState("open");
      for (const topic of this.handlers.keys()) {
        socket.send(subscribeFrame(topic));
      }
    };
    socket.onmessage = (ev) => this.dispatch(parseInbound(ev.data));
    socket.onclose = () => this.scheduleReconnect();
    socket.onerror = () => {
      // The close handler owns reconnection; nothing to do here.
    };
  }

  close(): void {
    this.stopped = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    this.socket?.close();
    this.socket = null;
    this.emitState("closed");
  }

  /** Register a payload handler and subscribe on the live connection. */
  subscribe<T extends Topic>(topic: T, handler: EnvelopeHandler<T>): void {
    const existing = this.handlers.get(topic);
    if (existing) {
      existing.push(handler as EnvelopeHandler<Topic>);
      return;
    }
    this.handlers.set(topic, [handler as EnvelopeHandler<Topic>]);
    if (this.isOpen()) {
      this.socket!.send(subscribeFrame(topic));
    }
  }

  /** Submit a table command; silently dropped while disconnected. */
  command(command: Command): boolean {
    if (!this.isOpen()) return false;
    this.socket!.send(commandFrame(command, this.token));
    return true;
  }

  onError(handler: (message: string) => void): void {
    this.errorHandlers.push(handler);
  }

  onState(handler: (state: ConnectionState) => void): void {
    this.stateHandlers.push(handler);
  }

  /** Last sequence number seen on a topic, 0 before any frame. */
  seq(topic: Topic): number {
    return this.lastSeq.get(topic) ?? 0;
  }

  /** Frames that arrived with a sequence gap since connect. */
  gaps(): number {
    return this.gapCount;
  }

  private isOpen(): boolean {
    return this.socket !== null && this.openFlag && !this.stopped;
  }

  private emitState(state: ConnectionState): void {
    this.openFlag = state === "open";
    for (const handler of this.stateHandlers) handler(state);
  }

  private dispatch(inbound: Inbound): void {
    if (inbound.kind === "error") {
      for (const handler of this.errorHandlers) handler(inbound.error);
      return;
    }
    if (inbound.kind === "unknown") return;
    const envelope = inbound.envelope;
    const previous = this.lastSeq.get(envelope.topic) ?? 0;
    // A reconnect snapshot legitimately jumps the counter forward, but a
    // gap on a live connection means a missed frame worth surfacing.
    if (previous > 0 && envelope.seq > previous + 1) {
      this.gapCount += 1;
    }
    if (envelope.seq > previous) {
      this.lastSeq.set(envelope.topic, envelope.seq);
    }
    const handlers = this.handlers.get(envelope.topic) ?? [];
    for (const handler of handlers) {
      handler(envelope.payload, envelope);
    }
  }

  private scheduleReconnect(): void {
    this.socket = null;
    if (this.stopped) return;
    this.emitState("closed");
    const delay = Math.min(
      BASE_BACKOFF_MS * 2 ** this.reconnectAttempts,
      this.maxBackoffMs,
    );
    this.reconnectAttempts += 1;
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      this.connect();
    }, delay);
  }
}
