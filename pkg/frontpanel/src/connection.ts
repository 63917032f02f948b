// Transport-agnostic session: consumes frame lines, emits command lines.
// Reconnects with exponential backoff when the link drops.

import { PanelState } from "./state.js";

export interface LineTransport {
  send(line: string): void;
  close(): void;
  onLine: ((line: string) => void) | null;
  onOpen: (() => void) | null;
  onClose: ((reason: string) => void) | null;
}

export type TransportFactory = (url: string) => LineTransport;

const BACKOFF_START_MS = 500;
const BACKOFF_MAX_MS = 10_000;

export class PanelSession {
  private transport: LineTransport | null = null;
  private backoffMs = BACKOFF_START_MS;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private stopped = true;
  url = "";

  constructor(
    private readonly factory: TransportFactory,
    readonly state: PanelState,
  ) {}

  connect(url: string): void {
    this.url = url;
    this.stopped = false;
    this.open();
  }

  private open(): void {
    this.state.setStatus("connecting", `connecting to ${this.url}`);
    let transport: LineTransport;
    try {
      transport = this.factory(this.url);
    } catch (err) {
      this.state.message(`connection failed: ${(err as Error).message}`);
      this.scheduleRetry();
      return;
    }
    this.transport = transport;
    transport.onOpen = () => {
      this.backoffMs = BACKOFF_START_MS;
      this.state.setStatus("connected", "connected");
    };
    transport.onLine = (line) => this.state.ingestLine(line);
    transport.onClose = (reason) => {
      this.transport = null;
      this.state.setStatus("disconnected", `disconnected: ${reason}`);
      this.scheduleRetry();
    };
  }

  private scheduleRetry(): void {
    if (this.stopped || this.retryTimer !== null) return;
    const delay = this.backoffMs;
    this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_MAX_MS);
    this.state.message(`retrying in ${(delay / 1000).toFixed(1)} s`);
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      if (!this.stopped) this.open();
    }, delay);
  }

  disconnect(): void {
    this.stopped = true;
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    this.transport?.close();
    this.transport = null;
    this.state.setStatus("disconnected", "disconnected");
  }

  send(line: string): boolean {
    if (this.transport === null || this.state.status !== "connected") {
      this.state.message(`not connected; dropped command ${line}`);
      return false;
    }
    this.transport.send(line);
    return true;
  }
}

// Browser transport over the service's WebSocket bridge.
export function webSocketTransport(url: string): LineTransport {
  const ws = new WebSocket(url);
  const transport: LineTransport = {
    send: (line) => ws.send(line),
    close: () => ws.close(),
    onLine: null,
    onOpen: null,
    onClose: null,
  };
  ws.onopen = () => transport.onOpen?.();
  ws.onmessage = (event) => {
    const text = typeof event.data === "string" ? event.data : "";
    for (const line of text.split("\r\n")) {
      if (line.trim()) transport.onLine?.(line);
    }
  };
  ws.onclose = (event) => transport.onClose?.(`code ${event.code}`);
  ws.onerror = () => transport.onClose?.("socket error");
  return transport;
}
