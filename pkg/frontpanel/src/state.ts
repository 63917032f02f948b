// Panel state: everything displayed derives from parsed frames. The
// device is authoritative; sending a command never mutates the mirror.

import { OutputFrame, formatFrame, parseFrame } from "./protocol.js";

export type ConnectionStatus = "disconnected" | "connecting" | "connected";
export type DisplayMode = "rphi" | "xy";

export interface TracePoint {
  t: number; // seconds since the session started
  r1: number;
  phi1: number;
  x1: number;
  y1: number;
  s1: number;
}

export interface LogEntry {
  t: number;
  text: string;
}

export const FRAME_INTERVAL_S = 0.1;
const MAX_LOG_ENTRIES = 200;

export const RECORD_COLUMNS = [
  "time_s",
  "error",
  "output_gain",
  "input_gain",
  "sync_on",
  "external_on",
  "samples_per_period",
  "sample_rate_hz",
  "reference_hz",
  "time_constant_s",
  "undersampling",
  "r1_mv",
  "phi1_rad",
  "s1_mv",
  "x1_mv",
  "y1_mv",
  "x_n_mv",
  "x_n1_mv",
  "x_n2_mv",
  "y_n_mv",
  "y_n1_mv",
  "y_n2_mv",
  "lowest_harmonic",
] as const;

export class Recorder {
  fileName = "capture.csv";
  active = false;
  rows: string[] = [];
  private frameCount = 0;

  start(fileName?: string): void {
    if (fileName) this.fileName = fileName;
    this.active = true;
  }

  stop(): void {
    this.active = false;
  }

  append(line: string): void {
    // rows carry the wire tokens verbatim, so a recorded row and the
    // displayed frame are the same values by construction
    this.frameCount += 1;
    const t = (this.frameCount * FRAME_INTERVAL_S).toFixed(1);
    const tokens = line.trim().split(/\s+/);
    this.rows.push([t, ...tokens].join(","));
  }

  toCsv(): string {
    return [RECORD_COLUMNS.join(","), ...this.rows].join("\n") + "\n";
  }
}

export class PanelState {
  status: ConnectionStatus = "disconnected";
  displayMode: DisplayMode = "rphi";
  windowSeconds = 10;
  latest: OutputFrame | null = null;
  latestLine = "";
  trace: TracePoint[] = [];
  log: LogEntry[] = [];
  recorder = new Recorder();
  frameCount = 0;
  badLines = 0;

  private lastError = 0;

  get maxPoints(): number {
    return Math.max(10, Math.round(this.windowSeconds / FRAME_INTERVAL_S));
  }

  setWindowSeconds(seconds: number): void {
    this.windowSeconds = Math.max(1, seconds);
    this.trimTrace();
  }

  private trimTrace(): void {
    const excess = this.trace.length - this.maxPoints;
    if (excess > 0) this.trace.splice(0, excess);
  }

  message(text: string): void {
    this.log.push({ t: this.frameCount * FRAME_INTERVAL_S, text });
    if (this.log.length > MAX_LOG_ENTRIES) {
      this.log.splice(0, this.log.length - MAX_LOG_ENTRIES);
    }
  }

  setStatus(status: ConnectionStatus, detail?: string): void {
    if (status !== this.status) {
      this.status = status;
      this.message(detail ?? status);
    }
  }

  ingestLine(line: string): void {
    let frame: OutputFrame;
    try {
      frame = parseFrame(line);
    } catch (err) {
      this.badLines += 1;
      this.message(`bad frame: ${(err as Error).message}`);
      return;
    }
    this.frameCount += 1;
    this.latest = frame;
    this.latestLine = formatFrame(frame);
    this.trace.push({
      t: this.frameCount * FRAME_INTERVAL_S,
      r1: frame.r1,
      phi1: frame.phi1,
      x1: frame.x1,
      y1: frame.y1,
      s1: frame.s1,
    });
    this.trimTrace();
    this.announceErrors(frame.error);
    if (this.recorder.active) {
      this.recorder.append(this.latestLine);
    }
  }

  private announceErrors(error: number): void {
    const clipping = (error & 1) !== 0;
    const lockFailure = (error & 2) !== 0;
    const hadClipping = (this.lastError & 1) !== 0;
    const hadLockFailure = (this.lastError & 2) !== 0;
    if (clipping && !hadClipping) this.message("overload: input clipping");
    if (!clipping && hadClipping) this.message("overload cleared");
    if (lockFailure && !hadLockFailure) this.message("lock failure");
    if (!lockFailure && hadLockFailure) this.message("lock acquired");
    this.lastError = error;
  }

  // phase is displayed in degrees; recordings keep the wire radians
  get displayPhaseDeg(): number | null {
    return this.latest ? (this.latest.phi1 * 180) / Math.PI : null;
  }
}
