/** Event-stream client for one run.
 *
 * Stream-first: subscribes to the run's SSE endpoint, where a fresh
 * subscription starts with a snapshot event and a reconnect with the last
 * seen sequence replays only the raw tail. When the stream cannot be
 * opened at all, falls back to polling the run status document.
 */

import { statusToState } from "./reducer.js";
import type { RunState, RunStatusDoc, StreamEventDoc } from "./types.js";

export const EVENT_KINDS = [
  "snapshot",
  "run_started",
  "test_started",
  "test_finished",
  "iteration_finished",
  "paused",
  "drift_event",
  "run_finished",
  "run_error",
] as const;

const TERMINAL_KINDS = new Set(["run_finished", "run_error"]);

export interface SourceEvent {
  data: string;
  lastEventId?: string;
}

/** The subset of EventSource the client uses; tests inject fakes. */
export interface EventSourceLike {
  addEventListener(kind: string, handler: (event: SourceEvent) => void): void;
  close(): void;
  onerror: ((event: unknown) => void) | null;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface RunStreamOptions {
  eventSource?: EventSourceFactory;
  fetchStatus?: (runId: string) => Promise<RunStatusDoc>;
  onEvent: (event: StreamEventDoc) => void;
  onPollState?: (state: RunState) => void;
  pollIntervalMs?: number;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
}

function defaultEventSource(url: string): EventSourceLike {
  return new EventSource(url) as unknown as EventSourceLike;
}

export class RunStream {
  readonly runId: string;
  private readonly options: RunStreamOptions;
  private source: EventSourceLike | null = null;
  private lastSeq: number | null = null;
  private closed = false;
  private finished = false;
  private pollHandle: unknown = null;
  mode: "stream" | "poll" | "closed" = "closed";

  constructor(runId: string, options: RunStreamOptions) {
    this.runId = runId;
    this.options = options;
  }

  connect(): void {
    this.closed = false;
    this.open();
  }

  private url(): string {
    const base = `/api/runs/${this.runId}/events`;
    return this.lastSeq === null ? base : `${base}?after=${this.lastSeq}`;
  }

  private open(): void {
    const factory = this.options.eventSource ?? defaultEventSource;
    let source: EventSourceLike;
    try {
      source = factory(this.url());
    } catch {
      this.startPolling();
      return;
    }
    this.source = source;
    this.mode = "stream";
    for (const kind of EVENT_KINDS) {
      source.addEventListener(kind, (event) => this.handle(event));
    }
    source.onerror = () => {
      if (this.closed || this.finished) return;
      // drop the broken source and resubscribe from the last seen seq;
      // the server replays the raw tail for an explicit after
      source.close();
      if (this.source === source) {
        this.source = null;
        this.open();
      }
    };
  }

  private handle(event: SourceEvent): void {
    if (this.closed) return;
    let doc: StreamEventDoc;
    try {
      doc = JSON.parse(event.data) as StreamEventDoc;
    } catch {
      return;
    }
    this.lastSeq = doc.seq;
    if (TERMINAL_KINDS.has(doc.kind)) {
      this.finished = true;
    }
    this.options.onEvent(doc);
    if (this.finished) {
      this.close();
    }
  }

  private startPolling(): void {
    if (this.closed || this.pollHandle !== null) return;
    const fetchStatus = this.options.fetchStatus;
    if (!fetchStatus) return;
    this.mode = "poll";
    const interval = this.options.pollIntervalMs ?? 2000;
    const setTimer = this.options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    const tick = async () => {
      if (this.closed) return;
      try {
        const doc = await fetchStatus(this.runId);
        this.options.onPollState?.(statusToState(doc));
        if (["finished", "errored", "aborted"].includes(doc.status)) {
          this.close();
          return;
        }
      } catch {
        // transient; keep polling
      }
      if (!this.closed) {
        this.pollHandle = setTimer(tick, interval);
      }
    };
    this.pollHandle = setTimer(tick, 0);
  }

  close(): void {
    this.closed = true;
    this.mode = "closed";
    if (this.source) {
      this.source.close();
      this.source = null;
    }
    if (this.pollHandle !== null) {
      (this.options.clearTimer ?? ((h) => clearTimeout(h as number)))(this.pollHandle);
      this.pollHandle = null;
    }
  }
}
