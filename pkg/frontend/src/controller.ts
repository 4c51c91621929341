/** Holds the folded state of the one run the UI is currently watching.
 *
 * Exactly one stream subscription exists per visible run: attaching to a
 * new run closes the old subscription first. Every incoming event goes
 * through a serialized queue so reducers never interleave, and the active
 * run id is persisted so a reloaded page can reattach and recover state
 * from the snapshot the server sends on a fresh subscription.
 */

import type { ApiClient } from "./api.js";
import { initialRunState, UpdateQueue } from "./reducer.js";
import { RunStream, type EventSourceFactory } from "./stream.js";
import type { RunState, StreamEventDoc } from "./types.js";

export type StorageLike = Pick<Storage, "getItem" | "setItem" | "removeItem">;

const ACTIVE_RUN_KEY = "promptci.activeRun";

export interface ControllerOptions {
  api: ApiClient;
  eventSource?: EventSourceFactory;
  storage?: StorageLike;
  pollIntervalMs?: number;
}

export class RunController {
  private readonly options: ControllerOptions;
  private readonly queue = new UpdateQueue();
  private stream: RunStream | null = null;
  private listeners = new Set<(state: RunState, event: StreamEventDoc | null) => void>();
  runId: string | null = null;

  constructor(options: ControllerOptions) {
    this.options = options;
    this.queue.onChange((state, event) => {
      for (const listener of this.listeners) {
        listener(state, event);
      }
    });
  }

  get state(): RunState {
    return this.queue.current();
  }

  onChange(listener: (state: RunState, event: StreamEventDoc | null) => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  /** Reattach to the run a previous page load was watching, if any. */
  restore(useCaseId: string): boolean {
    const stored = this.options.storage?.getItem(`${ACTIVE_RUN_KEY}.${useCaseId}`);
    if (!stored) return false;
    this.attach(stored, useCaseId);
    return true;
  }

  attach(runId: string, useCaseId?: string): void {
    this.detach();
    this.runId = runId;
    if (useCaseId) {
      this.options.storage?.setItem(`${ACTIVE_RUN_KEY}.${useCaseId}`, runId);
    }
    this.queue.reset(initialRunState());
    this.stream = new RunStream(runId, {
      eventSource: this.options.eventSource,
      fetchStatus: (id) => this.options.api.runStatus(id),
      pollIntervalMs: this.options.pollIntervalMs,
      onEvent: (event) => this.queue.dispatch(event),
      onPollState: (state) => this.queue.dispatch(() => state),
    });
    this.stream.connect();
  }

  detach(): void {
    if (this.stream) {
      this.stream.close();
      this.stream = null;
    }
    this.runId = null;
  }

  clearStored(useCaseId: string): void {
    this.options.storage?.removeItem(`${ACTIVE_RUN_KEY}.${useCaseId}`);
  }
}
