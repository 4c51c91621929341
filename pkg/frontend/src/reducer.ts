/** Pure fold from stream events to run state.
 *
 * This is the client-side mirror of the server's reference reducer: the
 * snapshot event a late subscriber receives carries exactly the state this
 * function would produce from the events before it, so applying a snapshot
 * is a plain state replacement and live tails keep folding on top.
 */

import type { Json, RunState, RunStatusDoc, StreamEventDoc } from "./types.js";

export function initialRunState(): RunState {
  return {
    status: "pending",
    run_kind: null,
    version_index: null,
    total_tests: null,
    tests: {},
    iterations: [],
    pass_count: 0,
    fail_count: 0,
    paused_version: null,
    converged: null,
    drift_event_ids: [],
    error: null,
    last_seq: 0,
  };
}

function asNumber(value: Json | undefined): number | null {
  return typeof value === "number" ? value : null;
}

export function reduceRunState(state: RunState, event: StreamEventDoc): RunState {
  const next: RunState = {
    ...state,
    tests: { ...state.tests },
    iterations: [...state.iterations],
    drift_event_ids: [...state.drift_event_ids],
  };
  const p = event.payload;
  switch (event.kind) {
    case "snapshot":
      // server-computed fold of everything up to event.seq
      return { ...(p as unknown as RunState), last_seq: event.seq };
    case "run_started":
      next.status = "running";
      next.run_kind = typeof p["run_kind"] === "string" ? p["run_kind"] : null;
      next.version_index = asNumber(p["version_index"]);
      next.total_tests = asNumber(p["total_tests"]);
      break;
    case "test_started":
      next.tests[String(p["test_id"])] = { status: "running", overall: null };
      break;
    case "test_finished":
      next.tests[String(p["test_id"])] = {
        status: "finished",
        overall: typeof p["overall"] === "string" ? p["overall"] : null,
      };
      next.pass_count = asNumber(p["pass_count"]) ?? next.pass_count;
      next.fail_count = asNumber(p["fail_count"]) ?? next.fail_count;
      break;
    case "iteration_finished":
      next.iterations.push({ ...p });
      next.paused_version = null;
      if (asNumber(p["repair_version"]) !== null) {
        next.version_index = asNumber(p["repair_version"]);
      }
      break;
    case "paused":
      next.status = "paused";
      next.paused_version = asNumber(p["version_index"]);
      break;
    case "drift_event":
      next.drift_event_ids.push(
        typeof p["event_id"] === "string" ? p["event_id"] : null,
      );
      break;
    case "run_finished":
      next.status = "finished";
      next.converged = typeof p["converged"] === "boolean" ? p["converged"] : null;
      break;
    case "run_error":
      next.status = "errored";
      next.error = typeof p["code"] === "string" ? p["code"] : null;
      break;
    default:
      break;
  }
  next.last_seq = event.seq;
  // any activity after a pause means the run resumed
  if (
    event.kind !== "paused" &&
    next.status === "paused" &&
    event.kind !== "run_finished" &&
    event.kind !== "run_error"
  ) {
    next.status = "running";
  }
  return next;
}

/** Coarse state from polled GET /api/runs/{id}, for when the event stream
 * is unavailable. Per-test detail comes from `results` once persisted. */
export function statusToState(doc: RunStatusDoc): RunState {
  const state = initialRunState();
  state.status = doc.paused ? "paused" : doc.status;
  state.run_kind = doc.run_kind ?? doc.job_kind ?? null;
  for (const [testId, overall] of Object.entries(doc.results ?? {})) {
    state.tests[testId] = { status: "finished", overall };
    if (overall === "PASS") state.pass_count += 1;
    else state.fail_count += 1;
  }
  state.iterations = doc.iterations ?? [];
  if (doc.result && typeof doc.result.converged === "boolean") {
    state.converged = doc.result.converged;
  }
  state.error = doc.error ?? null;
  return state;
}

/** A queued update: a stream event to fold in, or a whole-state
 * replacement (used by the polling fallback). */
export type StateUpdate = StreamEventDoc | ((state: RunState) => RunState);

/** Serializes state updates: they are applied strictly in arrival order
 * and listeners run after each apply, even when a listener triggers more
 * dispatches re-entrantly. */
export class UpdateQueue {
  private state: RunState;
  private queue: StateUpdate[] = [];
  private draining = false;
  private listeners: ((state: RunState, event: StreamEventDoc | null) => void)[] = [];

  constructor(state: RunState = initialRunState()) {
    this.state = state;
  }

  current(): RunState {
    return this.state;
  }

  onChange(listener: (state: RunState, event: StreamEventDoc | null) => void): void {
    this.listeners.push(listener);
  }

  reset(state: RunState = initialRunState()): void {
    this.queue.length = 0;
    this.state = state;
  }

  dispatch(update: StateUpdate): void {
    this.queue.push(update);
    if (this.draining) return;
    this.draining = true;
    try {
      while (this.queue.length > 0) {
        const next = this.queue.shift()!;
        let event: StreamEventDoc | null;
        if (typeof next === "function") {
          this.state = next(this.state);
          event = null;
        } else {
          this.state = reduceRunState(this.state, next);
          event = next;
        }
        for (const listener of this.listeners) {
          listener(this.state, event);
        }
      }
    } finally {
      this.draining = false;
    }
  }
}
