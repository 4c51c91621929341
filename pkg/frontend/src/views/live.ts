/** Live test panel: kick off an optimization or regression run and watch
 * every test's indicator move pending -> running -> pass/fail as the
 * event stream arrives. State is the folded stream, so a page that
 * reattaches mid-run recovers the same picture from the snapshot. */

import type { ApiClient } from "../api.js";
import type { RunController } from "../controller.js";
import { button, clear, el } from "../dom.js";
import type { RunState, TestState } from "../types.js";

export interface LivePanelDeps {
  api: ApiClient;
  controller: RunController;
  useCaseId: string;
  onOpenTranscript?: (runId: string, testId: string) => void;
}

function indicatorClass(test: TestState | undefined): string {
  if (!test) return "test-pending";
  if (test.status === "running") return "test-running";
  if (test.status === "finished") {
    return test.overall === "PASS" ? "test-pass" : "test-fail";
  }
  return "test-pending";
}

export class LivePanel {
  private readonly root: HTMLElement;
  private readonly deps: LivePanelDeps;
  private suiteIds: string[] = [];
  private grid: HTMLElement;
  private statusLine: HTMLElement;
  private iterationsLine: HTMLElement;

  constructor(root: HTMLElement, deps: LivePanelDeps) {
    this.root = root;
    this.deps = deps;
    clear(root);

    const stepThrough = el("input", { className: "opt-step" }) as HTMLInputElement;
    stepThrough.type = "checkbox";
    const controls = el("div", { className: "run-controls" }, [
      button("Run optimization", () => void this.startOptimization(stepThrough.checked), "btn btn-primary start-optimize"),
      el("label", { className: "muted" }, [stepThrough, "step through repairs"]),
      button("Run regression", () => void this.startRegression(), "btn start-regress"),
    ]);
    this.statusLine = el("div", { className: "run-status", text: "No active run." });
    this.grid = el("div", { className: "test-grid" });
    this.iterationsLine = el("div", { className: "iterations" });
    root.append(controls, this.statusLine, this.grid, this.iterationsLine);

    deps.controller.onChange((state) => this.update(state));
  }

  /** Fetch the suite so every test shows as pending before its events. */
  async load(): Promise<void> {
    const doc = await this.deps.api.getTests(this.deps.useCaseId);
    this.suiteIds = doc.tests.map((t) => t.id);
    this.update(this.deps.controller.state);
  }

  private async startOptimization(stepThrough: boolean): Promise<void> {
    const { run_id } = await this.deps.api.optimize(this.deps.useCaseId, {
      step_through: stepThrough,
    });
    this.deps.controller.attach(run_id, this.deps.useCaseId);
  }

  private async startRegression(): Promise<void> {
    const { run_id } = await this.deps.api.regress(this.deps.useCaseId);
    this.deps.controller.attach(run_id, this.deps.useCaseId);
  }

  update(state: RunState): void {
    const runId = this.deps.controller.runId;
    const parts = [
      runId ? `run ${runId}` : "no run",
      state.status,
      `${state.pass_count} passed`,
      `${state.fail_count} failed`,
    ];
    if (state.run_kind) parts.splice(1, 0, state.run_kind);
    if (state.converged !== null) {
      parts.push(state.converged ? "converged" : "not converged");
    }
    if (state.error !== null) parts.push(`error: ${state.error}`);
    this.statusLine.textContent = parts.join(" · ");

    // suite order first, then any streamed ids the suite list lacks
    const ids = [...this.suiteIds];
    for (const id of Object.keys(state.tests)) {
      if (!ids.includes(id)) ids.push(id);
    }
    clear(this.grid);
    for (const id of ids) {
      const test = state.tests[id];
      const node = el("div", {
        className: `test-indicator ${indicatorClass(test)}`,
        dataset: { testId: id },
        title: id,
        text: id,
        onClick: () => {
          if (runId && test?.status === "finished") {
            this.deps.onOpenTranscript?.(runId, id);
          }
        },
      });
      this.grid.append(node);
    }

    clear(this.iterationsLine);
    for (const iteration of state.iterations) {
      const index = iteration["iteration_index"];
      const fails = iteration["fail_count"];
      this.iterationsLine.append(
        el("span", {
          className: "iteration-chip",
          text: `iter ${String(index)}: ${String(fails)} failing`,
        }),
      );
    }
  }
}
