/** Step-through control: when an optimization run pauses after creating a
 * repair candidate, show exactly what changed (side-by-side against the
 * parent version) and the repairer's rationale, then hand control back to
 * the operator. Continue resumes the loop with the candidate; Abort stops
 * the run and changes nothing else: the version chain already persisted
 * stays as it is. */

import type { ApiClient } from "../api.js";
import type { RunController } from "../controller.js";
import { diffLines } from "../diff.js";
import { button, clear, el } from "../dom.js";
import type { RunState } from "../types.js";

export class StepPanel {
  private readonly root: HTMLElement;
  private readonly api: ApiClient;
  private readonly controller: RunController;
  private readonly useCaseId: string;
  private renderedPause: number | null = null;
  private acting = false;

  constructor(root: HTMLElement, api: ApiClient, controller: RunController, useCaseId: string) {
    this.root = root;
    this.api = api;
    this.controller = controller;
    this.useCaseId = useCaseId;
    controller.onChange((state) => void this.update(state));
    this.update(controller.state);
  }

  private async update(state: RunState): Promise<void> {
    if (state.status !== "paused" || state.paused_version === null) {
      this.renderedPause = null;
      clear(this.root);
      return;
    }
    if (this.renderedPause === state.paused_version) return;
    this.renderedPause = state.paused_version;
    this.acting = false;
    await this.renderPause(state.paused_version);
  }

  private async renderPause(pausedIndex: number): Promise<void> {
    clear(this.root);
    this.root.append(el("p", { className: "muted", text: "Run paused, loading candidate..." }));
    const doc = await this.api.versions(this.useCaseId);
    // the pause may have been superseded while the fetch was in flight
    if (this.renderedPause !== pausedIndex) return;
    const candidate = doc.versions.find((v) => v.version_index === pausedIndex);
    clear(this.root);
    if (!candidate) {
      this.root.append(el("p", { className: "error-text", text: `version ${pausedIndex} not found` }));
      return;
    }
    const parent = doc.versions.find((v) => v.version_index === candidate.parent_version);

    this.root.append(
      el("div", { className: "step-header" }, [
        el("h3", { text: `Paused: repair candidate v${candidate.version_index}` }),
        el("span", {
          className: "muted",
          text: parent ? `diff against v${parent.version_index}` : "no parent version",
        }),
      ]),
    );
    if (candidate.repair_rationale) {
      this.root.append(el("blockquote", { className: "rationale", text: candidate.repair_rationale }));
    }

    const rows = diffLines(parent ? parent.text : "", candidate.text);
    const table = el("table", { className: "diff-table" });
    for (const row of rows) {
      table.append(
        el("tr", { className: `diff-row diff-${row.kind}` }, [
          el("td", { className: "diff-cell diff-left", text: row.left ?? "" }),
          el("td", { className: "diff-cell diff-right", text: row.right ?? "" }),
        ]),
      );
    }
    this.root.append(el("div", { className: "diff-scroll" }, [table]));

    const continueBtn = button("Continue", () => void this.act("continue"), "btn btn-primary step-continue");
    const abortBtn = button("Abort", () => void this.act("abort"), "btn btn-danger step-abort");
    this.root.append(el("div", { className: "step-actions" }, [continueBtn, abortBtn]));
  }

  private async act(action: "continue" | "abort"): Promise<void> {
    const runId = this.controller.runId;
    if (!runId || this.acting) return;
    this.acting = true;
    for (const node of this.root.querySelectorAll("button")) {
      (node as HTMLButtonElement).disabled = true;
    }
    if (action === "continue") {
      await this.api.continueRun(runId);
    } else {
      await this.api.abortRun(runId);
    }
  }
}
