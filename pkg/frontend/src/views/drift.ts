/** Drift dashboard: regression findings against the verified prompt, each
 * with the tests that flipped and the actions the operator can take on it
 * (attempt a repair, approve a pending repair, or dismiss). */

import type { ApiClient } from "../api.js";
import { button, clear, el } from "../dom.js";
import type { DriftEventDoc } from "../types.js";

const STATUS_FILTERS = ["", "open", "repaired_pending_review", "approved", "dismissed"];

export class DriftView {
  private readonly root: HTMLElement;
  private readonly api: ApiClient;
  private readonly useCaseId: string;
  private readonly onRepairStarted: ((runId: string) => void) | undefined;
  private statusFilter = "";
  private events: DriftEventDoc[] = [];

  constructor(
    root: HTMLElement,
    api: ApiClient,
    useCaseId: string,
    onRepairStarted?: (runId: string) => void,
  ) {
    this.root = root;
    this.api = api;
    this.useCaseId = useCaseId;
    this.onRepairStarted = onRepairStarted;
  }

  async load(): Promise<void> {
    const doc = await this.api.driftEvents(this.useCaseId, this.statusFilter || undefined);
    this.events = doc.events;
    this.render();
  }

  private async repair(eventId: string): Promise<void> {
    const { run_id } = await this.api.repairDrift(this.useCaseId, eventId);
    this.onRepairStarted?.(run_id);
  }

  private async approve(eventId: string): Promise<void> {
    await this.api.approveDrift(this.useCaseId, eventId);
    await this.load();
  }

  private async dismiss(eventId: string, reason: string): Promise<void> {
    await this.api.dismissDrift(this.useCaseId, eventId, reason);
    await this.load();
  }

  render(): void {
    clear(this.root);
    const filter = el("select", { className: "drift-filter" }) as HTMLSelectElement;
    for (const value of STATUS_FILTERS) {
      const option = el("option", { text: value || "all" }) as HTMLOptionElement;
      option.value = value;
      filter.append(option);
    }
    filter.value = this.statusFilter;
    filter.addEventListener("change", () => {
      this.statusFilter = filter.value;
      void this.load();
    });
    this.root.append(
      el("div", { className: "drift-toolbar" }, [
        el("h3", { text: "Drift events" }),
        filter,
      ]),
    );

    if (this.events.length === 0) {
      this.root.append(el("p", { className: "muted", text: "No drift events." }));
      return;
    }

    for (const event of this.events) {
      const card = el("div", {
        className: `drift-card drift-${event.status}`,
        dataset: { eventId: event.event_id },
      });
      const head = el("div", { className: "drift-head" }, [
        el("strong", { text: event.event_id }),
        el("span", { className: "badge badge-origin", text: event.status }),
        el("span", { className: "muted", text: event.detected_at }),
      ]);
      if (event.urgent) {
        head.append(el("span", { className: "badge badge-fail", text: "urgent" }));
      }
      card.append(head);
      card.append(
        el("p", {
          className: "drift-tests",
          text: `newly failing: ${event.newly_failing_tests.join(", ") || "none"}`,
        }),
      );
      if (event.repair_prompt_version !== null) {
        card.append(
          el("p", { className: "muted", text: `repair candidate: v${event.repair_prompt_version}` }),
        );
      }
      if (event.dismiss_reason) {
        card.append(el("p", { className: "muted", text: `dismissed: ${event.dismiss_reason}` }));
      }

      const actions = el("div", { className: "drift-actions" });
      if (event.status === "open") {
        actions.append(
          button("Attempt repair", () => void this.repair(event.event_id), "btn btn-primary drift-repair"),
        );
      }
      if (event.status === "repaired_pending_review") {
        actions.append(
          button("Approve", () => void this.approve(event.event_id), "btn btn-primary drift-approve"),
        );
      }
      if (event.status === "open" || event.status === "repaired_pending_review") {
        const reason = el("input", { className: "dismiss-reason" }) as HTMLInputElement;
        reason.placeholder = "dismiss reason";
        actions.append(
          reason,
          button("Dismiss", () => void this.dismiss(event.event_id, reason.value || "dismissed by operator"), "btn drift-dismiss"),
        );
      }
      card.append(actions);
      this.root.append(card);
    }
  }
}
