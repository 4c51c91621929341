/** Transcript viewer: one simulated conversation, each turn color-coded
 * by type, followed by the judge's per-criterion verdicts. */

import type { ApiClient } from "../api.js";
import { turnClass, turnColor } from "../colors.js";
import { clear, el } from "../dom.js";
import type { Json, TurnDoc } from "../types.js";

function turnBody(turn: TurnDoc): string {
  const p = turn.payload;
  switch (turn.kind) {
    case "customer":
    case "assistant_text":
      return String(p["text"] ?? "");
    case "tool_call":
      return `${String(p["tool_name"])}(${JSON.stringify(p["arguments"] ?? {})})`;
    case "tool_response":
      return JSON.stringify(p["value"] as Json);
    case "routing_event":
      return `routed to ${String(p["destination"])}`;
    default:
      return JSON.stringify(p);
  }
}

const TURN_LABELS: Record<string, string> = {
  customer: "customer",
  assistant_text: "agent",
  tool_call: "tool call",
  tool_response: "tool response",
  routing_event: "routing",
};

export class TranscriptView {
  private readonly root: HTMLElement;
  private readonly api: ApiClient;

  constructor(root: HTMLElement, api: ApiClient) {
    this.root = root;
    this.api = api;
  }

  async show(runId: string, testId: string): Promise<void> {
    clear(this.root);
    this.root.append(el("p", { className: "muted", text: "Loading transcript..." }));
    let doc: Awaited<ReturnType<ApiClient["transcript"]>>;
    try {
      doc = await this.api.transcript(runId, testId);
    } catch (err) {
      clear(this.root);
      this.root.append(el("p", { className: "error-text", text: String(err) }));
      return;
    }
    clear(this.root);
    const t = doc.transcript;
    const header = el("div", { className: "transcript-header" }, [
      el("h3", { text: `Test ${t.test_case_id}` }),
      el("span", { className: "muted", text: `prompt v${t.prompt_version_index}` }),
    ]);
    if (!t.completed) {
      header.append(
        el("span", {
          className: "badge badge-fail",
          text: `incomplete: ${t.abort_reason ?? "unknown"}`,
        }),
      );
    }
    this.root.append(header);

    const turns = el("div", { className: "turns" });
    for (const turn of t.turns) {
      const node = el("div", { className: `turn ${turnClass(turn.kind)}` }, [
        el("span", { className: "turn-label", text: TURN_LABELS[turn.kind] ?? turn.kind }),
        el("span", { className: "turn-body", text: turnBody(turn) }),
      ]);
      node.style.borderLeftColor = turnColor(turn.kind);
      turns.append(node);
    }
    this.root.append(turns);

    const verdicts = el("div", { className: "verdicts" }, [
      el("h4", { text: `Verdict: ${doc.verdict.overall}` }),
    ]);
    for (const cv of doc.verdict.criterion_verdicts) {
      verdicts.append(
        el("div", { className: "criterion" }, [
          el("span", {
            className: cv.verdict === "PASS" ? "badge badge-pass" : "badge badge-fail",
            text: cv.verdict,
          }),
          el("span", { className: "criterion-text", text: cv.criterion_text }),
          el("p", { className: "muted criterion-reasoning", text: cv.reasoning }),
        ]),
      );
    }
    this.root.append(verdicts);
  }
}
