/** Version history: the prompt's full lineage, with side-by-side diffs
 * between any two versions and the repair rationale that produced each
 * repair version. Texts arrive with the version list, so diffs are
 * computed locally from data already on hand. */

import type { ApiClient } from "../api.js";
import { diffLines, diffStats } from "../diff.js";
import { button, clear, el } from "../dom.js";
import type { PromptVersionDoc, VersionListDoc } from "../types.js";

export class VersionsView {
  private readonly root: HTMLElement;
  private readonly api: ApiClient;
  private readonly useCaseId: string;
  private doc: VersionListDoc | null = null;
  private leftIndex: number | null = null;
  private rightIndex: number | null = null;

  constructor(root: HTMLElement, api: ApiClient, useCaseId: string) {
    this.root = root;
    this.api = api;
    this.useCaseId = useCaseId;
  }

  async load(): Promise<void> {
    this.doc = await this.api.versions(this.useCaseId);
    const versions = this.doc.versions;
    if (versions.length > 0) {
      const latest = versions[versions.length - 1]!;
      this.rightIndex = latest.version_index;
      this.leftIndex = latest.parent_version ?? latest.version_index;
    }
    this.render();
  }

  private version(index: number | null): PromptVersionDoc | null {
    if (index === null || !this.doc) return null;
    return this.doc.versions.find((v) => v.version_index === index) ?? null;
  }

  private async verify(index: number): Promise<void> {
    await this.api.verifyVersion(this.useCaseId, index);
    await this.load();
  }

  render(): void {
    clear(this.root);
    if (!this.doc) return;
    const list = el("div", { className: "version-list" });
    for (const version of [...this.doc.versions].reverse()) {
      const isVerified = this.doc.verified_index === version.version_index;
      const row = el("div", { className: "version-row", dataset: { version: String(version.version_index) } }, [
        el("span", { className: "version-name", text: `v${version.version_index}` }),
        el("span", { className: "badge badge-origin", text: version.origin }),
      ]);
      if (isVerified) {
        row.append(el("span", { className: "badge badge-pass", text: "verified" }));
      } else {
        row.append(button("Mark verified", () => void this.verify(version.version_index), "btn btn-small verify-btn"));
      }
      row.append(
        button("A", () => { this.leftIndex = version.version_index; this.render(); }, "btn btn-small pick-left"),
        button("B", () => { this.rightIndex = version.version_index; this.render(); }, "btn btn-small pick-right"),
      );
      list.append(row);
    }
    this.root.append(el("h3", { text: "Prompt versions" }), list);

    const left = this.version(this.leftIndex);
    const right = this.version(this.rightIndex);
    if (!left || !right) return;

    const rows = diffLines(left.text, right.text);
    const stats = diffStats(rows);
    this.root.append(
      el("div", { className: "diff-header" }, [
        el("strong", { text: `v${left.version_index} -> v${right.version_index}` }),
        el("span", {
          className: "muted",
          text: ` +${stats.added} -${stats.removed} ~${stats.changed}`,
        }),
      ]),
    );
    if (right.repair_rationale) {
      this.root.append(
        el("blockquote", { className: "rationale", text: right.repair_rationale }),
      );
    }

    const table = el("table", { className: "diff-table" });
    for (const row of rows) {
      const tr = el("tr", { className: `diff-row diff-${row.kind}` }, [
        el("td", { className: "diff-num", text: row.leftNumber === null ? "" : String(row.leftNumber) }),
        el("td", { className: "diff-cell diff-left", text: row.left ?? "" }),
        el("td", { className: "diff-num", text: row.rightNumber === null ? "" : String(row.rightNumber) }),
        el("td", { className: "diff-cell diff-right", text: row.right ?? "" }),
      ]);
      table.append(tr);
    }
    this.root.append(el("div", { className: "diff-scroll" }, [table]));
  }
}
