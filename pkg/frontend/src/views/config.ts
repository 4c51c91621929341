/** Use case configuration editor.
 *
 * One tab per concern: variables, tools (including each tool's return
 * schema), sub-agents, the plain-language requirements, and the draft
 * prompt. The prompt tab checks references against the declared names and
 * renders the resulting warnings inline under the editor.
 */

import type { ApiClient } from "../api.js";
import { button, clear, el } from "../dom.js";
import type { Json, LintReportDoc, ToolDoc, UseCaseDoc, VariableDoc } from "../types.js";

const TABS = ["variables", "tools", "sub-agents", "requirements", "prompt"] as const;
export type ConfigTab = (typeof TABS)[number];

const FIELD_TYPES = ["string", "number", "integer", "boolean", "object", "array"];
const DIRECTIONS = ["read", "write", "read_write"];

export class ConfigView {
  private readonly root: HTMLElement;
  private readonly api: ApiClient;
  private readonly useCaseId: string;
  private doc: UseCaseDoc | null = null;
  private tab: ConfigTab = "variables";
  private lintReport: LintReportDoc | null = null;
  private notice = "";

  constructor(root: HTMLElement, api: ApiClient, useCaseId: string) {
    this.root = root;
    this.api = api;
    this.useCaseId = useCaseId;
  }

  async load(): Promise<void> {
    this.doc = await this.api.getUseCase(this.useCaseId);
    this.render();
  }

  private async save(): Promise<void> {
    if (!this.doc) return;
    await this.api.updateUseCase(this.useCaseId, this.doc);
    this.notice = "Saved.";
    this.render();
  }

  /** One lint request against the draft text currently in the editor. */
  private async lint(): Promise<void> {
    if (!this.doc) return;
    this.lintReport = await this.api.lint(this.useCaseId, this.doc.draft_prompt);
    this.render();
  }

  private mutate(fn: () => void): void {
    fn();
    this.notice = "";
    this.render();
  }

  render(): void {
    clear(this.root);
    if (!this.doc) return;
    const doc = this.doc;

    const tabBar = el("div", { className: "tab-bar" });
    for (const tab of TABS) {
      const node = button(tab, () => { this.tab = tab; this.render(); },
        `btn tab ${this.tab === tab ? "tab-active" : ""}`);
      node.dataset["tab"] = tab;
      tabBar.append(node);
    }
    const saveBtn = button("Save configuration", () => void this.save(), "btn btn-primary config-save");
    this.root.append(
      el("div", { className: "config-toolbar" }, [
        el("h3", { text: doc.name || doc.id }),
        saveBtn,
      ]),
      tabBar,
    );
    if (this.notice) {
      this.root.append(el("p", { className: "notice", text: this.notice }));
    }

    const body = el("div", { className: `tab-body tab-${this.tab}` });
    this.root.append(body);
    switch (this.tab) {
      case "variables": this.renderVariables(body, doc); break;
      case "tools": this.renderTools(body, doc); break;
      case "sub-agents": this.renderSubAgents(body, doc); break;
      case "requirements": this.renderRequirements(body, doc); break;
      case "prompt": this.renderPrompt(body, doc); break;
    }
  }

  private renderVariables(body: HTMLElement, doc: UseCaseDoc): void {
    for (const variable of doc.variables) {
      body.append(this.variableRow(doc, variable));
    }
    body.append(button("Add variable", () => this.mutate(() => {
      doc.variables.push({ name: `var${doc.variables.length + 1}`, description: "", direction: "read_write" });
    }), "btn btn-small var-add"));
  }

  private variableRow(doc: UseCaseDoc, variable: VariableDoc): HTMLElement {
    const name = el("input", { className: "var-name" }) as HTMLInputElement;
    name.value = variable.name;
    name.addEventListener("change", () => this.mutate(() => { variable.name = name.value; }));

    const description = el("input", { className: "var-description" }) as HTMLInputElement;
    description.value = variable.description ?? "";
    description.addEventListener("change", () => this.mutate(() => { variable.description = description.value; }));

    const direction = el("select", { className: "var-direction" }) as HTMLSelectElement;
    for (const value of DIRECTIONS) {
      const option = el("option", { text: value }) as HTMLOptionElement;
      option.value = value;
      direction.append(option);
    }
    direction.value = variable.direction ?? "read_write";
    direction.addEventListener("change", () => this.mutate(() => { variable.direction = direction.value; }));

    return el("div", { className: "config-row var-row" }, [
      name, description, direction,
      button("Remove", () => this.mutate(() => {
        doc.variables = doc.variables.filter((v) => v !== variable);
      }), "btn btn-small btn-danger var-remove"),
    ]);
  }

  private renderTools(body: HTMLElement, doc: UseCaseDoc): void {
    for (const tool of doc.tools) {
      body.append(this.toolCard(doc, tool));
    }
    body.append(button("Add tool", () => this.mutate(() => {
      doc.tools.push({ name: `tool${doc.tools.length + 1}`, description: "", return_schema: {} });
    }), "btn btn-small tool-add"));
  }

  private toolCard(doc: UseCaseDoc, tool: ToolDoc): HTMLElement {
    const name = el("input", { className: "tool-name" }) as HTMLInputElement;
    name.value = tool.name;
    name.addEventListener("change", () => this.mutate(() => { tool.name = name.value; }));

    const description = el("input", { className: "tool-description" }) as HTMLInputElement;
    description.value = tool.description ?? "";
    description.addEventListener("change", () => this.mutate(() => { tool.description = description.value; }));

    const card = el("div", { className: "tool-card", dataset: { tool: tool.name } }, [
      el("div", { className: "config-row" }, [
        name, description,
        button("Remove", () => this.mutate(() => {
          doc.tools = doc.tools.filter((t) => t !== tool);
        }), "btn btn-small btn-danger tool-remove"),
      ]),
      el("h5", { text: "Return schema" }),
    ]);

    const schema = (tool.return_schema ?? {}) as Record<string, Json>;
    for (const [fieldName, rawSpec] of Object.entries(schema)) {
      card.append(this.schemaFieldRow(tool, fieldName, rawSpec));
    }
    card.append(button("Add field", () => this.mutate(() => {
      const current = (tool.return_schema ?? {}) as Record<string, Json>;
      let n = Object.keys(current).length + 1;
      while (`field${n}` in current) n++;
      current[`field${n}`] = { type: "string" };
      tool.return_schema = current;
    }), "btn btn-small field-add"));
    return card;
  }

  private schemaFieldRow(tool: ToolDoc, fieldName: string, rawSpec: Json): HTMLElement {
    const spec = (rawSpec && typeof rawSpec === "object" && !Array.isArray(rawSpec) ? rawSpec : {}) as Record<string, Json>;

    const name = el("input", { className: "field-name" }) as HTMLInputElement;
    name.value = fieldName;
    name.addEventListener("change", () => this.mutate(() => {
      const schema = (tool.return_schema ?? {}) as Record<string, Json>;
      delete schema[fieldName];
      schema[name.value] = spec;
      tool.return_schema = schema;
    }));

    const type = el("select", { className: "field-type" }) as HTMLSelectElement;
    for (const value of FIELD_TYPES) {
      const option = el("option", { text: value }) as HTMLOptionElement;
      option.value = value;
      type.append(option);
    }
    type.value = typeof spec["type"] === "string" ? (spec["type"] as string) : "string";
    type.addEventListener("change", () => this.mutate(() => { spec["type"] = type.value; }));

    const description = el("input", { className: "field-description" }) as HTMLInputElement;
    description.value = typeof spec["description"] === "string" ? (spec["description"] as string) : "";
    description.addEventListener("change", () => this.mutate(() => { spec["description"] = description.value; }));

    return el("div", { className: "config-row schema-field", dataset: { field: fieldName } }, [
      name, type, description,
      button("Remove", () => this.mutate(() => {
        const schema = (tool.return_schema ?? {}) as Record<string, Json>;
        delete schema[fieldName];
        tool.return_schema = schema;
      }), "btn btn-small btn-danger field-remove"),
    ]);
  }

  private renderSubAgents(body: HTMLElement, doc: UseCaseDoc): void {
    doc.sub_agents.forEach((agent, index) => {
      const input = el("input", { className: "agent-name" }) as HTMLInputElement;
      input.value = agent;
      input.addEventListener("change", () => this.mutate(() => { doc.sub_agents[index] = input.value; }));
      body.append(
        el("div", { className: "config-row agent-row" }, [
          input,
          button("Remove", () => this.mutate(() => {
            doc.sub_agents = doc.sub_agents.filter((_, i) => i !== index);
          }), "btn btn-small btn-danger agent-remove"),
        ]),
      );
    });
    body.append(button("Add sub-agent", () => this.mutate(() => {
      doc.sub_agents.push("new agent");
    }), "btn btn-small agent-add"));
  }

  private renderRequirements(body: HTMLElement, doc: UseCaseDoc): void {
    const area = el("textarea", { className: "requirements-editor" }) as HTMLTextAreaElement;
    area.value = doc.requirements;
    area.addEventListener("change", () => this.mutate(() => { doc.requirements = area.value; }));
    body.append(
      el("p", { className: "muted", text: "Plain-language behavior requirements; test generation reads these." }),
      area,
    );
  }

  private renderPrompt(body: HTMLElement, doc: UseCaseDoc): void {
    const area = el("textarea", { className: "prompt-editor" }) as HTMLTextAreaElement;
    area.value = doc.draft_prompt;
    area.addEventListener("change", () => {
      doc.draft_prompt = area.value;
      this.notice = "";
      // re-check references on every committed edit
      void this.lint();
    });
    body.append(area);
    body.append(button("Check references", () => void this.lint(), "btn lint-button"));

    if (this.lintReport) {
      const warnings = this.lintReport.warnings;
      const list = el("ul", { className: "lint-warnings" });
      for (const warning of warnings) {
        list.append(
          el("li", { className: `lint-warning lint-${warning.warning_kind}` }, [
            el("code", {
              text: `${warning.reference.line_number}:${warning.reference.column}`,
            }),
            ` ${warning.message}`,
          ]),
        );
      }
      body.append(
        el("p", {
          className: warnings.length > 0 ? "error-text lint-summary" : "notice lint-summary",
          text: warnings.length > 0
            ? `${warnings.length} unresolved reference${warnings.length === 1 ? "" : "s"}`
            : "All references resolve.",
        }),
        list,
      );
    }
  }
}
