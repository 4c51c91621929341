/** Test suite editor.
 *
 * Tests are grouped by category. Every edit re-checks the suite
 * invariants immediately and renders the violations next to the editor;
 * Save is blocked while any violation stands, so the server never sees a
 * suite that would fail validation.
 */

import type { ApiClient } from "../api.js";
import { button, clear, el } from "../dom.js";
import type { TestCaseDoc, ToolDoc } from "../types.js";

export const CATEGORIES = ["happy_path", "boundary", "error_path", "compliance"] as const;

export interface SuiteProblem {
  testId: string | null;
  message: string;
}

/** The same rules the server enforces, checked client-side on each edit. */
export function validateSuite(tests: TestCaseDoc[], toolNames: string[]): SuiteProblem[] {
  const problems: SuiteProblem[] = [];
  if (tests.length === 0) {
    problems.push({ testId: null, message: "suite must contain at least one test" });
  }
  const seen = new Set<string>();
  for (const test of tests) {
    if (!test.id.trim()) {
      problems.push({ testId: test.id, message: "test id must be non-empty" });
    } else if (seen.has(test.id)) {
      problems.push({ testId: test.id, message: `duplicate test id ${test.id}` });
    }
    seen.add(test.id);
    if (!test.title.trim()) {
      problems.push({ testId: test.id, message: `${test.id}: title must be non-empty` });
    }
    if (!(CATEGORIES as readonly string[]).includes(test.category)) {
      problems.push({ testId: test.id, message: `${test.id}: unknown category ${test.category}` });
    }
    if (test.conversation_script.length === 0) {
      problems.push({ testId: test.id, message: `${test.id}: conversation script must be non-empty` });
    }
    if (test.pass_criteria.length === 0) {
      problems.push({ testId: test.id, message: `${test.id}: pass criteria must be non-empty` });
    }
    for (const tool of Object.keys(test.mock_overrides)) {
      if (!toolNames.includes(tool)) {
        problems.push({
          testId: test.id,
          message: `${test.id}: mock override for undeclared tool ${tool}`,
        });
      }
    }
  }
  return problems;
}

function lines(value: string): string[] {
  return value.split("\n").map((line) => line.trim()).filter((line) => line.length > 0);
}

export class SuiteView {
  private readonly root: HTMLElement;
  private readonly api: ApiClient;
  private readonly useCaseId: string;
  private tests: TestCaseDoc[] = [];
  private toolNames: string[] = [];
  private revisionId = "";
  private problems: SuiteProblem[] = [];
  private parseErrors = new Map<string, string>();
  private notice = "";

  constructor(root: HTMLElement, api: ApiClient, useCaseId: string) {
    this.root = root;
    this.api = api;
    this.useCaseId = useCaseId;
  }

  async load(): Promise<void> {
    const suite = await this.api.getTests(this.useCaseId);
    const useCase = await this.api.getUseCase(this.useCaseId);
    this.tests = suite.tests;
    this.revisionId = suite.revision_id;
    this.toolNames = useCase.tools.map((t: ToolDoc) => t.name);
    this.validate();
    this.render();
  }

  private validate(): void {
    this.problems = validateSuite(this.tests, this.toolNames);
    for (const [testId, message] of this.parseErrors) {
      this.problems.push({ testId, message });
    }
  }

  private mutate(fn: () => void): void {
    fn();
    this.validate();
    this.notice = "";
    this.render();
  }

  private async save(): Promise<void> {
    if (this.problems.length > 0) return;
    const result = await this.api.putTests(this.useCaseId, this.tests);
    this.revisionId = result.revision_id;
    this.notice = `Saved ${result.count} tests as revision ${result.revision_id}.`;
    this.render();
  }

  private async generate(): Promise<void> {
    const result = await this.api.generateTests(this.useCaseId);
    this.tests = result.tests;
    this.revisionId = result.revision_id;
    this.notice = `Generated ${result.tests.length} tests.`;
    this.validate();
    this.render();
  }

  private addTest(category: string): void {
    this.mutate(() => {
      let n = this.tests.length + 1;
      while (this.tests.some((t) => t.id === `t${n}`)) n++;
      this.tests.push({
        id: `t${n}`,
        title: "New test",
        category,
        conversation_script: ["Hello"],
        pass_criteria: ["The agent responds."],
        mock_overrides: {},
        origin: "operator_added",
      });
    });
  }

  private testEditor(test: TestCaseDoc): HTMLElement {
    const card = el("div", { className: "test-card", dataset: { testId: test.id } });

    const idInput = el("input", { className: "test-id" }) as HTMLInputElement;
    idInput.value = test.id;
    idInput.addEventListener("change", () => this.mutate(() => { test.id = idInput.value; }));

    const titleInput = el("input", { className: "test-title" }) as HTMLInputElement;
    titleInput.value = test.title;
    titleInput.addEventListener("change", () => this.mutate(() => { test.title = titleInput.value; }));

    const category = el("select", { className: "test-category" }) as HTMLSelectElement;
    for (const value of CATEGORIES) {
      const option = el("option", { text: value }) as HTMLOptionElement;
      option.value = value;
      category.append(option);
    }
    category.value = test.category;
    category.addEventListener("change", () => this.mutate(() => { test.category = category.value; }));

    const script = el("textarea", { className: "test-script" }) as HTMLTextAreaElement;
    script.value = test.conversation_script.join("\n");
    script.addEventListener("change", () =>
      this.mutate(() => { test.conversation_script = lines(script.value); }));

    const criteria = el("textarea", { className: "test-criteria" }) as HTMLTextAreaElement;
    criteria.value = test.pass_criteria.join("\n");
    criteria.addEventListener("change", () =>
      this.mutate(() => { test.pass_criteria = lines(criteria.value); }));

    const mocks = el("textarea", { className: "test-mocks" }) as HTMLTextAreaElement;
    mocks.value = JSON.stringify(test.mock_overrides, null, 2);
    mocks.addEventListener("change", () =>
      this.mutate(() => {
        try {
          test.mock_overrides = JSON.parse(mocks.value);
          this.parseErrors.delete(test.id);
        } catch {
          this.parseErrors.set(test.id, `${test.id}: mock overrides are not valid JSON`);
        }
      }));

    card.append(
      el("div", { className: "test-card-head" }, [
        idInput,
        titleInput,
        category,
        button("Delete", () => this.mutate(() => {
          this.tests = this.tests.filter((t) => t !== test);
        }), "btn btn-small btn-danger test-delete"),
      ]),
      el("label", { className: "muted", text: "Customer turns, one per line" }),
      script,
      el("label", { className: "muted", text: "Pass criteria, one per line" }),
      criteria,
      el("label", { className: "muted", text: "Mock overrides (tool name to return value)" }),
      mocks,
    );
    const mine = this.problems.filter((p) => p.testId === test.id);
    if (mine.length > 0) {
      card.append(
        el("ul", { className: "problems" }, mine.map((p) => el("li", { className: "problem", text: p.message }))),
      );
    }
    return card;
  }

  render(): void {
    clear(this.root);
    const saveBtn = button("Save suite", () => void this.save(), "btn btn-primary suite-save");
    saveBtn.disabled = this.problems.length > 0;
    this.root.append(
      el("div", { className: "suite-toolbar" }, [
        el("h3", { text: "Test suite" }),
        el("span", { className: "muted", text: `revision ${this.revisionId || "(unsaved)"}` }),
        button("Generate from requirements", () => void this.generate(), "btn suite-generate"),
        saveBtn,
      ]),
    );
    if (this.notice) {
      this.root.append(el("p", { className: "notice", text: this.notice }));
    }
    const general = this.problems.filter((p) => p.testId === null);
    if (general.length > 0) {
      this.root.append(
        el("ul", { className: "problems suite-problems" },
          general.map((p) => el("li", { className: "problem", text: p.message }))),
      );
    }
    for (const category of CATEGORIES) {
      const group = this.tests.filter((t) => t.category === category);
      const section = el("section", { className: "suite-group", dataset: { category } }, [
        el("h4", { text: `${category} (${group.length})` }),
      ]);
      for (const test of group) {
        section.append(this.testEditor(test));
      }
      section.append(button("Add test", () => this.addTest(category), "btn btn-small suite-add"));
      this.root.append(section);
    }
    const stray = this.tests.filter((t) => !(CATEGORIES as readonly string[]).includes(t.category));
    if (stray.length > 0) {
      const section = el("section", { className: "suite-group", dataset: { category: "unknown" } }, [
        el("h4", { text: `uncategorized (${stray.length})` }),
      ]);
      for (const test of stray) {
        section.append(this.testEditor(test));
      }
      this.root.append(section);
    }
  }
}
