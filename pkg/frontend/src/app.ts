/** Application shell: a use case picker, one navigation bar, and one view
 * container. The shell owns the single RunController, so whichever view
 * is visible observes the same live run, and a reload reattaches to the
 * run the page was watching. */

import { ApiClient } from "./api.js";
import { RunController, type StorageLike } from "./controller.js";
import { button, clear, el } from "./dom.js";
import type { EventSourceFactory } from "./stream.js";
import { ConfigView } from "./views/config.js";
import { DriftView } from "./views/drift.js";
import { LivePanel } from "./views/live.js";
import { StepPanel } from "./views/step.js";
import { SuiteView } from "./views/suite.js";
import { TranscriptView } from "./views/transcript.js";
import { VersionsView } from "./views/versions.js";

const NAV = [
  ["config", "Configuration"],
  ["suite", "Test suite"],
  ["live", "Live runs"],
  ["versions", "Versions"],
  ["drift", "Drift"],
] as const;

export type NavKey = (typeof NAV)[number][0] | "transcript";

export interface AppDeps {
  api?: ApiClient;
  eventSource?: EventSourceFactory;
  storage?: StorageLike;
  pollIntervalMs?: number;
}

export class App {
  private readonly root: HTMLElement;
  private readonly api: ApiClient;
  readonly controller: RunController;
  private useCaseId: string | null = null;
  private useCases: { id: string; name: string }[] = [];
  private nav: NavKey = "live";
  private viewRoot: HTMLElement;
  private stepRoot: HTMLElement;
  private navBar: HTMLElement;
  private picker: HTMLSelectElement;
  private transcriptTarget: { runId: string; testId: string } | null = null;

  constructor(root: HTMLElement, deps: AppDeps = {}) {
    this.root = root;
    this.api = deps.api ?? new ApiClient();
    this.controller = new RunController({
      api: this.api,
      eventSource: deps.eventSource,
      storage: deps.storage,
      pollIntervalMs: deps.pollIntervalMs,
    });
    clear(root);
    this.picker = el("select", { className: "usecase-picker" }) as HTMLSelectElement;
    this.picker.addEventListener("change", () => {
      void this.selectUseCase(this.picker.value);
    });
    this.navBar = el("nav", { className: "nav-bar" });
    this.viewRoot = el("main", { className: "view-root" });
    this.stepRoot = el("aside", { className: "step-root" });
    root.append(
      el("header", { className: "app-header" }, [
        el("strong", { text: "promptci" }),
        this.picker,
      ]),
      this.navBar,
      this.stepRoot,
      this.viewRoot,
    );
  }

  async start(): Promise<void> {
    const doc = await this.api.listUseCases();
    this.useCases = doc.use_cases.map((u) => ({ id: u.id, name: u.name }));
    clear(this.picker);
    for (const useCase of this.useCases) {
      const option = el("option", { text: useCase.name || useCase.id }) as HTMLOptionElement;
      option.value = useCase.id;
      this.picker.append(option);
    }
    const first = this.useCases[0];
    if (first) {
      await this.selectUseCase(first.id);
    } else {
      this.viewRoot.append(el("p", { className: "muted", text: "No use cases yet." }));
    }
  }

  async selectUseCase(id: string): Promise<void> {
    this.useCaseId = id;
    this.picker.value = id;
    this.controller.detach();
    // a page that reloads mid-run picks the run back up here; the fresh
    // subscription's snapshot restores the folded state
    this.controller.restore(id);
    new StepPanel(this.stepRoot, this.api, this.controller, id);
    await this.show(this.nav === "transcript" ? "live" : this.nav);
  }

  private renderNav(): void {
    clear(this.navBar);
    for (const [key, label] of NAV) {
      const node = button(label, () => void this.show(key),
        `btn nav-item ${this.nav === key ? "nav-active" : ""}`);
      node.dataset["nav"] = key;
      this.navBar.append(node);
    }
  }

  async show(nav: NavKey): Promise<void> {
    if (!this.useCaseId) return;
    const id = this.useCaseId;
    this.nav = nav;
    this.renderNav();
    clear(this.viewRoot);
    switch (nav) {
      case "config": {
        await new ConfigView(this.viewRoot, this.api, id).load();
        break;
      }
      case "suite": {
        await new SuiteView(this.viewRoot, this.api, id).load();
        break;
      }
      case "live": {
        const panel = new LivePanel(this.viewRoot, {
          api: this.api,
          controller: this.controller,
          useCaseId: id,
          onOpenTranscript: (runId, testId) => {
            this.transcriptTarget = { runId, testId };
            void this.show("transcript");
          },
        });
        await panel.load();
        break;
      }
      case "versions": {
        await new VersionsView(this.viewRoot, this.api, id).load();
        break;
      }
      case "drift": {
        await new DriftView(this.viewRoot, this.api, id, (runId) => {
          this.controller.attach(runId, id);
          void this.show("live");
        }).load();
        break;
      }
      case "transcript": {
        const target = this.transcriptTarget;
        if (target) {
          this.viewRoot.append(
            button("Back to live panel", () => void this.show("live"), "btn transcript-back"),
          );
          const body = el("div", {});
          this.viewRoot.append(body);
          await new TranscriptView(body, this.api).show(target.runId, target.testId);
        }
        break;
      }
    }
  }
}
