/** Typed client for the service API. One method, one request: the UI
 * holds no authoritative state and never mutates anything except through
 * these calls. */

import type {
  DiffDoc,
  DriftEventDoc,
  Json,
  LintReportDoc,
  PromptVersionDoc,
  RunStatusDoc,
  TestCaseDoc,
  TranscriptDoc,
  UseCaseDoc,
  VerdictDoc,
  VersionListDoc,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(base = "", fetchImpl: FetchLike = (u, i) => fetch(u, i)) {
    this.base = base.replace(/\/$/, "");
    this.fetchImpl = fetchImpl;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.base + path, init);
    const text = await response.text();
    const doc = text ? JSON.parse(text) : {};
    if (!response.ok) {
      const err = (doc as { error?: { code?: string; message?: string } }).error ?? {};
      throw new ApiError(
        response.status,
        err.code ?? "http_error",
        err.message ?? `request failed with status ${response.status}`,
      );
    }
    return doc as T;
  }

  listUseCases(): Promise<{ use_cases: UseCaseDoc[] }> {
    return this.request("GET", "/api/usecases");
  }

  getUseCase(id: string): Promise<UseCaseDoc> {
    return this.request("GET", `/api/usecases/${id}`);
  }

  createUseCase(doc: Partial<UseCaseDoc>): Promise<{ id: string }> {
    return this.request("POST", "/api/usecases", doc);
  }

  updateUseCase(id: string, doc: Partial<UseCaseDoc>): Promise<{ id: string }> {
    return this.request("PUT", `/api/usecases/${id}`, doc);
  }

  lint(id: string, text?: string): Promise<LintReportDoc> {
    return this.request("POST", `/api/usecases/${id}/lint`, text === undefined ? {} : { text });
  }

  getTests(id: string): Promise<{ revision_id: string; tests: TestCaseDoc[] }> {
    return this.request("GET", `/api/usecases/${id}/tests`);
  }

  putTests(
    id: string,
    tests: TestCaseDoc[],
    revisionId?: string,
  ): Promise<{ revision_id: string; count: number }> {
    const body: Record<string, unknown> = { tests };
    if (revisionId) body["revision_id"] = revisionId;
    return this.request("PUT", `/api/usecases/${id}/tests`, body);
  }

  generateTests(
    id: string,
    counts?: Record<string, number>,
  ): Promise<{ revision_id: string; tests: TestCaseDoc[] }> {
    return this.request(
      "POST",
      `/api/usecases/${id}/tests/generate`,
      counts ? { target_counts: counts } : {},
    );
  }

  optimize(
    id: string,
    options?: { max_iterations?: number; step_through?: boolean },
  ): Promise<{ run_id: string }> {
    return this.request("POST", `/api/usecases/${id}/optimize`, options ?? {});
  }

  regress(id: string): Promise<{ run_id: string }> {
    return this.request("POST", `/api/usecases/${id}/regress`);
  }

  runStatus(runId: string): Promise<RunStatusDoc> {
    return this.request("GET", `/api/runs/${runId}`);
  }

  continueRun(runId: string): Promise<{ run_id: string; resumed: boolean; status: string }> {
    return this.request("POST", `/api/runs/${runId}/continue`);
  }

  abortRun(runId: string): Promise<{ run_id: string; status: string }> {
    return this.request("POST", `/api/runs/${runId}/abort`);
  }

  versions(id: string): Promise<VersionListDoc> {
    return this.request("GET", `/api/usecases/${id}/versions`);
  }

  addVersion(id: string, text: string): Promise<{ version_index: number }> {
    return this.request("POST", `/api/usecases/${id}/versions`, { text });
  }

  verifyVersion(id: string, index: number): Promise<{ verified_index: number }> {
    return this.request("POST", `/api/usecases/${id}/versions/${index}/verify`, {});
  }

  versionDiff(
    useCaseId: string,
    a: number,
    b: number,
  ): Promise<{ a: Json; b: { repair_rationale?: string | null }; diff: DiffDoc }> {
    return this.request("GET", `/api/versions/${useCaseId}@${a}/diff/${useCaseId}@${b}`);
  }

  transcript(
    runId: string,
    testId: string,
  ): Promise<{ transcript: TranscriptDoc; verdict: VerdictDoc; rendered: string }> {
    return this.request("GET", `/api/runs/${runId}/tests/${testId}/transcript`);
  }

  driftEvents(id: string, status?: string): Promise<{ events: DriftEventDoc[] }> {
    const query = status ? `?status=${encodeURIComponent(status)}` : "";
    return this.request("GET", `/api/usecases/${id}/drift${query}`);
  }

  repairDrift(id: string, eventId: string): Promise<{ run_id: string }> {
    return this.request("POST", `/api/usecases/${id}/drift/${eventId}/repair`);
  }

  approveDrift(id: string, eventId: string): Promise<DriftEventDoc> {
    return this.request("POST", `/api/usecases/${id}/drift/${eventId}/approve`);
  }

  dismissDrift(id: string, eventId: string, reason: string): Promise<DriftEventDoc> {
    return this.request("POST", `/api/usecases/${id}/drift/${eventId}/dismiss`, { reason });
  }

  loadVersion(useCaseId: string, index: number): Promise<PromptVersionDoc> {
    return this.versions(useCaseId).then((doc) => {
      const version = doc.versions.find((v) => v.version_index === index);
      if (!version) throw new ApiError(404, "not_found", `no version ${index}`);
      return version;
    });
  }
}
