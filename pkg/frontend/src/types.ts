/** Document shapes exchanged with the API and the event stream. These
 * mirror the server's JSON exactly; the UI never derives its own
 * authoritative data from them. */

export type Json =
  | string
  | number
  | boolean
  | null
  | Json[]
  | { [key: string]: Json };

export interface StreamEventDoc {
  seq: number;
  run_id: string;
  kind: string;
  payload: Record<string, Json>;
  created_at: string;
}

export type TestStatus = "pending" | "running" | "finished";

export interface TestState {
  status: TestStatus;
  overall: string | null;
}

/** Folded run state; the same shape the server's snapshot event carries. */
export interface RunState {
  status: string;
  run_kind: string | null;
  version_index: number | null;
  total_tests: number | null;
  tests: Record<string, TestState>;
  iterations: Record<string, Json>[];
  pass_count: number;
  fail_count: number;
  paused_version: number | null;
  converged: boolean | null;
  drift_event_ids: (string | null)[];
  error: string | null;
  last_seq: number;
}

export interface ToolDoc {
  name: string;
  description?: string;
  return_schema?: Record<string, Json>;
  parameters_schema?: Record<string, Json>;
}

export interface VariableDoc {
  name: string;
  description?: string;
  direction?: string;
}

export interface UseCaseDoc {
  id: string;
  name: string;
  requirements: string;
  tools: ToolDoc[];
  variables: VariableDoc[];
  sub_agents: string[];
  draft_prompt: string;
  platform_profile_id: string;
}

export interface TestCaseDoc {
  id: string;
  title: string;
  category: string;
  conversation_script: string[];
  pass_criteria: string[];
  mock_overrides: Record<string, Json>;
  origin?: string;
}

export interface PromptVersionDoc {
  version_index: number;
  text: string;
  parent_version: number | null;
  origin: string;
  repair_rationale: string | null;
  created_at: string;
}

export interface VersionListDoc {
  versions: PromptVersionDoc[];
  verified_index: number | null;
}

export interface DiffDoc {
  added: string[];
  removed: string[];
  changed_line_count: number;
}

export interface TurnDoc {
  kind: string;
  payload: Record<string, Json>;
}

export interface TranscriptDoc {
  test_case_id: string;
  prompt_version_index: number;
  turns: TurnDoc[];
  completed: boolean;
  abort_reason: string | null;
  unconsumed_script: string[];
}

export interface CriterionVerdictDoc {
  criterion_text: string;
  verdict: string;
  reasoning: string;
}

export interface VerdictDoc {
  test_case_id: string;
  criterion_verdicts: CriterionVerdictDoc[];
  overall: string;
  inconclusive: boolean;
}

export interface LintWarningDoc {
  reference: {
    kind: string;
    raw_text: string;
    normalized_name: string;
    line_number: number;
    column: number;
  };
  warning_kind: string;
  message: string;
}

export interface LintReportDoc {
  references: LintWarningDoc["reference"][];
  warnings: LintWarningDoc[];
  warning_count: number;
}

export interface DriftEventDoc {
  event_id: string;
  detected_at: string;
  regression_run_id: string;
  baseline_run_id: string;
  newly_failing_tests: string[];
  repair_prompt_version: number | null;
  status: string;
  urgent: boolean;
  dismiss_reason: string | null;
}

/** GET /api/runs/{id}: a plain evaluation run or an optimization job. */
export interface RunStatusDoc {
  kind: "run" | "job";
  run_id: string;
  use_case_id: string;
  status: string;
  paused?: boolean;
  run_kind?: string;
  job_kind?: string;
  results?: Record<string, string>;
  iterations?: Record<string, Json>[];
  result?: { converged?: boolean; halt_reason?: string };
  error?: string | null;
}
