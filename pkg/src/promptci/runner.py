"""Suite evaluation: simulate and judge every test of a suite against one
prompt version, producing a RunRecord. Shared by the optimization loop and
the scheduled regression monitor."""

from __future__ import annotations

import uuid
from concurrent.futures import ThreadPoolExecutor
from typing import Mapping, Sequence

from .clock import SYSTEM_CLOCK, Clock
from .judge import JudgeSettings, judge_with_fallback
from .model import (
    PerTestResult,
    PlatformProfile,
    PromptVersion,
    RunKind,
    RunRecord,
    RunSummary,
    TestCase,
    Transcript,
    UseCaseConfig,
    Verdict,
    VerdictReport,
)
from .simulator import SimulationSettings, simulate


class RunObserver:
    """No-op observer; persistence and event streaming hook in here."""

    def on_run_started(self, run_id: str, run_kind: RunKind, version_index: int) -> None:
        pass

    def on_test_started(self, run_id: str, test_id: str) -> None:
        pass

    def on_test_result(
        self,
        run_id: str,
        test: TestCase,
        transcript: Transcript,
        report: VerdictReport,
        transcript_ref: str,
        verdict_ref: str,
    ) -> None:
        pass

    def on_run_finished(self, record: RunRecord) -> None:
        pass

    def on_version_created(self, version: PromptVersion) -> None:
        pass

    def on_iteration_finished(self, record) -> None:
        pass

    def on_paused(self, version_index: int) -> None:
        pass


def new_run_id() -> str:
    return f"run-{uuid.uuid4().hex[:12]}"


def new_job_id() -> str:
    return f"job-{uuid.uuid4().hex[:12]}"


def new_event_id() -> str:
    return f"drift-{uuid.uuid4().hex[:12]}"


def new_revision_id() -> str:
    return f"rev-{uuid.uuid4().hex[:12]}"


def transcript_ref(run_id: str, test_id: str) -> str:
    return f"tr:{run_id}:{test_id}"


def verdict_ref(run_id: str, test_id: str) -> str:
    return f"vd:{run_id}:{test_id}"


def evaluate_suite(
    suite: Sequence[TestCase],
    prompt: PromptVersion,
    profile: PlatformProfile,
    config: UseCaseConfig,
    settings: SimulationSettings,
    provider,
    judge_settings: JudgeSettings = JudgeSettings(),
    run_kind: RunKind = RunKind.OPTIMIZATION,
    run_id: str | None = None,
    suite_revision_id: str = "",
    observer: RunObserver = RunObserver(),
    clock: Clock = SYSTEM_CLOCK,
    parallelism: int = 1,
) -> tuple[RunRecord, dict[str, tuple[Transcript, VerdictReport]]]:
    """One full pass: per-test simulate + judge. Results are handed to the
    observer one test at a time, so a crash mid-run loses at most the test
    in flight."""
    run_id = run_id or new_run_id()
    started_at = clock.now()
    observer.on_run_started(run_id, run_kind, prompt.version_index)

    def run_one(test: TestCase) -> tuple[str, Transcript, VerdictReport]:
        observer.on_test_started(run_id, test.id)
        transcript = simulate(test, prompt, profile, config, settings, provider)
        report = judge_with_fallback(test, transcript, provider, judge_settings)
        return test.id, transcript, report

    results: dict[str, tuple[Transcript, VerdictReport]] = {}
    per_test: dict[str, PerTestResult] = {}
    if parallelism <= 1:
        outcomes = map(run_one, suite)
    else:
        executor = ThreadPoolExecutor(max_workers=parallelism)
        outcomes = executor.map(run_one, suite)
    for test_id, transcript, report in outcomes:
        t_ref = transcript_ref(run_id, test_id)
        v_ref = verdict_ref(run_id, test_id)
        results[test_id] = (transcript, report)
        per_test[test_id] = PerTestResult(
            transcript_ref=t_ref, verdict_ref=v_ref, overall=report.overall
        )
        test = next(t for t in suite if t.id == test_id)
        observer.on_test_result(run_id, test, transcript, report, t_ref, v_ref)
    if parallelism > 1:
        executor.shutdown(wait=True)

    passed = sum(1 for r in per_test.values() if r.overall == Verdict.PASS)
    record = RunRecord(
        run_id=run_id,
        run_kind=run_kind,
        prompt_version_index=prompt.version_index,
        started_at=started_at,
        finished_at=clock.now(),
        per_test=per_test,
        summary=RunSummary(total=len(per_test), passed=passed, failed=len(per_test) - passed),
        use_case_id=config.id,
        suite_revision_id=suite_revision_id,
    )
    observer.on_run_finished(record)
    return record, results
