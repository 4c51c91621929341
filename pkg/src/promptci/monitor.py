"""Scheduled regression and drift handling.

A verified prompt version is re-checked on a cadence at temperature zero.
A PASS-to-FAIL flip against the baseline (the most recent clean run on the
same version and suite revision) is confirmed by one immediate re-run to
rule out flakes, then recorded as a drift event. Handling a drift event
re-enters the repair loop seeded from the drifted version; the resulting
candidate waits for human approval instead of going live on its own.
"""

from __future__ import annotations

import random
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Any, Callable, Sequence

from .clock import SYSTEM_CLOCK, Clock
from .errors import (
    ComparisonInvalidError,
    ProviderError,
    RunStateError,
    SimulationInterruptedError,
    ValidationError,
)
from .events import CompositeObserver, EventBus, PublishingObserver
from .judge import JudgeSettings
from .model import (
    DriftEvent,
    DriftStatus,
    PlatformProfile,
    PromptVersion,
    RunKind,
    RunRecord,
    TestCase,
    UseCaseConfig,
    Verdict,
)
from .platform import DEFAULT_PLATFORM_GUIDES, get_profile
from .repair import LoopConfig, StepController, default_loop_config, run_optimization
from .runner import RunObserver, evaluate_suite, new_event_id, new_job_id, new_run_id
from .simulator import SimulationSettings
from .store import Store, StoreObserver

DEFAULT_CADENCE = timedelta(hours=24)

_DURATION_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400}


def parse_duration(text: str) -> timedelta:
    """'90s', '30m', '24h', '7d'; a bare number means seconds."""
    match = re.fullmatch(r"(\d+(?:\.\d+)?)\s*([smhd]?)", text.strip())
    if match is None:
        raise ValidationError(f"cannot parse duration {text!r}")
    value = float(match.group(1))
    return timedelta(seconds=value * _DURATION_UNITS.get(match.group(2), 1))


def run_regression(
    suite: Sequence[TestCase],
    prompt: PromptVersion,
    profile: PlatformProfile,
    config: UseCaseConfig,
    provider,
    *,
    judge_settings: JudgeSettings = JudgeSettings(),
    run_id: str | None = None,
    suite_revision_id: str = "",
    observer: RunObserver = RunObserver(),
    clock: Clock = SYSTEM_CLOCK,
    parallelism: int = 1,
) -> RunRecord:
    """One read-only check of a prompt version: temperature zero, never
    mutates the prompt."""
    record, _ = evaluate_suite(
        suite,
        prompt,
        profile,
        config,
        SimulationSettings.evaluation(),
        provider,
        judge_settings=judge_settings,
        run_kind=RunKind.REGRESSION,
        run_id=run_id,
        suite_revision_id=suite_revision_id,
        observer=observer,
        clock=clock,
        parallelism=parallelism,
    )
    return record


def pass_to_fail_flips(baseline: RunRecord, current: RunRecord) -> tuple[str, ...]:
    """Test ids that passed in the baseline and fail now, sorted."""
    flips = [
        test_id
        for test_id, base in baseline.per_test.items()
        if base.overall == Verdict.PASS
        and test_id in current.per_test
        and current.per_test[test_id].overall == Verdict.FAIL
    ]
    return tuple(sorted(flips))


def detect_drift(
    baseline: RunRecord,
    current: RunRecord,
    *,
    event_id: str | None = None,
    clock: Clock = SYSTEM_CLOCK,
) -> DriftEvent | None:
    """Compare two runs of the same version and suite revision; a drift
    event exists exactly when some test flipped PASS to FAIL."""
    if baseline.use_case_id != current.use_case_id:
        raise ComparisonInvalidError(
            f"runs belong to different use cases: "
            f"{baseline.use_case_id!r} vs {current.use_case_id!r}"
        )
    if baseline.suite_revision_id != current.suite_revision_id:
        raise ComparisonInvalidError(
            f"runs used different suite revisions: "
            f"{baseline.suite_revision_id!r} vs {current.suite_revision_id!r}"
        )
    if baseline.prompt_version_index != current.prompt_version_index:
        raise ComparisonInvalidError(
            f"runs evaluated different prompt versions: "
            f"{baseline.prompt_version_index} vs {current.prompt_version_index}"
        )
    flips = pass_to_fail_flips(baseline, current)
    if not flips:
        return None
    return DriftEvent.from_runs(
        event_id or new_event_id(), clock.now(), baseline, current, flips
    )


def run_regression_cycle(
    store: Store,
    bus: EventBus,
    provider,
    use_case_id: str,
    *,
    judge_settings: JudgeSettings = JudgeSettings(),
    clock: Clock = SYSTEM_CLOCK,
    parallelism: int = 1,
    run_id: str | None = None,
    event_id: str | None = None,
) -> dict:
    """One full scheduled check of a use case's verified version.

    Runs the suite once; on any PASS-to-FAIL flip against the baseline it
    runs the suite a second time immediately, and only flips present in
    both runs become a drift event. The event references the confirming
    run. Single flips are reported as suspected flakes and suppressed.
    """
    config = store.load_use_case(use_case_id)
    verified = store.get_verified(use_case_id)
    if verified is None:
        raise RunStateError(f"use case {use_case_id!r} has no verified version")
    version, revision_id = verified
    suite = store.load_suite_revision(revision_id)
    profile = get_profile(config.platform_profile_id)
    stream_id = run_id or new_run_id()
    settings = SimulationSettings.evaluation()

    def one_pass(pass_run_id: str) -> RunRecord:
        observer = CompositeObserver(
            StoreObserver(
                store,
                use_case_id,
                revision_id,
                temperature=settings.temperature,
                clock=clock,
            ),
            PublishingObserver(bus, stream_id),
        )
        return run_regression(
            suite,
            version,
            profile,
            config,
            provider,
            judge_settings=judge_settings,
            run_id=pass_run_id,
            suite_revision_id=revision_id,
            observer=observer,
            clock=clock,
            parallelism=parallelism,
        )

    baseline = store.latest_clean_run(use_case_id, version.version_index, revision_id)
    bus.publish(
        stream_id,
        "run_started",
        {
            "run_id": stream_id,
            "run_kind": RunKind.REGRESSION.value,
            "version_index": version.version_index,
            "total_tests": len(suite),
        },
    )
    outcome: dict[str, Any] = {
        "run_id": stream_id,
        "use_case_id": use_case_id,
        "version_index": version.version_index,
        "baseline_run_id": baseline.run_id if baseline else None,
        "drift_event_id": None,
    }
    try:
        record = one_pass(stream_id)
        if baseline is None:
            outcome["status"] = (
                "baseline_established" if record.summary.failed == 0 else "no_baseline"
            )
        else:
            flips = pass_to_fail_flips(baseline, record)
            if not flips:
                outcome["status"] = "stable"
            else:
                confirm = one_pass(new_run_id())
                confirmed = tuple(
                    sorted(set(flips) & set(pass_to_fail_flips(baseline, confirm)))
                )
                outcome["confirmation_run_id"] = confirm.run_id
                if not confirmed:
                    outcome["status"] = "flake_suppressed"
                    outcome["suspected_flakes"] = list(flips)
                else:
                    event = DriftEvent.from_runs(
                        event_id or new_event_id(), clock.now(), baseline, confirm, confirmed
                    )
                    store.save_drift_event(use_case_id, event)
                    bus.publish(
                        stream_id,
                        "drift_event",
                        {
                            "event_id": event.event_id,
                            "newly_failing_tests": list(confirmed),
                        },
                    )
                    outcome["status"] = "drift_detected"
                    outcome["drift_event_id"] = event.event_id
        bus.publish(
            stream_id,
            "run_finished",
            {
                "run_id": stream_id,
                "total": record.summary.total,
                "passed": record.summary.passed,
                "failed": record.summary.failed,
            },
        )
    except (ProviderError, SimulationInterruptedError) as err:
        _mark_errored(store, stream_id, str(err))
        bus.publish(stream_id, "run_error", {"code": err.code, "message": str(err)})
        raise
    return outcome


def _mark_errored(store: Store, run_id: str, message: str) -> None:
    try:
        store.mark_run_errored(run_id, message)
    except Exception:
        # the run may not have been created yet or already finished
        pass


def handle_drift(
    store: Store,
    bus: EventBus,
    provider,
    use_case_id: str,
    event_id: str,
    *,
    loop_config: LoopConfig | None = None,
    judge_settings: JudgeSettings = JudgeSettings(),
    platform_guides: str = DEFAULT_PLATFORM_GUIDES,
    clock: Clock = SYSTEM_CLOCK,
    parallelism: int = 1,
    job_id: str | None = None,
    control: StepController | None = None,
) -> dict:
    """Re-enter the repair loop for an open drift event.

    The loop is seeded with the drifted (verified) version and the full
    suite, reordered so the newly failing tests lead; repair versions
    branch off the verified version even when later unverified versions
    exist. Convergence parks the event as repaired_pending_review with the
    candidate version attached; a loop that cannot converge reopens the
    event as urgent. A loop that finds nothing to fix dismisses the event
    as not reproducible.
    """
    event = store.load_drift_event(event_id)
    if event.status != DriftStatus.OPEN:
        raise RunStateError(f"drift event {event_id!r} is {event.status.value}, not open")
    config = store.load_use_case(use_case_id)
    verified = store.get_verified(use_case_id)
    if verified is None:
        raise RunStateError(f"use case {use_case_id!r} has no verified version")
    version, revision_id = verified
    suite = store.load_suite_revision(revision_id)
    drifted = set(event.newly_failing_tests)
    ordered = tuple(
        [t for t in suite if t.id in drifted] + [t for t in suite if t.id not in drifted]
    )
    loop_config = loop_config or default_loop_config(len(suite))
    settings = SimulationSettings.optimization()
    job_id = job_id or new_job_id()
    next_index = max(v.version_index for v in store.list_versions(use_case_id)) + 1

    store.create_job(
        job_id,
        use_case_id,
        "drift_repair",
        loop_config,
        clock.now(),
        settings_doc={"temperature": settings.temperature, "drift_event_id": event_id},
    )
    bus.publish(
        job_id,
        "run_started",
        {
            "run_id": job_id,
            "run_kind": "drift_repair",
            "version_index": version.version_index,
            "total_tests": len(ordered),
        },
    )
    observer = CompositeObserver(
        StoreObserver(
            store,
            use_case_id,
            revision_id,
            temperature=settings.temperature,
            job_id=job_id,
            clock=clock,
        ),
        PublishingObserver(bus, job_id),
    )
    try:
        result = run_optimization(
            config,
            ordered,
            version,
            loop_config,
            settings,
            provider,
            judge_settings=judge_settings,
            platform_guides=platform_guides,
            observer=observer,
            control=control,
            clock=clock,
            suite_revision_id=revision_id,
            parallelism=parallelism,
            next_version_index=next_index,
        )
    except (ProviderError, SimulationInterruptedError) as err:
        store.update_job_status(job_id, "errored", error=str(err))
        bus.publish(job_id, "run_error", {"code": err.code, "message": str(err)})
        raise

    if not result.converged:
        updated = event.with_status(DriftStatus.OPEN, urgent=True)
    elif result.final_version.version_index == version.version_index:
        # the suite came back clean without a single repair: the flips did
        # not reproduce, so there is no candidate to review
        updated = event.with_status(
            DriftStatus.DISMISSED, dismiss_reason="not reproducible during repair"
        )
    else:
        updated = event.with_status(
            DriftStatus.REPAIRED_PENDING_REVIEW,
            repair_prompt_version=result.final_version.version_index,
        )
    store.save_drift_event(use_case_id, updated)
    store.update_job_status(
        job_id,
        "finished",
        result_doc={
            "converged": result.converged,
            "halt_reason": result.halt_reason,
            "final_version": result.final_version.version_index,
            "iterations": len(result.iterations),
        },
        finished_at=clock.now(),
    )
    bus.publish(
        job_id,
        "run_finished",
        {"run_id": job_id, "converged": result.converged, "halt_reason": result.halt_reason},
    )
    return {"job_id": job_id, "event": updated, "result": result}


def approve_drift_repair(store: Store, use_case_id: str, event_id: str) -> DriftEvent:
    """Promote the repair candidate to the verified version."""
    event = store.load_drift_event(event_id)
    if event.status != DriftStatus.REPAIRED_PENDING_REVIEW:
        raise RunStateError(
            f"drift event {event_id!r} is {event.status.value}, not awaiting review"
        )
    if event.repair_prompt_version is None:
        raise RunStateError(f"drift event {event_id!r} has no repair candidate")
    verified = store.get_verified(use_case_id)
    if verified is None:
        raise RunStateError(f"use case {use_case_id!r} has no verified version")
    _, revision_id = verified
    store.mark_verified(use_case_id, event.repair_prompt_version, revision_id)
    updated = event.with_status(DriftStatus.APPROVED)
    store.save_drift_event(use_case_id, updated)
    return updated


def dismiss_drift_event(
    store: Store, use_case_id: str, event_id: str, reason: str
) -> DriftEvent:
    event = store.load_drift_event(event_id)
    if event.status in (DriftStatus.APPROVED, DriftStatus.DISMISSED):
        raise RunStateError(f"drift event {event_id!r} is already {event.status.value}")
    updated = event.with_status(DriftStatus.DISMISSED, dismiss_reason=reason)
    store.save_drift_event(use_case_id, updated)
    return updated


# --- scheduling --------------------------------------------------------------


@dataclass
class _Entry:
    use_case_id: str
    cadence: timedelta
    jitter: timedelta
    next_fire: datetime


class Scheduler:
    """Cadence-based firing with jitter, coalesced catch-up, and
    single-flight per use case.

    due() hands out each due use case once and holds it until
    mark_finished; a cycle that overruns its window never stacks a second
    concurrent cycle. Windows missed while the process was down collapse
    into one immediate firing, then the cadence resumes.
    """

    def __init__(self, store: Store, clock: Clock = SYSTEM_CLOCK, rng: random.Random | None = None):
        self.store = store
        self.clock = clock
        self.rng = rng or random.Random()
        self._entries: dict[str, _Entry] = {}
        self._in_flight: set[str] = set()
        self._lock = threading.Lock()

    def _offset(self, cadence: timedelta, jitter: timedelta) -> timedelta:
        if jitter <= timedelta(0):
            return cadence
        wobble = self.rng.uniform(-jitter.total_seconds(), jitter.total_seconds())
        return cadence + timedelta(seconds=wobble)

    def schedule(
        self,
        use_case_id: str,
        cadence: timedelta | str = DEFAULT_CADENCE,
        jitter: timedelta | str = timedelta(0),
    ) -> datetime:
        """Register a use case; only verified versions are monitorable."""
        if isinstance(cadence, str):
            cadence = parse_duration(cadence)
        if isinstance(jitter, str):
            jitter = parse_duration(jitter)
        if cadence <= timedelta(0):
            raise ValidationError("cadence must be positive")
        if self.store.get_verified(use_case_id) is None:
            raise RunStateError(
                f"use case {use_case_id!r} has no verified version to monitor"
            )
        next_fire = self.clock.now() + self._offset(cadence, jitter)
        with self._lock:
            self._entries[use_case_id] = _Entry(use_case_id, cadence, jitter, next_fire)
        return next_fire

    def unschedule(self, use_case_id: str) -> None:
        with self._lock:
            self._entries.pop(use_case_id, None)
            self._in_flight.discard(use_case_id)

    def scheduled(self) -> dict[str, datetime]:
        with self._lock:
            return {uc: e.next_fire for uc, e in self._entries.items()}

    def due(self) -> tuple[str, ...]:
        """Use cases whose window has passed, each marked in flight. The
        caller must mark_finished when the cycle completes."""
        now = self.clock.now()
        fired = []
        with self._lock:
            for entry in self._entries.values():
                if entry.next_fire > now or entry.use_case_id in self._in_flight:
                    continue
                # collapse every missed window into this one firing
                while entry.next_fire <= now:
                    entry.next_fire = entry.next_fire + self._offset(
                        entry.cadence, entry.jitter
                    )
                self._in_flight.add(entry.use_case_id)
                fired.append(entry.use_case_id)
        return tuple(fired)

    def mark_finished(self, use_case_id: str) -> None:
        with self._lock:
            self._in_flight.discard(use_case_id)

    def pump(self, handler: Callable[[str], Any]) -> list[tuple[str, Any]]:
        """Run one scheduling tick: fire the handler for every due use
        case. A handler error releases its slot, the remaining due cases
        still run, and the first error is re-raised at the end."""
        results = []
        errors: list[Exception] = []
        for use_case_id in self.due():
            try:
                results.append((use_case_id, handler(use_case_id)))
            except Exception as err:
                errors.append(err)
            finally:
                self.mark_finished(use_case_id)
        if errors:
            raise errors[0]
        return results
