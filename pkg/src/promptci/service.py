"""HTTP service: REST endpoints over the store, background run execution,
and per-run server-sent event streams.

Every long-running action returns a run id immediately; progress flows
over /api/runs/{run_id}/events. Run mutations are serialized per use case,
and a step-through pause is resumed by exactly one continue no matter how
many arrive.
"""

from __future__ import annotations

import logging
import threading
import time
from typing import Any, Callable, Iterator

from fastapi import Body, FastAPI, Query, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .clock import SYSTEM_CLOCK, Clock
from .errors import (
    ComparisonInvalidError,
    ConfigurationError,
    GenerationFailedError,
    IntegrityError,
    NotFoundError,
    PromptCIError,
    ProviderError,
    RunStateError,
    SimulationInterruptedError,
    StoreUnavailableError,
    ValidationError,
)
from .events import (
    SNAPSHOT_KIND,
    CompositeObserver,
    EventBus,
    PublishingObserver,
    StreamEvent,
    reduce_run_state,
    sse_format,
)
from .generator import GenerationOptions, generate_test_suite
from .judge import JudgeSettings
from .model import (
    DriftStatus,
    PromptOrigin,
    PromptVersion,
    TestCase,
    TestCategory,
    UseCaseConfig,
    diff_prompt_versions,
    to_iso,
)
from .monitor import Scheduler, approve_drift_repair, dismiss_drift_event, handle_drift, run_regression_cycle
from .parser import parse_prompt
from .repair import LoopConfig, StepController, default_loop_config, run_optimization
from .runner import RunObserver, new_job_id, new_revision_id, new_run_id
from .simulator import SimulationSettings
from .store import Store, StoreObserver

logger = logging.getLogger(__name__)

# Ordered subclass-first: the first match decides the HTTP status.
_ERROR_STATUS = (
    (NotFoundError, 404),
    (IntegrityError, 409),
    (RunStateError, 409),
    (ComparisonInvalidError, 409),
    (SimulationInterruptedError, 502),
    (GenerationFailedError, 502),
    (ProviderError, 502),
    (StoreUnavailableError, 503),
    (ValidationError, 400),
    (ConfigurationError, 400),
)


def error_envelope(err: PromptCIError) -> dict:
    details: dict[str, Any] = {}
    if isinstance(err, IntegrityError):
        details["constraint"] = err.constraint
    return {"code": err.code, "message": str(err), "details": details}


def _status_for(err: PromptCIError) -> int:
    for cls, status in _ERROR_STATUS:
        if isinstance(err, cls):
            return status
    return 500


class _PauseFlag(RunObserver):
    """Records the pause on the manager so continue is idempotent."""

    def __init__(self, manager: "RunManager", job_id: str):
        self.manager = manager
        self.job_id = job_id

    def on_paused(self, version_index):
        self.manager._note_paused(self.job_id)


class RunManager:
    """Owns background run threads, per-job step controllers, and the
    single-flight guarantee: one active run per use case at a time."""

    def __init__(
        self,
        store: Store,
        bus: EventBus,
        provider_factory: Callable[[], Any],
        *,
        clock: Clock = SYSTEM_CLOCK,
        parallelism: int = 1,
        judge_settings: JudgeSettings = JudgeSettings(),
    ):
        self.store = store
        self.bus = bus
        self.provider_factory = provider_factory
        self.clock = clock
        self.parallelism = parallelism
        self.judge_settings = judge_settings
        self._lock = threading.Lock()
        self._busy: dict[str, str] = {}
        self._threads: dict[str, threading.Thread] = {}
        self._controls: dict[str, StepController] = {}
        self._paused: set[str] = set()

    # -- bookkeeping -----------------------------------------------------------

    def _claim(self, use_case_id: str, stream_id: str, resuming: str | None = None) -> None:
        with self._lock:
            current = self._busy.get(use_case_id)
            if current is not None:
                raise RunStateError(
                    f"use case {use_case_id!r} already has an active run {current!r}"
                )
            active = self.store.active_job_for(use_case_id)
            if active is not None and active != resuming:
                raise RunStateError(
                    f"use case {use_case_id!r} has an unfinished job {active!r}; "
                    "resume or abort it first"
                )
            self._busy[use_case_id] = stream_id

    def _release(self, use_case_id: str) -> None:
        with self._lock:
            self._busy.pop(use_case_id, None)

    def _note_paused(self, job_id: str) -> None:
        with self._lock:
            self._paused.add(job_id)
        self.store.update_job_status(job_id, "paused")

    def is_paused(self, job_id: str) -> bool:
        with self._lock:
            return job_id in self._paused

    def wait_idle(self, timeout: float = 10.0) -> None:
        """Join every worker thread; test plumbing."""
        with self._lock:
            threads = list(self._threads.values())
        for thread in threads:
            thread.join(timeout=timeout)

    def _wait_for_stream(self, stream_id: str, thread: threading.Thread) -> None:
        # close the gap between returning the run id and the worker's first
        # publish, so a subscriber never finds an empty stream
        deadline = time.monotonic() + 5.0
        while time.monotonic() < deadline:
            if self.bus.events(stream_id) or not thread.is_alive():
                return
            time.sleep(0.005)

    # -- optimization jobs -------------------------------------------------------

    def start_optimization(
        self,
        use_case_id: str,
        loop_config: LoopConfig | None = None,
        *,
        job_id: str | None = None,
    ) -> str:
        config = self.store.load_use_case(use_case_id)
        revision_id, suite = self.store.latest_suite_revision(use_case_id)
        versions = self.store.list_versions(use_case_id)
        if not versions:
            raise RunStateError(f"use case {use_case_id!r} has no prompt versions")
        initial = versions[-1]
        loop_config = loop_config or default_loop_config(len(suite))
        job_id = job_id or new_job_id()
        self._claim(use_case_id, job_id)
        try:
            settings = SimulationSettings.optimization()
            self.store.create_job(
                job_id,
                use_case_id,
                "optimization",
                loop_config,
                self.clock.now(),
                settings_doc={"temperature": settings.temperature},
            )
            control = StepController()
            with self._lock:
                self._controls[job_id] = control
                self._paused.discard(job_id)
            self.bus.publish(
                job_id,
                "run_started",
                {
                    "run_id": job_id,
                    "run_kind": "optimization",
                    "version_index": initial.version_index,
                    "total_tests": len(suite),
                },
            )
            self._spawn(
                job_id,
                use_case_id,
                config,
                suite,
                revision_id,
                initial,
                loop_config,
                settings,
                first_iteration_index=0,
                next_version_index=None,
            )
        except BaseException:
            self._release(use_case_id)
            raise
        return job_id

    def resume_job(self, job_id: str) -> str:
        """Relaunch a suspended job: iteration numbering continues from the
        last persisted record, against the last persisted version."""
        job = self.store.load_job(job_id)
        with self._lock:
            thread = self._threads.get(job_id)
            if thread is not None and thread.is_alive():
                raise RunStateError(f"job {job_id!r} is already running")
        if job["status"] not in ("suspended", "running"):
            raise RunStateError(f"job {job_id!r} is {job['status']}, not resumable")
        use_case_id = job["use_case_id"]
        config = self.store.load_use_case(use_case_id)
        revision_id, suite = self.store.latest_suite_revision(use_case_id)
        loop_config = LoopConfig.from_dict(job["loop_config"])
        iterations = self.store.iterations_for_job(job_id)
        first = iterations[-1].iteration_index + 1 if iterations else 0
        if first >= loop_config.iteration_limit:
            raise RunStateError(f"job {job_id!r} has exhausted its iteration budget")
        versions = self.store.list_versions(use_case_id)
        initial = versions[-1]
        self._claim(use_case_id, job_id, resuming=job_id)
        try:
            settings = SimulationSettings.optimization()
            self.store.update_job_status(job_id, "running")
            control = StepController()
            with self._lock:
                self._controls[job_id] = control
                self._paused.discard(job_id)
            self.bus.reopen(job_id)
            self.bus.publish(
                job_id,
                "run_started",
                {
                    "run_id": job_id,
                    "run_kind": "optimization",
                    "version_index": initial.version_index,
                    "total_tests": len(suite),
                    "resumed_from_iteration": first,
                },
            )
            self._spawn(
                job_id,
                use_case_id,
                config,
                suite,
                revision_id,
                initial,
                loop_config,
                settings,
                first_iteration_index=first,
                next_version_index=initial.version_index + 1,
            )
        except BaseException:
            self._release(use_case_id)
            raise
        return job_id

    def _spawn(self, job_id, use_case_id, config, suite, revision_id, initial,
               loop_config, settings, first_iteration_index, next_version_index):
        thread = threading.Thread(
            target=self._run_job,
            args=(job_id, use_case_id, config, suite, revision_id, initial,
                  loop_config, settings, first_iteration_index, next_version_index),
            daemon=True,
        )
        with self._lock:
            self._threads[job_id] = thread
        thread.start()

    def _run_job(self, job_id, use_case_id, config, suite, revision_id, initial,
                 loop_config, settings, first_iteration_index, next_version_index):
        observer = CompositeObserver(
            StoreObserver(
                self.store,
                use_case_id,
                revision_id,
                temperature=settings.temperature,
                job_id=job_id,
                clock=self.clock,
            ),
            PublishingObserver(self.bus, job_id),
            _PauseFlag(self, job_id),
        )
        try:
            result = run_optimization(
                config,
                suite,
                initial,
                loop_config,
                settings,
                self.provider_factory(),
                judge_settings=self.judge_settings,
                observer=observer,
                control=self._controls.get(job_id),
                clock=self.clock,
                suite_revision_id=revision_id,
                parallelism=self.parallelism,
                first_iteration_index=first_iteration_index,
                next_version_index=next_version_index,
            )
        except (ProviderError, SimulationInterruptedError) as err:
            # resumable: everything completed so far is already persisted
            self.store.update_job_status(job_id, "suspended", error=str(err))
            self.bus.publish(job_id, "run_error", {"code": err.code, "message": str(err)})
            return
        except Exception as err:
            logger.exception("job %s failed", job_id)
            self.store.update_job_status(job_id, "errored", error=str(err))
            self.bus.publish(
                job_id, "run_error", {"code": "internal_error", "message": str(err)}
            )
            return
        else:
            status = "aborted" if result.halt_reason == "aborted" else "finished"
            self.store.update_job_status(
                job_id,
                status,
                result_doc={
                    "converged": result.converged,
                    "halt_reason": result.halt_reason,
                    "final_version": result.final_version.version_index,
                    "iterations": len(result.iterations),
                },
                finished_at=self.clock.now(),
            )
            self.bus.publish(
                job_id,
                "run_finished",
                {
                    "run_id": job_id,
                    "converged": result.converged,
                    "halt_reason": result.halt_reason,
                    "final_version": result.final_version.version_index,
                },
            )
        finally:
            self._release(use_case_id)
            with self._lock:
                self._paused.discard(job_id)
                self._threads.pop(job_id, None)

    def continue_run(self, run_id: str) -> dict:
        """Resume a paused step-through job, or relaunch a suspended one.
        Repeated posts during one pause trigger exactly one resume: only the
        post that clears the pause flag touches the controller."""
        job = self.store.load_job(run_id)
        with self._lock:
            paused = run_id in self._paused
            self._paused.discard(run_id)
            control = self._controls.get(run_id)
            thread = self._threads.get(run_id)
        if paused:
            self.store.update_job_status(run_id, "running")
            control.resume()
            return {"run_id": run_id, "resumed": True, "status": "running"}
        stale = job["status"] == "running" and (thread is None or not thread.is_alive())
        if job["status"] == "suspended" or stale:
            self.resume_job(run_id)
            return {"run_id": run_id, "resumed": True, "status": "running"}
        return {"run_id": run_id, "resumed": False, "status": job["status"]}

    def abort_run(self, run_id: str) -> dict:
        job = self.store.load_job(run_id)
        if job["status"] in ("finished", "errored", "aborted"):
            raise RunStateError(f"job {run_id!r} is already {job['status']}")
        with self._lock:
            control = self._controls.get(run_id)
            thread = self._threads.get(run_id)
            self._paused.discard(run_id)
        if control is None or thread is None or not thread.is_alive():
            # not attached to a live worker (suspended or stale): mark directly
            self.store.update_job_status(run_id, "aborted")
            return {"run_id": run_id, "status": "aborted"}
        control.abort()
        return {"run_id": run_id, "status": "aborting"}

    # -- regression and drift ------------------------------------------------

    def start_regression(self, use_case_id: str, *, run_id: str | None = None) -> str:
        self.store.load_use_case(use_case_id)
        if self.store.get_verified(use_case_id) is None:
            raise RunStateError(
                f"use case {use_case_id!r} has no verified version to regress"
            )
        run_id = run_id or new_run_id()
        self._claim(use_case_id, run_id)

        def work():
            try:
                run_regression_cycle(
                    self.store,
                    self.bus,
                    self.provider_factory(),
                    use_case_id,
                    judge_settings=self.judge_settings,
                    clock=self.clock,
                    parallelism=self.parallelism,
                    run_id=run_id,
                )
            except Exception:
                logger.exception("regression %s failed", run_id)
            finally:
                self._release(use_case_id)

        thread = threading.Thread(target=work, daemon=True)
        with self._lock:
            self._threads[run_id] = thread
        thread.start()
        self._wait_for_stream(run_id, thread)
        return run_id

    def start_drift_repair(self, use_case_id: str, event_id: str, *, job_id: str | None = None) -> str:
        event = self.store.load_drift_event(event_id)
        if event.status != DriftStatus.OPEN:
            raise RunStateError(
                f"drift event {event_id!r} is {event.status.value}, not open"
            )
        job_id = job_id or new_job_id()
        self._claim(use_case_id, job_id)

        def work():
            try:
                handle_drift(
                    self.store,
                    self.bus,
                    self.provider_factory(),
                    use_case_id,
                    event_id,
                    judge_settings=self.judge_settings,
                    clock=self.clock,
                    parallelism=self.parallelism,
                    job_id=job_id,
                )
            except Exception:
                logger.exception("drift repair %s failed", job_id)
            finally:
                self._release(use_case_id)

        thread = threading.Thread(target=work, daemon=True)
        with self._lock:
            self._threads[job_id] = thread
        thread.start()
        self._wait_for_stream(job_id, thread)
        return job_id

    def run_monitor_cycle(self, use_case_id: str, auto_repair: bool = True) -> dict:
        """One synchronous scheduled check; on confirmed drift, chains the
        repair loop and parks the outcome for review. The scheduler's pump
        drives this."""
        self._claim(use_case_id, f"monitor:{use_case_id}")
        try:
            outcome = run_regression_cycle(
                self.store,
                self.bus,
                self.provider_factory(),
                use_case_id,
                judge_settings=self.judge_settings,
                clock=self.clock,
                parallelism=self.parallelism,
            )
            if auto_repair and outcome.get("drift_event_id"):
                repair = handle_drift(
                    self.store,
                    self.bus,
                    self.provider_factory(),
                    use_case_id,
                    outcome["drift_event_id"],
                    judge_settings=self.judge_settings,
                    clock=self.clock,
                    parallelism=self.parallelism,
                )
                outcome["repair_job_id"] = repair["job_id"]
                outcome["drift_status"] = repair["event"].status.value
        finally:
            self._release(use_case_id)
        return outcome


def _parse_body(factory: Callable[[dict], Any], doc: dict, what: str) -> Any:
    # missing required keys surface as 400s, not internal errors
    try:
        return factory(doc)
    except PromptCIError:
        raise
    except (KeyError, TypeError, AttributeError, ValueError) as err:
        raise ValidationError(f"malformed {what} document: {err}") from err


def _version_ref(ref: str) -> tuple[str, int]:
    use_case_id, sep, index = ref.rpartition("@")
    if not sep or not use_case_id:
        raise ValidationError(f"version reference {ref!r} is not of the form id@index")
    try:
        return use_case_id, int(index)
    except ValueError:
        raise ValidationError(f"version reference {ref!r} has a non-integer index")


def build_app(
    store: Store,
    provider_factory: Callable[[], Any],
    *,
    clock: Clock = SYSTEM_CLOCK,
    bus: EventBus | None = None,
    parallelism: int = 1,
    judge_settings: JudgeSettings = JudgeSettings(),
) -> FastAPI:
    """Wire the API over one store and one provider factory. The scripted
    provider makes the whole surface exercisable without network egress."""
    if bus is None:
        bus = EventBus(
            sink=lambda run_id, kind, payload: store.append_event(
                run_id, kind, payload, clock.now()
            ),
            clock=clock,
        )
    manager = RunManager(
        store,
        bus,
        provider_factory,
        clock=clock,
        parallelism=parallelism,
        judge_settings=judge_settings,
    )
    scheduler = Scheduler(store, clock=clock)
    app = FastAPI(title="promptci", docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.bus = bus
    app.state.manager = manager
    app.state.scheduler = scheduler

    @app.exception_handler(PromptCIError)
    async def handle_domain_error(request: Request, err: PromptCIError):
        return JSONResponse(status_code=_status_for(err), content=error_envelope(err))

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    # -- use cases -------------------------------------------------------------

    @app.post("/api/usecases", status_code=201)
    def create_use_case(body: dict = Body(...)):
        config = _parse_body(UseCaseConfig.from_dict, body, "use case")
        store.save_use_case(config)
        return {"id": config.id}

    @app.get("/api/usecases")
    def list_use_cases():
        return {"use_cases": [c.to_dict() for c in store.list_use_cases()]}

    @app.post("/api/usecases/import", status_code=201)
    def import_use_case(body: dict = Body(...)):
        return {"id": _parse_body(store.import_use_case, body, "archive")}

    @app.get("/api/usecases/{use_case_id}")
    def get_use_case(use_case_id: str):
        return store.load_use_case(use_case_id).to_dict()

    @app.put("/api/usecases/{use_case_id}")
    def update_use_case(use_case_id: str, body: dict = Body(...)):
        config = _parse_body(UseCaseConfig.from_dict, body, "use case")
        if config.id != use_case_id:
            raise ValidationError(
                f"body id {config.id!r} does not match path id {use_case_id!r}"
            )
        store.load_use_case(use_case_id)
        store.save_use_case(config)
        return config.to_dict()

    @app.delete("/api/usecases/{use_case_id}")
    def delete_use_case(use_case_id: str):
        store.delete_use_case(use_case_id)
        return {"deleted": use_case_id}

    @app.get("/api/usecases/{use_case_id}/export")
    def export_use_case(use_case_id: str):
        return store.export_use_case(use_case_id)

    @app.post("/api/usecases/{use_case_id}/lint")
    def lint_prompt(use_case_id: str, body: dict | None = Body(None)):
        config = store.load_use_case(use_case_id)
        body = body or {}
        if "text" in body:
            text = body["text"]
        else:
            versions = store.list_versions(use_case_id)
            if not versions:
                raise NotFoundError(
                    f"use case {use_case_id!r} has no prompt versions to lint"
                )
            index = body.get("version", versions[-1].version_index)
            text = store.load_prompt_version(use_case_id, index).text
        report = parse_prompt(text, config)
        doc = report.to_dict()
        doc["warning_count"] = len(report.warnings)
        return doc

    # -- suites ------------------------------------------------------------------

    @app.post("/api/usecases/{use_case_id}/tests/generate")
    def generate_tests(use_case_id: str, body: dict | None = Body(None)):
        config = store.load_use_case(use_case_id)
        body = body or {}
        counts = body.get("target_counts")
        try:
            parsed_counts = (
                {TestCategory(k): v for k, v in counts.items()} if counts else None
            )
        except ValueError as err:
            raise ValidationError(str(err)) from err
        options = GenerationOptions(
            target_counts=parsed_counts,
            seed_instructions=body.get("seed_instructions", ""),
        )
        suite = generate_test_suite(config, options, provider_factory())
        revision_id = body.get("revision_id") or new_revision_id()
        store.save_suite_revision(use_case_id, suite, revision_id, clock.now())
        return {"revision_id": revision_id, "tests": [c.to_dict() for c in suite]}

    @app.get("/api/usecases/{use_case_id}/tests")
    def get_tests(use_case_id: str):
        store.load_use_case(use_case_id)
        revision_id, suite = store.latest_suite_revision(use_case_id)
        return {"revision_id": revision_id, "tests": [c.to_dict() for c in suite]}

    @app.put("/api/usecases/{use_case_id}/tests")
    def put_tests(use_case_id: str, body: dict = Body(...)):
        store.load_use_case(use_case_id)
        cases = [
            _parse_body(TestCase.from_dict, doc, "test case")
            for doc in body.get("tests", ())
        ]
        if not cases:
            raise ValidationError("tests must be a non-empty list")
        seen = set()
        for case in cases:
            if case.id in seen:
                raise ValidationError(f"duplicate test id {case.id!r}")
            seen.add(case.id)
        revision_id = body.get("revision_id") or new_revision_id()
        store.save_suite_revision(use_case_id, cases, revision_id, clock.now())
        return {"revision_id": revision_id, "count": len(cases)}

    # -- versions -----------------------------------------------------------------

    @app.get("/api/usecases/{use_case_id}/versions")
    def list_versions(use_case_id: str):
        store.load_use_case(use_case_id)
        verified = store.get_verified(use_case_id)
        verified_index = verified[0].version_index if verified else None
        return {
            "versions": [v.to_dict() for v in store.list_versions(use_case_id)],
            "verified_index": verified_index,
        }

    @app.post("/api/usecases/{use_case_id}/versions", status_code=201)
    def add_version(use_case_id: str, body: dict = Body(...)):
        store.load_use_case(use_case_id)
        if not body.get("text"):
            raise ValidationError("version text must be non-empty")
        existing = store.list_versions(use_case_id)
        if existing:
            index = existing[-1].version_index + 1
            origin = PromptOrigin.OPERATOR_EDIT
            parent = existing[-1].version_index
        else:
            index, origin, parent = 0, PromptOrigin.DRAFT, None
        version = PromptVersion(
            version_index=index,
            text=body["text"],
            origin=origin,
            parent_version=parent,
            created_at=clock.now(),
        )
        store.add_prompt_version(use_case_id, version)
        return {"version_index": index, "origin": origin.value}

    @app.post("/api/usecases/{use_case_id}/versions/{index}/verify")
    def verify_version(use_case_id: str, index: int, body: dict | None = Body(None)):
        body = body or {}
        revision_id = body.get("revision_id")
        if revision_id is None:
            revision_id, _ = store.latest_suite_revision(use_case_id)
        store.mark_verified(use_case_id, index, revision_id)
        return {"verified_index": index, "suite_revision_id": revision_id}

    @app.get("/api/versions/{a}/diff/{b}")
    def version_diff(a: str, b: str):
        uc_a, idx_a = _version_ref(a)
        uc_b, idx_b = _version_ref(b)
        old = store.load_prompt_version(uc_a, idx_a)
        new = store.load_prompt_version(uc_b, idx_b)
        return {
            "a": {"use_case_id": uc_a, "version_index": idx_a, "origin": old.origin.value},
            "b": {
                "use_case_id": uc_b,
                "version_index": idx_b,
                "origin": new.origin.value,
                "repair_rationale": new.repair_rationale,
            },
            "diff": diff_prompt_versions(old, new).to_dict(),
        }

    # -- runs --------------------------------------------------------------------

    @app.post("/api/usecases/{use_case_id}/optimize", status_code=202)
    def optimize(use_case_id: str, body: dict | None = Body(None)):
        body = body or {}
        loop_config = None
        if any(
            k in body
            for k in ("max_iterations", "extended_limit", "stop_on_convergence", "step_through")
        ):
            _, suite = store.latest_suite_revision(use_case_id)
            base = default_loop_config(len(suite))
            loop_config = LoopConfig(
                max_iterations=body.get("max_iterations", base.max_iterations),
                extended_limit=body.get("extended_limit", base.extended_limit),
                stop_on_convergence=body.get("stop_on_convergence", True),
                step_through=body.get("step_through", False),
            )
        run_id = manager.start_optimization(use_case_id, loop_config)
        return {"run_id": run_id}

    @app.post("/api/usecases/{use_case_id}/regress", status_code=202)
    def regress(use_case_id: str):
        return {"run_id": manager.start_regression(use_case_id)}

    @app.get("/api/runs/{run_id}")
    def run_status(run_id: str):
        try:
            return {"kind": "run", **store.run_status(run_id)}
        except NotFoundError:
            job = store.load_job(run_id)
            out = {
                "kind": "job",
                "run_id": run_id,
                "use_case_id": job["use_case_id"],
                "job_kind": job["kind"],
                "status": job["status"],
                "loop_config": job["loop_config"],
                "created_at": job["created_at"],
                "finished_at": job["finished_at"],
                "error": job["error"],
                "paused": manager.is_paused(run_id),
                "iterations": [
                    i.to_dict() for i in store.iterations_for_job(run_id)
                ],
            }
            for extra in ("settings", "result"):
                if extra in job:
                    out[extra] = job[extra]
            return out

    @app.post("/api/runs/{run_id}/continue")
    def continue_run(run_id: str):
        return manager.continue_run(run_id)

    @app.post("/api/runs/{run_id}/abort")
    def abort_run(run_id: str):
        return manager.abort_run(run_id)

    @app.get("/api/runs/{run_id}/tests/{test_id}/transcript")
    def transcript(run_id: str, test_id: str):
        record = store.load_transcript(run_id, test_id)
        verdict = store.load_verdict(run_id, test_id)
        return {
            "transcript": record.to_dict(),
            "verdict": verdict.to_dict(),
            "rendered": record.render_text(),
        }

    # -- drift ---------------------------------------------------------------------

    @app.get("/api/usecases/{use_case_id}/drift")
    def list_drift(use_case_id: str, status: str | None = Query(None)):
        store.load_use_case(use_case_id)
        events = store.list_drift_events(use_case_id, status=status)
        return {"events": [e.to_dict() for e in events]}

    @app.post("/api/usecases/{use_case_id}/drift/{event_id}/repair", status_code=202)
    def repair_drift(use_case_id: str, event_id: str):
        return {"run_id": manager.start_drift_repair(use_case_id, event_id)}

    @app.post("/api/usecases/{use_case_id}/drift/{event_id}/approve")
    def approve_drift(use_case_id: str, event_id: str):
        return approve_drift_repair(store, use_case_id, event_id).to_dict()

    @app.post("/api/usecases/{use_case_id}/drift/{event_id}/dismiss")
    def dismiss_drift(use_case_id: str, event_id: str, body: dict | None = Body(None)):
        reason = (body or {}).get("reason", "dismissed by operator")
        return dismiss_drift_event(store, use_case_id, event_id, reason).to_dict()

    # -- monitor schedule ------------------------------------------------------------

    @app.get("/api/monitor")
    def monitor_schedule():
        return {
            "scheduled": {
                uc: fire.isoformat() for uc, fire in scheduler.scheduled().items()
            }
        }

    @app.post("/api/usecases/{use_case_id}/monitor")
    def monitor_use_case(use_case_id: str, body: dict | None = Body(None)):
        body = body or {}
        next_fire = scheduler.schedule(
            use_case_id,
            cadence=body.get("cadence", "24h"),
            jitter=body.get("jitter", "0s"),
        )
        return {"use_case_id": use_case_id, "next_fire": next_fire.isoformat()}

    @app.delete("/api/usecases/{use_case_id}/monitor")
    def unmonitor_use_case(use_case_id: str):
        scheduler.unschedule(use_case_id)
        return {"use_case_id": use_case_id, "scheduled": False}

    # -- event stream ------------------------------------------------------------------

    def _logged_events(run_id: str) -> list[StreamEvent]:
        # store log rows arrive in publish order, so per-run renumbering
        # reproduces the bus sequence numbers exactly
        return [
            StreamEvent(
                seq=i + 1,
                run_id=run_id,
                kind=entry["kind"],
                payload=entry["payload"],
                created_at=entry["created_at"],
            )
            for i, entry in enumerate(store.events_for(run_id))
        ]

    @app.get("/api/runs/{run_id}/events")
    def events(run_id: str, request: Request, after: int | None = Query(None)):
        # no id given: fresh subscriber, snapshot then tail; an explicit
        # after (or reconnect header) replays raw events with seq > after
        last_seen = request.headers.get("last-event-id")
        after_seq = int(last_seen) if last_seen is not None else after

        if bus.events(run_id):
            stream: Iterator[StreamEvent] = bus.subscribe(run_id, after_seq=after_seq)
        else:
            logged = _logged_events(run_id)
            if not logged:
                raise NotFoundError(f"no event stream for run {run_id!r}")
            if after_seq is not None:
                stream = iter([e for e in logged if e.seq > after_seq])
            else:
                snapshot = StreamEvent(
                    seq=logged[-1].seq,
                    run_id=run_id,
                    kind=SNAPSHOT_KIND,
                    payload=reduce_run_state(logged),
                    created_at=to_iso(clock.now()),
                )
                stream = iter([snapshot])

        def render() -> Iterator[str]:
            for event in stream:
                yield sse_format(event)

        return StreamingResponse(render(), media_type="text/event-stream")

    return app


def serve(
    store: Store,
    provider_factory: Callable[[], Any],
    *,
    host: str = "127.0.0.1",
    port: int = 8321,
    parallelism: int = 1,
    monitor_poll_seconds: float = 30.0,
) -> None:
    """Run the API, scheduler, and workers in one process."""
    import uvicorn

    app = build_app(store, provider_factory, parallelism=parallelism)
    scheduler: Scheduler = app.state.scheduler
    manager: RunManager = app.state.manager
    stop = threading.Event()

    def monitor_loop():
        while not stop.is_set():
            try:
                scheduler.pump(manager.run_monitor_cycle)
            except Exception:
                logger.exception("monitor tick failed")
            stop.wait(monitor_poll_seconds)

    ticker = threading.Thread(target=monitor_loop, daemon=True)
    ticker.start()
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        stop.set()
