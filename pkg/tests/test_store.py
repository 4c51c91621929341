"""Store tests: round trips, named integrity constraints, version lineage,
crash durability across reopen, and concurrent reads during writes."""

import json
import sqlite3
import threading
from datetime import datetime, timedelta, timezone

import pytest

from promptci.errors import (
    IntegrityError,
    NotFoundError,
    RunStateError,
    StoreUnavailableError,
)
from promptci.model import (
    CriterionVerdict,
    DriftEvent,
    DriftStatus,
    FailureClass,
    FailureDiagnosis,
    PerTestResult,
    PromptOrigin,
    PromptVersion,
    RunKind,
    RunRecord,
    RunSummary,
    TestCase,
    ToolSpec,
    Transcript,
    Turn,
    UseCaseConfig,
    Verdict,
    VerdictReport,
)
from promptci.repair import IterationRecord, LoopConfig
from promptci.store import Store, resolve_ref

T0 = datetime(2024, 3, 1, 12, 0, tzinfo=timezone.utc)


@pytest.fixture
def store(tmp_path):
    s = Store(tmp_path / "state.db")
    yield s
    s.close()


def make_config(use_case_id="uc1"):
    return UseCaseConfig(
        id=use_case_id,
        name="cancellations",
        requirements="Handle cancellation requests end to end.",
        tools=(ToolSpec(name="submitCancellation"),),
    )


def make_case(test_id="t1"):
    return TestCase(
        id=test_id,
        title=f"case {test_id}",
        category="happy_path",
        conversation_script=("I want to cancel",),
        pass_criteria=("The agent confirms before cancelling",),
    )


def make_version(index=0):
    if index == 0:
        return PromptVersion(
            version_index=0, text="Be helpful.", origin=PromptOrigin.DRAFT, created_at=T0
        )
    return PromptVersion(
        version_index=index,
        text=f"Be helpful. rev {index}",
        origin=PromptOrigin.REPAIR,
        parent_version=index - 1,
        repair_rationale="scripted",
        created_at=T0,
    )


def make_transcript(test_id="t1"):
    return Transcript(
        test_case_id=test_id,
        prompt_version_index=0,
        turns=(Turn.customer("hi"), Turn.assistant("hello")),
        completed=True,
    )


def make_verdict(test_id="t1", verdict=Verdict.PASS):
    return VerdictReport(
        test_case_id=test_id,
        prompt_version_index=0,
        criterion_verdicts=(
            CriterionVerdict(
                criterion_text="greets politely", verdict=verdict, reasoning="checked"
            ),
        ),
    )


def make_record(run_id, overalls, started=T0, kind=RunKind.REGRESSION):
    per_test = {
        test_id: PerTestResult(
            transcript_ref=f"tr:{run_id}:{test_id}",
            verdict_ref=f"vd:{run_id}:{test_id}",
            overall=overall,
        )
        for test_id, overall in overalls.items()
    }
    passed = sum(1 for v in overalls.values() if v == Verdict.PASS)
    return RunRecord(
        run_id=run_id,
        run_kind=kind,
        prompt_version_index=0,
        started_at=started,
        finished_at=started + timedelta(seconds=5),
        per_test=per_test,
        summary=RunSummary(total=len(overalls), passed=passed, failed=len(overalls) - passed),
        use_case_id="uc1",
        suite_revision_id="rev1",
    )


def seed(store, use_case_id="uc1", revision_id="rev1"):
    store.save_use_case(make_config(use_case_id))
    store.save_suite_revision(use_case_id, (make_case("t1"), make_case("t2")), revision_id, T0)
    store.add_prompt_version(use_case_id, make_version(0))


def start_run(store, run_id="run-a", temperature=0.0, kind="regression", started=T0):
    store.create_run(
        run_id=run_id,
        use_case_id="uc1",
        run_kind=kind,
        prompt_version_index=0,
        suite_revision_id="rev1",
        started_at=started,
        temperature=temperature,
    )


class TestRoundTrips:
    def test_use_case(self, store):
        config = make_config()
        store.save_use_case(config)
        assert store.load_use_case("uc1") == config
        assert store.list_use_cases() == (config,)

    def test_suite_revision(self, store):
        seed(store)
        cases = store.load_suite_revision("rev1")
        assert [c.id for c in cases] == ["t1", "t2"]
        revision_id, latest = store.latest_suite_revision("uc1")
        assert revision_id == "rev1"
        assert latest == cases

    def test_latest_revision_prefers_newest(self, store):
        seed(store)
        store.save_suite_revision("uc1", (make_case("t9"),), "rev2", T0 + timedelta(hours=1))
        revision_id, cases = store.latest_suite_revision("uc1")
        assert revision_id == "rev2"
        assert [c.id for c in cases] == ["t9"]

    def test_prompt_version(self, store):
        seed(store)
        assert store.load_prompt_version("uc1", 0) == make_version(0)

    def test_run_record(self, store):
        seed(store)
        start_run(store)
        record = make_record("run-a", {"t1": Verdict.PASS, "t2": Verdict.FAIL})
        store.finish_run(record)
        assert store.load_run_record("run-a") == record

    def test_drift_event(self, store):
        seed(store)
        event = DriftEvent(
            event_id="drift-1",
            detected_at=T0,
            regression_run_id="run-b",
            baseline_run_id="run-a",
            newly_failing_tests=("t2",),
        )
        store.save_drift_event("uc1", event)
        assert store.load_drift_event("drift-1") == event
        updated = event.with_status(DriftStatus.DISMISSED, dismiss_reason="known flake")
        store.save_drift_event("uc1", updated)
        assert store.load_drift_event("drift-1").status == DriftStatus.DISMISSED
        assert store.list_drift_events("uc1", status="dismissed") == (updated,)

    def test_iteration(self, store):
        seed(store)
        store.create_job("job-1", "uc1", "optimize", LoopConfig(), T0)
        record = IterationRecord(
            iteration_index=0,
            run_record_ref="run-a",
            failures=(
                FailureDiagnosis(
                    failure_class=FailureClass.TOOL_CALL_SKIP,
                    responsible_section="MISSING",
                    explanation="no auth rule",
                    evidence_test_ids=("t1",),
                ),
            ),
            repair_version=1,
            pass_count=1,
            fail_count=1,
        )
        store.save_iteration("job-1", record)
        assert store.iterations_for_job("job-1") == (record,)

    def test_missing_entities_raise_not_found(self, store):
        with pytest.raises(NotFoundError):
            store.load_use_case("ghost")
        with pytest.raises(NotFoundError):
            store.load_suite_revision("ghost")
        with pytest.raises(NotFoundError):
            store.load_prompt_version("ghost", 0)
        with pytest.raises(NotFoundError):
            store.run_status("ghost")
        with pytest.raises(NotFoundError):
            store.load_job("ghost")
        with pytest.raises(NotFoundError):
            store.load_drift_event("ghost")


class TestVersionLineage:
    def test_first_version_must_be_zero(self, store):
        store.save_use_case(make_config())
        with pytest.raises(IntegrityError) as err:
            store.add_prompt_version("uc1", make_version(1))
        assert err.value.constraint == "version_lineage"

    def test_gap_rejected(self, store):
        seed(store)
        with pytest.raises(IntegrityError) as err:
            store.add_prompt_version("uc1", make_version(2))
        assert err.value.constraint == "version_lineage"

    def test_duplicate_index_rejected(self, store):
        seed(store)
        with pytest.raises(IntegrityError):
            store.add_prompt_version("uc1", make_version(0))

    def test_missing_parent_rejected(self, store):
        seed(store)
        store.add_prompt_version("uc1", make_version(1))
        orphan = PromptVersion(
            version_index=2,
            text="x",
            origin=PromptOrigin.REPAIR,
            parent_version=7,
            repair_rationale="bad parent",
        )
        with pytest.raises(IntegrityError) as err:
            store.add_prompt_version("uc1", orphan)
        assert err.value.constraint == "version_lineage"

    def test_branch_from_older_version_allowed(self, store):
        # a drift repair branches from the verified version, not the head
        seed(store)
        store.add_prompt_version("uc1", make_version(1))
        branch = PromptVersion(
            version_index=2,
            text="x",
            origin=PromptOrigin.REPAIR,
            parent_version=0,
            repair_rationale="drift repair on verified version",
        )
        store.add_prompt_version("uc1", branch)
        assert store.load_prompt_version("uc1", 2).parent_version == 0

    def test_list_versions_is_a_connected_chain(self, store):
        seed(store)
        for i in (1, 2, 3):
            store.add_prompt_version("uc1", make_version(i))
        versions = store.list_versions("uc1")
        assert [v.version_index for v in versions] == [0, 1, 2, 3]
        assert all(
            v.parent_version == v.version_index - 1 for v in versions[1:]
        )

    def test_delete_with_dependent_runs_rejected(self, store):
        seed(store)
        start_run(store)
        with pytest.raises(IntegrityError) as err:
            store.delete_prompt_version("uc1", 0)
        assert err.value.constraint == "version_has_runs"

    def test_delete_is_a_tombstone(self, store):
        seed(store)
        store.add_prompt_version("uc1", make_version(1))
        store.delete_prompt_version("uc1", 1)
        with pytest.raises(NotFoundError):
            store.load_prompt_version("uc1", 1)
        # the row survives for auditability
        with sqlite3.connect(store._path) as conn:
            row = conn.execute(
                "SELECT deleted FROM prompt_versions WHERE version_index=1"
            ).fetchone()
        assert row == (1,)


class TestVerification:
    def test_mark_and_get_verified(self, store):
        seed(store)
        store.mark_verified("uc1", 0, "rev1")
        version, revision_id = store.get_verified("uc1")
        assert version.version_index == 0
        assert revision_id == "rev1"

    def test_single_verified_version(self, store):
        seed(store)
        store.add_prompt_version("uc1", make_version(1))
        store.mark_verified("uc1", 0, "rev1")
        store.mark_verified("uc1", 1, "rev1")
        version, _ = store.get_verified("uc1")
        assert version.version_index == 1

    def test_unverified_returns_none(self, store):
        seed(store)
        assert store.get_verified("uc1") is None

    def test_verification_requires_existing_revision(self, store):
        seed(store)
        with pytest.raises(IntegrityError) as err:
            store.mark_verified("uc1", 0, "ghost")
        assert err.value.constraint == "verification_requires_suite_revision"

    def test_bind_suite_revision(self, store):
        seed(store)
        store.save_suite_revision("uc1", (make_case("t3"),), "rev2", T0)
        store.bind_suite_revision("uc1", 0, "rev2")
        store.mark_verified("uc1", 0, "rev2")
        _, revision_id = store.get_verified("uc1")
        assert revision_id == "rev2"


class TestRuns:
    def test_create_requires_version(self, store):
        store.save_use_case(make_config())
        store.save_suite_revision("uc1", (make_case(),), "rev1", T0)
        with pytest.raises(IntegrityError) as err:
            start_run(store)
        assert err.value.constraint == "run_requires_version"

    def test_create_requires_revision(self, store):
        store.save_use_case(make_config())
        store.add_prompt_version("uc1", make_version(0))
        with pytest.raises(IntegrityError) as err:
            start_run(store)
        assert err.value.constraint == "run_requires_suite_revision"

    def test_duplicate_run_id_rejected(self, store):
        seed(store)
        start_run(store)
        with pytest.raises(IntegrityError) as err:
            start_run(store)
        assert err.value.constraint == "duplicate_run"

    def test_status_lifecycle(self, store):
        seed(store)
        start_run(store, temperature=0.3)
        status = store.run_status("run-a")
        assert status["status"] == "running"
        assert status["temperature"] == 0.3
        record = make_record("run-a", {"t1": Verdict.PASS})
        store.finish_run(record)
        status = store.run_status("run-a")
        assert status["status"] == "finished"
        assert status["record"]["summary"]["passed"] == 1
        with pytest.raises(RunStateError):
            store.finish_run(record)

    def test_errored_run(self, store):
        seed(store)
        start_run(store)
        store.mark_run_errored("run-a", "provider outage")
        assert store.run_status("run-a")["status"] == "errored"
        with pytest.raises(RunStateError):
            store.mark_run_errored("run-a", "again")

    def test_unfinished_record_load_rejected(self, store):
        seed(store)
        start_run(store)
        with pytest.raises(RunStateError):
            store.load_run_record("run-a")

    def test_per_test_results(self, store):
        seed(store)
        start_run(store)
        store.save_test_result("run-a", "t1", make_transcript("t1"), make_verdict("t1"))
        store.save_test_result(
            "run-a", "t2", make_transcript("t2"), make_verdict("t2", Verdict.FAIL)
        )
        assert store.test_results_for_run("run-a") == {
            "t1": Verdict.PASS,
            "t2": Verdict.FAIL,
        }
        assert store.load_transcript("run-a", "t1") == make_transcript("t1")
        assert store.load_verdict("run-a", "t2") == make_verdict("t2", Verdict.FAIL)

    def test_result_requires_run(self, store):
        seed(store)
        with pytest.raises(IntegrityError) as err:
            store.save_test_result("ghost", "t1", make_transcript(), make_verdict())
        assert err.value.constraint == "result_requires_run"

    def test_query_runs_filters(self, store):
        seed(store)
        start_run(store, run_id="run-a", kind="regression", started=T0)
        start_run(store, run_id="run-b", kind="optimization", started=T0 + timedelta(hours=2))
        rows = store.query_runs(use_case_id="uc1", run_kind="regression")
        assert [r["run_id"] for r in rows] == ["run-a"]
        rows = store.query_runs(since=T0 + timedelta(hours=1))
        assert [r["run_id"] for r in rows] == ["run-b"]
        rows = store.query_runs(until=T0 + timedelta(hours=1))
        assert [r["run_id"] for r in rows] == ["run-a"]

    def test_latest_clean_run(self, store):
        seed(store)
        start_run(store, run_id="run-a", started=T0)
        store.finish_run(make_record("run-a", {"t1": Verdict.PASS, "t2": Verdict.PASS}))
        start_run(store, run_id="run-b", started=T0 + timedelta(days=1))
        store.finish_run(
            make_record(
                "run-b",
                {"t1": Verdict.PASS, "t2": Verdict.FAIL},
                started=T0 + timedelta(days=1),
            )
        )
        start_run(store, run_id="run-c", started=T0 + timedelta(days=2))
        store.finish_run(
            make_record(
                "run-c",
                {"t1": Verdict.PASS, "t2": Verdict.PASS},
                started=T0 + timedelta(days=2),
            )
        )
        baseline = store.latest_clean_run("uc1", 0, "rev1")
        assert baseline.run_id == "run-c"
        assert store.latest_clean_run("uc1", 0, "ghost") is None


class TestJobs:
    def test_lifecycle(self, store):
        seed(store)
        store.create_job("job-1", "uc1", "optimize", LoopConfig(max_iterations=3), T0)
        assert store.active_job_for("uc1") == "job-1"
        job = store.load_job("job-1")
        assert job["status"] == "running"
        assert job["loop_config"]["max_iterations"] == 3
        store.update_job_status(
            "job-1", "finished", result_doc={"converged": True}, finished_at=T0
        )
        assert store.active_job_for("uc1") is None
        assert store.load_job("job-1")["result"] == {"converged": True}

    def test_paused_job_is_active(self, store):
        seed(store)
        store.create_job("job-1", "uc1", "optimize", LoopConfig(), T0)
        store.update_job_status("job-1", "paused")
        assert store.active_job_for("uc1") == "job-1"

    def test_duplicate_job_rejected(self, store):
        seed(store)
        store.create_job("job-1", "uc1", "optimize", LoopConfig(), T0)
        with pytest.raises(IntegrityError) as err:
            store.create_job("job-1", "uc1", "optimize", LoopConfig(), T0)
        assert err.value.constraint == "duplicate_job"

    def test_duplicate_iteration_rejected(self, store):
        seed(store)
        store.create_job("job-1", "uc1", "optimize", LoopConfig(), T0)
        record = IterationRecord(
            iteration_index=0,
            run_record_ref="run-a",
            failures=(),
            repair_version=None,
            pass_count=1,
            fail_count=0,
        )
        store.save_iteration("job-1", record)
        with pytest.raises(IntegrityError) as err:
            store.save_iteration("job-1", record)
        assert err.value.constraint == "duplicate_iteration"

    def test_unknown_status_rejected(self, store):
        seed(store)
        store.create_job("job-1", "uc1", "optimize", LoopConfig(), T0)
        with pytest.raises(RunStateError):
            store.update_job_status("job-1", "mystery")


class TestEventLog:
    def test_append_and_read_ordered(self, store):
        seq1 = store.append_event("run-a", "run_started", {"version_index": 0}, T0)
        seq2 = store.append_event("run-a", "test_started", {"test_id": "t1"}, T0)
        store.append_event("run-other", "run_started", {}, T0)
        events = store.events_for("run-a")
        assert [e["seq"] for e in events] == [seq1, seq2]
        assert [e["kind"] for e in events] == ["run_started", "test_started"]
        assert store.events_for("run-a", after_seq=seq1)[0]["kind"] == "test_started"


class TestExportImport:
    def populate(self, store):
        seed(store)
        store.add_prompt_version("uc1", make_version(1))
        store.mark_verified("uc1", 1, "rev1")
        start_run(store)
        store.save_test_result("run-a", "t1", make_transcript("t1"), make_verdict("t1"))
        store.finish_run(make_record("run-a", {"t1": Verdict.PASS}))
        store.create_job("job-1", "uc1", "optimize", LoopConfig(), T0)
        store.save_iteration(
            "job-1",
            IterationRecord(
                iteration_index=0,
                run_record_ref="run-a",
                failures=(),
                repair_version=None,
                pass_count=1,
                fail_count=0,
            ),
        )
        store.update_job_status("job-1", "finished", finished_at=T0)
        store.append_event("run-a", "run_started", {"version_index": 1}, T0)
        store.save_drift_event(
            "uc1",
            DriftEvent(
                event_id="drift-1",
                detected_at=T0,
                regression_run_id="run-a",
                baseline_run_id="run-a",
                newly_failing_tests=("t1",),
            ),
        )

    def test_round_trip_into_fresh_store(self, store, tmp_path):
        self.populate(store)
        archive = store.export_use_case("uc1")
        assert archive["document_type"] == "use_case_archive"
        # the archive is a plain JSON document
        archive = json.loads(json.dumps(archive))

        other = Store(tmp_path / "other.db")
        try:
            assert other.import_use_case(archive) == "uc1"
            assert other.load_use_case("uc1") == store.load_use_case("uc1")
            assert other.list_versions("uc1") == store.list_versions("uc1")
            assert other.load_suite_revision("rev1") == store.load_suite_revision("rev1")
            assert other.load_run_record("run-a") == store.load_run_record("run-a")
            assert other.load_transcript("run-a", "t1") == store.load_transcript("run-a", "t1")
            assert other.iterations_for_job("job-1") == store.iterations_for_job("job-1")
            assert other.list_drift_events("uc1") == store.list_drift_events("uc1")
            assert other.get_verified("uc1")[0].version_index == 1
            kinds = [e["kind"] for e in other.events_for("run-a")]
            assert kinds == ["run_started"]
        finally:
            other.close()

    def test_import_refuses_existing_use_case(self, store):
        self.populate(store)
        archive = store.export_use_case("uc1")
        with pytest.raises(IntegrityError) as err:
            store.import_use_case(archive)
        assert err.value.constraint == "use_case_exists"

    def test_import_refuses_wrong_document_type(self, store):
        with pytest.raises(ValueError):
            store.import_use_case({"document_type": "something_else"})


class TestDurability:
    def test_committed_results_survive_reopen(self, store, tmp_path):
        seed(store)
        start_run(store)
        store.save_test_result("run-a", "t1", make_transcript("t1"), make_verdict("t1"))
        # the process dies here; a new process opens the same file
        reopened = Store(store._path)
        try:
            assert reopened.test_results_for_run("run-a") == {"t1": Verdict.PASS}
            assert reopened.run_status("run-a")["status"] == "running"
        finally:
            reopened.close()

    def test_newer_schema_refused(self, store):
        with sqlite3.connect(store._path) as conn:
            conn.execute("UPDATE meta SET value='99' WHERE key='schema_version'")
            conn.commit()
        with pytest.raises(StoreUnavailableError):
            Store(store._path)


class TestConcurrency:
    def test_readers_see_consistent_prefix_during_writes(self, store):
        seed(store)
        start_run(store)
        total = 40
        errors = []
        observed = []
        stop = threading.Event()

        def reader():
            last = 0
            while not stop.is_set():
                try:
                    results = store.test_results_for_run("run-a")
                except Exception as err:
                    errors.append(err)
                    return
                count = len(results)
                if count < last:
                    errors.append(AssertionError(f"count shrank {last} -> {count}"))
                    return
                # every visible row is complete and well-formed
                for test_id in results:
                    store.load_transcript("run-a", test_id)
                last = count
                observed.append(count)

        readers = [threading.Thread(target=reader) for _ in range(4)]
        for r in readers:
            r.start()
        for i in range(total):
            test_id = f"t{i:03d}"
            store.save_test_result(
                "run-a", test_id, make_transcript(test_id), make_verdict(test_id)
            )
        stop.set()
        for r in readers:
            r.join(timeout=10)
        assert not errors
        assert store.test_results_for_run("run-a").keys() >= {f"t{i:03d}" for i in range(total)}
        assert max(observed, default=0) <= total + 2


class TestRefs:
    def test_resolve_ref(self):
        assert resolve_ref("tr:run-1:t1") == ("transcript", "run-1", "t1")
        assert resolve_ref("vd:run-1:t:with:colons") == ("verdict", "run-1", "t:with:colons")
        with pytest.raises(NotFoundError):
            resolve_ref("xx:run:t")
