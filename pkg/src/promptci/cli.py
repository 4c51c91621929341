"""Command line entry points mirroring the API operations.

Settings resolve in order: command flag, environment variable, config file,
built-in default. The config file is JSON with top-level keys `store`,
`parallelism`, and `provider` (the provider settings document).
"""

from __future__ import annotations

import functools
import json
import sys
import time
from pathlib import Path

import click

from .clock import SYSTEM_CLOCK
from .errors import PromptCIError
from .events import CompositeObserver, EventBus
from .generator import GenerationOptions, generate_test_suite
from .model import (
    PromptOrigin,
    PromptVersion,
    TestCategory,
    UseCaseConfig,
)
from .monitor import Scheduler, run_regression_cycle
from .parser import parse_prompt
from .providers import (
    Cassette,
    ChatResponse,
    ProviderConfig,
    ReplayProvider,
    ScriptedProvider,
    build_provider,
)
from .repair import LoopConfig, default_loop_config, run_optimization
from .runner import RunObserver, new_revision_id
from .service import RunManager, serve
from .store import Store, StoreObserver
from .simulator import SimulationSettings

DEFAULT_STORE = "promptci.db"


def load_settings(config_path: str | None) -> dict:
    if not config_path:
        return {}
    try:
        doc = json.loads(Path(config_path).read_text())
    except ValueError as err:
        raise click.ClickException(f"config file {config_path} is not valid JSON: {err}")
    if not isinstance(doc, dict):
        raise click.ClickException(f"config file {config_path} must hold a JSON object")
    return doc


def resolve_provider(settings: dict):
    """Build the model provider from a settings document.

    scripted: `script` names a JSON file {"responses": [...]} consumed in
    order. replay: `cassette` names a recorded exchange file. live: the rest
    of the document is the provider connection config.
    """
    kind = settings.get("provider_kind", "scripted")
    if kind == "scripted":
        script_path = settings.get("script")
        if not script_path:
            raise PromptCIError(
                "scripted provider needs a script file; set provider.script "
                "or use provider_kind live/replay"
            )
        doc = json.loads(Path(script_path).read_text())
        responses = [ChatResponse.from_dict(d) for d in doc["responses"]]
        return ScriptedProvider(responses=responses, name=Path(script_path).name)
    if kind == "replay":
        cassette_path = settings.get("cassette")
        if not cassette_path:
            raise PromptCIError("replay provider needs provider.cassette")
        return ReplayProvider(Cassette.load(cassette_path))
    return build_provider(ProviderConfig.from_dict(settings))


class CliContext:
    """Lazily opened store plus resolved provider settings."""

    def __init__(self, store_path: str, settings: dict, parallelism: int):
        self.store_path = store_path
        self.settings = settings
        self.parallelism = parallelism
        self._store: Store | None = None

    @property
    def store(self) -> Store:
        if self._store is None:
            self._store = Store(self.store_path)
        return self._store

    def provider(self):
        return resolve_provider(self.settings.get("provider", {}))

    def bus(self) -> EventBus:
        store = self.store
        return EventBus(
            sink=lambda run_id, kind, payload: store.append_event(
                run_id, kind, payload, SYSTEM_CLOCK.now()
            )
        )

    def close(self):
        if self._store is not None:
            self._store.close()


def domain_errors(fn):
    """Print domain failures as one line on stderr and exit 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PromptCIError as err:
            click.echo(f"error ({err.code}): {err}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
@click.option(
    "--store",
    "store_path",
    envvar="PROMPTCI_STORE",
    default=None,
    help=f"SQLite store path (default {DEFAULT_STORE}).",
)
@click.option(
    "--config",
    "config_path",
    envvar="PROMPTCI_CONFIG",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON config file with store, parallelism, and provider settings.",
)
@click.option(
    "--parallelism",
    envvar="PROMPTCI_PARALLELISM",
    type=int,
    default=None,
    help="Concurrent test simulations per run.",
)
@click.pass_context
def cli(ctx, store_path, config_path, parallelism):
    """Closed-loop reliability testing for conversational agents."""
    settings = load_settings(config_path)
    resolved_store = store_path or settings.get("store") or DEFAULT_STORE
    resolved_parallelism = (
        parallelism if parallelism is not None else settings.get("parallelism", 1)
    )
    ctx.obj = CliContext(resolved_store, settings, resolved_parallelism)
    ctx.call_on_close(ctx.obj.close)


@cli.command()
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--prompt", "prompt_file", type=click.Path(exists=True, dir_okay=False),
              help="Text file saved as the draft prompt version.")
@click.pass_obj
@domain_errors
def init(obj, config_file, prompt_file):
    """Create or update a use case from a JSON definition."""
    doc = json.loads(Path(config_file).read_text())
    config = UseCaseConfig.from_dict(doc)
    obj.store.save_use_case(config)
    click.echo(f"saved use case {config.id}")
    if prompt_file:
        text = Path(prompt_file).read_text()
        existing = obj.store.list_versions(config.id)
        if existing:
            index, origin, parent = (
                existing[-1].version_index + 1,
                PromptOrigin.OPERATOR_EDIT,
                existing[-1].version_index,
            )
        else:
            index, origin, parent = 0, PromptOrigin.DRAFT, None
        obj.store.add_prompt_version(
            config.id,
            PromptVersion(
                version_index=index, text=text, origin=origin, parent_version=parent
            ),
        )
        click.echo(f"saved prompt version {index}")


@cli.command()
@click.argument("use_case_id")
@click.option("--file", "prompt_file", type=click.Path(exists=True, dir_okay=False),
              help="Lint this file instead of the newest stored version.")
@click.option("--json", "as_json", is_flag=True, help="Emit the full report as JSON.")
@click.pass_obj
@domain_errors
def lint(obj, use_case_id, prompt_file, as_json):
    """Check a prompt's tool, variable, and routing references."""
    config = obj.store.load_use_case(use_case_id)
    if prompt_file:
        text = Path(prompt_file).read_text()
    else:
        versions = obj.store.list_versions(use_case_id)
        if not versions:
            raise PromptCIError(f"use case {use_case_id!r} has no prompt versions")
        text = versions[-1].text
    report = parse_prompt(text, config)
    if as_json:
        click.echo(json.dumps(report.to_dict(), indent=2))
    else:
        for warning in report.warnings:
            ref = warning.reference
            click.echo(f"line {ref.line_number}: {warning.message}")
        click.echo(
            f"{len(report.references)} references, {len(report.warnings)} warnings"
        )
    if report.warnings:
        sys.exit(2)


def _parse_counts(pairs) -> dict[TestCategory, int] | None:
    if not pairs:
        return None
    counts = {}
    for pair in pairs:
        name, _, value = pair.partition("=")
        counts[TestCategory(name)] = int(value)
    return counts


@cli.command("gen-tests")
@click.argument("use_case_id")
@click.option("--count", "counts", multiple=True, metavar="CATEGORY=N",
              help="Override the generated count for one category; repeatable.")
@click.option("--seed-instructions", default="", help="Extra operator guidance.")
@click.option("--json", "as_json", is_flag=True, help="Emit the suite as JSON.")
@click.pass_obj
@domain_errors
def gen_tests(obj, use_case_id, counts, seed_instructions, as_json):
    """Generate a test suite from the use case requirements."""
    config = obj.store.load_use_case(use_case_id)
    options = GenerationOptions(
        target_counts=_parse_counts(counts), seed_instructions=seed_instructions
    )
    suite = generate_test_suite(config, options, obj.provider())
    revision_id = new_revision_id()
    obj.store.save_suite_revision(use_case_id, suite, revision_id, SYSTEM_CLOCK.now())
    if as_json:
        click.echo(json.dumps([c.to_dict() for c in suite], indent=2))
    else:
        for case in suite:
            click.echo(f"{case.id}  [{case.category.value}]  {case.title}")
        click.echo(f"saved {len(suite)} tests as revision {revision_id}")


class _ProgressObserver(RunObserver):
    """One line per test and per iteration on stdout."""

    def on_test_result(self, run_id, test, transcript, report, transcript_ref, verdict_ref):
        click.echo(f"  {report.overall.value:4}  {test.id}  {test.title}")

    def on_iteration_finished(self, record):
        line = (
            f"iteration {record.iteration_index}: "
            f"{record.pass_count} passed, {record.fail_count} failed"
        )
        if record.repair_version is not None:
            line += f", repaired into version {record.repair_version}"
        click.echo(line)


@cli.command()
@click.argument("use_case_id")
@click.option("--max-iterations", type=int, default=None)
@click.option("--extended-limit", type=int, default=None,
              help="Budget when convergence is close at the normal limit.")
@click.pass_obj
@domain_errors
def optimize(obj, use_case_id, max_iterations, extended_limit):
    """Run the evaluate/diagnose/repair loop until the suite passes."""
    store = obj.store
    config = store.load_use_case(use_case_id)
    revision_id, suite = store.latest_suite_revision(use_case_id)
    versions = store.list_versions(use_case_id)
    if not versions:
        raise PromptCIError(f"use case {use_case_id!r} has no prompt versions")
    loop_config = default_loop_config(len(suite))
    if max_iterations is not None or extended_limit is not None:
        loop_config = LoopConfig(
            max_iterations=max_iterations or loop_config.max_iterations,
            extended_limit=extended_limit,
        )
    settings = SimulationSettings.optimization()
    observer = StoreObserver(
        store, use_case_id, revision_id, temperature=settings.temperature
    )
    result = run_optimization(
        config,
        suite,
        versions[-1],
        loop_config,
        settings,
        obj.provider(),
        observer=CompositeObserver(observer, _ProgressObserver()),
        suite_revision_id=revision_id,
        parallelism=obj.parallelism,
    )
    click.echo(
        f"halt: {result.halt_reason}; final version {result.final_version.version_index}"
    )
    if not result.converged:
        sys.exit(2)


@cli.command()
@click.argument("use_case_id")
@click.option("--version", "version_index", type=int, default=None,
              help="Version to mark verified (default: the newest one).")
@click.pass_obj
@domain_errors
def verify(obj, use_case_id, version_index):
    """Mark a version as the verified baseline for regression checks."""
    store = obj.store
    if version_index is None:
        versions = store.list_versions(use_case_id)
        if not versions:
            raise PromptCIError(f"use case {use_case_id!r} has no prompt versions")
        version_index = versions[-1].version_index
    revision_id, _ = store.latest_suite_revision(use_case_id)
    store.mark_verified(use_case_id, version_index, revision_id)
    click.echo(f"verified version {version_index} against suite revision {revision_id}")


@cli.command()
@click.argument("use_case_id")
@click.option("--json", "as_json", is_flag=True, help="Emit the cycle outcome as JSON.")
@click.pass_obj
@domain_errors
def regress(obj, use_case_id, as_json):
    """Run the suite against the verified version and compare to baseline."""
    outcome = run_regression_cycle(
        obj.store,
        obj.bus(),
        obj.provider(),
        use_case_id,
        parallelism=obj.parallelism,
    )
    if as_json:
        click.echo(json.dumps(outcome, indent=2))
    else:
        click.echo(f"status: {outcome['status']}")
        if outcome.get("drift_event_id"):
            click.echo(f"drift event: {outcome['drift_event_id']}")
    if outcome["status"] in ("drift_detected", "no_baseline"):
        sys.exit(2)


@cli.command()
@click.argument("use_case_ids", nargs=-1, required=True)
@click.option("--cadence", default="24h", help="Time between checks, e.g. 30m, 24h.")
@click.option("--jitter", default="0s", help="Random spread added to each window.")
@click.option("--cycles", type=int, default=None,
              help="Stop after this many fired checks (default: run forever).")
@click.option("--poll", type=float, default=5.0, help="Seconds between schedule polls.")
@click.option("--repair/--no-repair", default=True,
              help="Chain the repair loop when drift is confirmed.")
@click.pass_obj
@domain_errors
def monitor(obj, use_case_ids, cadence, jitter, cycles, poll, repair):
    """Re-check use cases on a cadence and repair confirmed drift."""
    store = obj.store
    bus = obj.bus()
    manager = RunManager(store, bus, obj.provider, parallelism=obj.parallelism)
    scheduler = Scheduler(store)
    for use_case_id in use_case_ids:
        next_fire = scheduler.schedule(use_case_id, cadence=cadence, jitter=jitter)
        click.echo(f"{use_case_id}: first check at {next_fire.isoformat()}")
    fired = 0
    while cycles is None or fired < cycles:
        outcomes = scheduler.pump(
            lambda uc: manager.run_monitor_cycle(uc, auto_repair=repair)
        )
        for use_case_id, outcome in outcomes:
            fired += 1
            line = f"{use_case_id}: {outcome['status']}"
            if outcome.get("drift_status"):
                line += f" (repair: {outcome['drift_status']})"
            click.echo(line)
        if cycles is not None and fired >= cycles:
            break
        time.sleep(poll)


@cli.command("export")
@click.argument("use_case_id")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None,
              help="Write the archive here instead of stdout.")
@click.pass_obj
@domain_errors
def export_cmd(obj, use_case_id, output):
    """Write a use case and its full history as one JSON archive."""
    archive = obj.store.export_use_case(use_case_id)
    text = json.dumps(archive, indent=2, sort_keys=True)
    if output:
        Path(output).write_text(text)
        click.echo(f"exported {use_case_id} to {output}")
    else:
        click.echo(text)


@cli.command("import")
@click.argument("archive_file", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
@domain_errors
def import_cmd(obj, archive_file):
    """Load a use case archive into the store."""
    try:
        archive = json.loads(Path(archive_file).read_text())
        use_case_id = obj.store.import_use_case(archive)
    except PromptCIError:
        raise
    except (ValueError, KeyError, TypeError) as err:
        raise PromptCIError(f"{archive_file} is not a use case archive: {err}") from err
    click.echo(f"imported {use_case_id}")


@cli.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8321)
@click.pass_obj
@domain_errors
def serve_cmd(obj, host, port):
    """Run the HTTP API, event streams, and the monitoring scheduler."""
    serve(
        obj.store,
        obj.provider,
        host=host,
        port=port,
        parallelism=obj.parallelism,
    )


def main():
    cli()


if __name__ == "__main__":
    main()
