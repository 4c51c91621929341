"""promptci: closed-loop reliability engine for conversational agent prompts.

Write a use case's requirements, generate a regression suite, simulate the
conversations against mocked tools, judge each transcript, and let the
repair loop rewrite the prompt until the suite passes. Verified versions
are then re-checked on a schedule; confirmed drift is repaired and parked
for operator review.
"""

from .clock import SYSTEM_CLOCK, Clock, VirtualClock
from .errors import (
    ComparisonInvalidError,
    ConfigurationError,
    GenerationFailedError,
    IntegrityError,
    NotFoundError,
    PromptCIError,
    ProviderError,
    ProviderUnavailableError,
    RunStateError,
    SimulationInterruptedError,
    StoreUnavailableError,
    ValidationError,
)
from .events import CompositeObserver, EventBus, PublishingObserver, reduce_run_state
from .generator import GenerationOptions, generate_test_suite
from .judge import JudgeSettings, judge_transcript, judge_with_fallback
from .model import (
    CriterionVerdict,
    DriftEvent,
    DriftStatus,
    PromptOrigin,
    PromptVersion,
    RunKind,
    RunRecord,
    TestCase,
    TestCategory,
    ToolSpec,
    Transcript,
    UseCaseConfig,
    VariableSpec,
    Verdict,
    VerdictReport,
)
from .monitor import (
    Scheduler,
    handle_drift,
    parse_duration,
    run_regression,
    run_regression_cycle,
)
from .parser import ParseReport, ParseWarning, PromptReference, parse_prompt
from .platform import DEFAULT_PROFILE, PlatformProfile, get_profile, register_profile
from .providers import (
    Cassette,
    ChatMessage,
    ChatRequest,
    ChatResponse,
    ProviderConfig,
    RecordingProvider,
    ReplayProvider,
    ScriptedProvider,
    ToolCall,
    build_provider,
)
from .repair import (
    LoopConfig,
    OptimizationResult,
    StepController,
    default_loop_config,
    diagnose,
    repair,
    run_optimization,
)
from .runner import RunObserver, evaluate_suite
from .service import RunManager, build_app, serve
from .simulator import SimulationSettings, simulate
from .store import Store, StoreObserver

__version__ = "0.1.0"

__all__ = [
    "SYSTEM_CLOCK",
    "Clock",
    "VirtualClock",
    "ComparisonInvalidError",
    "ConfigurationError",
    "GenerationFailedError",
    "IntegrityError",
    "NotFoundError",
    "PromptCIError",
    "ProviderError",
    "ProviderUnavailableError",
    "RunStateError",
    "SimulationInterruptedError",
    "StoreUnavailableError",
    "ValidationError",
    "CompositeObserver",
    "EventBus",
    "PublishingObserver",
    "reduce_run_state",
    "GenerationOptions",
    "generate_test_suite",
    "JudgeSettings",
    "judge_transcript",
    "judge_with_fallback",
    "CriterionVerdict",
    "DriftEvent",
    "DriftStatus",
    "PromptOrigin",
    "PromptVersion",
    "RunKind",
    "RunRecord",
    "TestCase",
    "TestCategory",
    "ToolSpec",
    "Transcript",
    "UseCaseConfig",
    "VariableSpec",
    "Verdict",
    "VerdictReport",
    "Scheduler",
    "handle_drift",
    "parse_duration",
    "run_regression",
    "run_regression_cycle",
    "ParseReport",
    "ParseWarning",
    "PromptReference",
    "parse_prompt",
    "DEFAULT_PROFILE",
    "PlatformProfile",
    "get_profile",
    "register_profile",
    "Cassette",
    "ChatMessage",
    "ChatRequest",
    "ChatResponse",
    "ProviderConfig",
    "RecordingProvider",
    "ReplayProvider",
    "ScriptedProvider",
    "ToolCall",
    "build_provider",
    "LoopConfig",
    "OptimizationResult",
    "StepController",
    "default_loop_config",
    "diagnose",
    "repair",
    "run_optimization",
    "RunObserver",
    "evaluate_suite",
    "RunManager",
    "build_app",
    "serve",
    "SimulationSettings",
    "simulate",
    "Store",
    "StoreObserver",
]
