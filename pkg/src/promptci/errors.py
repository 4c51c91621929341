"""Exception hierarchy shared across the package."""

from __future__ import annotations


class PromptCIError(Exception):
    """Base class for every error raised by this package."""

    code = "internal_error"


class ConfigurationError(PromptCIError):
    """A use case, profile, or provider is configured in an unusable way."""

    code = "configuration_error"


class ValidationError(PromptCIError, ValueError):
    """A domain object violates one of its declared invariants."""

    code = "validation_error"


class IntegrityError(PromptCIError):
    """A store operation would break referential integrity."""

    code = "integrity_error"

    def __init__(self, constraint: str, message: str):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint


class StoreUnavailableError(PromptCIError):
    """The backing store cannot be reached; distinct from domain errors."""

    code = "store_unavailable"


class NotFoundError(PromptCIError):
    """A referenced entity does not exist."""

    code = "not_found"


class ProviderError(PromptCIError):
    """Base class for model-provider failures."""

    code = "provider_error"


class ProviderUnavailableError(ProviderError):
    """Transport failure that persisted through the retry budget."""

    code = "provider_unavailable"


class ProviderProtocolError(ProviderError):
    """The model returned output that fails structured validation."""

    code = "provider_protocol_error"


class ScriptExhaustedError(ProviderError):
    """A scripted provider ran past the end of its script (test-harness error)."""

    code = "script_exhausted"


class ReplayMissError(ProviderError):
    """No cassette entry matches the request digest; re-record the exchange."""

    code = "replay_miss"


class GenerationFailedError(PromptCIError):
    """Test generation produced zero valid cases."""

    code = "generation_failed"


class JudgeProtocolError(ProviderProtocolError):
    """Judge output failed structured validation after the single re-ask."""

    code = "judge_protocol_error"


class DiagnosisProtocolError(ProviderProtocolError):
    """Diagnosis output failed structured validation after the single re-ask."""

    code = "diagnosis_protocol_error"


class SimulationInterruptedError(PromptCIError):
    """Provider failure mid-simulation; carries the partial transcript."""

    code = "simulation_interrupted"

    def __init__(self, message: str, partial_transcript=None):
        super().__init__(message)
        self.partial_transcript = partial_transcript


class RepairStalledError(PromptCIError):
    """Repair produced an empty prompt or one identical to its input."""

    code = "repair_stalled"


class ComparisonInvalidError(PromptCIError):
    """Two runs cannot be compared (different suite revision or version)."""

    code = "comparison_invalid"


class RunStateError(PromptCIError):
    """A run-control action does not apply to the run's current state."""

    code = "run_state_error"
