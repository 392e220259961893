"""Exception hierarchy shared across the package."""


class MfgpcError(Exception):
    """Base class for all package errors."""


class ConfigError(MfgpcError):
    """Invalid configuration, preconditions, or argument combinations."""


class EmptyDesignError(ConfigError):
    """A space-filling design was requested with zero points."""


class ImbalanceError(ConfigError):
    """Not enough points of one class to build a balanced seed set."""

    def __init__(self, message, deficient_class=None):
        super().__init__(message)
        self.deficient_class = deficient_class


class DatasetParseError(MfgpcError):
    """A dataset file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DatasetSchemaError(DatasetParseError):
    """A dataset file parsed but violated the schema (bad label or fidelity)."""


class ParameterDomainError(MfgpcError):
    """A kernel or model parameter is outside its domain."""


class NumericalError(MfgpcError):
    """A numerical operation failed beyond recoverable limits."""


class CholeskyError(NumericalError):
    """Cholesky factorization failed after exhausting the jitter ladder."""


class SimulationBlowupError(NumericalError):
    """NaN/Inf appeared in a simulation state."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class SamplerFailure(NumericalError):
    """The HMC sampler could not make progress during warmup."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class PredictionError(NumericalError):
    """Too many posterior draws failed during prediction."""


class AcquisitionError(MfgpcError):
    """No finite acquisition score among the candidates."""


class CampaignError(MfgpcError):
    """An active-learning campaign halted; a partial log may be available."""

    def __init__(self, message, partial_log=None):
        super().__init__(message)
        self.partial_log = partial_log
