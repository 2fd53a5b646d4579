"""Exception hierarchy shared across the package."""


class SmartHomeLDPError(Exception):
    """Base class for all package errors."""


class DomainError(SmartHomeLDPError, ValueError):
    """A symbol is not a member of the category domain, or the domain is malformed."""


class BudgetError(SmartHomeLDPError, ValueError):
    """A privacy budget is non-positive or not finite."""


class HeterogeneousBudgetError(SmartHomeLDPError, ValueError):
    """Reports perturbed under different epsilons were mixed in one estimate."""


class EmptyInputError(SmartHomeLDPError, ValueError):
    pass


class ModelError(SmartHomeLDPError, ValueError):
    """HMM parameters violate a structural invariant."""


class InfeasibleSequenceError(SmartHomeLDPError, ValueError):
    """A sequence has zero probability under the model, so posteriors are undefined."""


class TrainingError(SmartHomeLDPError, RuntimeError):
    pass


class SizeGuardError(SmartHomeLDPError, ValueError):
    """Brute-force enumeration was asked to visit too many paths."""


class IngestRejected(SmartHomeLDPError, ValueError):
    """A report was refused by the store (duplicate or out-of-order slot)."""


class ConfigError(SmartHomeLDPError, ValueError):
    pass


class StageError(SmartHomeLDPError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
