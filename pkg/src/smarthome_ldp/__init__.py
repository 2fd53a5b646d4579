"""Two-layer privacy for smart-home telemetry.

Clients perturb each event with k-ary randomized response; the aggregator
trains an HMM on the pseudonymous reports, scores per-home privacy risk,
obfuscates the riskiest events and releases a Laplace-noised model.
"""

from .dp_noise import NoiseConfig, ReleasedModel, laplace_sample, privatize_counts, privatize_hmm
from .exceptions import (
    BudgetError,
    ConfigError,
    DomainError,
    IngestRejected,
    InfeasibleSequenceError,
    ModelError,
    SmartHomeLDPError,
    StageError,
    TrainingError,
)
from .hmm import (
    ExpectedCounts,
    HmmParams,
    ObservationSequence,
    backward,
    brute_force_likelihood,
    forward,
    likelihood,
    posteriors,
    train,
)
from .ldp import (
    CategoryDomain,
    PerturbedReport,
    PrivacyBudget,
    estimate_frequencies,
    krr_perturb,
    verify_ldp,
)
from .pipeline import PipelineConfig, ReportStore, build_sequences, ingest, run_pipeline
from .risk import (
    ObfuscationPlan,
    ObfuscationPolicy,
    SensitiveStateSet,
    generate_candidates,
    obfuscate_sequence,
    sequence_risk,
)
from .simgen import ScenarioConfig, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "BudgetError",
    "CategoryDomain",
    "ConfigError",
    "DomainError",
    "ExpectedCounts",
    "HmmParams",
    "InfeasibleSequenceError",
    "IngestRejected",
    "ModelError",
    "NoiseConfig",
    "ObfuscationPlan",
    "ObfuscationPolicy",
    "ObservationSequence",
    "PerturbedReport",
    "PipelineConfig",
    "PrivacyBudget",
    "ReleasedModel",
    "ReportStore",
    "ScenarioConfig",
    "SensitiveStateSet",
    "SmartHomeLDPError",
    "StageError",
    "TrainingError",
    "backward",
    "brute_force_likelihood",
    "build_sequences",
    "estimate_frequencies",
    "forward",
    "generate_candidates",
    "generate_dataset",
    "ingest",
    "krr_perturb",
    "laplace_sample",
    "likelihood",
    "obfuscate_sequence",
    "posteriors",
    "privatize_counts",
    "privatize_hmm",
    "run_pipeline",
    "sequence_risk",
    "train",
    "verify_ldp",
]
