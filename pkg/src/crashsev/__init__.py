"""Multinomial and mixed logit models of crash injury severity.

Simulated maximum likelihood with Halton draws, marginal effects,
random-parameter shares, and likelihood-ratio transferability tests
across area-type and lighting segments.
"""
from .domain import (EXCLUDED, SEGMENT_KEYS, SEVERITY_CLASSES, Area, CovariateKind,
                     CrashRecord, Dataset, Kabco, Lighting, SegmentKey, SeverityClass,
                     classify_segment, consolidate_severity, descriptive_stats,
                     partition_dataset)
from .errors import (CrashsevError, ParseError, SchemaError, ConfigError, RowError, DomainError, ArgumentError, NumericError, SpecDataMismatch, ConvergenceError, SingularHessianError, ConsistencyError, ResourceError)
from .estimate import (FitResult, fit, fit_mixed_logit, fit_mnl, mcfadden_rho2,
                       refine_specification, restricted_loglik)
from .inference import (marginal_effect_point, marginal_effects_average,
                        random_parameter_shares, share_positive)
from .ingest import (SchemaSpec, TransformRule, apply_transform, parse_dataset,
                     validate_dataset, write_dataset)
from .model import (ModelSpec, ParameterVector, Term, ll_gradient, log_likelihood,
                    mnl_probability, simulated_probability, utility)
from .modeltests import (TestResult, hausman_iia_test, lr_partition_test, lr_transfer_test,
                         run_battery)
from .numeric import (chi_square_quantile, halton_sequence, make_draws, std_normal_cdf,
                      std_normal_quantile, two_tailed_p)
from .synth import (CovariateGenerator, DgpSpec, SegmentDgp, quadrature_probability_oracle,
                    simulate_dataset)

__version__ = "0.1.0"

__all__ = [
    "EXCLUDED",
    "SEGMENT_KEYS",
    "SEVERITY_CLASSES",
    "Area",
    "CovariateKind",
    "CrashRecord",
    "Dataset",
    "Kabco",
    "Lighting",
    "SegmentKey",
    "SeverityClass",
    "classify_segment",
    "consolidate_severity",
    "descriptive_stats",
    "partition_dataset",
    "CrashsevError",
    "ParseError",
    "SchemaError",
    "ConfigError",
    "RowError",
    "DomainError",
    "ArgumentError",
    "NumericError",
    "SpecDataMismatch",
    "ConvergenceError",
    "SingularHessianError",
    "ConsistencyError",
    "ResourceError",
    "FitResult",
    "fit",
    "fit_mixed_logit",
    "fit_mnl",
    "mcfadden_rho2",
    "refine_specification",
    "restricted_loglik",
    "marginal_effect_point",
    "marginal_effects_average",
    "random_parameter_shares",
    "share_positive",
    "SchemaSpec",
    "TransformRule",
    "apply_transform",
    "parse_dataset",
    "validate_dataset",
    "write_dataset",
    "ModelSpec",
    "ParameterVector",
    "Term",
    "ll_gradient",
    "log_likelihood",
    "mnl_probability",
    "simulated_probability",
    "utility",
    "TestResult",
    "hausman_iia_test",
    "lr_partition_test",
    "lr_transfer_test",
    "run_battery",
    "chi_square_quantile",
    "halton_sequence",
    "make_draws",
    "std_normal_cdf",
    "std_normal_quantile",
    "two_tailed_p",
    "CovariateGenerator",
    "DgpSpec",
    "SegmentDgp",
    "quadrature_probability_oracle",
    "simulate_dataset",
]
