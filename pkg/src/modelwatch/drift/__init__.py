from .correction import correct_bonferroni, correct_fdr_bh
from .detector import (
    COVARIATE,
    LABEL,
    DriftConfig,
    DriftDetector,
    DriftReport,
    FeatureTest,
    InsufficientBatch,
    detect_drift,
)
from .ks import DegenerateTable, EmptySample, chi2_two_sample, ks_pvalue, ks_statistic
from .mmd import (
    DegenerateSample,
    SampleTooSmall,
    median_heuristic,
    mmd2_unbiased,
    mmd_permutation_test,
    permutation_pvalue,
)
from .preprocess import (
    DimensionMismatch,
    ModelUnavailable,
    PreprocessorError,
    RandomProjection,
    project_random,
    reduce_bbsd,
)

__all__ = [
    "COVARIATE", "LABEL", "DegenerateSample", "DegenerateTable", "DimensionMismatch", "DriftConfig",
    "DriftDetector", "DriftReport", "EmptySample", "FeatureTest", "InsufficientBatch", "ModelUnavailable",
    "PreprocessorError", "RandomProjection", "SampleTooSmall", "chi2_two_sample", "correct_bonferroni",
    "correct_fdr_bh", "detect_drift", "ks_pvalue", "ks_statistic", "median_heuristic", "mmd2_unbiased",
    "mmd_permutation_test", "permutation_pvalue", "project_random", "reduce_bbsd",
]
