"""Permutation-based cluster-level inference with FDR control.

Builds nonparametric null distributions of cluster extent by
sign-flipping one-sample contrasts, assigns Benjamini-Hochberg
FDR-controlled significance to supra-threshold clusters, and rescores
published RFT-FWE cluster tables against that benchmark.
"""

from .clustering import Cluster, Connectivity, extract_clusters
from .errors import (
    DimMismatchError,
    DuplicateAmbiguityError,
    EmptyMaskError,
    InvalidPValueError,
    MalformedHeaderError,
    MissingPValueError,
    NonFiniteVoxelError,
    TruncatedDataError,
    UnsupportedDatatypeError,
)
from .estimator import PermutationClusterFdr
from .fdr import FdrResult, apply_fdr_to_clusters, bh_step_up
from .permnull import (
    ExtentNullDistribution,
    PermutationConfig,
    analyze_contrast,
    build_null,
    null_pvalue,
    pool_normalized_histograms,
)
from .report import (
    ComparisonRow,
    ComparisonSummary,
    PublishedCluster,
    emit_comparison_csv,
    emit_scatter_svg,
    join_tables,
    read_published_csv,
    summarize,
)
from .stats import (
    RngStream,
    one_sample_tmap,
    rng_sign_vector,
    t_upper_quantile,
    t_upper_tail,
)
from .synth import SphereSignal, SynthConfig, gaussian_smooth, generate_stack, run_trials
from .volume import (
    Mask,
    SubjectStack,
    Volume,
    full_mask,
    load_mask,
    load_nifti,
    load_subject_stack,
    load_volume,
    stack_from_arrays,
    write_nifti,
    write_raw,
)

__version__ = "0.1.0"

__all__ = [
    "Cluster",
    "Connectivity",
    "extract_clusters",
    "DimMismatchError",
    "DuplicateAmbiguityError",
    "EmptyMaskError",
    "InvalidPValueError",
    "MalformedHeaderError",
    "MissingPValueError",
    "NonFiniteVoxelError",
    "TruncatedDataError",
    "UnsupportedDatatypeError",
    "PermutationClusterFdr",
    "FdrResult",
    "apply_fdr_to_clusters",
    "bh_step_up",
    "ExtentNullDistribution",
    "PermutationConfig",
    "analyze_contrast",
    "build_null",
    "null_pvalue",
    "pool_normalized_histograms",
    "ComparisonRow",
    "ComparisonSummary",
    "PublishedCluster",
    "emit_comparison_csv",
    "emit_scatter_svg",
    "join_tables",
    "read_published_csv",
    "summarize",
    "RngStream",
    "one_sample_tmap",
    "rng_sign_vector",
    "t_upper_quantile",
    "t_upper_tail",
    "SphereSignal",
    "SynthConfig",
    "gaussian_smooth",
    "generate_stack",
    "run_trials",
    "Mask",
    "SubjectStack",
    "Volume",
    "full_mask",
    "load_mask",
    "load_nifti",
    "load_subject_stack",
    "load_volume",
    "stack_from_arrays",
    "write_nifti",
    "write_raw",
]
