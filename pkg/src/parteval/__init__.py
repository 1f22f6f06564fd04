"""Part-level faithfulness evaluation engine for vision-model explanations."""

__version__ = "0.1.0"

from .core import (
    AccuracyReference,
    Aggregation,
    AttributionMap,
    ClassMode,
    CoveragePolicy,
    Direction,
    EvaluationConfig,
    ImageRecord,
    LogitRecord,
    PartAnnotation,
    ScoreFn,
    class_score,
    parse_subset_key,
    predicted_class,
    softmax,
    subset_key,
)
from .errors import (
    CoverageError,
    EngineError,
    ManifestError,
    NumericalError,
    PlanError,
    ProtocolError,
)
from .importance import PartImportance, aggregate, removal_order, select_threshold_subset
from .metrics import (
    MetricId,
    MetricResult,
    deletion_check,
    deletion_check_grid,
    perturbation_curve,
    preservation_check,
    preservation_check_grid,
    single_deletion,
    spearman_rho,
)
from .otdd import (
    GaussianSummary,
    LabeledPointCloud,
    OtddResult,
    SinkhornResult,
    bures_w2_squared,
    class_gaussian,
    cloud_from_rasters,
    otdd_distance,
    otdd_divergence,
    pairwise_cost,
    sinkhorn,
)
from .planner import PerturbationPlan, enumerate_plan, required_prefix_subsets
from .protocol import (
    LoadedDataset,
    Manifest,
    ManifestImage,
    load_dataset,
    read_cloud,
    read_logits,
    read_manifest,
    read_mask,
    read_raster,
    write_cloud,
    write_logits,
    write_manifest,
    write_mask,
    write_raster,
)

__all__ = [name for name in dir() if not name.startswith("_")]
