"""ROI-localized KernelSHAP attributions for patch-based 3D segmentation."""

from .errors import NumericalError, PredictorError, ValidationError, VoxshapError
from .grid import BBox, LabelVolume, RoiMask, Volume, crop, cubic_bbox, rf_support
from .units import FccConfig, UnitMap, partition_fcc, partition_full_organs, partition_hybrid
from .perturb import MaskingBaseline, apply_coalition, perturbation_mask
from .infer import (
    LogitVolume,
    PatchGrid,
    SyntheticPredictor,
    build_patch_grid,
    gaussian_weight_patch,
    hard_prediction,
    sliding_window_predict,
)
from .cache import CacheStats, PatchLogitCache, build_cache, cached_predict, expected_speedup
from .score import BaselineContext, ScoreConfig, ScoreKind, evaluate
from .shapley import (
    Attribution,
    ConvergenceReport,
    ShapConfig,
    convergence_report,
    exact_shapley,
    kernel_shap,
    kernel_weight,
    sample_coalitions,
    solve,
)
from .curves import CurveMetrics, PerturbationCurve, curve_metrics, deletion_curve, rank_units

__version__ = "0.1.0"
