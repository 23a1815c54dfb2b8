"""Circular cone-beam CT reconstruction toolkit.

Simulated data generation, classical FDK and SIRT+ reconstruction,
exponentially binned learned filters with a shallow-network combination
trained by Levenberg-Marquardt, and a quantitative evaluation harness.
"""

from .baselines import sirt_plus
from .fdk import (
    BinnedFilter,
    ExpBinning,
    Filter,
    expand,
    fdk,
    filter_1d,
    hann_filter,
    make_binning,
    ramlak_filter,
    reweight,
)
from .geometry import (
    ConeBeamGeometry,
    GeometryError,
    ProjectionData,
    Volume,
    cone_angle,
    make_geometry,
)
from .metrics import SegScores, seg_metrics, segment, ssim, tse
from .nnfdk import (
    FeatureVolumes,
    NetworkParams,
    Scaling,
    compute_features,
    eval_network,
    reconstruct,
    sigmoid,
)
from .phantoms import (
    PhantomObject,
    PhantomSpec,
    add_noise,
    generate_spec,
    ground_truth,
    rasterize,
    simulate_data,
)
from .projector import back_project, counters, forward_project
from .training import (
    LMAConfig,
    SampleBudget,
    TrainingHistory,
    TrainingPair,
    TrainingSet,
    build_sets,
    jacobian,
    loss,
    roi_mask,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ConeBeamGeometry", "Volume", "ProjectionData", "make_geometry", "cone_angle",
    "GeometryError",
    "forward_project", "back_project", "counters",
    "Filter", "ExpBinning", "BinnedFilter", "reweight", "filter_1d", "fdk",
    "ramlak_filter", "hann_filter", "make_binning", "expand",
    "Scaling", "NetworkParams", "FeatureVolumes", "sigmoid", "eval_network",
    "compute_features", "reconstruct",
    "TrainingPair", "TrainingSet", "SampleBudget", "LMAConfig", "TrainingHistory",
    "roi_mask", "build_sets", "loss", "jacobian", "train",
    "PhantomSpec", "PhantomObject", "generate_spec", "rasterize", "ground_truth",
    "simulate_data", "add_noise",
    "sirt_plus",
    "tse", "ssim", "segment", "seg_metrics", "SegScores",
    "__version__",
]
