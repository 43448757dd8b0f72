"""Gradient-free CNN visual interpretation.

Cluster-CAM heatmaps from unsupervised feature-map clustering, plus
Score-CAM and Ablation-CAM baselines and a corpus evaluation harness.
"""

from .engine import (
    ClusterCamConfig,
    ClusterScoreVector,
    RepresentativeMaps,
    ablation_cam,
    activation_mask,
    cluster_cam,
    cluster_scores,
    masked_input,
    merge_heatmap,
    representative_maps,
    score_cam,
    select_base_scissors,
)
from .errors import (
    ClusterCamError,
    ConvergenceError,
    DimensionMismatchError,
    ModelLoadError,
    NonFiniteError,
    ParameterError,
    UnknownLayerError,
    UnsupportedSplitError,
    UsageError,
    ValidationError,
)
from .graph import (
    ClusterAssignment,
    ClusterConfig,
    adjacency,
    cluster_feature_maps,
    eig_sym,
    kmeans,
    laplacian,
    pairwise_similarity,
    spectral_embedding,
)
from .imaging import PreprocessConfig, load_and_preprocess, render_overlay
from .metrics import (
    MetricsReport,
    confidence_drop,
    evaluate_corpus,
    explanation_input,
    read_manifest,
)
from .runner import FixtureRunner, OnnxRunner, fixture_runner, list_layers, load_model
from .types import (
    ChannelWeights,
    FeatureMapStack,
    Heatmap,
    ImageTensor,
    ScoreVector,
    validate_stack,
)

__version__ = "0.1.0"
