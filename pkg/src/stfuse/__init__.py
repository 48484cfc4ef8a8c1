"""Two-stream video classification with bilinear co-occurrence fusion.

Appearance and motion streams from small convolutional networks are fused
by per-location outer products, pooled over locations, classified with a
linear SVM and aggregated per video by max voting.
"""

from . import convnet, errors, evaluate, experiment, fio, fusion, optflow, pipeline, svm, synth
from .convnet import (
    LayerSpec,
    Network,
    build_network,
    default_frame_layers,
    default_window_layers,
    forward,
    forward3d,
    load_weights,
    save_weights,
)
from .evaluate import EvalReport, dump_features, evaluate as evaluate_predictions
from .fio import read_fmap, read_image, write_fmap, write_image
from .fusion import (
    CooccurrenceFeature,
    bilinear_cooccurrence,
    cooccurrence_with_fc6,
    early_fusion,
    late_fusion,
)
from .optflow import FlowField, FlowParams, compute_flow, flow_to_feature_map, mean_subtract
from .pipeline import (
    BoundingBox,
    ClipRecord,
    Manifest,
    PipelineConfig,
    classify_clip,
    crop_and_resize,
    flow_pairs,
    load_manifest,
    max_vote,
    sample_frames,
    sliding_windows,
)
from .svm import LinearModel, predict, train_svm
from .synth import SynthSpec, generate_dataset
from .tensor import FeatureVector, feature_map, l2_normalize

__version__ = "0.1.0"
