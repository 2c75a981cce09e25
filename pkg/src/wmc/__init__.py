"""Multimodal wound classifier built from first principles.

Image features come from depthwise-separable convolution blocks, are
routed through a capsule layer with agreement-based coupling, and are
pooled by self-attention; wound locations run through a recurrent cell
whose extra gate is fed by a closed-form Gaussian-prior (ridge) MAP
estimate.  The two embeddings are concatenated and classified by a dense
softmax head.  Every backward pass is verified by finite differences.
"""

from .attention import AttentionConfig, ImageVectorHead, self_attention, softmatch
from .capsule import CapsuleLayer, PrimaryCapsuleConfig, dynamic_routing, squash
from .data_io import BodyMap, ManifestRecord, load_manifest
from .gmrnn import GmrnnCell, RidgeEstimator, location_vector
from .metrics import MetricsReport, score
from .model import FusionModelConfig, WoundClassifier, evaluate, sweep, train
from .rng import SplitMix64
from .sepconv import FeatureExtractor, FeatureExtractorConfig, SepConvBlock
from .tensor import Parameter, Tensor, gradcheck

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "ImageVectorHead", "self_attention", "softmatch",
    "CapsuleLayer", "PrimaryCapsuleConfig", "dynamic_routing", "squash",
    "BodyMap", "ManifestRecord", "load_manifest",
    "GmrnnCell", "RidgeEstimator", "location_vector",
    "MetricsReport", "score",
    "FusionModelConfig", "WoundClassifier", "evaluate", "sweep", "train",
    "SplitMix64",
    "FeatureExtractor", "FeatureExtractorConfig", "SepConvBlock",
    "Parameter", "Tensor", "gradcheck",
    "__version__",
]
