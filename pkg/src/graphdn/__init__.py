"""Graph-convolutional grayscale image denoiser.

The network estimates the noise residual of a noisy image with stacked graph
convolution layers. Each layer averages a local 3x3 convolution with an
edge-conditioned aggregation over k nearest neighbors found in feature space,
so pixels borrow strength from similar pixels anywhere in a search window,
not only from their spatial surroundings.
"""

from .errors import (
    AutodiffError,
    ConfigError,
    DataError,
    GraphDnError,
    NumericError,
    ShapeError,
    UsageError,
)
from .tensor import Tensor, Tape, finite_difference_check
from .graph import NlgConfig, NonLocalGraph, build_knn_graph, brute_force_knn
from .model import NetworkConfig, build_model, forward, count_parameters
from .data import GrayImage, NoiseConfig, add_awgn, load_image, save_image
from .training import TrainConfig, train_loop
from .evaluate import denoise_image, evaluate_checkpoint, psnr, trace_receptive_field
from .synthetic import synthetic_image, synthetic_images
from .verification import run_gradient_suite

__all__ = [
    "AutodiffError",
    "ConfigError",
    "DataError",
    "GraphDnError",
    "NumericError",
    "ShapeError",
    "UsageError",
    "Tensor",
    "Tape",
    "finite_difference_check",
    "NlgConfig",
    "NonLocalGraph",
    "build_knn_graph",
    "brute_force_knn",
    "NetworkConfig",
    "build_model",
    "forward",
    "count_parameters",
    "GrayImage",
    "NoiseConfig",
    "add_awgn",
    "load_image",
    "save_image",
    "TrainConfig",
    "train_loop",
    "denoise_image",
    "evaluate_checkpoint",
    "psnr",
    "trace_receptive_field",
    "synthetic_image",
    "synthetic_images",
    "run_gradient_suite",
]
