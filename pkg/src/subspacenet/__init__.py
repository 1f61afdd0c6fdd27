"""Learned embeddings for multi-type subspace clustering."""

from .dataio import Dataset, Instance, InstanceFormatError, ValidationError, read_dataset, read_instance
from .estimator import SequentialRansac, SubspaceClusterer
from .geometry import SceneSpec, generate_scene, make_lce_instance, sequential_fit
from .inference import kmeans, residual_curve, select_k, select_k_silhouette, select_k_sod
from .losses import get_loss
from .metrics import MetricReport, error_rate, evaluate, nmi
from .network import NetworkConfig, embed, forward, init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Instance", "InstanceFormatError", "ValidationError", "read_dataset",
    "read_instance", "SequentialRansac", "SubspaceClusterer", "SceneSpec", "generate_scene",
    "make_lce_instance", "sequential_fit", "kmeans", "residual_curve", "select_k",
    "select_k_silhouette", "select_k_sod", "get_loss", "MetricReport", "error_rate",
    "evaluate", "nmi", "NetworkConfig", "embed", "forward", "init_params", "load_checkpoint",
    "save_checkpoint", "TrainConfig", "train",
]
