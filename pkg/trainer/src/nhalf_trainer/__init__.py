"""Quantization-aware training harness for the N+Half binary network.

Trains with binarized forward passes and straight-through gradients, then
exports checkpoints in the "NHB1" exchange container consumed by the
inference engine's compiler.
"""

from .config import Architecture, BlockConfig, TrainConfig, paper_architecture, toy_architecture
from .data import SplitData, binarize_image, load_split, make_toy_dataset, read_manifest
from .export import ExportError, checkpoint_bytes, export_checkpoint
from .model import NHalfNet, build_net, sign_ste
from .train import (
    EpochMetrics,
    TrainError,
    TrainResult,
    accuracy,
    sweep_clip,
    train,
    write_metrics,
    write_sweep,
)

__version__ = "0.1.0"
