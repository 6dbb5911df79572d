"""Few-shot style/content transfer for glyph images on a numpy autodiff core."""
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .dataset import (
    SUBSETS,
    Corpus,
    Partition,
    Triplet,
    build_corpus,
    export_corpus,
    import_corpus,
    load_image,
    make_partition,
    sample_triplets,
    save_image,
)
from .errors import BlankImageError, ConfigError, DataError, EMDError, FormatError, NumericError, ShapeError
from .evaluation import evaluate, generate, morph, separation_check_content, separation_check_style
from .kernels import BACKEND
from .losses import batch_weights, l1_metric, pdar_metric, rmse_metric, weighted_l1
from .model import ArchConfig, EMDModel, build_model
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor, backward
from .training import TrainHistory, run_ablation, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ArchConfig", "BACKEND", "BlankImageError", "Checkpoint", "ConfigError", "Corpus",
    "DataError", "EMDError", "EMDModel", "FormatError", "NumericError", "Partition", "SUBSETS",
    "ShapeError", "Tape", "Tensor", "TrainConfig", "TrainHistory", "Triplet", "adam_step", "backward",
    "batch_weights", "build_corpus", "build_model", "evaluate", "export_corpus", "generate",
    "import_corpus", "l1_metric", "load_checkpoint", "load_image", "make_partition", "morph",
    "pdar_metric", "rmse_metric", "run_ablation", "sample_triplets", "save_checkpoint", "save_image",
    "separation_check_content", "separation_check_style", "train", "weighted_l1",
]
