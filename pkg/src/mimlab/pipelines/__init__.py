"""End-to-end pretraining pipelines: models, data, training, checkpoints."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import Corpus, CorpusError, bilinear_resize, random_resized_crop, synthesize_corpus, write_corpus
from .models import (
    ModelError,
    ModelSpec,
    SimMIMBaselineModel,
    UMMAEModel,
    build_model,
    default_spec,
    validate_spec_geometry,
)
from .train import (
    AdamWState,
    CurveRow,
    TrainConfig,
    TrainingError,
    adamw_step,
    curve_to_csv,
    epoch_mean_losses,
    lr_at,
    save_model_checkpoint,
    train,
)

__all__ = [
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "Corpus", "CorpusError", "bilinear_resize", "random_resized_crop",
    "synthesize_corpus", "write_corpus",
    "ModelError", "ModelSpec", "SimMIMBaselineModel", "UMMAEModel",
    "build_model", "default_spec", "validate_spec_geometry",
    "AdamWState", "CurveRow", "TrainConfig", "TrainingError",
    "adamw_step", "curve_to_csv", "epoch_mean_losses", "lr_at",
    "save_model_checkpoint", "train",
]
