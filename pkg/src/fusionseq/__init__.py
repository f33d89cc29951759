"""Multimodal encoder-fusion-decoder answer generation on a small numpy autodiff engine."""

from .autodiff import SeededRng, Tape, Tensor, backward, finite_difference_check, no_record
from .encoders import Vocabulary
from .model import FusionModel, ModelConfig
from .training import TrainConfig, load_checkpoint, save_checkpoint, train_loop

__version__ = "0.1.0"

__all__ = ["FusionModel", "ModelConfig", "SeededRng", "Tape", "Tensor", "TrainConfig", "Vocabulary",
           "backward", "finite_difference_check", "load_checkpoint", "no_record", "save_checkpoint",
           "train_loop"]
