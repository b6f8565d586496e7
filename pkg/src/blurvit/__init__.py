"""blurvit: blur-curriculum training for a compact vision transformer.

The package splits into small pieces: `autodiff` (tensors with reverse
mode gradients), `blur` (Gaussian schedule, curriculum partition),
`vit` (the model), `training` (optimizer loop and checkpoints),
`metrics` (evaluation and reports), `data` (image IO and the synthetic
corpus), `estimator` (sklearn-style wrapper) and `cli`.
"""

from . import autodiff, blur, checkpoint, data, metrics, training, vit
from .autodiff import GraphError, ShapeError, Tensor, backward, no_grad
from .blur import (apply_curriculum, blur_image, gaussian_kernel, make_schedule,
                   partition)
from .checkpoint import (ChecksumError, ConfigMismatchError, load_checkpoint,
                         save_checkpoint)
from .estimator import CurriculumViTClassifier
from .metrics import evaluate
from .training import TrainConfig, predict_proba, train
from .vit import ViTConfig, forward_logits, init_params

__version__ = "0.1.0"

__all__ = [
    "autodiff", "blur", "checkpoint", "data", "metrics", "training", "vit",
    "Tensor", "backward", "no_grad", "GraphError", "ShapeError",
    "make_schedule", "gaussian_kernel", "blur_image", "partition",
    "apply_curriculum",
    "ViTConfig", "init_params", "forward_logits",
    "TrainConfig", "train", "predict_proba",
    "save_checkpoint", "load_checkpoint", "ChecksumError", "ConfigMismatchError",
    "evaluate",
    "CurriculumViTClassifier",
    "__version__",
]
