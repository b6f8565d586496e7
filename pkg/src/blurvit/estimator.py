"""Scikit-learn style front end over the curriculum trainer.

CurriculumViTClassifier bundles blur-curriculum preparation and model
fitting behind fit/predict/predict_proba, so it drops into sklearn
pipelines and model-selection utilities.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .blur import apply_curriculum, make_schedule, partition
from .training import TrainConfig, predict_proba, train
from .vit import ViTConfig

__all__ = ["CurriculumViTClassifier"]


def _check_images(x, name="X"):
    """Validate a batch shaped (n, H, W) or (n, H, W, C), float in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, :, :, None]
    if x.ndim != 4:
        raise ValueError(f"{name} must be (n, H, W) or (n, H, W, C), got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError(f"{name} pixel values must lie in [0, 1]")
    return x


class CurriculumViTClassifier(BaseEstimator, ClassifierMixin):
    """Vision transformer trained most-blurred-first.

    Parameters mirror the CLI flags; all are stored verbatim so
    get_params/set_params round-trip.  Attributes ending in underscores
    appear after fit: classes_, params_, model_config_, history_.
    """

    def __init__(self, patch_size=8, latent_dim=32, heads=4, n_blocks=4,
                 mlp_ratio=4, pos_mode="sinusoidal", blur_levels=10,
                 curriculum_mode="ordered", epochs=30, batch_size=16,
                 learning_rate=3e-4, optimizer="adam", precision="float64",
                 seed=0):
        self.patch_size = patch_size
        self.latent_dim = latent_dim
        self.heads = heads
        self.n_blocks = n_blocks
        self.mlp_ratio = mlp_ratio
        self.pos_mode = pos_mode
        self.blur_levels = blur_levels
        self.curriculum_mode = curriculum_mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.precision = precision
        self.seed = seed

    def fit(self, X, y):
        X = _check_images(X)
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(X):
            raise ValueError(f"y must be 1-d with {len(X)} entries, got shape {y.shape}")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("fit needs at least two classes in y")
        schedule = make_schedule(self.blur_levels)
        part = partition(len(X), self.blur_levels, self.seed)
        dataset = apply_curriculum(X, encoded, schedule, part)
        self.model_config_ = ViTConfig(
            image_hw=X.shape[1:3], channels=X.shape[3],
            patch_size=self.patch_size, latent_dim=self.latent_dim,
            heads=self.heads, n_blocks=self.n_blocks, mlp_ratio=self.mlp_ratio,
            n_classes=len(self.classes_), pos_mode=self.pos_mode,
            precision=self.precision)
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          learning_rate=self.learning_rate, optimizer=self.optimizer,
                          curriculum_mode=self.curriculum_mode, seed=self.seed)
        result = train(dataset, self.model_config_, cfg)
        self.params_ = result.params
        self.history_ = result.history
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("this classifier is not fitted yet; call fit first")

    def predict_proba(self, X):
        self._check_fitted()
        X = _check_images(X)
        expected = (*self.model_config_.image_hw, self.model_config_.channels)
        if X.shape[1:] != expected:
            raise ValueError(f"X images are shaped {X.shape[1:]}, "
                             f"the model was fitted on {expected}")
        return predict_proba(self.params_, self.model_config_, X,
                             batch_size=self.batch_size)

    def predict(self, X):
        self._check_fitted()
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
