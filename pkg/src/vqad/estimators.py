"""Scikit-learn style front door.

These classes wrap the functional core in the fit/transform/predict
idiom so the pieces compose with pipelines and grid search:
``NeuralFieldRegressor`` fits a (optionally quantized) field to
coordinate/target pairs, ``KLTCompressor`` and ``KMeansQuantizer`` wrap
the post-hoc grid compressors. Constructor arguments are stored
verbatim, fitted state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin

from . import baselines
from ._validation import check_array, check_consistent_length, check_is_fitted
from .datasets import IdentityDataset
from .field import decode_point
from .grid import GridConfig
from .train import TrainConfig, train

__all__ = ["NeuralFieldRegressor", "KLTCompressor", "KMeansQuantizer"]


class NeuralFieldRegressor(BaseEstimator, RegressorMixin):
    """Fit a multiresolution feature field to coordinate targets.

    Parameters mirror the training configuration: ``mode`` picks plain
    features, learned vector quantization, or the frozen-random-index
    baseline; grid shape and optimizer settings are flat constructor
    arguments so ``get_params``/``set_params`` work as usual.

    ``fit(X, y)`` takes coordinates in [-1, 1]^d and float targets; the
    head is chosen by target width (3 columns = image/sigmoid, 1 column
    = signed distance/linear).
    """

    def __init__(
        self,
        mode="uncompressed",
        levels=4,
        base_resolution=8,
        feature_width=8,
        bitwidth=4,
        epochs=50,
        batch_size=4096,
        learning_rate=1e-3,
        grid_lr_multiplier=100.0,
        lod_sampling="weighted",
        hidden_width=128,
        seed=0,
        dtype="float32",
    ):
        self.mode = mode
        self.levels = levels
        self.base_resolution = base_resolution
        self.feature_width = feature_width
        self.bitwidth = bitwidth
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.grid_lr_multiplier = grid_lr_multiplier
        self.lod_sampling = lod_sampling
        self.hidden_width = hidden_width
        self.seed = seed
        self.dtype = dtype

    def fit(self, X, y):
        X = check_array(X, "X")
        y = check_array(y, "y")
        check_consistent_length(X, y)
        if X.shape[1] not in (2, 3):
            raise ValueError("coordinates must be 2-D or 3-D")
        if np.abs(X).max() > 1.0:
            raise ValueError("coordinates must lie in [-1, 1]^d")
        if y.shape[1] == 3:
            head = "image"
        elif y.shape[1] == 1:
            head = "sdf"
        else:
            raise ValueError("targets must have 1 (sdf) or 3 (image) columns")

        dataset = IdentityDataset(coords=X, targets=y, head=head)
        grid_config = GridConfig(
            levels=self.levels,
            base_resolution=self.base_resolution,
            feature_width=self.feature_width,
            dim=X.shape[1],
        )
        config = TrainConfig(
            mode=self.mode,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            grid_lr_multiplier=self.grid_lr_multiplier,
            bitwidth=self.bitwidth,
            seed=self.seed,
            lod_sampling=self.lod_sampling,
            hidden_width=self.hidden_width,
            dtype=self.dtype,
        )
        self.trained_ = train(config, dataset, grid_config)
        self.model_ = self.trained_.model
        self.loss_history_ = self.trained_.loss_history
        return self

    def predict(self, X, lod=None):
        check_is_fitted(self, "model_")
        X = check_array(X, "X")
        return decode_point(self.model_, X, lod=lod)


class KLTCompressor(BaseEstimator, TransformerMixin):
    """Low-rank feature compression in the covariance eigenbasis.

    ``transform`` maps rows to their leading ``n_components``
    coefficients; ``inverse_transform`` reconstructs. The stored payload
    scales as n_components / width of the raw rows.
    """

    def __init__(self, n_components=8):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, "X")
        self.transform_ = baselines.klt_fit(X)
        if not 1 <= self.n_components <= self.transform_.width:
            raise ValueError(
                f"n_components must be in 1..{self.transform_.width}"
            )
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        X = check_array(X, "X")
        return baselines.klt_transform(X, self.transform_, self.n_components)

    def inverse_transform(self, coeffs):
        check_is_fitted(self, "transform_")
        coeffs = check_array(coeffs, "coeffs")
        return (
            self.transform_.mean
            + coeffs @ self.transform_.basis[:, : self.n_components].T
        )

    def reconstruct(self, X):
        """Round trip through the truncated basis."""
        check_is_fitted(self, "transform_")
        X = check_array(X, "X")
        return baselines.klt_truncate(X, self.transform_, self.n_components)


class KMeansQuantizer(BaseEstimator, TransformerMixin):
    """Post-hoc vector quantization with a 2^bitwidth-row codebook."""

    def __init__(self, bitwidth=4, max_iters=100, seed=0):
        self.bitwidth = bitwidth
        self.max_iters = max_iters
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, "X")
        result = baselines.kmeans_vq(
            X, self.bitwidth, max_iters=self.max_iters, seed=self.seed
        )
        self.codebook_ = result.codebook
        self.labels_ = result.assignments
        self.inertia_ = result.inertia
        return self

    def predict(self, X):
        check_is_fitted(self, "codebook_")
        X = check_array(X, "X")
        d = ((X[:, None, :] - self.codebook_[None, :, :]) ** 2).sum(axis=2)
        return d.argmin(axis=1)

    def transform(self, X):
        """Quantized reconstruction: each row snapped to its nearest code."""
        return self.codebook_[self.predict(X)]
