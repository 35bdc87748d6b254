"""
scikit-learn style front end for the Euler-angle flow.

``EulerFlowDensity`` follows the density-estimator conventions of
``sklearn.neighbors.KernelDensity`` (fit / score_samples / score / sample)
and adds transform / inverse_transform for the flow's normalizing direction
and predict for context-conditioned point estimates.

Rotations may be passed as (n, 3, 3) or (n, 9) arrays; Euler angles as
(n, 3) arrays.
"""

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .flow import MODES, TORUS
from .rotations import check_rotation, euler_to_rotmat, rotmat_to_euler, wrap_angle
from .training import TrainConfig, predict_modes, train_euler

INPUT_FORMATS = ("auto", "rotmat", "euler")


def check_rotations(X):
    """Validate rotation input and return it as an (n, 3, 3) float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] == 9:
        X = X.reshape(-1, 3, 3)
    if X.ndim != 3 or X.shape[1:] != (3, 3):
        raise ValueError(f"expected rotations of shape (n, 3, 3) or (n, 9), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("found an empty array of rotations")
    return check_rotation(X)


def check_euler(X):
    X = check_array(X, dtype=float, ensure_min_samples=1)
    if X.shape[1] != 3:
        raise ValueError(f"expected Euler angles of shape (n, 3), got {X.shape}")
    return wrap_angle(X)


def as_euler(X, input_format="auto"):
    """Convert rotation or Euler-angle input to canonical Euler angles (n, 3)."""
    if input_format not in INPUT_FORMATS:
        raise ValueError(f"input_format must be one of {INPUT_FORMATS}")
    shape = np.shape(X)
    if input_format == "euler" or (input_format == "auto" and len(shape) == 2 and shape[1] == 3):
        return check_euler(X)
    return rotmat_to_euler(check_rotations(X), check=False)


def check_context(context, n, width):
    if width == 0:
        if context is not None:
            raise ValueError("estimator was fitted without context")
        return None
    if context is None:
        raise ValueError(f"estimator was fitted with context of width {width}; pass context=")
    context = check_array(context, dtype=float)
    if context.shape != (n, width):
        raise ValueError(f"context shape {context.shape} does not match ({n}, {width})")
    return context


class EulerFlowDensity(DensityMixin, BaseEstimator):
    """
    Normalizing-flow density on SO(3) built from Moebius coupling layers
    over Euler angles.

    Parameters
    ----------
    n_layers : int, default=4
        Coupling layers; layer i transforms angle i mod 3.
    n_kernels : int, default=16
        Moebius kernels per combination.
    hidden : tuple of int, default=(64, 64)
        Conditioner hidden widths.
    batch_size : int, default=256
    learning_rate : float, default=1e-3
    max_iter : int, default=5000
        Adam iterations.
    clip_norm : float, default=100.0
        Global gradient-norm clip.
    n_threads : int, default=1
        Data-parallel gradient workers.
    score_mode : {"torus", "haar"}, default="torus"
        Reference measure for score_samples / score.
    input_format : {"auto", "rotmat", "euler"}, default="auto"
    random_state : int or None
    """

    def __init__(self, n_layers=4, n_kernels=16, hidden=(64, 64), batch_size=256,
                 learning_rate=1e-3, max_iter=5000, clip_norm=100.0, n_threads=1,
                 score_mode=TORUS, input_format="auto", random_state=None):
        self.n_layers = n_layers
        self.n_kernels = n_kernels
        self.hidden = hidden
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.clip_norm = clip_norm
        self.n_threads = n_threads
        self.score_mode = score_mode
        self.input_format = input_format
        self.random_state = random_state

    def _config(self):
        seed = self.random_state if self.random_state is not None else 0
        return TrainConfig(layers=self.n_layers, kernels=self.n_kernels, hidden=self.hidden,
                           batch=self.batch_size, lr=self.learning_rate,
                           iterations=self.max_iter, seed=seed, eval_every=self.max_iter,
                           clip_norm=self.clip_norm, threads=self.n_threads)

    def fit(self, X, y=None, context=None):
        """
        Fit the flow to rotations (or Euler angles) ``X``.

        ``context`` is an optional (n, c) array of conditioning vectors.
        """
        if self.score_mode not in MODES:
            raise ValueError(f"score_mode must be one of {MODES}")
        x = as_euler(X, self.input_format)
        ctx = None if context is None else check_array(context, dtype=float)
        if ctx is not None and ctx.shape[0] != x.shape[0]:
            raise ValueError("X and context have different numbers of rows")
        self.model_, self.loss_history_ = train_euler(self._config(), x, ctx)
        self.context_width_ = 0 if ctx is None else ctx.shape[1]
        self.n_iter_ = len(self.loss_history_)
        return self

    def score_samples(self, X, context=None):
        """Log-density of each sample under ``score_mode``."""
        check_is_fitted(self, "model_")
        x = as_euler(X, self.input_format)
        ctx = check_context(context, x.shape[0], self.context_width_)
        return self.model_.log_prob(x, ctx, mode=self.score_mode)

    def score(self, X, y=None, context=None):
        """Mean log-likelihood (note: KernelDensity returns the sum; the mean is scale-free)."""
        return float(np.mean(self.score_samples(X, context)))

    def transform(self, X, context=None):
        """Map data to base-space Euler angles (the normalizing direction)."""
        check_is_fitted(self, "model_")
        x = as_euler(X, self.input_format)
        ctx = check_context(context, x.shape[0], self.context_width_)
        return self.model_.forward(x, ctx)[0]

    def inverse_transform(self, Z, context=None):
        """Map base-space Euler angles back to data-space Euler angles."""
        check_is_fitted(self, "model_")
        z = check_euler(Z)
        ctx = check_context(context, z.shape[0], self.context_width_)
        return self.model_.inverse(z, ctx)

    def sample(self, n_samples=1, context=None, random_state=None):
        """Draw rotations, returned as (n_samples, 3, 3)."""
        check_is_fitted(self, "model_")
        if self.context_width_ and context is not None and np.ndim(context) == 1:
            context = np.broadcast_to(np.asarray(context, dtype=float),
                                      (n_samples, self.context_width_))
        ctx = check_context(context, n_samples, self.context_width_)
        x = self.model_.sample_euler(n_samples, ctx, rng=random_state)
        return euler_to_rotmat(x)

    def predict(self, context, n_candidates=512, random_state=None):
        """Sample-argmax rotation estimate for each context row (conditional models)."""
        check_is_fitted(self, "model_")
        if self.context_width_ == 0:
            raise ValueError("predict() needs a model fitted with context")
        ctx = check_array(context, dtype=float)
        check_context(ctx, ctx.shape[0], self.context_width_)
        return predict_modes(self.model_, ctx, n_candidates, random_state)
