"""Scikit-learn style wrappers around fusion, training and detection.

``X`` is a :class:`~gprae.volume.Volume` or a ``(T, X, Y)`` array and ``y``
holds one 0/1 label per B-scan. ``HiddenInstabilityDetector`` learns from
the first ``n_training_bscans`` scans of ``X`` (which must be object-free)
and scores B-scans by the maximum of their anomaly mask.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .anomaly import AnomalyMask, classify, score_volume, select_threshold
from .autoencoder import ArchitectureSpec, TrainConfig, build_model, train
from .blocking import BlockGeometry, background_blocks
from .preprocess import fuse_volumes
from .volume import Volume, normalize


def check_volume(X, name: str = "X") -> Volume:
    """Coerce to a :class:`Volume`; arrays must be 3D, finite, non-empty."""
    if isinstance(X, Volume):
        vol = X
    else:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"{name} must be a Volume or a (T, X, Y) array, got ndim={arr.ndim}")
        vol = Volume(arr)
    if not np.all(np.isfinite(vol.data)):
        raise ValueError(f"{name} contains NaN or infinite samples")
    return vol


def check_labels(y, n_scans: int, name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_scans:
        raise ValueError(f"{name} must hold one label per B-scan ({n_scans}), got shape {y.shape}")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError(f"{name} labels must be 0 or 1")
    return y.astype(np.int8)


def check_pair(X):
    """Split ``X = (v_h, v_v)`` into two validated volumes."""
    try:
        v_h, v_v = X
    except (TypeError, ValueError):
        raise ValueError("expected a pair (v_h, v_v) of volumes") from None
    return check_volume(v_h, "v_h"), check_volume(v_v, "v_v")


class PolarizationFuser(TransformerMixin, BaseEstimator):
    """Stateless: ``transform((v_h, v_v))`` returns the fused volume."""

    def __init__(self, max_lag=None, normalize=True):
        self.max_lag = max_lag
        self.normalize = normalize

    def fit(self, X, y=None):
        check_pair(X)
        return self

    def transform(self, X):
        v_h, v_v = check_pair(X)
        fused, lags = fuse_volumes(v_h, v_v, self.max_lag)
        self.lags_ = lags
        return normalize(fused) if self.normalize else fused


class HiddenInstabilityDetector(BaseEstimator):
    """Autoencoder anomaly detector on a volume's B-scans.

    ``fit`` trains on background blocks from the first ``n_training_bscans``
    scans. ``calibrate`` picks ``gamma_`` on labelled scans at
    ``target_fpr``. ``score_samples`` gives one score per B-scan and
    ``predict`` thresholds it.
    """

    def __init__(self, family="a3", dims="3d", block_size=64, stride=4,
                 n_training_bscans=5, epochs_max=100, batch_size=32, patience=5,
                 validation_fraction=0.1, min_delta=0.02, max_train_blocks=1024,
                 train_stride=None, target_fpr=0.0, seed=0, threads=1):
        self.family = family
        self.dims = dims
        self.block_size = block_size
        self.stride = stride
        self.n_training_bscans = n_training_bscans
        self.epochs_max = epochs_max
        self.batch_size = batch_size
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.min_delta = min_delta
        self.max_train_blocks = max_train_blocks
        self.train_stride = train_stride
        self.target_fpr = target_fpr
        self.seed = seed
        self.threads = threads

    # -- helpers -----------------------------------------------------------

    def _spec(self):
        return ArchitectureSpec(self.family, self.dims, (self.block_size, self.block_size))

    def geometry(self, stride=None) -> BlockGeometry:
        return BlockGeometry.square(self.block_size, stride or self.stride, self.dims)

    def _train_config(self):
        return TrainConfig(
            n_training_bscans=self.n_training_bscans, epochs_max=self.epochs_max,
            batch_size=self.batch_size, patience=self.patience,
            validation_fraction=self.validation_fraction, seed=self.seed,
            min_delta=self.min_delta, threads=self.threads,
        )

    # -- estimator API -----------------------------------------------------

    def fit(self, X, y=None, model=None):
        """Train on the leading background scans.

        A pre-built ``model`` (same architecture) may be passed as the
        starting point; otherwise one is initialised from ``seed``.
        """
        vol = normalize(check_volume(X))
        n = int(self.n_training_bscans)
        if not 1 <= n <= vol.shape[2]:
            raise ValueError(f"n_training_bscans must lie in [1, {vol.shape[2]}]")
        if y is not None:
            y = check_labels(y, vol.shape[2])
            if y[:n].any():
                raise ValueError("training B-scans must be object-free (label 0)")
        spec = self._spec()
        model = build_model(spec, self.seed) if model is None else model
        blocks = background_blocks(
            vol, self.geometry(self.train_stride), range(n),
            max_blocks=self.max_train_blocks, seed=self.seed,
        )
        result = train(model, blocks, self._train_config())
        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_train_blocks_ = len(blocks)
        self.gamma_ = 0.0
        return self

    def set_model(self, model):
        """Use an already trained model instead of calling ``fit``."""
        self.model_ = model
        self.history_, self.best_epoch_ = [], 0
        self.gamma_ = getattr(self, "gamma_", 0.0)
        return self

    def transform(self, X) -> AnomalyMask:
        check_is_fitted(self, "model_")
        vol = normalize(check_volume(X))
        return score_volume(self.model_, vol, self.geometry(), chunk=4, threads=self.threads)

    def score_samples(self, X) -> np.ndarray:
        mask = X if isinstance(X, AnomalyMask) else self.transform(X)
        return mask.per_bscan_max

    def calibrate(self, X, y, scans=None):
        """Set ``gamma_`` from labelled scans (0-based ``scans``, default all)."""
        scores = self.score_samples(X)
        y = check_labels(y, len(scores))
        idx = np.arange(len(scores)) if scans is None else np.asarray(scans)
        self.gamma_ = select_threshold(scores[idx], y[idx], self.target_fpr)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.score_samples(X) - self.gamma_

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return classify(self.score_samples(X), self.gamma_)
