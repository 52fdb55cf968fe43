"""Scikit-learn style estimator facade over the training loop.

``VisualOdometer`` exposes the package through the familiar
``fit / predict / score / get_params`` surface so it composes with
scikit-learn tooling (``clone``, grid search over its hyperparameters,
pipelines that treat the odometer as a final step). Samples are frame
pairs; ``fit`` accepts one sequence or a list of sequences of
:class:`~tempovo.synth.FramePair`, ``predict`` maps each pair to its
relative pose, and ``score`` is the negative absolute trajectory error
(higher is better, 0 is perfect).

Construction stores hyperparameters verbatim (the scikit-learn
contract); all validation happens in ``fit`` when the training
configuration is built.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import metrics as metrics_mod
from .geometry import PoseSE3, Trajectory
from .model import predict_pairs
from .synth import FramePair
from .train import (
    TrainConfig,
    evaluate_model,
    ground_truth_trajectory,
    predicted_trajectory,
    train,
)


def as_sequences(X) -> list:
    """Normalize estimator input to a list of frame-pair sequences."""
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], FramePair):
        return [list(X)]
    if (isinstance(X, (list, tuple)) and X
            and all(isinstance(s, (list, tuple)) and s
                    and all(isinstance(p, FramePair) for p in s) for s in X)):
        return [list(s) for s in X]
    raise TypeError(
        "expected a sequence of FramePair or a list of such sequences, "
        f"got {type(X).__name__}"
    )


class VisualOdometer(BaseEstimator):
    """Time-conditioned egomotion estimator with a scikit-learn API.

    Parameters mirror :class:`~tempovo.train.TrainConfig`; see that class
    for semantics. Fitted attributes: ``net_`` (the trained network),
    ``config_`` (the validated training configuration), ``records_`` and
    ``val_records_`` (training and validation logs).
    """

    def __init__(self, frequency_set=(12.0, 6.0, 4.0), base_rate=12.0,
                 k_pe=8, batch_size=8, iterations=10000, lr=3e-4,
                 grad_clip=1.0, seed=0, lambda_rot=1.0, lambda_trans=1.0,
                 provider="oracle", time_conditioning=True, rot_loss="nll",
                 depth_noise=0.0, intrinsics_noise=0.0, size=64,
                 geo_patch=None, val_interval=500):
        self.frequency_set = frequency_set
        self.base_rate = base_rate
        self.k_pe = k_pe
        self.batch_size = batch_size
        self.iterations = iterations
        self.lr = lr
        self.grad_clip = grad_clip
        self.seed = seed
        self.lambda_rot = lambda_rot
        self.lambda_trans = lambda_trans
        self.provider = provider
        self.time_conditioning = time_conditioning
        self.rot_loss = rot_loss
        self.depth_noise = depth_noise
        self.intrinsics_noise = intrinsics_noise
        self.size = size
        self.geo_patch = geo_patch
        self.val_interval = val_interval

    def _config(self) -> TrainConfig:
        params = self.get_params()
        params["frequency_set"] = tuple(params["frequency_set"])
        return TrainConfig(**params)

    def fit(self, X, y=None, val_sequences=None):
        """Train on one or more frame-pair sequences. y is ignored."""
        config = self._config()
        result = train(config, as_sequences(X), val_sequences=val_sequences)
        self.net_ = result.net
        self.config_ = config
        self.records_ = result.records
        self.val_records_ = result.val_records
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError(
                "this VisualOdometer is not fitted yet; call fit first")

    def predict(self, X) -> list[PoseSE3]:
        """Relative pose (camera 2 in camera-1 coordinates) per frame pair."""
        self._check_fitted()
        pairs = list(X)
        if not all(isinstance(p, FramePair) for p in pairs):
            raise TypeError("predict expects a sequence of FramePair")
        return [p.pose() for p in predict_pairs(self.net_, pairs)]

    def predict_trajectory(self, X) -> Trajectory:
        """Accumulated world trajectory for one frame-pair sequence."""
        self._check_fitted()
        return predicted_trajectory(self.net_, list(X))

    def score(self, X, y=None) -> float:
        """Negative mean absolute trajectory error over the sequences."""
        self._check_fitted()
        ates = []
        for seq in as_sequences(X):
            pred = predicted_trajectory(self.net_, seq)
            gt = ground_truth_trajectory(seq)
            ates.append(metrics_mod.ate(pred, gt))
        return -float(np.mean(ates))

    def evaluate(self, X, k=1, lengths=metrics_mod.DEFAULT_LENGTHS) -> dict:
        """Full odometry metrics (t_err, r_err, ate, s_err) at skip factor k."""
        self._check_fitted()
        return evaluate_model(self.net_, as_sequences(X), k=k, lengths=lengths)
