"""scikit-learn style aligners.

Both estimators take ``X`` as a sequence of ``(current, reference, flow)``
triples and ``predict`` returns one aligned grid per triple. ``score`` is the
mean PSNR against the targets ``y``.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .implicit_align import AlignModel, align
from .metrics import psnr
from .resampling import ResampleMethod, backward_warp
from .train import fit as fit_model
from .validation import check_instances


class _AlignerMixin:
    def score(self, X, y):
        """Mean PSNR (peak 1) of the aligned grids against ``y``."""
        _, targets = check_instances(X, y)
        preds = self.predict(X)
        return float(np.mean([psnr(p, t) for p, t in zip(preds, targets)]))


class WarpAligner(_AlignerMixin, BaseEstimator):
    """Backward warping with a fixed interpolation kernel.

    Parameters
    ----------
    method : {"nearest", "bilinear", "bicubic"}
    """

    def __init__(self, method="bilinear"):
        self.method = method

    def fit(self, X=None, y=None):
        self.method_ = ResampleMethod(self.method)
        return self

    def predict(self, X):
        check_is_fitted(self, "method_")
        return [
            backward_warp(ref, flow, self.method_)
            for _, ref, flow in check_instances(X)
        ]


class ImplicitAligner(_AlignerMixin, BaseEstimator):
    """Attention-based implicit resampling with learned linear encoders.

    Parameters
    ----------
    window : int
        Side of the reference window.
    heads : int
        Attention heads; must divide the channel count.
    iterations : int
        Adam steps.
    learning_rate : float
    lr_schedule : {"constant", "cosine"}
    batch_size : int or None
        Instances per step; ``None`` trains full-batch.
    pe_decimal, pe_window : bool
        Enable the decimal-offset (query) and window-index encodings.
    random_state : int
        Seeds initialization and minibatch order.

    Attributes
    ----------
    model_ : AlignModel
    loss_trace_ : list of float
    n_iter_ : int
    """

    def __init__(
        self,
        window=2,
        heads=1,
        iterations=2000,
        learning_rate=1e-2,
        lr_schedule="constant",
        batch_size=None,
        pe_decimal=True,
        pe_window=True,
        random_state=0,
    ):
        self.window = window
        self.heads = heads
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.lr_schedule = lr_schedule
        self.batch_size = batch_size
        self.pe_decimal = pe_decimal
        self.pe_window = pe_window
        self.random_state = random_state

    def fit(self, X, y):
        instances, targets = check_instances(X, y)
        channels = {inst[0].shape[2] for inst in instances}
        if len(channels) != 1:
            raise ValueError(f"instances disagree on channel count: {sorted(channels)}")
        model = AlignModel.initialize(
            channels.pop(),
            window=self.window,
            heads=self.heads,
            seed=self.random_state,
            pe_decimal=self.pe_decimal,
            pe_window=self.pe_window,
        )
        dataset = [inst + (t,) for inst, t in zip(instances, targets)]
        self.model_, self.loss_trace_ = fit_model(
            model,
            dataset,
            self.iterations,
            lr=self.learning_rate,
            seed=self.random_state,
            schedule=self.lr_schedule,
            batch_size=self.batch_size,
        )
        self.n_iter_ = len(self.loss_trace_)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return [align(cur, ref, flow, self.model_)[0] for cur, ref, flow in check_instances(X)]
