"""
Predictive distributions from sentinel-only observations, and evaluation metrics.

Inputs at non-sentinel positions never enter: the selected model only has
columns for the surviving groups, so a surveillance row is just the
sentinels' states embedded with the model's basis.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .dynsys import as_basis, embed
from .errors import DimensionMismatch, EmptyTruth, ShapeMismatch
from .gsbl import LINEAR, LOGISTIC


@dataclass
class SurveillanceRow:
    """Raw sentinel states at one or more time points (``k`` or ``L x k``)."""

    values: np.ndarray
    sentinels: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.sentinels = np.asarray(self.sentinels, dtype=int)
        if self.values.shape[1] != self.sentinels.size:
            raise DimensionMismatch(
                f"{self.values.shape[1]} sentinel values for {self.sentinels.size} sentinels")

    @classmethod
    def from_panel(cls, panel, sentinels):
        """Keep only the sentinel columns of a full ``L x N`` panel."""
        panel = np.atleast_2d(np.asarray(panel, dtype=float))
        sentinels = np.asarray(sentinels, dtype=int)
        if sentinels.size and sentinels.max() >= panel.shape[1]:
            raise DimensionMismatch(
                f"sentinel index {sentinels.max()} outside a panel of {panel.shape[1]} components")
        return cls(panel[:, sentinels], sentinels)

    def features(self, basis=None):
        return embed(self.values, as_basis(basis))


@dataclass
class PredictiveOutput:
    """Per-target predictions; arrays are ``L x N`` for ``L`` input rows."""

    kind: str
    mean: Optional[np.ndarray] = None
    variance: Optional[np.ndarray] = None
    prob: Optional[np.ndarray] = None

    @property
    def point(self):
        return self.mean if self.kind == LINEAR else self.prob


def _features(post, x, basis):
    if isinstance(x, SurveillanceRow):
        x = x.features(basis)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = post.M.shape[0]
    if x.shape[1] != p:
        raise DimensionMismatch(f"input has {x.shape[1]} features, model expects {p}")
    return x


def predict_linear(post, lam, x, basis=None):
    """Gaussian predictive: mean ``x M`` and variance ``lam + x Sigma x^T``."""
    if post.kind != LINEAR:
        raise DimensionMismatch("predict_linear needs a linear posterior")
    x = _features(post, x, basis)
    mean = x @ post.M
    spread = np.einsum("la,ab,lb->l", x, post.Sigma, x)
    variance = np.repeat((lam + spread)[:, None], post.M.shape[1], axis=1)
    return PredictiveOutput(LINEAR, mean=mean, variance=variance)


def moderated_sigmoid(a, v):
    """``sigmoid(tau * a)`` with ``tau = (1 + pi v / 8)^(-1/2)``."""
    a = np.asarray(a, dtype=float)
    v = np.asarray(v, dtype=float)
    return expit(a / np.sqrt(1.0 + np.pi * v / 8.0))


def predict_logistic(post, x, basis=None):
    """Bernoulli predictive probabilities under the probit-style moderation."""
    if post.kind != LOGISTIC:
        raise DimensionMismatch("predict_logistic needs a logistic posterior")
    x = _features(post, x, basis)
    a = x @ post.M
    v = np.sum(np.matmul(x[None], post.Sigma) * x[None], axis=2).T
    return PredictiveOutput(LOGISTIC, mean=a, variance=v, prob=moderated_sigmoid(a, v))


def rollout(post, lam, surveillance, basis=None):
    """One-step-ahead predictions of all components.

    Row ``t`` of the result predicts time ``t + 1`` from the observed sentinel
    states at time ``t``; predictions are never fed back.
    """
    if post.kind == LINEAR:
        if lam is None:
            raise DimensionMismatch("linear rollout needs the noise variance")
        return predict_linear(post, lam, surveillance, basis)
    return predict_logistic(post, surveillance, basis)


def failure_rate(truth, found):
    """``1 - |truth & found| / |truth|``."""
    truth = {int(i) for i in np.ravel(list(truth))}
    found = {int(i) for i in np.ravel(list(found))}
    if not truth:
        raise EmptyTruth("the true sentinel set is empty")
    return 1.0 - len(truth & found) / len(truth)


def _residual(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ShapeMismatch(f"shapes differ: {y_true.shape} vs {y_pred.shape}")
    return y_true - y_pred


def rmse_paper(y_true, y_pred):
    """Frobenius norm of the error divided by ``T * N`` (not its square root)."""
    r = _residual(y_true, y_pred)
    return float(np.linalg.norm(r) / r.size) if r.size else 0.0


def rmse(y_true, y_pred):
    """Conventional root mean squared error."""
    r = _residual(y_true, y_pred)
    return float(np.sqrt(np.mean(r ** 2))) if r.size else 0.0
