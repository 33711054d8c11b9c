"""Per-photo confidence classifier.

L2-regularised multinomial logistic regression (independent sigmoids in
multi-label mode) fitted by full-batch Adam from a zero initialisation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin

from ._optim import Adam, EarlyStopping
from ._validation import as_label_sets, check_is_fitted, check_matrix, label_matrix
from .data import LabeledFeatureSet
from .exceptions import FormatError, TrainingError, ValidationError

PROBABILISTIC = "probabilistic"
MARGIN = "margin"


@dataclass(frozen=True)
class TrainConfig:
    l2_penalty: float = 1e-4
    learning_rate: float = 0.05
    max_epochs: int = 200
    early_stop_patience: int = 10
    seed: int = 0
    multi_label: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.l2_penalty < 0 or self.early_stop_patience < 0:
            raise ValidationError("l2_penalty and early_stop_patience must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray  # (C, D)
    bias: np.ndarray  # (C,)
    kind: str = PROBABILISTIC
    multi_label: bool = False

    def __post_init__(self):
        if self.kind not in (PROBABILISTIC, MARGIN):
            raise ValidationError(f"unknown model kind {self.kind!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValidationError("weights must be (C, D) and bias (C,)")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("model parameters must be finite")

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def as_kind(self, kind) -> LinearModel:
        return LinearModel(self.weights, self.bias, kind, self.multi_label)

    def to_dict(self):
        return {
            "kind": self.kind,
            "num_classes": self.num_classes,
            "dim": self.dim,
            "multi_label": self.multi_label,
            "weights": self.weights.ravel().tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            C, D = int(doc["num_classes"]), int(doc["dim"])
            W = np.asarray(doc["weights"], dtype=np.float64)
            if W.size != C * D:
                raise FormatError(f"weights has {W.size} entries, expected {C * D}", field="weights")
            return cls(
                W.reshape(C, D),
                np.asarray(doc["bias"], dtype=np.float64),
                doc.get("kind", PROBABILISTIC),
                bool(doc.get("multi_label", False)),
            )
        except KeyError as exc:
            raise FormatError("required field missing", field=exc.args[0]) from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def linear_loss_grad(W, b, X, Y, l2_penalty, multi_label):
    """Regularised training loss and its gradients with respect to (W, b).

    Single-label: mean categorical cross-entropy. Multi-label: binary
    cross-entropy averaged over samples and classes. The L2 term
    ``l2_penalty / 2 * ||W||^2`` leaves the bias unpenalised.
    """
    n, C = Y.shape
    Z = np.asarray(X @ W.T) + b
    if multi_label:
        loss = np.sum(np.logaddexp(0.0, Z) - Y * Z) / (n * C)
        G = (expit(Z) - Y) / (n * C)
    else:
        loss = -np.sum(Y * log_softmax(Z, axis=1)) / n
        G = (softmax(Z, axis=1) - Y) / n
    loss += 0.5 * l2_penalty * np.sum(W * W)
    gW = np.asarray(X.T @ G).T + l2_penalty * W
    gb = G.sum(axis=0)
    return float(loss), gW, gb


def _fit(X, label_sets, num_classes, config: TrainConfig):
    present = set().union(*label_sets) if label_sets else set()
    if len(present) < 2:
        raise TrainingError(f"need at least 2 distinct classes, found {len(present)}")
    Y = label_matrix(label_sets, num_classes, multi_label=config.multi_label)
    W = np.zeros((num_classes, X.shape[1]))
    b = np.zeros(num_classes)
    opt = Adam([W, b], learning_rate=config.learning_rate)
    stopper = EarlyStopping(config.early_stop_patience)
    for _ in range(config.max_epochs):
        loss, gW, gb = linear_loss_grad(W, b, X, Y, config.l2_penalty, config.multi_label)
        if stopper.update(loss, [W, b]):
            break
        opt.step([gW, gb])
    else:
        loss, _, _ = linear_loss_grad(W, b, X, Y, config.l2_penalty, config.multi_label)
        stopper.update(loss, [W, b])
    W, b = stopper.best_params
    model = LinearModel(W, b, PROBABILISTIC, config.multi_label)
    return model, stopper.history


def train_linear(data: LabeledFeatureSet, config: TrainConfig = TrainConfig(), num_classes=None):
    """Fit the confidence classifier on an unfolded training set."""
    if len(data) == 0:
        raise TrainingError("empty training set")
    X = check_matrix(data.features, accept_sparse=True, name="features")
    label_sets = as_label_sets(data.labels, num_classes)
    if num_classes is None:
        num_classes = max(max(s) for s in label_sets) + 1
    model, _ = _fit(X, label_sets, num_classes, config)
    return model


def predict_scores(model: LinearModel, feature):
    """Confidence scores for one feature vector (or each row of a matrix)."""
    single = np.ndim(feature) == 1 and not sp.issparse(feature)
    X = check_matrix(np.atleast_2d(feature) if single else feature, dim=model.dim,
                     accept_sparse=True, name="feature")
    Z = np.asarray(X @ model.weights.T) + model.bias
    if model.kind == PROBABILISTIC:
        Z = expit(Z) if model.multi_label else softmax(Z, axis=1)
    return Z[0] if single else Z


def decide(confidences):
    """Index of the largest confidence; ties go to the smallest index.

    Row-wise for 2-D input.
    """
    p = np.asarray(confidences, dtype=np.float64)
    if p.size == 0 or p.shape[-1] == 0:
        raise ValidationError("cannot decide on an empty confidence vector")
    if p.ndim == 1:
        return int(np.argmax(p))
    return np.argmax(p, axis=-1)


class LinearEventClassifier(ClassifierMixin, BaseEstimator):
    """Per-photo event classifier producing confidence vectors.

    Parameters
    ----------
    l2_penalty : float, default=1e-4
        Coefficient of the ``0.5 * ||W||^2`` penalty.
    learning_rate : float, default=0.05
        Adam step size.
    max_epochs : int, default=200
        Full-batch iterations.
    early_stop_patience : int, default=10
        Epochs without a training-loss improvement before stopping.
    seed : int, default=0
        Kept for interface uniformity; the fit is deterministic.
    multi_label : bool, default=False
        Train independent sigmoids with binary cross-entropy.
    num_classes : int or None
        Defaults to ``max(label) + 1``.
    output : {"probabilistic", "margin"}
        What :meth:`decision_function` style scores ``scores`` returns.

    Attributes
    ----------
    model_ : LinearModel
    loss_history_ : list of float
        Training loss of every accepted epoch (non-increasing).
    """

    def __init__(self, l2_penalty=1e-4, learning_rate=0.05, max_epochs=200,
                 early_stop_patience=10, seed=0, multi_label=False, num_classes=None,
                 output=PROBABILISTIC):
        self.l2_penalty = l2_penalty
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.seed = seed
        self.multi_label = multi_label
        self.num_classes = num_classes
        self.output = output

    def _config(self):
        return TrainConfig(self.l2_penalty, self.learning_rate, self.max_epochs,
                           self.early_stop_patience, self.seed, self.multi_label)

    def fit(self, X, y):
        X = check_matrix(X, accept_sparse=True)
        label_sets = as_label_sets(y, self.num_classes)
        if len(label_sets) != X.shape[0]:
            raise ValidationError(f"X has {X.shape[0]} rows but y has {len(label_sets)} entries")
        C = self.num_classes or max(max(s) for s in label_sets) + 1
        model, history = _fit(X, label_sets, C, self._config())
        self.model_ = model.as_kind(self.output)
        self.loss_history_ = history
        self.classes_ = np.arange(C)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model: LinearModel):
        est = cls(multi_label=model.multi_label, num_classes=model.num_classes, output=model.kind)
        est.model_ = model
        est.loss_history_ = []
        est.classes_ = np.arange(model.num_classes)
        est.n_features_in_ = model.dim
        return est

    def scores(self, X):
        check_is_fitted(self, "model_")
        return predict_scores(self.model_, check_matrix(X, accept_sparse=True))

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict_scores(self.model_.as_kind(PROBABILISTIC), check_matrix(X, accept_sparse=True))

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return predict_scores(self.model_.as_kind(MARGIN), check_matrix(X, accept_sparse=True))

    def predict(self, X):
        return decide(self.decision_function(X))
