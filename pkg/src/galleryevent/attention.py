"""Attention pooling over photo sets.

An album descriptor is the softmax-weighted sum of its (L2-normalised)
photo features, with weights ``softmax(X @ q)``; a dense layer with softmax
(single-label) or sigmoid (multi-label) outputs classifies the descriptor.
Gradients are derived by hand; :func:`gradient_check` compares them with
central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin

from ._optim import Adam, EarlyStopping
from ._validation import as_label_sets, check_is_fitted, check_matrix, check_sets, label_matrix
from .data import GalleryManifest, FeatureStore, l2_normalize
from .exceptions import FormatError, TrainingError, ValidationError


@dataclass(frozen=True)
class AttentionModel:
    q: np.ndarray  # (D,)
    dense_weights: np.ndarray  # (C, D)
    dense_bias: np.ndarray  # (C,)
    multi_label: bool = False
    normalize_inputs: bool = True

    def __post_init__(self):
        D = self.q.shape[0]
        if self.q.ndim != 1 or self.dense_weights.ndim != 2 or self.dense_weights.shape[1] != D:
            raise ValidationError("q must be (D,) and dense_weights (C, D)")
        if self.dense_bias.shape != (self.dense_weights.shape[0],):
            raise ValidationError("dense_bias must be (C,)")
        for arr in (self.q, self.dense_weights, self.dense_bias):
            if not np.all(np.isfinite(arr)):
                raise ValidationError("attention parameters must be finite")

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    @property
    def num_classes(self) -> int:
        return self.dense_weights.shape[0]

    def params(self):
        return [self.q, self.dense_weights, self.dense_bias]

    def replace(self, q=None, dense_weights=None, dense_bias=None) -> AttentionModel:
        return AttentionModel(
            self.q if q is None else q,
            self.dense_weights if dense_weights is None else dense_weights,
            self.dense_bias if dense_bias is None else dense_bias,
            self.multi_label,
            self.normalize_inputs,
        )

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "dim": self.dim,
            "q": self.q.tolist(),
            "dense_weights": self.dense_weights.ravel().tolist(),
            "dense_bias": self.dense_bias.tolist(),
            "multi_label": self.multi_label,
            "normalize_inputs": self.normalize_inputs,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            q = np.asarray(doc["q"], dtype=np.float64)
            b = np.asarray(doc["dense_bias"], dtype=np.float64)
            W = np.asarray(doc["dense_weights"], dtype=np.float64)
            if W.size != b.size * q.size:
                raise FormatError("dense_weights size does not match q and dense_bias",
                                  field="dense_weights")
            return cls(q, W.reshape(b.size, q.size), b, bool(doc.get("multi_label", False)),
                       bool(doc.get("normalize_inputs", True)))
        except KeyError as exc:
            raise FormatError("required field missing", field=exc.args[0]) from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class AttentionTrainConfig:
    subset_size: int = 10
    learning_rate: float = 0.001
    max_epochs: int = 10
    early_stop_patience: int = 2
    seed: int = 0
    subsets_per_album: int = 1
    batch_size: int = 32
    init_scale: float = 0.05

    def __post_init__(self):
        if self.subset_size < 1 or self.subsets_per_album < 1 or self.batch_size < 1:
            raise ValidationError("subset_size, subsets_per_album and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.max_epochs < 1:
            raise ValidationError("learning_rate must be positive and max_epochs >= 1")
        if self.early_stop_patience < 0:
            raise ValidationError("early_stop_patience must be non-negative")

    def to_dict(self):
        return asdict(self)


def attention_weights(q, features):
    """Softmax of ``features @ q`` (max-subtracted)."""
    X = check_matrix(features, name="features")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (X.shape[1],):
        raise ValidationError(f"q has shape {q.shape}, features have {X.shape[1]} columns")
    return softmax(X @ q)


def aggregate(features, weights):
    """Weighted sum of the feature rows."""
    X = check_matrix(features, name="features")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (X.shape[0],):
        raise ValidationError(f"{w.shape[0] if w.ndim else 0} weights for {X.shape[0]} features")
    return w @ X


def _activate(U, multi_label):
    return expit(U) if multi_label else softmax(U, axis=-1)


def forward(model: AttentionModel, features):
    """Class confidences for one photo set of any size >= 1."""
    X = check_matrix(features, dim=model.dim, name="features")
    if model.normalize_inputs:
        X = l2_normalize(X)
    z = aggregate(X, attention_weights(model.q, X))
    return _activate(model.dense_weights @ z + model.dense_bias, model.multi_label)


def descriptor(model: AttentionModel, features):
    X = check_matrix(features, dim=model.dim, name="features")
    if model.normalize_inputs:
        X = l2_normalize(X)
    return aggregate(X, attention_weights(model.q, X))


def loss_and_grad(q, W, b, X, Y, multi_label):
    """Mean loss over a batch of equal-size sets and its gradients.

    ``X`` is (B, S, D) of already-normalised features and ``Y`` the (B, C)
    one-hot / multi-hot targets. Returns ``(loss, (dq, dW, db))``.
    """
    B, _, _ = X.shape
    C = W.shape[0]
    s = X @ q  # (B, S)
    a = softmax(s, axis=1)
    z = np.einsum("bs,bsd->bd", a, X)
    U = z @ W.T + b
    if multi_label:
        loss = np.sum(np.logaddexp(0.0, U) - Y * U) / (B * C)
        G = (expit(U) - Y) / (B * C)
    else:
        loss = -np.sum(Y * log_softmax(U, axis=1)) / B
        G = (softmax(U, axis=1) - Y) / B
    dW = G.T @ z
    db = G.sum(axis=0)
    H = G @ W  # dL/dz, (B, D)
    R = np.einsum("bsd,bd->bs", X, H)  # dL/da
    dS = a * (R - np.sum(a * R, axis=1, keepdims=True))
    dq = np.einsum("bs,bsd->d", dS, X)
    return float(loss), (dq, dW, db)


def _targets(label_sets, num_classes, multi_label):
    return label_matrix(label_sets, num_classes, multi_label=multi_label)


def gradient_check(model: AttentionModel, features, target, step=1e-5, floor=1e-6):
    """Largest relative error between analytic and central-difference gradients.

    Relative error per parameter is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps components that are zero up to rounding from dominating.
    """
    if step <= 0:
        raise ValidationError("step must be positive")
    X = check_matrix(features, dim=model.dim, name="features")
    if model.normalize_inputs:
        X = l2_normalize(X)
    X = X[None]
    Y = _targets(as_label_sets([target], model.num_classes), model.num_classes, model.multi_label)
    params = [p.astype(np.float64, copy=True) for p in model.params()]
    _, grads = loss_and_grad(*params, X, Y, model.multi_label)

    worst = 0.0
    for p, g in zip(params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp, _ = loss_and_grad(*params, X, Y, model.multi_label)
            flat[i] = orig - step
            lm, _ = loss_and_grad(*params, X, Y, model.multi_label)
            flat[i] = orig
            num = (lp - lm) / (2 * step)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, err)
    return worst


def draw_subsets(sets, subset_size, subsets_per_album, rng):
    """Fixed-size training items: S photos per draw, with replacement only
    when the album holds fewer than S photos.

    Returns ``(items, owner)`` where ``items`` is (N * k, S, D) and
    ``owner[i]`` the index of the album item ``i`` was drawn from.
    """
    items, owner = [], []
    for n, X in enumerate(sets):
        m = X.shape[0]
        for _ in range(subsets_per_album):
            idx = rng.choice(m, size=subset_size, replace=m < subset_size)
            items.append(X[idx])
            owner.append(n)
    return np.stack(items), np.asarray(owner, dtype=int)


def _fit(sets, label_sets, num_classes, multi_label, config: AttentionTrainConfig,
         normalize_inputs=True):
    if not sets:
        raise TrainingError("no albums to train on")
    rng = np.random.default_rng(config.seed)
    if normalize_inputs:
        sets = [l2_normalize(X) for X in sets]
    items, owner = draw_subsets(sets, config.subset_size, config.subsets_per_album, rng)
    Y = _targets([label_sets[n] for n in owner], num_classes, multi_label)

    D = items.shape[2]
    q = np.zeros(D)
    W = rng.uniform(-config.init_scale, config.init_scale, size=(num_classes, D))
    b = np.zeros(num_classes)
    params = [q, W, b]
    opt = Adam(params, learning_rate=config.learning_rate)
    stopper = EarlyStopping(config.early_stop_patience)
    stopper.update(loss_and_grad(q, W, b, items, Y, multi_label)[0], params)

    n_items = len(items)
    for _ in range(config.max_epochs):
        order = rng.permutation(n_items)
        for start in range(0, n_items, config.batch_size):
            batch = order[start:start + config.batch_size]
            _, grads = loss_and_grad(q, W, b, items[batch], Y[batch], multi_label)
            opt.step(grads)
        loss, _ = loss_and_grad(q, W, b, items, Y, multi_label)
        if stopper.update(loss, params):
            break
    q, W, b = stopper.best_params
    return AttentionModel(q, W, b, multi_label, normalize_inputs), stopper.history


def train_attention(manifest: GalleryManifest, store: FeatureStore,
                    config: AttentionTrainConfig = AttentionTrainConfig(), multi_label=None):
    """Train the pooling network on fixed-size subsets of every album."""
    store.check_covers(manifest)
    sets = [store.matrix(a.photo_ids) for a in manifest.albums]
    label_sets = [a.labels for a in manifest.albums]
    if multi_label is None:
        multi_label = manifest.is_multi_label
    model, _ = _fit(sets, label_sets, manifest.num_classes, multi_label, config)
    return model


class AttentionPoolingClassifier(ClassifierMixin, BaseEstimator):
    """Set classifier with learnable attention pooling.

    ``X`` is a sequence of photo sets, each an array of shape (m_i, D).

    Parameters
    ----------
    subset_size : int, default=10
        Photos per training item.
    learning_rate : float, default=0.001
    max_epochs : int, default=10
    early_stop_patience : int, default=2
        Monitored on training loss.
    seed : int, default=0
    subsets_per_album : int, default=1
    batch_size : int, default=32
    multi_label : bool or None
        Inferred from ``y`` when None (any set with several labels).
    num_classes : int or None
    normalize : bool, default=True
        L2-normalise photo features before pooling.

    Attributes
    ----------
    model_ : AttentionModel
    loss_history_ : list of float
    """

    def __init__(self, subset_size=10, learning_rate=0.001, max_epochs=10, early_stop_patience=2,
                 seed=0, subsets_per_album=1, batch_size=32, multi_label=None, num_classes=None,
                 normalize=True):
        self.subset_size = subset_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.seed = seed
        self.subsets_per_album = subsets_per_album
        self.batch_size = batch_size
        self.multi_label = multi_label
        self.num_classes = num_classes
        self.normalize = normalize

    def _config(self):
        return AttentionTrainConfig(self.subset_size, self.learning_rate, self.max_epochs,
                                    self.early_stop_patience, self.seed, self.subsets_per_album,
                                    self.batch_size)

    def fit(self, X, y):
        sets = check_sets(X)
        label_sets = as_label_sets(y, self.num_classes)
        if len(label_sets) != len(sets):
            raise ValidationError(f"{len(sets)} sets but {len(label_sets)} labels")
        C = self.num_classes or max(max(s) for s in label_sets) + 1
        multi = self.multi_label
        if multi is None:
            multi = any(len(s) > 1 for s in label_sets)
        self.model_, self.loss_history_ = _fit(sets, label_sets, C, multi, self._config(),
                                               self.normalize)
        self.classes_ = np.arange(C)
        self.n_features_in_ = sets[0].shape[1]
        return self

    @classmethod
    def from_model(cls, model: AttentionModel):
        est = cls(multi_label=model.multi_label, num_classes=model.num_classes,
                  normalize=model.normalize_inputs)
        est.model_ = model
        est.loss_history_ = []
        est.classes_ = np.arange(model.num_classes)
        est.n_features_in_ = model.dim
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return np.stack([forward(self.model_, s) for s in check_sets(X, dim=self.model_.dim)])

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def transform(self, X):
        """Pooled descriptors, one row per set."""
        check_is_fitted(self, "model_")
        return np.stack([descriptor(self.model_, s) for s in check_sets(X, dim=self.model_.dim)])
