"""Caption features and late fusion.

Captions become binary presence vectors over the most frequent training
words; a linear classifier is trained on them and its confidences are
blended with the embedding classifier as ``w * p_emb + (1 - w) * p_txt``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_label_sets, check_is_fitted, check_vector
from .data import SENTINEL_TOKENS, CaptionStore, tokenize_caption
from .exceptions import FormatError, TrainingError, ValidationError
from .linear import LinearModel, TrainConfig, _fit, decide


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    stopwords_applied: bool = False

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise ValidationError("vocabulary contains duplicate words")
        if any(w in SENTINEL_TOKENS for w in self.words):
            raise ValidationError("vocabulary contains sentinel tokens")
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    @property
    def index(self) -> dict[str, int]:
        return self._index

    def __len__(self):
        return len(self.words)

    def save(self, path):
        Path(path).write_text("".join(w + "\n" for w in self.words), encoding="utf-8")

    @classmethod
    def load(cls, path):
        words = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
        return cls(tuple(w for w in words if w))


@dataclass(frozen=True)
class SparseCaptionVector:
    active_indices: tuple[int, ...]
    size: int

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.active_indices)))
        if idx and (idx[0] < 0 or idx[-1] >= self.size):
            raise ValidationError(f"active index out of range for size {self.size}")
        object.__setattr__(self, "active_indices", idx)

    def to_dense(self):
        v = np.zeros(self.size)
        v[list(self.active_indices)] = 1.0
        return v


def build_vocabulary(captions: CaptionStore, train_ids, max_size=5000, stopwords=None) -> Vocabulary:
    """Top ``max_size`` training words by frequency (ties: lexicographic)."""
    if max_size < 1:
        raise ValidationError("max_size must be >= 1")
    stop = frozenset(w.lower() for w in (stopwords or ()))
    counts = Counter()
    for pid in train_ids:
        counts.update(t for t in captions.get(pid, ()) if t not in stop)
    if not counts:
        raise TrainingError("no training caption words; vocabulary would be empty")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tuple(w for w, _ in ranked[:max_size]), stopwords_applied=bool(stop))


def encode_one_hot(caption, vocab: Vocabulary) -> SparseCaptionVector:
    """Presence vector of a caption.

    ``caption`` is a sequence of words, or of integer word positions in the
    vocabulary. Out-of-vocabulary words are ignored.
    """
    if isinstance(caption, str):
        caption = tokenize_caption(caption)
    active = set()
    for tok in caption:
        if isinstance(tok, (int, np.integer)):
            active.add(int(tok))
        elif tok in vocab.index:
            active.add(vocab.index[tok])
    return SparseCaptionVector(tuple(active), len(vocab))


def to_csr(encoded, size=None):
    size = encoded[0].size if size is None else size
    indptr, indices = [0], []
    for vec in encoded:
        indices.extend(vec.active_indices)
        indptr.append(len(indices))
    data = np.ones(len(indices))
    return sp.csr_matrix((data, np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
                         shape=(len(encoded), size))


def save_encoded(path, photo_ids, encoded):
    with open(path, "w", encoding="utf-8") as fh:
        for pid, vec in zip(photo_ids, encoded):
            fh.write(json.dumps({"photo_id": pid, "active": list(vec.active_indices)}) + "\n")


def load_encoded(path, size):
    ids, vecs = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            ids.append(doc["photo_id"])
            vecs.append(SparseCaptionVector(tuple(doc["active"]), size))
        except (json.JSONDecodeError, KeyError) as exc:
            raise FormatError(str(exc), path=path, line=lineno) from exc
    return ids, vecs


def train_text_classifier(encoded, labels, config: TrainConfig = TrainConfig(), num_classes=None):
    """Linear classifier on sparse presence vectors (kept sparse throughout)."""
    if not encoded:
        raise TrainingError("no encoded captions")
    label_sets = as_label_sets(labels, num_classes)
    if len(label_sets) != len(encoded):
        raise ValidationError(f"{len(encoded)} captions but {len(label_sets)} labels")
    C = num_classes or max(max(s) for s in label_sets) + 1
    model, _ = _fit(to_csr(encoded), label_sets, C, config)
    return model


def fuse(p_emb, p_txt, w):
    """``w * p_emb + (1 - w) * p_txt``."""
    p_emb = check_vector(p_emb, name="p_emb")
    p_txt = check_vector(p_txt, dim=p_emb.shape[0], name="p_txt")
    if not 0.0 <= w <= 1.0:
        raise ValidationError(f"fusion weight {w} outside [0, 1]")
    return w * p_emb + (1.0 - w) * p_txt


def weight_grid(step=0.01):
    if step <= 0 or step > 1:
        raise ValidationError("grid_step must lie in (0, 1]")
    n = int(np.floor(1.0 / step + 1e-9))
    grid = [k * step for k in range(n + 1)]
    if abs(grid[-1] - 1.0) < 1e-9:
        grid[-1] = 1.0
    else:
        grid.append(1.0)
    return grid


def fusion_accuracy(p_emb, p_txt, labels, w) -> float:
    P = w * np.asarray(p_emb, dtype=np.float64) + (1.0 - w) * np.asarray(p_txt, dtype=np.float64)
    pred = decide(P)
    return float(np.mean([int(c) in t for c, t in zip(pred, labels)]))


def select_fusion_weight(validation_p_emb, validation_p_txt, validation_labels, grid_step=0.01,
                         return_accuracy=False):
    """Grid-search the fusion weight on a validation set; ties prefer larger ``w``."""
    p_emb = np.asarray(validation_p_emb, dtype=np.float64)
    p_txt = np.asarray(validation_p_txt, dtype=np.float64)
    if p_emb.size == 0 or len(p_emb) == 0:
        raise ValidationError("empty validation set")
    if p_emb.shape != p_txt.shape or p_emb.ndim != 2:
        raise ValidationError("validation score arrays must be parallel (n, C) arrays")
    labels = as_label_sets(validation_labels)
    if len(labels) != len(p_emb):
        raise ValidationError(f"{len(p_emb)} score rows but {len(labels)} labels")
    best_w, best_acc = None, -1.0
    for w in weight_grid(grid_step):
        acc = fusion_accuracy(p_emb, p_txt, labels, w)
        if acc >= best_acc:
            best_w, best_acc = w, acc
    return (best_w, best_acc) if return_accuracy else best_w


class CaptionVectorizer(TransformerMixin, BaseEstimator):
    """Binary bag-of-words over the ``max_features`` most frequent words.

    Accepts captions as strings or token sequences. ``transform`` returns a
    CSR matrix.
    """

    def __init__(self, max_features=5000, stop_words=None):
        self.max_features = max_features
        self.stop_words = stop_words

    @staticmethod
    def _tokens(doc):
        return tokenize_caption(doc) if isinstance(doc, str) else tuple(doc)

    def fit(self, X, y=None):
        docs = [self._tokens(d) for d in X]
        store = CaptionStore({str(i): tuple(t for t in d if t not in SENTINEL_TOKENS)
                              for i, d in enumerate(docs)})
        self.vocabulary_ = build_vocabulary(store, list(store.captions), self.max_features,
                                            self.stop_words)
        return self

    def transform(self, X):
        check_is_fitted(self, "vocabulary_")
        return to_csr([encode_one_hot(self._tokens(d), self.vocabulary_) for d in X],
                      len(self.vocabulary_))

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "vocabulary_")
        return np.asarray(self.vocabulary_.words, dtype=object)


class LateFusionClassifier(BaseEstimator):
    """Weighted blend of two classifiers' confidence matrices.

    ``fit`` selects the weight on validation scores when ``weight`` is None.
    """

    def __init__(self, weight=None, grid_step=0.01):
        self.weight = weight
        self.grid_step = grid_step

    def fit(self, p_emb, p_txt, y):
        if self.weight is None:
            self.weight_, self.validation_accuracy_ = select_fusion_weight(
                p_emb, p_txt, y, self.grid_step, return_accuracy=True)
        else:
            if not 0.0 <= self.weight <= 1.0:
                raise ValidationError("weight must lie in [0, 1]")
            self.weight_ = float(self.weight)
            self.validation_accuracy_ = fusion_accuracy(p_emb, p_txt, as_label_sets(y), self.weight_)
        return self

    def predict_proba(self, p_emb, p_txt):
        check_is_fitted(self, "weight_")
        return self.weight_ * np.asarray(p_emb) + (1.0 - self.weight_) * np.asarray(p_txt)

    def predict(self, p_emb, p_txt):
        return decide(self.predict_proba(p_emb, p_txt))
