"""Album boundary detection over an ordered gallery.

A new album starts at photo ``t`` when the distance between the vectors of
photos ``t`` and ``t - 1`` (plus an optional weighted geographic term)
exceeds a threshold. Boundaries are reported as 1-based album *ends*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import check_matrix, check_vector
from .data import haversine_km, l2_normalize
from .exceptions import DomainError, ValidationError

EUCLIDEAN = "euclidean"
CHI_SQUARED = "chi_squared"
EMBEDDINGS = "embeddings"
SCORES = "scores"

_METRIC_ALIASES = {
    "euclidean": EUCLIDEAN, "l2": EUCLIDEAN,
    "chi_squared": CHI_SQUARED, "chi2": CHI_SQUARED, "chi-squared": CHI_SQUARED,
}


def metric_kind(name: str) -> str:
    try:
        return _METRIC_ALIASES[name.lower()]
    except KeyError:
        raise ValidationError(f"unknown metric {name!r}") from None


@dataclass(frozen=True)
class DistanceMetric:
    kind: str = EUCLIDEAN
    normalize_inputs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", metric_kind(self.kind))


@dataclass(frozen=True)
class SegmentationConfig:
    metric: DistanceMetric = DistanceMetric()
    space: str = SCORES
    threshold: float = 0.0
    location_weight: float = 0.0

    def __post_init__(self):
        if self.space not in (EMBEDDINGS, SCORES):
            raise ValidationError(f"space must be 'embeddings' or 'scores', got {self.space!r}")
        if math.isnan(self.threshold) or self.threshold < 0:
            raise ValidationError("threshold must be >= 0")
        if not (self.location_weight >= 0 and math.isfinite(self.location_weight)):
            raise ValidationError("location_weight must be a finite non-negative number")

    def with_threshold(self, threshold) -> SegmentationConfig:
        return SegmentationConfig(self.metric, self.space, float(threshold), self.location_weight)

    def to_dict(self):
        return {
            "metric": self.metric.kind,
            "normalize": self.metric.normalize_inputs,
            "space": self.space,
            "threshold": self.threshold,
            "location_weight": self.location_weight,
        }


@dataclass(frozen=True)
class Boundaries:
    ends: tuple[int, ...]

    def __post_init__(self):
        ends = tuple(int(e) for e in self.ends)
        if not ends or ends[0] < 1 or any(b <= a for a, b in zip(ends, ends[1:])):
            raise ValidationError("ends must be a non-empty strictly increasing list of 1-based indices")
        object.__setattr__(self, "ends", ends)

    @property
    def num_albums(self) -> int:
        return len(self.ends)

    def spans(self) -> list[tuple[int, int]]:
        """0-based half-open ``(start, stop)`` index pairs, one per album."""
        starts = (0,) + self.ends[:-1]
        return list(zip(starts, self.ends))

    def labels(self) -> np.ndarray:
        """Album index of every photo."""
        out = np.empty(self.ends[-1], dtype=int)
        for k, (s, e) in enumerate(self.spans()):
            out[s:e] = k
        return out

    def to_dict(self, config: SegmentationConfig | None = None):
        doc = {"ends": list(self.ends)}
        if config is not None:
            doc.update(space=config.space, metric=config.metric.kind, threshold=config.threshold)
        return doc

    @classmethod
    def from_labels(cls, labels) -> Boundaries:
        labels = np.asarray(labels)
        cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
        return cls(tuple(cuts.tolist()) + (len(labels),))


def _chi_squared(A, B):
    if np.any(A < 0) or np.any(B < 0):
        raise DomainError("chi-squared distance requires non-negative inputs")
    s = A + B
    diff2 = (A - B) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        terms = np.where(s > 0, diff2 / np.where(s > 0, s, 1.0), 0.0)
    return terms.sum(axis=-1)


def _rowwise_distance(A, B, metric: DistanceMetric):
    if metric.normalize_inputs:
        A, B = l2_normalize(A), l2_normalize(B)
    if metric.kind == EUCLIDEAN:
        return np.sqrt(np.sum((A - B) ** 2, axis=-1))
    return _chi_squared(A, B)


def pairwise_distance(a, b, metric: DistanceMetric = DistanceMetric()) -> float:
    """Distance between two vectors.

    Chi-squared is ``sum((a-b)^2 / (a+b))`` with zero-denominator terms skipped.
    """
    a = check_vector(a, name="a")
    b = check_vector(b, dim=a.shape[0], name="b")
    return float(_rowwise_distance(a, b, metric))


def geo_distances(locations):
    """Great-circle km between consecutive locations; 0 where either is missing."""
    out = np.zeros(max(len(locations) - 1, 0))
    for t in range(1, len(locations)):
        prev, cur = locations[t - 1], locations[t]
        if prev is not None and cur is not None:
            out[t - 1] = haversine_km(prev, cur)
    return out


def consecutive_distances(sequence, metric: DistanceMetric = DistanceMetric(),
                          locations=None, location_weight=0.0):
    """``d[t-1] = rho(v_t, v_{t-1}) + lambda * geo(loc_t, loc_{t-1})`` for t = 1..T-1."""
    V = check_matrix(sequence, name="sequence")
    d = _rowwise_distance(V[1:], V[:-1], metric)
    if locations is not None and location_weight > 0:
        if len(locations) != len(V):
            raise ValidationError(f"{len(locations)} locations for {len(V)} photos")
        d = d + location_weight * geo_distances(locations)
    return d


def boundaries_from_distances(distances, threshold) -> Boundaries:
    """Split wherever the consecutive distance strictly exceeds ``threshold``."""
    d = np.asarray(distances, dtype=np.float64)
    ends = (np.flatnonzero(d > threshold) + 1).tolist() + [len(d) + 1]
    return Boundaries(tuple(ends))


def detect_boundaries(sequence, locations=None, config: SegmentationConfig = SegmentationConfig()):
    """One sequential pass: the first photo opens album 1, and a new album is
    opened whenever the distance to the previous photo exceeds the threshold."""
    d = consecutive_distances(sequence, config.metric, locations, config.location_weight)
    return boundaries_from_distances(d, config.threshold)


def _condensed_distances(X, metric: DistanceMetric):
    n = len(X)
    i, j = np.triu_indices(n, k=1)
    return _rowwise_distance(X[i], X[j], metric)


def agglomerative_baseline(vectors, metric: DistanceMetric = DistanceMetric(), threshold=1.0):
    """Average-linkage clustering cut at ``threshold``.

    Clusters whose average inter-cluster distance is <= threshold are merged.
    Ids are 0-based in order of first appearance; clusters need not be
    contiguous in the sequence.
    """
    X = check_matrix(vectors, name="vectors")
    if len(X) == 1:
        return np.zeros(1, dtype=int)
    Z = linkage(_condensed_distances(X, metric), method="average")
    raw = fcluster(Z, t=threshold, criterion="distance")
    _, first = np.unique(raw, return_index=True)
    remap = {raw[i]: k for k, i in enumerate(sorted(first))}
    return np.array([remap[c] for c in raw], dtype=int)


class SequentialSegmenter(ClusterMixin, BaseEstimator):
    """Threshold-based sequential album detector.

    Parameters
    ----------
    threshold : float, default=0.0
        Consecutive distances strictly above this value start a new album.
    metric : {"euclidean", "chi_squared"}
    normalize : bool, default=False
        L2-normalise vectors before measuring distances.
    location_weight : float, default=0.0
        Weight of the great-circle (km) term; 0 disables it.

    Attributes
    ----------
    boundaries_ : Boundaries
    labels_ : ndarray of shape (n_photos,)
        Album index of every photo.
    """

    def __init__(self, threshold=0.0, metric=EUCLIDEAN, normalize=False, location_weight=0.0):
        self.threshold = threshold
        self.metric = metric
        self.normalize = normalize
        self.location_weight = location_weight

    def _config(self):
        return SegmentationConfig(DistanceMetric(self.metric, self.normalize), SCORES,
                                  float(self.threshold), float(self.location_weight))

    def fit(self, X, y=None, locations=None):
        X = check_matrix(X)
        self.boundaries_ = detect_boundaries(X, locations, self._config())
        self.labels_ = self.boundaries_.labels()
        self.n_features_in_ = X.shape[1]
        return self

    def fit_predict(self, X, y=None, locations=None):
        return self.fit(X, locations=locations).labels_
