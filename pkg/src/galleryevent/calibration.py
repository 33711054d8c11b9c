"""Learning the segmentation threshold.

Training albums are concatenated in a random order, the full recognition
pipeline is run at every candidate threshold, and the threshold with the
best per-image accuracy wins. Accuracy is piecewise constant in the
threshold and only changes at observed consecutive distances, so a finite
candidate set (midpoints plus the extremes) is exhaustive.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._seeding import derive_seed
from .attention import AttentionModel, forward
from .data import FeatureStore, GalleryManifest
from .evaluation import segmentation_vectors
from .exceptions import ValidationError
from .linear import LinearModel, decide
from .segmentation import SegmentationConfig, boundaries_from_distances, consecutive_distances


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    accuracy: float
    permutation_seed: int
    candidates_evaluated: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValidationError("accuracy must lie in [0, 1]")

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        return cls(float(doc["threshold"]), float(doc["accuracy"]),
                   int(doc["permutation_seed"]), int(doc["candidates_evaluated"]))


@dataclass(frozen=True)
class PermutedGallery:
    album_order: list[int]
    photo_ids: list[str]
    labels: list[frozenset]
    locations: list


def permute_and_unfold(manifest: GalleryManifest, seed) -> PermutedGallery:
    """Concatenate albums in a seeded random order; photo order inside albums is kept."""
    order = np.random.default_rng(seed).permutation(len(manifest.albums)).tolist()
    ids, labels, locs = [], [], []
    for n in order:
        album = manifest.albums[n]
        for p in album.photos:
            ids.append(p.photo_id)
            labels.append(album.labels)
            locs.append(p.location)
    return PermutedGallery(order, ids, labels, locs)


def candidate_thresholds(consecutive_distances) -> list[float]:
    """Half the smallest distance, midpoints between distinct sorted
    distances, and the largest distance plus one.

    When the smallest distance is 0 no threshold lies below it, so the
    half-minimum candidate is dropped.
    """
    values = np.unique(np.asarray(consecutive_distances, dtype=np.float64))
    if values.size == 0:
        return [0.0]
    mids = (values[:-1] + values[1:]) / 2
    below = [float(values[0] / 2)] if values[0] > 0 else []
    return [*below, *map(float, mids), float(values[-1] + 1.0)]


class _GalleryScorer:
    """Per-image accuracy of one permuted gallery as a function of threshold.

    Album predictions are cached by span; thresholds only merge adjacent
    spans, so at most ``2T - 1`` distinct spans are ever classified.
    """

    def __init__(self, X, labels, distances, attention):
        self.X = X
        self.labels = labels
        self.distances = distances
        self.attention = attention
        self._correct = {}

    def _span_correct(self, s, e):
        key = (s, e)
        if key not in self._correct:
            c = decide(forward(self.attention, self.X[s:e]))
            self._correct[key] = sum(c in t for t in self.labels[s:e])
        return self._correct[key]

    def accuracy(self, threshold):
        spans = boundaries_from_distances(self.distances, threshold).spans()
        return sum(self._span_correct(s, e) for s, e in spans) / len(self.labels)


def calibrate(manifest: GalleryManifest, store: FeatureStore, classifier: LinearModel,
              attention: AttentionModel, config: SegmentationConfig = SegmentationConfig(),
              seed=0, repeats=1) -> CalibrationResult:
    """Pick the threshold maximising per-image training accuracy.

    ``config.threshold`` is ignored. With ``repeats > 1`` accuracies are
    averaged over several permutations (candidate sets pooled). Ties go to
    the smallest threshold.
    """
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    if classifier.dim != store.dim or attention.dim != store.dim:
        raise ValidationError(
            f"model dimensions (classifier {classifier.dim}, attention {attention.dim}) "
            f"do not match features ({store.dim})"
        )
    if classifier.num_classes != attention.num_classes:
        raise ValidationError("classifier and attention model disagree on the number of classes")
    store.check_covers(manifest)

    scorers, candidates = [], set()
    for r in range(repeats):
        gallery = permute_and_unfold(manifest, seed if r == 0 else derive_seed(seed, r))
        X = store.matrix(gallery.photo_ids)
        V = segmentation_vectors(X, classifier, config.space)
        d = consecutive_distances(V, config.metric, gallery.locations, config.location_weight)
        scorers.append(_GalleryScorer(X, gallery.labels, d, attention))
        candidates.update(candidate_thresholds(d))

    best_rho, best_acc = None, -1.0
    for rho in sorted(candidates):
        acc = float(np.mean([s.accuracy(rho) for s in scorers]))
        if acc > best_acc:
            best_rho, best_acc = rho, acc
    return CalibrationResult(best_rho, best_acc, int(seed), len(candidates))
