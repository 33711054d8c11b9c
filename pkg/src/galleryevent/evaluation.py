"""End-to-end gallery recognition, accuracy metrics, the shuffled evaluation
protocol and a synthetic dataset generator."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._seeding import config_digest, derive_seed, rng_for
from ._validation import check_matrix
from .attention import AttentionModel, forward
from .data import (AlbumRecord, CaptionStore, FeatureStore, GalleryManifest, PhotoRecord,
                   l2_normalize)
from .exceptions import ValidationError
from .linear import LinearModel, decide, predict_scores
from .segmentation import (SCORES, Boundaries, SegmentationConfig, boundaries_from_distances,
                           consecutive_distances)


def segmentation_vectors(X, classifier: LinearModel, space):
    """Vectors compared by the segmenter: classifier scores or raw embeddings."""
    return predict_scores(classifier, X) if space == SCORES else X


def classify_spans(X, boundaries: Boundaries, attention: AttentionModel):
    labels = np.empty(len(X), dtype=int)
    for s, e in boundaries.spans():
        labels[s:e] = decide(forward(attention, X[s:e]))
    return labels


def recognize_gallery(photos, classifier: LinearModel, attention: AttentionModel,
                      seg: SegmentationConfig, locations=None, return_boundaries=False):
    """Label every photo of an ordered gallery.

    Scores each photo, detects album boundaries in the configured space,
    classifies every detected album with the attention network and
    broadcasts the album decision to its photos.
    """
    X = check_matrix(photos, dim=classifier.dim, name="photos")
    if attention.dim != X.shape[1]:
        raise ValidationError(f"attention model expects {attention.dim} features, got {X.shape[1]}")
    V = segmentation_vectors(X, classifier, seg.space)
    d = consecutive_distances(V, seg.metric, locations, seg.location_weight)
    boundaries = boundaries_from_distances(d, seg.threshold)
    labels = classify_spans(X, boundaries, attention)
    return (labels, boundaries) if return_boundaries else labels


def baseline_predictions(photos, classifier: LinearModel):
    """Independent per-photo decisions."""
    return decide(predict_scores(classifier, check_matrix(photos, dim=classifier.dim)))


def per_image_accuracy(predicted, truth) -> float:
    """Fraction of photos whose predicted class is in their label set."""
    predicted = list(predicted)
    truth = list(truth)
    if len(predicted) != len(truth):
        raise ValidationError(f"{len(predicted)} predictions for {len(truth)} ground-truth entries")
    if not predicted:
        raise ValidationError("empty prediction list")
    hits = sum(int(p) in t for p, t in zip(predicted, truth))
    return hits / len(predicted)


@dataclass(frozen=True)
class ShuffledGallery:
    photo_ids: list[str]
    labels: list[frozenset]
    locations: list
    album_spans: list[tuple[int, int]]


def shuffled_gallery(manifest: GalleryManifest, seed, shuffle_photos=True) -> ShuffledGallery:
    """Albums in random order, optionally with photos shuffled inside each album."""
    rng = np.random.default_rng(seed)
    ids, labels, locs, spans = [], [], [], []
    for n in rng.permutation(len(manifest.albums)):
        album = manifest.albums[n]
        photos = list(album.photos)
        if shuffle_photos:
            photos = [photos[i] for i in rng.permutation(len(photos))]
        start = len(ids)
        for p in photos:
            ids.append(p.photo_id)
            labels.append(album.labels)
            locs.append(p.location)
        spans.append((start, len(ids)))
    return ShuffledGallery(ids, labels, locs, spans)


@dataclass(frozen=True)
class EvalReport:
    mean_accuracy: float
    std_accuracy: float
    repeats: int
    per_repeat: list[float]
    config_digest: str
    std_kind: str = "population"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.per_repeat) != self.repeats:
            raise ValidationError("per_repeat length must equal repeats")

    @classmethod
    def from_accuracies(cls, accuracies, digest, extra=None):
        acc = np.asarray(accuracies, dtype=np.float64)
        return cls(float(acc.mean()), float(acc.std()), len(acc), acc.tolist(), digest,
                   extra=dict(extra or {}))

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def format_report(report: EvalReport) -> str:
    return (f"{100 * report.mean_accuracy:.2f} ± {100 * report.std_accuracy:.2f} "
            f"(repeats={report.repeats})")


def _model_digest(*models):
    return config_digest([m.to_dict() for m in models])


def run_shuffled_eval(manifest: GalleryManifest, store: FeatureStore, classifier: LinearModel,
                      attention: AttentionModel, seg: SegmentationConfig, repeats=10, seed=0,
                      method="pipeline"):
    """Repeat: shuffle album order and photo order inside albums, recognise
    the gallery, score per-image accuracy. Reports mean and population std.

    ``method`` is "pipeline" (sequential detection + attention) or
    "baseline" (independent per-photo decisions).
    """
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    if method not in ("pipeline", "baseline"):
        raise ValidationError(f"unknown method {method!r}")
    store.check_covers(manifest)
    accs = []
    for r in range(repeats):
        g = shuffled_gallery(manifest, derive_seed(seed, r))
        X = store.matrix(g.photo_ids)
        if method == "pipeline":
            pred = recognize_gallery(X, classifier, attention, seg, g.locations)
        else:
            pred = baseline_predictions(X, classifier)
        accs.append(per_image_accuracy(pred, g.labels))
    digest = config_digest({
        "segmentation": seg.to_dict(), "repeats": repeats, "seed": seed, "method": method,
        "std": "population", "models": _model_digest(classifier, attention),
    })
    return EvalReport.from_accuracies(accs, digest)


@dataclass(frozen=True)
class SyntheticConfig:
    num_classes: int = 5
    dim: int = 16
    albums_per_class: int = 8
    album_size_range: tuple[int, int] = (8, 15)
    class_separation: float = 1.0
    noise_scale: float = 0.1
    irrelevant_fraction: float = 0.0
    seed: int = 0
    with_locations: bool = False

    def __post_init__(self):
        lo, hi = self.album_size_range
        if not (1 <= lo <= hi):
            raise ValidationError("album_size_range must satisfy 1 <= min <= max")
        if self.class_separation <= 0:
            raise ValidationError("class_separation must be positive")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be non-negative")
        if not 0.0 <= self.irrelevant_fraction < 1.0:
            raise ValidationError("irrelevant_fraction must lie in [0, 1)")
        if self.num_classes < 2 or self.albums_per_class < 1:
            raise ValidationError("need num_classes >= 2 and albums_per_class >= 1")
        if self.num_classes + 1 > self.dim:
            raise ValidationError(
                f"dim={self.dim} cannot hold {self.num_classes} class directions plus a shared one"
            )

    def to_dict(self):
        doc = asdict(self)
        doc["album_size_range"] = list(self.album_size_range)
        return doc


def class_means(config: SyntheticConfig):
    """Unit-norm class mean directions.

    ``mean_c = normalize(separation * e_c + u)`` for orthonormal ``e_c`` and a
    shared direction ``u``, so the pairwise cosine is ``1 / (1 + separation^2)``.
    """
    rng = rng_for(config.seed, "means")
    Q, _ = np.linalg.qr(rng.standard_normal((config.dim, config.num_classes + 1)))
    shared = Q[:, config.num_classes]
    means = config.class_separation * Q[:, :config.num_classes].T + shared
    return l2_normalize(means)


def generate_synthetic(config: SyntheticConfig):
    """Albums of noisy photos around per-class means. Returns (manifest, store).

    Irrelevant photos are drawn around the mean of a uniformly chosen class,
    i.e. from the equal-weight mixture, but keep their album's label.
    """
    means = class_means(config)
    rng = rng_for(config.seed, "photos")
    C, D = config.num_classes, config.dim
    classes = np.repeat(np.arange(C), config.albums_per_class)
    classes = classes[rng.permutation(len(classes))]
    lo, hi = config.album_size_range
    albums, vectors = [], {}
    for n, c in enumerate(classes):
        size = int(rng.integers(lo, hi + 1))
        geo_center = (rng.uniform(-60, 60), rng.uniform(-180, 180)) if config.with_locations else None
        photos = []
        for i in range(size):
            pid = f"album{n:04d}_{i:03d}"
            center = means[c]
            if config.irrelevant_fraction > 0 and rng.random() < config.irrelevant_fraction:
                center = means[int(rng.integers(C))]
            vectors[pid] = center + config.noise_scale * rng.standard_normal(D)
            loc = None
            if geo_center is not None:
                loc = (float(np.clip(geo_center[0] + rng.normal(0, 0.01), -90, 90)),
                       float(np.clip(geo_center[1] + rng.normal(0, 0.01), -180, 180)))
            photos.append(PhotoRecord(pid, loc))
        albums.append(AlbumRecord(f"album{n:04d}", frozenset([int(c)]), tuple(photos)))
    manifest = GalleryManifest(C, tuple(f"event{c}" for c in range(C)), tuple(albums))
    return manifest, FeatureStore(D, vectors)


def synthetic_captions(manifest: GalleryManifest, seed=0, caption_length=6, signal_prob=0.4,
                       words_per_class=4, common_words=30) -> CaptionStore:
    """Captions mixing class-specific keywords with shared filler words."""
    rng = rng_for(seed, "captions")
    common = [f"common{j}" for j in range(common_words)]
    captions = {}
    for album in manifest.albums:
        c = min(album.labels)
        keywords = [f"event{c}word{j}" for j in range(words_per_class)]
        for pid in album.photo_ids:
            toks = [keywords[rng.integers(words_per_class)] if rng.random() < signal_prob
                    else common[rng.integers(common_words)] for _ in range(caption_length)]
            captions[pid] = tuple(toks)
    return CaptionStore(captions)
