"""Composite estimator: learn classifier, attention network and threshold
from labelled albums, then label every photo of an unsegmented gallery."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone

from ._validation import as_label_sets, check_is_fitted, check_matrix, check_sets
from .attention import AttentionPoolingClassifier
from .calibration import calibrate
from .data import AlbumRecord, FeatureStore, GalleryManifest, PhotoRecord, l2_normalize
from .evaluation import recognize_gallery, segmentation_vectors
from .exceptions import ValidationError
from .linear import LinearEventClassifier
from .segmentation import (EUCLIDEAN, SCORES, DistanceMetric, SegmentationConfig,
                           detect_boundaries)


class GalleryEventRecognizer(ClassifierMixin, BaseEstimator):
    """Event recognition for galleries with unknown album borders.

    Parameters
    ----------
    classifier : LinearEventClassifier or None
        Per-photo confidence classifier (unfitted template).
    attention : AttentionPoolingClassifier or None
        Album classifier (unfitted template).
    space : {"scores", "embeddings"}, default="scores"
        Vectors compared between consecutive photos.
    metric : {"euclidean", "chi_squared"}, default="euclidean"
    normalize : bool, default=False
        L2-normalise the compared vectors before measuring distances.
    location_weight : float, default=0.0
        Weight of the great-circle distance term (km).
    threshold : float or None
        Fixed segmentation threshold; learned from the training albums when None.
    calibration_seed : int, default=0
    calibration_repeats : int, default=1
    normalize_features : bool, default=False
        L2-normalise photo features before they reach any component.

    Attributes
    ----------
    classifier_, attention_ : fitted component estimators
    threshold_ : float
    calibration_ : CalibrationResult or None
    """

    def __init__(self, classifier=None, attention=None, space=SCORES, metric=EUCLIDEAN,
                 normalize=False, location_weight=0.0, threshold=None, calibration_seed=0,
                 calibration_repeats=1, normalize_features=False):
        self.classifier = classifier
        self.attention = attention
        self.space = space
        self.metric = metric
        self.normalize = normalize
        self.location_weight = location_weight
        self.threshold = threshold
        self.calibration_seed = calibration_seed
        self.calibration_repeats = calibration_repeats
        self.normalize_features = normalize_features

    def _segmentation(self, threshold=0.0):
        return SegmentationConfig(DistanceMetric(self.metric, self.normalize), self.space,
                                  float(threshold), float(self.location_weight))

    def _prep(self, X):
        return l2_normalize(X) if self.normalize_features else X

    def fit(self, X, y, album_locations=None):
        """Fit on labelled albums.

        ``X`` is a sequence of (m_i, D) arrays, ``y`` the album labels (ints or
        label sets), ``album_locations`` optional per-album lists of (lat, lon).
        """
        sets = check_sets(X)
        label_sets = as_label_sets(y)
        if len(label_sets) != len(sets):
            raise ValidationError(f"{len(sets)} albums but {len(label_sets)} labels")
        C = max(max(s) for s in label_sets) + 1
        for est in (self.classifier, self.attention):
            if est is not None and est.num_classes is not None:
                C = max(C, est.num_classes)
        albums, vectors = [], {}
        for n, (S, labels) in enumerate(zip(sets, label_sets)):
            locs = album_locations[n] if album_locations is not None else [None] * len(S)
            photos = []
            for i, row in enumerate(S):
                pid = f"{n}/{i}"
                vectors[pid] = row
                photos.append(PhotoRecord(pid, None if locs[i] is None else tuple(locs[i])))
            albums.append(AlbumRecord(str(n), labels, tuple(photos)))
        manifest = GalleryManifest(C, tuple(str(c) for c in range(C)), tuple(albums))
        return self.fit_manifest(manifest, FeatureStore(sets[0].shape[1], vectors))

    def fit_manifest(self, manifest: GalleryManifest, store: FeatureStore):
        store.check_covers(manifest)
        if self.normalize_features:
            store = FeatureStore.from_matrix(store.photo_ids, l2_normalize(store.matrix()))
        multi = manifest.is_multi_label
        clf = clone(self.classifier) if self.classifier is not None else LinearEventClassifier()
        clf.set_params(num_classes=manifest.num_classes, multi_label=multi)
        photo_sets = [a.labels for a in manifest.albums for _ in a.photos]
        clf.fit(store.matrix(manifest.photo_ids), photo_sets)

        att = clone(self.attention) if self.attention is not None else AttentionPoolingClassifier()
        att.set_params(num_classes=manifest.num_classes, multi_label=multi)
        att.fit([store.matrix(a.photo_ids) for a in manifest.albums],
                [a.labels for a in manifest.albums])

        self.classifier_, self.attention_ = clf, att
        self.calibration_ = None
        if self.threshold is None:
            self.calibration_ = calibrate(manifest, store, clf.model_, att.model_,
                                          self._segmentation(), self.calibration_seed,
                                          self.calibration_repeats)
            self.threshold_ = self.calibration_.threshold
        else:
            self.threshold_ = float(self.threshold)
        self.classes_ = np.arange(manifest.num_classes)
        self.n_features_in_ = store.dim
        return self

    def segment(self, X, locations=None):
        """Detected album boundaries of an ordered gallery."""
        check_is_fitted(self, "threshold_")
        X = self._prep(check_matrix(X, dim=self.n_features_in_))
        V = segmentation_vectors(X, self.classifier_.model_, self.space)
        return detect_boundaries(V, locations, self._segmentation(self.threshold_))

    def predict(self, X, locations=None):
        """Event class of every photo in an ordered gallery of shape (T, D)."""
        check_is_fitted(self, "threshold_")
        X = self._prep(check_matrix(X, dim=self.n_features_in_))
        return recognize_gallery(X, self.classifier_.model_, self.attention_.model_,
                                 self._segmentation(self.threshold_), locations)

    def predict_baseline(self, X):
        """Independent per-photo decisions of the confidence classifier."""
        check_is_fitted(self, "threshold_")
        return self.classifier_.predict(self._prep(check_matrix(X, dim=self.n_features_in_)))
