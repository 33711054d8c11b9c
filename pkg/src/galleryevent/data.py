"""Domain types and dataset ingestion.

File formats
------------
Manifest (JSON)::

    {"num_classes": 3, "class_names": ["a", "b", "c"],
     "albums": [{"id": "al0", "labels": [1],
                 "photos": [{"id": "p0", "lat": 59.9, "lon": 30.3}, {"id": "p1"}]}]}

Features (CSV): header ``photo_id,f0,...,f{D-1}``, one row per photo.

Captions (TSV): ``photo_id<TAB>caption text``. Tokens are lowercased and
whitespace-split; ``<start>``/``<end>`` sentinels are dropped.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError, MissingFeatureError, ValidationError

SENTINEL_TOKENS = frozenset({"<start>", "<end>"})


@dataclass(frozen=True)
class PhotoRecord:
    photo_id: str
    location: tuple[float, float] | None = None

    def __post_init__(self):
        if not isinstance(self.photo_id, str) or not self.photo_id:
            raise ValidationError("photo_id must be a non-empty string")
        if self.location is not None:
            lat, lon = self.location
            if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
                raise ValidationError(
                    f"photo {self.photo_id!r}: location {self.location} out of range"
                )


@dataclass(frozen=True)
class AlbumRecord:
    album_id: str
    labels: frozenset[int]
    photos: tuple[PhotoRecord, ...]

    def __post_init__(self):
        if not self.photos:
            raise ValidationError(f"album {self.album_id!r} has no photos")
        if not self.labels:
            raise ValidationError(f"album {self.album_id!r} has no labels")
        if min(self.labels) < 0:
            raise ValidationError(f"album {self.album_id!r} has a negative label")

    @property
    def photo_ids(self) -> list[str]:
        return [p.photo_id for p in self.photos]

    def __len__(self):
        return len(self.photos)


@dataclass(frozen=True)
class GalleryManifest:
    num_classes: int
    class_names: tuple[str, ...]
    albums: tuple[AlbumRecord, ...]

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.class_names) != self.num_classes:
            raise ValidationError(
                f"class_names has {len(self.class_names)} entries, expected {self.num_classes}"
            )
        if not self.albums:
            raise ValidationError("manifest contains no albums")
        seen = set()
        for album in self.albums:
            if max(album.labels) >= self.num_classes:
                raise ValidationError(
                    f"album {album.album_id!r}: label {max(album.labels)} >= num_classes"
                )
            for pid in album.photo_ids:
                if pid in seen:
                    raise ValidationError(f"photo {pid!r} appears more than once")
                seen.add(pid)

    @property
    def num_photos(self) -> int:
        return sum(len(a) for a in self.albums)

    @property
    def photo_ids(self) -> list[str]:
        return [pid for a in self.albums for pid in a.photo_ids]

    @property
    def is_multi_label(self) -> bool:
        return any(len(a.labels) > 1 for a in self.albums)

    def locations(self) -> dict[str, tuple[float, float] | None]:
        return {p.photo_id: p.location for a in self.albums for p in a.photos}

    def with_albums(self, albums) -> GalleryManifest:
        return GalleryManifest(self.num_classes, self.class_names, tuple(albums))

    def to_dict(self) -> dict:
        albums = []
        for a in self.albums:
            photos = []
            for p in a.photos:
                entry = {"id": p.photo_id}
                if p.location is not None:
                    entry["lat"], entry["lon"] = p.location
                photos.append(entry)
            albums.append({"id": a.album_id, "labels": sorted(a.labels), "photos": photos})
        return {
            "num_classes": self.num_classes,
            "class_names": list(self.class_names),
            "albums": albums,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class FeatureStore:
    dim: int
    vectors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("feature dimension must be positive")
        for pid, v in self.vectors.items():
            if v.shape != (self.dim,):
                raise ValidationError(f"feature {pid!r} has shape {v.shape}, expected ({self.dim},)")
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"feature {pid!r} contains NaN or infinite values")
            v.setflags(write=False)

    @property
    def photo_ids(self) -> list[str]:
        return list(self.vectors)

    def __contains__(self, photo_id):
        return photo_id in self.vectors

    def __len__(self):
        return len(self.vectors)

    def matrix(self, photo_ids=None) -> np.ndarray:
        """Stack vectors into an (n, D) array, in ``photo_ids`` order."""
        if photo_ids is None:
            photo_ids = self.photo_ids
        missing = [pid for pid in photo_ids if pid not in self.vectors]
        if missing:
            raise MissingFeatureError(missing[0])
        if not photo_ids:
            return np.empty((0, self.dim))
        return np.stack([self.vectors[pid] for pid in photo_ids])

    def check_covers(self, manifest: GalleryManifest):
        for pid in manifest.photo_ids:
            if pid not in self.vectors:
                raise MissingFeatureError(pid)

    def save(self, path, photo_ids=None):
        ids = self.photo_ids if photo_ids is None else list(photo_ids)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["photo_id"] + [f"f{i}" for i in range(self.dim)])
            for pid in ids:
                writer.writerow([pid] + [repr(float(x)) for x in self.vectors[pid]])

    @classmethod
    def from_matrix(cls, photo_ids, X) -> FeatureStore:
        X = np.asarray(X, dtype=np.float64)
        return cls(X.shape[1], {pid: X[i].copy() for i, pid in enumerate(photo_ids)})


@dataclass(frozen=True)
class CaptionStore:
    captions: dict[str, tuple[str, ...]]

    def __post_init__(self):
        for pid, toks in self.captions.items():
            if any(t in SENTINEL_TOKENS for t in toks):
                raise ValidationError(f"caption for {pid!r} still contains sentinel tokens")

    def __getitem__(self, photo_id):
        return self.captions[photo_id]

    def __contains__(self, photo_id):
        return photo_id in self.captions

    def get(self, photo_id, default=()):
        return self.captions.get(photo_id, default)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for pid, toks in self.captions.items():
                fh.write(f"{pid}\t{' '.join(toks)}\n")


@dataclass(frozen=True)
class LabeledFeatureSet:
    features: np.ndarray
    labels: list[frozenset]
    source_album: np.ndarray

    def __post_init__(self):
        if not (len(self.features) == len(self.labels) == len(self.source_album)):
            raise ValidationError("features, labels and source_album must be parallel")

    def __len__(self):
        return len(self.labels)


def tokenize_caption(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.lower().split() if t not in SENTINEL_TOKENS)


def _parse_photo(entry, path, album_idx, photo_idx) -> PhotoRecord:
    where = f"albums[{album_idx}].photos[{photo_idx}]"
    if isinstance(entry, str):
        return PhotoRecord(entry)
    if not isinstance(entry, dict) or "id" not in entry:
        raise FormatError("photo entry needs an 'id'", path=path, field=where)
    lat, lon = entry.get("lat"), entry.get("lon")
    if (lat is None) != (lon is None):
        raise FormatError("lat and lon must be given together", path=path, field=where)
    location = None if lat is None else (float(lat), float(lon))
    return PhotoRecord(str(entry["id"]), location)


def manifest_from_dict(doc, path=None) -> GalleryManifest:
    if not isinstance(doc, dict):
        raise FormatError("top level must be an object", path=path)
    for key in ("num_classes", "class_names", "albums"):
        if key not in doc:
            raise FormatError("required field missing", path=path, field=key)
    num_classes = doc["num_classes"]
    if not isinstance(num_classes, int) or isinstance(num_classes, bool):
        raise FormatError("must be an integer", path=path, field="num_classes")
    if not isinstance(doc["albums"], list):
        raise FormatError("must be an array", path=path, field="albums")
    albums = []
    for i, a in enumerate(doc["albums"]):
        if not isinstance(a, dict):
            raise FormatError("album must be an object", path=path, field=f"albums[{i}]")
        for key in ("id", "labels", "photos"):
            if key not in a:
                raise FormatError("required field missing", path=path, field=f"albums[{i}].{key}")
        try:
            labels = frozenset(int(c) for c in a["labels"])
        except (TypeError, ValueError) as exc:
            raise FormatError(str(exc), path=path, field=f"albums[{i}].labels") from exc
        photos = tuple(_parse_photo(p, path, i, j) for j, p in enumerate(a["photos"]))
        albums.append(AlbumRecord(str(a["id"]), labels, photos))
    return GalleryManifest(num_classes, tuple(str(n) for n in doc["class_names"]), tuple(albums))


def load_manifest(path) -> GalleryManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, path=path, line=exc.lineno) from exc
    return manifest_from_dict(doc, path)


def load_feature_store(path, manifest: GalleryManifest | None = None) -> FeatureStore:
    """Read a feature CSV. Row order is preserved; it defines gallery order."""
    path = Path(path)
    vectors = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "photo_id":
            raise FormatError("header must start with 'photo_id'", path=path, line=1)
        dim = len(header) - 1
        if dim < 1 or header[1:] != [f"f{i}" for i in range(dim)]:
            raise FormatError("header columns must be f0..f{D-1}", path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise FormatError(
                    f"expected {dim} values, got {len(row) - 1}", path=path, line=lineno
                )
            pid = row[0]
            if pid in vectors:
                raise ValidationError(f"{path}, line {lineno}: duplicate photo {pid!r}")
            try:
                v = np.array([float(x) for x in row[1:]])
            except ValueError as exc:
                raise FormatError(str(exc), path=path, line=lineno) from exc
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"{path}, line {lineno}: non-finite value for {pid!r}")
            vectors[pid] = v
    store = FeatureStore(dim, vectors)
    if manifest is not None:
        store.check_covers(manifest)
    return store


def load_caption_store(path) -> CaptionStore:
    path = Path(path)
    captions = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise FormatError("expected photo_id<TAB>caption", path=path, line=lineno)
            pid, text = line.split("\t", 1)
            if not pid:
                raise FormatError("empty photo_id", path=path, line=lineno)
            captions[pid] = tokenize_caption(text)
    return CaptionStore(captions)


def unfold(manifest: GalleryManifest, store: FeatureStore) -> LabeledFeatureSet:
    """Flatten albums into a per-photo training set carrying album labels."""
    store.check_covers(manifest)
    labels, source = [], []
    for n, album in enumerate(manifest.albums):
        labels.extend([album.labels] * len(album))
        source.extend([n] * len(album))
    return LabeledFeatureSet(store.matrix(manifest.photo_ids), labels, np.asarray(source, dtype=int))


def l2_normalize(v, eps=1e-12):
    """Scale rows (or a single vector) to unit Euclidean norm.

    Rows with norm <= ``eps`` are returned unchanged.
    """
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(norms > eps, norms, 1.0)
    return v / safe


def split_albums(manifest: GalleryManifest, test_fraction: float, seed: int):
    """Random album-level train/test split. Returns ``(train, test)`` manifests."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError("test_fraction must lie in (0, 1)")
    n = len(manifest.albums)
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise ValidationError(f"cannot split {n} albums with test_fraction={test_fraction}")
    order = np.random.default_rng(seed).permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = [a for i, a in enumerate(manifest.albums) if i not in test_idx]
    test = [a for i, a in enumerate(manifest.albums) if i in test_idx]
    return manifest.with_albums(train), manifest.with_albums(test)


def haversine_km(a, b) -> float:
    """Great-circle distance between two (lat, lon) pairs in kilometres."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * 6371.0088 * math.asin(min(1.0, math.sqrt(h)))
