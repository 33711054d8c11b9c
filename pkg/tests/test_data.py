import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import write_features, write_manifest
from galleryevent import (FeatureStore, GalleryManifest, l2_normalize, load_caption_store,
                          load_feature_store, load_manifest, unfold)
from galleryevent.data import (AlbumRecord, PhotoRecord, haversine_km, manifest_from_dict,
                               split_albums, tokenize_caption)
from galleryevent.exceptions import FormatError, MissingFeatureError, ValidationError

TWO_ALBUMS = {
    "num_classes": 2,
    "class_names": ["wedding", "birthday"],
    "albums": [
        {"id": "x", "labels": [0], "photos": [{"id": "a"}, {"id": "b"}]},
        {"id": "y", "labels": [1], "photos": [{"id": "c"}, {"id": "d", "lat": 10.0, "lon": 20.0},
                                              {"id": "e"}]},
    ],
}


def test_manifest_counts(tmp_path):
    m = load_manifest(write_manifest(tmp_path / "m.json", TWO_ALBUMS))
    assert m.num_classes == 2
    assert m.num_photos == 5
    assert len(m.albums) == 2
    assert m.locations()["d"] == (10.0, 20.0)
    assert m.locations()["a"] is None


def test_manifest_duplicate_photo(tmp_path):
    doc = {**TWO_ALBUMS, "albums": [
        {"id": "x", "labels": [0], "photos": [{"id": "a"}]},
        {"id": "y", "labels": [1], "photos": [{"id": "a"}]},
    ]}
    with pytest.raises(ValidationError, match="'a'"):
        load_manifest(write_manifest(tmp_path / "m.json", doc))


def test_manifest_without_albums(tmp_path):
    with pytest.raises(ValidationError):
        load_manifest(write_manifest(tmp_path / "m.json", {**TWO_ALBUMS, "albums": []}))


def test_manifest_label_out_of_range(tmp_path):
    doc = {**TWO_ALBUMS, "albums": [{"id": "x", "labels": [2], "photos": [{"id": "a"}]}]}
    with pytest.raises(ValidationError):
        load_manifest(write_manifest(tmp_path / "m.json", doc))


def test_manifest_parse_error_reports_line(tmp_path):
    path = tmp_path / "m.json"
    path.write_text('{\n  "num_classes": 2,\n  oops\n}')
    with pytest.raises(FormatError) as info:
        load_manifest(path)
    assert info.value.line == 3


def test_manifest_missing_field():
    with pytest.raises(FormatError, match="albums"):
        manifest_from_dict({"num_classes": 2, "class_names": ["a", "b"]})


def test_manifest_round_trip(tmp_path):
    m = manifest_from_dict(TWO_ALBUMS)
    m.save(tmp_path / "out.json")
    assert load_manifest(tmp_path / "out.json") == m


def test_location_out_of_range():
    with pytest.raises(ValidationError):
        PhotoRecord("p", (91.0, 0.0))


def test_feature_store_dimension(tmp_path, rng):
    m = manifest_from_dict(TWO_ALBUMS)
    rows = [(pid, rng.normal(size=16)) for pid in "abcde"]
    store = load_feature_store(write_features(tmp_path / "f.csv", rows, 16), m)
    assert store.dim == 16
    np.testing.assert_array_equal(store.matrix(["c"])[0], rows[2][1])


def test_feature_store_missing_photo(tmp_path, rng):
    m = manifest_from_dict(TWO_ALBUMS)
    rows = [(pid, rng.normal(size=4)) for pid in "abcd"]
    with pytest.raises(MissingFeatureError) as info:
        load_feature_store(write_features(tmp_path / "f.csv", rows, 4), m)
    assert info.value.photo_id == "e"
    assert "'e'" in str(info.value)


def test_feature_store_ragged_row(tmp_path):
    path = tmp_path / "f.csv"
    header = "photo_id," + ",".join(f"f{i}" for i in range(16))
    path.write_text(header + "\na," + ",".join(["0.5"] * 15) + "\n")
    with pytest.raises(FormatError) as info:
        load_feature_store(path)
    assert info.value.line == 2


@pytest.mark.parametrize("bad", ["nan", "inf"])
def test_feature_store_non_finite(tmp_path, bad):
    path = tmp_path / "f.csv"
    path.write_text(f"photo_id,f0,f1\na,1.0,{bad}\n")
    with pytest.raises(ValidationError):
        load_feature_store(path)


def test_feature_store_save_round_trip(tmp_path, rng):
    store = FeatureStore.from_matrix(["p", "q"], rng.normal(size=(2, 3)))
    store.save(tmp_path / "f.csv")
    again = load_feature_store(tmp_path / "f.csv")
    np.testing.assert_array_equal(again.matrix(), store.matrix())


def test_caption_ingestion(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("a\t<START> A Cake  and Candles <END>\nb\t<start> <end>\n")
    captions = load_caption_store(path)
    assert captions["a"] == ("a", "cake", "and", "candles")
    assert captions["b"] == ()


def test_caption_line_without_tab(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("a cake\n")
    with pytest.raises(FormatError):
        load_caption_store(path)


def test_tokenize_lowercases():
    assert tokenize_caption("Bride  GROOM") == ("bride", "groom")


def _store_for(manifest, dim=2):
    ids = manifest.photo_ids
    return FeatureStore.from_matrix(ids, np.arange(len(ids) * dim, dtype=float).reshape(-1, dim))


def test_unfold_labels_and_order():
    m = manifest_from_dict(TWO_ALBUMS)
    data = unfold(m, _store_for(m))
    assert data.labels == [frozenset({0})] * 2 + [frozenset({1})] * 3
    assert data.source_album.tolist() == [0, 0, 1, 1, 1]
    np.testing.assert_array_equal(data.features[:, 0], [0, 2, 4, 6, 8])


def test_unfold_single_photo():
    m = GalleryManifest(2, ("a", "b"), (AlbumRecord("x", frozenset({1}), (PhotoRecord("p"),)),))
    assert len(unfold(m, _store_for(m))) == 1


def test_unfold_multi_label():
    m = GalleryManifest(6, tuple("abcdef"), (
        AlbumRecord("x", frozenset({2, 5}), (PhotoRecord("p"), PhotoRecord("q"))),))
    assert unfold(m, _store_for(m)).labels == [frozenset({2, 5})] * 2
    assert m.is_multi_label


@given(st.lists(st.integers(1, 5), min_size=1, max_size=6))
def test_unfold_reconstructs_album_spans(sizes):
    albums, k = [], 0
    for n, size in enumerate(sizes):
        albums.append(AlbumRecord(f"al{n}", frozenset({n % 2}),
                                  tuple(PhotoRecord(f"p{k + i}") for i in range(size))))
        k += size
    m = GalleryManifest(2, ("a", "b"), tuple(albums))
    data = unfold(m, _store_for(m))
    assert len(data) == sum(sizes)
    rebuilt = [int(np.sum(data.source_album == n)) for n in range(len(sizes))]
    assert rebuilt == sizes


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(l2_normalize([0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_array_equal(l2_normalize([0.0, 1.0]), [0.0, 1.0])


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.floats(1e-3, 1e3))
def test_l2_normalize_idempotent_and_scale_invariant(v, alpha):
    once = l2_normalize(v)
    np.testing.assert_allclose(l2_normalize(once), once, atol=1e-12)
    if np.linalg.norm(v) > 1e-6:
        np.testing.assert_allclose(l2_normalize(alpha * v), once, atol=1e-12)


def test_split_albums_partitions():
    m = manifest_from_dict(TWO_ALBUMS)
    train, test = split_albums(m, 0.5, seed=3)
    assert sorted(train.photo_ids + test.photo_ids) == sorted(m.photo_ids)


def test_haversine_quarter_meridian():
    # pole to equator along a meridian
    assert haversine_km((0.0, 0.0), (90.0, 0.0)) == pytest.approx(6371.0088 * np.pi / 2)
