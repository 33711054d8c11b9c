import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from galleryevent import (CaptionVectorizer, LateFusionClassifier, SparseCaptionVector,
                          TrainConfig, Vocabulary, build_vocabulary, decide, encode_one_hot, fuse,
                          predict_scores, select_fusion_weight, train_text_classifier)
from galleryevent.captions import load_encoded, save_encoded, to_csr, weight_grid
from galleryevent.data import CaptionStore, tokenize_caption
from galleryevent.exceptions import TrainingError, ValidationError
from galleryevent.linear import _fit
from galleryevent._validation import as_label_sets


def _store(texts):
    return CaptionStore({f"p{i}": tokenize_caption(t) for i, t in enumerate(texts)})


def _ranked_by_hand(texts, stop=()):
    counts = {}
    for t in texts:
        for w in t.split():
            if w not in stop:
                counts[w] = counts.get(w, 0) + 1
    best = max(counts.values())
    ranked = []
    for c in range(best, 0, -1):
        ranked += sorted(w for w, n in counts.items() if n == c)
    return ranked


def test_vocabulary_example():
    texts = ["a b b", "b c"]
    vocab = build_vocabulary(_store(texts), ["p0", "p1"], max_size=2)
    assert list(vocab.words) == _ranked_by_hand(texts)[:2] == ["b", "a"]


def test_vocabulary_larger_than_distinct_words():
    vocab = build_vocabulary(_store(["a b b", "b c"]), ["p0", "p1"], max_size=100)
    assert sorted(vocab.words) == ["a", "b", "c"]


def test_vocabulary_stopwords():
    vocab = build_vocabulary(_store(["a b b", "b c"]), ["p0", "p1"], max_size=2, stopwords={"b"})
    assert list(vocab.words) == ["a", "c"]
    assert vocab.stopwords_applied


def test_vocabulary_without_training_words():
    with pytest.raises(TrainingError):
        build_vocabulary(_store(["<start> <end>"]), ["p0"])
    with pytest.raises(ValidationError):
        build_vocabulary(_store(["a"]), ["p0"], max_size=0)


def test_vocabulary_ignores_non_training_captions():
    train_only = build_vocabulary(_store(["x y y", "z"]), ["p0", "p1"], max_size=10)
    with_test = build_vocabulary(_store(["x y y", "z", "q q q q"]), ["p0", "p1"], max_size=10)
    assert train_only == with_test


def test_vocabulary_file_round_trip(tmp_path):
    vocab = Vocabulary(("b", "a", "c"))
    vocab.save(tmp_path / "v.txt")
    assert (tmp_path / "v.txt").read_text() == "b\na\nc\n"
    assert Vocabulary.load(tmp_path / "v.txt") == vocab


def test_vocabulary_rejects_sentinels():
    with pytest.raises(ValidationError):
        Vocabulary(("a", "<start>"))


VOCAB = Vocabulary(tuple(f"w{i}" for i in range(12)))


def test_one_hot_index_sequence():
    assert encode_one_hot([1, 5, 10, 2], VOCAB).active_indices == (1, 2, 5, 10)


def test_one_hot_words():
    vec = encode_one_hot(["w3", "w3", "zzz", "w0"], VOCAB)
    assert vec.active_indices == (0, 3)
    assert vec.to_dense().tolist() == [1.0, 0, 0, 1.0] + [0.0] * 8


def test_one_hot_out_of_vocabulary():
    assert encode_one_hot(["nope", "never"], VOCAB).active_indices == ()


def test_one_hot_index_out_of_range():
    with pytest.raises(ValidationError):
        encode_one_hot([12], VOCAB)


@given(st.lists(st.sampled_from([*VOCAB.words, "oov"]), max_size=10), st.randoms())
def test_one_hot_bag_of_words(tokens, random):
    shuffled = tokens * 2
    random.shuffle(shuffled)
    assert encode_one_hot(shuffled, VOCAB) == encode_one_hot(tokens, VOCAB)


def test_encoded_file_round_trip(tmp_path):
    vecs = [SparseCaptionVector((3, 1), 5), SparseCaptionVector((), 5)]
    save_encoded(tmp_path / "e.jsonl", ["a", "b"], vecs)
    assert (tmp_path / "e.jsonl").read_text().splitlines()[0] == '{"photo_id": "a", "active": [1, 3]}'
    assert load_encoded(tmp_path / "e.jsonl", 5) == (["a", "b"], vecs)


def test_text_classifier_disjoint_keywords():
    vocab = Vocabulary(("sun", "snow", "the"))
    caps = [["sun", "the"], ["snow"], ["sun"], ["the", "snow"]] * 3
    labels = [0, 1, 0, 1] * 3
    encoded = [encode_one_hot(c, vocab) for c in caps]
    # a single-feature rule separates the data
    assert all((v.to_dense()[0] == 1) == (y == 0) for v, y in zip(encoded, labels))
    model = train_text_classifier(encoded, labels)
    assert decide(predict_scores(model, to_csr(encoded))).tolist() == labels


def test_text_classifier_empty_captions_learn_priors():
    encoded = [SparseCaptionVector((), 4)] * 10
    labels = [0] * 7 + [1] * 3
    model = train_text_classifier(encoded, labels, TrainConfig(max_epochs=500))
    p = predict_scores(model, to_csr(encoded))
    np.testing.assert_allclose(p[0], [0.7, 0.3], atol=1e-2)
    assert np.mean(decide(p) == np.array(labels)) == 0.7


def test_sparse_and_dense_training_agree(rng):
    dense = (rng.random((30, 8)) < 0.3).astype(float)
    labels = as_label_sets(rng.integers(3, size=30))
    encoded = [SparseCaptionVector(tuple(np.flatnonzero(r)), 8) for r in dense]
    a, _ = _fit(to_csr(encoded), labels, 3, TrainConfig())
    b, _ = _fit(dense, labels, 3, TrainConfig())
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-10)
    np.testing.assert_allclose(a.bias, b.bias, atol=1e-10)


def test_text_classifier_deterministic(rng):
    encoded = [SparseCaptionVector(tuple(rng.choice(6, 2)), 6) for _ in range(20)]
    labels = rng.integers(2, size=20)
    a = train_text_classifier(encoded, labels, TrainConfig(seed=1))
    b = train_text_classifier(encoded, labels, TrainConfig(seed=1))
    assert a.weights.tobytes() == b.weights.tobytes()


def test_fuse_examples(rng):
    p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
    np.testing.assert_array_equal(fuse(p, q, 1.0), p)
    np.testing.assert_array_equal(fuse(p, q, 0.0), q)
    np.testing.assert_allclose(fuse([0.8, 0.2], [0.2, 0.8], 0.5), [0.5, 0.5])


def test_fuse_errors():
    with pytest.raises(ValidationError):
        fuse([0.5, 0.5], [1.0], 0.5)
    with pytest.raises(ValidationError):
        fuse([0.5, 0.5], [0.5, 0.5], 1.5)


def test_weight_grid():
    grid = weight_grid(0.01)
    assert len(grid) == 101 and grid[0] == 0.0 and grid[-1] == 1.0
    assert weight_grid(0.3) == [0.0, 0.3, 0.6, pytest.approx(0.9), 1.0]


def test_select_weight_dominant_embeddings():
    p_emb = [[0.9, 0.1], [0.2, 0.8]]
    p_txt = [[0.1, 0.9], [0.8, 0.2]]
    assert select_fusion_weight(p_emb, p_txt, [0, 1]) == 1.0


def test_select_weight_identical_inputs():
    p = [[0.3, 0.7], [0.6, 0.4]]
    assert select_fusion_weight(p, p, [0, 0]) == 1.0


def _brute_force_weights(p_emb, p_txt, labels, step):
    best, best_w = -1, None
    for k in range(int(round(1 / step)) + 1):
        w = min(k * step, 1.0)
        hits = 0
        for e, t, y in zip(p_emb, p_txt, labels):
            f = [w * a + (1 - w) * b for a, b in zip(e, t)]
            hits += int(f.index(max(f)) == y)
        if hits >= best:
            best, best_w = hits, w
    return best_w, best / len(labels)


def test_select_weight_two_item_window():
    # item 0 needs w >= 0.6, item 1 needs w <= 0.8
    p_emb = [[0.7, 0.3], [0.6, 0.4]]
    p_txt = [[0.2, 0.8], [0.1, 0.9]]
    w, acc = select_fusion_weight(p_emb, p_txt, [0, 1], return_accuracy=True)
    assert (w, acc) == _brute_force_weights(p_emb, p_txt, [0, 1], 0.01)
    assert 0.6 <= w <= 0.8 and acc == 1.0


def test_select_weight_empty():
    with pytest.raises(ValidationError):
        select_fusion_weight(np.empty((0, 2)), np.empty((0, 2)), [])


class TestEstimators:
    def test_vectorizer(self):
        vec = CaptionVectorizer(max_features=2).fit(["a b b", "b c", "<start> c c"])
        assert list(vec.get_feature_names_out()) == ["b", "c"]
        X = vec.transform(["c a", "zzz"])
        assert X.toarray().tolist() == [[0.0, 1.0], [0.0, 0.0]]
        assert clone(vec).get_params() == vec.get_params()

    def test_late_fusion(self, rng):
        p_emb = rng.dirichlet(np.ones(3), size=20)
        p_txt = rng.dirichlet(np.ones(3), size=20)
        y = rng.integers(3, size=20)
        est = LateFusionClassifier(grid_step=0.05).fit(p_emb, p_txt, y)
        assert 0.0 <= est.weight_ <= 1.0
        assert est.predict(p_emb, p_txt).shape == (20,)
        fixed = LateFusionClassifier(weight=0.25).fit(p_emb, p_txt, y)
        np.testing.assert_allclose(fixed.predict_proba(p_emb, p_txt), fuse_rows(p_emb, p_txt, 0.25))


def fuse_rows(a, b, w):
    return np.array([fuse(x, y, w) for x, y in zip(a, b)])
