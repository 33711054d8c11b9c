import json

import numpy as np
import pytest

from galleryevent import (AttentionTrainConfig, SyntheticConfig, TrainConfig, generate_synthetic,
                          train_attention, train_linear, unfold)


def write_manifest(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def write_features(path, rows, dim):
    lines = ["photo_id," + ",".join(f"f{i}" for i in range(dim))]
    lines += [pid + "," + ",".join(repr(float(x)) for x in vec) for pid, vec in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    cfg = SyntheticConfig(num_classes=3, dim=8, albums_per_class=4, album_size_range=(3, 6),
                          noise_scale=0.2, seed=1)
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def small_models(small_dataset):
    manifest, store = small_dataset
    clf = train_linear(unfold(manifest, store), TrainConfig(max_epochs=100), num_classes=3)
    att = train_attention(manifest, store, AttentionTrainConfig(learning_rate=0.01, max_epochs=30))
    return clf, att


ACCEPTANCE_LINES = []


def record_criterion(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
