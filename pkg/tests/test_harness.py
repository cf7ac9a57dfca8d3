import json

import numpy as np
import pytest
from PIL import Image

from quanvision.errors import ConfigError, InputError
from quanvision.harness.config import (
    CACHE_ENV,
    default_config,
    from_dict,
    load_config,
    with_overrides,
)
from quanvision.harness.data import SyntheticCrackSpec, generate_synthetic, ingest_dataset, write_corpus
from quanvision.harness.experiments import run_stage1, run_stage2
from quanvision.harness.report import emit_report
from quanvision.imaging import read_sidecar
from quanvision.nn import TrainConfig

TINY_STAGE1 = {
    "stage": 1,
    "output_dir": "out",
    "seeds": [0, 1],
    "data": {"train_counts": [16, 8], "test_count": 24, "crop": 28},
    "synthetic": {"image_size": [32, 32], "seed": 3},
    "quanv": {"patch_size": 2},
    "train": {"epochs": 3},
}

TINY_STAGE2 = {
    "stage": 2,
    "output_dir": "out",
    "seeds": [0],
    "data": {
        "splits": [0.5, 0.4],
        "resolutions": [[72, 72], [70, 70], [144, 144]],
        "images_per_resolution": 2,
        "class_weighting": True,
        "standardize_quantum": True,
        "positive_threshold": 0.02,
    },
    "synthetic": {"crack_probability": 1.0, "seed": 1},
    "quanv": {"patch_size": 4},
    "model": {"dropout": 0.5},
    "train": {"epochs": 2},
    "categories": [
        {"height": 72, "width": 72, "target": 72, "weight": 1.0},
        {"height": 70, "width": 70, "target": 72, "weight": 1.1},
        {"height": 144, "width": 144, "target": 72, "weight": 0.5},
    ],
}


def _config(raw, tmp_path, **changes):
    return with_overrides(from_dict(raw, tmp_path), **changes)


# ---- synthetic data ------------------------------------------------------


def test_synthetic_degenerate_probabilities():
    negatives = generate_synthetic(SyntheticCrackSpec(crack_probability=0.0), 20)
    assert all(s.label == 0 and not s.mask.any() for s in negatives)
    positives = generate_synthetic(SyntheticCrackSpec(crack_probability=1.0), 20)
    assert all(s.label == 1 and s.mask.any() for s in positives)


def test_synthetic_labels_match_masks_and_range():
    for s in generate_synthetic(SyntheticCrackSpec(seed=4), 30):
        assert s.label == int(s.mask.any())
        assert s.image.shape == (32, 32)
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0


def test_synthetic_deterministic_and_indexable():
    spec = SyntheticCrackSpec(seed=9, image_size=(40, 48))
    a = generate_synthetic(spec, 6)
    b = generate_synthetic(spec, 6)
    assert all(np.array_equal(x.image, y.image) and np.array_equal(x.mask, y.mask) for x, y in zip(a, b))
    tail = generate_synthetic(spec, 2, start=4)
    assert np.array_equal(tail[0].image, a[4].image)
    other = generate_synthetic(SyntheticCrackSpec(seed=10, image_size=(40, 48)), 1)
    assert not np.array_equal(other[0].image, a[0].image)


def test_synthetic_cracks_are_dark():
    s = next(x for x in generate_synthetic(SyntheticCrackSpec(crack_probability=1.0, stain_rate=0.0), 5))
    assert s.image[s.mask].mean() < s.image[~s.mask].mean() - 0.2


def test_synthetic_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticCrackSpec(crack_probability=1.5)
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticCrackSpec(), 0)


# ---- ingestion -----------------------------------------------------------


def test_ingest_stage1_counts_and_order(tmp_path):
    samples = generate_synthetic(SyntheticCrackSpec(crack_probability=0.6, seed=2), 8)
    write_corpus(samples, tmp_path, stage=1)
    corpus = ingest_dataset(tmp_path, 1)
    assert len(corpus) == 8
    assert corpus.labels.sum() == sum(s.label for s in samples)
    assert [s.source_id for s in corpus] == [s.source_id for s in ingest_dataset(tmp_path, 1)]
    assert all(0 <= s.image.min() and s.image.max() <= 1 for s in corpus)


def test_ingest_three_positive_two_negative(tmp_path):
    for name, n in (("positive", 3), ("negative", 2)):
        (tmp_path / name).mkdir()
        for i in range(n):
            Image.fromarray(np.full((8, 8), 40 * i, np.uint8)).save(tmp_path / name / f"{i}.png")
    corpus = ingest_dataset(tmp_path, 1)
    assert len(corpus) == 5
    assert list(corpus.labels).count(1) == 3


def test_ingest_skips_unreadable(tmp_path):
    write_corpus(generate_synthetic(SyntheticCrackSpec(crack_probability=0.5, seed=1), 6), tmp_path, 1)
    (tmp_path / "negative" / "broken.png").write_bytes(b"not an image")
    corpus = ingest_dataset(tmp_path, 1)
    assert len(corpus.skipped) == 1
    assert len(corpus) == 6


def test_ingest_errors(tmp_path):
    (tmp_path / "positive").mkdir()
    (tmp_path / "negative").mkdir()
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / "positive" / "a.png")
    with pytest.raises(InputError):
        ingest_dataset(tmp_path, 1)  # empty negative class
    with pytest.raises(InputError):
        ingest_dataset(tmp_path, 2)  # no masks/
    with pytest.raises(InputError):
        ingest_dataset(tmp_path / "missing", 1)


def test_ingest_stage2(tmp_path):
    samples = generate_synthetic(SyntheticCrackSpec(image_size=(45, 45), crack_probability=1.0), 2)
    write_corpus(samples, tmp_path, 2)
    corpus = ingest_dataset(tmp_path, 2)
    assert len(corpus) == 2
    assert all(len(s.grid.regions) == 81 for s in corpus)
    assert all(s.grid.labels.sum() > 0 for s in corpus)


# ---- config --------------------------------------------------------------


def test_bundled_configs_load():
    one, two = default_config(1), default_config(2)
    assert one.quanv.n_qubits == 4 and two.quanv.n_qubits == 16
    assert one.qnn_input == (14, 14, 4) and one.cnn_input == (32, 32, 1)
    assert two.qnn_input == (9, 9, 16) and two.cnn_input == (36, 36, 1)
    assert one.train.epochs == 50 and one.test_count == 2000
    assert two.splits == (0.5, 0.4)
    qnn, cnn = one.model_specs(0)
    assert qnn.layers[-4:] == cnn.layers[-4:]


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(
        'stage = 1\noutput_dir = "o"\nseeds = [4, 5]\n[data]\ntrain_counts = [10]\ntest_count = 5\n'
        "[train]\nepochs = 2\nlearning_rate = 0.01\n"
    )
    config = load_config(path)
    assert config.seeds == (4, 5)
    assert config.output_dir == tmp_path / "o"
    assert config.train == TrainConfig(epochs=2, learning_rate=0.01, seed=4)


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        from_dict({**TINY_STAGE1, "colour": "red"})
    with pytest.raises(ConfigError):
        from_dict({**TINY_STAGE1, "train": {"epoch": 3}})
    with pytest.raises(ConfigError):
        from_dict({**TINY_STAGE1, "quanv": {"patch_size": 4}})  # stage 1 needs 4 qubits
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("stage = [")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_cache_dir_precedence(tmp_path, monkeypatch):
    raw = {**TINY_STAGE1, "cache_dir": "file-cache"}
    assert from_dict(raw, tmp_path).resolved_cache_dir() == tmp_path / "file-cache"
    monkeypatch.setenv(CACHE_ENV, str(tmp_path / "env-cache"))
    assert from_dict(raw, tmp_path).resolved_cache_dir() == tmp_path / "env-cache"
    flagged = _config(raw, tmp_path, cache_dir=tmp_path / "flag-cache")
    assert flagged.resolved_cache_dir() == tmp_path / "flag-cache"


def test_overrides_take_precedence(tmp_path):
    config = _config(TINY_STAGE1, tmp_path, train_counts=[5], seeds=[9])
    assert config.train_counts == (5,)
    assert config.seeds == (9,)
    assert config.test_count == 24


# ---- protocols -----------------------------------------------------------


@pytest.fixture(scope="module")
def stage1_report(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("s1")
    config = _config(TINY_STAGE1, tmp, cache_dir=tmp / "cache")
    return config, run_stage1(config)


def test_stage1_report_shape(stage1_report):
    _, report = stage1_report
    assert report.settings == ["n16", "n8"]
    assert len(report.runs) == 2 * 2 * 2
    assert all(len(r.history) == 3 for r in report.runs)
    assert len({r.test_hash for r in report.runs}) == 1
    assert {r.test_count for r in report.runs} == {24}
    assert set(report.claims()) == {"qnn_accuracy_at_least_cnn_minus_margin", "qnn_val_loss_variance_at_most_cnn"}
    assert report.timings["quanvolution_seconds"] >= report.timings["circuit_seconds"]


def test_stage1_emit_is_deterministic(stage1_report, tmp_path):
    _, report = stage1_report
    paths = emit_report(report, tmp_path / "a")
    emit_report(report, tmp_path / "b")
    for name in ("summary.csv", "report.json", "curves.png", "accuracy.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert (tmp_path / "a" / name).stat().st_size > 0
    assert len(list(paths["metrics"].glob("*.csv"))) == 8
    rows = (tmp_path / "a" / "summary.csv").read_text().splitlines()
    assert len(rows) == 9
    assert json.loads((tmp_path / "a" / "report.json").read_text())["shared_test_sets"] is True


def test_stage1_rerun_identical_metrics(stage1_report):
    config, report = stage1_report
    again = run_stage1(config)
    assert [r.history for r in again.runs] == [r.history for r in report.runs]
    assert again.timings["cache_hits"] == 16 + 24


def test_stage2_pipeline(tmp_path):
    config = _config(TINY_STAGE2, tmp_path, cache_dir=tmp_path / "cache")
    assert config.qnn_input == (2, 2, 16)
    report = run_stage2(config)
    assert report.settings == ["split50-50", "split40-60"]
    assert len(report.runs) == 4
    assert report.reference_accuracy == pytest.approx(0.978)
    paths = emit_report(report, tmp_path / "out")
    payload = json.loads(paths["report"].read_text())
    assert set(payload["validation_accuracy"]) == {"split50-50", "split40-60"}
    # 6 images: 3 test images at 50/50 and 4 at 40/60, for both models
    assert len(report.localization) == 2 * (3 + 4)
    for loc in report.localization:
        assert len(loc.annotation.records) == 81
        sidecar = tmp_path / "out" / "annotations" / loc.setting / loc.model / f"{loc.source_id}.csv"
        assert len(read_sidecar(sidecar)) == 81
        assert sidecar.with_suffix(".png").stat().st_size > 0


def test_stage2_split_leaving_no_test_images(tmp_path):
    config = _config(TINY_STAGE2, tmp_path, splits=[0.99])
    with pytest.raises(ConfigError):
        run_stage2(config)
