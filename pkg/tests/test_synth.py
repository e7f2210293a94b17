import json

import numpy as np
import pytest

from reefsim.errors import ParameterError
from reefsim.synth import (SyntheticCorpusSpec, TextureParams,
                           generate_synthetic_corpus, texture_tile)


def small_spec():
    return SyntheticCorpusSpec(class_count=3, frames_per_video=6,
                               crops_per_class=4, seg_images=2)


def test_default_spec_valid():
    spec = SyntheticCorpusSpec()
    assert spec.class_count == 5
    assert len(spec.textures) == 5


def test_identical_texture_params_rejected():
    t = TextureParams("plaid", 16, 0.5, (1.0, 0.8, 0.7))
    with pytest.raises(ParameterError, match="indistinguishable"):
        SyntheticCorpusSpec(class_count=2, textures=[t, TextureParams("plaid", 16, 0.5, (1.0, 0.8, 0.7))])


def test_different_family_same_scale_ok():
    textures = [TextureParams("plaid", 16), TextureParams("rings", 16)]
    spec = SyntheticCorpusSpec(class_count=2, textures=textures)
    assert len(spec.textures) == 2


def test_texture_count_mismatch():
    with pytest.raises(ParameterError):
        SyntheticCorpusSpec(class_count=3, textures=[TextureParams("plaid", 16)])


def test_unknown_family():
    rng = np.random.default_rng(0)
    with pytest.raises(ParameterError):
        texture_tile(TextureParams("paisley", 10), 64, rng)


def test_corpus_structure(tmp_path):
    info = generate_synthetic_corpus(small_spec(), seed=1, out_dir=tmp_path)
    assert len(info["videos"]) == 4  # 3 classes + background
    videos = sorted(p.name for p in (tmp_path / "videos").glob("*.avi"))
    assert videos == ["background.avi", "class0_plaid.avi", "class1_blobs.avi",
                      "class2_speckle.avi"]
    labels = [json.loads(l) for l in (tmp_path / "labels.jsonl").read_text().splitlines()]
    assert len(labels) == 3 * 4 * 2  # classes x crops x splits
    assert {l["split"] for l in labels} == {"train", "test"}
    for rec in labels[:5]:
        assert (tmp_path / rec["path"]).exists()
    assert (tmp_path / "seg" / "vocab.json").exists()
    vocab = json.loads((tmp_path / "seg" / "vocab.json").read_text())
    assert vocab[0] == "background" and len(vocab) == 4
    assert len(list((tmp_path / "seg" / "images").glob("*.png"))) == 2
    assert len(list((tmp_path / "seg" / "masks").glob("*.png"))) == 2
    assert (tmp_path / "spec.json").exists()


def test_corpus_deterministic(tmp_path):
    generate_synthetic_corpus(small_spec(), seed=7, out_dir=tmp_path / "a")
    generate_synthetic_corpus(small_spec(), seed=7, out_dir=tmp_path / "b")
    a_files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    b_files = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert a_files == b_files
    for rel in a_files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_corpus_seed_changes_content(tmp_path):
    generate_synthetic_corpus(small_spec(), seed=1, out_dir=tmp_path / "a")
    generate_synthetic_corpus(small_spec(), seed=2, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "labeled/train/plaid/000.png").read_bytes()
    b = (tmp_path / "b" / "labeled/train/plaid/000.png").read_bytes()
    assert a != b


def test_masks_match_vocab(tmp_path):
    import cv2

    generate_synthetic_corpus(small_spec(), seed=3, out_dir=tmp_path)
    vocab = json.loads((tmp_path / "seg" / "vocab.json").read_text())
    for mask_path in (tmp_path / "seg" / "masks").glob("*.png"):
        mask = cv2.imread(str(mask_path), cv2.IMREAD_GRAYSCALE)
        assert mask.max() < len(vocab)
        assert (mask == 0).any()  # background present everywhere
