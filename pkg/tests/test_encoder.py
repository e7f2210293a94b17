import numpy as np
import pytest

from reefsim.encoder import (Descriptor, checkpoints_equal, embed_image,
                             embed_patch, load_backbone, load_checkpoint,
                             normalize_flatten, save_checkpoint)
from reefsim.errors import ContractViolation, NormalizationError

from conftest import make_rgb


def test_patch_descriptor_shape(encoder):
    d = embed_patch(make_rgb(128, 128), encoder)
    assert d.values.shape == (4, 4, 512)
    assert d.source_shape == (128, 128)
    assert np.isfinite(d.values).all()


def test_image_descriptor_shapes(encoder):
    assert embed_image(make_rgb(512, 512), encoder).values.shape == (16, 16, 512)
    assert embed_image(make_rgb(256, 256), encoder).values.shape == (8, 8, 512)
    assert embed_image(make_rgb(256, 512), encoder).values.shape == (8, 16, 512)


def test_shape_contracts(encoder):
    with pytest.raises(ContractViolation):
        embed_patch(make_rgb(120, 128), encoder)
    with pytest.raises(ContractViolation):
        embed_image(make_rgb(500, 512), encoder)
    with pytest.raises(ContractViolation):
        embed_image(make_rgb(512, 512)[:, :, :2], encoder)


def test_inference_deterministic(encoder):
    patch = make_rgb(128, 128, seed=4)
    a = embed_patch(patch, encoder)
    b = embed_patch(patch, encoder)
    assert np.abs(a.values - b.values).max() == 0.0


def test_normalize_flatten_345():
    values = np.zeros((1, 1, 512), dtype=np.float32)
    values[0, 0, 0] = 3.0
    values[0, 0, 1] = 4.0
    flat = normalize_flatten(Descriptor(values, (32, 32)))
    assert flat.values[0] == pytest.approx(0.6)
    assert flat.values[1] == pytest.approx(0.8)
    assert flat.norm == pytest.approx(5.0)
    assert np.abs(flat.values[2:]).max() == 0.0


def test_normalize_flatten_idempotent():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(2, 2, 8)).astype(np.float32)
    once = normalize_flatten(v)
    twice = normalize_flatten(once.values.reshape(2, 2, 8))
    np.testing.assert_allclose(once.values, twice.values, atol=1e-7)


def test_normalize_flatten_zero_rejected():
    with pytest.raises(NormalizationError):
        normalize_flatten(np.zeros((4, 4, 512)))


def test_normalize_flatten_row_major_order():
    values = np.arange(2 * 2 * 3, dtype=np.float32).reshape(2, 2, 3)
    flat = normalize_flatten(values)
    expect = values.reshape(-1) / np.linalg.norm(values)
    np.testing.assert_allclose(flat.values, expect, atol=1e-7)


def test_unit_norm_property():
    rng = np.random.default_rng(1)
    for _ in range(100):
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 64)))
        v = rng.normal(size=shape) * float(rng.uniform(0.01, 100))
        flat = normalize_flatten(v)
        assert abs(np.linalg.norm(flat.values) - 1.0) < 1e-5


def test_cosine_similarity_bounds(encoder):
    rng = np.random.default_rng(2)
    flats = [normalize_flatten(rng.normal(size=(2, 2, 16))).values for _ in range(20)]
    for i in range(len(flats)):
        for j in range(len(flats)):
            s = float(flats[i] @ flats[j])
            assert -1 - 1e-6 <= s <= 1 + 1e-6


def test_embed_flat_batch_matches_single(encoder):
    patches = np.stack([make_rgb(128, 128, seed=s) for s in range(3)])
    batch = encoder.embed_flat_batch(patches)
    for i in range(3):
        d = embed_patch(patches[i], encoder)
        single = normalize_flatten(d).values
        np.testing.assert_allclose(batch[i], single, atol=1e-5)


def test_checkpoint_round_trip(tmp_path, encoder):
    path = save_checkpoint(encoder, tmp_path / "enc.ckpt")
    loaded = load_checkpoint(path)
    assert checkpoints_equal(encoder, loaded)
    assert loaded.meta == encoder.meta
    patch = make_rgb(128, 128, seed=6)
    np.testing.assert_array_equal(embed_patch(patch, encoder).values,
                                  embed_patch(patch, loaded).values)


def test_random_init_differs_from_fallback(encoder):
    rnd = load_backbone("random", seed=0)
    assert not checkpoints_equal(rnd, encoder)
    rnd2 = load_backbone("random", seed=0)
    assert checkpoints_equal(rnd, rnd2)
    rnd3 = load_backbone("random", seed=1)
    assert not checkpoints_equal(rnd, rnd3)


def test_unknown_init_mode():
    with pytest.raises(ValueError):
        load_backbone("finetuned-magic")


def test_metadata_records_provenance(encoder):
    assert encoder.meta["architecture"] == "resnet18-conv5"
    assert encoder.meta["preprocess"]["mean"] == [0.485, 0.456, 0.406]
    assert encoder.meta["init"].startswith(("imagenet", "surrogate"))
