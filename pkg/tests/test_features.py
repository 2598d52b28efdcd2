import json

import numpy as np
import pytest

from i2ieval.imagecore import Image, ImageMeta
from i2ieval.features import (
    ActivationFileError,
    ActivationLayer,
    ActivationSet,
    MultiLayerActivations,
    dists,
    dists_batch,
    load_activations,
    load_multilayer,
    read_npy,
    save_activations,
    save_multilayer,
    toy_extract,
    write_npy,
)


def _img(arr):
    return Image(np.asarray(arr, dtype=np.float64), ImageMeta())


def test_npy_roundtrip_against_numpy(tmp_path):
    # numpy itself is the oracle for the hand-rolled format code
    rng = np.random.default_rng(0)
    arr = rng.random((3, 4))
    write_npy(arr, tmp_path / "w.npy")
    assert np.array_equal(np.load(tmp_path / "w.npy"), arr)
    np.save(tmp_path / "n.npy", arr)
    assert np.array_equal(read_npy(tmp_path / "n.npy"), arr)


def test_npy_reads_float32_and_4d(tmp_path):
    rng = np.random.default_rng(1)
    arr = rng.random((2, 3, 4, 5)).astype(np.float32)
    np.save(tmp_path / "f.npy", arr)
    back = read_npy(tmp_path / "f.npy")
    assert back.dtype == np.float64
    assert np.array_equal(back, arr.astype(np.float64))
    write_npy(arr, tmp_path / "g.npy", precision="<f4")
    assert np.array_equal(np.load(tmp_path / "g.npy"), arr)


def test_npy_fortran_order_is_reordered(tmp_path):
    arr = np.asfortranarray(np.arange(12, dtype=np.float64).reshape(3, 4))
    np.save(tmp_path / "fortran.npy", arr)
    back = read_npy(tmp_path / "fortran.npy")
    assert back.flags["C_CONTIGUOUS"]
    assert np.array_equal(back, arr)


def test_npy_truncated_payload_names_counts(tmp_path):
    arr = np.zeros((4, 4))
    np.save(tmp_path / "t.npy", arr)
    blob = (tmp_path / "t.npy").read_bytes()
    (tmp_path / "t.npy").write_bytes(blob[:-8])
    with pytest.raises(ActivationFileError, match=r"120 bytes, expected 128"):
        read_npy(tmp_path / "t.npy")


def test_npy_bad_magic(tmp_path):
    (tmp_path / "bad.npy").write_bytes(b"NOTNPY" + b"\x00" * 64)
    with pytest.raises(ActivationFileError, match="magic"):
        read_npy(tmp_path / "bad.npy")


def test_npy_unsupported_version(tmp_path):
    arr = np.zeros((2, 2))
    with open(tmp_path / "v2.npy", "wb") as fh:
        np.lib.format.write_array(fh, arr, version=(2, 0))
    with pytest.raises(ActivationFileError, match="version"):
        read_npy(tmp_path / "v2.npy")


def test_npy_unsupported_dtype(tmp_path):
    np.save(tmp_path / "i.npy", np.zeros((2, 2), dtype=np.int64))
    with pytest.raises(ActivationFileError, match="dtype"):
        read_npy(tmp_path / "i.npy")


def test_npy_missing_file(tmp_path):
    with pytest.raises(ActivationFileError):
        read_npy(tmp_path / "absent.npy")


def test_load_activations_requires_2d(tmp_path):
    np.save(tmp_path / "three.npy", np.zeros((2, 2, 2)))
    with pytest.raises(ActivationFileError, match="2-D"):
        load_activations(tmp_path / "three.npy")


def test_load_activations_rejects_nonfinite(tmp_path):
    np.save(tmp_path / "nan.npy", np.array([[1.0, np.nan]]))
    with pytest.raises(ActivationFileError, match="finite"):
        load_activations(tmp_path / "nan.npy")


def test_activation_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(2)
    acts = ActivationSet(rng.standard_normal((5, 7)), "unit")
    save_activations(acts, tmp_path / "a.npy")
    back = load_activations(tmp_path / "a.npy", extractor_id="unit")
    assert np.array_equal(back.rows, acts.rows)
    assert back.n == 5 and back.d == 7
    assert back.extractor_id == "unit"


def test_activation_set_validation():
    with pytest.raises(ValueError):
        ActivationSet(np.zeros(3))
    with pytest.raises(ValueError):
        ActivationSet(np.array([[np.inf, 0.0]]))
    acts = ActivationSet(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        acts.rows[0, 0] = 1.0


def test_toy_extract_deterministic():
    rng = np.random.default_rng(3)
    imgs = [_img(rng.random((20, 20))) for _ in range(4)]
    a = toy_extract(imgs, seed=11, d=32)
    b = toy_extract(imgs, seed=11, d=32)
    assert np.array_equal(a.rows, b.rows)
    assert a.extractor_id == b.extractor_id
    c = toy_extract(imgs, seed=12, d=32)
    assert not np.array_equal(a.rows, c.rows)


def test_toy_extract_zero_image_zero_row():
    rows = toy_extract([_img(np.zeros((16, 16)))], seed=0, d=16).rows
    assert np.all(rows == 0.0)


def test_toy_extract_rectifier_leaves_exact_zeros():
    rng = np.random.default_rng(4)
    imgs = [_img(rng.random((32, 32))) for _ in range(8)]
    rows = toy_extract(imgs, seed=5, d=64).rows
    zero_frac = np.mean(rows == 0.0)
    assert 0.0 < zero_frac < 1.0


def test_toy_extract_input_validation():
    with pytest.raises(ValueError):
        toy_extract([], seed=0)
    rng = np.random.default_rng(5)
    mixed = [_img(rng.random((20, 20))), _img(rng.random((24, 24)))]
    with pytest.raises(ValueError):
        toy_extract(mixed, seed=0)
    with pytest.raises(ValueError):
        toy_extract([_img(rng.random((8, 8)))], seed=0)


def _toy_multilayer(seed, n=2, weights=None):
    rng = np.random.default_rng(seed)
    layers = []
    specs = [("conv_a", 3, 6, 5), ("conv_b", 2, 4, 4)]
    total_channels = sum(c for _, c, _, _ in specs)
    for name, c, h, w in specs:
        maps = rng.standard_normal((n, c, h, w))
        if weights is None:
            alpha = np.full(c, 1.0 / (2 * total_channels))
            beta = np.full(c, 1.0 / (2 * total_channels))
        else:
            alpha, beta = weights[name]
        layers.append(ActivationLayer(name, maps, alpha, beta))
    ids = tuple(f"img{i}" for i in range(n))
    return MultiLayerActivations(tuple(layers), ids, "toy-multi")


def test_multilayer_roundtrip(tmp_path):
    mla = _toy_multilayer(6)
    save_multilayer(mla, tmp_path)
    back = load_multilayer(tmp_path)
    assert back.ids == mla.ids
    assert back.extractor_id == "toy-multi"
    for lx, ly in zip(back.layers, mla.layers):
        assert lx.name == ly.name
        assert np.array_equal(lx.maps, ly.maps)
        assert np.array_equal(lx.alpha, ly.alpha)
        assert np.array_equal(lx.beta, ly.beta)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["format"] == "multilayer-activations-v1"


def test_multilayer_weight_sum_enforced():
    with pytest.raises(ValueError, match="sum to 1"):
        _toy_multilayer(7, weights={
            "conv_a": (np.full(3, 0.2), np.full(3, 0.2)),
            "conv_b": (np.full(2, 0.2), np.full(2, 0.2)),
        })


def test_multilayer_manifest_errors(tmp_path):
    with pytest.raises(ActivationFileError):
        load_multilayer(tmp_path)  # no manifest at all
    (tmp_path / "manifest.json").write_text("{\"format\": \"other\"}")
    with pytest.raises(ActivationFileError, match="format"):
        load_multilayer(tmp_path)


def test_multilayer_shape_mismatch_detected(tmp_path):
    mla = _toy_multilayer(8)
    save_multilayer(mla, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["layers"][0]["height"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ActivationFileError, match="does not match"):
        load_multilayer(tmp_path)


def test_dists_identity_zero():
    rng = np.random.default_rng(9)
    for trial in range(20):
        mla = _toy_multilayer(trial, n=1)
        assert abs(dists(mla, mla)) <= 1e-12


def test_dists_hand_case():
    # means cancel so the texture term is 1; anti-correlated maps push the
    # structure term to -1; the weighted sum lands at ~1
    x = MultiLayerActivations(
        (ActivationLayer("l", np.array([[[[1.0, -1.0]]]]), [0.5], [0.5]),),
        ("a",),
    )
    y = MultiLayerActivations(
        (ActivationLayer("l", np.array([[[[-1.0, 1.0]]]]), [0.5], [0.5]),),
        ("b",),
    )
    value = dists(x, y)
    assert abs(value - 1.0) <= 1e-5
    assert dists(x, y) == dists(y, x)


def test_dists_symmetric_random():
    for trial in range(10):
        x = _toy_multilayer(trial, n=1)
        y = _toy_multilayer(trial + 100, n=1)
        assert dists(x, y) == dists(y, x)
        assert 0.0 <= dists(x, y) <= 1.0


def test_dists_requires_single_image():
    x = _toy_multilayer(10, n=2)
    with pytest.raises(ValueError, match="one image"):
        dists(x, x)


def test_dists_weight_mismatch():
    x = MultiLayerActivations(
        (ActivationLayer("l", np.ones((1, 1, 2, 2)), [0.5], [0.5]),), ("a",)
    )
    y = MultiLayerActivations(
        (ActivationLayer("l", np.ones((1, 1, 2, 2)), [0.7], [0.3]),), ("b",)
    )
    with pytest.raises(ValueError, match="match"):
        dists(x, y)


def test_dists_batch():
    x = _toy_multilayer(11, n=3)
    y = _toy_multilayer(12, n=3)
    values = dists_batch(x, y)
    assert len(values) == 3
    assert values[1] == dists(x.select(1), y.select(1))
    with pytest.raises(ValueError):
        dists_batch(x, _toy_multilayer(13, n=2))
