import json

import cv2
import numpy as np
import pytest
import torch

from i2iextract.backbones import build_inception
from i2iextract.cli import main
from i2iextract.extract import (
    ExtractError,
    ExtractSpec,
    export_inception_pool,
    export_vgg_multilayer,
)


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("imgs")
    rng = np.random.default_rng(7)
    for i in range(3):
        arr = (rng.random((48, 40)) * 65535).astype(np.uint16)
        cv2.imwrite(str(d / f"p{i}.png"), arr)
    return d


@pytest.fixture(scope="module")
def pooled_export(image_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("pool") / "acts.npy"
    spec = ExtractSpec(model="inception-pool", seed=1)
    manifest = export_inception_pool(image_dir, out, spec)
    return out, manifest


@pytest.fixture(scope="module")
def vgg_export(image_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("vgg")
    spec = ExtractSpec(
        model="vgg-multilayer", layers=("relu2_2", "relu4_3"), seed=1, input_size=64
    )
    manifest = export_vgg_multilayer(image_dir, out, spec)
    return out, manifest


def test_pooled_export_preserves_count(pooled_export):
    out, manifest = pooled_export
    rows = np.load(out)
    assert rows.shape[0] == 3
    assert manifest["n"] == 3
    assert manifest["ids"] == ["p0", "p1", "p2"]


def test_pooled_width_matches_network(pooled_export):
    out, manifest = pooled_export
    rows = np.load(out)
    assert manifest["d"] == rows.shape[1]

    model, _, _ = build_inception(seed=1)
    grabbed = []
    hook = model.avgpool.register_forward_hook(lambda m, i, o: grabbed.append(o))
    with torch.no_grad():
        model(torch.zeros(1, 3, 299, 299))
    hook.remove()
    assert manifest["d"] == grabbed[0].shape[1]


def test_pooled_manifest_records_policies(pooled_export):
    _, manifest = pooled_export
    assert manifest["format"] == "pooled-activations-v1"
    assert manifest["input_size"] == 299
    assert manifest["resize"]["mode"] == "bilinear"
    assert manifest["channels"] == "grayscale replicated to 3"
    assert manifest["weights"] == {"source": "random-init", "seed": 1}
    assert manifest["extractor_id"] == "inception-pool-random-s1"


def test_pooled_export_is_bitwise_deterministic(image_dir, tmp_path):
    spec = ExtractSpec(model="inception-pool", seed=2, input_size=96)
    a = tmp_path / "run1" / "acts.npy"
    b = tmp_path / "run2" / "acts.npy"
    export_inception_pool(image_dir, a, spec)
    export_inception_pool(image_dir, b, spec)
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".json").read_bytes() == b.with_suffix(".json").read_bytes()


def test_different_seeds_differ(image_dir, tmp_path):
    a = tmp_path / "a.npy"
    b = tmp_path / "b.npy"
    export_inception_pool(image_dir, a, ExtractSpec(model="inception-pool", seed=3,
                                                    input_size=96))
    export_inception_pool(image_dir, b, ExtractSpec(model="inception-pool", seed=4,
                                                    input_size=96))
    assert not np.array_equal(np.load(a), np.load(b))


def test_vgg_manifest_lists_requested_layers(vgg_export):
    out, manifest = vgg_export
    assert manifest["format"] == "multilayer-activations-v1"
    assert [e["name"] for e in manifest["layers"]] == ["relu2_2", "relu4_3"]
    for entry in manifest["layers"]:
        maps = np.load(out / entry["file"])
        assert maps.shape == (3, entry["channels"], entry["height"], entry["width"])
    assert manifest["layers"][0]["channels"] == 128
    assert manifest["layers"][1]["channels"] == 512


def test_vgg_weight_table_sums_to_one(vgg_export):
    _, manifest = vgg_export
    total = sum(sum(e["alpha"]) + sum(e["beta"]) for e in manifest["layers"])
    assert abs(total - 1.0) <= 1e-9


def test_vgg_export_is_bitwise_deterministic(image_dir, tmp_path):
    spec = ExtractSpec(model="vgg-multilayer", layers=("relu1_2",), seed=5, input_size=48)
    a = tmp_path / "a"
    b = tmp_path / "b"
    export_vgg_multilayer(image_dir, a, spec)
    export_vgg_multilayer(image_dir, b, spec)
    assert (a / "relu1_2.npy").read_bytes() == (b / "relu1_2.npy").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


def test_spec_validation():
    with pytest.raises(ExtractError):
        ExtractSpec(model="resnet-pool")
    with pytest.raises(ExtractError):
        ExtractSpec(model="vgg-multilayer", layers=())
    with pytest.raises(ExtractError):
        ExtractSpec(model="vgg-multilayer", layers=("relu9_9",))
    with pytest.raises(ExtractError):
        ExtractSpec(model="inception-pool", input_size=16)
    with pytest.raises(ExtractError):
        ExtractSpec(model="inception-pool", precision="<i8")


def test_missing_weights_file(image_dir, tmp_path):
    spec = ExtractSpec(model="inception-pool", weights=str(tmp_path / "none.pt"))
    with pytest.raises(ExtractError, match="not found"):
        export_inception_pool(image_dir, tmp_path / "x.npy", spec)


def test_unreadable_image_names_file(tmp_path):
    d = tmp_path / "imgs"
    d.mkdir()
    bad = d / "broken.png"
    bad.write_bytes(b"not a png")
    spec = ExtractSpec(model="inception-pool", input_size=96)
    with pytest.raises(ExtractError, match="broken.png"):
        export_inception_pool(d, tmp_path / "x.npy", spec)


def test_empty_directory(tmp_path):
    d = tmp_path / "imgs"
    d.mkdir()
    spec = ExtractSpec(model="inception-pool")
    with pytest.raises(ExtractError, match="no input images"):
        export_inception_pool(d, tmp_path / "x.npy", spec)


def test_wrong_spec_model_pairing(image_dir, tmp_path):
    spec = ExtractSpec(model="inception-pool")
    with pytest.raises(ExtractError):
        export_vgg_multilayer(image_dir, tmp_path / "v", spec)


def test_primary_loaders_read_pooled_export(pooled_export):
    features = pytest.importorskip("i2ieval.features")
    out, manifest = pooled_export
    acts = features.load_activations(out, extractor_id=manifest["extractor_id"])
    assert acts.n == manifest["n"]
    assert acts.d == manifest["d"]
    kid = features_kid_smoke(features, acts)
    assert np.isfinite(kid)


def features_kid_smoke(features, acts):
    from i2ieval.distdist import kid_unbiased

    half_a = features.ActivationSet(acts.rows[:2])
    half_b = features.ActivationSet(acts.rows[1:])
    return kid_unbiased(half_a, half_b)


def test_primary_loaders_read_vgg_export(vgg_export, image_dir, tmp_path):
    features = pytest.importorskip("i2ieval.features")
    out, manifest = vgg_export
    mla = features.load_multilayer(out)
    assert mla.ids == ("p0", "p1", "p2")
    assert [l.name for l in mla.layers] == ["relu2_2", "relu4_3"]

    other = tmp_path / "other"
    spec = ExtractSpec(
        model="vgg-multilayer", layers=("relu2_2", "relu4_3"), seed=9, input_size=64
    )
    export_vgg_multilayer(image_dir, other, spec)
    mlb = features.load_multilayer(other)
    # weight tables agree, so the distance is defined between the exports
    value = features.dists(mla.select(0), mlb.select(0))
    assert 0.0 <= value <= 1.0
    assert features.dists(mla.select(0), mla.select(0)) <= 1e-12


def test_cli_roundtrip(image_dir, tmp_path, capsys):
    out = tmp_path / "cli_vgg"
    code = main([
        "extract", "--model", "vgg-multilayer",
        "--input", str(image_dir), "--out", str(out),
        "--layers", "relu1_2,relu3_3", "--seed", "6", "--input-size", "48",
    ])
    captured = capsys.readouterr()
    assert code == 0
    manifest = json.loads(captured.out)
    assert [e["name"] for e in manifest["layers"]] == ["relu1_2", "relu3_3"]
    assert (out / "manifest.json").exists()


def test_cli_error_exit_codes(tmp_path, capsys):
    code = main([
        "extract", "--model", "vgg-multilayer",
        "--input", str(tmp_path), "--out", str(tmp_path / "o"),
        "--layers", "relu9_9",
    ])
    captured = capsys.readouterr()
    assert code == 1
    assert "relu9_9" in captured.err

    code = main(["extract", "--model", "bogus", "--input", "x", "--out", "y"])
    captured = capsys.readouterr()
    assert code == 1
    assert captured.err.startswith("error:")
