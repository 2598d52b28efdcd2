"""Network construction and weight provenance.

Weights come either from a local state-dict file or from seeded random
initialisation. Random weights keep the exporters fully self-contained
(no downloads) while preserving determinism; the provenance of whichever
choice was made is recorded in every output manifest.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import torch
import torchvision

INCEPTION_INPUT = 299
VGG_INPUT = 256
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# indices into vgg16.features where each conv stage's final ReLU fires
VGG_LAYER_INDICES = {
    "relu1_2": 3,
    "relu2_2": 8,
    "relu3_3": 15,
    "relu4_3": 22,
    "relu5_3": 29,
}


class WeightsError(Exception):
    pass


def _provenance(weights_file, seed: int) -> tuple[dict, str]:
    if weights_file is None:
        return {"source": "random-init", "seed": seed}, f"random-s{seed}"
    weights_file = Path(weights_file)
    if not weights_file.is_file():
        raise WeightsError(f"weights file not found: {weights_file}")
    digest = hashlib.sha256(weights_file.read_bytes()).hexdigest()
    return (
        {"source": "file", "path": str(weights_file), "sha256": digest},
        f"file-{digest[:8]}",
    )


def _load_state(model: torch.nn.Module, weights_file) -> None:
    try:
        state = torch.load(weights_file, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise WeightsError(f"{weights_file}: cannot load state dict: {exc}") from exc
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise WeightsError(f"{weights_file}: state dict mismatch: {exc}") from exc


def build_inception(weights_file=None, seed: int = 0):
    """Inception-V3 in eval mode plus its weight provenance record."""
    provenance, tag = _provenance(weights_file, seed)
    torch.manual_seed(seed)
    model = torchvision.models.inception_v3(
        weights=None, aux_logits=True, init_weights=True, transform_input=False
    )
    if weights_file is not None:
        _load_state(model, weights_file)
    model.eval()
    return model, provenance, f"inception-pool-{tag}"


def build_vgg_features(weights_file=None, seed: int = 0):
    """The convolutional part of VGG-16 in eval mode, plus provenance."""
    provenance, tag = _provenance(weights_file, seed)
    torch.manual_seed(seed)
    model = torchvision.models.vgg16(weights=None)
    if weights_file is not None:
        _load_state(model, weights_file)
    features = model.features
    features.eval()
    return features, provenance, f"vgg16-multilayer-{tag}"
