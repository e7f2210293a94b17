"""Spatial descriptors from an 18-layer residual backbone truncated after
its last convolutional stage (stride 32, 512 channels).

A 128x128 patch maps to a (4, 4, 512) descriptor, a 512x512 image to
(16, 16, 512). Flattened descriptors are L2-normalized row-major over
(h, w, channel).
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from torchvision import models

from .errors import ContractViolation, NormalizationError

log = logging.getLogger(__name__)

STRIDE = 32
CHANNELS = 512

# preprocessing convention of the upstream classification weights
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# fixed seed for the offline fallback initialization, independent of user seeds
_SURROGATE_SEED = 7310

# weights file override for air-gapped hosts
WEIGHTS_ENV = "REEFSIM_BACKBONE_WEIGHTS"


@dataclass
class Descriptor:
    values: np.ndarray            # (h, w, 512) float32
    source_shape: tuple[int, int]  # (H, W) of the input raster


@dataclass
class FlatDescriptor:
    values: np.ndarray  # (h*w*512,) float32, unit norm
    norm: float         # Euclidean norm before normalization


def _gabor_bank(out_channels: int, kernel: int, rng: np.random.Generator) -> torch.Tensor:
    """Oriented bandpass filters standing in for learned first-layer weights."""
    ax = np.arange(kernel) - (kernel - 1) / 2.0
    xx, yy = np.meshgrid(ax, ax)
    filters = []
    n_orient, n_freq = 8, 4
    freqs = np.linspace(0.12, 0.45, n_freq)
    for o in range(n_orient):
        theta = o * math.pi / n_orient
        u = xx * math.cos(theta) + yy * math.sin(theta)
        v = -xx * math.sin(theta) + yy * math.cos(theta)
        envelope = np.exp(-(u ** 2 + v ** 2) / (2 * (kernel / 3.0) ** 2))
        for f in freqs:
            for phase in (0.0, math.pi / 2):
                g = envelope * np.cos(2 * math.pi * f * u + phase)
                g -= g.mean()
                g /= np.linalg.norm(g) + 1e-12
                filters.append(g)
    base = np.stack(filters[:out_channels])  # (64, k, k)
    color = rng.normal(size=(out_channels, 3))
    color = 0.5 + 0.5 * color / (np.abs(color).max(axis=1, keepdims=True) + 1e-12)
    weight = base[:, None, :, :] * color[:, :, None, None]
    return torch.from_numpy(weight.astype(np.float32))


def _build_trunk() -> nn.Sequential:
    resnet = models.resnet18(weights=None)
    return nn.Sequential(*list(resnet.children())[:-2])


def _surrogate_init(trunk: nn.Sequential) -> None:
    """Deterministic feature-extractor init for hosts without the published
    classification weights: oriented-filter first layer, He init elsewhere,
    and negatively biased late-stage norms so final activations are sparse
    enough for window cosines to discriminate.
    """
    with torch.random.fork_rng():
        torch.manual_seed(_SURROGATE_SEED)
        for module in trunk.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(module, nn.BatchNorm2d):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
    rng = np.random.default_rng(_SURROGATE_SEED)
    first_conv = trunk[0]
    with torch.no_grad():
        first_conv.weight.copy_(_gabor_bank(first_conv.out_channels, first_conv.kernel_size[0], rng))
        for stage, bias in ((trunk[6], -0.3), (trunk[7], -0.4)):
            for module in stage.modules():
                if isinstance(module, nn.BatchNorm2d):
                    module.bias.fill_(bias)


class Encoder:
    """Loaded backbone plus its preprocessing constants and metadata."""

    def __init__(self, trunk: nn.Sequential, meta: dict):
        self.trunk = trunk
        self.meta = meta
        mean = meta["preprocess"]["mean"]
        std = meta["preprocess"]["std"]
        self._mean = torch.tensor(mean, dtype=torch.float32).view(1, 3, 1, 1)
        self._std = torch.tensor(std, dtype=torch.float32).view(1, 3, 1, 1)
        self.trunk.eval()

    def preprocess(self, images: np.ndarray) -> torch.Tensor:
        """uint8 NHWC RGB (or HWC) -> normalized float NCHW tensor."""
        if images.ndim == 3:
            images = images[None]
        x = torch.from_numpy(np.ascontiguousarray(images)).float().div_(255.0)
        x = x.permute(0, 3, 1, 2)
        return (x - self._mean) / self._std

    def forward_raw(self, images: np.ndarray, train: bool = False) -> torch.Tensor:
        """Backbone features as an NCHW tensor; gradient-enabled when train."""
        x = self.preprocess(images)
        if train:
            self.trunk.train()
            return self.trunk(x)
        self.trunk.eval()
        with torch.no_grad():
            return self.trunk(x)

    def embed(self, image: np.ndarray) -> Descriptor:
        h, w = image.shape[:2]
        feats = self.forward_raw(image)[0]  # (512, h/32, w/32)
        values = feats.permute(1, 2, 0).numpy().astype(np.float32)
        return Descriptor(values, (h, w))

    def embed_flat_batch(self, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Normalized flat descriptors for a stack of same-size images, (N, h*w*512)."""
        chunks = []
        for start in range(0, len(images), batch_size):
            feats = self.forward_raw(images[start:start + batch_size])
            flat = feats.permute(0, 2, 3, 1).reshape(len(feats), -1)
            flat = torch.nn.functional.normalize(flat, dim=1)
            chunks.append(flat.numpy().astype(np.float32))
        return np.concatenate(chunks, axis=0)


def _validate_raster(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractViolation(f"expected HxWx3 RGB raster, got shape {image.shape}")
    if image.shape[0] % STRIDE or image.shape[1] % STRIDE:
        raise ContractViolation(
            f"raster dims must be multiples of {STRIDE}, got {image.shape[:2]}"
        )


def embed_patch(patch, encoder: Encoder) -> Descriptor:
    """(128, 128, 3) patch -> (4, 4, 512) descriptor."""
    pixels = patch.pixels if hasattr(patch, "pixels") else patch
    if pixels.shape[:2] != (128, 128):
        raise ContractViolation(f"patch must be 128x128, got {pixels.shape[:2]}")
    _validate_raster(pixels)
    return encoder.embed(pixels)


def embed_image(image: np.ndarray, encoder: Encoder) -> Descriptor:
    """(H, W, 3) raster with H, W multiples of 32 -> (H/32, W/32, 512)."""
    _validate_raster(image)
    return encoder.embed(image)


def normalize_flatten(d: Descriptor | np.ndarray) -> FlatDescriptor:
    """Row-major flatten over (h, w, channel), then scale to unit L2 norm."""
    values = d.values if isinstance(d, Descriptor) else np.asarray(d)
    flat = values.reshape(-1).astype(np.float64)
    norm = float(np.linalg.norm(flat))
    if norm == 0.0:
        raise NormalizationError("cannot normalize an all-zero descriptor")
    return FlatDescriptor((flat / norm).astype(np.float32), norm)


# ---------------------------------------------------------------------------
# checkpoint IO


def load_backbone(init: str = "pretrained", seed: int = 0, run_id: str = "") -> Encoder:
    """Build the truncated backbone with the requested initialization.

    init "pretrained" loads the published classification weights when they
    can be found (torchvision cache, network, or the file named by
    REEFSIM_BACKBONE_WEIGHTS); otherwise it falls back to a deterministic
    oriented-filter surrogate and records that in the metadata.
    init "random" is a seeded from-scratch initialization.
    """
    if init == "pretrained":
        trunk = _build_trunk()
        origin = _load_pretrained(trunk)
    elif init == "random":
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            trunk = _build_trunk()
        origin = f"random:seed={seed}"
    else:
        raise ValueError(f"unknown init mode: {init!r}")
    meta = {
        "architecture": "resnet18-conv5",
        "stride": STRIDE,
        "channels": CHANNELS,
        "preprocess": {"mean": list(IMAGENET_MEAN), "std": list(IMAGENET_STD)},
        "init": origin,
        "run_id": run_id,
    }
    return Encoder(trunk, meta)


def _load_pretrained(trunk: nn.Sequential) -> str:
    override = os.environ.get(WEIGHTS_ENV)
    if override:
        state = torch.load(override, map_location="cpu", weights_only=True)
        resnet = models.resnet18(weights=None)
        resnet.load_state_dict(state)
        trunk.load_state_dict(nn.Sequential(*list(resnet.children())[:-2]).state_dict())
        return f"imagenet:file={override}"
    try:
        resnet = models.resnet18(weights=models.ResNet18_Weights.IMAGENET1K_V1)
        trunk.load_state_dict(nn.Sequential(*list(resnet.children())[:-2]).state_dict())
        return "imagenet"
    except Exception as exc:  # offline host: fall back, loudly
        log.warning(
            "classification weights unavailable (%s); using deterministic "
            "surrogate initialization", exc,
        )
        _surrogate_init(trunk)
        return f"surrogate:seed={_SURROGATE_SEED}"


def save_checkpoint(encoder: Encoder, path: str | Path) -> Path:
    """Serialize trunk weights with the metadata record embedded as UTF-8 JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "state_dict": encoder.trunk.state_dict(),
        "meta_json": json.dumps(encoder.meta, sort_keys=True),
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path: str | Path) -> Encoder:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    meta = json.loads(payload["meta_json"])
    trunk = _build_trunk()
    trunk.load_state_dict(payload["state_dict"])
    return Encoder(trunk, meta)


def checkpoints_equal(a: Encoder, b: Encoder) -> bool:
    sa, sb = a.trunk.state_dict(), b.trunk.state_dict()
    if sa.keys() != sb.keys():
        return False
    return all(torch.equal(sa[k], sb[k]) for k in sa)
