"""Exemplar-conditioned similarity heatmaps.

The exemplar descriptor slides over the image descriptor at stride 1 (valid
placements only); each placement scores the cosine between the flattened,
L2-normalized window and exemplar. The resulting grid upsamples bilinearly
to pixel space; multi-exemplar maps merge by weighted maximum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .encoder import Descriptor, Encoder, embed_image, embed_patch
from .errors import ContractViolation

log = logging.getLogger(__name__)


@dataclass
class Heatmap:
    values: np.ndarray  # HxW float32 in [-1, 1], pixel-aligned to the image


@dataclass
class Exemplar:
    patch: np.ndarray                    # 128x128x3 RGB
    weight: float = 1.0
    class_tag: str | None = None
    descriptor: Descriptor | None = None
    flat: np.ndarray | None = None       # unit-normalized flattened descriptor


def embed_exemplar(exemplar: Exemplar, encoder: Encoder) -> Exemplar:
    """Fill descriptor and unit flat vector; an all-zero descriptor (e.g. a
    featureless patch through a sparse backbone) stays a zero flat vector,
    scoring neutral everywhere, mirroring the zero-window rule."""
    if exemplar.descriptor is None:
        exemplar.descriptor = embed_patch(exemplar.patch, encoder)
        flat = exemplar.descriptor.values.reshape(-1).astype(np.float64)
        norm = np.linalg.norm(flat)
        if norm == 0:
            log.warning("exemplar produced an all-zero descriptor; it will score 0 everywhere")
            exemplar.flat = flat.astype(np.float32)
        else:
            exemplar.flat = (flat / norm).astype(np.float32)
    return exemplar


def similarity_map(image_desc: Descriptor | np.ndarray, ex_desc: Descriptor | np.ndarray) -> np.ndarray:
    """Cosine score of every valid placement of the exemplar descriptor.

    For (16,16,512) against (4,4,512) this is a (13,13) grid in [-1, 1].
    Zero-norm windows score 0 (neutral) and are counted in the log.
    """
    img = np.asarray(image_desc.values if isinstance(image_desc, Descriptor) else image_desc,
                     dtype=np.float64)
    ex = np.asarray(ex_desc.values if isinstance(ex_desc, Descriptor) else ex_desc,
                    dtype=np.float64)
    if img.ndim != 3 or ex.ndim != 3 or img.shape[2] != ex.shape[2]:
        raise ContractViolation(f"descriptor shapes incompatible: {img.shape} vs {ex.shape}")
    he, we = ex.shape[:2]
    if he > img.shape[0] or we > img.shape[1]:
        raise ContractViolation("exemplar descriptor larger than image descriptor")

    ex_norm = np.linalg.norm(ex)
    if ex_norm == 0:
        log.warning("all-zero exemplar descriptor: similarity map is neutral")
        return np.zeros((img.shape[0] - he + 1, img.shape[1] - we + 1))
    ex_unit = ex / ex_norm

    windows = np.lib.stride_tricks.sliding_window_view(img, (he, we), axis=(0, 1))
    # windows: (rows, cols, C, he, we); align channel order with (he, we, C)
    numer = np.einsum("xychw,hwc->xy", windows, ex_unit)
    norms = np.sqrt(np.einsum("xychw,xychw->xy", windows, windows))
    zero = norms == 0
    if zero.any():
        log.warning("similarity_map: %d zero-norm windows scored neutral", int(zero.sum()))
    out = np.where(zero, 0.0, numer / np.where(zero, 1.0, norms))
    return out.astype(np.float64)


def upsample(
    values: np.ndarray,
    height: int,
    width: int,
    row_map: tuple[float, float] | None = None,
    col_map: tuple[float, float] | None = None,
    edge: str = "clamp",
) -> Heatmap:
    """Bilinear upsample of a grid to pixel dimensions.

    row_map/col_map are (offset, spacing) placing grid sample i at pixel
    offset + spacing*i; when omitted, samples sit at uniform cell centers.

    edge controls pixels beyond the outermost samples: "clamp" holds the
    edge sample (a constant grid stays constant, range preserved), while
    "taper" decays toward 0 at one sample spacing. Tapering keeps the peak
    unique at its sample and applies the same positional weight to every
    grid of the same geometry, so per-pixel argmax across class heatmaps is
    unaffected by the border treatment.
    """
    grid = np.asarray(values, dtype=np.float64)
    gh, gw = grid.shape
    if height < gh or width < gw:
        raise ContractViolation(f"cannot upsample {grid.shape} to smaller ({height}, {width})")
    if edge not in ("clamp", "taper"):
        raise ContractViolation(f"unknown edge mode: {edge!r}")
    if row_map is None:
        row_map = (height / gh / 2.0 - 0.5, height / gh)
    if col_map is None:
        col_map = (width / gw / 2.0 - 0.5, width / gw)
    rr = (np.arange(height, dtype=np.float64) - row_map[0]) / row_map[1]
    cc = (np.arange(width, dtype=np.float64) - col_map[0]) / col_map[1]
    coords = np.meshgrid(rr, cc, indexing="ij")
    if edge == "clamp":
        out = ndimage.map_coordinates(grid, coords, order=1, mode="nearest")
    else:
        out = ndimage.map_coordinates(grid, coords, order=1, mode="grid-constant", cval=0.0)
    return Heatmap(out.astype(np.float32))


def merge_weighted(heatmaps: list[Heatmap], weights: list[float] | None = None) -> Heatmap:
    """Pixelwise weighted maximum, rescaled by the largest weight.

    out(p) = max_k w_k*h_k(p) / max_k w_k, so a single-map merge with any
    weight is the identity and the output stays within [-1, 1].
    """
    if not heatmaps:
        raise ContractViolation("merge_weighted needs at least one heatmap")
    if weights is None:
        weights = [1.0] * len(heatmaps)
    if len(weights) != len(heatmaps):
        raise ContractViolation(f"{len(weights)} weights for {len(heatmaps)} heatmaps")
    if any(w <= 0 for w in weights):
        raise ContractViolation("weights must be positive")
    shape = heatmaps[0].values.shape
    for hm in heatmaps[1:]:
        if hm.values.shape != shape:
            raise ContractViolation(f"heatmap shape mismatch: {hm.values.shape} vs {shape}")
    stack = np.stack([w * hm.values.astype(np.float64) for hm, w in zip(heatmaps, weights)])
    merged = stack.max(axis=0) / max(weights)
    return Heatmap(merged.astype(np.float32))


def _working_dims(h: int, w: int, working_size: int) -> tuple[int, int]:
    """Backbone input dims: aspect-preserving, multiples of 32, short side
    near working_size. Dims that already comply pass through unchanged."""
    if h % 32 == 0 and w % 32 == 0 and working_size <= min(h, w) and max(h, w) <= 2 * working_size:
        return h, w
    scale = working_size / min(h, w)
    fh = max(128, int(round(h * scale / 32)) * 32)
    fw = max(128, int(round(w * scale / 32)) * 32)
    return fh, fw


def exemplar_heatmap(
    image: np.ndarray,
    exemplar: Exemplar,
    encoder: Encoder,
    working_size: int = 512,
) -> Heatmap:
    """Full image-vs-exemplar pipeline: embed, slide, upsample to image size.

    The image is resized (aspect preserved) to multiples of 32 near
    working_size for the backbone; grid samples map back to the pixel
    positions of their receptive-field centers so peaks land where the
    match physically is.
    """
    h, w = image.shape[:2]
    fh, fw = _working_dims(h, w, working_size)
    if (fh, fw) != (h, w):
        interp = cv2.INTER_AREA if fh < h else cv2.INTER_LINEAR
        fed = cv2.resize(image, (fw, fh), interpolation=interp)
    else:
        fed = image
    img_desc = embed_image(fed, encoder)
    embed_exemplar(exemplar, encoder)
    grid = similarity_map(img_desc, exemplar.descriptor)

    stride = 32
    eh, ew = exemplar.descriptor.values.shape[:2]
    # placement (i, j) covers cells i..i+eh-1; its center in fed-image pixels
    off_r = (eh * stride) / 2.0 - 0.5
    off_c = (ew * stride) / 2.0 - 0.5
    sy, sx = h / fh, w / fw
    return upsample(
        grid, h, w,
        row_map=(off_r * sy, stride * sy),
        col_map=(off_c * sx, stride * sx),
        edge="taper",
    )


def class_heatmap(
    image: np.ndarray,
    exemplars: list[Exemplar],
    encoder: Encoder,
    working_size: int = 512,
) -> Heatmap:
    """Merged heatmap for one class's exemplar set, using exemplar weights."""
    maps = [exemplar_heatmap(image, ex, encoder, working_size) for ex in exemplars]
    return merge_weighted(maps, [ex.weight for ex in exemplars])


def classify_patch(
    patch: np.ndarray,
    exemplars_by_class: dict[str, list[Exemplar]],
    encoder: Encoder,
) -> str:
    """Label of the class with the highest mean exemplar similarity.

    Classes are compared in sorted-label order; exact ties keep the first
    (lowest-index) class.
    """
    if not exemplars_by_class:
        raise ContractViolation("classify_patch needs at least one class")
    pixels = patch.pixels if hasattr(patch, "pixels") else patch
    desc = embed_patch(pixels, encoder)
    flat = desc.values.reshape(-1).astype(np.float64)
    norm = np.linalg.norm(flat)
    if norm == 0:
        log.warning("patch embedded to zero; all class similarities are neutral")
    else:
        flat /= norm

    best_label, best_score = None, -np.inf
    for label in sorted(exemplars_by_class):
        exs = exemplars_by_class[label]
        if not exs:
            raise ContractViolation(f"class {label!r} has no exemplars")
        sims = [float(flat @ embed_exemplar(ex, encoder).flat) for ex in exs]
        score = float(np.mean(sims))
        if score > best_score:
            best_label, best_score = label, score
    return best_label


def segment(
    image: np.ndarray,
    exemplars_by_class: dict[str, list[Exemplar]],
    encoder: Encoder,
    working_size: int = 512,
) -> tuple[np.ndarray, list[str]]:
    """Per-pixel argmax over per-class merged heatmaps.

    Returns (mask of class indices, class labels in index order); ties keep
    the lowest class index, matching classify_patch.
    """
    if not exemplars_by_class:
        raise ContractViolation("segment needs at least one class")
    labels = sorted(exemplars_by_class)
    stack = np.stack([
        class_heatmap(image, exemplars_by_class[label], encoder, working_size).values
        for label in labels
    ])
    mask = stack.argmax(axis=0).astype(np.int32)  # argmax keeps the first max
    return mask, labels


def save_heatmap(hm: Heatmap, base: str | Path) -> tuple[Path, Path]:
    """Persist as float32 .npy plus an 8-bit preview PNG (range [-1,1] -> [0,255])."""
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    raster = base.with_suffix(".npy")
    np.save(raster, hm.values.astype(np.float32))
    preview = base.with_name(base.stem + "_preview.png")
    scaled = np.clip((hm.values.astype(np.float64) + 1.0) / 2.0 * 255.0, 0, 255)
    cv2.imwrite(str(preview), scaled.astype(np.uint8))
    return raster, preview


def load_heatmap(path: str | Path) -> Heatmap:
    return Heatmap(np.load(Path(path)).astype(np.float32))
