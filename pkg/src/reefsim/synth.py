"""Procedural synthetic corpus: per-class videos of a textured region
drifting over a low-texture seabed, plus labeled crops, segmentation
images with ground-truth masks, and a background-only video for random
patch mining.

Textures are deliberately corner-rich so keypoint tracking works, and the
noise level is chosen so frozen-backbone similarity does not saturate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import cv2
import numpy as np

from .errors import ParameterError

FRAME_H, FRAME_W = 512, 640
REGION = 320             # moving textured square, px
CROP = 128               # labeled crop size
SEG_SIZE = 512           # segmentation eval images are square
SEG_REGION = 224

BACKGROUND_RGB = np.array([178, 168, 142], dtype=np.float64)


@dataclass
class TextureParams:
    family: str              # plaid | blobs | speckle | stripes | rings
    scale: float             # cell size / blur sigma / period, px
    density: float = 0.5
    tint: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def vector(self) -> np.ndarray:
        return np.array([self.scale, self.density, *self.tint])


@dataclass
class SyntheticCorpusSpec:
    class_count: int = 5
    frames_per_video: int = 40
    motion_px: float = 5.0
    noise_level: float = 0.30
    crops_per_class: int = 30        # per split
    seg_images: int = 6
    textures: list[TextureParams] = field(default_factory=list)

    def __post_init__(self):
        if not self.textures:
            self.textures = default_textures(self.class_count)
        if len(self.textures) != self.class_count:
            raise ParameterError(
                f"{len(self.textures)} textures for {self.class_count} classes"
            )
        self.validate_distinguishable()

    def validate_distinguishable(self) -> None:
        """Reject class pairs whose texture parameters are too close to tell apart."""
        for i in range(len(self.textures)):
            for j in range(i + 1, len(self.textures)):
                a, b = self.textures[i], self.textures[j]
                if a.family != b.family:
                    continue
                if float(np.linalg.norm(a.vector() - b.vector())) < 1e-6:
                    raise ParameterError(
                        f"classes {i} and {j} share family {a.family!r} with "
                        "indistinguishable parameters"
                    )


def default_textures(count: int) -> list[TextureParams]:
    bank = [
        TextureParams("plaid", 16, 0.5, (1.00, 0.82, 0.72)),
        TextureParams("blobs", 7, 0.5, (0.75, 1.00, 0.78)),
        TextureParams("speckle", 3, 0.10, (0.92, 0.92, 1.00)),
        TextureParams("stripes", 14, 0.06, (1.00, 0.95, 0.70)),
        TextureParams("rings", 12, 0.5, (0.80, 0.88, 1.00)),
        TextureParams("plaid", 28, 0.5, (0.85, 0.75, 1.00)),
        TextureParams("blobs", 13, 0.5, (1.00, 0.80, 0.95)),
        TextureParams("speckle", 5, 0.05, (0.78, 1.00, 1.00)),
    ]
    if count > len(bank):
        raise ParameterError(f"at most {len(bank)} default classes, requested {count}")
    return bank[:count]


CLASS_NAMES = ["plaid", "blobs", "speckle", "stripes", "rings", "plaid2", "blobs2", "speckle2"]


def texture_tile(params: TextureParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Grayscale base tile in [0, 1], anchored to its own origin."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if params.family == "plaid":
        cell = params.scale
        tile = (((xx // cell) + (yy // cell)) % 2).astype(np.float64)
        tile = 0.25 + 0.6 * tile
    elif params.family == "blobs":
        noise = rng.random((size, size))
        smooth = cv2.GaussianBlur(noise, (0, 0), params.scale)
        thresh = np.quantile(smooth, 0.55)
        tile = np.where(smooth > thresh, 0.85, 0.3)
    elif params.family == "speckle":
        tile = np.full((size, size), 0.3)
        n_dots = int(params.density * size * size / max(1.0, params.scale) ** 2)
        ys = rng.integers(0, size, n_dots)
        xs = rng.integers(0, size, n_dots)
        r = max(1, int(params.scale))
        for y, x in zip(ys, xs):
            cv2.circle(tile, (int(x), int(y)), r, 0.9, -1)
    elif params.family == "stripes":
        diag = (xx + yy) / np.sqrt(2.0)
        tile = 0.3 + 0.55 * ((diag // params.scale) % 2)
        n_dots = int(params.density * size * size / 64)
        ys = rng.integers(0, size, n_dots)
        xs = rng.integers(0, size, n_dots)
        for y, x in zip(ys, xs):
            cv2.circle(tile, (int(x), int(y)), 3, 0.95, -1)
    elif params.family == "rings":
        n_centers = max(6, size // 24)
        cxs = rng.integers(0, size, n_centers)
        cys = rng.integers(0, size, n_centers)
        acc = np.zeros((size, size))
        for cx, cy in zip(cxs, cys):
            r = np.hypot(xx - cx, yy - cy)
            acc += np.sin(2 * np.pi * r / params.scale)
        tile = 0.3 + 0.55 * (acc > 0).astype(np.float64)
    else:
        raise ParameterError(f"unknown texture family: {params.family!r}")
    return tile


def tinted(tile: np.ndarray, tint) -> np.ndarray:
    """(H, W) in [0,1] -> (H, W, 3) float64 RGB in [0, 255]."""
    rgb = tile[:, :, None] * np.asarray(tint)[None, None, :]
    return np.clip(rgb * 255.0, 0, 255)


def background_canvas(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Low-texture sand: smooth undulation, no trackable corners."""
    coarse = rng.random((h // 16 + 1, w // 16 + 1))
    coarse = cv2.resize(coarse, (w, h), interpolation=cv2.INTER_CUBIC)
    canvas = BACKGROUND_RGB[None, None, :] * (0.94 + 0.12 * coarse[:, :, None])
    return np.clip(canvas, 0, 255)


def _noise(shape, level: float, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, 255.0 * 0.18 * level, shape)


def render_frame(
    tile_rgb: np.ndarray,
    region_xy: tuple[int, int],
    noise_level: float,
    rng: np.random.Generator,
    h: int = FRAME_H,
    w: int = FRAME_W,
) -> np.ndarray:
    """Background plus the textured region at region_xy, with shared noise."""
    frame = background_canvas(h, w, rng)
    x0, y0 = region_xy
    rh, rw = tile_rgb.shape[:2]
    frame[y0:y0 + rh, x0:x0 + rw] = tile_rgb
    gain = 1.0 + rng.uniform(-0.08, 0.08)
    frame = frame * gain + _noise(frame.shape, noise_level, rng)
    return np.clip(frame, 0, 255).astype(np.uint8)


def _write_video(frames: list[np.ndarray], path: Path, fps: float = 10.0) -> None:
    h, w = frames[0].shape[:2]
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, (w, h))
    if not writer.isOpened():
        raise ParameterError(f"cannot open video writer for {path}")
    for frame in frames:
        writer.write(cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))
    writer.release()


def generate_synthetic_corpus(spec: SyntheticCorpusSpec, seed: int, out_dir: str | Path) -> dict:
    """Write the full corpus and return a summary of what was created.

    Layout: videos/ (per-class plus one background-only), labeled/ crops
    with labels.jsonl, seg/ eval images + indexed masks + vocab.json, and
    spec.json recording the spec and seed.
    """
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    class_names = CLASS_NAMES[:spec.class_count]

    video_ids = []
    for ci, name in enumerate(class_names):
        rng = np.random.default_rng((seed, 1, ci))
        tile = tinted(texture_tile(spec.textures[ci], REGION, rng), spec.textures[ci].tint)
        frames = []
        x0, y0 = 10, (FRAME_H - REGION) // 2
        for f in range(spec.frames_per_video):
            x = int(round(x0 + f * spec.motion_px))
            x = min(x, FRAME_W - REGION - 1)
            frames.append(render_frame(tile, (x, y0), spec.noise_level, rng))
        vid = f"class{ci}_{name}"
        _write_video(frames, out / "videos" / f"{vid}.avi")
        video_ids.append(vid)

    # background-only video feeds the random-patch path
    rng = np.random.default_rng((seed, 2))
    bg_frames = []
    for f in range(spec.frames_per_video):
        frame = background_canvas(FRAME_H, FRAME_W, rng)
        frame = frame + _noise(frame.shape, spec.noise_level * 0.5, rng)
        bg_frames.append(np.clip(frame, 0, 255).astype(np.uint8))
    _write_video(bg_frames, out / "videos" / "background.avi")

    labels = _write_labeled_crops(spec, seed, out, class_names)
    seg_summary = _write_segmentation_set(spec, seed, out, class_names)

    (out / "spec.json").write_text(
        json.dumps({"spec": asdict(spec), "seed": seed, "classes": class_names},
                   indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return {
        "classes": class_names,
        "videos": video_ids + ["background"],
        "labeled_patches": len(labels),
        "seg_images": seg_summary["count"],
        "out": str(out),
    }


def _crop_from_fresh_frame(
    params: TextureParams,
    noise_level: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """A labeled crop rendered on a fresh frame, fully inside the region."""
    tile = tinted(texture_tile(params, REGION, rng), params.tint)
    x0 = int(rng.integers(0, FRAME_W - REGION))
    y0 = int(rng.integers(0, FRAME_H - REGION))
    frame = render_frame(tile, (x0, y0), noise_level, rng)
    margin = 16
    cx = int(rng.integers(x0 + margin, x0 + REGION - CROP - margin))
    cy = int(rng.integers(y0 + margin, y0 + REGION - CROP - margin))
    return frame[cy:cy + CROP, cx:cx + CROP]


def _write_labeled_crops(spec, seed, out: Path, class_names: list[str]) -> list[dict]:
    records = []
    for split, stream in (("train", 3), ("test", 4)):
        for ci, name in enumerate(class_names):
            rng = np.random.default_rng((seed, stream, ci))
            split_dir = out / "labeled" / split / name
            split_dir.mkdir(parents=True, exist_ok=True)
            for k in range(spec.crops_per_class):
                crop = _crop_from_fresh_frame(spec.textures[ci], spec.noise_level, rng)
                rel = f"labeled/{split}/{name}/{k:03d}.png"
                cv2.imwrite(str(out / rel), cv2.cvtColor(crop, cv2.COLOR_RGB2BGR))
                records.append({
                    "id": f"{split}-{name}-{k:03d}",
                    "path": rel,
                    "label": name,
                    "split": split,
                })
    with open(out / "labels.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return records


def _write_segmentation_set(spec, seed, out: Path, class_names: list[str]) -> dict:
    """Eval images with 2-3 planted class regions over sand, plus GT masks."""
    seg = out / "seg"
    (seg / "images").mkdir(parents=True, exist_ok=True)
    (seg / "masks").mkdir(parents=True, exist_ok=True)
    (seg / "bg_exemplars").mkdir(parents=True, exist_ok=True)
    vocab = ["background"] + class_names
    (seg / "vocab.json").write_text(json.dumps(vocab, indent=1) + "\n", encoding="utf-8")

    anchors = [(32, 32), (32, SEG_SIZE - SEG_REGION - 32),
               (SEG_SIZE - SEG_REGION - 32, 32),
               (SEG_SIZE - SEG_REGION - 32, SEG_SIZE - SEG_REGION - 32)]
    for i in range(spec.seg_images):
        rng = np.random.default_rng((seed, 5, i))
        canvas = background_canvas(SEG_SIZE, SEG_SIZE, rng)
        mask = np.zeros((SEG_SIZE, SEG_SIZE), dtype=np.uint8)
        n_regions = 2 + (i % 2)
        class_picks = rng.choice(len(class_names), size=n_regions, replace=False)
        spot_picks = rng.choice(len(anchors), size=n_regions, replace=False)
        for ci, si in zip(class_picks, spot_picks):
            params = spec.textures[int(ci)]
            tile = tinted(texture_tile(params, SEG_REGION, rng), params.tint)
            y0, x0 = anchors[int(si)]
            canvas[y0:y0 + SEG_REGION, x0:x0 + SEG_REGION] = tile
            mask[y0:y0 + SEG_REGION, x0:x0 + SEG_REGION] = int(ci) + 1
        canvas = np.clip(canvas + _noise(canvas.shape, spec.noise_level, rng), 0, 255)
        cv2.imwrite(str(seg / "images" / f"{i:03d}.png"),
                    cv2.cvtColor(canvas.astype(np.uint8), cv2.COLOR_RGB2BGR))
        cv2.imwrite(str(seg / "masks" / f"{i:03d}.png"), mask)

    rng = np.random.default_rng((seed, 6))
    for k in range(10):
        canvas = background_canvas(FRAME_H, FRAME_W, rng)
        canvas = np.clip(canvas + _noise(canvas.shape, spec.noise_level * 0.5, rng), 0, 255)
        cx = int(rng.integers(0, FRAME_W - CROP))
        cy = int(rng.integers(0, FRAME_H - CROP))
        crop = canvas[cy:cy + CROP, cx:cx + CROP].astype(np.uint8)
        cv2.imwrite(str(seg / "bg_exemplars" / f"{k:02d}.png"),
                    cv2.cvtColor(crop, cv2.COLOR_RGB2BGR))
    return {"count": spec.seg_images, "vocab": vocab}
