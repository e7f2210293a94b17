"""Tracked-patch mining from video: keypoint detection, brute-force matching,
chain tracking, and random patch sampling for textureless frames.

Patches are 128x128 RGB crops. Tracked chains become PatchSequences; frames
with too few keypoints contribute RANDOM singleton patches instead.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import cv2
import numpy as np

from .errors import IngestError

PATCH_SIZE = 128
HALF_PATCH = PATCH_SIZE // 2
SHORT_SIDE = 512
DESCRIPTOR_BITS = 256

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
VIDEO_EXTENSIONS = {".avi", ".mp4", ".mov", ".mkv", ".mpg", ".mpeg", ".webm"}

# popcount of every byte value, for Hamming distances over packed descriptors
_POPCOUNT = np.array([bin(v).count("1") for v in range(256)], dtype=np.uint16)


@dataclass
class Frame:
    video_id: str
    index: int          # post-stride index, 0-based
    pixels: np.ndarray  # HxWx3 RGB uint8


@dataclass
class Keypoint:
    position: tuple[float, float]  # (x, y)
    descriptor: np.ndarray         # 32 bytes, packed 256-bit
    frame_index: int


@dataclass
class Match:
    prev_index: int
    cur_index: int
    distance: int


@dataclass
class Patch:
    pixels: np.ndarray  # 128x128x3 RGB uint8
    video_id: str
    frame_index: int
    center: tuple[int, int]  # (x, y)
    origin: str              # "TRACKED" | "RANDOM"


@dataclass
class PatchSequence:
    id: str
    video_id: str
    patches: list[Patch]

    @property
    def origin(self) -> str:
        return self.patches[0].origin


@dataclass
class IngestConfig:
    stride: int = 1
    max_kp: int = 500
    max_distance: int = 64
    top_k: int = 20
    min_length: int = 2
    texture_threshold: int = 10
    random_per_frame: int = 4
    seed: int = 0


def decode_video(path: str | Path, frame_stride: int = 1) -> Iterator[Frame]:
    """Yield every frame_stride-th frame of a video, re-indexed from 0.

    Frames are converted to RGB and resized so the short side is 512 px.
    Raises IngestError if the file cannot be opened or holds no frames.
    """
    path = Path(path)
    if frame_stride < 1:
        raise IngestError(f"frame_stride must be >= 1, got {frame_stride}")
    if not path.exists():
        raise IngestError(f"video not found: {path}")
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise IngestError(f"cannot open video: {path}")
    video_id = path.stem
    raw = 0
    emitted = 0
    try:
        while True:
            ok, bgr = cap.read()
            if not ok:
                break
            if raw % frame_stride == 0:
                rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
                yield Frame(video_id, emitted, _resize_short_side(rgb))
                emitted += 1
            raw += 1
    finally:
        cap.release()
    if emitted == 0:
        raise IngestError(f"no decodable frames in: {path}")


def frames_from_directory(path: str | Path, frame_stride: int = 1) -> Iterator[Frame]:
    """Treat a directory of still images (sorted by name) as a frame stream."""
    path = Path(path)
    if frame_stride < 1:
        raise IngestError(f"frame_stride must be >= 1, got {frame_stride}")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not files:
        raise IngestError(f"no images in directory: {path}")
    emitted = 0
    for raw, file in enumerate(files):
        if raw % frame_stride != 0:
            continue
        bgr = cv2.imread(str(file), cv2.IMREAD_COLOR)
        if bgr is None:
            raise IngestError(f"unreadable image: {file}")
        rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
        yield Frame(path.name, emitted, _resize_short_side(rgb))
        emitted += 1


def _resize_short_side(rgb: np.ndarray, target: int = SHORT_SIDE) -> np.ndarray:
    h, w = rgb.shape[:2]
    short = min(h, w)
    if short == target:
        return rgb
    scale = target / short
    new_w = max(target, int(round(w * scale)))
    new_h = max(target, int(round(h * scale)))
    interp = cv2.INTER_AREA if scale < 1 else cv2.INTER_LINEAR
    return cv2.resize(rgb, (new_w, new_h), interpolation=interp)


def detect_keypoints(frame: Frame, max_kp: int = 500) -> list[Keypoint]:
    """ORB keypoints with packed 256-bit descriptors, at most max_kp of them.

    Deterministic for identical frame bytes. A textureless frame yields [].
    """
    gray = cv2.cvtColor(frame.pixels, cv2.COLOR_RGB2GRAY)
    orb = cv2.ORB_create(nfeatures=max_kp)
    kps, descs = orb.detectAndCompute(gray, None)
    if descs is None:
        return []
    out = []
    for kp, desc in zip(kps, descs):
        out.append(Keypoint((float(kp.pt[0]), float(kp.pt[1])), desc.copy(), frame.index))
    return out


def hamming_distances(prev_desc: np.ndarray, cur_desc: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distance matrix between packed descriptor arrays."""
    xored = prev_desc[:, None, :] ^ cur_desc[None, :, :]
    return _POPCOUNT[xored].sum(axis=2).astype(np.int64)


def match_keypoints(
    prev: list[Keypoint],
    cur: list[Keypoint],
    max_distance: int = 64,
    top_k: int = 20,
) -> list[Match]:
    """Greedy one-to-one matching over all descriptor pairs.

    Pairs are considered in ascending (distance, prev_index, cur_index)
    order; each side of a retained match is consumed. At most top_k matches
    are kept, all with distance <= max_distance.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    if not prev or not cur:
        return []
    pd = np.stack([kp.descriptor for kp in prev])
    cd = np.stack([kp.descriptor for kp in cur])
    dist = hamming_distances(pd, cd)
    ii, jj = np.nonzero(dist <= max_distance)
    if ii.size == 0:
        return []
    dd = dist[ii, jj]
    order = np.lexsort((jj, ii, dd))
    used_prev: set[int] = set()
    used_cur: set[int] = set()
    matches: list[Match] = []
    for idx in order:
        i, j = int(ii[idx]), int(jj[idx])
        if i in used_prev or j in used_cur:
            continue
        used_prev.add(i)
        used_cur.add(j)
        matches.append(Match(i, j, int(dd[idx])))
        if len(matches) == top_k:
            break
    return matches


def extract_patch(frame: Frame, center: tuple[float, float], origin: str) -> Patch | None:
    """Crop the 128x128 window around center, or None if it exits the frame."""
    cx, cy = int(round(center[0])), int(round(center[1]))
    h, w = frame.pixels.shape[:2]
    if cx < HALF_PATCH or cy < HALF_PATCH or cx > w - HALF_PATCH or cy > h - HALF_PATCH:
        return None
    crop = frame.pixels[cy - HALF_PATCH:cy + HALF_PATCH, cx - HALF_PATCH:cx + HALF_PATCH]
    return Patch(crop.copy(), frame.video_id, frame.index, (cx, cy), origin)


def valid_center_grid(h: int, w: int) -> tuple[int, int]:
    """Number of valid integer patch centers along (y, x)."""
    return max(0, h - PATCH_SIZE + 1), max(0, w - PATCH_SIZE + 1)


def sample_random_patches(
    frame: Frame,
    n: int,
    keypoint_count: int,
    config: IngestConfig,
) -> list[Patch]:
    """Uniform RANDOM patches from a textureless frame.

    Returns [] when the frame has at least config.texture_threshold
    keypoints. Centers are distinct; fewer than n are returned when the
    frame admits fewer valid centers.
    """
    if keypoint_count >= config.texture_threshold:
        return []
    h, w = frame.pixels.shape[:2]
    ny, nx = valid_center_grid(h, w)
    total = ny * nx
    if total == 0 or n <= 0:
        return []
    rng = np.random.default_rng(
        (config.seed, zlib.crc32(frame.video_id.encode()), frame.index)
    )
    picks = rng.choice(total, size=min(n, total), replace=False)
    patches = []
    for flat in np.sort(picks):
        gy, gx = divmod(int(flat), nx)
        patch = extract_patch(frame, (gx + HALF_PATCH, gy + HALF_PATCH), "RANDOM")
        assert patch is not None  # centers come from the valid grid
        patches.append(patch)
    return patches


@dataclass
class _Chain:
    patches: list[Patch]
    last_kp: int          # index into the previous frame's keypoint list
    alive: bool = True


def track_sequences(frames: Iterable[Frame], config: IngestConfig) -> list[PatchSequence]:
    """Track keypoint chains across consecutive frames of one video.

    A chain breaks when its keypoint goes unmatched for one frame pair or
    when its patch window exits the frame. TRACKED sequences shorter than
    config.min_length are discarded; RANDOM singletons are always kept.
    """
    finished: list[list[Patch]] = []
    randoms: list[Patch] = []
    chains: list[_Chain] = []
    prev_frame: Frame | None = None
    prev_kps: list[Keypoint] = []
    video_id = None

    for frame in frames:
        if video_id is None:
            video_id = frame.video_id
        kps = detect_keypoints(frame, config.max_kp)
        randoms.extend(
            sample_random_patches(frame, config.random_per_frame, len(kps), config)
        )
        if prev_frame is not None:
            matches = match_keypoints(prev_kps, kps, config.max_distance, config.top_k)
            by_prev = {m.prev_index: m for m in matches}
            survivors: dict[int, _Chain] = {}
            for chain in chains:
                m = by_prev.pop(chain.last_kp, None)
                if m is None:
                    finished.append(chain.patches)
                    continue
                patch = extract_patch(frame, kps[m.cur_index].position, "TRACKED")
                if patch is None:
                    finished.append(chain.patches)
                    continue
                chain.patches.append(patch)
                survivors[m.cur_index] = chain
            # matches whose prev keypoint was not part of a chain start one
            for prev_idx in sorted(by_prev):
                m = by_prev[prev_idx]
                if m.cur_index in survivors:
                    continue
                first = extract_patch(prev_frame, prev_kps[prev_idx].position, "TRACKED")
                if first is None:
                    continue
                second = extract_patch(frame, kps[m.cur_index].position, "TRACKED")
                if second is None:
                    finished.append([first])
                    continue
                survivors[m.cur_index] = _Chain([first, second], m.cur_index)
            for cur_idx, chain in survivors.items():
                chain.last_kp = cur_idx
            chains = list(survivors.values())
        prev_frame = frame
        prev_kps = kps

    if video_id is None:
        return []
    finished.extend(chain.patches for chain in chains)

    sequences: list[PatchSequence] = []
    counter = 0
    tracked = [p for p in finished if len(p) >= config.min_length]
    tracked.sort(key=lambda ps: (ps[0].frame_index, ps[0].center))
    # ids embed the video so they stay unique across a multi-video manifest
    for patches in tracked:
        sequences.append(PatchSequence(f"{video_id}-s{counter:05d}", video_id, patches))
        counter += 1
    for patch in randoms:
        sequences.append(PatchSequence(f"{video_id}-s{counter:05d}", video_id, [patch]))
        counter += 1
    return sequences


# ---------------------------------------------------------------------------
# patch store


def write_sequences(sequences: list[PatchSequence], out_dir: str | Path) -> list[dict]:
    """Persist patches under out_dir/patches/<video>/<seq>/<frame>.png.

    Returns the manifest records (one dict per patch) in deterministic order.
    """
    out_dir = Path(out_dir)
    records = []
    for seq in sequences:
        seq_dir = out_dir / "patches" / seq.video_id / seq.id
        seq_dir.mkdir(parents=True, exist_ok=True)
        for patch in seq.patches:
            name = f"{patch.frame_index:05d}.png"
            bgr = cv2.cvtColor(patch.pixels, cv2.COLOR_RGB2BGR)
            if not cv2.imwrite(str(seq_dir / name), bgr):
                raise IngestError(f"failed to write patch: {seq_dir / name}")
            records.append({
                "video_id": seq.video_id,
                "seq_id": seq.id,
                "frame_index": patch.frame_index,
                "cx": patch.center[0],
                "cy": patch.center[1],
                "origin": patch.origin,
                "path": f"patches/{seq.video_id}/{seq.id}/{name}",
            })
    return records


def write_manifest(records: list[dict], out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def read_manifest(manifest: str | Path) -> list[dict]:
    manifest = Path(manifest)
    if not manifest.exists():
        raise IngestError(f"manifest not found: {manifest}")
    with open(manifest, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def discover_videos(root: str | Path) -> list[Path]:
    """Video files and image directories under root, sorted by name."""
    root = Path(root)
    if not root.exists():
        raise IngestError(f"input directory not found: {root}")
    found = []
    for entry in sorted(root.iterdir()):
        if entry.is_file() and entry.suffix.lower() in VIDEO_EXTENSIONS:
            found.append(entry)
        elif entry.is_dir() and any(
            p.suffix.lower() in IMAGE_EXTENSIONS for p in entry.iterdir()
        ):
            found.append(entry)
    return found


def extract_dataset(videos_dir: str | Path, out_dir: str | Path, config: IngestConfig) -> Path:
    """Run tracking over every video under videos_dir and write the store."""
    sources = discover_videos(videos_dir)
    if not sources:
        raise IngestError(f"no videos or image directories under {videos_dir}")
    all_records: list[dict] = []
    for src in sources:
        if src.is_dir():
            stream = frames_from_directory(src, config.stride)
        else:
            stream = decode_video(src, config.stride)
        sequences = track_sequences(stream, config)
        all_records.extend(write_sequences(sequences, out_dir))
    return write_manifest(all_records, out_dir)
