"""Triplet fine-tuning of the backbone on cluster-conditioned patches.

Batches are assembled as P clusters x K patches; within each batch every
in-cluster (anchor, positive) pair is given a semi-hard negative when one
exists, the hardest not-easy negative otherwise. Distances are cosine
distances (1 - dot) between unit-normalized flattened descriptors.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import cv2
import numpy as np
import torch

from .clustering import ClusterSet
from .encoder import Encoder, load_backbone
from .errors import ConfigurationError, ContractViolation, DivergenceError

log = logging.getLogger(__name__)

_NORM_TOL = 1e-4
_HOLDOUT_SIZE = 512
_DIVERGENCE_STEPS = 100


@dataclass
class Triplet:
    anchor: Any
    positive: Any
    negative: Any
    cluster_ap: int
    cluster_n: int

    def key(self) -> tuple:
        return (_ref_key(self.anchor), _ref_key(self.positive), _ref_key(self.negative))


def _ref_key(ref) -> Any:
    if isinstance(ref, dict):
        return (ref["seq_id"], ref["frame_index"])
    return ref


@dataclass
class TrainConfig:
    margin: float = 0.5
    learning_rate: float = 0.0006
    batch_p: int = 8
    batch_k: int = 4
    steps: int = 5000
    seed: int = 0
    init: str = "pretrained"
    eval_every: int = 50

    def __post_init__(self):
        if self.margin <= 0:
            raise ConfigurationError(f"margin must be positive, got {self.margin}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")


def cosine_distance(u, v):
    """1 - <u, v> for unit vectors; in [0, 2].

    Accepts numpy arrays, FlatDescriptors, or torch tensors (differentiable).
    """
    u = getattr(u, "values", u)
    v = getattr(v, "values", v)
    if isinstance(u, torch.Tensor):
        for t in (u, v):
            n = float(torch.linalg.vector_norm(t.detach()))
            if abs(n - 1.0) > _NORM_TOL:
                raise ContractViolation(f"cosine_distance input norm {n:.6f} != 1")
        return 1.0 - torch.dot(u, v)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    for t in (u, v):
        n = float(np.linalg.norm(t))
        if abs(n - 1.0) > _NORM_TOL:
            raise ContractViolation(f"cosine_distance input norm {n:.6f} != 1")
    return float(1.0 - np.dot(u, v))


def triplet_loss(d_ap, d_an, m: float):
    """max(0, m + d_ap - d_an); zero exactly when the margin is satisfied."""
    if isinstance(d_ap, torch.Tensor) or isinstance(d_an, torch.Tensor):
        return torch.clamp(m + d_ap - d_an, min=0.0)
    return max(0.0, m + d_ap - d_an)


def normalize_rows(t: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.normalize(t, dim=-1)


def triplet_loss_from_raw(a: torch.Tensor, p: torch.Tensor, n: torch.Tensor, m: float) -> torch.Tensor:
    """Loss on raw (unnormalized) vectors; normalization is part of the graph."""
    a, p, n = normalize_rows(a), normalize_rows(p), normalize_rows(n)
    d_ap = 1.0 - (a * p).sum(-1)
    d_an = 1.0 - (a * n).sum(-1)
    return torch.clamp(m + d_ap - d_an, min=0.0)


def pairwise_cosine_distances(embeddings: torch.Tensor) -> torch.Tensor:
    return 1.0 - embeddings @ embeddings.T


def mine_semi_hard(batch: Sequence[tuple[Any, int, np.ndarray]], m: float) -> list[Triplet]:
    """Pick one negative per in-cluster (anchor, positive) pair.

    Preference order: the closest negative inside the margin band
    (d_ap < d_an < d_ap + m), then the farthest negative at or below d_ap.
    Pairs whose negatives are all easy (d_an >= d_ap + m, or exactly on the
    band edge) are dropped. Ties resolve to the lowest batch index.
    """
    refs = [b[0] for b in batch]
    clusters = np.array([b[1] for b in batch])
    emb = np.stack([np.asarray(b[2], dtype=np.float64) for b in batch])
    dist = 1.0 - emb @ emb.T
    out: list[Triplet] = []
    n_items = len(batch)
    for a in range(n_items):
        for p in range(n_items):
            if a == p or clusters[a] != clusters[p]:
                continue
            d_ap = dist[a, p]
            best_semi = None
            best_fallback = None
            for neg in range(n_items):
                if clusters[neg] == clusters[a]:
                    continue
                d_an = dist[a, neg]
                if d_ap < d_an < d_ap + m:
                    if best_semi is None or d_an < dist[a, best_semi]:
                        best_semi = neg
                elif d_an <= d_ap:
                    if best_fallback is None or d_an > dist[a, best_fallback]:
                        best_fallback = neg
            pick = best_semi if best_semi is not None else best_fallback
            if pick is None:
                continue
            out.append(Triplet(refs[a], refs[p], refs[pick],
                               int(clusters[a]), int(clusters[pick])))
    return out


def sample_triplets(cs: ClusterSet, count: int, seed: int = 0) -> list[Triplet]:
    """count triplets with anchors spread evenly over eligible clusters.

    A cluster needs at least 2 member patches to provide (anchor, positive)
    pairs; smaller clusters are skipped with a warning. Negatives come from
    any other cluster.
    """
    if len(cs.clusters) < 2:
        raise ConfigurationError("triplet sampling needs at least 2 clusters")
    members = {cid: cs.members(cid) for cid in sorted(cs.clusters)}
    eligible = [cid for cid, pats in members.items() if len(pats) >= 2]
    skipped = sorted(set(members) - set(eligible))
    if skipped:
        log.warning("clusters with < 2 patches skipped as anchor sources: %s", skipped)
    if not eligible:
        raise ConfigurationError("no cluster has >= 2 patches to anchor triplets")

    rng = np.random.default_rng(seed)
    base, extra = divmod(count, len(eligible))
    counts = {cid: base for cid in eligible}
    for cid in rng.permutation(eligible)[:extra]:
        counts[int(cid)] += 1

    triplets: list[Triplet] = []
    for cid in eligible:
        pats = members[cid]
        other_ids = [o for o in members if o != cid and members[o]]
        for _ in range(counts[cid]):
            a_idx, p_idx = rng.choice(len(pats), size=2, replace=False)
            n_cluster = int(other_ids[rng.integers(len(other_ids))])
            n_pats = members[n_cluster]
            n_idx = int(rng.integers(len(n_pats)))
            triplets.append(Triplet(pats[int(a_idx)], pats[int(p_idx)], n_pats[n_idx],
                                    cid, n_cluster))
    return triplets


class PatchLoader:
    """Loads 128x128 RGB patches by manifest record, with an in-memory cache."""

    def __init__(self, patch_root: str | Path):
        self.root = Path(patch_root)
        self._cache: dict[str, np.ndarray] = {}

    def load(self, record: dict) -> np.ndarray:
        path = record["path"]
        if path not in self._cache:
            bgr = cv2.imread(str(self.root / path), cv2.IMREAD_COLOR)
            if bgr is None:
                raise ConfigurationError(f"patch image missing: {self.root / path}")
            self._cache[path] = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
        return self._cache[path]

    def stack(self, records: Sequence[dict]) -> np.ndarray:
        return np.stack([self.load(r) for r in records])


def evaluate_triplets(encoder: Encoder, triplets: list[Triplet], loader: PatchLoader,
                      margin: float, batch_size: int = 32) -> float:
    """Mean triplet loss over a fixed triplet list, in inference mode."""
    records = {}
    for t in triplets:
        for r in (t.anchor, t.positive, t.negative):
            records[_ref_key(r)] = r
    keys = sorted(records)
    images = loader.stack([records[k] for k in keys])
    emb = encoder.embed_flat_batch(images, batch_size=batch_size)
    index = {k: i for i, k in enumerate(keys)}
    total = 0.0
    for t in triplets:
        a = emb[index[_ref_key(t.anchor)]]
        p = emb[index[_ref_key(t.positive)]]
        n = emb[index[_ref_key(t.negative)]]
        d_ap = float(1.0 - a @ p)
        d_an = float(1.0 - a @ n)
        total += triplet_loss(d_ap, d_an, margin)
    return total / len(triplets)


@dataclass
class TrainResult:
    encoder: Encoder
    log: list[dict] = field(default_factory=list)
    initial_holdout_loss: float = 0.0
    final_holdout_loss: float = 0.0


def train(cs: ClusterSet, config: TrainConfig, patch_root: str | Path,
          encoder: Encoder | None = None) -> TrainResult:
    """Fine-tune the backbone for config.steps optimizer steps.

    Emits a per-step log (step, loss, active fraction, mined count) and a
    held-out triplet loss measured before and after training.
    """
    if len(cs.clusters) < 2:
        raise ConfigurationError("training needs at least 2 clusters")
    if encoder is None:
        encoder = load_backbone(config.init, seed=config.seed)
    loader = PatchLoader(patch_root)

    members = {cid: cs.members(cid) for cid in sorted(cs.clusters)}
    eligible = [cid for cid, pats in members.items() if len(pats) >= 2]
    if not eligible:
        raise ConfigurationError("no cluster has >= 2 patches to anchor triplets")

    holdout = sample_triplets(cs, _HOLDOUT_SIZE, seed=config.seed * 1000 + 77)
    initial_loss = evaluate_triplets(encoder, holdout, loader, config.margin)

    result = TrainResult(encoder, initial_holdout_loss=initial_loss)
    if config.steps == 0:
        result.final_holdout_loss = initial_loss
        return result

    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    optimizer = torch.optim.Adam(encoder.trunk.parameters(), lr=config.learning_rate)
    diverged_for = 0

    for step in range(config.steps):
        batch_records, batch_clusters = _assemble_batch(members, eligible, config, rng)
        images = loader.stack(batch_records)

        feats = encoder.forward_raw(images, train=True)
        emb = normalize_rows(feats.permute(0, 2, 3, 1).reshape(len(images), -1))
        dist = pairwise_cosine_distances(emb)

        mined = mine_semi_hard(
            [(i, batch_clusters[i], e) for i, e in enumerate(emb.detach().numpy())],
            config.margin,
        )
        if not mined:
            result.log.append({"step": step, "loss": 0.0, "active_fraction": 0.0, "mined": 0})
            diverged_for = 0
            continue
        a_idx = torch.tensor([t.anchor for t in mined])
        p_idx = torch.tensor([t.positive for t in mined])
        n_idx = torch.tensor([t.negative for t in mined])
        losses = torch.clamp(config.margin + dist[a_idx, p_idx] - dist[a_idx, n_idx], min=0.0)
        loss = losses.mean()

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        mean_loss = float(loss.detach())
        active = float((losses.detach() > 0).float().mean())
        result.log.append({"step": step, "loss": mean_loss,
                           "active_fraction": active, "mined": len(mined)})

        diverged_for = diverged_for + 1 if mean_loss > 10 * config.margin else 0
        if diverged_for >= _DIVERGENCE_STEPS:
            raise DivergenceError(
                f"mean batch loss stayed above {10 * config.margin} for "
                f"{_DIVERGENCE_STEPS} consecutive steps (last={mean_loss:.4f})"
            )
        if config.eval_every and (step + 1) % config.eval_every == 0:
            hl = evaluate_triplets(encoder, holdout, loader, config.margin)
            result.log.append({"step": step, "holdout_loss": hl})

    encoder.trunk.eval()
    result.final_holdout_loss = evaluate_triplets(encoder, holdout, loader, config.margin)
    if result.final_holdout_loss > result.initial_holdout_loss:
        log.warning(
            "held-out loss rose over training (%.4f -> %.4f); the step budget "
            "is likely too small", result.initial_holdout_loss, result.final_holdout_loss,
        )
    return result


def _assemble_batch(members: dict[int, list[dict]], eligible: list[int],
                    config: TrainConfig, rng: np.random.Generator):
    """P clusters x K patches; every selected cluster contributes >= 2 distinct."""
    n_clusters = min(config.batch_p, len(eligible))
    picked = rng.choice(len(eligible), size=n_clusters, replace=False)
    records: list[dict] = []
    clusters: list[int] = []
    for ci in picked:
        cid = eligible[int(ci)]
        pats = members[cid]
        if len(pats) >= config.batch_k:
            idx = rng.choice(len(pats), size=config.batch_k, replace=False)
        else:
            idx = np.concatenate([
                np.arange(len(pats)),
                rng.choice(len(pats), size=config.batch_k - len(pats), replace=True),
            ])
        for i in idx:
            records.append(pats[int(i)])
            clusters.append(cid)
    return records, clusters


def write_train_log(records: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path
