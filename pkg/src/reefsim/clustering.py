"""Bottom-up Ward clustering of patch-sequence representatives, with an
append-only merge log that captures both automatic merges and the
operator's weak-supervision edits.

Cluster ids are the initial singleton indices (one per representative, in
input order); a merge keeps the lowest participating id. The log replays
from the singleton state to reconstruct any snapshot, and an undo is a
log entry of its own, so the file stays append-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import NotFoundError, ParameterError

AUTO = "AUTO"
HUMAN = "HUMAN"


@dataclass
class Representative:
    seq_id: str
    patch: Any                        # the picked member (manifest record)
    pick_index: int
    embedding: np.ndarray | None = None


@dataclass
class LineageEntry:
    step: int
    timestamp: int                    # logical clock; equals step
    op: str                           # "merge" | "undo"
    sources: list[int]
    target: int | None
    actor: str                        # AUTO | HUMAN

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(rec: dict) -> "LineageEntry":
        return LineageEntry(
            rec["step"], rec["timestamp"], rec["op"],
            list(rec["sources"]), rec["target"], rec["actor"],
        )


@dataclass
class ClusterSet:
    seq_order: list[str]                  # initial singleton order; id = index
    clusters: dict[int, set[str]]         # current partition
    endpoints: dict[str, list[dict]]      # seq_id -> first/last patch records
    lineage: list[LineageEntry] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def members(self, cluster_id: int) -> list[dict]:
        """Materialized patch records of a cluster, ordered by (seq_id, frame)."""
        if cluster_id not in self.clusters:
            raise NotFoundError(f"unknown cluster id: {cluster_id}")
        out = []
        for seq_id in sorted(self.clusters[cluster_id]):
            out.extend(self.endpoints.get(seq_id, []))
        return sorted(out, key=lambda r: (r["seq_id"], r["frame_index"]))

    def check_partition(self) -> None:
        seen: set[str] = set()
        for cid, seqs in self.clusters.items():
            if not seqs:
                raise ParameterError(f"cluster {cid} is empty")
            overlap = seen & seqs
            if overlap:
                raise ParameterError(f"sequences in two clusters: {sorted(overlap)[:3]}")
            seen |= seqs
        if seen != set(self.seq_order):
            missing = set(self.seq_order) - seen
            raise ParameterError(f"partition does not cover all sequences: {sorted(missing)[:3]}")


def group_manifest(records: list[dict]) -> dict[str, list[dict]]:
    """Manifest records grouped by seq_id, each group ordered by frame index."""
    groups: dict[str, list[dict]] = {}
    for rec in records:
        groups.setdefault(rec["seq_id"], []).append(rec)
    for seq in groups.values():
        seq.sort(key=lambda r: r["frame_index"])
    return groups


def pick_representatives(
    sequences: dict[str, list[Any]] | list[tuple[str, list[Any]]],
    rng_seed: int = 0,
) -> list[Representative]:
    """One uniformly sampled member per sequence, deterministic given the seed."""
    items = sorted(sequences.items()) if isinstance(sequences, dict) else list(sequences)
    if not items:
        raise ParameterError("no sequences to pick representatives from")
    rng = np.random.default_rng(rng_seed)
    reps = []
    for seq_id, members in items:
        idx = int(rng.integers(len(members)))
        reps.append(Representative(seq_id, members[idx], idx))
    return reps


def agglomerate(reps: list[Representative], target_k: int) -> ClusterSet:
    """Ward-linkage agglomeration on representative embeddings down to target_k.

    Each merge joins the pair with the smallest increase in within-cluster
    sum of squares; exact ties resolve to the smallest (id_a, id_b) pair.
    """
    if target_k <= 0:
        raise ParameterError(f"target_k must be positive, got {target_k}")
    n = len(reps)
    if target_k > n:
        raise ParameterError(f"target_k={target_k} exceeds representative count {n}")
    if any(r.embedding is None for r in reps):
        raise ParameterError("representatives must carry embeddings")

    points = np.stack([np.asarray(r.embedding, dtype=np.float64) for r in reps])
    sizes = np.ones(n)
    centroids = points.copy()
    active = np.ones(n, dtype=bool)

    # singleton cost is half the squared distance; gram trick keeps the
    # initialization O(n^2 d) through BLAS
    sq = np.einsum("ij,ij->i", centroids, centroids)
    sqdist = np.maximum(sq[:, None] + sq[None, :] - 2.0 * centroids @ centroids.T, 0.0)
    cost = np.full((n, n), np.inf)
    upper = np.triu_indices(n, k=1)
    cost[upper] = 0.5 * sqdist[upper]

    cs = ClusterSet(
        seq_order=[r.seq_id for r in reps],
        clusters={i: {reps[i].seq_id} for i in range(n)},
        endpoints={},
    )
    k = n
    step = 0
    while k > target_k:
        # argmin scans row-major, so exact ties resolve to the smallest (i, j)
        flat = np.argmin(cost)
        i, j = divmod(int(flat), n)
        cs.clusters[i] |= cs.clusters.pop(j)
        cs.lineage.append(LineageEntry(step, step, "merge", [i, j], i, AUTO))
        step += 1
        centroids[i] = (sizes[i] * centroids[i] + sizes[j] * centroids[j]) / (sizes[i] + sizes[j])
        sizes[i] += sizes[j]
        active[j] = False
        cost[j, :] = np.inf
        cost[:, j] = np.inf
        others = np.nonzero(active)[0]
        others = others[others != i]
        if len(others):
            diffs = centroids[others] - centroids[i]
            d2 = np.einsum("ij,ij->i", diffs, diffs)
            merged = sizes[i] * sizes[others] / (sizes[i] + sizes[others]) * d2
            below = others < i
            cost[others[below], i] = merged[below]
            cost[i, others[~below]] = merged[~below]
        k -= 1
    cs.check_partition()
    return cs


def materialize(cs: ClusterSet, sequences: dict[str, list[dict]]) -> ClusterSet:
    """Fill each sequence's endpoint patches (first and last member).

    The partition itself is untouched; a length-1 sequence contributes a
    single patch.
    """
    covered = {s for seqs in cs.clusters.values() for s in seqs}
    missing = covered - set(sequences)
    if missing:
        raise ParameterError(f"sequences missing from manifest: {sorted(missing)[:3]}")
    for seq_id in covered:
        members = sequences[seq_id]
        cs.endpoints[seq_id] = [members[0]] if len(members) == 1 else [members[0], members[-1]]
    return cs


def merge(cs: ClusterSet, ids: Sequence[int], actor: str = HUMAN) -> ClusterSet:
    """Union the named clusters under the lowest id and append to the log."""
    ids = list(ids)
    if len(ids) < 2 or len(set(ids)) != len(ids):
        raise ParameterError(f"merge needs >= 2 distinct cluster ids, got {ids}")
    for cid in ids:
        if cid not in cs.clusters:
            raise NotFoundError(f"unknown cluster id: {cid}")
    target = min(ids)
    for cid in ids:
        if cid != target:
            cs.clusters[target] |= cs.clusters.pop(cid)
    step = len(cs.lineage)
    cs.lineage.append(LineageEntry(step, step, "merge", sorted(ids), target, actor))
    return cs


def undo(cs: ClusterSet) -> tuple[ClusterSet, bool]:
    """Append an undo entry cancelling the most recent live HUMAN merge.

    Returns (cluster set, applied). applied is False when there is nothing
    to undo; no entry is appended in that case.
    """
    if _last_live_human_merge(cs.lineage) is None:
        return cs, False
    step = len(cs.lineage)
    cs.lineage.append(LineageEntry(step, step, "undo", [], None, HUMAN))
    rebuilt = replay(cs.seq_order, cs.lineage, cs.endpoints, cs.meta)
    return rebuilt, True


def _last_live_human_merge(lineage: list[LineageEntry]) -> int | None:
    undone = 0
    for idx in range(len(lineage) - 1, -1, -1):
        entry = lineage[idx]
        if entry.op == "undo":
            undone += 1
        elif entry.actor == HUMAN and entry.op == "merge":
            if undone == 0:
                return idx
            undone -= 1
    return None


def replay(
    seq_order: list[str],
    lineage: list[LineageEntry],
    endpoints: dict[str, list[dict]] | None = None,
    meta: dict | None = None,
) -> ClusterSet:
    """Rebuild the partition from the singleton state by applying the log.

    Undo entries cancel their matching HUMAN merge; AUTO merges are immutable.
    """
    live: list[LineageEntry] = []
    for entry in lineage:
        if entry.op == "undo":
            for idx in range(len(live) - 1, -1, -1):
                if live[idx].actor == HUMAN and live[idx].op == "merge":
                    del live[idx]
                    break
        else:
            live.append(entry)
    cs = ClusterSet(
        seq_order=list(seq_order),
        clusters={i: {seq_id} for i, seq_id in enumerate(seq_order)},
        endpoints=dict(endpoints or {}),
        lineage=list(lineage),
        meta=dict(meta or {}),
    )
    for entry in live:
        target = entry.target
        for cid in entry.sources:
            if cid == target:
                continue
            cs.clusters[target] |= cs.clusters.pop(cid)
    cs.check_partition()
    return cs


# ---------------------------------------------------------------------------
# cluster store


class ClusterStore:
    """Directory holding clusters.json (snapshot) and lineage.jsonl (log)."""

    SNAPSHOT = "clusters.json"
    LINEAGE = "lineage.jsonl"

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def save(self, cs: ClusterSet) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        snapshot = {
            "seq_order": cs.seq_order,
            "clusters": {str(cid): sorted(seqs) for cid, seqs in sorted(cs.clusters.items())},
            "endpoints": {k: cs.endpoints[k] for k in sorted(cs.endpoints)},
            "meta": cs.meta,
        }
        (self.root / self.SNAPSHOT).write_text(
            json.dumps(snapshot, indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )
        with open(self.root / self.LINEAGE, "w", encoding="utf-8") as fh:
            for entry in cs.lineage:
                fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")

    def load(self) -> ClusterSet:
        snap_path = self.root / self.SNAPSHOT
        if not snap_path.exists():
            raise NotFoundError(f"cluster store not found: {snap_path}")
        snap = json.loads(snap_path.read_text(encoding="utf-8"))
        lineage = []
        lineage_path = self.root / self.LINEAGE
        if lineage_path.exists():
            with open(lineage_path, encoding="utf-8") as fh:
                lineage = [LineageEntry.from_json(json.loads(line)) for line in fh if line.strip()]
        cs = ClusterSet(
            seq_order=snap["seq_order"],
            clusters={int(cid): set(seqs) for cid, seqs in snap["clusters"].items()},
            endpoints=snap.get("endpoints", {}),
            lineage=lineage,
            meta=snap.get("meta", {}),
        )
        cs.check_partition()
        return cs
