"""End-to-end orchestration: synth -> extract -> cluster -> annotate ->
train -> eval -> simulate, with per-stage skip-on-rerun and a run report.

Each stage directory carries the hash of the config slice that produced it;
a rerun with the same slice and intact outputs is skipped, so a failed run
resumes where it stopped.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from collections import Counter
from pathlib import Path

import cv2
import numpy as np
import yaml

from . import report as figures
from .clustering import (ClusterStore, HUMAN, agglomerate, group_manifest,
                         materialize, merge, pick_representatives)
from .encoder import load_backbone, load_checkpoint, save_checkpoint
from .errors import ConfigurationError
from .evaluation import evaluate_classification, evaluate_segmentation, load_labeled_set, retrieval_rank
from .heatmap import Exemplar
from .ingest import IngestConfig, extract_dataset, read_manifest
from .navigation import NavConfig, ScenarioEvent, SimScenario, simulate, write_trace
from .synth import SyntheticCorpusSpec, generate_synthetic_corpus
from .trainer import PatchLoader, TrainConfig, train, write_train_log

log = logging.getLogger(__name__)

DEFAULT_CONFIG: dict = {
    "run_id": "run",
    "out_root": "runs",
    "seed": 0,
    "synth": {
        "enabled": True,
        "class_count": 5,
        "frames_per_video": 40,
        "motion_px": 5.0,
        "noise_level": 0.30,
        "crops_per_class": 30,
        "seg_images": 6,
    },
    "videos_dir": None,            # used instead of synth when set
    "labels_file": None,
    "extract": {
        "stride": 1,
        "max_kp": 500,
        "max_distance": 64,
        "top_k": 20,
        "min_length": 2,
        "texture_threshold": 10,
        "random_per_frame": 4,
    },
    "cluster": {"target_k": 0},    # 0: max(20, n/10)
    "annotate": {"mode": "oracle"},  # oracle | skip
    "train": {
        "steps": 100,
        "learning_rate": 0.0006,
        "margin": 0.5,
        "batch_p": 8,
        "batch_k": 4,
        "init": "pretrained",
        "eval_every": 25,
    },
    "eval": {"exemplars_per_class": 1, "segmentation": True, "retrieval": True},
    "sim": {"enabled": True},
}


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            user = yaml.safe_load(fh) or {}
        _deep_update(config, user)
    if overrides:
        _deep_update(config, overrides)
    if "REEFSIM_SEED" in os.environ and (overrides is None or "seed" not in overrides):
        config["seed"] = int(os.environ["REEFSIM_SEED"])
    return config


def _deep_update(base: dict, update: dict) -> None:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value


def _stage_hash(slice_: dict) -> str:
    return hashlib.sha256(json.dumps(slice_, sort_keys=True).encode()).hexdigest()[:16]


def _stage_done(stage_dir: Path, slice_: dict) -> bool:
    marker = stage_dir / "stage_config.json"
    if not marker.exists():
        return False
    try:
        return json.loads(marker.read_text())["hash"] == _stage_hash(slice_)
    except (KeyError, json.JSONDecodeError):
        return False


def _mark_stage(stage_dir: Path, slice_: dict) -> None:
    stage_dir.mkdir(parents=True, exist_ok=True)
    (stage_dir / "stage_config.json").write_text(
        json.dumps({"hash": _stage_hash(slice_), "config": slice_}, indent=1, sort_keys=True) + "\n"
    )


def video_class(video_id: str) -> str:
    """Class label convention of the synthetic corpus: classN_<name>."""
    if video_id.startswith("class") and "_" in video_id:
        return video_id.split("_", 1)[1]
    return video_id


def run_pipeline(config: dict) -> dict:
    """Execute all stages in order; returns the run report (also persisted)."""
    if config.get("videos_dir") and not Path(config["videos_dir"]).exists():
        # validate before creating anything so a bad config leaves no trace
        raise ConfigurationError(f"videos_dir does not exist: {config['videos_dir']}")
    run_dir = Path(config["out_root"]) / config["run_id"]
    run_dir.mkdir(parents=True, exist_ok=True)
    seed = int(config["seed"])
    summary: dict = {"run_id": config["run_id"], "stages": {}, "seed": seed}

    # ---- synth ------------------------------------------------------------
    corpus_dir = run_dir / "corpus"
    if config.get("videos_dir"):
        videos_dir = Path(config["videos_dir"])
        labels_file = Path(config["labels_file"]) if config.get("labels_file") else None
        summary["stages"]["synth"] = {"skipped": True, "videos_dir": str(videos_dir)}
    elif config["synth"]["enabled"]:
        slice_ = {"synth": config["synth"], "seed": seed}
        if not _stage_done(corpus_dir, slice_):
            spec = SyntheticCorpusSpec(
                class_count=config["synth"]["class_count"],
                frames_per_video=config["synth"]["frames_per_video"],
                motion_px=config["synth"]["motion_px"],
                noise_level=config["synth"]["noise_level"],
                crops_per_class=config["synth"]["crops_per_class"],
                seg_images=config["synth"]["seg_images"],
            )
            info = generate_synthetic_corpus(spec, seed, corpus_dir)
            _mark_stage(corpus_dir, slice_)
            summary["stages"]["synth"] = info
        else:
            log.info("synth stage up to date, skipping")
            summary["stages"]["synth"] = {"cached": True}
        videos_dir = corpus_dir / "videos"
        labels_file = corpus_dir / "labels.jsonl"
    else:
        raise ConfigurationError("either synth.enabled or videos_dir is required")

    # ---- extract ----------------------------------------------------------
    extract_dir = run_dir / "extract"
    slice_ = {"extract": config["extract"], "videos": str(videos_dir), "seed": seed}
    if not _stage_done(extract_dir, slice_):
        ingest_cfg = IngestConfig(seed=seed, **config["extract"])
        manifest = extract_dataset(videos_dir, extract_dir, ingest_cfg)
        _mark_stage(extract_dir, slice_)
    else:
        log.info("extract stage up to date, skipping")
        manifest = extract_dir / "manifest.jsonl"
    records = read_manifest(manifest)
    groups = group_manifest(records)
    summary["stages"]["extract"] = {
        "patches": len(records), "sequences": len(groups), "manifest": str(manifest),
    }

    # ---- cluster + annotate -----------------------------------------------
    cluster_dir = run_dir / "clusters"
    slice_ = {"cluster": config["cluster"], "annotate": config["annotate"],
              "manifest": str(manifest), "seed": seed}
    frozen = load_backbone(config["train"]["init"], seed=seed)
    if not _stage_done(cluster_dir, slice_):
        reps = pick_representatives(groups, rng_seed=seed)
        loader = PatchLoader(extract_dir)
        images = np.stack([loader.load(r.patch) for r in reps])
        embeddings = frozen.embed_flat_batch(images)
        for rep, emb in zip(reps, embeddings):
            rep.embedding = emb
        target_k = config["cluster"]["target_k"] or max(20, len(reps) // 10)
        cs = agglomerate(reps, target_k)
        materialize(cs, groups)
        cs.meta = {"patch_root": str(extract_dir), "manifest": str(manifest),
                   "target_k": target_k, "seed": seed}
        if config["annotate"]["mode"] == "oracle":
            merged = _oracle_merge(cs, groups)
            cs.meta["oracle_merges"] = merged
        ClusterStore(cluster_dir).save(cs)
        _mark_stage(cluster_dir, slice_)
    else:
        log.info("cluster stage up to date, skipping")
        cs = ClusterStore(cluster_dir).load()
    summary["stages"]["cluster"] = {
        "clusters": len(cs.clusters), "store": str(cluster_dir),
        "annotate_mode": config["annotate"]["mode"],
    }

    # ---- train ------------------------------------------------------------
    ckpt_dir = run_dir / "checkpoints"
    ckpt_path = ckpt_dir / "finetuned.ckpt"
    slice_ = {"train": config["train"], "clusters": str(cluster_dir), "seed": seed}
    if not _stage_done(ckpt_dir, slice_):
        tc = TrainConfig(
            margin=config["train"]["margin"],
            learning_rate=config["train"]["learning_rate"],
            batch_p=config["train"]["batch_p"],
            batch_k=config["train"]["batch_k"],
            steps=config["train"]["steps"],
            seed=seed,
            init=config["train"]["init"],
            eval_every=config["train"]["eval_every"],
        )
        result = train(cs, tc, extract_dir)
        save_checkpoint(result.encoder, ckpt_path)
        write_train_log(result.log, ckpt_dir / "train_log.jsonl")
        figures.save_loss_curve(result.log, ckpt_dir / "loss_curve.png")
        (ckpt_dir / "holdout.json").write_text(json.dumps({
            "initial": result.initial_holdout_loss,
            "final": result.final_holdout_loss,
        }, indent=1) + "\n")
        _mark_stage(ckpt_dir, slice_)
    else:
        log.info("train stage up to date, skipping")
    holdout = json.loads((ckpt_dir / "holdout.json").read_text())
    summary["stages"]["train"] = {
        "checkpoint": str(ckpt_path),
        "holdout_initial": holdout["initial"],
        "holdout_final": holdout["final"],
        "log": str(ckpt_dir / "train_log.jsonl"),
        "loss_curve": str(ckpt_dir / "loss_curve.png"),
    }

    # ---- eval ---------------------------------------------------------------
    eval_dir = run_dir / "eval"
    if labels_file is not None and Path(labels_file).exists():
        slice_ = {"eval": config["eval"], "ckpt": str(ckpt_path), "seed": seed}
        if not _stage_done(eval_dir, slice_):
            summary["stages"]["eval"] = _eval_stage(
                config, eval_dir, corpus_dir, labels_file, ckpt_path, frozen, seed)
            _mark_stage(eval_dir, slice_)
        else:
            log.info("eval stage up to date, skipping")
            summary["stages"]["eval"] = json.loads((eval_dir / "eval_summary.json").read_text())
    else:
        summary["stages"]["eval"] = {"skipped": True, "reason": "no labels file"}

    # ---- simulate -----------------------------------------------------------
    sim_dir = run_dir / "sim"
    if config["sim"]["enabled"]:
        scenario = demo_scenario()
        trace = simulate(scenario, NavConfig())
        trace_path = write_trace(trace, sim_dir / "trace.jsonl")
        figures.save_mode_timeline(trace, sim_dir / "timeline.png")
        modes = Counter(r["mode"] for r in trace)
        summary["stages"]["sim"] = {
            "trace": str(trace_path), "timeline": str(sim_dir / "timeline.png"),
            "events": len(trace), "modes": dict(modes),
        }
    else:
        summary["stages"]["sim"] = {"skipped": True}

    report_path = run_dir / "run_report.json"
    report_path.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    summary["report"] = str(report_path)
    return summary


def _oracle_merge(cs, groups) -> int:
    """Simulated weak supervision: merge clusters whose majority source
    video maps to the same class label. Stands in for the interactive
    session on corpora with known per-video classes."""
    by_label: dict[str, list[int]] = {}
    for cid, seqs in sorted(cs.clusters.items()):
        votes = Counter(video_class(groups[s][0]["video_id"]) for s in seqs)
        by_label.setdefault(votes.most_common(1)[0][0], []).append(cid)
    merges = 0
    for label in sorted(by_label):
        ids = by_label[label]
        if len(ids) >= 2:
            merge(cs, ids, HUMAN)
            merges += 1
    return merges


def _eval_stage(config, eval_dir: Path, corpus_dir: Path, labels_file, ckpt_path, frozen, seed):
    eval_dir.mkdir(parents=True, exist_ok=True)
    patches = load_labeled_set(labels_file)
    root = Path(labels_file).parent
    tuned = load_checkpoint(ckpt_path)
    k = config["eval"]["exemplars_per_class"]

    out: dict = {}
    baseline = evaluate_classification(patches, k, frozen, seed=seed, root=root)
    tuned_rep = evaluate_classification(patches, k, tuned, seed=seed, root=root)
    out["classification"] = {
        "exemplars_per_class": k,
        "baseline_accuracy": baseline.accuracy,
        "finetuned_accuracy": tuned_rep.accuracy,
        "baseline": baseline.to_json(),
        "finetuned": tuned_rep.to_json(),
    }
    (eval_dir / "classification.json").write_text(
        json.dumps(out["classification"], indent=1, sort_keys=True) + "\n")
    figures.save_confusion_matrix(tuned_rep, eval_dir / "confusion.png")
    _write_metrics_table(baseline, tuned_rep, eval_dir / "classification.txt")

    seg_dir = corpus_dir / "seg"
    if config["eval"].get("segmentation") and seg_dir.exists():
        seg = _segmentation_eval(patches, root, seg_dir, tuned, seed)
        out["segmentation"] = {k2: seg[k2] for k2 in ("mean_accuracy", "mean_iou", "weighted_iou")}
        (eval_dir / "segmentation.json").write_text(json.dumps(seg, indent=1, sort_keys=True) + "\n")
        figures.save_iou_bars(seg, eval_dir / "segmentation.png")

    if config["eval"].get("retrieval"):
        out["retrieval"] = _retrieval_eval(patches, root, tuned, eval_dir, seed)

    (eval_dir / "eval_summary.json").write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    return out


def _write_metrics_table(baseline, tuned, path: Path) -> None:
    lines = [
        f"{'model':<12} {'Acc':>6} {'P':>6} {'R':>6} {'F1':>6}",
        f"{'baseline':<12} {baseline.accuracy:6.3f} {baseline.precision:6.3f} "
        f"{baseline.recall:6.3f} {baseline.f1:6.3f}",
        f"{'fine-tuned':<12} {tuned.accuracy:6.3f} {tuned.precision:6.3f} "
        f"{tuned.recall:6.3f} {tuned.f1:6.3f}",
    ]
    path.write_text("\n".join(lines) + "\n")


def _segmentation_eval(patches, root, seg_dir: Path, encoder, seed):
    from .evaluation import sample_exemplars

    vocab = json.loads((seg_dir / "vocab.json").read_text())
    exemplars = sample_exemplars(patches, 3, seed, root)
    bg_files = sorted((seg_dir / "bg_exemplars").glob("*.png"))[:3]
    exemplars["background"] = [
        Exemplar(cv2.cvtColor(cv2.imread(str(f)), cv2.COLOR_BGR2RGB), class_tag="background")
        for f in bg_files
    ]
    images, masks = [], []
    for img_path in sorted((seg_dir / "images").glob("*.png")):
        mask_path = seg_dir / "masks" / img_path.name
        images.append(cv2.cvtColor(cv2.imread(str(img_path)), cv2.COLOR_BGR2RGB))
        masks.append(cv2.imread(str(mask_path), cv2.IMREAD_GRAYSCALE))
    return evaluate_segmentation(images, masks, exemplars, encoder, class_order=vocab)


def _retrieval_eval(patches, root, encoder, eval_dir: Path, seed):
    rng = np.random.default_rng(seed)
    train_split = [p for p in patches if p.split == "train"]
    test_split = [p for p in patches if p.split == "test"]
    probe = train_split[int(rng.integers(len(train_split)))]
    from .evaluation import _pixels

    exemplar = Exemplar(_pixels(probe, root), class_tag=probe.label)
    ranked = retrieval_rank(exemplar, test_split, encoder, root)
    csv_path = eval_dir / "retrieval.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("rank,patch_id,label,similarity\n")
        for rank, (patch, sim) in enumerate(ranked, start=1):
            fh.write(f"{rank},{patch.id},{patch.label},{sim:.6f}\n")
    strip = figures.save_retrieval_strip(
        exemplar.patch,
        [_pixels(p, root) for p, _ in ranked],
        [s for _, s in ranked],
        eval_dir / "retrieval.png",
    )
    top = ranked[0]
    return {"exemplar": probe.id, "exemplar_label": probe.label,
            "top1": top[0].id, "top1_label": top[0].label,
            "csv": str(csv_path), "figure": str(strip)}


def demo_scenario() -> SimScenario:
    """Scripted mission: quiet follow, a growing find, then the diver ack."""
    events = []
    rng = np.random.default_rng(0)
    for i in range(30):
        grid = rng.uniform(0.0, 0.25, (6, 9))
        events.append(ScenarioEvent(float(i), grid))
    for i in range(30, 40):
        grid = rng.uniform(0.55, 0.95, (6, 9))
        events.append(ScenarioEvent(float(i), grid))
    for i in range(40, 46):
        grid = rng.uniform(0.7, 1.0, (6, 9))
        signal = "manual_roll_45" if i == 45 else None
        events.append(ScenarioEvent(float(i), grid, signal))
    for i in range(46, 52):
        events.append(ScenarioEvent(float(i), rng.uniform(0.0, 0.2, (6, 9))))
    return SimScenario(events)
