"""Command-line entry points for the full workflow."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click
import cv2
import numpy as np

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@click.group()
def main():
    """Weakly supervised visual similarity toolkit."""


@main.command()
@click.option("--videos", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--stride", default=1, show_default=True)
@click.option("--top-k", default=20, show_default=True)
@click.option("--max-dist", default=64, show_default=True)
@click.option("--max-kp", default=500, show_default=True)
@click.option("--min-len", default=2, show_default=True)
@click.option("--seed", default=0, envvar="REEFSIM_SEED", show_default=True)
def extract(videos, out, stride, top_k, max_dist, max_kp, min_len, seed):
    """Mine tracked patch sequences from videos or image directories."""
    from .ingest import IngestConfig, extract_dataset

    config = IngestConfig(stride=stride, top_k=top_k, max_distance=max_dist,
                          max_kp=max_kp, min_length=min_len, seed=seed)
    manifest = extract_dataset(videos, out, config)
    click.echo(f"manifest written: {manifest}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--k", default=0, show_default=True, help="target clusters; 0 = max(20, n/10)")
@click.option("--seed", default=0, envvar="REEFSIM_SEED", show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--init", default="pretrained", type=click.Choice(["pretrained", "random"]))
def cluster(manifest, k, seed, out, init):
    """Cluster sequence representatives with Ward agglomeration."""
    from .clustering import ClusterStore, agglomerate, group_manifest, materialize, pick_representatives
    from .encoder import load_backbone
    from .ingest import read_manifest
    from .trainer import PatchLoader

    records = read_manifest(manifest)
    groups = group_manifest(records)
    reps = pick_representatives(groups, rng_seed=seed)
    encoder = load_backbone(init, seed=seed)
    loader = PatchLoader(Path(manifest).parent)
    images = np.stack([loader.load(r.patch) for r in reps])
    embeddings = encoder.embed_flat_batch(images)
    for rep, emb in zip(reps, embeddings):
        rep.embedding = emb
    target_k = k or max(20, len(reps) // 10)
    cs = agglomerate(reps, target_k)
    materialize(cs, groups)
    cs.meta = {"patch_root": str(Path(manifest).parent), "manifest": str(manifest),
               "target_k": target_k, "seed": seed}
    ClusterStore(out).save(cs)
    click.echo(f"{len(cs.clusters)} clusters written to {out}")


@main.command()
@click.option("--store", required=True, type=click.Path(exists=True))
@click.option("--port", default=8008, show_default=True)
@click.option("--patches", default=None, type=click.Path(exists=True))
@click.option("--ui", default=None, type=click.Path(exists=True))
def annotate(store, port, patches, ui):
    """Serve the merge-session API (and UI bundle when built)."""
    from .annotation import serve

    click.echo(f"serving cluster store {store} on http://127.0.0.1:{port}")
    serve(store, port=port, patch_root=patches, ui_dir=ui)


@main.command()
@click.option("--clusters", "clusters_dir", required=True, type=click.Path(exists=True))
@click.option("--init", default="pretrained", type=click.Choice(["pretrained", "random"]))
@click.option("--steps", default=5000, show_default=True)
@click.option("--lr", default=0.0006, show_default=True)
@click.option("--margin", default=0.5, show_default=True)
@click.option("--batch-p", default=8, show_default=True)
@click.option("--batch-k", default=4, show_default=True)
@click.option("--seed", default=0, envvar="REEFSIM_SEED", show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--patches", default=None, type=click.Path(exists=True),
              help="patch root; defaults to the store's recorded root")
def train(clusters_dir, init, steps, lr, margin, batch_p, batch_k, seed, out, patches):
    """Fine-tune the backbone with mined triplets from the cluster store."""
    from . import report as figures
    from .clustering import ClusterStore
    from .encoder import save_checkpoint
    from .trainer import TrainConfig, train as run_train, write_train_log

    cs = ClusterStore(clusters_dir).load()
    patch_root = patches or cs.meta.get("patch_root")
    if not patch_root:
        raise click.UsageError("--patches required (store has no recorded patch root)")
    config = TrainConfig(margin=margin, learning_rate=lr, batch_p=batch_p, batch_k=batch_k,
                         steps=steps, seed=seed, init=init)
    result = run_train(cs, config, patch_root)
    out = Path(out)
    save_checkpoint(result.encoder, out)
    write_train_log(result.log, out.with_suffix(".log.jsonl"))
    figures.save_loss_curve(result.log, out.with_suffix(".loss.png"))
    click.echo(f"checkpoint: {out}")
    click.echo(f"held-out loss {result.initial_holdout_loss:.4f} -> {result.final_holdout_loss:.4f}")


def _load_encoder(ckpt):
    from .encoder import load_backbone, load_checkpoint

    if ckpt:
        return load_checkpoint(ckpt)
    return load_backbone("pretrained")


def _read_rgb(path) -> np.ndarray:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise click.UsageError(f"cannot read image: {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


@main.command("heatmap")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--exemplars", required=True, type=click.Path(exists=True),
              help="directory of exemplar patch PNGs")
@click.option("--weights", default=None, help="comma-separated positive weights")
@click.option("--ckpt", default=None, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def heatmap_cmd(image_path, exemplars, weights, ckpt, out):
    """Render the merged exemplar heatmap: float raster, preview, overlay."""
    from . import report as figures
    from .heatmap import Exemplar, exemplar_heatmap, merge_weighted, save_heatmap

    encoder = _load_encoder(ckpt)
    image = _read_rgb(image_path)
    files = sorted(Path(exemplars).glob("*.png"))
    if not files:
        raise click.UsageError(f"no exemplar PNGs in {exemplars}")
    wlist = [float(w) for w in weights.split(",")] if weights else [1.0] * len(files)
    if len(wlist) != len(files):
        raise click.UsageError(f"{len(wlist)} weights for {len(files)} exemplars")
    exs = [Exemplar(_read_rgb(f), weight=w) for f, w in zip(files, wlist)]
    maps = [exemplar_heatmap(image, ex, encoder) for ex in exs]
    merged = merge_weighted(maps, wlist)
    out = Path(out)
    raster, preview = save_heatmap(merged, out)
    overlay = figures.save_heatmap_overlay(image, merged.values, out.with_suffix(".overlay.png"))
    click.echo(f"raster: {raster}\npreview: {preview}\noverlay: {overlay}")


@main.group("eval")
def eval_group():
    """Evaluation protocols."""


@eval_group.command("classify")
@click.option("--labels", required=True, type=click.Path(exists=True))
@click.option("--root", default=None, type=click.Path(exists=True))
@click.option("--ckpt", default=None, type=click.Path(exists=True))
@click.option("--exemplars-per-class", default=1, show_default=True)
@click.option("--seed", default=0, envvar="REEFSIM_SEED", show_default=True)
@click.option("--out", required=True, type=click.Path())
def eval_classify(labels, root, ckpt, exemplars_per_class, seed, out):
    """Exemplar classification metrics over a labeled patch set."""
    from . import report as figures
    from .evaluation import evaluate_classification, load_labeled_set

    root = Path(root) if root else Path(labels).parent
    patches = load_labeled_set(labels)
    encoder = _load_encoder(ckpt)
    rep = evaluate_classification(patches, exemplars_per_class, encoder, seed=seed, root=root)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rep.to_json(), indent=1, sort_keys=True) + "\n")
    figures.save_confusion_matrix(rep, out.with_suffix(".png"))
    click.echo(f"Acc {rep.accuracy:.3f}  P {rep.precision:.3f}  "
               f"R {rep.recall:.3f}  F1 {rep.f1:.3f}")
    click.echo(f"report: {out}")


@eval_group.command("segment")
@click.option("--seg-dir", required=True, type=click.Path(exists=True),
              help="directory with images/, masks/, vocab.json, bg_exemplars/")
@click.option("--labels", required=True, type=click.Path(exists=True))
@click.option("--ckpt", default=None, type=click.Path(exists=True))
@click.option("--seed", default=0, envvar="REEFSIM_SEED", show_default=True)
@click.option("--out", required=True, type=click.Path())
def eval_segment(seg_dir, labels, ckpt, seed, out):
    """Heatmap segmentation metrics against ground-truth masks."""
    from . import report as figures
    from .evaluation import load_labeled_set
    from .pipeline import _segmentation_eval

    patches = load_labeled_set(labels)
    encoder = _load_encoder(ckpt)
    seg = _segmentation_eval(patches, Path(labels).parent, Path(seg_dir), encoder, seed)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(seg, indent=1, sort_keys=True) + "\n")
    figures.save_iou_bars(seg, out.with_suffix(".png"))
    click.echo(f"MeanAcc {seg['mean_accuracy']:.3f}  MeanIoU {seg['mean_iou']:.3f}  "
               f"WeightedIoU {seg['weighted_iou']:.3f}")


@eval_group.command("retrieve")
@click.option("--exemplar", "exemplar_path", required=True, type=click.Path(exists=True))
@click.option("--labels", required=True, type=click.Path(exists=True))
@click.option("--root", default=None, type=click.Path(exists=True))
@click.option("--ckpt", default=None, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True)
@click.option("--out", required=True, type=click.Path())
def eval_retrieve(exemplar_path, labels, root, ckpt, split, out):
    """Rank a labeled pool by similarity to one exemplar patch."""
    from . import report as figures
    from .evaluation import _pixels, load_labeled_set, retrieval_rank
    from .heatmap import Exemplar

    root = Path(root) if root else Path(labels).parent
    pool = [p for p in load_labeled_set(labels) if p.split == split]
    encoder = _load_encoder(ckpt)
    exemplar = Exemplar(_read_rgb(exemplar_path))
    ranked = retrieval_rank(exemplar, pool, encoder, root)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("rank,patch_id,label,similarity\n")
        for rank, (patch, sim) in enumerate(ranked, start=1):
            fh.write(f"{rank},{patch.id},{patch.label},{sim:.6f}\n")
    figures.save_retrieval_strip(exemplar.patch, [_pixels(p, root) for p, _ in ranked],
                                 [s for _, s in ranked], out.with_suffix(".png"))
    click.echo(f"ranking: {out}")


@main.command()
@click.option("--scenario", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--value-threshold", default=0.6, show_default=True)
@click.option("--coverage-threshold", default=0.2, show_default=True)
def simulate(scenario, out, value_threshold, coverage_threshold):
    """Run the navigation policy over a scripted scenario file."""
    from . import report as figures
    from .navigation import NavConfig, load_scenario, simulate as run_sim, write_trace

    config = NavConfig(value_threshold=value_threshold, coverage_threshold=coverage_threshold)
    trace = run_sim(load_scenario(scenario), config)
    path = write_trace(trace, out)
    figures.save_mode_timeline(trace, Path(out).with_suffix(".png"))
    click.echo(f"trace: {path} ({len(trace)} events)")


@main.command()
@click.option("--trace", required=True, type=click.Path(exists=True))
def replay(trace):
    """Print a trace file for inspection."""
    from .navigation import read_trace

    for rec in read_trace(trace):
        cmd = rec["command"]
        if cmd is None:
            cmd_str = "-"
        elif cmd["type"] == "roll":
            cmd_str = f"roll {cmd['region']} {cmd['angle']:+.0f} deg"
        else:
            cmd_str = cmd["type"]
        click.echo(f"t={rec['t']:<8} {rec['mode']:<16} {cmd_str}")


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--classes", default=5, show_default=True)
@click.option("--frames", default=40, show_default=True)
@click.option("--noise", default=0.30, show_default=True)
@click.option("--crops-per-class", default=30, show_default=True)
@click.option("--seed", default=0, envvar="REEFSIM_SEED", show_default=True)
def synth(out, classes, frames, noise, crops_per_class, seed):
    """Generate the synthetic corpus (videos, labels, segmentation set)."""
    from .synth import SyntheticCorpusSpec, generate_synthetic_corpus

    spec = SyntheticCorpusSpec(class_count=classes, frames_per_video=frames,
                               noise_level=noise, crops_per_class=crops_per_class)
    info = generate_synthetic_corpus(spec, seed, out)
    click.echo(json.dumps(info, indent=1))


@main.command()
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--out-root", default=None, type=click.Path())
@click.option("--run-id", default=None)
@click.option("--seed", default=None, type=int)
def run(config_path, out_root, run_id, seed):
    """Execute the full pipeline from one config file."""
    from .pipeline import load_config, run_pipeline

    overrides = {}
    if out_root:
        overrides["out_root"] = out_root
    if run_id:
        overrides["run_id"] = run_id
    if seed is not None:
        overrides["seed"] = seed
    config = load_config(config_path, overrides)
    summary = run_pipeline(config)
    click.echo(json.dumps({k: v for k, v in summary.items() if k != "stages"}, indent=1))
    for stage, info in summary["stages"].items():
        click.echo(f"[{stage}] " + json.dumps(info, default=str)[:200])


if __name__ == "__main__":
    main()
