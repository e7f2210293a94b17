"""Evaluation protocols: exemplar-based classification, heatmap-driven
segmentation scoring, and similarity-ordered retrieval."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .encoder import Encoder
from .errors import ConfigurationError, ParameterError
from .heatmap import Exemplar, classify_patch, embed_exemplar, segment

log = logging.getLogger(__name__)


@dataclass
class LabeledPatch:
    id: str
    label: str
    split: str                      # train | test
    path: str | None = None
    pixels: np.ndarray | None = None


@dataclass
class MetricsReport:
    accuracy: float
    precision: float                # support-weighted
    recall: float
    f1: float
    labels: list[str]
    per_class: dict[str, dict[str, float]]
    confusion: np.ndarray           # rows: true, cols: predicted
    support: dict[str, int]

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "labels": self.labels,
            "per_class": self.per_class,
            "confusion": self.confusion.tolist(),
            "support": self.support,
        }


def load_labeled_set(labels_file: str | Path) -> list[LabeledPatch]:
    labels_file = Path(labels_file)
    if not labels_file.exists():
        raise ConfigurationError(f"labels file not found: {labels_file}")
    patches = []
    with open(labels_file, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            patches.append(LabeledPatch(rec["id"], rec["label"], rec["split"], rec.get("path")))
    return patches


def _pixels(patch: LabeledPatch, root: Path | None) -> np.ndarray:
    if patch.pixels is not None:
        return patch.pixels
    path = Path(patch.path)
    if root is not None and not path.is_absolute():
        path = root / path
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise ConfigurationError(f"labeled patch image missing: {path}")
    patch.pixels = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    return patch.pixels


def sample_exemplars(
    patches: list[LabeledPatch],
    per_class: int,
    seed: int,
    root: Path | None = None,
) -> dict[str, list[Exemplar]]:
    """per_class exemplars for every class in the train split, seeded."""
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[LabeledPatch]] = {}
    for p in patches:
        if p.split == "train":
            by_class.setdefault(p.label, []).append(p)
    out: dict[str, list[Exemplar]] = {}
    for label in sorted(by_class):
        pool = by_class[label]
        k = min(per_class, len(pool))
        if k < per_class:
            log.warning("class %s has only %d train patches for %d exemplars",
                        label, len(pool), per_class)
        idx = rng.choice(len(pool), size=k, replace=False)
        out[label] = [Exemplar(_pixels(pool[int(i)], root), class_tag=label) for i in idx]
    return out


def evaluate_classification(
    patches: list[LabeledPatch],
    exemplars_per_class: int,
    encoder: Encoder,
    seed: int = 0,
    root: str | Path | None = None,
) -> MetricsReport:
    """Classify the test split against exemplars sampled from the train split."""
    root = Path(root) if root is not None else None
    test = [p for p in patches if p.split == "test"]
    if not test:
        raise ConfigurationError("no test-split patches to evaluate")
    exemplars = sample_exemplars(patches, exemplars_per_class, seed, root)
    missing = {p.label for p in test} - set(exemplars)
    if missing:
        raise ConfigurationError(f"classes missing from train split: {sorted(missing)}")
    for exs in exemplars.values():
        for ex in exs:
            embed_exemplar(ex, encoder)

    y_true, y_pred = [], []
    for patch in test:
        y_true.append(patch.label)
        y_pred.append(classify_patch(_pixels(patch, root), exemplars, encoder))
    labels = sorted(set(y_true) | set(y_pred) | set(exemplars))
    return compute_classification_metrics(y_true, y_pred, labels)


def compute_classification_metrics(
    y_true: list[str], y_pred: list[str], labels: list[str]
) -> MetricsReport:
    """Confusion matrix plus support-weighted precision/recall/F1."""
    if len(y_true) != len(y_pred):
        raise ParameterError("y_true and y_pred length mismatch")
    index = {label: i for i, label in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        confusion[index[t], index[p]] += 1

    per_class: dict[str, dict[str, float]] = {}
    support = {}
    weighted = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    total = len(y_true)
    for label in labels:
        i = index[label]
        tp = int(confusion[i, i])
        gt = int(confusion[i, :].sum())
        pred = int(confusion[:, i].sum())
        precision = tp / pred if pred else 0.0
        recall = tp / gt if gt else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[label] = {"precision": precision, "recall": recall, "f1": f1}
        support[label] = gt
        for key, value in (("precision", precision), ("recall", recall), ("f1", f1)):
            weighted[key] += value * gt / total
    accuracy = float(np.trace(confusion)) / total
    return MetricsReport(accuracy, weighted["precision"], weighted["recall"], weighted["f1"],
                         labels, per_class, confusion, support)


# ---------------------------------------------------------------------------
# segmentation


def segmentation_metrics(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> dict[str, float]:
    """Mean pixel accuracy, mean IoU, and weighted IoU for one mask pair.

    Classes absent from the ground truth are excluded; weighted IoU weights
    each present class by its ground-truth pixel frequency.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ParameterError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    present = [c for c in range(num_classes) if (gt == c).any()]
    total_gt = gt.size
    ious, recalls, weighted = [], [], 0.0
    for c in present:
        pred_c = pred == c
        gt_c = gt == c
        inter = int(np.logical_and(pred_c, gt_c).sum())
        union = int(np.logical_or(pred_c, gt_c).sum())
        iou = inter / union if union else 0.0
        ious.append(iou)
        recalls.append(inter / int(gt_c.sum()))
        weighted += (int(gt_c.sum()) / total_gt) * iou
    return {
        "mean_accuracy": float(np.mean(recalls)),
        "mean_iou": float(np.mean(ious)),
        "weighted_iou": float(weighted),
    }


def evaluate_segmentation(
    images: list[np.ndarray],
    gt_masks: list[np.ndarray],
    exemplars_by_class: dict[str, list[Exemplar]],
    encoder: Encoder,
    class_order: list[str] | None = None,
) -> dict:
    """Segment every image and average the per-image metrics.

    class_order fixes the label-to-index mapping of the ground-truth masks;
    by default it is the sorted exemplar class list, matching segment().
    """
    if len(images) != len(gt_masks):
        raise ParameterError("images and gt_masks length mismatch")
    labels = class_order or sorted(exemplars_by_class)
    per_image = []
    for image, gt in zip(images, gt_masks):
        mask, seg_labels = segment(image, exemplars_by_class, encoder)
        if seg_labels != labels:
            remap = np.array([labels.index(lbl) for lbl in seg_labels])
            mask = remap[mask]
        per_image.append(segmentation_metrics(mask, gt, len(labels)))
    report = {
        "mean_accuracy": float(np.mean([m["mean_accuracy"] for m in per_image])),
        "mean_iou": float(np.mean([m["mean_iou"] for m in per_image])),
        "weighted_iou": float(np.mean([m["weighted_iou"] for m in per_image])),
        "per_image": per_image,
        "classes": labels,
    }
    return report


# ---------------------------------------------------------------------------
# retrieval


def retrieval_rank(
    exemplar: Exemplar,
    pool: list[LabeledPatch],
    encoder: Encoder,
    root: str | Path | None = None,
) -> list[tuple[LabeledPatch, float]]:
    """Pool ordered by descending cosine similarity to the exemplar.

    Exact similarity ties keep ascending patch-id order.
    """
    if not pool:
        raise ParameterError("retrieval pool is empty")
    root = Path(root) if root is not None else None
    embed_exemplar(exemplar, encoder)
    images = np.stack([_pixels(p, root) for p in pool])
    flats = encoder.embed_flat_batch(images)
    sims = flats @ exemplar.flat
    order = sorted(range(len(pool)), key=lambda i: (-sims[i], pool[i].id))
    return [(pool[i], float(sims[i])) for i in order]
