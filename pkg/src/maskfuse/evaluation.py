"""Confusion-matrix accumulation, per-class IoU, and mIoU."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyMatrix, TaxonomyMismatch
from .taxonomy import SemanticMap, Taxonomy


@dataclass
class ConfusionMatrix:
    """Rows = ground truth, cols = prediction.

    `counts` has one extra column (index C) for void predictions on
    non-void ground truth: those pixels count as false negatives of the
    gt class but never as false positives of any class. Pixels with void
    ground truth are ignored and tallied separately.
    """

    taxonomy_id: str
    counts: np.ndarray  # (C, C + 1) int64
    ignored: int = 0

    @classmethod
    def empty(cls, taxonomy: Taxonomy) -> "ConfusionMatrix":
        n = len(taxonomy)
        return cls(taxonomy_id=taxonomy.taxonomy_id, counts=np.zeros((n, n + 1), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.taxonomy_id != self.taxonomy_id or other.counts.shape != self.counts.shape:
            raise TaxonomyMismatch("cannot merge confusion matrices of different taxonomies")
        self.counts += other.counts
        self.ignored += other.ignored
        return self


@dataclass
class EvalReport:
    taxonomy_id: str
    per_class_iou: list  # (class_name, iou or None) in taxonomy order
    miou: float
    evaluated_pixels: int
    ignored_pixels: int

    def to_dict(self) -> dict:
        return {
            "taxonomy_id": self.taxonomy_id,
            "miou": self.miou,
            "per_class_iou": [
                {"class": name, "iou": iou} for name, iou in self.per_class_iou
            ],
            "evaluated_pixels": self.evaluated_pixels,
            "ignored_pixels": self.ignored_pixels,
        }


def accumulate(cm: ConfusionMatrix, gt: SemanticMap, pred: SemanticMap, void_id: int = 255):
    """Add one (gt, pred) image pair into the matrix in place."""
    if gt.width != pred.width or gt.height != pred.height:
        raise DimensionMismatch(
            f"gt ({gt.width}x{gt.height}) vs pred ({pred.width}x{pred.height})"
        )
    if gt.taxonomy_id != cm.taxonomy_id or pred.taxonomy_id != cm.taxonomy_id:
        raise TaxonomyMismatch(
            f"taxonomies differ: matrix {cm.taxonomy_id!r}, gt {gt.taxonomy_id!r}, "
            f"pred {pred.taxonomy_id!r}"
        )
    n = cm.num_classes
    g = gt.labels.ravel().astype(np.int64)
    p = pred.labels.ravel().astype(np.int64)
    valid = g != void_id
    cm.ignored += int(g.size - valid.sum())
    g = g[valid]
    p = p[valid]
    if g.size and int(g.max()) >= n:
        raise TaxonomyMismatch(f"gt contains class id {int(g.max())} >= {n}")
    if p.size and int(p[p != void_id].max(initial=0)) >= n:
        raise TaxonomyMismatch(f"pred contains class id beyond taxonomy size {n}")
    p = np.where(p == void_id, n, p)  # fold void predictions into the extra column
    flat = np.bincount(g * (n + 1) + p, minlength=n * (n + 1))
    cm.counts += flat.reshape(n, n + 1)
    return cm


def finalize(cm: ConfusionMatrix, taxonomy: Taxonomy) -> EvalReport:
    """Per-class IoU and the unweighted mean over classes that occur."""
    if taxonomy.taxonomy_id != cm.taxonomy_id:
        raise TaxonomyMismatch(
            f"matrix taxonomy {cm.taxonomy_id!r} != {taxonomy.taxonomy_id!r}"
        )
    total = int(cm.counts.sum())
    if total == 0:
        raise EmptyMatrix("no pixels were accumulated")
    n = cm.num_classes
    tp = np.diag(cm.counts[:, :n]).astype(np.float64)
    fp = cm.counts[:, :n].sum(axis=0) - tp  # void column never contributes FPs
    fn = cm.counts.sum(axis=1) - tp
    denom = tp + fp + fn
    per_class = []
    ious = []
    for c in range(n):
        if denom[c] > 0:
            iou = float(tp[c] / denom[c])
            per_class.append((taxonomy.class_names[c], iou))
            ious.append(iou)
        else:
            per_class.append((taxonomy.class_names[c], None))
    return EvalReport(
        taxonomy_id=cm.taxonomy_id,
        per_class_iou=per_class,
        miou=float(np.mean(ious)),
        evaluated_pixels=total,
        ignored_pixels=cm.ignored,
    )
