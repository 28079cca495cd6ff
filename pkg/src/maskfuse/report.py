"""Report writers: delimited outputs, JSON reports, and matplotlib figures.

Everything written here is byte-deterministic for fixed inputs, except
the PNG figures and timing files (which embed measured durations).
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import EvalReport  # noqa: E402
from .fixtures import write_label_grid  # noqa: E402
from .taxonomy import SemanticMap, Taxonomy  # noqa: E402


def write_labels_csv(path, image_results) -> None:
    """One row per fused mask label across all images."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "mask_id", "label", "source", "confidence"])
        for res in image_results:
            for label in res.labels:
                writer.writerow(
                    [res.image_id, label.mask_id, label.label_text, label.source,
                     f"{label.confidence:.6f}"]
                )


def write_eval_report(out_dir, report: EvalReport) -> None:
    out_dir = Path(out_dir)
    (out_dir / "eval_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    with open(out_dir / "eval_report.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "iou"])
        for name, iou in report.per_class_iou:
            writer.writerow([name, "" if iou is None else f"{iou:.6f}"])
        writer.writerow(["mIoU", f"{report.miou:.6f}"])
    save_iou_figure(report, out_dir / "eval_per_class_iou.png")


def save_iou_figure(report: EvalReport, path) -> None:
    present = [(name, iou) for name, iou in report.per_class_iou if iou is not None]
    if not present:
        return
    names = [p[0] for p in present]
    vals = [p[1] for p in present]
    fig, ax = plt.subplots(figsize=(max(4, 0.35 * len(names)), 3.2))
    ax.bar(range(len(vals)), vals, color="#4878d0")
    ax.axhline(report.miou, color="#d65f5f", linestyle="--", linewidth=1,
               label=f"mIoU = {report.miou:.3f}")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90, fontsize=6)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("IoU")
    ax.legend(loc="lower right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_timing_report(out_dir, stats_list) -> None:
    """Machine-readable timing report plus a human table and a figure."""
    out_dir = Path(out_dir)
    payload = [s.to_dict() for s in stats_list]
    (out_dir / "timing_report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    lines = []
    for s in stats_list:
        lines.append(f"mode={s.mode} iterations={s.iterations} masks={s.mask_count}")
        lines.append(f"  {'stage':<14} {'median (ms)':>12} {'p95 (ms)':>12}")
        for name in sorted(s.stage_median):
            lines.append(
                f"  {name:<14} {s.stage_median[name] * 1e3:>12.3f} "
                f"{s.stage_p95[name] * 1e3:>12.3f}"
            )
        lines.append(
            f"  {'total':<14} {s.total_median * 1e3:>12.3f} {s.total_p95 * 1e3:>12.3f}"
        )
    (out_dir / "timing_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_timing_figure(stats_list, out_dir / "timing_stages.png")


def save_timing_figure(stats_list, path) -> None:
    if not stats_list:
        return
    stages = sorted({name for s in stats_list for name in s.stage_median})
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(stages)), 3.2))
    width = 0.8 / len(stats_list)
    for i, s in enumerate(stats_list):
        vals = [s.stage_median.get(name, 0.0) * 1e3 for name in stages]
        ax.bar(np.arange(len(stages)) + i * width, vals, width, label=s.mode)
    ax.set_xticks(np.arange(len(stages)) + 0.4 - width / 2)
    ax.set_xticklabels(stages, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("median time (ms)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_map_png(smap: SemanticMap, taxonomy: Taxonomy, path) -> None:
    """Optional color-palette export of a rendered map."""
    n = len(taxonomy)
    cmap = plt.get_cmap("tab20", max(n, 1))
    rgb = np.zeros((smap.height, smap.width, 3))
    for cid in np.unique(smap.labels):
        if cid == taxonomy.void_id:
            continue
        rgb[smap.labels == cid] = cmap(int(cid) % cmap.N)[:3]
    fig, ax = plt.subplots(figsize=(4, 4 * smap.height / smap.width))
    ax.imshow(rgb, interpolation="nearest")
    ax.set_axis_off()
    fig.tight_layout(pad=0)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_run_outputs(out_dir, config, result, palette_taxonomy=None) -> None:
    """Fixed output layout: labels, rendered grids, reports, config echo."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "rendered").mkdir(exist_ok=True)
    write_labels_csv(out_dir / "labels.csv", result.images)
    for res in result.images:
        write_label_grid(res.rendered, out_dir / "rendered" / f"{res.image_id}.sfsl")
        if palette_taxonomy is not None:
            save_map_png(res.rendered, palette_taxonomy,
                         out_dir / "rendered" / f"{res.image_id}.png")
    (out_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    timings = [
        {
            "image_id": res.timings.image_id,
            "mask_count": res.timings.mask_count,
            "stages_s": res.timings.stages,
            "total_s": res.timings.total,
            "unresolved_labels": res.unresolved,
        }
        for res in result.images
    ]
    (out_dir / "timings.json").write_text(
        json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if result.eval_report is not None:
        write_eval_report(out_dir, result.eval_report)
