"""Pipeline orchestration: budget -> vote -> caption/rank -> fuse -> render.

The per-image flow mirrors the four inference steps: masks arrive as
fixtures (step 1 consumed), closed-set maps are loaded once and reused
across masks (step 2), captions are parsed and ranked per mask (step 3),
and fused labels are rendered into the final map (step 4).
"""
from __future__ import annotations

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyCaption, MissingRegionEmbedding, SchemaError
from .evaluation import ConfusionMatrix, EvalReport, accumulate, finalize
from .fusion import FusedLabel, FusionConfig, RenderResult, fuse_mask, render_semantic_map
from .masks import select_mask_budget
from .openvocab import Caption, extract_noun_phrases, rank_candidates
from .taxonomy import SemanticMap, vote_all
from .fixtures import ImageInputs, LoadedManifest

MODE_CLOSED = "closed"
MODE_OPEN = "open"
MODE_FULL = "full"
MODES = (MODE_CLOSED, MODE_OPEN, MODE_FULL)

STAGES = ("budget_select", "closed_vote", "caption_parse", "rank", "fuse", "render", "eval")


@dataclass
class PipelineConfig:
    mode: str = MODE_FULL
    mask_budget: int = 100
    top_k: int = 3
    fusion: FusionConfig = field(default_factory=FusionConfig)
    strict_embeddings: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mask_budget < 1:
            raise ValueError(f"mask_budget must be >= 1, got {self.mask_budget}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.mode == MODE_CLOSED and self.fusion.open_branch_enabled:
            self.fusion = replace(self.fusion, open_branch_enabled=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mask_budget": self.mask_budget,
            "top_k": self.top_k,
            "tau_closed": self.fusion.tau_closed,
            "tau_open": self.fusion.tau_open,
            "delta_margin": self.fusion.delta_margin,
            "open_branch_enabled": self.fusion.open_branch_enabled,
            "strict_embeddings": self.strict_embeddings,
            "workers": self.workers,
        }


@dataclass
class StageTimings:
    image_id: str
    mask_count: int
    stages: dict = field(default_factory=dict)  # stage name -> seconds
    total: float = 0.0


@dataclass
class ImageResult:
    image_id: str
    labels: list  # FusedLabel per surviving mask, in mask order
    rendered: SemanticMap
    unresolved: dict
    timings: StageTimings


@dataclass
class PipelineResult:
    images: list  # ImageResult per image, in manifest order
    eval_report: EvalReport | None = None


def _process_image(image: ImageInputs, manifest: LoadedManifest, config: PipelineConfig):
    timings = StageTimings(image_id=image.image_id, mask_count=0)
    t_start = time.perf_counter()

    t0 = time.perf_counter()
    selected = select_mask_budget(image.mask_set, config.mask_budget)
    timings.stages["budget_select"] = time.perf_counter() - t0
    timings.mask_count = len(selected)

    t0 = time.perf_counter()
    if config.mode == MODE_OPEN:
        votes = [[] for _ in selected.masks]
    else:
        maps = [m for m, _ in image.semantic_maps]
        taxes = [t for _, t in image.semantic_maps]
        votes = [[] for _ in selected.masks] if not maps else vote_all(selected, maps, taxes)
    timings.stages["closed_vote"] = time.perf_counter() - t0

    if config.mode != MODE_CLOSED:
        t0 = time.perf_counter()
        phrases_per_mask = []
        for mask in selected.masks:
            text = image.captions.get(mask.mask_id)
            if text is None:
                phrases_per_mask.append([])
                continue
            try:
                phrases_per_mask.append(extract_noun_phrases(Caption(mask.mask_id, text)))
            except EmptyCaption:
                phrases_per_mask.append([])
        timings.stages["caption_parse"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        candidates_per_mask = []
        for mask, mask_votes, phrases in zip(selected.masks, votes, phrases_per_mask):
            closed_names = [v.label_text for v in mask_votes]
            if not phrases:
                # No caption for this mask: the open branch has nothing to say.
                candidates_per_mask.append([])
                continue
            if image.embeddings is None:
                if config.strict_embeddings:
                    raise MissingRegionEmbedding(
                        f"image {image.image_id!r}: no embedding table but mode requires one"
                    )
                candidates_per_mask.append([])
                continue
            candidates_per_mask.append(
                rank_candidates(
                    mask.mask_id,
                    phrases,
                    closed_names,
                    image.embeddings,
                    top_k=config.top_k,
                    strict=config.strict_embeddings,
                )
            )
        timings.stages["rank"] = time.perf_counter() - t0
    else:
        candidates_per_mask = [[] for _ in selected.masks]

    t0 = time.perf_counter()
    taxonomy_names = manifest.all_class_names
    labels = [
        fuse_mask(mask_votes, cands, config.fusion, taxonomy_names, mask_id=mask.mask_id)
        for mask, mask_votes, cands in zip(selected.masks, votes, candidates_per_mask)
    ]
    timings.stages["fuse"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result: RenderResult = render_semantic_map(
        labels, selected, manifest.output_taxonomy, manifest.synonyms
    )
    timings.stages["render"] = time.perf_counter() - t0

    timings.total = time.perf_counter() - t_start
    return ImageResult(
        image_id=image.image_id,
        labels=labels,
        rendered=result.semantic_map,
        unresolved=dict(result.unresolved),
        timings=timings,
    )


def run_pipeline(manifest: LoadedManifest, config: PipelineConfig) -> PipelineResult:
    """Process every image in the manifest; output order follows input order."""
    if config.workers == 1:
        results = [_process_image(img, manifest, config) for img in manifest.images]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(
                pool.map(lambda img: _process_image(img, manifest, config), manifest.images)
            )

    eval_report = None
    gt_images = [
        (img, res)
        for img, res in zip(manifest.images, results)
        if img.ground_truth is not None
    ]
    if gt_images:
        tax = gt_images[0][0].gt_taxonomy
        cm = ConfusionMatrix.empty(tax)
        for img, res in gt_images:
            t0 = time.perf_counter()
            pred = res.rendered
            if pred.taxonomy_id != img.ground_truth.taxonomy_id:
                raise SchemaError(
                    f"image {img.image_id!r}: rendered taxonomy {pred.taxonomy_id!r} "
                    f"differs from ground truth {img.ground_truth.taxonomy_id!r}"
                )
            accumulate(cm, img.ground_truth, pred, void_id=tax.void_id)
            res.timings.stages["eval"] = time.perf_counter() - t0
        eval_report = finalize(cm, tax)

    return PipelineResult(images=results, eval_report=eval_report)


@dataclass
class BenchStats:
    mode: str
    iterations: int  # measured iterations (after warm-up)
    mask_count: int
    stage_median: dict
    stage_p95: dict
    total_median: float
    total_p95: float

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "iterations": self.iterations,
            "mask_count": self.mask_count,
            "stage_median_s": self.stage_median,
            "stage_p95_s": self.stage_p95,
            "total_median_s": self.total_median,
            "total_p95_s": self.total_p95,
        }


def run_bench(manifest: LoadedManifest, config: PipelineConfig, iterations: int) -> BenchStats:
    """Time the pipeline; the first (warm-up) iteration is discarded."""
    if iterations < 3:
        raise ValueError(f"iterations must be >= 3, got {iterations}")
    per_iter_stage: list[dict] = []
    per_iter_total: list[float] = []
    mask_count = 0
    for i in range(iterations):
        result = run_pipeline(manifest, config)
        stage_sums: dict[str, float] = {}
        total = 0.0
        for img in result.images:
            for name, secs in img.timings.stages.items():
                stage_sums[name] = stage_sums.get(name, 0.0) + secs
            total += img.timings.total
            mask_count = max(mask_count, img.timings.mask_count)
        if i == 0:
            continue  # warm-up
        per_iter_stage.append(stage_sums)
        per_iter_total.append(total)

    stage_names = sorted({name for s in per_iter_stage for name in s})
    stage_median = {}
    stage_p95 = {}
    for name in stage_names:
        vals = [s.get(name, 0.0) for s in per_iter_stage]
        stage_median[name] = statistics.median(vals)
        stage_p95[name] = float(np.percentile(vals, 95))
    return BenchStats(
        mode=config.mode,
        iterations=iterations - 1,
        mask_count=mask_count,
        stage_median=stage_median,
        stage_p95=stage_p95,
        total_median=statistics.median(per_iter_total),
        total_p95=float(np.percentile(per_iter_total, 95)),
    )
