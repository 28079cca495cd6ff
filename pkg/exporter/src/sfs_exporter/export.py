"""Export orchestration: images -> fixture directory.

One ExportJob produces one fixture directory holding manifest.json plus
the taxonomy / label-grid / embedding files it references. Stages can be
toggled, and a backend stage that fails is skipped with a marker in the
manifest's `partial_stages` list instead of aborting the whole export —
a masks-only export is still a valid fixture the engine can load.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .backends import BACKENDS, StageFailure
from .formats import (
    rle_encode,
    write_embedding_file,
    write_label_grid,
    write_manifest,
    write_taxonomy_file,
)
from .phrases import extract_phrases, load_lexicon

ALL_STAGES = ("masks", "maps", "captions", "embeddings")


@dataclass
class ExportJob:
    out_dir: Path
    backend_name: str = "classical"
    stages: tuple = ALL_STAGES
    size: int = 0  # 0 = keep original; else resize to size x size
    lexicon_path: str | None = None
    max_masks: int = 100
    backend_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        unknown = set(self.stages) - set(ALL_STAGES)
        if unknown:
            raise ValueError(f"unknown stages: {sorted(unknown)}")
        if self.backend_name not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend_name!r}")


@dataclass
class ExportResult:
    manifest_path: Path
    image_ids: list
    failures: list  # [(image_id, stage, message), ...]


def _load_image(path, size: int) -> np.ndarray:
    """RGB float array in [0, 1]."""
    img = Image.open(path).convert("RGB")
    if size:
        img = img.resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64) / 255.0


def run_export(images: dict, job: ExportJob) -> ExportResult:
    """Export `images` ({image_id: path-or-array}) into job.out_dir."""
    backend = BACKENDS[job.backend_name](max_masks=job.max_masks, **job.backend_kwargs)
    job.out_dir.mkdir(parents=True, exist_ok=True)
    stopwords = load_lexicon(job.lexicon_path)

    taxonomy_entries = []
    taxonomy_names: dict[str, tuple] = {}
    image_entries = []
    failures = []
    partial = []
    want = set(job.stages)

    for image_id, src in images.items():
        image = src if isinstance(src, np.ndarray) else _load_image(src, job.size)
        height, width = image.shape[:2]
        entry = {"image_id": image_id, "width": width, "height": height, "masks": []}

        mask_pairs = []
        if "masks" in want:
            try:
                mask_pairs = backend.generate_masks(image)
            except StageFailure as e:
                failures.append((image_id, "masks", str(e)))
                partial.append({"image_id": image_id, "stage": "masks", "error": str(e)})
        for k, (mask, conf) in enumerate(mask_pairs):
            entry["masks"].append(
                {"mask_id": f"m{k:03d}", "counts": rle_encode(mask), "confidence": conf}
            )

        if "maps" in want:
            try:
                for tax_id, names, grid in backend.semantic_maps(image):
                    if tax_id not in taxonomy_names:
                        taxonomy_names[tax_id] = tuple(names)
                        fname = f"taxonomy_{tax_id}.txt"
                        write_taxonomy_file(names, job.out_dir / fname)
                        taxonomy_entries.append({"taxonomy_id": tax_id, "path": fname})
                    fname = f"{image_id}_{tax_id}.sfsl"
                    write_label_grid(grid, job.out_dir / fname)
                    entry.setdefault("semantic_maps", []).append(
                        {"taxonomy_id": tax_id, "path": fname}
                    )
            except StageFailure as e:
                failures.append((image_id, "maps", str(e)))
                partial.append({"image_id": image_id, "stage": "maps", "error": str(e)})

        captions = {}
        if "captions" in want and mask_pairs:
            try:
                for k, (mask, _) in enumerate(mask_pairs):
                    captions[f"m{k:03d}"] = backend.caption(image, mask)
                entry["captions"] = [
                    {"mask_id": mid, "text": text} for mid, text in captions.items()
                ]
            except StageFailure as e:
                captions = {}
                failures.append((image_id, "captions", str(e)))
                partial.append({"image_id": image_id, "stage": "captions", "error": str(e)})

        if "embeddings" in want and mask_pairs:
            try:
                entries = {}
                for k, (mask, _) in enumerate(mask_pairs):
                    entries[f"m{k:03d}"] = backend.region_embedding(image, mask)
                texts = set()
                for text in captions.values():
                    texts.update(extract_phrases(text, stopwords))
                for names in taxonomy_names.values():
                    texts.update(n.lower() for n in names)
                for text in sorted(texts):
                    entries[text] = backend.text_embedding(text)
                dim = len(next(iter(entries.values())))
                fname = f"{image_id}_embeddings.sfse"
                write_embedding_file(job.out_dir / fname, dim, entries)
                entry["embeddings"] = fname
            except StageFailure as e:
                failures.append((image_id, "embeddings", str(e)))
                partial.append({"image_id": image_id, "stage": "embeddings", "error": str(e)})

        image_entries.append(entry)

    if not taxonomy_entries:
        # The manifest schema requires at least one taxonomy; emit the
        # backend's map taxonomies even when the maps stage was skipped.
        for tax_id, names, _ in BACKENDS[job.backend_name]().semantic_maps(
            np.zeros((8, 8, 3))
        ):
            taxonomy_names[tax_id] = tuple(names)
            fname = f"taxonomy_{tax_id}.txt"
            write_taxonomy_file(names, job.out_dir / fname)
            taxonomy_entries.append({"taxonomy_id": tax_id, "path": fname})

    manifest_path = job.out_dir / "manifest.json"
    write_manifest(
        manifest_path,
        taxonomies=taxonomy_entries,
        images=image_entries,
        output_taxonomy=taxonomy_entries[0]["taxonomy_id"],
        provenance={
            "exporter": "sfs-exporter 0.1.0",
            "backend": job.backend_name,
            "models": backend.model_ids,
            "stages": list(job.stages),
        },
        partial_stages=partial,
    )
    return ExportResult(
        manifest_path=manifest_path, image_ids=list(images), failures=failures
    )
