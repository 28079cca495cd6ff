"""Fixture file formats and the synthetic scene generator.

Three on-disk formats bind the engine to external model exporters:

* manifest — JSON, human-readable, references everything else
* label grid (.sfsl) — magic "SFSL", version byte, u32le width/height,
  then width*height u16le class ids row-major
* embedding table (.sfse) — magic "SFSE", version byte, u32le dim, u32le
  entry count, then per entry u16le name length, UTF-8 name, dim f32le

Taxonomies are plain UTF-8 text, one class name per line (line = id).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptRle,
    DanglingReference,
    DimensionMismatch,
    SchemaError,
    SpecError,
    TaxonomyMismatch,
)
from .masks import BinaryMask, MaskSet, mask_from_bitmap
from .openvocab import EmbeddingTable
from .taxonomy import VOID_ID, SemanticMap, Taxonomy, validate_map

LABEL_GRID_MAGIC = b"SFSL"
EMBEDDING_MAGIC = b"SFSE"
FORMAT_VERSION = 1
SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# taxonomy files

def read_taxonomy_file(path, taxonomy_id: str) -> Taxonomy:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DanglingReference(f"taxonomy file {path}: {e}") from e
    names = [line.strip() for line in text.splitlines() if line.strip()]
    try:
        return Taxonomy(taxonomy_id=taxonomy_id, class_names=tuple(names))
    except TaxonomyMismatch as e:
        raise SchemaError(f"taxonomy file {path}: {e}") from e


def write_taxonomy_file(taxonomy: Taxonomy, path) -> None:
    Path(path).write_text("\n".join(taxonomy.class_names) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# label grid files

def write_label_grid(smap: SemanticMap, path) -> None:
    header = LABEL_GRID_MAGIC + bytes([FORMAT_VERSION]) + struct.pack(
        "<II", smap.width, smap.height
    )
    body = smap.labels.astype("<u2").tobytes(order="C")
    Path(path).write_bytes(header + body)


def read_label_grid(path, taxonomy_id: str = "") -> SemanticMap:
    data = Path(path).read_bytes()
    if len(data) < 13:
        raise SchemaError(f"{path}: truncated header ({len(data)} bytes)")
    if data[:4] != LABEL_GRID_MAGIC:
        raise SchemaError(f"{path}: bad magic {data[:4]!r}, expected {LABEL_GRID_MAGIC!r}")
    if data[4] != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported version {data[4]}")
    width, height = struct.unpack_from("<II", data, 5)
    expected = 13 + 2 * width * height
    if len(data) != expected:
        raise SchemaError(f"{path}: {len(data)} bytes, expected {expected} for {width}x{height}")
    labels = np.frombuffer(data, dtype="<u2", offset=13).reshape(height, width)
    return SemanticMap(width=width, height=height, labels=labels, taxonomy_id=taxonomy_id)


# ---------------------------------------------------------------------------
# embedding files

def write_embedding_file(path, dim: int, entries: dict) -> None:
    chunks = [EMBEDDING_MAGIC, bytes([FORMAT_VERSION]), struct.pack("<II", dim, len(entries))]
    for name, vec in entries.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise SchemaError(f"embedding name too long: {name[:40]!r}...")
        v = np.asarray(vec, dtype="<f4")
        if v.shape != (dim,):
            raise DimensionMismatch(f"embedding {name!r} has shape {v.shape}, expected ({dim},)")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(v.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_embedding_file(path) -> EmbeddingTable:
    data = Path(path).read_bytes()
    if len(data) < 13:
        raise SchemaError(f"{path}: truncated header ({len(data)} bytes)")
    if data[:4] != EMBEDDING_MAGIC:
        raise SchemaError(f"{path}: bad magic {data[:4]!r}, expected {EMBEDDING_MAGIC!r}")
    if data[4] != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported version {data[4]}")
    dim, count = struct.unpack_from("<II", data, 5)
    offset = 13
    entries = {}
    for i in range(count):
        if offset + 2 > len(data):
            raise SchemaError(f"{path}: truncated at entry {i} (name length)")
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + name_len + 4 * dim > len(data):
            raise SchemaError(f"{path}: truncated at entry {i}")
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += 4 * dim
        if name in entries:
            raise SchemaError(f"{path}: duplicate embedding name {name!r} at entry {i}")
        entries[name] = vec
    if offset != len(data):
        raise SchemaError(f"{path}: {len(data) - offset} trailing bytes after {count} entries")
    return EmbeddingTable(dim=dim, entries=entries)


# ---------------------------------------------------------------------------
# manifest

@dataclass
class ImageInputs:
    """Everything the pipeline needs for one image."""

    image_id: str
    mask_set: MaskSet
    captions: dict  # mask_id -> caption text
    semantic_maps: list  # [(SemanticMap, Taxonomy), ...] in manifest order
    embeddings: EmbeddingTable | None
    ground_truth: SemanticMap | None
    gt_taxonomy: Taxonomy | None


@dataclass
class LoadedManifest:
    path: Path
    taxonomies: dict  # taxonomy_id -> Taxonomy
    output_taxonomy: Taxonomy
    synonyms: dict = field(default_factory=dict)
    images: list = field(default_factory=list)

    @property
    def all_class_names(self) -> frozenset:
        names = set()
        for tax in self.taxonomies.values():
            names.update(n.strip().lower() for n in tax.class_names)
        return frozenset(names)


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise SchemaError(f"{where}: missing field {key!r}")
    return entry[key]


def load_manifest(path) -> LoadedManifest:
    """Load and fully validate a fixture manifest and everything it references."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DanglingReference(f"manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"manifest {path}: invalid JSON: {e}") from e

    where = f"manifest {path}"
    version = _require(raw, "schema_version", where)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{where}: schema_version {version}, expected {SCHEMA_VERSION}")
    base = path.parent

    taxonomies = {}
    for entry in _require(raw, "taxonomies", where):
        tid = _require(entry, "taxonomy_id", f"{where}: taxonomies")
        tpath = base / _require(entry, "path", f"{where}: taxonomy {tid!r}")
        if tid in taxonomies:
            raise SchemaError(f"{where}: duplicate taxonomy_id {tid!r}")
        taxonomies[tid] = read_taxonomy_file(tpath, tid)
    if not taxonomies:
        raise SchemaError(f"{where}: no taxonomies defined")

    out_id = raw.get("output_taxonomy") or next(iter(taxonomies))
    if out_id not in taxonomies:
        raise DanglingReference(f"{where}: output_taxonomy {out_id!r} not defined")

    synonyms = {}
    if raw.get("synonyms"):
        from .fusion import parse_synonyms

        spath = base / raw["synonyms"]
        try:
            synonyms = parse_synonyms(spath.read_text(encoding="utf-8"))
        except OSError as e:
            raise DanglingReference(f"{where}: synonyms file {spath}: {e}") from e
        except ValueError as e:
            raise SchemaError(f"{where}: synonyms file {spath}: {e}") from e

    images = []
    for entry in _require(raw, "images", where):
        iid = _require(entry, "image_id", f"{where}: images")
        iw = f"{where}: image {iid!r}"
        width = _require(entry, "width", iw)
        height = _require(entry, "height", iw)

        masks = []
        for m in _require(entry, "masks", iw):
            mid = _require(m, "mask_id", f"{iw}: masks")
            try:
                masks.append(
                    BinaryMask(
                        width=width,
                        height=height,
                        counts=tuple(_require(m, "counts", f"{iw}: mask {mid!r}")),
                        confidence=float(_require(m, "confidence", f"{iw}: mask {mid!r}")),
                        mask_id=mid,
                    )
                )
            except CorruptRle as e:
                raise CorruptRle(f"{iw}: {e}") from e
        try:
            mask_set = MaskSet(image_id=iid, width=width, height=height, masks=tuple(masks))
        except (DimensionMismatch, ValueError) as e:
            raise SchemaError(f"{iw}: {e}") from e

        known_ids = {m.mask_id for m in masks}
        captions = {}
        for c in entry.get("captions", []):
            mid = _require(c, "mask_id", f"{iw}: captions")
            if mid not in known_ids:
                raise DanglingReference(f"{iw}: caption references unknown mask_id {mid!r}")
            text = _require(c, "text", f"{iw}: caption for mask {mid!r}")
            if not str(text).strip():
                raise SchemaError(f"{iw}: caption for mask {mid!r} is empty")
            if mid in captions:
                raise SchemaError(f"{iw}: duplicate caption for mask {mid!r}")
            captions[mid] = str(text)

        semantic_maps = []
        for sm in entry.get("semantic_maps", []):
            tid = _require(sm, "taxonomy_id", f"{iw}: semantic_maps")
            if tid not in taxonomies:
                raise DanglingReference(f"{iw}: semantic map taxonomy {tid!r} not defined")
            spath = base / _require(sm, "path", f"{iw}: semantic map {tid!r}")
            try:
                smap = read_label_grid(spath, taxonomy_id=tid)
            except OSError as e:
                raise DanglingReference(f"{iw}: semantic map {spath}: {e}") from e
            if smap.width != width or smap.height != height:
                raise SchemaError(
                    f"{iw}: semantic map {spath} is {smap.width}x{smap.height}, "
                    f"image is {width}x{height}"
                )
            try:
                validate_map(smap, taxonomies[tid])
            except TaxonomyMismatch as e:
                raise SchemaError(f"{iw}: semantic map {spath}: {e}") from e
            semantic_maps.append((smap, taxonomies[tid]))

        embeddings = None
        if entry.get("embeddings"):
            epath = base / entry["embeddings"]
            try:
                embeddings = read_embedding_file(epath)
            except OSError as e:
                raise DanglingReference(f"{iw}: embedding file {epath}: {e}") from e

        ground_truth = None
        gt_taxonomy = None
        if entry.get("ground_truth"):
            gt = entry["ground_truth"]
            tid = _require(gt, "taxonomy_id", f"{iw}: ground_truth")
            if tid not in taxonomies:
                raise DanglingReference(f"{iw}: ground truth taxonomy {tid!r} not defined")
            gpath = base / _require(gt, "path", f"{iw}: ground_truth")
            try:
                ground_truth = read_label_grid(gpath, taxonomy_id=tid)
            except OSError as e:
                raise DanglingReference(f"{iw}: ground truth {gpath}: {e}") from e
            if ground_truth.width != width or ground_truth.height != height:
                raise SchemaError(
                    f"{iw}: ground truth {gpath} is {ground_truth.width}x"
                    f"{ground_truth.height}, image is {width}x{height}"
                )
            gt_taxonomy = taxonomies[tid]
            try:
                validate_map(ground_truth, gt_taxonomy)
            except TaxonomyMismatch as e:
                raise SchemaError(f"{iw}: ground truth {gpath}: {e}") from e

        images.append(
            ImageInputs(
                image_id=iid,
                mask_set=mask_set,
                captions=captions,
                semantic_maps=semantic_maps,
                embeddings=embeddings,
                ground_truth=ground_truth,
                gt_taxonomy=gt_taxonomy,
            )
        )

    return LoadedManifest(
        path=path,
        taxonomies=taxonomies,
        output_taxonomy=taxonomies[out_id],
        synonyms=synonyms,
        images=images,
    )


# ---------------------------------------------------------------------------
# synthetic scenes

@dataclass
class SceneSpec:
    """Parameters for the synthetic fixture generator."""

    width: int = 256
    height: int = 256
    regions: int = 12
    taxonomy_size: int = 8
    embedding_dim: int = 0  # 0 -> taxonomy_size
    closed_maps: int = 2
    closed_corruption: float = 0.0  # per-region chance the closed maps lie
    caption_noise: float = 0.0  # per-mask chance the caption names a wrong label
    distractors: int = 0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise SpecError(f"scene too small: {self.width}x{self.height}")
        if self.regions < 1:
            raise SpecError("need at least one region")
        if not (1 <= self.taxonomy_size <= 255):
            raise SpecError(f"taxonomy_size {self.taxonomy_size} outside 1..255")
        if self.closed_maps < 0:
            raise SpecError("closed_maps must be >= 0")
        for name in ("closed_corruption", "caption_noise"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise SpecError(f"{name} {v} outside [0,1]")
        dim = self.embedding_dim or self.taxonomy_size
        if dim < self.taxonomy_size:
            raise SpecError(
                f"embedding_dim {dim} < taxonomy_size {self.taxonomy_size}: "
                "label vectors cannot be orthonormal"
            )


def generate_synthetic_scene(out_dir, seed: int, spec: SceneSpec | None = None) -> Path:
    """Write a deterministic synthetic fixture; returns the manifest path.

    The scene is a grid of non-overlapping rectangles with known labels.
    Region/text embeddings are orthonormal per class, so cosine between a
    region and its true label is exactly 1 and 0 for every other label.
    With zero noise the full pipeline reproduces the ground truth map.
    """
    if spec is None:
        spec = SceneSpec()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    n = spec.taxonomy_size
    names = tuple(f"obj{i:03d}" for i in range(n))
    taxonomy = Taxonomy("synthetic", names)

    cols = int(np.ceil(np.sqrt(spec.regions * spec.width / spec.height)))
    cols = max(1, min(cols, spec.regions))
    rows = int(np.ceil(spec.regions / cols))
    cell_w = spec.width // cols
    cell_h = spec.height // rows
    if cell_w < 6 or cell_h < 6:
        raise SpecError(
            f"cannot pack {spec.regions} regions into {spec.width}x{spec.height} "
            f"(cells would be {cell_w}x{cell_h})"
        )

    gt = np.full((spec.height, spec.width), VOID_ID, dtype=np.uint16)
    rects = []  # (y0, y1, x0, x1, label_id)
    for k in range(spec.regions):
        r, c = divmod(k, cols)
        rw = int(rng.integers(max(4, cell_w // 2), cell_w - 1))
        rh = int(rng.integers(max(4, cell_h // 2), cell_h - 1))
        x0 = c * cell_w + int(rng.integers(0, cell_w - rw))
        y0 = r * cell_h + int(rng.integers(0, cell_h - rh))
        label = int(rng.integers(0, n))
        gt[y0 : y0 + rh, x0 : x0 + rw] = label
        rects.append((y0, y0 + rh, x0, x0 + rw, label))

    masks = []
    captions = []
    region_vectors = {}
    dim = spec.embedding_dim or n
    basis = np.eye(dim)
    for k, (y0, y1, x0, x1, label) in enumerate(rects):
        bitmap = np.zeros((spec.height, spec.width), dtype=bool)
        bitmap[y0:y1, x0:x1] = True
        mask_id = f"m{k:03d}"
        conf = float(rng.uniform(0.5, 1.0))
        masks.append(mask_from_bitmap(bitmap, confidence=round(conf, 6), mask_id=mask_id))
        cap_label = label
        if spec.caption_noise > 0 and rng.random() < spec.caption_noise:
            cap_label = int((label + 1 + rng.integers(0, n - 1)) % n) if n > 1 else label
        captions.append({"mask_id": mask_id, "text": f"a {names[cap_label]}"})
        region_vectors[mask_id] = basis[label]

    for d in range(spec.distractors):
        rw = max(3, cell_w // 3)
        rh = max(3, cell_h // 3)
        x0 = int(rng.integers(0, spec.width - rw))
        y0 = int(rng.integers(0, spec.height - rh))
        bitmap = np.zeros((spec.height, spec.width), dtype=bool)
        bitmap[y0 : y0 + rh, x0 : x0 + rw] = True
        mask_id = f"d{d:03d}"
        conf = float(rng.uniform(0.01, 0.3))
        masks.append(mask_from_bitmap(bitmap, confidence=round(conf, 6), mask_id=mask_id))
        fake = int(rng.integers(0, n))
        captions.append({"mask_id": mask_id, "text": f"a {names[fake]}"})
        region_vectors[mask_id] = basis[fake]

    # Closed maps start from ground truth; a corrupted region is repainted
    # with per-pixel random wrong classes so its vote is both wrong and
    # low-confidence, which is what lets the open branch win it back.
    map_files = []
    for j in range(spec.closed_maps):
        grid = gt.copy()
        for (y0, y1, x0, x1, label) in rects:
            if spec.closed_corruption > 0 and rng.random() < spec.closed_corruption:
                shape = (y1 - y0, x1 - x0)
                if n > 1:
                    wrong = (label + 1 + rng.integers(0, n - 1, size=shape)) % n
                    grid[y0:y1, x0:x1] = wrong.astype(np.uint16)
        fname = f"closed_{j}.sfsl"
        smap = SemanticMap(spec.width, spec.height, grid, taxonomy.taxonomy_id)
        write_label_grid(smap, out_dir / fname)
        map_files.append({"taxonomy_id": taxonomy.taxonomy_id, "path": fname})

    entries = {name: basis[i] for i, name in enumerate(names)}
    entries.update(region_vectors)
    write_embedding_file(out_dir / "embeddings.sfse", dim, entries)
    write_taxonomy_file(taxonomy, out_dir / "taxonomy.txt")
    write_label_grid(SemanticMap(spec.width, spec.height, gt, taxonomy.taxonomy_id),
                     out_dir / "ground_truth.sfsl")

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "taxonomies": [{"taxonomy_id": taxonomy.taxonomy_id, "path": "taxonomy.txt"}],
        "output_taxonomy": taxonomy.taxonomy_id,
        "images": [
            {
                "image_id": "synthetic_000",
                "width": spec.width,
                "height": spec.height,
                "masks": [
                    {"mask_id": m.mask_id, "counts": list(m.counts), "confidence": m.confidence}
                    for m in masks
                ],
                "captions": captions,
                "semantic_maps": map_files,
                "embeddings": "embeddings.sfse",
                "ground_truth": {"taxonomy_id": taxonomy.taxonomy_id, "path": "ground_truth.sfsl"},
            }
        ],
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path
