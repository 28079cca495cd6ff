"""Writers for the engine's fixture file formats.

Deliberately independent of the engine package: the byte layouts below
are the whole contract between exporter and engine.

* manifest — JSON referencing everything else (schema_version 1)
* label grid (.sfsl) — "SFSL", version 1 byte, u32le width/height, then
  width*height u16le class ids row-major
* embedding table (.sfse) — "SFSE", version 1 byte, u32le dim, u32le
  count, then per entry u16le name length, UTF-8 name, dim f32le
* taxonomy — UTF-8 text, one class name per line (line index = class id)

Column-major RLE: pixels traversed x-outer/y-inner, alternating
background/foreground run lengths, first run background (may be 0).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

LABEL_GRID_MAGIC = b"SFSL"
EMBEDDING_MAGIC = b"SFSE"
FORMAT_VERSION = 1
SCHEMA_VERSION = 1
VOID_ID = 255


def rle_encode(bitmap: np.ndarray) -> list[int]:
    flat = np.asarray(bitmap, dtype=bool).ravel(order="F")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return counts


def write_label_grid(labels: np.ndarray, path) -> None:
    h, w = labels.shape
    header = LABEL_GRID_MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<II", w, h)
    Path(path).write_bytes(header + labels.astype("<u2").tobytes(order="C"))


def write_embedding_file(path, dim: int, entries: dict) -> None:
    chunks = [EMBEDDING_MAGIC, bytes([FORMAT_VERSION]), struct.pack("<II", dim, len(entries))]
    for name, vec in entries.items():
        raw = name.encode("utf-8")
        v = np.asarray(vec, dtype="<f4")
        assert v.shape == (dim,), f"embedding {name!r}: shape {v.shape}"
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(v.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def write_taxonomy_file(class_names, path) -> None:
    Path(path).write_text("\n".join(class_names) + "\n", encoding="utf-8")


def write_manifest(path, taxonomies, images, output_taxonomy, provenance=None,
                   partial_stages=None) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "taxonomies": taxonomies,
        "output_taxonomy": output_taxonomy,
        "images": images,
    }
    if provenance:
        payload["provenance"] = provenance
    if partial_stages:
        payload["partial_stages"] = partial_stages
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
