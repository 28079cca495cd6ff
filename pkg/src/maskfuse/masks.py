"""Binary masks as column-major RLE, mask geometry, and confidence budgeting.

The RLE convention is the uncompressed COCO one: pixels are traversed
column-major (x outer, y inner), counts alternate background/foreground
run lengths, and the first count is the background run (0 when the mask
starts with foreground).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptRle, DimensionMismatch


@dataclass(frozen=True)
class BinaryMask:
    """One class-agnostic region proposal with a confidence score."""

    width: int
    height: int
    counts: tuple[int, ...]
    confidence: float
    mask_id: str

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if self.width < 1 or self.height < 1:
            raise CorruptRle(f"mask {self.mask_id!r}: bad dimensions {self.width}x{self.height}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"mask {self.mask_id!r}: confidence {self.confidence} outside [0,1]")
        total = sum(self.counts)
        if total != self.width * self.height:
            raise CorruptRle(
                f"mask {self.mask_id!r}: counts sum {total} != {self.width * self.height}"
            )
        # Only the leading background run may be zero; a zero anywhere else
        # would break the encode/decode round trip.
        for i, c in enumerate(self.counts):
            if c < 0:
                raise CorruptRle(f"mask {self.mask_id!r}: negative run at index {i}")
            if c == 0 and i > 0:
                raise CorruptRle(f"mask {self.mask_id!r}: zero-length run at index {i}")
        if mask_area(self) < 1:
            raise CorruptRle(f"mask {self.mask_id!r}: empty foreground")


@dataclass(frozen=True)
class MaskSet:
    """All masks proposed for one image, in fixture order."""

    image_id: str
    width: int
    height: int
    masks: tuple[BinaryMask, ...]

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        for m in self.masks:
            if m.width != self.width or m.height != self.height:
                raise DimensionMismatch(
                    f"mask {m.mask_id!r} is {m.width}x{m.height}, "
                    f"image {self.image_id!r} is {self.width}x{self.height}"
                )
        ids = [m.mask_id for m in self.masks]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate mask ids in image {self.image_id!r}: {dup}")

    def __len__(self):
        return len(self.masks)


def rle_encode(bitmap) -> list[int]:
    """Encode a 2D boolean grid (indexed [y, x]) into RLE counts."""
    grid = np.asarray(bitmap, dtype=bool)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("bitmap must be a non-empty 2D grid")
    flat = grid.ravel(order="F")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return counts


def foreground_indices(mask: BinaryMask) -> np.ndarray:
    """Column-major flat indices of the mask's foreground pixels."""
    c = np.asarray(mask.counts, dtype=np.int64)
    ends = np.cumsum(c)
    starts = ends - c
    fg_starts = starts[1::2]
    fg_lens = c[1::2]
    if fg_starts.size == 0:
        return np.empty(0, dtype=np.int64)
    steps = np.ones(int(fg_lens.sum()), dtype=np.int64)
    steps[0] = fg_starts[0]
    offsets = np.cumsum(fg_lens)[:-1]
    steps[offsets] = fg_starts[1:] - (fg_starts[:-1] + fg_lens[:-1]) + 1
    return np.cumsum(steps)


def rle_decode(mask: BinaryMask) -> np.ndarray:
    """Decode a mask into a 2D boolean grid indexed [y, x]."""
    total = sum(mask.counts)
    if total != mask.width * mask.height:
        raise CorruptRle(
            f"mask {mask.mask_id!r}: counts sum {total} != {mask.width * mask.height}"
        )
    flat = np.zeros(mask.width * mask.height, dtype=bool)
    flat[foreground_indices(mask)] = True
    return flat.reshape((mask.height, mask.width), order="F")


def mask_area(mask: BinaryMask) -> int:
    """Foreground pixel count."""
    return int(sum(mask.counts[1::2]))


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection-over-union of two masks on the same canvas."""
    if a.width != b.width or a.height != b.height:
        raise DimensionMismatch(
            f"masks {a.mask_id!r} ({a.width}x{a.height}) and "
            f"{b.mask_id!r} ({b.width}x{b.height}) differ in size"
        )
    ia = foreground_indices(a)
    ib = foreground_indices(b)
    inter = np.intersect1d(ia, ib, assume_unique=True).size
    union = ia.size + ib.size - inter
    return inter / union


def select_mask_budget(mask_set: MaskSet, budget: int) -> MaskSet:
    """Keep the `budget` highest-confidence masks.

    Ties break by larger area, then earlier fixture order. The survivors
    keep their original relative order.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if budget >= len(mask_set.masks):
        return mask_set
    order = sorted(
        range(len(mask_set.masks)),
        key=lambda i: (-mask_set.masks[i].confidence, -mask_area(mask_set.masks[i]), i),
    )
    keep = sorted(order[:budget])
    return MaskSet(
        image_id=mask_set.image_id,
        width=mask_set.width,
        height=mask_set.height,
        masks=tuple(mask_set.masks[i] for i in keep),
    )


def mask_from_bitmap(bitmap, confidence: float, mask_id: str) -> BinaryMask:
    """Convenience constructor from a 2D boolean grid."""
    grid = np.asarray(bitmap, dtype=bool)
    return BinaryMask(
        width=grid.shape[1],
        height=grid.shape[0],
        counts=tuple(rle_encode(grid)),
        confidence=confidence,
        mask_id=mask_id,
    )
