"""Closed-set taxonomies, dense semantic maps, and per-mask majority voting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllVoid, DimensionMismatch, TaxonomyMismatch
from .masks import BinaryMask, MaskSet, foreground_indices

VOID_ID = 255


@dataclass(frozen=True)
class Taxonomy:
    """Ordered closed-set label space; line index = class id."""

    taxonomy_id: str
    class_names: tuple[str, ...]
    void_id: int = VOID_ID

    def __post_init__(self):
        names = tuple(self.class_names)
        object.__setattr__(self, "class_names", names)
        if not (1 <= len(names) <= 255):
            raise TaxonomyMismatch(
                f"taxonomy {self.taxonomy_id!r}: {len(names)} classes (must be 1..255)"
            )
        index = {}
        for i, name in enumerate(names):
            key = name.strip().lower()
            if not key:
                raise TaxonomyMismatch(f"taxonomy {self.taxonomy_id!r}: empty name at id {i}")
            if key in index:
                raise TaxonomyMismatch(f"taxonomy {self.taxonomy_id!r}: duplicate name {key!r}")
            index[key] = i
        object.__setattr__(self, "_index", index)

    def id_of(self, name: str):
        """Class id for a name (case/whitespace-insensitive), or None."""
        return self._index.get(name.strip().lower())

    def __len__(self):
        return len(self.class_names)


@dataclass(frozen=True)
class SemanticMap:
    """Dense per-pixel class-id grid in one taxonomy's label space."""

    width: int
    height: int
    labels: np.ndarray  # (height, width) integer grid
    taxonomy_id: str

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"semantic map labels shape {labels.shape} != ({self.height}, {self.width})"
            )
        labels = np.ascontiguousarray(labels, dtype=np.uint16)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)


def validate_map(smap: SemanticMap, taxonomy: Taxonomy) -> None:
    """Check every pixel id is a valid class id or void."""
    if smap.taxonomy_id != taxonomy.taxonomy_id:
        raise TaxonomyMismatch(
            f"map taxonomy {smap.taxonomy_id!r} != {taxonomy.taxonomy_id!r}"
        )
    ids = smap.labels
    bad = (ids >= len(taxonomy)) & (ids != taxonomy.void_id)
    if bad.any():
        worst = int(ids[bad].max())
        raise TaxonomyMismatch(
            f"map for taxonomy {taxonomy.taxonomy_id!r} contains id {worst} "
            f"(only 0..{len(taxonomy) - 1} and void {taxonomy.void_id} allowed)"
        )


@dataclass(frozen=True)
class ClosedSetVote:
    """Winning class for one mask under one closed-set map."""

    label_id: int
    label_text: str
    confidence: float  # winning-vote fraction over non-void foreground pixels
    source_taxonomy: str


def _vote_on_values(vals: np.ndarray, taxonomy: Taxonomy, mask_id: str) -> ClosedSetVote:
    vals = vals[vals != taxonomy.void_id]
    if vals.size == 0:
        raise AllVoid(f"mask {mask_id!r}: all foreground pixels are void")
    if int(vals.max()) >= len(taxonomy):
        raise TaxonomyMismatch(
            f"mask {mask_id!r}: map id {int(vals.max())} outside taxonomy "
            f"{taxonomy.taxonomy_id!r}"
        )
    hist = np.bincount(vals, minlength=len(taxonomy))
    win = int(np.argmax(hist))  # argmax takes the smallest id on ties
    return ClosedSetVote(
        label_id=win,
        label_text=taxonomy.class_names[win],
        confidence=float(hist[win] / vals.size),
        source_taxonomy=taxonomy.taxonomy_id,
    )


def majority_vote(mask: BinaryMask, smap: SemanticMap, taxonomy: Taxonomy) -> ClosedSetVote:
    """Most frequent non-void class over the mask's foreground pixels.

    Ties break toward the smaller class id. Raises AllVoid when no
    foreground pixel carries a real class.
    """
    if mask.width != smap.width or mask.height != smap.height:
        raise DimensionMismatch(
            f"mask {mask.mask_id!r} ({mask.width}x{mask.height}) vs map "
            f"({smap.width}x{smap.height})"
        )
    flat = smap.labels.ravel(order="F")
    vals = flat[foreground_indices(mask)]
    return _vote_on_values(vals, taxonomy, mask.mask_id)


def vote_all(mask_set, maps, taxonomies) -> list[list[ClosedSetVote]]:
    """Per-mask closed-set votes, one per map, AllVoid entries omitted.

    Maps are flattened once and reused across all masks.
    """
    if len(maps) != len(taxonomies):
        raise TaxonomyMismatch(f"{len(maps)} maps but {len(taxonomies)} taxonomies")
    for smap in maps:
        if smap.width != mask_set.width or smap.height != mask_set.height:
            raise DimensionMismatch(
                f"map ({smap.width}x{smap.height}) vs image {mask_set.image_id!r} "
                f"({mask_set.width}x{mask_set.height})"
            )
    flats = [smap.labels.ravel(order="F") for smap in maps]
    out = []
    for mask in mask_set.masks:
        idx = foreground_indices(mask)
        votes = []
        for flat, taxonomy in zip(flats, taxonomies):
            try:
                votes.append(_vote_on_values(flat[idx], taxonomy, mask.mask_id))
            except AllVoid:
                pass
        out.append(votes)
    return out
