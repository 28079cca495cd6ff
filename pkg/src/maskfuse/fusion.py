"""Per-mask label fusion and rendering of the final semantic map."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .masks import MaskSet, foreground_indices, mask_area
from .openvocab import CandidateLabel
from .taxonomy import SemanticMap, Taxonomy

log = logging.getLogger(__name__)

SOURCE_CLOSED = "closed"
SOURCE_OPEN = "open"
SOURCE_UNIDENTIFIED = "unidentified"

UNIDENTIFIED_LABEL = "unidentified"


@dataclass(frozen=True)
class FusedLabel:
    """Final decision for one mask."""

    mask_id: str
    label_text: str
    source: str  # closed | open | unidentified
    confidence: float  # vote fraction (closed), (cos+1)/2 (open), 0 (unidentified)


@dataclass
class FusionConfig:
    """Decision thresholds. Defaults are engine-chosen and uncalibrated."""

    tau_closed: float = 0.5  # minimum vote fraction for a confident closed label
    tau_open: float = 0.25  # minimum cosine for an open label to be used
    delta_margin: float = 0.05  # open must beat closed cosine by this to contradict
    open_branch_enabled: bool = True

    def __post_init__(self):
        if not (0.0 <= self.tau_closed <= 1.0):
            raise ValueError(f"tau_closed {self.tau_closed} outside [0,1]")
        if not (-1.0 <= self.tau_open <= 1.0):
            raise ValueError(f"tau_open {self.tau_open} outside [-1,1]")
        if self.delta_margin < 0.0:
            raise ValueError(f"delta_margin {self.delta_margin} must be >= 0")


def _unidentified(mask_id: str) -> FusedLabel:
    return FusedLabel(mask_id, UNIDENTIFIED_LABEL, SOURCE_UNIDENTIFIED, 0.0)


def _closed(mask_id: str, vote) -> FusedLabel:
    return FusedLabel(mask_id, vote.label_text, SOURCE_CLOSED, vote.confidence)


def _open(mask_id: str, cand: CandidateLabel) -> FusedLabel:
    return FusedLabel(mask_id, cand.text, SOURCE_OPEN, (cand.similarity + 1.0) / 2.0)


def fuse_mask(
    votes,
    candidates,
    config: FusionConfig,
    taxonomy_names=frozenset(),
    mask_id: str = "",
) -> FusedLabel:
    """Merge closed-set votes and open-vocabulary candidates into one label.

    `candidates` must already be sorted by descending similarity.
    `taxonomy_names` is the union of lowercased class names across all
    supplied closed-set taxonomies, used to detect out-of-taxonomy
    suggestions. The decision table is evaluated top to bottom:

      1. nothing from either branch        -> unidentified
      2. open branch disabled              -> best vote, else unidentified
      3. confident vote, not contradicted  -> closed
      4. out-of-taxonomy candidate >= tau_open -> open
      5. confident vote                    -> closed
      6. candidate >= tau_open             -> open
      7. any vote                          -> closed
      8. otherwise                         -> unidentified
    """
    best_vote = None
    for v in votes:
        if best_vote is None or v.confidence > best_vote.confidence:
            best_vote = v
    top = candidates[0] if candidates else None

    # 1
    if best_vote is None and top is None:
        return _unidentified(mask_id)
    # 2
    if not config.open_branch_enabled:
        return _closed(mask_id, best_vote) if best_vote is not None else _unidentified(mask_id)
    # 3
    if best_vote is not None and best_vote.confidence >= config.tau_closed:
        closed_cos = None
        closed_key = best_vote.label_text.strip().lower()
        for c in candidates:
            if c.text == closed_key:
                closed_cos = c.similarity
                break
        if closed_cos is None or top.similarity - closed_cos <= config.delta_margin:
            return _closed(mask_id, best_vote)
    # 4
    if (
        top is not None
        and top.text not in taxonomy_names
        and top.similarity >= config.tau_open
    ):
        return _open(mask_id, top)
    # 5
    if best_vote is not None and best_vote.confidence >= config.tau_closed:
        return _closed(mask_id, best_vote)
    # 6
    if top is not None and top.similarity >= config.tau_open:
        return _open(mask_id, top)
    # 7
    if best_vote is not None:
        return _closed(mask_id, best_vote)
    # 8
    return _unidentified(mask_id)


@dataclass
class RenderResult:
    semantic_map: SemanticMap
    unresolved: Counter = field(default_factory=Counter)  # label text -> mask count


def parse_synonyms(text: str) -> dict[str, str]:
    """Parse 'alias = canonical' lines; '#' starts a comment."""
    table = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"synonym line {lineno}: expected 'alias = canonical'")
        alias, canonical = (part.strip().lower() for part in line.split("=", 1))
        if not alias or not canonical:
            raise ValueError(f"synonym line {lineno}: empty alias or canonical name")
        table[alias] = canonical
    return table


def resolve_label(text: str, taxonomy: Taxonomy, synonym_map) -> int | None:
    """Label text -> class id via exact match, then synonym lookup."""
    key = text.strip().lower()
    cid = taxonomy.id_of(key)
    if cid is not None:
        return cid
    canonical = synonym_map.get(key)
    if canonical is not None:
        return taxonomy.id_of(canonical)
    return None


def render_semantic_map(
    labels,
    masks: MaskSet,
    output_taxonomy: Taxonomy,
    synonym_map=None,
) -> RenderResult:
    """Paint fused labels into a dense map in the output taxonomy.

    Masks are painted in descending area order so smaller, finer masks
    overwrite larger ones. Unresolvable and "unidentified" labels paint
    nothing and are tallied in the result.
    """
    if synonym_map is None:
        synonym_map = {}
    by_id = {m.mask_id: m for m in masks.masks}
    order = []
    for label in labels:
        mask = by_id.get(label.mask_id)
        if mask is None:
            raise KeyError(f"fused label references unknown mask {label.mask_id!r}")
        order.append((mask, label))
    fixture_pos = {m.mask_id: i for i, m in enumerate(masks.masks)}
    order.sort(key=lambda pair: (-mask_area(pair[0]), fixture_pos[pair[0].mask_id]))

    flat = np.full(masks.width * masks.height, output_taxonomy.void_id, dtype=np.uint16)
    unresolved = Counter()
    for mask, label in order:
        if label.source == SOURCE_UNIDENTIFIED:
            continue
        cid = resolve_label(label.label_text, output_taxonomy, synonym_map)
        if cid is None:
            unresolved[label.label_text] += 1
            continue
        flat[foreground_indices(mask)] = cid

    grid = flat.reshape((masks.height, masks.width), order="F")
    smap = SemanticMap(
        width=masks.width,
        height=masks.height,
        labels=grid,
        taxonomy_id=output_taxonomy.taxonomy_id,
    )
    if unresolved:
        log.warning(
            "image %s: %d mask label(s) not in taxonomy %r: %s",
            masks.image_id,
            sum(unresolved.values()),
            output_taxonomy.taxonomy_id,
            dict(unresolved),
        )
    return RenderResult(semantic_map=smap, unresolved=unresolved)
