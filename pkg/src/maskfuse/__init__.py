"""maskfuse: deterministic semantic labeling for class-agnostic masks.

Fuses closed-set majority votes and open-vocabulary cosine-ranked
candidates into one label per mask, renders the final semantic map, and
evaluates/benchmarks the result. All model outputs enter as fixtures.
"""

from .errors import EngineError
from .masks import BinaryMask, MaskSet, mask_area, mask_iou, rle_decode, rle_encode, select_mask_budget
from .taxonomy import ClosedSetVote, SemanticMap, Taxonomy, VOID_ID, majority_vote, vote_all
from .openvocab import CandidateLabel, Caption, EmbeddingTable, cosine, extract_noun_phrases, rank_candidates
from .fusion import FusedLabel, FusionConfig, fuse_mask, render_semantic_map
from .evaluation import ConfusionMatrix, EvalReport, accumulate, finalize
from .fixtures import SceneSpec, generate_synthetic_scene, load_manifest
from .pipeline import PipelineConfig, run_bench, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "BinaryMask", "MaskSet", "mask_area", "mask_iou", "rle_decode", "rle_encode",
    "select_mask_budget", "ClosedSetVote", "SemanticMap", "Taxonomy", "VOID_ID",
    "majority_vote", "vote_all", "CandidateLabel", "Caption", "EmbeddingTable",
    "cosine", "extract_noun_phrases", "rank_candidates", "FusedLabel", "FusionConfig",
    "fuse_mask", "render_semantic_map", "ConfusionMatrix", "EvalReport", "accumulate",
    "finalize", "SceneSpec", "generate_synthetic_scene", "load_manifest",
    "PipelineConfig", "run_bench", "run_pipeline", "EngineError",
]
