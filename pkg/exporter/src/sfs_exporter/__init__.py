"""sfs_exporter: turn images into engine fixture directories."""
from .backends import BACKENDS, ClassicalBackend, HFBackend, StageFailure
from .export import ALL_STAGES, ExportJob, ExportResult, run_export
from .formats import (
    rle_encode,
    write_embedding_file,
    write_label_grid,
    write_manifest,
    write_taxonomy_file,
)
from .phrases import extract_phrases, load_lexicon

__version__ = "0.1.0"

__all__ = [
    "BACKENDS",
    "ClassicalBackend",
    "HFBackend",
    "StageFailure",
    "ALL_STAGES",
    "ExportJob",
    "ExportResult",
    "run_export",
    "rle_encode",
    "write_embedding_file",
    "write_label_grid",
    "write_manifest",
    "write_taxonomy_file",
    "extract_phrases",
    "load_lexicon",
    "__version__",
]
