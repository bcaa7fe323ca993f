"""Feature extraction bridge for the component-based OOD engine."""

from .model import TinyVisionLanguageModel, load_model
from .pipeline import (
    ExtractionJob,
    ExtractionSummary,
    build_vocabulary,
    extract_record,
    load_image,
    run_extraction,
)

__all__ = [
    "TinyVisionLanguageModel",
    "load_model",
    "ExtractionJob",
    "ExtractionSummary",
    "build_vocabulary",
    "extract_record",
    "load_image",
    "run_extraction",
]
