from .generate import check_policy, synthesize_dataset, synthesize_one
from .manifest import DatasetManifest, SyntheticSample
from .policy import ReferencePolicy, TranslationSpec, reference_index, select_reference
from .scoring import CaptionScorer, CentroidScorer, captions_for, clean, clip_confidence

__all__ = [
    "CaptionScorer", "CentroidScorer", "DatasetManifest", "ReferencePolicy", "SyntheticSample",
    "TranslationSpec", "captions_for", "check_policy", "clean", "clip_confidence", "reference_index",
    "select_reference", "synthesize_dataset", "synthesize_one",
]
