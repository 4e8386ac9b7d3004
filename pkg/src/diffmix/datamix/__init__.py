"""Label algebra, dataset construction and real/synthetic sampling."""

from .augment import cutmix, mixup
from .labels import one_hot, smooth_label, soft_label, target_weight
from .sampler import MixedSampler, MixedSamplerConfig, sample_batch
from .subsets import LongTailSpec, longtail_counts, make_longtail, subsample_fewshot, synthetic_target_counts

__all__ = [
    "LongTailSpec", "MixedSampler", "MixedSamplerConfig", "cutmix", "longtail_counts", "make_longtail",
    "mixup", "one_hot", "sample_batch", "smooth_label", "soft_label", "subsample_fewshot",
    "synthetic_target_counts", "target_weight",
]
