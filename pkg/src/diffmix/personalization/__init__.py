from .checkpoint import PersonalizedCheckpoint
from .finetune import FinetuneConfig, finetune
from .identifiers import IdentifierTable, build_prompt, encode_classes
from .lora import LowRankAdapter, attach_adapters, detach_adapters

__all__ = [
    "FinetuneConfig", "IdentifierTable", "LowRankAdapter", "PersonalizedCheckpoint", "attach_adapters",
    "build_prompt", "detach_adapters", "encode_classes", "finetune",
]
