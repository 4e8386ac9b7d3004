from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from ..errors import InvalidStateError

PromptMode = Literal["identifier", "terminology"]


@dataclass
class IdentifierTable:
    """One learnable condition vector per class identifier ``[V^i]``."""

    metaclass: str
    embeddings: np.ndarray
    terminology_names: list[str] | None = None

    def __post_init__(self):
        if self.embeddings.ndim != 2 or len(self.embeddings) < 1:
            raise ValueError("embeddings must be an (N, E) array with N >= 1")
        if self.terminology_names is not None and len(self.terminology_names) != len(self.embeddings):
            raise ValueError("need exactly one terminology name per class")

    @property
    def num_classes(self) -> int:
        return len(self.embeddings)

    @classmethod
    def from_metaclass(cls, metaclass: str, num_classes: int, encoder, terminology_names=None):
        """Every identifier starts at the metaclass word's embedding."""
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        base = encoder.word_vector(metaclass.lower())
        emb = np.tile(base, (num_classes, 1)).astype(encoder.dtype)
        return cls(metaclass, emb, None if terminology_names is None else list(terminology_names))


def build_prompt(class_index: int, mode: PromptMode, table: IdentifierTable) -> str:
    if not 1 <= class_index <= table.num_classes:
        raise ValueError(f"class index {class_index} outside [1, {table.num_classes}]")
    if mode == "identifier":
        return f"photo of a [V^{class_index}] {table.metaclass}"
    if mode == "terminology":
        if table.terminology_names is None:
            raise InvalidStateError("terminology prompts need class names")
        return f"photo of a {table.terminology_names[class_index - 1]}"
    raise ValueError(f"unknown prompt mode {mode!r}")


def encode_classes(encoder, table: IdentifierTable, classes, mode: PromptMode = "identifier", keep=None):
    """Encode prompts for 1-based ``classes``; rows with ``keep`` False get the empty prompt."""
    classes = np.asarray(classes)
    prompts = [
        build_prompt(int(c), mode, table) if keep is None or keep[b] else ""
        for b, c in enumerate(classes)
    ]
    return encoder.encode(prompts, identifiers=table.embeddings)
