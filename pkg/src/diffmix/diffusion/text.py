"""Toy prompt encoder.

Prompts are split into lowercase word tokens. Plain words map to fixed
pseudo-random vectors derived from a hash of the word, identifier tokens
``[V^i]`` read row ``i - 1`` of a caller-supplied matrix, and every token gets
a fixed sinusoidal position code. A ``<bos>`` token is always first, so the
empty prompt encodes to a single token and serves as the unconditional input.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

IDENTIFIER_RE = re.compile(r"\[V\^(\d+)\]")
_TOKEN_RE = re.compile(r"\[V\^\d+\]|[A-Za-z0-9'\-]+")
BOS = "<bos>"


@dataclass
class Condition:
    """Encoded prompts: token vectors (B, L, E) and a validity mask (B, L)."""

    tokens: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def take(self, idx) -> "Condition":
        return Condition(self.tokens[idx], self.mask[idx])

    @staticmethod
    def concat(conds: list["Condition"]) -> "Condition":
        L = max(c.tokens.shape[1] for c in conds)
        toks, masks = [], []
        for c in conds:
            pad = L - c.tokens.shape[1]
            toks.append(np.pad(c.tokens, ((0, 0), (0, pad), (0, 0))))
            masks.append(np.pad(c.mask, ((0, 0), (0, pad))))
        return Condition(np.concatenate(toks), np.concatenate(masks))


def tokenize(prompt: str) -> list[str]:
    return [BOS] + [t if t.startswith("[V^") else t.lower() for t in _TOKEN_RE.findall(prompt)]


def _positions(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    freq = np.exp(-np.log(100.0) * np.arange(0, dim, 2) / dim)
    out = np.zeros((max_len, dim))
    out[:, 0::2] = np.sin(pos * freq)
    out[:, 1::2] = np.cos(pos * freq)[:, : dim // 2]
    return out


class ToyTextEncoder:
    def __init__(self, dim: int = 16, max_len: int = 16, seed: int = 0, dtype=np.float32):
        self.dim = dim
        self.max_len = max_len
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._pos = _positions(max_len, dim).astype(self.dtype)
        self._cache: dict[str, np.ndarray] = {}

    def word_vector(self, word: str) -> np.ndarray:
        vec = self._cache.get(word)
        if vec is None:
            h = hashlib.sha256(f"{self.seed}:{word}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
            vec = rng.standard_normal(self.dim).astype(self.dtype)
            vec.flags.writeable = False
            self._cache[word] = vec
        return vec

    def encode(self, prompts: list[str], identifiers: np.ndarray | None = None):
        """Encode a batch of prompts.

        Returns ``(Condition, slots)`` where ``slots`` lists
        ``(row, position, identifier_index)`` for every identifier token, with
        the 0-based index into ``identifiers``. Identifier tokens without an
        ``identifiers`` matrix raise ``ValueError``.
        """
        seqs = [tokenize(p) for p in prompts]
        L = max(len(s) for s in seqs)
        if L > self.max_len:
            raise ValueError(f"prompt longer than {self.max_len} tokens")
        tokens = np.zeros((len(seqs), L, self.dim), dtype=self.dtype)
        mask = np.zeros((len(seqs), L), dtype=bool)
        slots = []
        for b, seq in enumerate(seqs):
            for p, tok in enumerate(seq):
                m = IDENTIFIER_RE.fullmatch(tok)
                if m:
                    i = int(m.group(1)) - 1
                    if identifiers is None or not 0 <= i < len(identifiers):
                        raise ValueError(f"no embedding for identifier {tok}")
                    tokens[b, p] = identifiers[i]
                    slots.append((b, p, i))
                else:
                    tokens[b, p] = self.word_vector(tok)
                mask[b, p] = True
            tokens[b, : len(seq)] += self._pos[: len(seq)]
        return Condition(tokens, mask), slots

    def identifier_grad(self, d_tokens: np.ndarray, slots, n_identifiers: int) -> np.ndarray:
        """Accumulate token-level gradients into identifier rows."""
        grad = np.zeros((n_identifiers, self.dim), dtype=d_tokens.dtype)
        for b, p, i in slots:
            grad[i] += d_tokens[b, p]
        return grad

    def uncond(self, n: int) -> Condition:
        return self.encode([""] * n)[0]
