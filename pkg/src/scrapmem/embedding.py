"""Phrase embedders: a hashed trigram test embedder and a remote endpoint."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Sequence

import numpy as np

from .chat import ChatClient

DEFAULT_DIM = 64


class EmbeddingError(ValueError):
    pass


def normalize(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise EmbeddingError("non-finite embedding")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise EmbeddingError("zero-norm embedding")
    return vec / norm


def trigrams(phrase: str) -> List[str]:
    padded = f"  {' '.join(phrase.lower().split())} "
    return [padded[i : i + 3] for i in range(len(padded) - 2)]


@lru_cache(maxsize=65536)
def _slot(gram: str, dim: int) -> tuple:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "big")
    return value % dim, 1.0 if (value >> 63) & 1 else -1.0


@dataclass(frozen=True)
class TrigramEmbedder:
    """Signed feature-hashed bag of character trigrams, L2-normalized."""

    dim: int = DEFAULT_DIM
    mode: str = "deterministic-test"

    def embed(self, phrase: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in trigrams(phrase):
            idx, sign = _slot(gram, self.dim)
            vec[idx] += sign
        if not vec.any():
            # Hash cancellation on tiny inputs; fall back to the first slot's sign.
            idx, sign = _slot(trigrams(phrase)[0] if phrase.strip() else "   ", self.dim)
            vec[idx] = sign
        return normalize(vec)

    def embed_many(self, phrases: Sequence[str]) -> np.ndarray:
        return np.stack([self.embed(p) for p in phrases]) if phrases else np.zeros((0, self.dim))


@dataclass
class RemoteEmbedder:
    client: ChatClient = field(default_factory=ChatClient)
    model: str = "all-MiniLM-L6-v2"
    dim: int = 384
    mode: str = "remote"

    def embed(self, phrase: str) -> np.ndarray:
        return self.embed_many([phrase])[0]

    def embed_many(self, phrases: Sequence[str]) -> np.ndarray:
        if not phrases:
            return np.zeros((0, self.dim))
        rows = self.client.embed(list(phrases), model=self.model)
        out = np.stack([normalize(np.asarray(r)) for r in rows])
        if out.shape[1] != self.dim:
            raise EmbeddingError(f"expected dimension {self.dim}, got {out.shape[1]}")
        return out
