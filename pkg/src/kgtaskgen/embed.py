"""Text embedders. The hashing embedder is the deterministic offline default."""

from __future__ import annotations

import hashlib
from typing import Protocol, runtime_checkable

import numpy as np

from .graph import DEFAULT_DIMENSION
from .tokens import tokenize


@runtime_checkable
class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Signed feature hashing of token counts, L2-normalised.

    Identical text always maps to the identical vector; texts sharing tokens
    get positive cosine, disjoint vocabularies are (almost always) orthogonal.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 0):
        self.dimension = dimension
        self.seed = seed
        self._cache: dict[str, tuple[int, float]] = {}

    def _slot(self, token: str) -> tuple[int, float]:
        hit = self._cache.get(token)
        if hit is None:
            digest = hashlib.blake2b(
                token.encode("utf-8"), digest_size=8, key=str(self.seed).encode()
            ).digest()
            value = int.from_bytes(digest, "big")
            hit = (value % self.dimension, 1.0 if (value >> 63) & 1 else -1.0)
            self._cache[token] = hit
        return hit

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for tok in tokenize(text):
            idx, sign = self._slot(tok)
            vec[idx] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec


class SentenceTransformerEmbedder:
    """Wraps a sentence-transformers model (all-MiniLM-L6-v2 gives d=384).

    Needs the optional ``sentence-transformers`` dependency and model weights.
    """

    def __init__(self, model_name: str = "sentence-transformers/all-MiniLM-L6-v2"):
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(model_name)
        self.dimension = int(self._model.get_sentence_embedding_dimension())

    def embed(self, text: str) -> np.ndarray:
        return np.asarray(self._model.encode(text, normalize_embeddings=True), dtype=np.float64)
