"""Keyword embedding providers for meaning-based summarization.

Real deployments would plug in trained word vectors; for tests and
synthetic corpora a deterministic character-trigram fallback is enough to
give keywords with shared stems nearby vectors.
"""

from __future__ import annotations

import numpy as np

from .hashing import stable_hash64


class EmbeddingError(ValueError):
    pass


class EmbeddingProvider:
    """Maps every keyword to exactly one finite, L2-normalized vector."""

    source = "abstract"
    dimension = 0

    def vector(self, keyword: str) -> np.ndarray:
        raise NotImplementedError

    def matrix(self, keywords) -> np.ndarray:
        return np.stack([self.vector(k) for k in keywords])


class DeterministicFallback(EmbeddingProvider):
    """Character-trigram counts hashed into a fixed-width vector.

    The trigrams of ``^keyword$`` are hashed into ``dimension`` buckets
    with a sign bit, then the vector is L2-normalized. Deterministic for
    a fixed hash seed.
    """

    source = "DeterministicFallback"

    def __init__(self, dimension: int = 64, seed: int = 0x7A19):
        self.dimension = dimension
        self._seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, keyword: str) -> np.ndarray:
        cached = self._cache.get(keyword)
        if cached is not None:
            return cached
        padded = "^" + keyword + "$"
        vec = np.zeros(self.dimension, dtype=np.float64)
        for i in range(len(padded) - 2):
            h = stable_hash64(padded[i : i + 3], self._seed)
            idx = h % self.dimension
            sign = 1.0 if (h >> 32) & 1 else -1.0
            vec[idx] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[stable_hash64(keyword, self._seed) % self.dimension] = 1.0
            norm = 1.0
        vec /= norm
        self._cache[keyword] = vec
        return vec


class FileVectors(EmbeddingProvider):
    """Embeddings loaded from a whitespace-separated text file.

    One record per line: the keyword followed by the vector components.
    All records must have the same dimension. Missing keywords raise
    unless a fallback provider is supplied.
    """

    source = "FileVectors"

    def __init__(self, path, fallback: EmbeddingProvider | None = None):
        self._vectors: dict[str, np.ndarray] = {}
        self._fallback = fallback
        dim = None
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                word, comps = parts[0], parts[1:]
                if dim is None:
                    dim = len(comps)
                    if dim == 0:
                        raise EmbeddingError(f"{path}:{lineno}: no vector components")
                elif len(comps) != dim:
                    raise EmbeddingError(
                        f"{path}:{lineno}: expected {dim} components, got {len(comps)}"
                    )
                vec = np.array([float(c) for c in comps], dtype=np.float64)
                norm = float(np.linalg.norm(vec))
                if not np.isfinite(vec).all() or norm == 0.0:
                    raise EmbeddingError(f"{path}:{lineno}: non-finite or zero vector")
                self._vectors[word] = vec / norm
        if dim is None:
            raise EmbeddingError(f"{path}: empty embedding file")
        self.dimension = dim
        if fallback is not None and fallback.dimension != dim:
            raise EmbeddingError("fallback dimension does not match file dimension")

    def vector(self, keyword: str) -> np.ndarray:
        vec = self._vectors.get(keyword)
        if vec is None:
            if self._fallback is not None:
                return self._fallback.vector(keyword)
            raise EmbeddingError(f"no embedding for keyword {keyword!r}")
        return vec
