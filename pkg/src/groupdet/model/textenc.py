"""
Text Encoders - Fixed-length embeddings for text layer content.

Two encoders share one interface:
- HashedNgramEncoder: hashed character 1-3-gram counts, a seeded random
  projection to K dims, then L2 normalization. No downloads, deterministic
  across processes.
- ExternalEncoder: OpenAI embeddings requested at K dimensions.

The empty string encodes to the zero vector for both.
"""

import zlib
from functools import lru_cache
from typing import Protocol

import numpy as np
from numpy.typing import NDArray

from groupdet.core.config import DetectorConfig, get_logger, settings
from groupdet.core.errors import ConfigError

logger = get_logger("model.textenc")

DEFAULT_BUCKETS = 4096
PROJECTION_SEED = 20210705


class TextEncoder(Protocol):
    """Maps text content to a length-`dim` float32 vector with norm 0 or 1."""

    dim: int

    def encode(self, content: str) -> NDArray[np.float32]: ...


def _normalize(vector: NDArray[np.float64]) -> NDArray[np.float32]:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0 or not np.isfinite(norm):
        return np.zeros(vector.shape[0], dtype=np.float32)
    return (vector / norm).astype(np.float32)


# ============================================
# Hashed N-gram Encoder
# ============================================

def char_ngrams(content: str, max_n: int = 3) -> list[str]:
    """All character n-grams of length 1..max_n, in order."""
    grams: list[str] = []
    for n in range(1, max_n + 1):
        grams.extend(content[i:i + n] for i in range(len(content) - n + 1))
    return grams


class HashedNgramEncoder:
    """
    Deterministic default encoder.

    Buckets are chosen by CRC32 of the UTF-8 n-gram, so the same string
    maps to the same vector in every process regardless of hash seeding.
    """

    def __init__(self, dim: int = 16, buckets: int = DEFAULT_BUCKETS, seed: int = PROJECTION_SEED):
        if dim < 1 or buckets < 1:
            raise ValueError(f"dim and buckets must be positive, got {dim}, {buckets}")
        self.dim = dim
        self.buckets = buckets
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((buckets, dim))
        self._encode_cached = lru_cache(maxsize=8192)(self._encode)

    def counts(self, content: str) -> NDArray[np.float64]:
        counts = np.zeros(self.buckets, dtype=np.float64)
        for gram in char_ngrams(content):
            counts[zlib.crc32(gram.encode("utf-8")) % self.buckets] += 1.0
        return counts

    def _encode(self, content: str) -> NDArray[np.float32]:
        if not content:
            return np.zeros(self.dim, dtype=np.float32)
        return _normalize(self.counts(content) @ self._projection)

    def encode(self, content: str) -> NDArray[np.float32]:
        return self._encode_cached(content).copy()


# ============================================
# External Encoder
# ============================================

class ExternalEncoder:
    """OpenAI embeddings truncated server-side to `dim` and L2-normalized."""

    def __init__(self, dim: int = 16, model: str | None = None, api_key: str | None = None):
        self.dim = dim
        self.model = model or settings.openai_embedding_model
        self._api_key = api_key or settings.openai_api_key
        self._cache: dict[str, NDArray[np.float32]] = {}
        self._client = None

    def _get_client(self):  # type: ignore[no-untyped-def]
        if self._client is None:
            from openai import OpenAI

            if not self._api_key:
                raise ConfigError("external text encoder requires GROUPDET_OPENAI_API_KEY")
            self._client = OpenAI(api_key=self._api_key)
        return self._client

    def encode_batch(self, contents: list[str]) -> list[NDArray[np.float32]]:
        """Encode many strings with one request for the uncached ones."""
        missing = sorted({c for c in contents if c and c not in self._cache})
        if missing:
            response = self._get_client().embeddings.create(
                model=self.model,
                input=missing,
                dimensions=self.dim,
            )
            for content, item in zip(missing, response.data, strict=True):
                self._cache[content] = _normalize(np.asarray(item.embedding, dtype=np.float64))
            logger.debug(f"Embedded {len(missing)} texts with {self.model}")
        return [
            self._cache[c].copy() if c else np.zeros(self.dim, dtype=np.float32)
            for c in contents
        ]

    def encode(self, content: str) -> NDArray[np.float32]:
        return self.encode_batch([content])[0]


def get_encoder(config: DetectorConfig) -> TextEncoder:
    """Build the encoder selected by `text_encoder`."""
    if config.text_encoder == "external":
        return ExternalEncoder(dim=config.text_dim)
    return HashedNgramEncoder(dim=config.text_dim)
