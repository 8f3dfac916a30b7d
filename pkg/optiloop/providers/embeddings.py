"""
Embedding providers: a seeded offline hasher and a sentence-transformers
model loaded on first use.
"""

import hashlib
import logging
import re
from typing import List, Sequence

import numpy as np

from optiloop.exceptions import ProviderError, ProviderUnavailable
from optiloop.providers.base import EmbeddingProvider

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[A-Za-z_]+|\d+(?:\.\d+)?|[^\sA-Za-z_\d]")


def _check_texts(texts: Sequence[str]) -> None:
    if not texts:
        raise ProviderError("embed requires at least one text")


class HashEmbedder(EmbeddingProvider):
    """
    Deterministic bag-of-tokens embedder.

    Every token draws a standard-normal vector from a generator seeded with
    ``sha256(seed:token)``; a text embeds to the sum over its tokens, so
    identical text always yields an identical vector and texts that share
    vocabulary land close together.
    """

    def __init__(self, dimension: int = 64, seed: int = 0):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self.identifier = f"hash-{dimension}-seed{seed}"
        self._cache = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vector = self._cache.get(token)
        if vector is None:
            digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            vector = rng.standard_normal(self.dimension)
            self._cache[token] = vector
        return vector

    def embed_one(self, text: str) -> List[float]:
        tokens = [token.lower() for token in _TOKEN_RE.findall(text)] or ["<empty>"]
        total = np.zeros(self.dimension)
        for token in tokens:
            total = total + self._token_vector(token)
        return total.tolist()

    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        _check_texts(texts)
        return [self.embed_one(text) for text in texts]


class SentenceTransformerEmbedder(EmbeddingProvider):
    def __init__(self, model_name: str = "all-MiniLM-L6-v2"):
        """
        Initialize the embedder with a specific model.

        Args:
            model_name: Name of the sentence-transformers model to use
        """
        self.model_name = model_name
        self.identifier = f"sentence-transformers/{model_name}"
        self.model = None  # Lazy loading

    def _ensure_model_loaded(self):
        """Ensure the model is loaded before use"""
        if self.model is None:
            try:
                from sentence_transformers import SentenceTransformer
            except ImportError as e:
                raise ProviderUnavailable(
                    "sentence-transformers is not installed; see requirements-live.txt"
                ) from e
            logger.info(f"Loading model: {self.model_name}")
            self.model = SentenceTransformer(self.model_name)
            logger.info(f"Model loaded with dimension: {self.model.get_sentence_embedding_dimension()}")

    @property
    def dimension(self) -> int:
        self._ensure_model_loaded()
        return self.model.get_sentence_embedding_dimension()

    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        _check_texts(texts)
        self._ensure_model_loaded()
        embeddings = self.model.encode(list(texts))
        return [row.tolist() for row in embeddings]
