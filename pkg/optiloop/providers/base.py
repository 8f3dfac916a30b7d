"""
Provider contracts for language models, embedders and optimizer drivers.
"""

import hashlib
import logging
import time
from abc import ABC, abstractmethod
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar

from pydantic import BaseModel, ConfigDict, Field, field_validator

from optiloop.exceptions import RateLimited
from optiloop.models import DecisionProcess, SolverRun

logger = logging.getLogger(__name__)

T = TypeVar("T")


class RequestKind(str, Enum):
    EXTRACT = "extract"
    JUDGE = "judge"
    RECOMMEND = "recommend"
    GENERATE_OPTIMIZER = "generate_optimizer"
    GENERATE_SIMULATOR = "generate_simulator"


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class ProviderRequest(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: RequestKind
    prompt: str = Field(min_length=1)
    attachments: Tuple[Tuple[str, str], ...] = ()
    run_id: str = "default"

    @field_validator("prompt")
    @classmethod
    def _not_blank(cls, prompt: str) -> str:
        if not prompt.strip():
            raise ValueError("prompt must not be blank")
        return prompt

    @property
    def prompt_hash(self) -> str:
        return prompt_hash(self.prompt)


class LLMProvider(ABC):
    """Text completion contract"""

    name = "llm"

    @abstractmethod
    def complete(self, request: ProviderRequest) -> str:
        """
        Answer one request.

        Raises:
            ProviderUnavailable: provider not configured or unreachable
            RateLimited: transient refusal; callers may retry
        """


class EmbeddingProvider(ABC):
    """Dense text embedding contract with a fixed dimensionality"""

    identifier = "embedder"
    dimension = 0

    @abstractmethod
    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        pass


class OptimizerDriver(ABC):
    """One optimizer implementation variant"""

    name = "variant"

    @abstractmethod
    def run(self, process: DecisionProcess, feedback: Optional[str] = None) -> SolverRun:
        """
        Solve the process, optionally guided by a discrepancy report from the
        previous validation round.
        """


def call_with_retries(
    fn: Callable[[], T],
    max_retries: int,
    backoff_seconds: float,
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Call ``fn``, retrying up to ``max_retries`` times on RateLimited with exponential backoff"""
    attempt = 0
    while True:
        try:
            return fn()
        except RateLimited as e:
            if attempt >= max_retries:
                raise
            delay = backoff_seconds * (2 ** attempt)
            attempt += 1
            logger.warning(f"Rate limited ({e}); retry {attempt}/{max_retries} in {delay:.2f}s")
            sleep(delay)
