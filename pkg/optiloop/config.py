import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from optiloop.exceptions import ConfigError
from optiloop.services.consensus import ConsensusConfig
from optiloop.services.mbr_select import MbrConfig
from optiloop.services.memory_store import RetrievalConfig
from optiloop.services.validation import ValidationConfig

logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """
    Provider selection and credentials, read from the environment
    """
    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Language-model provider
    LLM_PROVIDER: Literal["scripted", "http"] = "scripted"
    LLM_ENDPOINT: str = ""
    LLM_MODEL: str = ""
    LLM_API_KEY: Optional[str] = None
    LLM_SCRIPT: Optional[str] = None

    # Embeddings
    EMBEDDING_PROVIDER: Literal["hash", "sentence-transformers"] = "hash"
    EMBEDDING_MODEL: str = "all-MiniLM-L6-v2"
    EMBEDDING_DIMENSION: int = 64

    # Provider guard
    PROVIDER_MAX_RETRIES: int = 2
    PROVIDER_BACKOFF_SECONDS: float = 0.5
    PROVIDER_MAX_IN_FLIGHT: int = 4

    RUN_DIR: str = "runs"
    LOG_LEVEL: str = "INFO"


settings = Settings()


class RunConfig(BaseModel):
    """Hyperparameters of one pipeline run, grouped per stage"""
    model_config = ConfigDict(extra="forbid")

    retrieval: RetrievalConfig = Field(default_factory=RetrievalConfig)
    mbr: MbrConfig = Field(default_factory=MbrConfig)
    consensus: ConsensusConfig = Field(default_factory=ConsensusConfig)
    validation: ValidationConfig = Field(default_factory=ValidationConfig)
    batch_size: int = Field(default=5, ge=1)
    seed: int = 0
    available_solvers: List[str] = Field(default_factory=lambda: ["toy-bruteforce"])
    toy_variable_cap: int = Field(default=12, ge=1)
    toy_grid_cap: int = Field(default=10 ** 7, ge=1)
    simulator: Literal["expression", "agent"] = "expression"
    llm_provider: Literal["scripted", "http", "replay"] = "scripted"
    llm_script: Optional[str] = None
    embedding_provider: Literal["hash", "sentence-transformers"] = "hash"
    embedding_dimension: int = Field(default=64, ge=1)
    memory_path: Optional[str] = None
    run_dir: str = "runs"

    @model_validator(mode="after")
    def _solvers(self) -> "RunConfig":
        if not self.available_solvers:
            raise ValueError("available_solvers must name at least one solver")
        return self

    @classmethod
    def from_settings(cls, **overrides) -> "RunConfig":
        values = {
            "llm_provider": settings.LLM_PROVIDER,
            "llm_script": settings.LLM_SCRIPT,
            "embedding_provider": settings.EMBEDDING_PROVIDER,
            "embedding_dimension": settings.EMBEDDING_DIMENSION,
            "run_dir": settings.RUN_DIR,
        }
        values.update(overrides)
        return cls.model_validate(values)


def load_run_config(path: Optional[Union[str, Path]] = None, **overrides) -> RunConfig:
    """
    Read a run configuration file on top of the environment settings.

    Raises:
        ConfigError: unreadable file or a value outside its stage's invariants
    """
    data = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.from_settings(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid run configuration: {e}") from e
