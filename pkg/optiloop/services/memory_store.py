"""
Memory of solved problems, stored as (description, formulation, code)
triplets, with diversity-aware retrieval over problem descriptions.
"""

import hashlib
import json
import logging
import os
import threading
from collections import Counter
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from optiloop.exceptions import DimensionMismatch, EmptyStore, ProviderError, ZeroVector
from optiloop.providers.base import EmbeddingProvider

logger = logging.getLogger(__name__)

STORE_FORMAT = "optiloop-memory/1"


class ProblemType(str, Enum):
    KNAPSACK = "Knapsack"
    ASSIGNMENT = "Assignment"
    SCHEDULING = "Scheduling"
    TRANSPORTATION = "Transportation"
    FACILITY_LOCATION = "Facility Location"
    NETWORK_FLOW = "Network Flow"
    TSP = "TSP"
    VEHICLE_ROUTING = "Vehicle Routing"
    RESOURCE_ALLOCATION = "Resource Allocation"
    PRODUCTION_PLANNING = "Production Planning"
    INVENTORY_MANAGEMENT = "Inventory Management"
    CUTTING_STOCK = "Cutting Stock"
    BIN_PACKING = "Bin Packing"
    LINEAR_PROGRAMMING = "Linear Programming"
    MISCELLANEOUS = "Miscellaneous"

    @classmethod
    def parse(cls, label: str) -> "ProblemType":
        wanted = label.strip().lower().replace("_", " ")
        for member in cls:
            if member.value.lower() == wanted:
                return member
        raise ValueError(f"unknown problem type '{label}'")


class MemoryEntry(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    description: str
    formulation: str
    code: str
    problem_type: ProblemType
    embedding: Tuple[float, ...]

    @field_validator("problem_type", mode="before")
    @classmethod
    def _taxonomy(cls, value):
        if isinstance(value, str):
            return ProblemType.parse(value)
        return value


class RetrievalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    pool_size: int = Field(default=9, gt=0)
    select_k: int = Field(default=3, gt=0)
    lambda_: float = Field(default=0.5, ge=0.0, le=1.0, alias="lambda")
    similarity_threshold: float = Field(default=0.6, ge=-1.0, le=1.0)

    @model_validator(mode="after")
    def _k_within_pool(self) -> "RetrievalConfig":
        if self.select_k > self.pool_size:
            raise ValueError("select_k must not exceed pool_size")
        return self


class RetrievedExample(BaseModel):
    model_config = ConfigDict(frozen=True)

    entry: MemoryEntry
    similarity: float
    score: float

    def to_dict(self) -> Dict[str, object]:
        return {
            "id": self.entry.id,
            "problem_type": self.entry.problem_type.value,
            "similarity": self.similarity,
            "score": self.score,
            "description": self.entry.description,
            "formulation": self.entry.formulation,
            "code": self.entry.code,
        }


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """
    Cosine of the angle between two vectors, clipped to [-1, 1].

    Raises:
        DimensionMismatch: vectors differ in length
        ZeroVector: either vector has zero norm
    """
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"dimension {va.shape} does not match {vb.shape}")
    norm_a = np.linalg.norm(va)
    norm_b = np.linalg.norm(vb)
    if norm_a == 0 or norm_b == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(va, vb) / (norm_a * norm_b), -1.0, 1.0))


def greedy_diverse_selection(
    ids: Sequence[str],
    query_sim: Mapping[str, float],
    pair_sim: Callable[[str, str], float],
    k: int,
    lambda_: float,
) -> List[str]:
    """
    Greedy relevance/diversity trade-off.

    The first pick maximizes query similarity; each later pick maximizes
    ``query_sim[c] - lambda_ * mean(pair_sim(c, m) for m in selected)``.
    Ties go to the smallest id.
    """
    remaining = sorted(set(ids))
    selected: List[str] = []
    while remaining and len(selected) < k:
        if not selected:
            best = min(remaining, key=lambda c: (-query_sim[c], c))
        else:
            scores = {
                c: query_sim[c] - lambda_ * (sum(pair_sim(c, m) for m in selected) / len(selected))
                for c in remaining
            }
            best = min(remaining, key=lambda c: (-scores[c], c))
        selected.append(best)
        remaining.remove(best)
    return selected


def diversity_select(
    query_sim: Mapping[str, float],
    pool: Sequence[MemoryEntry],
    cfg: RetrievalConfig,
) -> List[MemoryEntry]:
    """Pick min(k, |pool|) entries balancing relevance and diversity"""
    by_id = {entry.id: entry for entry in pool}

    def pair_sim(a: str, b: str) -> float:
        return cosine_similarity(by_id[a].embedding, by_id[b].embedding)

    chosen = greedy_diverse_selection(list(by_id), query_sim, pair_sim, cfg.select_k, cfg.lambda_)
    return [by_id[entry_id] for entry_id in chosen]


def diversity_scores(
    query_sim: Mapping[str, float], selected: Sequence[MemoryEntry], lambda_: float
) -> List[float]:
    """Score each selected entry had at the step it was picked"""
    scores = []
    for position, entry in enumerate(selected):
        if position == 0:
            scores.append(query_sim[entry.id])
            continue
        previous = selected[:position]
        penalty = sum(cosine_similarity(entry.embedding, m.embedding) for m in previous) / len(previous)
        scores.append(query_sim[entry.id] - lambda_ * penalty)
    return scores


def content_id(description: str, formulation: str, code: str) -> str:
    digest = hashlib.sha256("\x00".join((description, formulation, code)).encode("utf-8")).hexdigest()
    return f"mem-{digest[:12]}"


EntrySource = Union[Mapping[str, str], Tuple[str, str, str, str]]


def _unpack(source: EntrySource) -> Tuple[str, str, str, str]:
    if isinstance(source, Mapping):
        return (
            source["description"],
            source.get("formulation", ""),
            source.get("code", ""),
            source.get("problem_type", ProblemType.MISCELLANEOUS.value),
        )
    description, formulation, code, problem_type = source
    return description, formulation, code, problem_type


class MemoryStore:
    """
    Linear-scan vector store over problem descriptions.

    Retrieval reads an immutable snapshot of the entry tuple; ingest swaps in
    a new tuple under a lock.
    """

    def __init__(self, dimension: int, embedder_id: str):
        self.dimension = dimension
        self.embedder_id = embedder_id
        self._entries: Tuple[MemoryEntry, ...] = ()
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> Tuple[MemoryEntry, ...]:
        return self._entries

    def add(self, entry: MemoryEntry) -> bool:
        if len(entry.embedding) != self.dimension:
            raise DimensionMismatch(
                f"entry {entry.id} has dimension {len(entry.embedding)}, store expects {self.dimension}"
            )
        with self._lock:
            if any(existing.id == entry.id for existing in self._entries):
                return False
            self._entries = self._entries + (entry,)
            return True

    def ingest(self, entries: Sequence[EntrySource], embedder: EmbeddingProvider, batch_size: int = 32) -> int:
        """
        Embed and index new triplets; content already present is skipped.

        Args:
            entries: (description, formulation, code, problem_type) tuples or dicts
            embedder: Provider used for the descriptions
            batch_size: Number of descriptions per embedder call

        Returns:
            Number of entries added
        """
        with self._lock:
            # Skip content already in the store or repeated in this batch
            known = {entry.id for entry in self._entries}
            pending: List[Tuple[int, str, Tuple[str, str, str, str]]] = []
            for index, source in enumerate(entries):
                fields = _unpack(source)
                entry_id = content_id(*fields[:3])
                if entry_id in known:
                    continue
                known.add(entry_id)
                pending.append((index, entry_id, fields))

            added: List[MemoryEntry] = []
            # Embed descriptions in batches
            for start in range(0, len(pending), batch_size):
                batch = pending[start:start + batch_size]
                try:
                    vectors = embedder.embed([fields[0] for _, _, fields in batch])
                except ProviderError as e:
                    first = batch[0][0]
                    raise ProviderError(f"embedding failed at entry {first}: {e}", entry_index=first) from e
                for (_, entry_id, fields), vector in zip(batch, vectors):
                    entry = MemoryEntry(
                        id=entry_id,
                        description=fields[0],
                        formulation=fields[1],
                        code=fields[2],
                        problem_type=fields[3],
                        embedding=tuple(float(v) for v in vector),
                    )
                    if len(entry.embedding) != self.dimension:
                        raise DimensionMismatch(
                            f"embedder returned dimension {len(entry.embedding)}, store expects {self.dimension}"
                        )
                    added.append(entry)
            self._entries = self._entries + tuple(added)
        logger.info(f"Ingested {len(added)} new entries; store now holds {len(self._entries)}")
        return len(added)

    def type_histogram(self) -> Dict[str, int]:
        counts = Counter(entry.problem_type for entry in self._entries)
        return {member.value: counts[member] for member in ProblemType if counts[member]}

    def retrieve_pool(self, query_embedding: Sequence[float], cfg: RetrievalConfig) -> List[Tuple[MemoryEntry, float]]:
        """
        Top-N entries whose description similarity reaches the threshold,
        sorted by descending similarity then ascending id.
        """
        snapshot = self._entries
        if not snapshot:
            raise EmptyStore("memory store is empty")
        scored = [(entry, cosine_similarity(query_embedding, entry.embedding)) for entry in snapshot]
        kept = [pair for pair in scored if pair[1] >= cfg.similarity_threshold]
        kept.sort(key=lambda pair: (-pair[1], pair[0].id))
        return kept[:cfg.pool_size]

    def search(self, query_text: str, embedder: EmbeddingProvider, cfg: RetrievalConfig) -> List[RetrievedExample]:
        """Embed the query, form the pool and greedily select diverse examples"""
        query_embedding = embedder.embed([query_text])[0]
        pool = self.retrieve_pool(query_embedding, cfg)
        if not pool:
            logger.info("No memory entries above the similarity threshold; continuing zero-shot")
            return []
        query_sim = {entry.id: sim for entry, sim in pool}
        selected = diversity_select(query_sim, [entry for entry, _ in pool], cfg)
        scores = diversity_scores(query_sim, selected, cfg.lambda_)
        return [
            RetrievedExample(entry=entry, similarity=query_sim[entry.id], score=score)
            for entry, score in zip(selected, scores)
        ]

    # persistence

    def save(self, path: Union[str, Path]) -> None:
        """Write the store as newline-delimited JSON with a header line"""
        path = Path(path)
        if path.parent and not path.parent.exists():
            os.makedirs(path.parent, exist_ok=True)
        header = {"format": STORE_FORMAT, "dimension": self.dimension, "embedder": self.embedder_id}
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps(header) + "\n")
            for entry in self._entries:
                f.write(json.dumps(entry.model_dump(mode="json")) + "\n")
        logger.info(f"Saved {len(self._entries)} memory entries to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MemoryStore":
        with open(path, "r", encoding="utf-8") as f:
            lines = [line for line in f if line.strip()]
        if not lines:
            raise EmptyStore(f"{path} has no header line")
        header = json.loads(lines[0])
        if header.get("format") != STORE_FORMAT:
            raise ValueError(f"{path} is not a memory store file")
        store = cls(dimension=int(header["dimension"]), embedder_id=str(header["embedder"]))
        for line in lines[1:]:
            store.add(MemoryEntry.model_validate(json.loads(line)))
        logger.info(f"Loaded {len(store)} memory entries from {path}")
        return store

    @classmethod
    def load_or_create(cls, path: Union[str, Path], embedder: EmbeddingProvider) -> "MemoryStore":
        if Path(path).exists():
            store = cls.load(path)
            if store.embedder_id != embedder.identifier:
                logger.warning(
                    f"Store was built with '{store.embedder_id}' but '{embedder.identifier}' is configured"
                )
            return store
        return cls(dimension=embedder.dimension, embedder_id=embedder.identifier)


def read_corpus(path: Union[str, Path]) -> List[Dict[str, str]]:
    """Read a JSON-lines corpus of {description, formulation, code, problem_type} records"""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(json.loads(line))
    return records


def materialize_examples(examples: Iterable[RetrievedExample], directory: Union[str, Path]) -> List[Path]:
    """Write each retrieved example as an importable Python file with a header docstring"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for k, example in enumerate(examples, start=1):
        header = (
            f"Training Example {k} | Similarity: {example.similarity:.3f} | "
            f"Type: {example.entry.problem_type.value.lower()}"
        )
        body = (
            f'"""\n{header}\n\nProblem:\n{example.entry.description}\n\n'
            f'Formulation:\n{example.entry.formulation}\n"""\n\n{example.entry.code}\n'
        )
        target = directory / f"example_{k}.py"
        target.write_text(body, encoding="utf-8")
        written.append(target)
    return written
