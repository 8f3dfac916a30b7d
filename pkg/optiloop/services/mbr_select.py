"""
Component-wise minimum Bayes risk selection over extraction candidates,
followed by judge re-ranking of the top-q.
"""

import json
import logging
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from optiloop.exceptions import JudgeContractViolation, MissingEmbedding, ProviderError, WeightMismatch
from optiloop.models import DecisionProcess, serialize_decision_process
from optiloop.models.decision_process import decision_process_to_dict
from optiloop.prompts import judge_prompt
from optiloop.providers.base import EmbeddingProvider, LLMProvider, ProviderRequest, RequestKind
from optiloop.services.memory_store import cosine_similarity

logger = logging.getLogger(__name__)

COMPONENT_TYPES = ("constraints", "decision_variables", "objective", "inputs")
_COMPONENT_KEYS = {
    "constraints": "constraints",
    "decision_variables": "decision_variables",
    "objective": "objective_function",
    "inputs": "inputs",
}


class MbrConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_candidates: int = Field(default=5, ge=2)
    top_q: int = Field(default=3, ge=1)
    weights: Dict[str, float] = Field(
        default_factory=lambda: {"constraints": 0.6, "decision_variables": 0.2, "objective": 0.1, "inputs": 0.1}
    )

    @model_validator(mode="after")
    def _check(self) -> "MbrConfig":
        if self.top_q > self.num_candidates:
            raise ValueError("top_q must not exceed num_candidates")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights.values()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        return self


class ExtractionCandidate(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int = Field(ge=1)
    process: DecisionProcess
    component_texts: Dict[str, str]
    component_embeddings: Dict[str, Tuple[float, ...]] = Field(default_factory=dict)
    full_embedding: Optional[Tuple[float, ...]] = None


class JudgeVerdict(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    disagreement_analysis: str
    best_candidate_id: int
    confidence: Literal["high", "medium", "low"]
    reasoning: str
    fallback: bool = Field(default=False, exclude=True)

    def to_dict(self) -> Dict[str, object]:
        data = self.model_dump()
        data["fallback"] = self.fallback
        return data


def component_texts(process: DecisionProcess) -> Dict[str, str]:
    """Canonical compact JSON fragment per weighted component"""
    document = decision_process_to_dict(process)
    return {
        component: json.dumps(document[_COMPONENT_KEYS[component]], separators=(",", ":"), ensure_ascii=False)
        for component in COMPONENT_TYPES
    }


def build_candidates(
    processes: Sequence[DecisionProcess],
    embedder: EmbeddingProvider,
    ids: Optional[Sequence[int]] = None,
) -> List[ExtractionCandidate]:
    """
    Embed the four weighted components and the full extraction of each
    process in one call. Ids default to 1..n in input order.
    """
    ids = list(ids) if ids is not None else list(range(1, len(processes) + 1))
    if len(ids) != len(processes):
        raise ValueError("one id per process is required")
    texts: List[str] = []
    per_process: List[Dict[str, str]] = []
    for process in processes:
        parts = component_texts(process)
        per_process.append(parts)
        texts.extend(parts[c] for c in COMPONENT_TYPES)
        texts.append(serialize_decision_process(process))
    vectors = embedder.embed(texts) if texts else []

    stride = len(COMPONENT_TYPES) + 1
    candidates = []
    for offset, (process, parts) in enumerate(zip(processes, per_process)):
        chunk = vectors[offset * stride:(offset + 1) * stride]
        candidates.append(ExtractionCandidate(
            id=ids[offset],
            process=process,
            component_texts=parts,
            component_embeddings={c: tuple(chunk[k]) for k, c in enumerate(COMPONENT_TYPES)},
            full_embedding=tuple(chunk[-1]),
        ))
    return candidates


def _by_id(candidates: Sequence[ExtractionCandidate]) -> Dict[int, ExtractionCandidate]:
    return {c.id: c for c in candidates}


def _embedding(candidate: ExtractionCandidate, component: str) -> Tuple[float, ...]:
    vector = candidate.component_embeddings.get(component)
    if vector is None:
        raise MissingEmbedding(f"candidate {candidate.id} has no '{component}' embedding")
    return vector


def component_utility(candidates: Sequence[ExtractionCandidate], i: int, component: str) -> float:
    """Mean cosine between candidate i's component and the same component of every other candidate"""
    if len(candidates) < 2:
        raise ValueError("component utility needs at least two candidates")
    by_id = _by_id(candidates)
    target = _embedding(by_id[i], component)
    others = [c for c in candidates if c.id != i]
    return sum(cosine_similarity(_embedding(c, component), target) for c in others) / len(others)


def candidate_utility(candidates: Sequence[ExtractionCandidate], i: int, cfg: MbrConfig) -> float:
    if set(cfg.weights) != set(COMPONENT_TYPES):
        raise WeightMismatch(
            f"weights cover {sorted(cfg.weights)} but components are {sorted(COMPONENT_TYPES)}"
        )
    return sum(cfg.weights[c] * component_utility(candidates, i, c) for c in COMPONENT_TYPES)


def utilities(candidates: Sequence[ExtractionCandidate], cfg: MbrConfig) -> Dict[int, float]:
    return {c.id: candidate_utility(candidates, c.id, cfg) for c in candidates}


def select_top_q(candidates: Sequence[ExtractionCandidate], cfg: MbrConfig) -> List[ExtractionCandidate]:
    """The q highest-utility candidates, best first, ties to the smaller id"""
    scores = utilities(candidates, cfg)
    ranked = sorted(candidates, key=lambda c: (-scores[c.id], c.id))
    return ranked[:cfg.top_q]


def mbr_scores_report(candidates: Sequence[ExtractionCandidate], cfg: MbrConfig) -> Dict[str, object]:
    scores = utilities(candidates, cfg)
    kept = {c.id for c in select_top_q(candidates, cfg)}
    ranked = sorted(candidates, key=lambda c: (-scores[c.id], c.id))
    return {
        "total_candidates": len(candidates),
        "filtering_logic": f"Select Top-{cfg.top_q} based on embedding consensus score",
        "weights": {c: cfg.weights[c] for c in COMPONENT_TYPES},
        "scores": [
            {
                "id": c.id,
                "score": scores[c.id],
                "components": {k: component_utility(candidates, c.id, k) for k in COMPONENT_TYPES},
                "status": "PASSED" if c.id in kept else "FILTERED (Score too low)",
            }
            for c in ranked
        ],
    }


def _parse_verdict(text: str) -> JudgeVerdict:
    return JudgeVerdict.model_validate(json.loads(text.strip()))


def _fallback(top: Sequence[ExtractionCandidate], reason: str) -> Tuple[ExtractionCandidate, JudgeVerdict]:
    chosen = top[0]
    logger.warning(f"Judge fallback to candidate {chosen.id}: {reason}")
    verdict = JudgeVerdict(
        disagreement_analysis="",
        best_candidate_id=chosen.id,
        confidence="low",
        reasoning=f"fallback to highest-utility candidate: {reason}",
        fallback=True,
    )
    return chosen, verdict


def judge_rerank(
    top: Sequence[ExtractionCandidate],
    problem: str,
    judge: LLMProvider,
    run_id: str = "default",
) -> Tuple[ExtractionCandidate, JudgeVerdict]:
    """
    Ask the judge to pick among the top-q candidates.

    ``top`` must be ordered by descending utility; every fallback returns
    ``top[0]``. A malformed verdict is retried once.
    """
    if not top:
        raise ValueError("judge_rerank needs at least one candidate")
    if len(top) == 1:
        only = top[0]
        return only, JudgeVerdict(
            disagreement_analysis="",
            best_candidate_id=only.id,
            confidence="high",
            reasoning="single candidate; judge not consulted",
        )

    # Show the judge every candidate in utility order
    listing = [(c.id, serialize_decision_process(c.process)) for c in top]
    base_prompt = judge_prompt(problem, listing)
    verdict: Optional[JudgeVerdict] = None
    for attempt in range(2):
        prompt = base_prompt if attempt == 0 else base_prompt + "\n\nYour previous answer was not valid JSON for this contract."
        request = ProviderRequest(kind=RequestKind.JUDGE, prompt=prompt, run_id=run_id)
        try:
            text = judge.complete(request)
        except ProviderError as e:
            return _fallback(top, f"judge unavailable ({e})")
        try:
            verdict = _parse_verdict(text)
            break
        except (ValueError, TypeError) as e:
            logger.warning(f"Malformed judge verdict on attempt {attempt + 1}: {e}")
    if verdict is None:
        return _fallback(top, "verdict malformed after one retry")

    # The pick must be one of the candidates shown
    chosen = _by_id(top).get(verdict.best_candidate_id)
    if chosen is None:
        error = JudgeContractViolation(
            f"best_candidate_id {verdict.best_candidate_id} is not among {[c.id for c in top]}"
        )
        logger.warning(str(error))
        return _fallback(top, str(error))
    return chosen, verdict


def pairwise_statistics(similarities: Sequence[float]) -> Tuple[float, float]:
    """Mean and population standard deviation"""
    values = np.asarray(similarities, dtype=float)
    if values.size == 0:
        raise ValueError("at least one pairwise similarity is required")
    return float(values.mean()), float(values.std())


def consistency_metrics(candidates: Sequence[ExtractionCandidate]) -> Tuple[float, float]:
    """(consistency, stability) over unordered pairs of full-extraction embeddings"""
    if len(candidates) < 2:
        raise ValueError("consistency metrics need at least two candidates")
    similarities = []
    for a in range(len(candidates)):
        for b in range(a + 1, len(candidates)):
            first, second = candidates[a].full_embedding, candidates[b].full_embedding
            if first is None or second is None:
                raise MissingEmbedding("full-extraction embedding missing")
            similarities.append(cosine_similarity(first, second))
    return pairwise_statistics(similarities)
