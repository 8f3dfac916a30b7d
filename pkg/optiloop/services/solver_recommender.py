"""
Ranked solver recommendations from a language-model provider, restricted to
the solvers actually available.
"""

import json
import logging
import re
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from optiloop.exceptions import ContractViolation
from optiloop.models import DecisionProcess, serialize_decision_process
from optiloop.prompts import recommendation_prompt
from optiloop.providers.base import LLMProvider, ProviderRequest, RequestKind

logger = logging.getLogger(__name__)

_HEADER_RE = re.compile(r"(?<![\w.])(\d+)\.[ \t]+([A-Za-z][\w\-.]*)")
_RULE_RE = re.compile(r"^\s*[-=]{3,}\s*$", re.MULTILINE)


class SolverRecommendation(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    solver: str
    rank: int = Field(ge=1)
    rationale: str = ""
    setup_notes: str = ""


def normalize_solver_name(name: str) -> str:
    """``OR-Tools`` and ``ortools`` compare equal"""
    return re.sub(r"[^a-z0-9]", "", name.lower())


def _split_setup(block: str) -> Tuple[str, str]:
    lines = block.splitlines()
    for position, line in enumerate(lines):
        if line.strip().lower().startswith("how to"):
            return "\n".join(lines[:position]).strip(), "\n".join(lines[position:]).strip()
    return block.strip(), ""


def _rank(value: object, position: int) -> int:
    # unusable ranks keep list order
    try:
        return int(value)
    except (TypeError, ValueError):
        return position


def _parse_json(text: str) -> Optional[List[Tuple[int, str, str, str]]]:
    try:
        data = json.loads(text)
    except ValueError:
        return None
    items = data.get("recommendations") if isinstance(data, dict) else data
    if not isinstance(items, list):
        return None
    parsed = []
    for position, item in enumerate(items, start=1):
        if not isinstance(item, dict) or "solver" not in item:
            continue
        parsed.append((
            _rank(item.get("rank", position), position),
            str(item["solver"]),
            str(item.get("rationale", "")),
            str(item.get("setup_notes", "")),
        ))
    return parsed


def _parse_text(text: str) -> List[Tuple[int, str, str, str]]:
    """Numbered headers such as ``1. gurobipy (...)``; several may share a line"""
    headers = list(_HEADER_RE.finditer(text))
    blocks = []
    for position, match in enumerate(headers):
        line_end = text.find("\n", match.end())
        line_end = len(text) if line_end == -1 else line_end
        following = headers[position + 1].start() if position + 1 < len(headers) else len(text)
        body = text[line_end:following] if following > line_end else ""
        blocks.append(_RULE_RE.sub("", body).strip())
    parsed = []
    for position, match in enumerate(headers):
        block = blocks[position]
        later = position + 1
        while not block and later < len(blocks):
            block = blocks[later]
            later += 1
        rationale, setup = _split_setup(block)
        parsed.append((int(match.group(1)), match.group(2), rationale, setup))
    return parsed


def parse_recommendations(text: str, available: Sequence[str]) -> List[SolverRecommendation]:
    """
    Map provider output onto available solvers.

    Unknown solvers are dropped with a warning; ranks are renumbered 1..m in
    the provider's order. When nothing survives, the available list is used
    in its given order.
    """
    parsed = _parse_json(text)
    if parsed is None:
        parsed = _parse_text(text)
    lookup: Dict[str, str] = {normalize_solver_name(s): s for s in available}

    kept: List[Tuple[int, int, str, str, str]] = []
    seen = set()
    for order, (rank, name, rationale, setup) in enumerate(parsed):
        solver = lookup.get(normalize_solver_name(name))
        if solver is None:
            logger.warning(str(ContractViolation(f"recommended solver '{name}' is not available; dropped")))
            continue
        if solver in seen:
            continue
        seen.add(solver)
        kept.append((rank, order, solver, rationale, setup))

    if not kept:
        logger.warning("No available solver recommended; falling back to the available order")
        return [
            SolverRecommendation(solver=s, rank=i, rationale="fallback: provider recommended no available solver")
            for i, s in enumerate(available, start=1)
        ]
    kept.sort(key=lambda item: (item[0], item[1]))
    return [
        SolverRecommendation(solver=solver, rank=i, rationale=rationale, setup_notes=setup)
        for i, (_, _, solver, rationale, setup) in enumerate(kept, start=1)
    ]


def recommend(
    process: DecisionProcess,
    available: Sequence[str],
    llm: LLMProvider,
    run_id: str = "default",
) -> List[SolverRecommendation]:
    """
    Rank the available solvers for a decision process.

    Args:
        process: The selected extraction
        available: Solver identifiers installed in this deployment
        llm: Provider asked for the ranking

    Returns:
        Recommendations with ranks 1..m, all drawn from ``available``
    """
    if not available:
        raise ValueError("at least one solver must be available")
    if len(available) == 1:
        return [SolverRecommendation(solver=available[0], rank=1, rationale="only available solver")]
    request = ProviderRequest(
        kind=RequestKind.RECOMMEND,
        prompt=recommendation_prompt(serialize_decision_process(process), available),
        run_id=run_id,
    )
    return parse_recommendations(llm.complete(request), available)


def recommendations_to_json(recommendations: Sequence[SolverRecommendation]) -> Dict[str, object]:
    return {"recommendations": [r.model_dump() for r in recommendations]}
