"""
Optimizer driver backed by a coding-agent provider.
"""

import json
import logging
import re
from typing import Optional, Sequence, Tuple

from optiloop.exceptions import OptimizerError
from optiloop.models import DecisionProcess, SolverRun, serialize_decision_process
from optiloop.prompts import optimizer_prompt
from optiloop.providers.base import LLMProvider, OptimizerDriver, ProviderRequest, RequestKind

logger = logging.getLogger(__name__)

_FENCE_RE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


def extract_result_json(text: str) -> dict:
    """The variant output object, bare or inside a fenced block"""
    stripped = text.strip()
    fenced = _FENCE_RE.search(stripped)
    if fenced:
        stripped = fenced.group(1)
    try:
        document = json.loads(stripped)
    except ValueError as e:
        raise OptimizerError(f"optimizer output is not JSON: {e}") from e
    if not isinstance(document, dict):
        raise OptimizerError("optimizer output must be a JSON object")
    return document


class AgentOptimizerDriver(OptimizerDriver):
    def __init__(
        self,
        llm: LLMProvider,
        solvers: Sequence[str],
        name: str = "variant_1",
        attachments: Sequence[Tuple[str, str]] = (),
        run_id: str = "default",
    ):
        self.llm = llm
        self.solvers = list(solvers)
        self.name = name
        self.attachments = tuple(attachments)
        self.run_id = run_id

    def run(self, process: DecisionProcess, feedback: Optional[str] = None) -> SolverRun:
        request = ProviderRequest(
            kind=RequestKind.GENERATE_OPTIMIZER,
            prompt=optimizer_prompt(serialize_decision_process(process), self.solvers, self.name, feedback or ""),
            attachments=self.attachments,
            run_id=self.run_id,
        )
        text = self.llm.complete(request)
        try:
            run = SolverRun.from_result_json(self.name, extract_result_json(text))
        except (TypeError, ValueError) as e:
            raise OptimizerError(f"{self.name}: invalid optimizer result: {e}") from e
        logger.info(f"{self.name}: {run.status.value} objective={run.objective_value}")
        return run
