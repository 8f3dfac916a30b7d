"""
End-to-end orchestration: retrieval, extraction with MBR selection, solver
recommendation, the optimizer ensemble with asymmetric validation, and the
run directory every stage persists into.
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from optiloop.config import RunConfig, settings
from optiloop.exceptions import PipelineError, ProviderError, SimulatorGateError, StageError
from optiloop.models import DecisionProcess, SolverStatus, VarType, parse_decision_process, serialize_decision_process
from optiloop.prompts import extraction_prompt
from optiloop.providers.base import EmbeddingProvider, LLMProvider, OptimizerDriver, ProviderRequest, RequestKind
from optiloop.providers.embeddings import HashEmbedder, SentenceTransformerEmbedder
from optiloop.providers.llm import GuardedLLM, HttpChatLLM, ScriptedLLM, UnconfiguredLLM
from optiloop.providers.optimizer_agent import AgentOptimizerDriver
from optiloop.providers.replay import ProviderLog, ReplayLLM
from optiloop.providers.toy_solver import VariableDomain, toy_variants
from optiloop.services.consensus import ConsensusResult
from optiloop.services.evaluation import BenchmarkInstance, PipelineOutput
from optiloop.services.mbr_select import (
    build_candidates,
    consistency_metrics,
    judge_rerank,
    mbr_scores_report,
    select_top_q,
)
from optiloop.services.memory_store import MemoryEntry, MemoryStore, RetrievedExample, materialize_examples
from optiloop.services.solver_recommender import SolverRecommendation, recommend, recommendations_to_json
from optiloop.services.validation import (
    AgentSimulator,
    SimulatorVerdict,
    default_unit_checks,
    refinement_loop,
)

logger = logging.getLogger(__name__)

STAGES = ("retrieval", "extraction", "recommendation", "optimization")

DriverFactory = Callable[[DecisionProcess, List[SolverRecommendation], List[Tuple[str, str]]], List[OptimizerDriver]]


def make_run_id(problem: str, seed: int) -> str:
    return hashlib.sha256(f"{seed}:{problem}".encode("utf-8")).hexdigest()[:12]


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


class RunDirectory:
    """
    Layout of one run:

        problem.txt, run_config.json, domain.json, bundle.json
        examples/         retrieved.json and example_k.py files
        extraction/       candidates, MBR scores, judge verdict, selection
        recommendation/   recommendations.json
        optimizer_runs/   iteration_k/<variant>.json, ensemble.json
        validation/       validation_results.json
        providers/        llm_log.jsonl
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def path(self, relative: str) -> Path:
        return self.root / relative

    def exists(self, relative: str) -> bool:
        return self.path(relative).exists()

    def write_text(self, relative: str, text: str) -> Path:
        target = self.path(relative)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
        return target

    def write_json(self, relative: str, data: Any) -> Path:
        return self.write_text(relative, dump_json(data))

    def read_text(self, relative: str) -> str:
        return self.path(relative).read_text(encoding="utf-8")

    def read_json(self, relative: str) -> Any:
        return json.loads(self.read_text(relative))

    @property
    def provider_log(self) -> Path:
        return self.path("providers/llm_log.jsonl")


def hash_run_directory(root: Union[str, Path]) -> str:
    """SHA-256 over every file's relative path and bytes, in sorted path order"""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(path.relative_to(root).as_posix().encode("utf-8"))
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


class RunBundle(BaseModel):
    """Final (or partial) result of one solve"""
    model_config = ConfigDict(frozen=True)

    run_id: str
    status: SolverStatus = SolverStatus.ERROR
    objective: Optional[float] = None
    variables: Dict[str, float] = Field(default_factory=dict)
    validation_passed: bool = False
    num_validation_iterations: int = 0
    gate_passed: bool = False
    infeasibility_evidence: bool = False
    has_integer_variables: bool = False
    selected_candidate: Optional[int] = None
    stages_completed: List[str] = Field(default_factory=list)
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    @property
    def exit_code(self) -> int:
        if self.failed_stage is not None:
            return 3
        return 0 if self.validation_passed else 2

    def to_pipeline_output(self) -> PipelineOutput:
        return PipelineOutput(
            status=self.status,
            objective=self.objective,
            validation_passed=self.validation_passed,
            gate_passed=self.gate_passed,
            has_integer_variables=self.has_integer_variables,
            infeasibility_evidence=self.infeasibility_evidence,
        )


def _example_from_dict(data: Dict[str, Any]) -> RetrievedExample:
    entry = MemoryEntry(
        id=data["id"],
        description=data["description"],
        formulation=data["formulation"],
        code=data["code"],
        problem_type=data["problem_type"],
        embedding=(),
    )
    return RetrievedExample(entry=entry, similarity=data["similarity"], score=data["score"])


class DecisionPipeline:
    """
    Runs the stage graph for one problem and persists every artifact.

    Args:
        cfg: Run configuration
        llm: Provider for extraction, judging, recommendation and (without a
            domain) optimizer generation
        embedder: Provider for retrieval and MBR embeddings
        store: Memory of solved problems; None skips retrieval
        driver_factory: Builds the optimizer ensemble; defaults to toy
            drivers when a domain is given, agent drivers otherwise
    """

    def __init__(
        self,
        cfg: RunConfig,
        llm: LLMProvider,
        embedder: EmbeddingProvider,
        store: Optional[MemoryStore] = None,
        driver_factory: Optional[DriverFactory] = None,
    ):
        self.cfg = cfg
        self.llm = llm
        self.embedder = embedder
        self.store = store
        self.driver_factory = driver_factory

    def solve(
        self,
        problem: str,
        domain: Optional[VariableDomain] = None,
        run_dir: Optional[Union[str, Path]] = None,
        resume: bool = False,
        retrieved: Optional[Sequence[Dict[str, Any]]] = None,
    ) -> RunBundle:
        """
        Execute every stage, or continue after the last persisted one when
        ``resume`` is set. A failing stage yields a partial bundle naming it.
        """
        run_id = make_run_id(problem, self.cfg.seed)
        run = RunDirectory(run_dir or Path(self.cfg.run_dir) / run_id)
        if resume and run.exists("bundle.json"):
            previous = RunBundle.model_validate(run.read_json("bundle.json"))
            if previous.failed_stage is None:
                logger.info(f"Run {run_id} already complete")
                return previous

        run.write_text("problem.txt", problem)
        run.write_json("run_config.json", self.cfg.model_dump(mode="json", by_alias=True))
        if domain is not None:
            run.write_json("domain.json", domain.model_dump(mode="json"))

        # Every provider call goes through the guard and lands in the log
        log = ProviderLog(run.provider_log)
        llm = GuardedLLM(
            self.llm,
            max_retries=settings.PROVIDER_MAX_RETRIES,
            backoff_seconds=settings.PROVIDER_BACKOFF_SECONDS,
            max_in_flight=settings.PROVIDER_MAX_IN_FLIGHT,
            log=log,
        )
        completed: List[str] = []
        try:
            examples = self._retrieval(run, problem, resume, retrieved)
            completed.append("retrieval")
            process, selected_id = self._extraction(run, problem, examples, llm, run_id, resume)
            completed.append("extraction")
            recommendations = self._recommendation(run, process, llm, run_id, resume)
            completed.append("recommendation")
            bundle = self._optimization(run, process, recommendations, examples, domain, llm, run_id)
            completed.append("optimization")
            bundle = bundle.model_copy(update={"selected_candidate": selected_id, "stages_completed": completed})
        except StageError as e:
            logger.error(str(e))
            bundle = RunBundle(run_id=run_id, stages_completed=completed, failed_stage=e.stage, error=str(e))
        except Exception as e:
            stage = STAGES[len(completed)] if len(completed) < len(STAGES) else STAGES[-1]
            logger.exception(f"Unexpected error in stage '{stage}': {e}")
            error = str(StageError(stage, f"{type(e).__name__}: {e}"))
            bundle = RunBundle(run_id=run_id, stages_completed=completed, failed_stage=stage, error=error)
        finally:
            log.flush()

        run.write_json("bundle.json", bundle.model_dump(mode="json"))
        logger.info(f"Run {run_id}: status={bundle.status.value} objective={bundle.objective} exit={bundle.exit_code}")
        return bundle

    # stages

    def _retrieval(
        self,
        run: RunDirectory,
        problem: str,
        resume: bool,
        retrieved: Optional[Sequence[Dict[str, Any]]],
    ) -> List[RetrievedExample]:
        if retrieved is None and resume and run.exists("examples/retrieved.json"):
            retrieved = run.read_json("examples/retrieved.json")
        if retrieved is not None:
            examples = [_example_from_dict(item) for item in retrieved]
        elif self.store is not None and len(self.store) and problem.strip():
            try:
                examples = self.store.search(problem, self.embedder, self.cfg.retrieval)
            except PipelineError as e:
                raise StageError("retrieval", str(e)) from e
        else:
            examples = []
        run.write_json("examples/retrieved.json", [example.to_dict() for example in examples])
        materialize_examples(examples, run.path("examples"))
        logger.info(f"Retrieved {len(examples)} example(s)")
        return examples

    def _extraction(
        self,
        run: RunDirectory,
        problem: str,
        examples: Sequence[RetrievedExample],
        llm: LLMProvider,
        run_id: str,
        resume: bool,
    ) -> Tuple[DecisionProcess, Optional[int]]:
        if resume and run.exists("extraction/selected.json") and run.exists("extraction/judge_verdict.json"):
            verdict = run.read_json("extraction/judge_verdict.json")
            return parse_decision_process(run.read_text("extraction/selected.json")), verdict.get("best_candidate_id")
        if not problem.strip():
            raise StageError("extraction", "problem text is empty")

        total = self.cfg.mbr.num_candidates
        formulations = [example.entry.formulation for example in examples]

        def sample(i: int) -> Optional[DecisionProcess]:
            request = ProviderRequest(
                kind=RequestKind.EXTRACT,
                prompt=extraction_prompt(problem, formulations, i, total),
                run_id=run_id,
            )
            text = llm.complete(request)
            run.write_text(f"extraction/candidate_{i}.txt", text)
            try:
                return parse_decision_process(text)
            except PipelineError as e:
                logger.warning(f"Extraction sample {i} rejected: {e}")
                return None

        try:
            with ThreadPoolExecutor(max_workers=self.cfg.batch_size) as executor:
                results = list(executor.map(sample, range(1, total + 1)))
        except ProviderError as e:
            raise StageError("extraction", str(e)) from e

        valid = [(i, p) for i, p in zip(range(1, total + 1), results) if p is not None]
        if not valid:
            raise StageError("extraction", "no extraction sample produced a valid decision process")

        try:
            candidates = build_candidates([p for _, p in valid], self.embedder, ids=[i for i, _ in valid])
        except PipelineError as e:
            raise StageError("extraction", str(e)) from e

        if len(candidates) >= 2:
            run.write_json("extraction/mbr_scores.json", mbr_scores_report(candidates, self.cfg.mbr))
            consistency, stability = consistency_metrics(candidates)
            run.write_json("extraction/consistency.json", {"consistency": consistency, "stability": stability})
            top = select_top_q(candidates, self.cfg.mbr)
        else:
            top = candidates
        chosen, verdict = judge_rerank(top, problem, llm, run_id)
        run.write_json("extraction/judge_verdict.json", verdict.to_dict())
        run.write_text("extraction/selected.json", serialize_decision_process(chosen.process) + "\n")
        logger.info(f"Selected extraction candidate {chosen.id} ({verdict.confidence} confidence)")
        return chosen.process, chosen.id

    def _recommendation(
        self,
        run: RunDirectory,
        process: DecisionProcess,
        llm: LLMProvider,
        run_id: str,
        resume: bool,
    ) -> List[SolverRecommendation]:
        if resume and run.exists("recommendation/recommendations.json"):
            data = run.read_json("recommendation/recommendations.json")
            return [SolverRecommendation.model_validate(item) for item in data["recommendations"]]
        try:
            recommendations = recommend(process, self.cfg.available_solvers, llm, run_id)
        except ProviderError as e:
            raise StageError("recommendation", str(e)) from e
        run.write_json("recommendation/recommendations.json", recommendations_to_json(recommendations))
        return recommendations

    def _drivers(
        self,
        process: DecisionProcess,
        recommendations: List[SolverRecommendation],
        examples: Sequence[RetrievedExample],
        domain: Optional[VariableDomain],
        llm: LLMProvider,
        run_id: str,
    ) -> List[OptimizerDriver]:
        attachments = [(f"example_{k}.py", example.entry.code) for k, example in enumerate(examples, start=1)]
        if self.driver_factory is not None:
            return self.driver_factory(process, recommendations, attachments)
        count = self.cfg.consensus.num_variants
        if domain is not None:
            return toy_variants(
                domain,
                count,
                variable_cap=self.cfg.toy_variable_cap,
                grid_cap=self.cfg.toy_grid_cap,
            )
        solvers = [r.solver for r in recommendations]
        return [
            AgentOptimizerDriver(llm, solvers, name=f"variant_{i}", attachments=attachments, run_id=run_id)
            for i in range(1, count + 1)
        ]

    def _optimization(
        self,
        run: RunDirectory,
        process: DecisionProcess,
        recommendations: List[SolverRecommendation],
        examples: Sequence[RetrievedExample],
        domain: Optional[VariableDomain],
        llm: LLMProvider,
        run_id: str,
    ) -> RunBundle:
        drivers = self._drivers(process, recommendations, examples, domain, llm, run_id)
        index_sets = domain.index_sets if domain is not None else None
        simulator = AgentSimulator(llm, process, run_id) if self.cfg.simulator == "agent" else None
        try:
            checks = default_unit_checks(process, index_sets, domain)
        except PipelineError as e:
            raise StageError("optimization", f"cannot build simulator unit checks: {e}") from e

        def persist(iteration: int, runs, result: ConsensusResult, verdict: Optional[SimulatorVerdict], entry) -> None:
            folder = f"optimizer_runs/iteration_{iteration}"
            for variant in runs:
                run.write_json(f"{folder}/{variant.variant_name}.json", variant.to_result_json())
            run.write_json(f"{folder}/ensemble.json", result.to_ensemble_json())
            run.write_json(f"{folder}/validation.json", {
                "entry": entry,
                "verdict": verdict.to_dict() if verdict is not None else None,
            })

        try:
            result, report = refinement_loop(
                process,
                drivers,
                self.cfg.validation,
                self.cfg.consensus,
                index_sets=index_sets,
                simulator=simulator,
                unit_checks=checks,
                on_iteration=persist,
            )
        except SimulatorGateError as e:
            raise StageError("optimization", str(e)) from e
        except ProviderError as e:
            raise StageError("optimization", str(e)) from e

        run.write_json("optimizer_runs/ensemble_results.json", result.to_ensemble_json())
        run.write_json("validation/validation_results.json", report.to_json())

        evidence = result.status == SolverStatus.INFEASIBLE and all(not check.expected_feasible for check in checks)
        return RunBundle(
            run_id=run_id,
            status=result.status,
            objective=result.objective_value,
            variables=result.variables,
            validation_passed=report.passed,
            num_validation_iterations=report.num_validation_iterations,
            gate_passed=True,
            infeasibility_evidence=evidence,
            has_integer_variables=any(v.var_type != VarType.CONTINUOUS for v in process.decision_variables),
        )


# provider construction

def build_llm(cfg: RunConfig, run_dir: Optional[Union[str, Path]] = None) -> LLMProvider:
    if cfg.llm_provider == "replay":
        if run_dir is None:
            raise ProviderError("the replay provider needs a run directory")
        return ReplayLLM.from_log(RunDirectory(run_dir).provider_log)
    if cfg.llm_provider == "http":
        return HttpChatLLM(settings.LLM_ENDPOINT, settings.LLM_MODEL, settings.LLM_API_KEY)
    if cfg.llm_script:
        return ScriptedLLM.from_file(cfg.llm_script)
    return UnconfiguredLLM()


def build_embedder(cfg: RunConfig) -> EmbeddingProvider:
    if cfg.embedding_provider == "sentence-transformers":
        return SentenceTransformerEmbedder(settings.EMBEDDING_MODEL)
    return HashEmbedder(dimension=cfg.embedding_dimension, seed=cfg.seed)


def replay(
    source: Union[str, Path],
    target: Union[str, Path],
    driver_factory: Optional[DriverFactory] = None,
) -> Tuple[bool, str, str, RunBundle]:
    """
    Re-execute a persisted run from its problem, configuration, domain,
    retrieved examples and provider log into ``target``.

    Returns:
        (identical, source hash, replay hash, bundle)
    """
    original = RunDirectory(source)
    cfg = RunConfig.model_validate(original.read_json("run_config.json"))
    domain = VariableDomain.from_file(original.path("domain.json")) if original.exists("domain.json") else None
    retrieved = original.read_json("examples/retrieved.json") if original.exists("examples/retrieved.json") else []

    pipeline = DecisionPipeline(
        cfg,
        ReplayLLM.from_log(original.provider_log),
        build_embedder(cfg),
        driver_factory=driver_factory,
    )
    bundle = pipeline.solve(original.read_text("problem.txt"), domain=domain, run_dir=target, retrieved=retrieved)
    source_hash = hash_run_directory(source)
    replay_hash = hash_run_directory(target)
    if source_hash != replay_hash:
        logger.error(f"Replay of {source} diverged: {source_hash} != {replay_hash}")
    return source_hash == replay_hash, source_hash, replay_hash, bundle


def offline_instance_runner(cfg: RunConfig, root: Union[str, Path], llm: Optional[LLMProvider] = None) -> Callable[[BenchmarkInstance], PipelineOutput]:
    """
    Pipeline callable for benchmark suites. Instances carrying an extraction
    are answered by a scripted provider that returns it for every sample and
    lets the judge keep the top candidate.
    """
    embedder = build_embedder(cfg)

    def run_instance(instance: BenchmarkInstance) -> PipelineOutput:
        provider = llm or UnconfiguredLLM()
        if instance.extraction is not None:
            provider = ScriptedLLM([
                {"kind": "extract", "response": instance.extraction},
                {"kind": "judge", "response": {
                    "disagreement_analysis": "",
                    "best_candidate_id": 1,
                    "confidence": "high",
                    "reasoning": "samples agree",
                }},
            ])
        domain = VariableDomain.model_validate(instance.domain) if instance.domain is not None else None
        pipeline = DecisionPipeline(cfg, provider, embedder)
        bundle = pipeline.solve(instance.description, domain=domain, run_dir=Path(root) / instance.id)
        return bundle.to_pipeline_output()

    return run_instance
