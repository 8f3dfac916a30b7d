"""
Prompt templates sent to language-model providers.
"""

import json
from typing import Iterable, List, Mapping, Sequence

SYSTEM_PROMPTS = {
    "extract": "You translate decision problems into structured optimization models. Answer with JSON only.",
    "judge": "You compare candidate optimization formulations for logical consistency. Answer with JSON only.",
    "recommend": "You recommend optimization solver backends for a given model.",
    "generate_optimizer": "You write and run optimizer code for a structured decision process and report results as JSON.",
    "generate_simulator": "You simulate a decision process: check feasibility and evaluate the objective of a candidate solution. Answer with JSON only.",
}

EXTRACTION_SCHEMA = {
    "problem_description": "...",
    "decision_variables": [{"name": "...", "type": "INTEGER|CONTINUOUS|BINARY", "description": "..."}],
    "inputs": [{"name": "...", "value": "number or nested list", "units": "...", "description": "..."}],
    "exogenous_variables": [],
    "exogenous_uncertainties": [],
    "state_variables": [],
    "transition_function": "",
    "objective_function": {"direction": "minimize|maximize", "expression": "...", "description": "..."},
    "constraints": [{"expression": "...", "description": "..."}],
}


def extraction_prompt(problem: str, examples: Sequence[str], sample: int, total: int) -> str:
    sections: List[str] = [
        f"Extraction sample {sample} of {total}.",
        "Problem description:",
        problem.strip(),
        "",
        "Rules:",
        "- Declare every identifier used in an expression as a decision variable or an input.",
        "- Write every table or graph from the text out in full as input values.",
        "- Use Python-style expressions such as sum(c[i][j] * x[i,j] for i in S for j in S if i != j).",
        "- Write one atomic comparison per constraint, with an optional 'for all i in S' clause.",
        "",
        "Return exactly one JSON object with this structure and nothing else:",
        json.dumps(EXTRACTION_SCHEMA, indent=2),
    ]
    if examples:
        sections.append("")
        sections.append("Formulations of related solved problems:")
        for k, formulation in enumerate(examples, start=1):
            sections.append(f"Example {k}:\n{formulation}")
    return "\n".join(sections)


def judge_prompt(problem: str, candidates: Iterable[tuple]) -> str:
    """Only the problem text and the candidates; retrieved memory never reaches the judge"""
    listing = "\n\n".join(f"Candidate {cid}:\n{document}" for cid, document in candidates)
    return "\n".join([
        "Problem description:",
        problem.strip(),
        "",
        "Candidate extractions:",
        listing,
        "",
        "Identify where the candidates disagree, decide which one models the problem faithfully,",
        "and return exactly this JSON object with no text outside it:",
        json.dumps({
            "disagreement_analysis": "...",
            "best_candidate_id": 1,
            "confidence": "high|medium|low",
            "reasoning": "...",
        }, indent=2),
        "best_candidate_id must be one of the candidate ids above.",
    ])


def recommendation_prompt(process_json: str, available: Sequence[str]) -> str:
    return "\n".join([
        "Decision process:",
        process_json,
        "",
        f"Available solvers: {', '.join(available)}",
        "",
        "Rank the available solvers for this model, best first, by ease of use and by fit for",
        "the size and structure of the model. Return JSON of the form",
        '{"recommendations": [{"solver": "...", "rank": 1, "rationale": "...", "setup_notes": "..."}]}',
        "or a numbered list such as '1. solver-name' followed by the rationale.",
    ])


def optimizer_prompt(process_json: str, solvers: Sequence[str], variant: str, feedback: str = "") -> str:
    sections = [
        f"Implementation variant: {variant}",
        "Decision process:",
        process_json,
        "",
        f"Preferred solvers, best first: {', '.join(solvers)}",
        "",
        "Solve the model and return exactly one JSON object:",
        json.dumps({
            "optimal_variables": {"x[1,2]": 0},
            "optimal_objective_value": 0.0,
            "status": "optimal|infeasible|unbounded|time_limit|error",
            "solver_info": {"solver_name": "...", "solve_time": 0.0, "iterations": 0, "gap": 0.0},
        }, indent=2),
    ]
    if feedback:
        sections.extend(["", "The previous solution failed validation:", feedback, "Fix the model and solve again."])
    return "\n".join(sections)


def simulator_prompt(process_json: str, assignment: Mapping[str, float]) -> str:
    return "\n".join([
        "Decision process:",
        process_json,
        "",
        "Candidate assignment:",
        json.dumps(dict(assignment), sort_keys=True),
        "",
        "Simulate the process under this assignment, independently of any optimizer. Check every",
        "constraint and evaluate the objective. Return exactly one JSON object:",
        json.dumps({
            "feasible": True,
            "objective_value": 0.0,
            "violations": [
                {"constraint_index": 0, "description": "...", "bindings": {"i": 1}, "lhs": 0.0, "rhs": 0.0, "op": ">="}
            ],
        }, indent=2),
        "objective_value is required for a feasible assignment and may be null otherwise.",
    ])
