"""Evolutionary refinement of a verified solver against its evaluator.

The verified evaluator is the fitness function: a candidate's fitness is
the clamped score of its execution result, and candidates that fail to
execute or to score are invalid (no fitness). Each generation applies a
configurable multiset of variation operators:

- E1: cross parents' ideas into a new algorithm
- E2: distill the parents' common backbone and sharpen it
- M1: architecture-level change of a single parent
- M2: tool reconfiguration of a single parent
- M3: parameter tuning of a single parent

Selection is rank-based: the individual at rank r (1 = best) in a
population of n is drawn with probability proportional to 1/(r + n).
Population management drops invalids, deduplicates identical fitness
values (keeping the earliest-born, then the shorter code), and truncates
to the top m, so the incumbent best always survives and best fitness
never decreases.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import (
    CodeExtractError,
    EmptyPopulationError,
    EvaluatorCrashedError,
    OperatorSkippedError,
    ScoreMissingError,
    TemplateViolationError,
)
from .executor import RunConfig, run_evaluator
from .gateway import Gateway, PromptId, extract_fenced
from .errors import NoFenceError
from .registry import ToolSet, describe_for_prompt
from .solver import CodeTemplate, code_digest, execute_candidate, lint_solver

OP_SEED = "seed"
OP_E1 = "E1"
OP_E2 = "E2"
OP_M1 = "M1"
OP_M2 = "M2"
OP_M3 = "M3"

CROSSOVER_OPS = (OP_E1, OP_E2)
MUTATION_OPS = (OP_M1, OP_M2, OP_M3)
ALL_OPS = CROSSOVER_OPS + MUTATION_OPS

_OP_PROMPTS = {
    OP_E1: PromptId.CROSS_E1,
    OP_E2: PromptId.CROSS_E2,
    OP_M1: PromptId.MUT_M1,
    OP_M2: PromptId.MUT_M2,
    OP_M3: PromptId.MUT_M3,
}


@dataclass
class Individual:
    code: str
    description: str = ""
    fitness: float | None = None
    generation_born: int = 0
    parents: list[str] = field(default_factory=list)
    operator: str = OP_SEED

    @property
    def uid(self) -> str:
        return f"g{self.generation_born}-{self.operator}-{code_digest(self.code)}"

    @property
    def valid(self) -> bool:
        return self.fitness is not None


@dataclass
class Population:
    members: list[Individual] = field(default_factory=list)
    capacity: int = 5

    def __len__(self) -> int:
        return len(self.members)

    @property
    def best(self) -> Individual:
        if not self.members:
            raise EmptyPopulationError("population is empty")
        return self.members[0]


@dataclass
class EvolutionConfig:
    generations: int = 10
    capacity: int = 5
    operators_per_gen: tuple[str, ...] = ALL_OPS
    seed: int = 0
    backbone_parents: int = 3  # how many parents E2 draws when available

    def __post_init__(self):
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        for op in self.operators_per_gen:
            if op not in ALL_OPS:
                raise ValueError(f"unknown operator: {op}")


def fitness(
    code: str,
    evaluator_code: str,
    run_config: RunConfig,
    reference_path: str,
    tools: ToolSet,
    kwargs: dict | None = None,
) -> float | None:
    """Evaluator score of the candidate's execution result; None = invalid."""
    execution = execute_candidate(code, tools, run_config, kwargs)
    if not execution.ok:
        return None
    try:
        outcome = run_evaluator(evaluator_code, execution.result_path, reference_path, run_config)
    except (EvaluatorCrashedError, ScoreMissingError):
        return None
    return outcome.score


def selection_probabilities(pop: Population) -> list[float]:
    """Rank-based probabilities: weight 1/(r + n) for rank r in a size-n population."""
    n = len(pop)
    if n == 0:
        raise EmptyPopulationError("cannot select from an empty population")
    if any(not m.valid for m in pop.members):
        raise ValueError("selection requires all members to carry a fitness")
    weights = [1.0 / (rank + n) for rank in range(1, n + 1)]
    total = sum(weights)
    return [w / total for w in weights]


def sample_parents(pop: Population, count: int, rng: random.Random) -> list[Individual]:
    """Draw ``count`` distinct members by rank probability, without replacement.

    When count exceeds the population size every member is returned (the
    operator degrades gracefully rather than failing).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if len(pop) == 0:
        raise EmptyPopulationError("cannot sample from an empty population")
    if count >= len(pop):
        return list(pop.members)
    remaining = list(pop.members)
    chosen: list[Individual] = []
    while len(chosen) < count:
        sub = Population(members=remaining, capacity=pop.capacity)
        probs = selection_probabilities(sub)
        point = rng.random()
        cumulative = 0.0
        picked = len(remaining) - 1
        for i, p in enumerate(probs):
            cumulative += p
            if point < cumulative:
                picked = i
                break
        chosen.append(remaining.pop(picked))
    return chosen


def _render_parents(parents: list[Individual]) -> str:
    blocks = []
    for i, parent in enumerate(parents, 1):
        strategy = parent.description.strip() or "(no description recorded)"
        blocks.append(f"Parent {i} strategy: {strategy}\n```python\n{parent.code}\n```")
    return "\n\n".join(blocks)


def vary(
    parents: list[Individual],
    operator: str,
    task: str,
    tools_solve: ToolSet,
    template: CodeTemplate,
    gateway: Gateway,
    generation: int = 0,
    tool_budget: int = 20000,
) -> Individual:
    """One LLM call producing (strategy description, code) for the offspring.

    Crossover operators need at least two distinct parents; mutation
    operators use exactly the first parent given.
    """
    if operator not in _OP_PROMPTS:
        raise ValueError(f"unknown operator: {operator}")
    if operator in CROSSOVER_OPS:
        if len(parents) < 2:
            raise OperatorSkippedError(operator, "needs at least 2 distinct parents")
        slots = {
            "task": task,
            "tools": describe_for_prompt(tools_solve, tool_budget),
            "parents": _render_parents(parents),
            "template": template.body,
        }
        used = parents
    else:
        if not parents:
            raise OperatorSkippedError(operator, "needs a parent")
        used = parents[:1]
        slots = {
            "task": task,
            "tools": describe_for_prompt(tools_solve, tool_budget),
            "parent": _render_parents(used),
            "template": template.body,
        }
    reply = gateway.ask(_OP_PROMPTS[operator], slots)
    try:
        code = extract_fenced(reply, kind="code")
    except NoFenceError as exc:
        raise CodeExtractError(str(exc)) from exc
    description = reply.split("```", 1)[0].strip()
    violations = lint_solver(code, set(tools_solve.names()))
    if violations:
        raise TemplateViolationError(violations)
    return Individual(
        code=code,
        description=description,
        fitness=None,
        generation_born=generation,
        parents=[p.uid for p in used],
        operator=operator,
    )


def manage_population(pop: Population, offspring: list[Individual]) -> Population:
    """Merge offspring, drop invalids, dedup identical fitness, keep the top m.

    Dedup keeps the earliest-born individual (then the shorter code) so the
    incumbent of a fitness value is stable across generations.
    """
    combined = [ind for ind in (*pop.members, *offspring) if ind.valid]
    by_fitness: dict[float, Individual] = {}
    for ind in combined:
        key = ind.fitness
        incumbent = by_fitness.get(key)
        if incumbent is None:
            by_fitness[key] = ind
            continue
        if (ind.generation_born, len(ind.code), ind.code) < (
            incumbent.generation_born,
            len(incumbent.code),
            incumbent.code,
        ):
            by_fitness[key] = ind
    survivors = sorted(by_fitness.values(), key=lambda i: (-i.fitness, i.generation_born, i.uid))
    return Population(members=survivors[: pop.capacity], capacity=pop.capacity)


@dataclass
class GenerationRecord:
    generation: int
    best_fitness: float
    population_fitness: list[float]
    operators: list[dict]

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "best_fitness": self.best_fitness,
            "population_fitness": list(self.population_fitness),
            "operators": list(self.operators),
        }


@dataclass
class EvolveResult:
    best: Individual
    history: list[GenerationRecord]


def evolve(
    seed_individual: Individual,
    evaluator_code: str,
    config: EvolutionConfig,
    gateway: Gateway,
    run_config: RunConfig,
    task: str,
    tools_solve: ToolSet,
    template: CodeTemplate,
    reference_path: str,
    kwargs: dict | None = None,
) -> EvolveResult:
    """Run N generations of select -> vary -> evaluate -> manage.

    The population starts as the single verified seed. All stochastic
    choices draw from one generator seeded by the config, so a scripted run
    is reproducible end to end. Offspring fitness evaluations run
    concurrently up to the executor's parallel limit.
    """
    if seed_individual.fitness is None:
        raise ValueError("seed individual must carry a verified fitness")
    rng = random.Random(config.seed)
    pop = Population(members=[seed_individual], capacity=config.capacity)
    history = [
        GenerationRecord(
            generation=0,
            best_fitness=seed_individual.fitness,
            population_fitness=[m.fitness for m in pop.members],
            operators=[],
        )
    ]

    for gen in range(1, config.generations + 1):
        op_log: list[dict] = []
        offspring: list[Individual] = []
        for op in config.operators_per_gen:
            arity = 1
            if op == OP_E1:
                arity = 2
            elif op == OP_E2:
                arity = min(config.backbone_parents, max(2, len(pop)))
            if op in CROSSOVER_OPS and len(pop) < 2:
                op_log.append({"operator": op, "status": "skipped", "reason": "population of 1"})
                continue
            parents = sample_parents(pop, arity, rng)
            try:
                child = vary(parents, op, task, tools_solve, template, gateway, generation=gen)
            except OperatorSkippedError as exc:
                op_log.append({"operator": op, "status": "skipped", "reason": exc.reason})
                continue
            except (CodeExtractError, TemplateViolationError) as exc:
                op_log.append({"operator": op, "status": "failed", "reason": str(exc)})
                continue
            offspring.append(child)
            op_log.append({"operator": op, "status": "generated", "child": child.uid})

        if offspring:
            workers = min(len(offspring), run_config.max_parallel)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                scores = list(
                    pool.map(
                        lambda child: fitness(
                            child.code, evaluator_code, run_config, reference_path, tools_solve, kwargs
                        ),
                        offspring,
                    )
                )
            for child, score in zip(offspring, scores):
                child.fitness = score
        for entry in op_log:
            if entry["status"] == "generated":
                child = next(c for c in offspring if c.uid == entry["child"])
                entry["fitness"] = child.fitness
                entry["status"] = "evaluated" if child.valid else "invalid"

        pop = manage_population(pop, offspring)
        history.append(
            GenerationRecord(
                generation=gen,
                best_fitness=pop.best.fitness,
                population_fitness=[m.fitness for m in pop.members],
                operators=op_log,
            )
        )

    return EvolveResult(best=pop.best, history=history)
