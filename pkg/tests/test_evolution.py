from __future__ import annotations

import random
from fractions import Fraction

import pytest

from solverforge.errors import EmptyPopulationError, OperatorSkippedError, TemplateViolationError
from solverforge.evolution import (
    EvolutionConfig,
    Individual,
    Population,
    evolve,
    fitness,
    manage_population,
    sample_parents,
    selection_probabilities,
    vary,
)
from solverforge.evaluator_gen import materialize_reference
from solverforge.registry import ToolSet, resolve_tools
from solverforge.solver import load_code_template

from conftest import PASSTHROUGH_EVALUATOR, fenced, scripted_gateway, value_solver


def _pop(*fitnesses, capacity=5) -> Population:
    members = [
        Individual(code=f"code-{i}", fitness=f, generation_born=0) for i, f in enumerate(fitnesses)
    ]
    members.sort(key=lambda m: -m.fitness)
    return Population(members=members, capacity=capacity)


# --- selection ------------------------------------------------------------------


def test_selection_single_member():
    assert selection_probabilities(_pop(0.9)) == [1.0]


def test_selection_two_members_exact():
    probs = selection_probabilities(_pop(0.9, 0.1))
    expected = [Fraction(4, 7), Fraction(3, 7)]
    for p, e in zip(probs, expected):
        assert abs(p - float(e)) < 1e-12


def test_selection_three_members_exact():
    probs = selection_probabilities(_pop(0.9, 0.5, 0.1))
    expected = [Fraction(15, 37), Fraction(12, 37), Fraction(10, 37)]
    for p, e in zip(probs, expected):
        assert abs(p - float(e)) < 1e-12


def test_selection_sums_to_one_and_strictly_decreases():
    for n in range(1, 12):
        probs = selection_probabilities(_pop(*[1.0 - i / 20 for i in range(n)]))
        assert abs(sum(probs) - 1.0) < 1e-12
        assert all(a > b for a, b in zip(probs, probs[1:]))


def test_selection_depends_on_ranks_only():
    a = selection_probabilities(_pop(0.9, 0.5, 0.1))
    b = selection_probabilities(_pop(0.99, 0.98, 0.97))
    assert a == b


def test_selection_empty_population():
    with pytest.raises(EmptyPopulationError):
        selection_probabilities(Population())


def test_selection_requires_valid_members():
    pop = Population(members=[Individual(code="c", fitness=None)])
    with pytest.raises(ValueError):
        selection_probabilities(pop)


# --- parent sampling ---------------------------------------------------------------


def test_sample_degrades_when_count_exceeds_size():
    pop = _pop(0.9)
    parents = sample_parents(pop, 2, random.Random(0))
    assert parents == pop.members


def test_sample_reproducible_with_fixed_seed():
    pop = _pop(0.9, 0.7, 0.5, 0.3)
    first = [p.uid for p in sample_parents(pop, 2, random.Random(42))]
    second = [p.uid for p in sample_parents(pop, 2, random.Random(42))]
    assert first == second


def test_sample_without_replacement():
    pop = _pop(0.9, 0.7, 0.5)
    for seed in range(50):
        parents = sample_parents(pop, 2, random.Random(seed))
        assert len({p.uid for p in parents}) == 2


def test_sample_empty_population():
    with pytest.raises(EmptyPopulationError):
        sample_parents(Population(), 1, random.Random(0))


# --- variation -----------------------------------------------------------------------


def _parent(code: str, fitness_value=0.5, description="baseline strategy") -> Individual:
    return Individual(code=code, description=description, fitness=fitness_value)


def test_vary_m3_parameter_tune(fixture_registry):
    tools, _ = resolve_tools(["Alpha_Tool"], fixture_registry)
    parent_code = '''# solve-params:
#   beam_size: int = 10

# main entry point
def solve(tools, beam_size=10):
    """Beam search fixture."""
    return beam_size
'''
    child_code = parent_code.replace("10", "20")
    reply = "Double the beam size from 10 to 20 for wider exploration.\n" + fenced(child_code)
    child = vary(
        [_parent(parent_code)], "M3", "task", tools, load_code_template(), scripted_gateway(reply)
    )
    assert "beam_size=20" in child.code
    assert child.operator == "M3"
    assert child.fitness is None
    assert child.description.startswith("Double the beam size")
    assert child.parents == [_parent(parent_code).uid]


def test_vary_m1_tool_swap(fixture_registry):
    tools, _ = resolve_tools(["Alpha_Tool", "Beta_Tool"], fixture_registry)
    parent_code = '''# solve-params: none

# main entry point
def solve(tools):
    """Use the alpha pipeline."""
    return tools["Alpha_Tool"].execute(x=1)
'''
    child_code = parent_code.replace("Alpha_Tool", "Beta_Tool").replace("alpha", "beta")
    reply = "Switch the backbone from the alpha tool to the beta tool.\n" + fenced(child_code)
    child = vary(
        [_parent(parent_code)], "M1", "task", tools, load_code_template(), scripted_gateway(reply)
    )
    from solverforge.solver import extract_tool_references

    assert extract_tool_references(child.code) == {"Beta_Tool"}


def test_vary_crossover_needs_two_parents(fixture_registry):
    tools, _ = resolve_tools(["Alpha_Tool"], fixture_registry)
    with pytest.raises(OperatorSkippedError):
        vary([_parent("# solve-params: none\ndef solve(tools):\n    return 1")], "E1", "t", tools, load_code_template(), scripted_gateway())


def test_vary_offspring_must_pass_lint(fixture_registry):
    tools, _ = resolve_tools(["Alpha_Tool"], fixture_registry)
    reply = "An idea.\n" + fenced("def broken(:")
    with pytest.raises(TemplateViolationError):
        vary(
            [_parent(value_solver(0.1)), _parent(value_solver(0.2))],
            "E1",
            "t",
            tools,
            load_code_template(),
            scripted_gateway(reply),
        )


# --- population management ---------------------------------------------------------------


def test_manage_worked_example():
    pop = Population(
        members=[Individual(code="seed", fitness=0.5, generation_born=0)], capacity=5
    )
    offspring = [
        Individual(code="bad", fitness=None, generation_born=1),
        Individual(code="duplicate-score-longer", fitness=0.5, generation_born=1),
        Individual(code="winner", fitness=0.7, generation_born=1),
    ]
    managed = manage_population(pop, offspring)
    assert [m.fitness for m in managed.members] == [0.7, 0.5]
    # the duplicate kept is the earliest-born one
    assert managed.members[1].code == "seed"


def test_manage_truncates_to_capacity():
    pop = Population(members=[], capacity=5)
    offspring = [
        Individual(code=f"c{i}", fitness=i / 10, generation_born=1) for i in range(7)
    ]
    managed = manage_population(pop, offspring)
    assert len(managed) == 5
    assert [m.fitness for m in managed.members] == [0.6, 0.5, 0.4, 0.3, 0.2]


def test_manage_all_offspring_invalid_keeps_population():
    pop = Population(
        members=[Individual(code="a", fitness=0.4, generation_born=0)], capacity=5
    )
    offspring = [Individual(code="x", fitness=None, generation_born=1) for _ in range(3)]
    managed = manage_population(pop, offspring)
    assert [m.code for m in managed.members] == ["a"]


def test_manage_dedup_tie_break_shorter_code():
    pop = Population(members=[], capacity=5)
    offspring = [
        Individual(code="longer-code-body", fitness=0.5, generation_born=1),
        Individual(code="short", fitness=0.5, generation_born=1),
    ]
    managed = manage_population(pop, offspring)
    assert len(managed) == 1
    assert managed.members[0].code == "short"


# --- fitness -------------------------------------------------------------------------------


def test_fitness_of_crashing_candidate_is_invalid(run_config, tmp_path):
    reference = materialize_reference(0, tmp_path)
    crashing = '''# solve-params: none

def solve(tools):
    raise RuntimeError("nope")
'''
    assert fitness(crashing, PASSTHROUGH_EVALUATOR, run_config, str(reference), ToolSet()) is None


def test_fitness_reproduces_seed_score(run_config, tmp_path):
    reference = materialize_reference(0, tmp_path)
    score = fitness(value_solver(0.27), PASSTHROUGH_EVALUATOR, run_config, str(reference), ToolSet())
    again = fitness(value_solver(0.27), PASSTHROUGH_EVALUATOR, run_config, str(reference), ToolSet())
    assert score == again == 0.27


# --- the evolve loop -------------------------------------------------------------------------


def _seed_individual(score=0.27) -> Individual:
    return Individual(
        code=value_solver(score), description="seed", fitness=score, generation_born=0
    )


def test_evolve_zero_generations_returns_seed(run_config, tmp_path):
    reference = materialize_reference(0, tmp_path)
    result = evolve(
        _seed_individual(),
        PASSTHROUGH_EVALUATOR,
        EvolutionConfig(generations=0),
        scripted_gateway(),
        run_config,
        task="t",
        tools_solve=ToolSet(),
        template=load_code_template(),
        reference_path=str(reference),
    )
    assert result.best.fitness == 0.27
    assert len(result.history) == 1
    assert result.history[0].best_fitness == 0.27


def _mutation_reply(value: float) -> str:
    return f"Push the objective to {value}.\n" + fenced(value_solver(value))


def test_evolve_case_trajectory(run_config, tmp_path):
    reference = materialize_reference(0, tmp_path)
    gateway = scripted_gateway(_mutation_reply(0.475), _mutation_reply(0.535))
    config = EvolutionConfig(generations=2, capacity=5, operators_per_gen=("M3",), seed=1)
    result = evolve(
        _seed_individual(0.270),
        PASSTHROUGH_EVALUATOR,
        config,
        gateway,
        run_config,
        task="maximize the fixture objective",
        tools_solve=ToolSet(),
        template=load_code_template(),
        reference_path=str(reference),
    )
    history = [r.best_fitness for r in result.history]
    assert history == [0.270, 0.475, 0.535]
    assert all(a <= b for a, b in zip(history, history[1:]))
    assert result.best.fitness == 0.535


def test_evolve_elitism_when_all_variants_worse(run_config, tmp_path):
    reference = materialize_reference(0, tmp_path)
    gateway = scripted_gateway(_mutation_reply(0.1), _mutation_reply(0.05))
    config = EvolutionConfig(generations=2, capacity=3, operators_per_gen=("M2",), seed=3)
    result = evolve(
        _seed_individual(0.4),
        PASSTHROUGH_EVALUATOR,
        config,
        gateway,
        run_config,
        task="t",
        tools_solve=ToolSet(),
        template=load_code_template(),
        reference_path=str(reference),
    )
    assert result.best.fitness == 0.4
    assert result.best.operator == "seed"
    history = [r.best_fitness for r in result.history]
    assert all(a <= b for a, b in zip(history, history[1:]))


def test_evolve_crossover_skipped_in_singleton_population(run_config, tmp_path):
    reference = materialize_reference(0, tmp_path)
    gateway = scripted_gateway()  # no replies: E1 must be skipped, nothing generated
    config = EvolutionConfig(generations=1, operators_per_gen=("E1",), seed=0)
    result = evolve(
        _seed_individual(),
        PASSTHROUGH_EVALUATOR,
        config,
        gateway,
        run_config,
        task="t",
        tools_solve=ToolSet(),
        template=load_code_template(),
        reference_path=str(reference),
    )
    assert result.history[1].operators[0]["status"] == "skipped"
    assert result.best.fitness == 0.27


def test_evolve_failed_operator_still_advances_generation(run_config, tmp_path):
    reference = materialize_reference(0, tmp_path)
    gateway = scripted_gateway("prose without any code fence")
    config = EvolutionConfig(generations=1, operators_per_gen=("M1",), seed=0)
    result = evolve(
        _seed_individual(),
        PASSTHROUGH_EVALUATOR,
        config,
        gateway,
        run_config,
        task="t",
        tools_solve=ToolSet(),
        template=load_code_template(),
        reference_path=str(reference),
    )
    assert len(result.history) == 2
    assert result.history[1].operators[0]["status"] == "failed"


def test_evolve_population_bounded_by_capacity(run_config, tmp_path):
    reference = materialize_reference(0, tmp_path)
    replies = [_mutation_reply(round(0.3 + 0.05 * i, 2)) for i in range(6)]
    gateway = scripted_gateway(*replies)
    config = EvolutionConfig(generations=3, capacity=2, operators_per_gen=("M3", "M1"), seed=5)
    result = evolve(
        _seed_individual(),
        PASSTHROUGH_EVALUATOR,
        config,
        gateway,
        run_config,
        task="t",
        tools_solve=ToolSet(),
        template=load_code_template(),
        reference_path=str(reference),
    )
    for record in result.history:
        assert len(record.population_fitness) <= 2


def test_evolve_bit_reproducible(run_config, tmp_path):
    reference = materialize_reference(0, tmp_path)

    def run_once():
        gateway = scripted_gateway(_mutation_reply(0.475), _mutation_reply(0.535))
        config = EvolutionConfig(generations=2, operators_per_gen=("M3",), seed=11)
        result = evolve(
            _seed_individual(0.270),
            PASSTHROUGH_EVALUATOR,
            config,
            gateway,
            run_config,
            task="t",
            tools_solve=ToolSet(),
            template=load_code_template(),
            reference_path=str(reference),
        )
        return [r.to_dict() for r in result.history], result.best.code

    assert run_once() == run_once()
