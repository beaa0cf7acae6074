"""Scaled-down exploration experiments, run by `nox -s acceptance`."""

from statistics import median
from typing import Dict, List, Tuple

import numpy as np
import pytest

from attention_dse.config import load_order, load_space, load_workload
from attention_dse.design_space import DesignPoint, DesignSpace, random_sample
from attention_dse.explorer import (
    ExplorationConfig,
    ExplorationTrace,
    OraclePredictor,
    clipped_hypervolume,
    exhaustive_front,
    explore,
    random_search,
)
from attention_dse.microarch_graph import SerializationOrder
from attention_dse.oracle import OBJECTIVES, Oracle
from attention_dse.pareto import iterations_to_fraction, pareto_filter
from attention_dse.surrogate import SurrogateConfig, SurrogatePredictor, mape, train

pytestmark = pytest.mark.slow

SEEDS = range(10)
TRAINING_POINTS = 200
HELDOUT_POINTS = 100


def fit_predictor(
    space: DesignSpace, order: SerializationOrder, oracle: Oracle, seed: int
) -> Tuple[SurrogatePredictor, Dict[str, float]]:
    points = random_sample(space, TRAINING_POINTS + HELDOUT_POINTS, seed)
    truth = [oracle.peek(p) for p in points]
    train_points, heldout = points[:TRAINING_POINTS], points[TRAINING_POINTS:]
    cfg = SurrogateConfig(epochs=300, seed=seed)

    models, errors = {}, {}
    for objective in OBJECTIVES:
        labels = [(p, t[objective]) for p, t in zip(train_points, truth)]
        models[objective], _ = train(space, order, labels, cfg, objective=objective)
        predicted, _ = models[objective].predict(heldout)
        errors[objective] = mape(predicted, [t[objective] for t in truth[TRAINING_POINTS:]])
    return SurrogatePredictor(models), errors


def best_within(trace: ExplorationTrace, iterations: int) -> float:
    return max(c.phv for c in trace.curve if c.iteration <= iterations)


@pytest.fixture(scope="module")
def compact_predictor() -> Tuple[SurrogatePredictor, Dict[str, float]]:
    space, _ = load_space("compact")
    order, _ = load_order(space)
    cfg_oracle, _ = load_workload("compute_bound")
    return fit_predictor(space, order, Oracle(space, cfg_oracle), seed=0)


@pytest.fixture(scope="module")
def exhaustive_predictor() -> SurrogatePredictor:
    space, _ = load_space("exhaustive")
    order, _ = load_order(space)
    cfg_oracle, _ = load_workload("compute_bound")
    return fit_predictor(space, order, Oracle(space, cfg_oracle), seed=0)[0]


def test_filter_matches_brute_force_at_scale() -> None:
    rng = np.random.default_rng(7)
    for trial in range(1000):
        dims = 2 + trial % 2
        points = rng.integers(0, 10, size=(int(rng.integers(1, 301)), dims)).astype(float)
        le = np.all(points[:, None, :] <= points[None, :, :], axis=2)
        lt = np.any(points[:, None, :] < points[None, :, :], axis=2)
        expected = {tuple(p) for p in points[~np.any(le & lt, axis=0)]}
        front = pareto_filter(enumerate(points), ("min",) * dims)
        assert {tuple(o) for o in front.objectives} == expected


def test_surrogate_accuracy(compact_predictor: Tuple[SurrogatePredictor, dict]) -> None:
    _, errors = compact_predictor
    for objective, error in errors.items():
        assert error < 0.10, f"{objective} held-out MAPE {error:.1%}"


def test_perfect_predictor_reaches_true_front() -> None:
    space, _ = load_space("exhaustive")
    order, _ = load_order(space)
    cfg_oracle, _ = load_workload("compute_bound")
    truth = exhaustive_front(space, Oracle(space, cfg_oracle))
    true_members = {tuple(o) for o in truth.objectives}

    successes = 0
    for seed in SEEDS:
        oracle = Oracle(space, cfg_oracle)
        predictor = OraclePredictor(space, oracle, order)
        cfg = ExplorationConfig(
            max_iterations=50, eval_budget=space.total_size, seed=seed, stall_iterations=0
        )
        front, trace = explore(space, predictor, oracle, cfg)
        for point, objectives in front:
            assert objectives == trace.verified[point].as_tuple()
        target = 0.95 * clipped_hypervolume(truth, trace.reference)
        found = {tuple(o) for o in front.objectives}
        successes += found <= true_members and best_within(trace, 50) >= target
    assert successes >= 8


def test_trained_predictor_reaches_true_front(
    exhaustive_predictor: SurrogatePredictor,
) -> None:
    space, _ = load_space("exhaustive")
    cfg_oracle, _ = load_workload("compute_bound")
    truth = exhaustive_front(space, Oracle(space, cfg_oracle))

    successes = 0
    for seed in SEEDS:
        oracle = Oracle(space, cfg_oracle)
        cfg = ExplorationConfig(
            max_iterations=100, eval_budget=space.total_size, seed=seed, stall_iterations=0
        )
        _, trace = explore(space, exhaustive_predictor, oracle, cfg)
        if best_within(trace, 100) >= 0.90 * clipped_hypervolume(truth, trace.reference):
            successes += 1
    assert successes >= 8


def test_aba_beats_random_search(
    compact_predictor: Tuple[SurrogatePredictor, Dict[str, float]]
) -> None:
    predictor, _ = compact_predictor
    space, _ = load_space("compact")
    cfg_oracle, _ = load_workload("compute_bound")

    wins = 0
    aba_iterations: List[int] = []
    random_iterations: List[int] = []
    for seed in SEEDS:
        cfg = ExplorationConfig(max_iterations=300, eval_budget=300, seed=seed)
        _, aba = explore(space, predictor, Oracle(space, cfg_oracle), cfg)
        _, rnd = random_search(space, predictor, Oracle(space, cfg_oracle), cfg)
        assert aba.reference == rnd.reference
        assert aba.oracle_calls <= 300 and rnd.oracle_calls <= 300
        wins += aba.final_phv >= rnd.final_phv
        aba_iterations.append(iterations_to_fraction(aba.phv_curve))
        random_iterations.append(iterations_to_fraction(rnd.phv_curve))
    assert wins >= 8
    assert median(aba_iterations) <= 0.5 * median(random_iterations)


def test_exploration_is_reproducible(exhaustive_predictor: SurrogatePredictor) -> None:
    space, _ = load_space("exhaustive")
    cfg_oracle, _ = load_workload("memory_bound")
    runs = []
    for _ in range(2):
        cfg = ExplorationConfig(max_iterations=20, eval_budget=100, seed=11)
        runs.append(explore(space, exhaustive_predictor, Oracle(space, cfg_oracle), cfg))
    (front1, trace1), (front2, trace2) = runs
    assert front1.members == front2.members
    assert trace1.curve == trace2.curve
    points: List[DesignPoint] = [d.child for d in trace1.decisions if d.child is not None]
    assert points == [d.child for d in trace2.decisions if d.child is not None]
