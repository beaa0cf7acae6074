# ===============================================
# > Attention-aware bottleneck analysis (search)
# =============================================

"""The acquisition loop and its random-search baseline.

Both share one pipeline. An initial random sample is predicted and its
predicted Pareto set (Omega) kept. Each iteration proposes candidates
(bottleneck steps of Omega's members, or uniform draws), predicts them and
keeps those that would expand Omega. The new members of Omega are then
verified by the oracle while the evaluation budget lasts. The verified
archive, never the predictions, drives the PHV curve and the returned
front.
"""

import math
from dataclasses import dataclass, field
from typing import (
    Dict,
    Final,
    Iterator,
    List,
    Literal,
    Optional,
    Protocol,
    Sequence,
    Tuple,
)

import numpy as np
import rich.progress

from attention_dse.design_space import DesignPoint, DesignSpace, random_sample, step_parameter
from attention_dse.microarch_graph import SerializationOrder
from attention_dse.oracle import OBJECTIVES, ObjectiveVector
from attention_dse.pareto import (
    Orientation,
    ParetoSet,
    canonical,
    hypervolume,
    pareto_filter,
    reference_point,
)
from attention_dse.utils import InputError

Acquisition = Literal["aba", "random"]
DirectionPolicy = Literal["bottleneck", "increase"]
DEGENERATE_TOL: Final = 1e-12


class Predictor(Protocol):
    @property
    def order(self) -> SerializationOrder:
        ...

    def predict(
        self, points: Sequence[DesignPoint]
    ) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        ...


class OracleLike(Protocol):
    calls: int

    def evaluate(self, point: DesignPoint) -> ObjectiveVector:
        ...

    def peek(self, point: DesignPoint) -> ObjectiveVector:
        ...


@dataclass(frozen=True)
class ExplorationConfig:
    initial_samples: int = 64
    max_iterations: int = 50
    eval_budget: int = 300
    seed: int = 0
    acquisition: Acquisition = "aba"
    objectives: Tuple[str, ...] = OBJECTIVES
    step_size: int = 1
    direction_policy: DirectionPolicy = "bottleneck"
    # Stop after this many iterations without Omega changing (0 never stops).
    stall_iterations: int = 0
    # Random search only: draw without replacement (enumerable spaces).
    replace: bool = True
    reference: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.initial_samples < 1:
            raise InputError(f"initial_samples must be >= 1, got {self.initial_samples}")
        for name in ("max_iterations", "eval_budget", "stall_iterations"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.step_size < 1:
            raise InputError(f"step_size must be >= 1, got {self.step_size}")
        if self.acquisition not in ("aba", "random"):
            raise InputError(
                f"unknown acquisition {self.acquisition!r}", tip="use aba or random"
            )
        if self.direction_policy not in ("bottleneck", "increase"):
            raise InputError(f"unknown direction policy {self.direction_policy!r}")
        if not self.objectives or len(set(self.objectives)) != len(self.objectives):
            raise InputError("objectives must be a non-empty list without repeats")
        unknown = set(self.objectives) - set(OBJECTIVES)
        if unknown:
            raise InputError(f"unknown objectives: {', '.join(sorted(unknown))}")
        if self.reference is not None and len(self.reference) != len(self.objectives):
            raise InputError("the reference point needs one value per objective")

    @property
    def columns(self) -> List[int]:
        return [OBJECTIVES.index(o) for o in self.objectives]

    @property
    def orientation(self) -> Orientation:
        return tuple("max" if o == "ipc" else "min" for o in self.objectives)


@dataclass(frozen=True)
class BottleneckDecision:
    index: int
    direction: int
    fallback: bool


@dataclass
class Decision:
    iteration: int
    objective: str
    parent: Optional[DesignPoint]
    parameter: Optional[int]
    direction: int
    fallback: bool
    clamped: bool
    child: Optional[DesignPoint]
    predicted: Optional[Tuple[float, ...]] = None
    accepted: bool = False
    oracle: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    phv: float
    evaluations: int


@dataclass
class ExplorationTrace:
    acquisition: str
    objectives: Tuple[str, ...]
    reference: Tuple[float, ...]
    initial_front: List[Tuple[DesignPoint, Tuple[float, ...]]] = field(default_factory=list)
    predicted_front: List[Tuple[DesignPoint, Tuple[float, ...]]] = field(default_factory=list)
    decisions: List[Decision] = field(default_factory=list)
    curve: List[CurvePoint] = field(default_factory=list)
    verified: Dict[DesignPoint, ObjectiveVector] = field(default_factory=dict)
    oracle_calls: int = 0
    truncated: bool = False
    stop_reason: str = "max-iterations"

    @property
    def phv_curve(self) -> List[float]:
        return [c.phv for c in self.curve]

    @property
    def final_phv(self) -> float:
        return self.curve[-1].phv if self.curve else 0.0


# ======================
# > Bottleneck analysis
# ====================


def bottleneck_analyze(
    heatmap: np.ndarray,
    objective: str,
    order: SerializationOrder,
    rng: np.random.Generator,
    direction_policy: DirectionPolicy = "bottleneck",
) -> BottleneckDecision:
    """Pick the parameter to step from an attention heatmap.

    Column sums are taken over the parameter columns only. IPC steps the
    least attended parameter up; power and area step the most attended one
    down (or up under the "increase" policy). Ties go to the lowest
    serialized position. If more than one parameter exists and every column
    sum is equal, a random parameter is chosen and the decision flagged.
    """
    length = len(order) + 1
    if heatmap.shape != (length, length):
        raise ValueError(f"expected a {length}x{length} heatmap, got {heatmap.shape}")
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    sums = heatmap[:, 1:].sum(axis=0)

    fallback = len(sums) > 1 and float(np.ptp(sums)) <= DEGENERATE_TOL
    if fallback:
        position = int(rng.integers(len(sums)))
    elif objective == "ipc":
        position = int(np.argmin(sums))
    else:
        position = int(np.argmax(sums))

    if direction_policy == "increase" or objective == "ipc":
        direction = 1
    else:
        direction = -1
    return BottleneckDecision(order.order[position], direction, fallback)


def _step(
    point: DesignPoint, index: int, direction: int, space: DesignSpace, size: int
) -> Tuple[DesignPoint, bool]:
    moved = point
    for _ in range(size):
        result = step_parameter(moved, index, direction, space)
        if result.clamped:
            break
        moved = result.point
    return moved, moved == point


# =========================
# > Perfect surrogate stub
# =======================


class OraclePredictor:
    """A "perfect" predictor: true objectives plus attribution heatmaps.

    The heatmap gives parameter i a column weight of exp(-gain_i / tau) for
    IPC, where gain_i is the IPC gained by stepping i up, and
    exp(saving_i / tau) for power and area, where saving_i is what stepping
    i down saves. The bottleneck rule therefore picks the best single step.
    Oracle peeks made here aren't counted against any budget.
    """

    def __init__(self, space: DesignSpace, oracle: OracleLike, order: SerializationOrder):
        self.space = space
        self.oracle = oracle
        self._order = order

    @property
    def order(self) -> SerializationOrder:
        return self._order

    def _truth(self, point: DesignPoint) -> np.ndarray:
        return np.array(self.oracle.peek(point).as_tuple())

    def _heatmaps(self, point: DesignPoint, base: np.ndarray) -> Dict[str, np.ndarray]:
        n = len(self.space)
        deltas = np.zeros((n, 3))
        for i in range(n):
            up = step_parameter(point, i, 1, self.space)
            down = step_parameter(point, i, -1, self.space)
            if not up.clamped:
                deltas[i, 0] = self._truth(up.point)[0] - base[0]
            if not down.clamped:
                deltas[i, 1:] = base[1:] - self._truth(down.point)[1:]

        maps = {}
        for col, objective in enumerate(OBJECTIVES):
            d = deltas[:, col]
            tau = float(np.abs(d).max()) or 1.0
            mass = np.exp(-d / tau) if objective == "ipc" else np.exp(d / tau)
            columns = np.concatenate([[mass.mean()], mass[list(self._order.order)]])
            row = columns / columns.sum()
            maps[objective] = np.tile(row, (n + 1, 1))
        return maps

    def predict(
        self, points: Sequence[DesignPoint]
    ) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        length = len(self.space) + 1
        values = np.empty((len(points), 3))
        heatmaps = {o: np.empty((len(points), length, length)) for o in OBJECTIVES}
        for n, point in enumerate(points):
            values[n] = self._truth(point)
            for objective, hm in self._heatmaps(point, values[n]).items():
                heatmaps[objective][n] = hm
        return values, heatmaps


# ===============
# > Search loop
# =============


class _Search:
    def __init__(
        self,
        space: DesignSpace,
        predictor: Predictor,
        oracle: OracleLike,
        cfg: ExplorationConfig,
        acquisition: Acquisition,
    ) -> None:
        self.space = space
        self.predictor = predictor
        self.oracle = oracle
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.calls_at_start = oracle.calls
        self.omega: ParetoSet[DesignPoint] = ParetoSet(cfg.orientation)
        self.archive: ParetoSet[DesignPoint] = ParetoSet(cfg.orientation)
        self.trace = ExplorationTrace(acquisition, cfg.objectives, ())
        self.pending: List[DesignPoint] = []

    @property
    def calls(self) -> int:
        return self.oracle.calls - self.calls_at_start

    def _select(self, values: np.ndarray) -> Tuple[float, ...]:
        return tuple(float(values[c]) for c in self.cfg.columns)

    def _phv(self) -> float:
        return clipped_hypervolume(self.archive, self.trace.reference)

    def _verify(
        self, points: Sequence[DesignPoint], decisions: Dict[DesignPoint, Decision]
    ) -> None:
        self.pending.extend(p for p in points if p not in self.trace.verified)
        while self.pending:
            if self.calls >= self.cfg.eval_budget:
                self.trace.truncated = True
                return
            point = self.pending.pop(0)
            truth = self.oracle.evaluate(point)
            self.trace.verified[point] = truth
            self.archive.insert(point, self._select(np.array(truth.as_tuple())))
            if point in decisions:
                decisions[point].oracle = truth.as_tuple()

    def start(self) -> List[DesignPoint]:
        cfg = self.cfg
        sample = random_sample(self.space, cfg.initial_samples, cfg.seed)
        if cfg.reference is not None:
            self.trace.reference = tuple(cfg.reference)
        else:
            # Ground truth for the reference point only, so it is not budgeted.
            truth = [self._select(np.array(self.oracle.peek(p).as_tuple())) for p in sample]
            self.trace.reference = reference_point(truth, cfg.orientation)

        predicted, _ = self.predictor.predict(sample)
        self.omega = pareto_filter(
            [(p, self._select(v)) for p, v in zip(sample, predicted)], cfg.orientation
        )
        self.trace.initial_front = list(self.omega.members)
        self._verify(self.omega.keys, {})
        self.trace.curve.append(CurvePoint(0, self._phv(), self.calls))
        return sample

    def propose_aba(self, iteration: int, objective: str) -> List[Decision]:
        members = self.omega.keys
        _, heatmaps = self.predictor.predict(members)
        decisions = []
        for point, heatmap in zip(members, heatmaps[objective]):
            choice = bottleneck_analyze(
                heatmap, objective, self.predictor.order, self.rng, self.cfg.direction_policy
            )
            child, clamped = _step(
                point, choice.index, choice.direction, self.space, self.cfg.step_size
            )
            decisions.append(
                Decision(
                    iteration,
                    objective,
                    point,
                    choice.index,
                    choice.direction,
                    choice.fallback,
                    clamped,
                    None if clamped else child,
                )
            )
        return decisions

    def propose_random(self, iteration: int, stream: Iterator[DesignPoint]) -> List[Decision]:
        decisions = []
        for _ in range(max(1, len(self.omega))):
            child = next(stream, None)
            if child is None:
                break
            decisions.append(Decision(iteration, "-", None, None, 0, False, False, child))
        return decisions

    def run(self, progress: Optional[rich.progress.Progress]) -> ExplorationTrace:
        cfg = self.cfg
        sample = self.start()
        stream = self._random_stream(sample) if self.trace.acquisition == "random" else None
        task = None
        if progress is not None:
            description = f"[bold]Exploring ({self.trace.acquisition})"
            task = progress.add_task(description, total=cfg.max_iterations, unit="iterations")

        stalled = 0
        self.trace.stop_reason = "max-iterations"
        for iteration in range(1, cfg.max_iterations + 1):
            if self.calls >= cfg.eval_budget:
                self.trace.stop_reason = "budget"
                break
            objective = cfg.objectives[(iteration - 1) % len(cfg.objectives)]
            if stream is None:
                decisions = self.propose_aba(iteration, objective)
            else:
                decisions = self.propose_random(iteration, stream)
            self.trace.decisions.extend(decisions)

            live = [d for d in decisions if d.child is not None]
            if live:
                predicted, _ = self.predictor.predict([d.child for d in live])
                for d, values in zip(live, predicted):
                    d.predicted = tuple(float(v) for v in values)
                    d.accepted = self.omega.would_expand(self._select(values))

            before = set(self.omega.keys)
            accepted = [d for d in live if d.accepted]
            if accepted:
                merged = list(self.omega.members)
                merged += [(d.child, self._select(np.array(d.predicted))) for d in accepted]
                self.omega = pareto_filter(merged, cfg.orientation)
            new_members = [p for p in self.omega.keys if p not in before]
            by_child = {d.child: d for d in accepted if d.child is not None}
            self._verify(new_members, by_child)
            self.trace.curve.append(CurvePoint(iteration, self._phv(), self.calls))
            if progress is not None and task is not None:
                status = f"PHV {self.trace.curve[-1].phv:.4g}, {self.calls} oracle calls"
                progress.update(task, advance=1, status=status)

            if self.trace.truncated:
                self.trace.stop_reason = "budget"
                break
            stalled = 0 if new_members else stalled + 1
            if stream is not None and not decisions:
                self.trace.stop_reason = "exhausted"
                break
            if cfg.stall_iterations and stalled >= cfg.stall_iterations:
                self.trace.stop_reason = "stalled"
                break

        self.trace.predicted_front = list(self.omega.members)
        self.trace.oracle_calls = self.calls
        return self.trace

    def _random_stream(self, sample: Sequence[DesignPoint]) -> Iterator[DesignPoint]:
        seed = self.cfg.seed + 1
        if self.cfg.replace:
            while True:
                yield from random_sample(self.space, 256, seed)
                seed += 1
        else:
            seen = set(sample)
            total = self.space.total_size
            for point in random_sample(self.space, total, seed, replace=False):
                if point not in seen:
                    yield point

    def result(self) -> ParetoSet[DesignPoint]:
        if self.trace.verified:
            return self.archive.copy()
        return self.omega.copy()


def explore(
    space: DesignSpace,
    predictor: Predictor,
    oracle: OracleLike,
    cfg: ExplorationConfig,
    *,
    progress: Optional[rich.progress.Progress] = None,
) -> Tuple[ParetoSet[DesignPoint], ExplorationTrace]:
    """Run the attention-aware bottleneck analysis loop.

    Returns the oracle-verified Pareto set (or the predicted one if the
    budget allowed no verification) and the full trace.
    """
    if len(predictor.order) != len(space):
        raise InputError("the predictor's serialization order doesn't match the design space")
    search = _Search(space, predictor, oracle, cfg, "aba")
    trace = search.run(progress)
    return search.result(), trace


def random_search(
    space: DesignSpace,
    predictor: Predictor,
    oracle: OracleLike,
    cfg: ExplorationConfig,
    *,
    progress: Optional[rich.progress.Progress] = None,
) -> Tuple[ParetoSet[DesignPoint], ExplorationTrace]:
    """The baseline: same pipeline and budget accounting, uniform candidates."""
    search = _Search(space, predictor, oracle, cfg, "random")
    trace = search.run(progress)
    return search.result(), trace


def exhaustive_front(
    space: DesignSpace, oracle: OracleLike, objectives: Sequence[str] = OBJECTIVES
) -> ParetoSet[DesignPoint]:
    """The true Pareto set of an enumerable space (oracle peeks, not counted)."""
    columns = [OBJECTIVES.index(o) for o in objectives]
    orientation = tuple("max" if o == "ipc" else "min" for o in objectives)
    items = []
    for point in space.enumerate_points():
        values = oracle.peek(point).as_tuple()
        items.append((point, tuple(values[c] for c in columns)))
    return pareto_filter(items, orientation)


def clipped_hypervolume(front: ParetoSet, reference: Sequence[float]) -> float:
    """Hypervolume of the members strictly inside the reference box (others add nothing)."""
    cref = canonical(reference, front.orientation)
    inside = [o for o in front.objectives if np.all(canonical(o, front.orientation) < cref)]
    if not inside:
        return 0.0
    return hypervolume(np.array(inside), reference, front.orientation)


def phv_fraction(found: float, truth: float) -> float:
    return found / truth if truth > 0 else math.nan
