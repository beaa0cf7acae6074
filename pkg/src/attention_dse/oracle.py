# ===================================
# > Synthetic ground-truth PPA oracle
# =================================

"""Deterministic analytical stand-in for a cycle-level simulator and power model.

IPC is the minimum over six resource-group throughputs, each a saturating
function of its parameters:

    front    fetch rate (fetch/decode width, fetch buffer, fetch queue,
             L1I misses) stalled by branch mispredictions
    rename   rename/dispatch width limited by the instruction window
             (ROB and physical register files)
    issue    issue/writeback width limited by the instruction queue
    execute  functional units relative to the instruction mix
    memory   load/store queue occupancy over the average memory latency
    commit   commit width limited by the ROB

and is reported relative to a 2 GHz reference clock, so frequency trades
IPC against power. Power is a baseline plus per-parameter affine and
quadratic terms, scaled superlinearly by frequency; area is a baseline plus
affine terms. Per-parameter coefficients are jittered (lognormal) from the
workload seed, so each named workload is frozen but distinct.
"""

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Final, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import rich.progress

from attention_dse.design_space import Candidate, DesignPoint, DesignSpace
from attention_dse.utils import InputError, console, worker_count

OBJECTIVES: Final = ("ipc", "power", "area")
GROUPS: Final = ("front", "rename", "issue", "execute", "memory", "commit")
MIX_KEYS: Final = ("int_alu", "int_mult_div", "fp_alu", "fp_mult_div", "load_store", "branch")
REFERENCE_FREQ_GHZ: Final = 2.0
EXECUTE_CEILING: Final = 16.0
BASE_POWER_W: Final = 1.0
BASE_AREA_MM2: Final = 4.0

# name -> (unit value, power coefficient, quadratic power factor, area coefficient)
# The unit value is the smallest value in the full space; u = value / unit.
COSTS: Final[Dict[str, Tuple[float, float, float, float]]] = {
    "core_frequency": (1, 0.0, 0.0, 0.0),
    "fetch_width": (1, 0.05, 0.02, 0.12),
    "decode_width": (1, 0.05, 0.02, 0.10),
    "rename_width": (1, 0.06, 0.03, 0.12),
    "dispatch_width": (1, 0.04, 0.02, 0.08),
    "issue_width": (1, 0.08, 0.04, 0.15),
    "writeback_width": (1, 0.05, 0.02, 0.10),
    "commit_width": (1, 0.04, 0.02, 0.08),
    "fetch_buffer": (16, 0.03, 0.01, 0.05),
    "fetch_queue": (8, 0.02, 0.01, 0.04),
    "branch_predictor": (1, 0.10, 0.0, 0.15),
    "choice_predictor": (2048, 0.04, 0.01, 0.08),
    "global_predictor": (2048, 0.04, 0.01, 0.08),
    "ras_size": (16, 0.01, 0.0, 0.02),
    "btb_size": (1024, 0.05, 0.01, 0.10),
    "rob_size": (32, 0.06, 0.02, 0.12),
    "int_rf": (64, 0.10, 0.03, 0.20),
    "fp_rf": (64, 0.08, 0.03, 0.18),
    "inst_queue": (16, 0.08, 0.04, 0.10),
    "load_queue": (20, 0.05, 0.02, 0.07),
    "store_queue": (20, 0.05, 0.02, 0.07),
    "int_alu": (3, 0.25, 0.02, 0.35),
    "int_mult_div": (1, 0.10, 0.02, 0.25),
    "fp_alu": (1, 0.15, 0.02, 0.30),
    "fp_mult_div": (1, 0.15, 0.02, 0.40),
    "cacheline": (32, 0.05, 0.0, 0.08),
    "l1i_size": (16, 0.12, 0.01, 0.50),
    "l1i_assoc": (2, 0.04, 0.0, 0.05),
    "l1d_size": (16, 0.15, 0.01, 0.55),
    "l1d_assoc": (2, 0.05, 0.0, 0.06),
    "l2_size": (128, 0.30, 0.0, 2.00),
    "l2_assoc": (2, 0.06, 0.0, 0.10),
}
BRANCH_PREDICTORS: Final = ("BiModeBP", "TournamentBP")
# Parameters outside the explored space sit at their largest value in the full space so
# they never bottleneck the parameters that are being explored.
BASELINE: Final[Dict[str, Candidate]] = {
    "core_frequency": 2,
    "fetch_width": 12,
    "decode_width": 12,
    "rename_width": 12,
    "dispatch_width": 12,
    "issue_width": 12,
    "writeback_width": 12,
    "commit_width": 12,
    "fetch_buffer": 64,
    "fetch_queue": 48,
    "branch_predictor": "TournamentBP",
    "choice_predictor": 8192,
    "global_predictor": 8192,
    "ras_size": 40,
    "btb_size": 4096,
    "rob_size": 256,
    "int_rf": 256,
    "fp_rf": 256,
    "inst_queue": 80,
    "load_queue": 48,
    "store_queue": 48,
    "int_alu": 8,
    "int_mult_div": 4,
    "fp_alu": 4,
    "fp_mult_div": 4,
    "cacheline": 64,
    "l1i_size": 64,
    "l1i_assoc": 4,
    "l1d_size": 64,
    "l1d_assoc": 4,
    "l2_size": 256,
    "l2_assoc": 4,
}


@dataclass(frozen=True)
class ObjectiveVector:
    ipc: float
    power: float
    area: float

    def __post_init__(self) -> None:
        for name in OBJECTIVES:
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be finite and positive, got {value}")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.ipc, self.power, self.area)

    def __getitem__(self, objective: str) -> float:
        return float(getattr(self, objective))


@dataclass(frozen=True)
class OracleConfig:
    name: str
    seed: int
    mix: Mapping[str, float]
    ilp: float = 3.0
    mispredict_rate: float = 0.04
    mispredict_penalty: float = 14.0
    footprint_kb: Mapping[str, float] = field(
        default_factory=lambda: {"l1i": 8.0, "l1d": 16.0, "l2": 128.0}
    )
    mem_latency_ns: float = 80.0
    jitter: float = 0.1
    description: str = ""

    def __post_init__(self) -> None:
        unknown = set(self.mix) - set(MIX_KEYS)
        if unknown:
            raise InputError(
                f"unknown instruction classes in mix: {', '.join(sorted(unknown))}",
                tip=f"use {', '.join(MIX_KEYS)}",
            )
        if any(v < 0 for v in self.mix.values()) or sum(self.mix.values()) <= 0:
            raise InputError("instruction mix weights must be >= 0 and not all zero")
        if set(self.footprint_kb) != {"l1i", "l1d", "l2"}:
            raise InputError("footprint_kb needs exactly the keys l1i, l1d and l2")
        positive = {
            "ilp": self.ilp,
            "mispredict_penalty": self.mispredict_penalty,
            "mem_latency_ns": self.mem_latency_ns,
            **{f"footprint_kb.{k}": v for k, v in self.footprint_kb.items()},
        }
        for key, value in positive.items():
            if value <= 0:
                raise InputError(f"oracle setting {key} must be > 0, got {value}")
        if not 0 <= self.mispredict_rate < 1:
            raise InputError(f"mispredict_rate must be in [0, 1), got {self.mispredict_rate}")
        if self.jitter < 0:
            raise InputError(f"jitter must be >= 0, got {self.jitter}")

    @property
    def fractions(self) -> Dict[str, float]:
        total = sum(self.mix.values())
        return {k: self.mix.get(k, 0.0) / total for k in MIX_KEYS}

    def to_json(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "seed": self.seed,
            "mix": dict(self.mix),
            "ilp": self.ilp,
            "mispredict_rate": self.mispredict_rate,
            "mispredict_penalty": self.mispredict_penalty,
            "footprint_kb": dict(self.footprint_kb),
            "mem_latency_ns": self.mem_latency_ns,
            "jitter": self.jitter,
            "description": self.description,
        }


def parse_oracle_config(text: str) -> OracleConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise InputError(f"oracle workload isn't valid JSON: {err}")
    if not isinstance(data, dict):
        raise InputError("oracle workload must be a JSON object")
    try:
        return OracleConfig(**data)
    except TypeError as err:
        raise InputError(f"bad oracle workload: {err}")


def _coefficients(cfg: OracleConfig) -> Dict[str, Tuple[float, float, float, float]]:
    rng = np.random.default_rng(cfg.seed)
    noise = rng.lognormal(0.0, cfg.jitter, size=(len(COSTS), 3)) if cfg.jitter else None
    coeffs = {}
    for i, (name, (unit, c, kappa, a)) in enumerate(COSTS.items()):
        if noise is not None:
            c, kappa, a = c * noise[i, 0], kappa * noise[i, 1], a * noise[i, 2]
        coeffs[name] = (unit, c, kappa, a)
    return coeffs


def sat(x: float) -> float:
    return -math.expm1(-x)


def _miss_rate(footprint: float, size_kb: float, assoc: float, cacheline: float) -> float:
    effective = size_kb * (1.0 + 0.15 * (assoc - 2) / 2) * (cacheline / 32) ** 0.2
    return footprint / (footprint + effective)


def _utilization(value: Candidate, unit: float) -> float:
    if isinstance(value, str):
        return 1.0 + 0.3 * BRANCH_PREDICTORS.index(value)
    return float(value) / unit


def complete_values(values: Mapping[str, Candidate]) -> Dict[str, Candidate]:
    unknown = set(values) - set(BASELINE)
    if unknown:
        raise InputError(
            f"the oracle has no model for {', '.join(sorted(unknown))}",
            tip="parameter names must match the shipped full space",
        )
    merged = dict(BASELINE)
    merged.update(values)
    if merged["branch_predictor"] not in BRANCH_PREDICTORS:
        raise InputError(f"unknown branch predictor {merged['branch_predictor']!r}")
    return merged


def breakdown(values: Mapping[str, Candidate], cfg: OracleConfig) -> Dict[str, float]:
    """Per-group throughputs (instructions/cycle) plus the cache miss rates."""
    full = complete_values(values)
    v = {k: (x if isinstance(x, str) else float(x)) for k, x in full.items()}
    mix = cfg.fractions
    fp_share = mix["fp_alu"] + mix["fp_mult_div"]
    line = v["cacheline"]
    miss_i = _miss_rate(cfg.footprint_kb["l1i"], v["l1i_size"], v["l1i_assoc"], line)
    miss_d = _miss_rate(cfg.footprint_kb["l1d"], v["l1d_size"], v["l1d_assoc"], line)
    miss_2 = _miss_rate(cfg.footprint_kb["l2"], v["l2_size"], v["l2_assoc"], line)

    predictor = 0.75 if v["branch_predictor"] == "TournamentBP" else 1.0
    mispredict = (
        cfg.mispredict_rate
        * predictor
        * (2048 / v["choice_predictor"]) ** 0.15
        * (2048 / v["global_predictor"]) ** 0.15
        * (1024 / v["btb_size"]) ** 0.1
        * (16 / v["ras_size"]) ** 0.05
    )
    fw = min(v["fetch_width"], v["decode_width"])
    fetch_rate = fw * sat(v["fetch_buffer"] / (4 * fw))
    queue_factor = 0.6 + 0.4 * sat(v["fetch_queue"] / 16)
    stream = fetch_rate * queue_factor * (1 - 0.5 * miss_i)
    front = 1.0 / (1.0 / stream + mix["branch"] * mispredict * cfg.mispredict_penalty)

    rw = min(v["rename_width"], v["dispatch_width"])
    window = v["rob_size"]
    if fp_share < 1:
        window = min(window, (v["int_rf"] - 32) / (1 - fp_share))
    if fp_share > 0:
        window = min(window, (v["fp_rf"] - 32) / fp_share)
    rename = rw * sat(cfg.ilp * window / (48 * rw))

    iw = min(v["issue_width"], v["writeback_width"])
    issue = iw * sat(v["inst_queue"] / (4 * iw))

    unit_caps = [
        v["int_alu"] / mix["int_alu"] if mix["int_alu"] else math.inf,
        v["int_mult_div"] / (3 * mix["int_mult_div"]) if mix["int_mult_div"] else math.inf,
        v["fp_alu"] / mix["fp_alu"] if mix["fp_alu"] else math.inf,
        v["fp_mult_div"] / (2 * mix["fp_mult_div"]) if mix["fp_mult_div"] else math.inf,
    ]
    execute = EXECUTE_CEILING * sat(min(unit_caps) / EXECUTE_CEILING)

    latency = 3 + miss_d * (14 + miss_2 * cfg.mem_latency_ns * v["core_frequency"])
    if mix["load_store"]:
        outstanding = min(v["load_queue"] / 0.65, v["store_queue"] / 0.35)
        memory = outstanding / latency / mix["load_store"]
    else:
        memory = math.inf

    commit = v["commit_width"] * sat(v["rob_size"] / (2 * v["commit_width"]))
    return {
        "front": front,
        "rename": rename,
        "issue": issue,
        "execute": execute,
        "memory": memory,
        "commit": commit,
        "miss_l1i": miss_i,
        "miss_l1d": miss_d,
        "miss_l2": miss_2,
    }


def binding_group(values: Mapping[str, Candidate], cfg: OracleConfig) -> str:
    rates = breakdown(values, cfg)
    return min(GROUPS, key=lambda g: rates[g])


def evaluate(
    values: Mapping[str, Candidate],
    cfg: OracleConfig,
    coefficients: Optional[Mapping[str, Tuple[float, float, float, float]]] = None,
) -> ObjectiveVector:
    """Ground-truth (IPC, power, area) for a configuration given by parameter name."""
    coeffs = coefficients or _coefficients(cfg)
    full = complete_values(values)
    rates = breakdown(full, cfg)
    freq = float(full["core_frequency"])
    ipc = min(rates[g] for g in GROUPS) * freq / REFERENCE_FREQ_GHZ

    dynamic = 0.0
    area = BASE_AREA_MM2
    for name, value in full.items():
        unit, c, kappa, a = coeffs[name]
        u = _utilization(value, unit)
        dynamic += c * (u + kappa * u * u)
        area += a * u
    power = (freq / REFERENCE_FREQ_GHZ) ** 1.5 * (BASE_POWER_W + dynamic)
    return ObjectiveVector(ipc, power, area)


def _evaluate_shim(arguments: Tuple[Dict[str, Candidate], OracleConfig]) -> ObjectiveVector:
    values, cfg = arguments
    return evaluate(values, cfg)


class Oracle:
    """A workload-bound oracle over one design space, counting every evaluation."""

    def __init__(self, space: DesignSpace, cfg: OracleConfig) -> None:
        self.space = space
        self.cfg = cfg
        self.calls = 0
        self._coefficients = _coefficients(cfg)
        complete_values({p.name: p.candidates[0] for p in space})

    def evaluate(self, point: DesignPoint) -> ObjectiveVector:
        self.calls += 1
        return evaluate(self.space.decode(point), self.cfg, self._coefficients)

    __call__ = evaluate

    def peek(self, point: DesignPoint) -> ObjectiveVector:
        """Evaluate without touching the call counter (ground truth for reporting)."""
        return evaluate(self.space.decode(point), self.cfg, self._coefficients)

    def breakdown(self, point: DesignPoint) -> Dict[str, float]:
        return breakdown(self.space.decode(point), self.cfg)

    def binding_group(self, point: DesignPoint) -> str:
        return binding_group(self.space.decode(point), self.cfg)

    def evaluate_many(
        self,
        points: Sequence[DesignPoint],
        *,
        workers: Optional[int] = None,
        progress: Optional[rich.progress.Progress] = None,
    ) -> List[ObjectiveVector]:
        """Evaluate `points` in order, in a process pool when more than one worker is allowed.

        Small batches are evaluated inline; a pool isn't worth spawning for them.
        """
        n_workers = worker_count(workers)
        self.calls += len(points)
        if n_workers == 1 or len(points) < 64:
            return [self.peek(p) for p in points]

        import multiprocessing

        mp = multiprocessing.get_context("spawn")
        task = None
        if progress is not None:
            task = progress.add_task("[bold]Oracle", total=len(points), unit="points")
        packets = [(self.space.decode(p), self.cfg) for p in points]
        results = []
        # The Pool context manager API doesn't play nice with pytest-cov.
        pool = mp.Pool(n_workers)
        console.log(
            f"[bold]Evaluating {len(points)} points with {n_workers} processes "
            f"(os.cpu_count() = {os.cpu_count()})"
        )
        try:
            for result in pool.imap(_evaluate_shim, packets, chunksize=32):
                results.append(result)
                if progress is not None and task is not None:
                    progress.advance(task)
        finally:
            pool.close()
            pool.join()
        return results

    def enumerate_all(self) -> List[Tuple[DesignPoint, ObjectiveVector]]:
        """Every point of an enumerable space with its objectives (not counted)."""
        return [(p, self.peek(p)) for p in self.space.enumerate_points()]
