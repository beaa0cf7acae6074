# ===================================
# > Design space definition & sampling
# =================================

import json
import math
import re
from dataclasses import dataclass, field
from typing import (
    Any,
    Dict,
    Final,
    Iterator,
    List,
    Literal,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from attention_dse.utils import InputError

Candidate = Union[int, float, str]
STAGES: Final = (
    "Fetch",
    "Decode",
    "Rename",
    "Dispatch",
    "Issue",
    "Execute",
    "Memory",
    "Commit",
    "Cache",
    "BranchPred",
)
# Guard for operations that materialize every point of a space.
ENUMERATION_LIMIT: Final = 2_000_000
GRID_RE: Final = re.compile(r"^\s*([^:\s]+)\s*:\s*([^:\s]+)\s*:\s*([^:\s]+)\s*$")


def _number(text: str) -> Union[int, float]:
    value = float(text)
    if value.is_integer() and "." not in text and "e" not in text.lower():
        return int(value)
    return value


def expand_grid(start: float, end: float, stride: float) -> List[Union[int, float]]:
    """Expand "start:end:stride", inclusive of `end` when reachable by `stride`."""
    if stride <= 0:
        raise InputError(f"malformed grid {start}:{end}:{stride}", tip="stride must be > 0")
    if start > end:
        raise InputError(f"malformed grid {start}:{end}:{stride}", tip="start must be <= end")

    count = int(math.floor((end - start) / stride + 1e-9)) + 1
    values = [start + i * stride for i in range(count)]
    if all(isinstance(v, int) for v in (start, end, stride)):
        return [int(v) for v in values]
    # Avoid 0.30000000000000004 style drift on fractional strides.
    return [round(v, 12) for v in values]


def parse_values(spec: Union[str, Sequence[Any]]) -> Tuple[Tuple[Candidate, ...], str]:
    """Parse a candidate specification: "a:b:c", "[x, y]", "x/y/z" or a JSON list."""
    if isinstance(spec, str):
        text = spec.strip()
        match = GRID_RE.match(text)
        if match:
            try:
                start, end, stride = (_number(g) for g in match.groups())
            except ValueError:
                raise InputError(f"malformed grid {text!r}", tip="expected start:end:stride")
            return tuple(expand_grid(start, end, stride)), "grid"

        if text.startswith("["):
            try:
                items = json.loads(text)
            except json.JSONDecodeError as err:
                raise InputError(f"malformed candidate list {text!r}: {err}")
        else:
            items = [part.strip() for part in text.split("/") if part.strip()]
        spec = items

    candidates: List[Candidate] = []
    for item in spec:
        if isinstance(item, str):
            try:
                candidates.append(_number(item))
            except ValueError:
                candidates.append(item)
        elif isinstance(item, bool) or not isinstance(item, (int, float)):
            raise InputError(f"unsupported candidate value {item!r}")
        else:
            candidates.append(item)
    return tuple(candidates), "list"


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    stage: str
    candidates: Tuple[Candidate, ...]
    kind: Literal["grid", "list"] = "list"
    description: str = ""

    def __post_init__(self) -> None:
        if not self.name or not self.name.isidentifier():
            raise InputError(f"invalid parameter name {self.name!r}")
        if self.stage not in STAGES:
            raise InputError(
                f"parameter '{self.name}' has unknown stage {self.stage!r}",
                tip=f"pick one of {', '.join(STAGES)}",
            )
        if not self.candidates:
            raise InputError(f"parameter '{self.name}' has no candidates")
        if self.numeric:
            pairs = zip(self.candidates, self.candidates[1:])
            if not all(a < b for a, b in pairs):
                raise InputError(
                    f"parameter '{self.name}' candidates aren't strictly increasing",
                    tip=f"got {list(self.candidates)}",
                )
        elif len(set(self.candidates)) != len(self.candidates):
            raise InputError(f"parameter '{self.name}' has duplicate candidates")

    @property
    def cardinality(self) -> int:
        return len(self.candidates)

    @property
    def numeric(self) -> bool:
        return all(not isinstance(c, str) for c in self.candidates)

    def index_of(self, value: Candidate) -> int:
        for i, candidate in enumerate(self.candidates):
            if candidate == value:
                return i
        raise InputError(f"{value!r} is not a candidate of '{self.name}'")


@dataclass(frozen=True)
class DesignPoint:
    values: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, index: int) -> int:
        return self.values[index]

    def replace(self, index: int, value: int) -> "DesignPoint":
        values = list(self.values)
        values[index] = value
        return DesignPoint(tuple(values))


class StepResult(NamedTuple):
    point: DesignPoint
    clamped: bool


@dataclass(frozen=True)
class DesignSpace:
    params: Tuple[ParameterSpec, ...]
    name: str = "custom"
    _index: Dict[str, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.params:
            raise InputError("a design space needs at least one parameter")
        for i, p in enumerate(self.params):
            if p.name in self._index:
                raise InputError(f"duplicate parameter name '{p.name}'")
            self._index[p.name] = i

    def __len__(self) -> int:
        return len(self.params)

    def __iter__(self) -> Iterator[ParameterSpec]:
        return iter(self.params)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(p.name for p in self.params)

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([p.cardinality for p in self.params], dtype=np.int64)

    @property
    def total_size(self) -> int:
        # Python ints, the full space overflows int64.
        return math.prod(p.cardinality for p in self.params)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise InputError(f"unknown parameter '{name}'") from None

    def __getitem__(self, name: str) -> ParameterSpec:
        return self.params[self.index(name)]

    def validate(self, point: DesignPoint) -> DesignPoint:
        if len(point) != len(self.params):
            raise InputError(
                f"design point has {len(point)} values, the space has {len(self.params)}"
            )
        for p, value in zip(self.params, point.values):
            if not 0 <= value < p.cardinality:
                raise InputError(
                    f"index {value} out of range for '{p.name}'",
                    tip=f"valid indices are 0..{p.cardinality - 1}",
                )
        return point

    def encode(
        self, values: Union[Mapping[str, Candidate], Sequence[Candidate]]
    ) -> DesignPoint:
        """Turn concrete candidate values into a DesignPoint (index vector)."""
        if isinstance(values, Mapping):
            missing = set(self.names) - set(values)
            if missing:
                raise InputError(f"missing values for {', '.join(sorted(missing))}")
            ordered = [values[name] for name in self.names]
        else:
            if len(values) != len(self.params):
                raise InputError(
                    f"got {len(values)} values, the space has {len(self.params)}"
                )
            ordered = list(values)
        return DesignPoint(tuple(p.index_of(v) for p, v in zip(self.params, ordered)))

    def decode(self, point: DesignPoint) -> Dict[str, Candidate]:
        self.validate(point)
        return {p.name: p.candidates[i] for p, i in zip(self.params, point.values)}

    def subspace(self, names: Sequence[str], name: Optional[str] = None) -> "DesignSpace":
        params = tuple(self[n] for n in names)
        return DesignSpace(params, name=name or f"{self.name}-subspace")

    def enumerate_points(self) -> Iterator[DesignPoint]:
        if self.total_size > ENUMERATION_LIMIT:
            raise InputError(
                f"refusing to enumerate {self.total_size} design points",
                tip=f"exhaustive enumeration is capped at {ENUMERATION_LIMIT} points",
            )
        for flat in range(self.total_size):
            yield DesignPoint(
                tuple(int(i) for i in np.unravel_index(flat, tuple(self.cardinalities)))
            )

    def to_json(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "parameters": [
                {
                    "name": p.name,
                    "stage": p.stage,
                    "values": list(p.candidates),
                    "description": p.description,
                }
                for p in self.params
            ],
        }


def parse_design_space(config_text: str, name: Optional[str] = None) -> DesignSpace:
    """Parse and validate a design-space document.

    The document holds an ordered `parameters` array whose entries look like
    {"name": ..., "stage": ..., "values": "a:b:c" | [list]}. Grid specs are
    expanded to explicit candidate lists.
    """
    try:
        data = json.loads(config_text)
    except json.JSONDecodeError as err:
        raise InputError(f"design space isn't valid JSON: {err}")
    if not isinstance(data, dict) or not isinstance(data.get("parameters"), list):
        raise InputError("design space must be an object with a 'parameters' array")

    params = []
    for entry in data["parameters"]:
        try:
            pname, stage, raw = entry["name"], entry["stage"], entry["values"]
        except (KeyError, TypeError):
            raise InputError(
                f"bad parameter entry {entry!r}", tip="each needs name, stage and values"
            )
        candidates, kind = parse_values(raw)
        params.append(
            ParameterSpec(pname, stage, candidates, kind, entry.get("description", ""))
        )
    return DesignSpace(tuple(params), name=name or data.get("name", "custom"))


def random_sample(
    space: DesignSpace, n: int, seed: int, *, replace: bool = True
) -> List[DesignPoint]:
    """Draw `n` points, each index uniform and independent per parameter.

    With `replace=False` distinct points are drawn (only sensible for spaces
    small enough to enumerate); `n` is capped at the space size.
    """
    if n < 1:
        raise InputError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if replace:
        indices = rng.integers(0, space.cardinalities, size=(n, len(space)))
        return [DesignPoint(tuple(int(v) for v in row)) for row in indices]

    total = space.total_size
    if total > ENUMERATION_LIMIT:
        raise InputError(f"can't sample without replacement from {total} points")
    flat = rng.permutation(total)[: min(n, total)]
    coords = np.unravel_index(flat, tuple(space.cardinalities))
    return [DesignPoint(tuple(int(c[i]) for c in coords)) for i in range(len(flat))]


def step_parameter(
    point: DesignPoint, index: int, direction: int, space: DesignSpace
) -> StepResult:
    """Move one parameter a single position along its candidate list.

    At either end of the list the input is returned unchanged with
    `clamped=True`. Categorical parameters are stepped like ordered ones.
    """
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    if not 0 <= index < len(point):
        raise ValueError(f"parameter index {index} out of range")
    cardinality = space.params[index].cardinality

    target = point.values[index] + direction
    if not 0 <= target < cardinality:
        return StepResult(point, True)
    return StepResult(point.replace(index, target), False)
