# ====================================================
# > Perceptual graphs & perception-driven serialization
# ==================================================

import json
from collections import deque
from dataclasses import dataclass
from typing import Dict, Final, List, Literal, Optional, Sequence, Tuple

from attention_dse.design_space import STAGES, DesignSpace
from attention_dse.utils import InputError

EdgeLabel = Literal["internal", "external"]
MIN_WINDOW: Final = 3


@dataclass(frozen=True)
class Edge:
    a: str
    b: str
    label: EdgeLabel

    def touches(self, vertex: str) -> bool:
        return vertex in (self.a, self.b)


@dataclass(frozen=True)
class PerceptualGraph:
    """The parameters of one pipeline stage and the datapaths touching them.

    Internal edges join two vertices of this stage. External edges have
    exactly one endpoint here; the other end is a parameter (or port) of
    another stage.
    """

    stage: str
    vertices: Tuple[str, ...]
    edges: Tuple[Edge, ...] = ()

    def __post_init__(self) -> None:
        if len(set(self.vertices)) != len(self.vertices):
            raise InputError(f"stage {self.stage} lists a vertex twice")
        members = set(self.vertices)
        for e in self.edges:
            if e.a == e.b:
                raise InputError(f"self-loop on '{e.a}' in stage {self.stage}")
            inside = (e.a in members) + (e.b in members)
            if e.label == "internal" and inside != 2:
                raise InputError(
                    f"internal edge {e.a}-{e.b} must join two {self.stage} vertices"
                )
            if e.label == "external" and inside != 1:
                raise InputError(
                    f"external edge {e.a}-{e.b} must have exactly one endpoint in"
                    f" {self.stage}"
                )


@dataclass(frozen=True)
class SerializationOrder:
    order: Tuple[int, ...]
    window_size: int
    degrees: Tuple[int, ...]

    def __post_init__(self) -> None:
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError("serialization order must be a permutation")
        if self.window_size < MIN_WINDOW or self.window_size % 2 == 0:
            raise ValueError(f"window size must be odd and >= 3, got {self.window_size}")

    def __len__(self) -> int:
        return len(self.order)

    def names(self, space: DesignSpace) -> List[str]:
        return [space.params[i].name for i in self.order]

    @property
    def positions(self) -> Tuple[int, ...]:
        """Sequence position (1-based, 0 is the prediction token) of each parameter."""
        pos = [0] * len(self.order)
        for seq, param in enumerate(self.order, start=1):
            pos[param] = seq
        return tuple(pos)


def perception_degree(g: PerceptualGraph, v: str) -> int:
    if v not in g.vertices:
        raise InputError(f"'{v}' isn't a vertex of the {g.stage} graph")
    internal = sum(1 for e in g.edges if e.label == "internal" and e.touches(v))
    external = sum(1 for e in g.edges if e.label == "external" and e.touches(v))
    return internal - external


def serialize_stage(g: PerceptualGraph) -> List[str]:
    """Order a stage's parameters so high perception degrees sit in the middle.

    Parameters are taken in descending degree (ties by name). The first goes
    in the centre; later ones are placed alternately to its right and left,
    so the highest-degree parameters end up clustered mid-sequence (left of
    the middle for even lengths).
    """
    if not g.vertices:
        raise InputError(f"stage {g.stage} has no parameters to serialize")
    ranked = sorted(g.vertices, key=lambda v: (-perception_degree(g, v), v))
    seq: deque = deque()
    for i, v in enumerate(ranked):
        if i % 2 == 1 or i == 0:
            seq.append(v)
        else:
            seq.appendleft(v)
    return list(seq)


def window_from_degrees(degrees: Sequence[int]) -> int:
    """Window = max perception degree (negatives count as 0), forced odd, >= 3."""
    peak = max((max(d, 0) for d in degrees), default=0)
    if peak % 2 == 0:
        peak += 1
    return max(MIN_WINDOW, peak)


def serialize_space(
    space: DesignSpace,
    graphs: Sequence[PerceptualGraph],
    stage_order: Optional[Sequence[str]] = None,
) -> SerializationOrder:
    """Concatenate per-stage orderings in pipeline order."""
    stage_order = tuple(stage_order or STAGES)
    owner: Dict[str, PerceptualGraph] = {}
    for g in graphs:
        for v in g.vertices:
            if v in owner:
                raise InputError(f"parameter '{v}' appears in two stage graphs")
            owner[v] = g
    missing = [name for name in space.names if name not in owner]
    if missing:
        raise InputError(
            f"parameters missing from the perceptual graph: {', '.join(missing)}"
        )
    uncovered = {g.stage for g in graphs} - set(stage_order)
    if uncovered:
        raise InputError(f"stage order doesn't cover {', '.join(sorted(uncovered))}")

    by_stage = {g.stage: g for g in graphs}
    order: List[int] = []
    for stage in stage_order:
        if stage in by_stage:
            order.extend(space.index(v) for v in serialize_stage(by_stage[stage]))

    degrees = tuple(perception_degree(owner[name], name) for name in space.names)
    return SerializationOrder(tuple(order), window_from_degrees(degrees), degrees)


def load_graphs(text: str) -> Tuple[List[PerceptualGraph], Optional[List[str]]]:
    """Parse a graph fixture: {vertices: [{vertex, stage}], edges: [{a, b, label}]}.

    An external edge may point at a parameter of another stage or at a bare
    stage name (a port with no parameter behind it). Returns the per-stage
    graphs and the file's `stage_order`, if any.
    """
    try:
        data = json.loads(text)
        stage_of = {v["vertex"]: v["stage"] for v in data["vertices"]}
        raw_edges = [(e["a"], e["b"], e["label"]) for e in data["edges"]]
    except (json.JSONDecodeError, KeyError, TypeError) as err:
        raise InputError(f"malformed perceptual graph: {err}")

    stages: Dict[str, List[str]] = {}
    for vertex, stage in stage_of.items():
        if stage not in STAGES:
            raise InputError(f"vertex '{vertex}' has unknown stage {stage!r}")
        stages.setdefault(stage, []).append(vertex)

    edges: Dict[str, List[Edge]] = {stage: [] for stage in stages}
    for a, b, label in raw_edges:
        if label not in ("internal", "external"):
            raise InputError(f"edge {a}-{b} has unknown label {label!r}")
        ends = [stage_of.get(v, v if v in STAGES else None) for v in (a, b)]
        if None in ends:
            unknown = a if ends[0] is None else b
            raise InputError(f"edge {a}-{b} references unknown vertex '{unknown}'")
        if label == "internal":
            if ends[0] != ends[1] or a not in stage_of or b not in stage_of:
                raise InputError(f"internal edge {a}-{b} crosses a stage boundary")
            edges[ends[0]].append(Edge(a, b, "internal"))
        else:
            if ends[0] == ends[1]:
                raise InputError(f"external edge {a}-{b} stays inside {ends[0]}")
            for end, vertex in zip(ends, (a, b)):
                if vertex in stage_of:
                    edges[end].append(Edge(a, b, "external"))

    graphs = [
        PerceptualGraph(stage, tuple(vertices), tuple(edges[stage]))
        for stage, vertices in stages.items()
    ]
    stage_order = data.get("stage_order")
    return graphs, stage_order


def restrict_graphs(
    graphs: Sequence[PerceptualGraph], names: Sequence[str]
) -> List[PerceptualGraph]:
    """Keep only the vertices in `names` and the edges whose stage-side ends survive.

    External edges stay even when their far end was dropped: the datapath
    still leaves the stage.
    """
    keep = set(names)
    restricted = []
    for g in graphs:
        vertices = tuple(v for v in g.vertices if v in keep)
        if not vertices:
            continue
        edges = tuple(
            e for e in g.edges if all(v in keep for v in (e.a, e.b) if v in g.vertices)
        )
        restricted.append(PerceptualGraph(g.stage, vertices, edges))
    return restricted
