# ==============================================
# > Dominance, Pareto sets & hypervolume metrics
# ============================================

from dataclasses import dataclass, field
from typing import (
    Any,
    Generic,
    Iterable,
    Iterator,
    List,
    Literal,
    Optional,
    Sequence,
    Tuple,
    TypeVar,
    Union,
)

import numpy as np

Sense = Literal["max", "min"]
Orientation = Tuple[Sense, ...]
K = TypeVar("K")
ObjectiveLike = Union[Sequence[float], np.ndarray]

PPA_ORIENTATION: Orientation = ("max", "min", "min")
DUPLICATE_TOL = 1e-12
REFERENCE_MARGIN = 0.1


def _orientation(orientation: Optional[Sequence[Sense]], dims: int) -> Orientation:
    if orientation is None:
        return ("min",) * dims
    if len(orientation) != dims:
        raise ValueError(f"orientation has {len(orientation)} entries, objectives have {dims}")
    for sense in orientation:
        if sense not in ("max", "min"):
            raise ValueError(f"unknown objective sense {sense!r}")
    return tuple(orientation)


def canonical(
    values: ObjectiveLike, orientation: Optional[Sequence[Sense]] = None
) -> np.ndarray:
    """Map objective vectors (or a matrix of them) onto pure minimization."""
    arr = np.asarray(values, dtype=np.float64)
    dims = arr.shape[-1] if arr.ndim else 1
    signs = np.array([-1.0 if s == "max" else 1.0 for s in _orientation(orientation, dims)])
    return arr * signs


def dominates(
    a: ObjectiveLike, b: ObjectiveLike, orientation: Optional[Sequence[Sense]] = None
) -> bool:
    """True iff `a` is at least as good as `b` everywhere and strictly better somewhere."""
    if len(a) != len(b):
        raise ValueError(f"can't compare {len(a)}-objective and {len(b)}-objective vectors")
    ca, cb = canonical(a, orientation), canonical(b, orientation)
    return bool(np.all(ca <= cb) and np.any(ca < cb))


def _same(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(np.all(np.abs(a - b) <= DUPLICATE_TOL))


@dataclass
class ParetoSet(Generic[K]):
    """Mutually non-dominated (key, objectives) members.

    Keys are usually DesignPoints. Objectives are stored as given; dominance
    is decided after mapping them onto minimization with `orientation`.
    """

    orientation: Orientation = PPA_ORIENTATION
    members: List[Tuple[K, Tuple[float, ...]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[Tuple[K, Tuple[float, ...]]]:
        return iter(self.members)

    def __contains__(self, key: object) -> bool:
        return any(k == key for k, _ in self.members)

    @property
    def keys(self) -> List[K]:
        return [k for k, _ in self.members]

    @property
    def objectives(self) -> np.ndarray:
        if not self.members:
            return np.empty((0, len(self.orientation)))
        return np.array([obj for _, obj in self.members], dtype=np.float64)

    def would_expand(self, objectives: ObjectiveLike) -> bool:
        """Whether inserting `objectives` would change the set."""
        new = canonical(objectives, self.orientation)
        for _, obj in self.members:
            old = canonical(obj, self.orientation)
            if _same(old, new) or (np.all(old <= new) and np.any(old < new)):
                return False
        return True

    def insert(self, key: K, objectives: ObjectiveLike) -> bool:
        """Add a member, evicting any it dominates. Returns whether it was added."""
        values = tuple(float(v) for v in objectives)
        if len(values) != len(self.orientation):
            raise ValueError(
                f"expected {len(self.orientation)} objectives, got {len(values)}"
            )
        if not self.would_expand(values):
            return False
        self.members = [
            (k, obj)
            for k, obj in self.members
            if not dominates(values, obj, self.orientation)
        ]
        self.members.append((key, values))
        return True

    def copy(self) -> "ParetoSet[K]":
        return ParetoSet(self.orientation, list(self.members))


def _sort_key(item: Tuple[Any, Sequence[float]], orientation: Orientation) -> Tuple:
    key, objectives = item
    return (tuple(canonical(objectives, orientation)), str(getattr(key, "values", key)))


def pareto_filter(
    items: Iterable[Tuple[K, ObjectiveLike]], orientation: Sequence[Sense] = PPA_ORIENTATION
) -> ParetoSet[K]:
    """The non-dominated subset of `items`, independent of input order.

    Items are inserted in canonical-objective order, so duplicates (within
    1e-12) collapse onto the same survivor whatever order they arrive in.
    """
    orient = tuple(orientation)
    front: ParetoSet[K] = ParetoSet(orient)
    for key, objectives in sorted(items, key=lambda item: _sort_key(item, orient)):
        front.insert(key, objectives)
    return front


# =================
# > Hypervolume
# ===============


def reference_point(
    objectives: ObjectiveLike,
    orientation: Sequence[Sense] = PPA_ORIENTATION,
    margin: float = REFERENCE_MARGIN,
) -> Tuple[float, ...]:
    """Per-objective worst observed value pushed out by `margin` of its magnitude."""
    arr = np.atleast_2d(np.asarray(objectives, dtype=np.float64))
    if arr.size == 0:
        raise ValueError("need at least one objective vector to place a reference point")
    orient = _orientation(orientation, arr.shape[1])
    worst = canonical(arr, orient).max(axis=0)
    ref = worst + np.maximum(margin * np.abs(worst), DUPLICATE_TOL)
    return tuple(float(v) for v in canonical(ref, orient))


def _prepare(
    front: Union[ParetoSet, ObjectiveLike],
    ref: Sequence[float],
    orientation: Optional[Sequence[Sense]],
) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(front, ParetoSet):
        orientation = front.orientation
        points = front.objectives
    else:
        points = np.atleast_2d(np.asarray(front, dtype=np.float64))
    dims = len(ref)
    if points.size == 0:
        return np.empty((0, dims)), canonical(ref, _orientation(orientation, dims))
    if points.shape[1] != dims:
        raise ValueError(f"reference point has {dims} objectives, front has {points.shape[1]}")
    orient = _orientation(orientation, dims)
    cpoints, cref = canonical(points, orient), canonical(ref, orient)
    for p in cpoints:
        if not (np.all(p <= cref) and np.any(p < cref)):
            raise ValueError(
                f"front member {canonical(p, orient).tolist()} doesn't dominate the reference"
                f" point {list(ref)}"
            )
    return cpoints, cref


def _hv2d(points: np.ndarray, ref: np.ndarray) -> float:
    volume = 0.0
    best_y = ref[1]
    for x, y in sorted(map(tuple, points)):
        if y < best_y:
            volume += (ref[0] - x) * (best_y - y)
            best_y = y
    return volume


def _hv3d(points: np.ndarray, ref: np.ndarray) -> float:
    # Slice along the third objective; each slab is a 2-D problem.
    order = np.argsort(points[:, 2], kind="stable")
    pts = points[order]
    volume = 0.0
    for i in range(len(pts)):
        top = pts[i + 1, 2] if i + 1 < len(pts) else ref[2]
        height = top - pts[i, 2]
        if height > 0:
            volume += _hv2d(pts[: i + 1, :2], ref[:2]) * height
    return volume


def hypervolume(
    front: Union[ParetoSet, ObjectiveLike],
    ref: Sequence[float],
    orientation: Optional[Sequence[Sense]] = None,
) -> float:
    """Exact hypervolume dominated by `front` and bounded by `ref` (1 to 3 objectives)."""
    points, cref = _prepare(front, ref, orientation)
    if len(points) == 0:
        return 0.0
    dims = points.shape[1]
    if dims == 1:
        return float(cref[0] - points[:, 0].min())
    if dims == 2:
        return float(_hv2d(points, cref))
    if dims == 3:
        return float(_hv3d(points, cref))
    raise ValueError("exact hypervolume is only implemented for up to 3 objectives")


def hypervolume_mc(
    front: Union[ParetoSet, ObjectiveLike],
    ref: Sequence[float],
    orientation: Optional[Sequence[Sense]] = None,
    *,
    samples: int = 200_000,
    seed: int = 0,
) -> Tuple[float, float]:
    """Monte-Carlo hypervolume estimate and its standard error."""
    points, cref = _prepare(front, ref, orientation)
    if len(points) == 0:
        return 0.0, 0.0
    lower = points.min(axis=0)
    box = float(np.prod(cref - lower))
    rng = np.random.default_rng(seed)
    hits = 0
    remaining = samples
    while remaining:
        chunk = min(remaining, 20_000)
        draws = rng.uniform(lower, cref, size=(chunk, len(cref)))
        covered = np.zeros(chunk, dtype=bool)
        for p in points:
            covered |= np.all(draws >= p, axis=1)
        hits += int(covered.sum())
        remaining -= chunk
    frac = hits / samples
    return box * frac, box * float(np.sqrt(frac * (1 - frac) / samples))


# =================
# > Front distances
# ===============


def adrs(
    found: Union[ParetoSet, ObjectiveLike],
    truth: Union[ParetoSet, ObjectiveLike],
    orientation: Optional[Sequence[Sense]] = None,
) -> float:
    """Average distance from each true Pareto member to its nearest found member.

    Objectives are min-max normalized over the union of both fronts before
    measuring Euclidean distance. An empty `found` front is infinitely far.
    """
    if isinstance(truth, ParetoSet):
        orientation = truth.orientation
    t = truth.objectives if isinstance(truth, ParetoSet) else np.asarray(truth, dtype=float)
    f = found.objectives if isinstance(found, ParetoSet) else np.asarray(found, dtype=float)
    if t.size == 0:
        raise ValueError("the reference (true) front is empty")
    t = np.atleast_2d(t)
    if f.size == 0:
        return float("inf")
    f = np.atleast_2d(f)
    if f.shape[1] != t.shape[1]:
        raise ValueError("found and true fronts have different objective counts")

    orient = _orientation(orientation, t.shape[1])
    ct, cf = canonical(t, orient), canonical(f, orient)
    both = np.vstack([ct, cf])
    span = both.max(axis=0) - both.min(axis=0)
    span[span == 0] = 1.0
    nt, nf = (ct - both.min(axis=0)) / span, (cf - both.min(axis=0)) / span
    distances = np.linalg.norm(nt[:, None, :] - nf[None, :, :], axis=2)
    return float(distances.min(axis=1).mean())


def iterations_to_fraction(curve: Sequence[float], fraction: float = 0.99) -> int:
    """First iteration whose PHV reaches `fraction` of the curve's final value."""
    if len(curve) == 0:
        raise ValueError("empty PHV curve")
    target = fraction * curve[-1]
    for i, value in enumerate(curve):
        if value >= target:
            return i
    return len(curve) - 1
