# ===================================
# > Shipped data & settings precedence
# =================================

import json
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Final, Literal, Mapping, Optional, Tuple, Type, TypeVar

from attention_dse.design_space import DesignSpace, parse_design_space
from attention_dse.microarch_graph import (
    SerializationOrder,
    load_graphs,
    restrict_graphs,
    serialize_space,
)
from attention_dse.oracle import OracleConfig, parse_oracle_config
from attention_dse.utils import InputError

DataKind = Literal["spaces", "graphs", "workloads"]
T = TypeVar("T")

DATA_DIR: Final = Path(__file__).parent / "data"
SPACES: Final = ("full", "compact", "exhaustive")
WORKLOADS: Final = ("compute_bound", "memory_bound", "branch_heavy")
DEFAULT_SPACE: Final = "compact"
DEFAULT_GRAPH: Final = "full"
DEFAULT_WORKLOAD: Final = "compute_bound"
SETTINGS_SECTIONS: Final = ("surrogate", "exploration")


def resolve_data_file(value: str, kind: DataKind) -> Path:
    """A shipped data file by bare name (eg. "compact") or any path on disk."""
    shipped = DATA_DIR / kind / f"{value}.json"
    if "/" not in value and "\\" not in value and shipped.is_file():
        return shipped
    path = Path(value).resolve()
    if not path.is_file():
        available = ", ".join(sorted(p.stem for p in (DATA_DIR / kind).glob("*.json")))
        raise InputError(
            f"'{value}' isn't a file or a shipped {kind[:-1]}.",
            tip=f"shipped {kind}: {available}",
        )
    return path


def read_text(path: Path) -> str:
    try:
        return path.read_text("utf-8")
    except OSError as err:
        raise InputError(f"couldn't read '{path}': {err.strerror}")


def load_space(value: str) -> Tuple[DesignSpace, Path]:
    path = resolve_data_file(value, "spaces")
    return parse_design_space(read_text(path)), path


def load_workload(value: str) -> Tuple[OracleConfig, Path]:
    path = resolve_data_file(value, "workloads")
    return parse_oracle_config(read_text(path)), path


def load_order(
    space: DesignSpace, value: str = DEFAULT_GRAPH
) -> Tuple[SerializationOrder, Path]:
    """Serialize `space` with a perceptual graph, dropping vertices the space lacks."""
    path = resolve_data_file(value, "graphs")
    graphs, stage_order = load_graphs(read_text(path))
    return serialize_space(space, restrict_graphs(graphs, space.names), stage_order), path


# ===================
# > Settings merging
# =================


def load_settings(path: Optional[Path]) -> Dict[str, Dict[str, Any]]:
    """Read a --config file: a JSON object with optional per-section objects."""
    if path is None:
        return {}
    try:
        data = json.loads(read_text(path))
    except json.JSONDecodeError as err:
        raise InputError(f"'{path}' isn't valid JSON: {err}")
    if not isinstance(data, dict):
        raise InputError(f"'{path}' must hold a JSON object")
    unknown = set(data) - set(SETTINGS_SECTIONS)
    if unknown:
        raise InputError(
            f"unknown sections in '{path}': {', '.join(sorted(unknown))}",
            tip=f"use {' and '.join(SETTINGS_SECTIONS)}",
        )
    for section, values in data.items():
        if not isinstance(values, dict):
            raise InputError(f"section '{section}' in '{path}' must be an object")
    return data


def merge_settings(
    cls: Type[T], from_file: Optional[Mapping[str, Any]], flags: Mapping[str, Any]
) -> T:
    """Build `cls` with precedence: flags (unless None) > file section > defaults."""
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    values: Dict[str, Any] = {}
    for source in (from_file or {}, flags):
        unknown = set(source) - known
        if unknown:
            raise InputError(f"unknown {cls.__name__} settings: {', '.join(sorted(unknown))}")
        values.update({k: v for k, v in source.items() if v is not None})
    for key in ("objectives", "reference"):
        if isinstance(values.get(key), list):
            values[key] = tuple(values[key])
    try:
        return cls(**values)
    except TypeError as err:
        raise InputError(f"bad {cls.__name__} settings: {err}")
