# ==========================================
# > Run manifests, CSV artifacts & summaries
# ========================================

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Final, Mapping, Optional, Sequence, Tuple

import pandas as pd
import rich
from packaging.specifiers import SpecifierSet
from packaging.version import InvalidVersion, Version
from rich.panel import Panel
from rich.table import Table

import attention_dse
from attention_dse.design_space import DesignPoint, DesignSpace
from attention_dse.explorer import ExplorationTrace, phv_fraction
from attention_dse.microarch_graph import SerializationOrder
from attention_dse.oracle import OBJECTIVES, ObjectiveVector
from attention_dse.pareto import adrs, iterations_to_fraction, pareto_filter
from attention_dse.surrogate import TrainingRecord, mape, mse, r2_score
from attention_dse.utils import (
    CompatibilityError,
    InputError,
    atomic_write_text,
    fmt_int,
    sha256_bytes,
    sha256_file,
)

JSON = Any
MANIFEST_FILE: Final = "manifest.json"
MANIFEST_FORMAT: Final = "1.0"
SUPPORTED_MANIFEST_FORMATS: Final = SpecifierSet(">=1.0,<2")
TRAINING_LOG_FILE: Final = "training_log.csv"
FRONT_FILE: Final = "front.csv"
TRACE_FILE: Final = "trace.csv"
CURVE_FILE: Final = "phv_curve.csv"
EVAL_REPORT_FILE: Final = "eval_report.csv"
EVAL_POINTS_FILE: Final = "eval_points.csv"
REFERENCE_RTOL: Final = 1e-12
PHV_FRACTION: Final = 0.99


@dataclass
class RunManifest:
    """Everything needed to tell where a directory of results came from.

    `manifest_id` only hashes what determines the results (inputs by content,
    seeds, settings and tool version), so reruns share it and every CSV row
    can point back at it.
    """

    experiment: str
    inputs: Dict[str, Dict[str, str]]
    seeds: Dict[str, int]
    settings: Dict[str, JSON] = field(default_factory=dict)
    version: str = attention_dse.__version__
    created_at: str = ""
    wall_time_s: Optional[float] = None
    outcome: Dict[str, JSON] = field(default_factory=dict)
    data_format: str = MANIFEST_FORMAT

    @property
    def manifest_id(self) -> str:
        identity = {
            "experiment": self.experiment,
            "inputs": {role: entry["sha256"] for role, entry in sorted(self.inputs.items())},
            "seeds": self.seeds,
            "settings": self.settings,
            "version": self.version,
        }
        blob = json.dumps(identity, sort_keys=True, default=str).encode("utf-8")
        return sha256_bytes(blob)[:16]


def make_manifest(
    experiment: str,
    inputs: Mapping[str, Path],
    seeds: Mapping[str, int],
    settings: Optional[Mapping[str, JSON]] = None,
) -> RunManifest:
    return RunManifest(
        experiment=experiment,
        inputs={
            role: {"path": str(path), "sha256": sha256_file(path)}
            for role, path in inputs.items()
        },
        seeds=dict(seeds),
        settings=dict(settings or {}),
        created_at=datetime.now(timezone.utc).isoformat(),
    )


def save_manifest(directory: Path, manifest: RunManifest) -> Path:
    raw = {k.replace("_", "-"): v for k, v in asdict(manifest).items()}
    raw["manifest-id"] = manifest.manifest_id
    path = directory / MANIFEST_FILE
    atomic_write_text(path, json.dumps(raw, indent=2, sort_keys=True, default=str) + "\n")
    return path


def load_manifest(directory: Path) -> RunManifest:
    path = directory / MANIFEST_FILE
    if not path.is_file():
        raise InputError(
            f"'{directory}' has no {MANIFEST_FILE}.",
            tip="is it an attention-dse run directory?",
        )
    try:
        data = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as err:
        raise InputError(f"'{path}' is corrupt: {err}")
    data_format = str(data.get("data-format", ""))
    try:
        supported = Version(data_format) in SUPPORTED_MANIFEST_FORMATS
    except InvalidVersion:
        supported = False
    if not supported:
        raise CompatibilityError(
            f"unsupported run manifest format: {data_format!r}",
            tip=f"this version reads {SUPPORTED_MANIFEST_FORMATS}",
        )
    data.pop("manifest-id", None)
    try:
        return RunManifest(**{k.replace("-", "_"): v for k, v in data.items()})
    except TypeError as err:
        raise InputError(f"'{path}' isn't a valid run manifest: {err}")


# ================
# > CSV artifacts
# ==============


def point_label(point: Optional[DesignPoint]) -> str:
    return "" if point is None else "-".join(str(v) for v in point.values)


def write_csv(path: Path, frame: pd.DataFrame, manifest: RunManifest) -> Path:
    """Write `frame` with the manifest reference as its first column."""
    frame = frame.copy()
    frame.insert(0, "manifest", manifest.manifest_id)
    atomic_write_text(path, frame.to_csv(index=False))
    return path


def read_csv(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise InputError(f"'{path}' doesn't exist.")
    return pd.read_csv(path, keep_default_na=False, na_values=[""])


def training_log_frame(logs: Mapping[str, Sequence[TrainingRecord]]) -> pd.DataFrame:
    rows = [
        {
            "objective": objective,
            "epoch": r.epoch,
            "loss": r.loss,
            "heldout_mape": r.heldout_mape,
        }
        for objective, records in logs.items()
        for r in records
    ]
    return pd.DataFrame(rows, columns=["objective", "epoch", "loss", "heldout_mape"])


def front_frame(
    space: DesignSpace,
    members: Sequence[Tuple[DesignPoint, Tuple[float, ...]]],
    trace: ExplorationTrace,
) -> pd.DataFrame:
    """The returned front: decoded parameter values, objectives and their source.

    Members the oracle verified carry the full true objective vector; the
    rest (only when nothing could be verified) carry the predictions.
    """
    rows = []
    for rank, (point, objectives) in enumerate(members):
        row: Dict[str, Any] = {"rank": rank, "point": point_label(point)}
        row.update(space.decode(point))
        truth: Optional[ObjectiveVector] = trace.verified.get(point)
        if truth is not None:
            row.update(zip(OBJECTIVES, truth.as_tuple()))
            row["source"] = "oracle"
        else:
            values = dict(zip(trace.objectives, objectives))
            row.update({o: values.get(o) for o in OBJECTIVES})
            row["source"] = "predicted"
        rows.append(row)
    columns = ["rank", "point", *space.names, *OBJECTIVES, "source"]
    return pd.DataFrame(rows, columns=columns)


def trace_frame(
    space: DesignSpace, trace: ExplorationTrace, order: SerializationOrder
) -> pd.DataFrame:
    """One row per proposed child: where it came from and what happened to it."""
    rows = []
    for d in trace.decisions:
        row: Dict[str, Any] = {
            "iteration": d.iteration,
            "objective": d.objective,
            "parent": point_label(d.parent),
            "parameter": "" if d.parameter is None else space.names[d.parameter],
            "position": "" if d.parameter is None else order.positions[d.parameter],
            "direction": d.direction,
            "fallback": d.fallback,
            "clamped": d.clamped,
            "child": point_label(d.child),
            "accepted": d.accepted,
        }
        for prefix, values in (("predicted", d.predicted), ("oracle", d.oracle)):
            for i, objective in enumerate(OBJECTIVES):
                row[f"{prefix}_{objective}"] = None if values is None else values[i]
        rows.append(row)
    columns = [
        "iteration",
        "objective",
        "parent",
        "parameter",
        "position",
        "direction",
        "fallback",
        "clamped",
        "child",
        "accepted",
        *(f"{p}_{o}" for p in ("predicted", "oracle") for o in OBJECTIVES),
    ]
    return pd.DataFrame(rows, columns=columns)


def curve_frame(trace: ExplorationTrace) -> pd.DataFrame:
    rows = []
    for c in trace.curve:
        row: Dict[str, Any] = {
            "acquisition": trace.acquisition,
            "iteration": c.iteration,
            "phv": c.phv,
            "evaluations": c.evaluations,
        }
        row.update({f"ref_{o}": v for o, v in zip(trace.objectives, trace.reference)})
        rows.append(row)
    columns = [
        "acquisition",
        "iteration",
        "phv",
        "evaluations",
        *(f"ref_{o}" for o in trace.objectives),
    ]
    return pd.DataFrame(rows, columns=columns)


def eval_frames(
    space: DesignSpace,
    points: Sequence[DesignPoint],
    predicted: Mapping[str, Any],
    truth: Any,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """The per-variant MAPE/MSE/R^2/ADRS report and the raw dump it was computed from.

    ADRS measures the true objectives of the points a variant ranks as
    Pareto-optimal against the true front of the same sample.
    """
    true_front = pareto_filter(enumerate(truth))
    report_rows = []
    rows = []
    for variant, values in predicted.items():
        chosen = pareto_filter(enumerate(values))
        front_adrs = adrs(truth[chosen.keys], true_front)
        for i, objective in enumerate(OBJECTIVES):
            report_rows.append(
                {
                    "variant": variant,
                    "objective": objective,
                    "n": len(points),
                    "mape": mape(values[:, i], truth[:, i]),
                    "mse": mse(values[:, i], truth[:, i]),
                    "r2": r2_score(values[:, i], truth[:, i]),
                    "adrs": front_adrs,
                }
            )
        for point, pred, true in zip(points, values, truth):
            row: Dict[str, Any] = {"variant": variant, "point": point_label(point)}
            row.update(space.decode(point))
            row.update({f"predicted_{o}": float(v) for o, v in zip(OBJECTIVES, pred)})
            row.update({f"true_{o}": float(v) for o, v in zip(OBJECTIVES, true)})
            rows.append(row)
    report = pd.DataFrame(
        report_rows, columns=["variant", "objective", "n", "mape", "mse", "r2", "adrs"]
    )
    columns = [
        "variant",
        "point",
        *space.names,
        *(f"{kind}_{o}" for kind in ("predicted", "true") for o in OBJECTIVES),
    ]
    return report, pd.DataFrame(rows, columns=columns)


def oracle_frame(
    space: DesignSpace,
    points: Sequence[DesignPoint],
    values: Sequence[ObjectiveVector],
    groups: Sequence[str],
) -> pd.DataFrame:
    rows = []
    for point, vector, group in zip(points, values, groups):
        row: Dict[str, Any] = {"point": point_label(point)}
        row.update(space.decode(point))
        row.update(zip(OBJECTIVES, vector.as_tuple()))
        row["binding_group"] = group
        rows.append(row)
    return pd.DataFrame(rows, columns=["point", *space.names, *OBJECTIVES, "binding_group"])


# ==================
# > Merged reports
# ================


@dataclass(frozen=True)
class RunSummary:
    run: str
    manifest: str
    acquisition: str
    seed: int
    iterations: int
    final_phv: float
    iterations_to_99: int
    oracle_calls: int
    wall_time_s: Optional[float]
    reference: Tuple[float, ...]


def summarize_run(directory: Path) -> RunSummary:
    manifest = load_manifest(directory)
    curve = read_csv(directory / CURVE_FILE)
    if curve.empty:
        raise InputError(f"'{directory / CURVE_FILE}' holds no PHV curve")
    ref_columns = [c for c in curve.columns if c.startswith("ref_")]
    phv = curve["phv"].astype(float).tolist()
    return RunSummary(
        run=directory.name,
        manifest=str(curve["manifest"].iloc[0]),
        acquisition=str(curve["acquisition"].iloc[0]),
        seed=int(manifest.seeds.get("exploration", 0)),
        iterations=int(curve["iteration"].iloc[-1]),
        final_phv=phv[-1],
        iterations_to_99=iterations_to_fraction(phv, PHV_FRACTION),
        oracle_calls=int(curve["evaluations"].iloc[-1]),
        wall_time_s=manifest.wall_time_s,
        reference=tuple(float(curve[c].iloc[0]) for c in ref_columns),
    )


def merge_runs(directories: Sequence[Path]) -> pd.DataFrame:
    """One row per run; refuses runs whose PHV reference points differ."""
    if not directories:
        raise InputError("report needs at least one run directory")
    summaries = [summarize_run(d) for d in directories]
    first = summaries[0]
    for s in summaries[1:]:
        same = len(s.reference) == len(first.reference) and all(
            math.isclose(a, b, rel_tol=REFERENCE_RTOL, abs_tol=0.0)
            for a, b in zip(s.reference, first.reference)
        )
        if not same:
            raise CompatibilityError(
                f"runs '{first.run}' and '{s.run}' use different PHV reference points",
                tip="PHV values are only comparable under one reference point",
            )
    rows = []
    for s in summaries:
        row = asdict(s)
        row.pop("reference")
        rows.append(row)
    return pd.DataFrame(rows, columns=[k for k in rows[0]])


# ====================
# > Console summaries
# ==================


def make_space_table(space: DesignSpace, order: SerializationOrder) -> Table:
    table = Table(title=f"Design space: {space.name}", box=rich.box.SIMPLE)
    table.add_column("#", justify="right")
    table.add_column("Parameter")
    table.add_column("Stage")
    table.add_column("Degree", justify="right")
    table.add_column("Candidates")
    table.add_column("Count", justify="right")
    for position, index in enumerate(order.order, start=1):
        p = space.params[index]
        candidates = ", ".join(str(c) for c in p.candidates)
        if len(candidates) > 40:
            candidates = f"{p.candidates[0]} … {p.candidates[-1]}"
        degree = str(order.degrees[index])
        table.add_row(str(position), p.name, p.stage, degree, candidates, str(p.cardinality))
    return table


def make_space_summary(space: DesignSpace, order: SerializationOrder) -> Panel:
    lines = [
        f"[bold]# of parameters:[/] {len(space)}",
        f"[bold]Total size:[/] {fmt_int(space.total_size)}",
        f"[bold]Window size:[/] {order.window_size}",
    ]
    return Panel("\n".join(lines), title="[bold]Summary", expand=False)


def make_training_summary(logs: Mapping[str, Sequence[TrainingRecord]]) -> Table:
    table = Table(title="Training", box=rich.box.SIMPLE)
    table.add_column("Objective")
    table.add_column("Epochs", justify="right")
    table.add_column("Final loss", justify="right")
    table.add_column("Held-out MAPE %", justify="right")
    for objective, records in logs.items():
        last = records[-1]
        heldout = "-" if last.heldout_mape is None else f"{last.heldout_mape:.2f}"
        table.add_row(objective, str(last.epoch), f"{last.loss:.4g}", heldout)
    return table


def make_eval_table(report: pd.DataFrame) -> Table:
    variants = list(dict.fromkeys(report["variant"]))
    table = Table(title="Prediction quality", box=rich.box.SIMPLE)
    table.add_column("Metric")
    for variant in variants:
        table.add_column(variant, justify="right")
    by_variant = {v: report[report["variant"] == v].set_index("objective") for v in variants}
    for label, column, fmt in (("MAPE %", "mape", ".3f"), ("R²", "r2", ".4f")):
        for objective in OBJECTIVES:
            cells = [format(by_variant[v].at[objective, column], fmt) for v in variants]
            table.add_row(f"{label} {objective}", *cells)
    table.add_row("ADRS", *(f"{by_variant[v]['adrs'].iloc[0]:.4f}" for v in variants))
    return table


def make_exploration_summary(
    trace: ExplorationTrace, front_size: int, true_phv: Optional[float] = None
) -> Panel:
    accepted = sum(d.accepted for d in trace.decisions)
    fallbacks = sum(d.fallback for d in trace.decisions)
    lines = [
        f"[bold]Acquisition:[/] {trace.acquisition}",
        f"[bold]Iterations:[/] {trace.curve[-1].iteration if trace.curve else 0}"
        f" (stopped: {trace.stop_reason})",
        f"[bold]Oracle calls:[/] {trace.oracle_calls}"
        + (" [warning](budget ran out)[/]" if trace.truncated else ""),
        f"[bold]Candidates:[/] {len(trace.decisions)} proposed, {accepted} accepted,"
        f" {fallbacks} random fallbacks",
        f"[bold]Front size:[/] {front_size}",
        f"[bold]Final PHV:[/] {trace.final_phv:.6g}",
    ]
    if true_phv is not None and true_phv > 0:
        fraction = phv_fraction(trace.final_phv, true_phv)
        lines.append(f"[bold]Fraction of true PHV:[/] {fraction:.2%}")
    return Panel("\n".join(lines), title="[bold]Exploration", expand=False)


def make_report_table(report: pd.DataFrame) -> Table:
    table = Table(title="Run comparison", box=rich.box.SIMPLE)
    headers = ("Run", "Acquisition", "Seed", "Final PHV", "Iters to 99%", "Calls", "Wall s")
    for header in headers:
        table.add_column(header, justify="left" if header in headers[:2] else "right")
    for row in report.itertuples(index=False):
        missing = row.wall_time_s is None or pd.isna(row.wall_time_s)
        wall = "-" if missing else f"{row.wall_time_s:.1f}"
        table.add_row(
            row.run,
            row.acquisition,
            str(row.seed),
            f"{row.final_phv:.6g}",
            str(row.iterations_to_99),
            str(row.oracle_calls),
            wall,
        )
    return table
