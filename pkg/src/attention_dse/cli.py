# ==========================
# > Command implementations
# ========================

import atexit
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Final, List, Optional, Tuple

import click
import numpy as np
import rich
import rich.traceback
from rich.theme import Theme

import attention_dse
from attention_dse.config import (
    DEFAULT_GRAPH,
    DEFAULT_SPACE,
    DEFAULT_WORKLOAD,
    load_order,
    load_settings,
    load_space,
    load_workload,
    merge_settings,
)
from attention_dse.design_space import DesignPoint, DesignSpace, random_sample
from attention_dse.explorer import (
    ExplorationConfig,
    OraclePredictor,
    Predictor,
    clipped_hypervolume,
    exhaustive_front,
    explore,
    random_search,
)
from attention_dse.oracle import OBJECTIVES, Oracle
from attention_dse.results import (
    CURVE_FILE,
    EVAL_POINTS_FILE,
    EVAL_REPORT_FILE,
    FRONT_FILE,
    TRACE_FILE,
    TRAINING_LOG_FILE,
    RunManifest,
    curve_frame,
    eval_frames,
    front_frame,
    make_eval_table,
    make_exploration_summary,
    make_manifest,
    make_report_table,
    make_space_summary,
    make_space_table,
    make_training_summary,
    merge_runs,
    oracle_frame,
    save_manifest,
    trace_frame,
    training_log_frame,
    write_csv,
)
from attention_dse.surrogate import SurrogateConfig, SurrogatePredictor, train
from attention_dse.utils import (
    DSEError,
    InputError,
    atomic_write_text,
    console,
    make_rich_progress,
)

ORACLE_EVAL_FILE: Final = "oracle_eval.csv"
READABLE_FILE: Final = click.Path(
    resolve_path=True, exists=True, dir_okay=False, path_type=Path
)
WRITABLE_FILE: Final = click.Path(
    resolve_path=True, dir_okay=False, readable=False, writable=True, path_type=Path
)
OUT_DIR: Final = click.Path(resolve_path=True, file_okay=False, path_type=Path)
RUN_DIR: Final = click.Path(resolve_path=True, exists=True, file_okay=False, path_type=Path)
CHECKPOINT_DIR: Final = click.Path(resolve_path=True, file_okay=False, path_type=Path)
split_objectives: Final = lambda ctx, param, v: tuple(v.split(",")) if v else None


def prepare_out_dir(path: Path) -> Path:
    if path.exists() and any(path.iterdir()):
        console.log(f"[warning]Writing into {path} which isn't empty.")
    path.mkdir(parents=True, exist_ok=True)
    return path


def finish_run(out: Path, manifest: RunManifest, started: float, **outcome: Any) -> None:
    manifest.wall_time_s = round(time.perf_counter() - started, 3)
    manifest.outcome.update(outcome)
    save_manifest(out, manifest)


def build_predictor(
    space: DesignSpace,
    oracle: Oracle,
    checkpoints: Optional[Path],
    perfect: bool,
    graph: str,
) -> Tuple[Predictor, Dict[str, Path], str]:
    """The predictor behind explore/eval and the input files it was built from."""
    if perfect == (checkpoints is not None):
        raise InputError(
            "pick exactly one predictor.", tip="pass --checkpoints DIR or --perfect"
        )
    if checkpoints is not None:
        predictor = SurrogatePredictor.load(checkpoints, space)
        inputs = {f"checkpoint-{o}": checkpoints / f"{o}.ckpt" for o in OBJECTIVES}
        console.log(f"Loaded predictors from {checkpoints}")
        return predictor, inputs, "surrogate"

    order, graph_path = load_order(space, graph)
    return OraclePredictor(space, oracle, order), {"graph": graph_path}, "perfect"


def entrypoint() -> None:
    try:
        main()
    except DSEError as err:
        console.print(err)
        sys.exit(err.exit_code)


@click.group()
@click.option(
    "--no-color/--force-color", default=None, help="Force disable/enable colored output."
)
@click.option("--show-locals", is_flag=True, help="Show locals for unhandled exceptions.")
@click.option(
    "--dump-html", type=WRITABLE_FILE, help="Save a HTML copy of the emitted output."
)
@click.version_option(version=attention_dse.__version__, prog_name="attention-dse")
def main(no_color: Optional[bool], show_locals: bool, dump_html: Optional[Path]) -> None:
    """
    Attention-aware design space exploration for out-of-order cores.

    Trains transformer predictors of IPC, power and area over a
    serialized microarchitecture design space, then explores the space by
    reading the predictors' attention to find the bottleneck parameter of
    each Pareto-optimal design. Every expensive simulation is stood in for
    by a deterministic synthetic oracle.

    \b
    Typical session:
     - attention-dse show --space compact
     - attention-dse train --space compact -o runs/model
     - attention-dse explore --checkpoints runs/model -o runs/aba
     - attention-dse explore --checkpoints runs/model -a random -o runs/random
     - attention-dse report runs/aba runs/random
    """
    if os.getenv("GITHUB_ACTIONS") == "true":
        # Makes it easier to debug failures on CI.
        show_locals = True
    rich.traceback.install(suppress=[click], show_locals=show_locals)
    color_mode_key = {True: None, None: "auto", False: "truecolor"}
    color_mode = color_mode_key[no_color]
    width: Optional[int] = None
    if os.getenv("GITHUB_ACTIONS") == "true":
        if no_color is not True:
            color_mode = "truecolor"
        # Annoyingly enough rich autodetects the width to be far too small on GHA.
        width = 115
    theme = Theme({"error": "bold red", "warning": "bold yellow", "info": "bold"})
    rich.reconfigure(
        log_path=False, record=dump_html, color_system=color_mode, theme=theme, width=width
    )
    if dump_html:
        atexit.register(console.save_html, path=str(dump_html))


# fmt: off
@main.command("train")
@click.option(
    "--space", default=DEFAULT_SPACE, show_default=True,
    help="Design space: a shipped name or a JSON file."
)
@click.option(
    "--graph", default=DEFAULT_GRAPH, show_default=True,
    help="Perceptual graph: a shipped name or a JSON file."
)
@click.option(
    "--oracle", "workload", default=DEFAULT_WORKLOAD, show_default=True,
    help="Oracle workload: a shipped name or a JSON file."
)
@click.option("-o", "--out", type=OUT_DIR, required=True, help="Run directory.")
@click.option(
    "--samples", type=click.IntRange(min=2), default=200, show_default=True,
    help="Labeled training points."
)
@click.option(
    "--heldout", type=click.IntRange(min=0), default=50, show_default=True,
    help="Held-out points used to track MAPE during training."
)
@click.option("--seed", type=int, help="Seed for sampling and initialization.")
@click.option(
    "--model", "architecture", type=click.Choice(["attention", "mlp"]),
    help="Predictor architecture (mlp is the attention-free baseline)."
)
@click.option("--epochs", type=click.IntRange(min=1))
@click.option("--lr", type=float, help="Learning rate.")
@click.option("--batch-size", type=click.IntRange(min=1))
@click.option("--embed-dim", type=click.IntRange(min=1))
@click.option("--depth", type=click.IntRange(min=1), help="Blocks (mlp: dense layers).")
@click.option("--heads", type=click.IntRange(min=1))
@click.option("--window", "window_size", type=int, help="Override the attention window.")
@click.option(
    "--full-attention/--windowed-attention", default=None,
    help="Use vanilla self-attention instead of the sliding window."
)
@click.option("--optimizer", type=click.Choice(["adam", "sgd"]))
@click.option("--activation", type=click.Choice(["gelu", "silu"]))
@click.option(
    "--config", "config_path", type=READABLE_FILE,
    help="JSON settings file (sections: surrogate, exploration)."
)
@click.option("-j", "--workers", type=click.IntRange(min=1), help="Oracle worker processes.")
# fmt: on
def train_cmd(
    space: str,
    graph: str,
    workload: str,
    out: Path,
    samples: int,
    heldout: int,
    config_path: Optional[Path],
    workers: Optional[int],
    **flags: Any,
) -> None:
    """Label random designs with the oracle and fit the three predictors."""
    started = time.perf_counter()
    design_space, space_path = load_space(space)
    order, graph_path = load_order(design_space, graph)
    oracle_cfg, workload_path = load_workload(workload)
    settings = load_settings(config_path)
    cfg = merge_settings(SurrogateConfig, settings.get("surrogate"), flags)

    out = prepare_out_dir(out)
    inputs = {"space": space_path, "graph": graph_path, "oracle": workload_path}
    if config_path:
        inputs["config"] = config_path
    manifest = make_manifest(
        "train",
        inputs,
        {"surrogate": cfg.seed},
        {"samples": samples, "heldout": heldout, "surrogate": asdict(cfg)},
    )
    save_manifest(out, manifest)

    oracle = Oracle(design_space, oracle_cfg)
    points = random_sample(design_space, samples + heldout, cfg.seed)
    with make_rich_progress() as progress:
        truth = oracle.evaluate_many(points, workers=workers, progress=progress)
    console.log(f"Labeled {len(points)} points ({oracle.calls} oracle calls)")

    models = {}
    logs = {}
    with make_rich_progress() as progress:
        for objective in OBJECTIVES:
            labels = [(p, t[objective]) for p, t in zip(points, truth)]
            models[objective], logs[objective] = train(
                design_space,
                order,
                labels[:samples],
                cfg,
                objective=objective,
                validation=labels[samples:] or None,
                progress=progress,
            )

    SurrogatePredictor(models).save(out)
    write_csv(out / TRAINING_LOG_FILE, training_log_frame(logs), manifest)
    final = {o: r[-1].heldout_mape for o, r in logs.items()}
    finish_run(out, manifest, started, heldout_mape=final, oracle_calls=oracle.calls)
    console.line()
    console.print(make_training_summary(logs))
    console.log(f"Checkpoints and training log saved to {out}")


# fmt: off
@main.command("explore")
@click.option(
    "--space", default=DEFAULT_SPACE, show_default=True,
    help="Design space: a shipped name or a JSON file."
)
@click.option(
    "--oracle", "workload", default=DEFAULT_WORKLOAD, show_default=True,
    help="Oracle workload: a shipped name or a JSON file."
)
@click.option(
    "--checkpoints", type=CHECKPOINT_DIR,
    help="Directory holding ipc.ckpt, power.ckpt and area.ckpt."
)
@click.option(
    "--perfect", is_flag=True,
    help="Predict with the oracle itself (attribution heatmaps, no training)."
)
@click.option(
    "--graph", default=DEFAULT_GRAPH, show_default=True,
    help="Perceptual graph for --perfect."
)
@click.option("-a", "--acquisition", type=click.Choice(["aba", "random"]))
@click.option("--budget", "eval_budget", type=click.IntRange(min=0), help="Oracle calls.")
@click.option("--seed", type=int)
@click.option("--iterations", "max_iterations", type=click.IntRange(min=0))
@click.option("--initial-samples", type=click.IntRange(min=1))
@click.option(
    "--objectives", callback=split_objectives,
    help="Comma separated subset of ipc,power,area."
)
@click.option("--step-size", type=click.IntRange(min=1))
@click.option(
    "--stall", "stall_iterations", type=click.IntRange(min=0),
    help="Stop after this many iterations without progress (0 never stops)."
)
@click.option(
    "--true-front", is_flag=True,
    help="Enumerate the space to report the fraction of the true PHV reached."
)
@click.option("-o", "--out", type=OUT_DIR, required=True, help="Run directory.")
@click.option(
    "--config", "config_path", type=READABLE_FILE,
    help="JSON settings file (sections: surrogate, exploration)."
)
# fmt: on
def explore_cmd(
    space: str,
    workload: str,
    checkpoints: Optional[Path],
    perfect: bool,
    graph: str,
    true_front: bool,
    out: Path,
    config_path: Optional[Path],
    **flags: Any,
) -> None:
    """Search for the Pareto front with bottleneck analysis (or at random)."""
    started = time.perf_counter()
    design_space, space_path = load_space(space)
    oracle_cfg, workload_path = load_workload(workload)
    settings = load_settings(config_path)
    cfg = merge_settings(ExplorationConfig, settings.get("exploration"), flags)

    oracle = Oracle(design_space, oracle_cfg)
    predictor, predictor_inputs, kind = build_predictor(
        design_space, oracle, checkpoints, perfect, graph
    )
    out = prepare_out_dir(out)
    inputs = {"space": space_path, "oracle": workload_path, **predictor_inputs}
    if config_path:
        inputs["config"] = config_path
    manifest = make_manifest(
        "explore",
        inputs,
        {"exploration": cfg.seed},
        {"predictor": kind, "exploration": asdict(cfg)},
    )
    save_manifest(out, manifest)

    search = explore if cfg.acquisition == "aba" else random_search
    with make_rich_progress() as progress:
        front, trace = search(design_space, predictor, oracle, cfg, progress=progress)

    true_phv = None
    if true_front:
        truth_front = exhaustive_front(design_space, oracle, cfg.objectives)
        true_phv = clipped_hypervolume(truth_front, trace.reference)

    write_csv(out / FRONT_FILE, front_frame(design_space, front.members, trace), manifest)
    order = predictor.order
    write_csv(out / TRACE_FILE, trace_frame(design_space, trace, order), manifest)
    write_csv(out / CURVE_FILE, curve_frame(trace), manifest)
    finish_run(
        out,
        manifest,
        started,
        final_phv=trace.final_phv,
        true_phv=true_phv,
        oracle_calls=trace.oracle_calls,
        stop_reason=trace.stop_reason,
        truncated=trace.truncated,
    )
    console.line()
    console.print(make_exploration_summary(trace, len(front), true_phv))
    console.log(f"Front, trace and PHV curve saved to {out}")


# fmt: off
@main.command("eval")
@click.option(
    "--space", default=DEFAULT_SPACE, show_default=True,
    help="Design space: a shipped name or a JSON file."
)
@click.option(
    "--oracle", "workload", default=DEFAULT_WORKLOAD, show_default=True,
    help="Oracle workload: a shipped name or a JSON file."
)
@click.option(
    "--checkpoints", type=CHECKPOINT_DIR, multiple=True,
    help="Directory holding the predictors. Repeat to compare variants side by side."
)
@click.option("--perfect", is_flag=True, help="Also evaluate the oracle-backed predictor.")
@click.option(
    "--graph", default=DEFAULT_GRAPH, show_default=True,
    help="Perceptual graph for --perfect."
)
@click.option(
    "-n", "--samples", type=click.IntRange(min=1), default=200, show_default=True,
    help="Random test points."
)
@click.option("--seed", type=int, default=12345, show_default=True)
@click.option("-o", "--out", type=OUT_DIR, required=True, help="Run directory.")
# fmt: on
def eval_cmd(
    space: str,
    workload: str,
    checkpoints: Tuple[Path, ...],
    perfect: bool,
    graph: str,
    samples: int,
    seed: int,
    out: Path,
) -> None:
    """Report MAPE, MSE, R² and ADRS of each predictor against the oracle."""
    started = time.perf_counter()
    if not checkpoints and not perfect:
        raise InputError(
            "nothing to evaluate.", tip="pass --checkpoints DIR (repeatable) or --perfect"
        )
    if len(set(checkpoints)) != len(checkpoints):
        raise InputError("a checkpoint directory was given twice.")
    design_space, space_path = load_space(space)
    oracle_cfg, workload_path = load_workload(workload)
    oracle = Oracle(design_space, oracle_cfg)
    predictors: Dict[str, Predictor] = {}
    inputs: Dict[str, Path] = {"space": space_path, "oracle": workload_path}
    for directory in checkpoints:
        loaded = SurrogatePredictor.load(directory, design_space)
        label = loaded.variant
        if label in predictors:
            label = f"{label}:{directory}"
        predictors[label] = loaded
        inputs.update({f"{label}-{o}": directory / f"{o}.ckpt" for o in OBJECTIVES})
        console.log(f"Loaded {label} predictors from {directory}")
    if perfect:
        order, graph_path = load_order(design_space, graph)
        predictors["perfect"] = OraclePredictor(design_space, oracle, order)
        inputs["graph"] = graph_path

    out = prepare_out_dir(out)
    manifest = make_manifest(
        "eval", inputs, {"eval": seed}, {"predictors": list(predictors), "samples": samples}
    )
    save_manifest(out, manifest)

    points = random_sample(design_space, samples, seed)
    truth = np.array([oracle.peek(p).as_tuple() for p in points])
    predicted = {label: p.predict(points)[0] for label, p in predictors.items()}
    report, dump = eval_frames(design_space, points, predicted, truth)
    write_csv(out / EVAL_REPORT_FILE, report, manifest)
    write_csv(out / EVAL_POINTS_FILE, dump, manifest)
    mapes: Dict[str, Dict[str, float]] = {label: {} for label in predictors}
    adrses: Dict[str, float] = {}
    for row in report.itertuples(index=False):
        mapes[row.variant][row.objective] = row.mape
        adrses[row.variant] = row.adrs
    finish_run(out, manifest, started, mape=mapes, adrs=adrses)
    console.line()
    console.print(make_eval_table(report))


@main.command("report")
@click.argument("run_dirs", metavar="RUN-DIR...", nargs=-1, required=True, type=RUN_DIR)
@click.option("-o", "--out", type=WRITABLE_FILE, help="Write the merged CSV here.")
def report_cmd(run_dirs: Tuple[Path, ...], out: Optional[Path]) -> None:
    """Merge exploration runs into one comparison table."""
    merged = merge_runs(list(run_dirs))
    console.print(make_report_table(merged))
    if out:
        atomic_write_text(out, merged.to_csv(index=False))
        console.log(f"Merged report saved to {out}")


@main.group("oracle")
def oracle_group() -> None:
    """Query the synthetic oracle directly."""


# fmt: off
@oracle_group.command("eval")
@click.option(
    "--space", default=DEFAULT_SPACE, show_default=True,
    help="Design space: a shipped name or a JSON file."
)
@click.option(
    "--oracle", "workload", default=DEFAULT_WORKLOAD, show_default=True,
    help="Oracle workload: a shipped name or a JSON file."
)
@click.option(
    "-n", "--samples", type=click.IntRange(min=1), default=100, show_default=True,
    help="Random points to evaluate."
)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--enumerate", "enumerate_all", is_flag=True,
    help="Evaluate every point of the space instead (small spaces only)."
)
@click.option("-o", "--out", type=OUT_DIR, required=True, help="Run directory.")
@click.option("-j", "--workers", type=click.IntRange(min=1), help="Oracle worker processes.")
# fmt: on
def oracle_eval_cmd(
    space: str,
    workload: str,
    samples: int,
    seed: int,
    enumerate_all: bool,
    out: Path,
    workers: Optional[int],
) -> None:
    """Evaluate designs with the oracle and dump objectives plus the binding group."""
    started = time.perf_counter()
    design_space, space_path = load_space(space)
    oracle_cfg, workload_path = load_workload(workload)
    oracle = Oracle(design_space, oracle_cfg)

    out = prepare_out_dir(out)
    manifest = make_manifest(
        "oracle-eval",
        {"space": space_path, "oracle": workload_path},
        {"sample": seed},
        {"samples": None if enumerate_all else samples, "enumerate": enumerate_all},
    )
    save_manifest(out, manifest)

    points: List[DesignPoint] = (
        list(design_space.enumerate_points())
        if enumerate_all
        else random_sample(design_space, samples, seed)
    )
    with make_rich_progress() as progress:
        values = oracle.evaluate_many(points, workers=workers, progress=progress)
    groups = [oracle.binding_group(p) for p in points]
    frame = oracle_frame(design_space, points, values, groups)
    write_csv(out / ORACLE_EVAL_FILE, frame, manifest)
    finish_run(out, manifest, started, oracle_calls=oracle.calls)
    console.log(f"Evaluated {len(points)} points, saved to {out / ORACLE_EVAL_FILE}")


@main.command()
@click.option(
    "--space", default=DEFAULT_SPACE, show_default=True,
    help="Design space: a shipped name or a JSON file.",
)
@click.option(
    "--graph", default=DEFAULT_GRAPH, show_default=True,
    help="Perceptual graph: a shipped name or a JSON file.",
)
def show(space: str, graph: str) -> None:
    """Show a design space in serialization order with its window size."""
    design_space, _ = load_space(space)
    order, _ = load_order(design_space, graph)
    console.print(make_space_summary(design_space, order))
    console.line()
    console.print(make_space_table(design_space, order))


if __name__ == "__main__":
    entrypoint()
