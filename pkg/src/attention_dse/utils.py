import hashlib
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar, Optional, Union

import rich
from rich.markup import escape
from rich.progress import (
    BarColumn,
    Progress,
    ProgressColumn,
    Task,
    TimeElapsedColumn,
    TimeRemainingColumn,
)
from rich.text import Text

console = rich.get_console()
THREADS_ENV_VAR = "ATTN_DSE_THREADS"
DEFAULT_WORKERS = 2


@dataclass
class DSEError(Exception):
    error: str
    tip: Optional[str] = None

    exit_code: ClassVar[int] = 2

    def __str__(self) -> str:
        if self.tip:
            return f"{self.error} -> {self.tip}"
        return self.error

    def __rich__(self) -> str:
        if self.tip:
            return f"[error]{escape(self.error)}[/]\n[info]╰─> {escape(self.tip)}[/]"
        else:
            return f"[error]{escape(self.error)}"


class InputError(DSEError):
    exit_code: ClassVar[int] = 2


class CompatibilityError(DSEError):
    exit_code: ClassVar[int] = 3


class NumericalError(DSEError):
    exit_code: ClassVar[int] = 4


def worker_count(requested: Optional[int] = None) -> int:
    """Number of worker processes, capped by $ATTN_DSE_THREADS when set."""
    workers = requested if requested is not None else DEFAULT_WORKERS
    cap = os.getenv(THREADS_ENV_VAR)
    if cap:
        try:
            workers = min(workers, int(cap))
        except ValueError:
            raise InputError(
                f"${THREADS_ENV_VAR} must be an integer, got {cap!r}.",
                tip="Unset it or pass a positive worker count.",
            )
    return max(1, workers)


def sha256_bytes(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def sha256_file(path: Path) -> str:
    return sha256_bytes(path.read_bytes())


def atomic_write_text(path: Path, text: str) -> None:
    """Write `text` to `path` so readers never observe a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}-", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


class StatusColumn(ProgressColumn):
    """The task's `unit` field followed by its latest `status` (loss, PHV)."""

    def render(self, task: Task) -> Text:
        parts = (task.fields.get("unit", ""), task.fields.get("status", ""))
        return Text(" ".join(p for p in parts if p), style="progress.filesize")


def make_rich_progress() -> Progress:
    """Progress bars for oracle batches, training epochs and exploration iterations."""
    return Progress(
        "[progress.description]{task.description}",
        BarColumn(),
        "[progress.percentage]{task.completed}/{task.total}",
        StatusColumn(),
        "-",
        TimeElapsedColumn(),
        "<",
        TimeRemainingColumn(),
        console=console,
    )


def fmt_int(number: Union[int, float]) -> str:
    if isinstance(number, float):
        return f"{number:.6g}"
    if number < 10000:
        return str(number)
    if number >= 10**12:
        digits = str(number)
        return f"{digits[0]}.{digits[1:3]} × 10^{len(digits) - 1}"

    return f"{number:,}".replace(",", " ")
