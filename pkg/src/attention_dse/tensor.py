# ==========================================
# > Dense float64 tensors & reverse-mode AD
# ========================================

"""A deliberately small autodiff kernel for the surrogate.

Every op is a method on `Tape`. When the tape records and an input requires
gradients, the op appends a backward closure; `Tape.backward` replays them in
exact reverse order, accumulating into `Tensor.grad`. Data are numpy float64
arrays, batched along leading axes.
"""

import io
import json
import math
import zipfile
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    Final,
    List,
    Literal,
    Mapping,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from packaging.specifiers import SpecifierSet
from packaging.version import InvalidVersion, Version

from attention_dse.utils import CompatibilityError, InputError, NumericalError

Activation = Literal["gelu", "silu"]
LN_EPS: Final = 1e-9
CHECKPOINT_FORMAT: Final = "1.0"
SUPPORTED_CHECKPOINT_FORMATS: Final = SpecifierSet(">=1.0,<2")
METADATA_MEMBER: Final = "metadata.json"
# Fixed member timestamps keep checkpoint bytes reproducible.
ZIP_TIMESTAMP: Final = (1980, 1, 1, 0, 0, 0)
GELU_C: Final = math.sqrt(2 / math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data: Any, *, requires_grad: bool = False, name: str = "") -> None:
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"


def parameter(data: Any, name: str) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = np.array(g, dtype=np.float64) if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def attention_mask(length: int, window: int) -> np.ndarray:
    """Boolean (length, length) mask: True where attention is allowed.

    Position 0 (the prediction token) sees and is seen by every position;
    other positions see parameters at most window // 2 places away.
    """
    half = window // 2
    pos = np.arange(length)
    mask = np.abs(pos[:, None] - pos[None, :]) <= half
    mask[0, :] = True
    mask[:, 0] = True
    return mask


class Tape:
    """Records differentiable ops and replays their backward passes in reverse."""

    def __init__(self, *, record: bool = True) -> None:
        self.record = record
        self.ops: List[Tuple[str, Callable[[], None]]] = []
        self.attention_flops = 0

    def __len__(self) -> int:
        return len(self.ops)

    def _output(
        self,
        op: str,
        data: np.ndarray,
        inputs: Sequence[Tensor],
        backward: Callable[[np.ndarray], None],
    ) -> Tensor:
        out = Tensor(data, requires_grad=self.record and any(t.requires_grad for t in inputs))
        if out.requires_grad:

            def run() -> None:
                if out.grad is not None:
                    backward(out.grad)

            self.ops.append((op, run))
        return out

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for _, run in reversed(self.ops):
            run()

    # ===============
    # > Linear algebra
    # =============

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")

        def backward(g: np.ndarray) -> None:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

        return self._output("matmul", np.matmul(a.data, b.data), (a, b), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum; `b` may broadcast (bias rows, shared embeddings)."""

        def backward(g: np.ndarray) -> None:
            _accumulate(a, _unbroadcast(g, a.shape))
            _accumulate(b, _unbroadcast(g, b.shape))

        return self._output("add", a.data + b.data, (a, b), backward)

    def scale(self, a: Tensor, factor: float) -> Tensor:
        def backward(g: np.ndarray) -> None:
            _accumulate(a, g * factor)

        return self._output("scale", a.data * factor, (a,), backward)

    # ===============
    # > Shape plumbing
    # =============

    def gather(self, table: Tensor, indices: np.ndarray) -> Tensor:
        """Rows of a 2-D `table` picked by integer `indices` (embedding lookup)."""
        indices = np.asarray(indices, dtype=np.int64)
        rows = table.shape[0]
        if indices.size and (indices.min() < 0 or indices.max() >= rows):
            raise ValueError(f"index out of range for a table with {rows} rows")

        def backward(g: np.ndarray) -> None:
            grad = np.zeros_like(table.data)
            np.add.at(grad, indices, g)
            _accumulate(table, grad)

        return self._output("gather", table.data[indices], (table,), backward)

    def concat(self, tensors: Sequence[Tensor], axis: int) -> Tensor:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def backward(g: np.ndarray) -> None:
            for t, part in zip(tensors, np.split(g, splits, axis=axis)):
                _accumulate(t, part)

        data = np.concatenate([t.data for t in tensors], axis=axis)
        return self._output("concat", data, tensors, backward)

    def broadcast_to(self, a: Tensor, shape: Tuple[int, ...]) -> Tensor:
        def backward(g: np.ndarray) -> None:
            _accumulate(a, _unbroadcast(g, a.shape))

        return self._output("broadcast", np.broadcast_to(a.data, shape), (a,), backward)

    def select(self, a: Tensor, index: int, axis: int) -> Tensor:
        def backward(g: np.ndarray) -> None:
            grad = np.zeros_like(a.data)
            where: List[Any] = [slice(None)] * a.ndim
            where[axis] = index
            grad[tuple(where)] = g
            _accumulate(a, grad)

        return self._output("select", np.take(a.data, index, axis=axis), (a,), backward)

    def reshape(self, a: Tensor, shape: Tuple[int, ...]) -> Tensor:
        def backward(g: np.ndarray) -> None:
            _accumulate(a, g.reshape(a.shape))

        return self._output("reshape", a.data.reshape(shape), (a,), backward)

    def swapaxes(self, a: Tensor, axis1: int, axis2: int) -> Tensor:
        def backward(g: np.ndarray) -> None:
            _accumulate(a, np.swapaxes(g, axis1, axis2))

        return self._output("swapaxes", np.swapaxes(a.data, axis1, axis2), (a,), backward)

    # =================
    # > Nonlinearities
    # ===============

    def softmax_rows(self, a: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        """Normalized exponential over the last axis; masked entries come out exactly 0."""
        if np.isnan(a.data).any():
            raise NumericalError("NaN reached a softmax", tip="the model has diverged")
        logits = a.data if mask is None else np.where(mask, a.data, -np.inf)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=-1, keepdims=True)

        def backward(g: np.ndarray) -> None:
            _accumulate(a, y * (g - (g * y).sum(axis=-1, keepdims=True)))

        return self._output("softmax", y, (a,), backward)

    def layer_norm(self, a: Tensor, eps: float = LN_EPS) -> Tensor:
        """Affine-free normalization to zero mean, unit variance over the last axis."""
        mu = a.data.mean(axis=-1, keepdims=True)
        centered = a.data - mu
        inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
        xhat = centered * inv_std

        def backward(g: np.ndarray) -> None:
            g_mean = g.mean(axis=-1, keepdims=True)
            gx_mean = (g * xhat).mean(axis=-1, keepdims=True)
            _accumulate(a, inv_std * (g - g_mean - xhat * gx_mean))

        return self._output("layer_norm", xhat, (a,), backward)

    def activation(self, a: Tensor, kind: Activation = "gelu") -> Tensor:
        x = a.data
        if kind == "gelu":
            t = np.tanh(GELU_C * (x + 0.044715 * x**3))
            y = 0.5 * x * (1 + t)
            dy = 0.5 * (1 + t) + 0.5 * x * (1 - t * t) * GELU_C * (1 + 3 * 0.044715 * x * x)
        elif kind == "silu":
            s = 1.0 / (1.0 + np.exp(-x))
            y = x * s
            dy = s * (1 + x * (1 - s))
        else:
            raise ValueError(f"unknown activation {kind!r}")

        def backward(g: np.ndarray) -> None:
            _accumulate(a, g * dy)

        return self._output(kind, y, (a,), backward)

    def mse_loss(self, pred: Tensor, target: np.ndarray) -> Tensor:
        target = np.asarray(target, dtype=np.float64)
        if pred.shape != target.shape:
            raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
        diff = pred.data - target

        def backward(g: np.ndarray) -> None:
            _accumulate(pred, g * 2.0 * diff / diff.size)

        return self._output("mse", np.array(np.mean(diff**2)), (pred,), backward)

    # ============
    # > Attention
    # ==========

    def masked_attention(
        self, q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None
    ) -> Tuple[Tensor, np.ndarray]:
        """Dense scaled dot-product attention over (..., T, d) inputs, from primitives."""
        length, dim = q.shape[-2], q.shape[-1]
        scores = self.scale(self.matmul(q, self.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dim))
        weights = self.softmax_rows(scores, mask)
        batch = int(np.prod(q.shape[:-2], dtype=np.int64))
        self.attention_flops += 2 * batch * length * length * dim
        return self.matmul(weights, v), weights.data

    def windowed_attention(
        self, q: Tensor, k: Tensor, v: Tensor, window: int
    ) -> Tuple[Tensor, np.ndarray]:
        """Sliding-window attention over (B, H, T, d) inputs.

        Only the T * (window + 1) allowed scores are computed. Returns the
        attended values and the dense (B, H, T, T) weight matrix, zero where
        masked. A window wide enough to cover the whole sequence falls back
        to `masked_attention` with no mask.
        """
        if window < 1 or window % 2 == 0:
            raise ValueError(f"attention window must be odd and positive, got {window}")
        batch, heads, length, dim = q.shape
        half = window // 2
        if half >= length - 2:
            return self.masked_attention(q, k, v)

        scale = 1.0 / math.sqrt(dim)
        cols = np.arange(1, length)[:, None] + np.arange(-half, half + 1)[None, :]
        valid = (cols >= 1) & (cols < length)
        first = np.zeros((length - 1, 1), dtype=np.int64)
        idx = np.concatenate([first, np.where(valid, cols, 0)], axis=1)
        keep = np.concatenate([np.ones((length - 1, 1), dtype=bool), valid], axis=1)

        qd, kd, vd = q.data, k.data, v.data
        q_rows = qd[:, :, 1:]
        kg, vg = kd[:, :, idx], vd[:, :, idx]
        scores = np.where(keep, np.einsum("bhtd,bhtsd->bhts", q_rows, kg) * scale, -np.inf)
        p = np.exp(scores - scores.max(axis=-1, keepdims=True))
        p /= p.sum(axis=-1, keepdims=True)
        out_rows = np.einsum("bhts,bhtsd->bhtd", p, vg)

        s0 = np.einsum("bhd,bhtd->bht", qd[:, :, 0], kd) * scale
        p0 = np.exp(s0 - s0.max(axis=-1, keepdims=True))
        p0 /= p0.sum(axis=-1, keepdims=True)
        out0 = np.einsum("bht,bhtd->bhd", p0, vd)
        out = np.concatenate([out0[:, :, None], out_rows], axis=2)

        def backward(g: np.ndarray) -> None:
            g0, g_rows = g[:, :, 0], g[:, :, 1:]
            gq, gk, gv = np.zeros_like(qd), np.zeros_like(kd), np.zeros_like(vd)

            gp = np.einsum("bhtd,bhtsd->bhts", g_rows, vg)
            gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
            gq[:, :, 1:] = np.einsum("bhts,bhtsd->bhtd", gs, kg)
            gk_slots = np.einsum("bhts,bhtd->bhtsd", gs, q_rows)
            gv_slots = np.einsum("bhts,bhtd->bhtsd", p, g_rows)
            np.add.at(np.moveaxis(gk, 2, 0), idx, np.moveaxis(gk_slots, (2, 3), (0, 1)))
            np.add.at(np.moveaxis(gv, 2, 0), idx, np.moveaxis(gv_slots, (2, 3), (0, 1)))

            gp0 = np.einsum("bhd,bhtd->bht", g0, vd)
            gs0 = p0 * (gp0 - (gp0 * p0).sum(axis=-1, keepdims=True)) * scale
            gq[:, :, 0] = np.einsum("bht,bhtd->bhd", gs0, kd)
            gk += np.einsum("bht,bhd->bhtd", gs0, qd[:, :, 0])
            gv += np.einsum("bht,bhd->bhtd", p0, g0)

            _accumulate(q, gq)
            _accumulate(k, gk)
            _accumulate(v, gv)

        weights = np.zeros((batch, heads, length, length))
        weights[:, :, 0] = p0
        rows = np.broadcast_to(np.arange(1, length)[:, None], idx.shape)
        np.add.at(
            np.moveaxis(weights, (2, 3), (0, 1)), (rows, idx), np.moveaxis(p, (2, 3), (0, 1))
        )

        slots = (length - 1) * idx.shape[1] + length
        self.attention_flops += 2 * batch * heads * dim * slots
        return self._output("windowed_attention", out, (q, k, v), backward), weights


# ==============
# > Optimizers
# ============


def _check_finite(p: Tensor) -> np.ndarray:
    grad = p.grad if p.grad is not None else np.zeros_like(p.data)
    if not np.isfinite(grad).all():
        raise NumericalError(
            f"non-finite gradient for {p.name or 'a parameter'}",
            tip="lower the learning rate or check the training labels",
        )
    return grad


def sgd_step(
    params: Sequence[Tensor],
    lr: float,
    *,
    momentum: float = 0.0,
    velocity: Optional[List[np.ndarray]] = None,
) -> None:
    """In-place p <- p - lr * grad (with heavy-ball momentum when `velocity` is given)."""
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    for i, p in enumerate(params):
        grad = _check_finite(p)
        if momentum and velocity is not None:
            velocity[i] = momentum * velocity[i] + grad
            grad = velocity[i]
        p.data -= lr * grad


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0) -> None:
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        sgd_step(self.params, self.lr, momentum=self.momentum, velocity=self.velocity)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class Adam:
    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        if lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        for i, p in enumerate(self.params):
            grad = _check_finite(p)
            self.m[i] = b1 * self.m[i] + (1 - b1) * grad
            self.v[i] = b2 * self.v[i] + (1 - b2) * grad * grad
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ==============
# > Checkpoints
# ============


def save_checkpoint(
    path: Path, tensors: Mapping[str, np.ndarray], metadata: Mapping[str, Any]
) -> None:
    """Write named arrays plus JSON metadata as an npz-compatible zip archive."""
    meta = {**metadata, "data-format": CHECKPOINT_FORMAT}
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, mode="w", compression=zipfile.ZIP_DEFLATED) as zfile:
        info = zipfile.ZipInfo(METADATA_MEMBER, date_time=ZIP_TIMESTAMP)
        info.compress_type = zipfile.ZIP_DEFLATED
        zfile.writestr(info, json.dumps(meta, indent=2, sort_keys=True) + "\n")
        for name in sorted(tensors):
            buffer = io.BytesIO()
            np.lib.format.write_array(
                buffer, np.ascontiguousarray(tensors[name]), allow_pickle=False
            )
            info = zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_TIMESTAMP)
            info.compress_type = zipfile.ZIP_DEFLATED
            zfile.writestr(info, buffer.getvalue())


def load_checkpoint(path: Path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    if not path.is_file():
        raise InputError(f"checkpoint '{path}' doesn't exist")
    try:
        with zipfile.ZipFile(path) as zfile:
            metadata = json.loads(zfile.read(METADATA_MEMBER).decode("utf-8"))
            tensors = {}
            for member in zfile.namelist():
                if member.endswith(".npy"):
                    with zfile.open(member) as f:
                        tensors[member[: -len(".npy")]] = np.lib.format.read_array(
                            f, allow_pickle=False
                        )
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, ValueError) as err:
        raise CompatibilityError(f"'{path}' isn't a readable checkpoint: {err}")

    data_format = metadata.get("data-format")
    try:
        supported = Version(str(data_format)) in SUPPORTED_CHECKPOINT_FORMATS
    except InvalidVersion:
        supported = False
    if not supported:
        raise CompatibilityError(
            f"unsupported checkpoint format: {data_format}",
            tip=f"this version reads formats {SUPPORTED_CHECKPOINT_FORMATS}",
        )
    return tensors, metadata
