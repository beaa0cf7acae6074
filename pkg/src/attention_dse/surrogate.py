# ===================================
# > Attention-based PPA predictors
# =================================

"""Single-objective transformer predictor over serialized design points.

A design point becomes a sequence: a learned prediction token at position
0, then one embedding per parameter in serialization order, each plus a
learned position embedding. `depth` pre-norm blocks (attention + MLP, both
residual) and one final attention block follow; the prediction token's
final representation is normalized and projected to a scalar. Attention is
sliding-window except on the prediction token's row and column. The final
block's attention weights are the model's heatmap.

The "mlp" architecture is the attention-free baseline: the concatenated
one-hot encoding of every parameter goes through `depth` dense layers of
width `mlp_hidden`. It has no attention, so its heatmaps are uniform.
"""

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import (
    Any,
    Dict,
    Final,
    List,
    Literal,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import rich.progress

import attention_dse
from attention_dse.design_space import DesignPoint, DesignSpace
from attention_dse.microarch_graph import SerializationOrder
from attention_dse.tensor import (
    Adam,
    SGD,
    Activation,
    Tape,
    Tensor,
    load_checkpoint,
    parameter,
    save_checkpoint,
)
from attention_dse.utils import CompatibilityError, InputError, NumericalError

Objective = Literal["ipc", "power", "area"]
Architecture = Literal["attention", "mlp"]
OBJECTIVES: Final[Tuple[Objective, ...]] = ("ipc", "power", "area")
PREDICT_CHUNK: Final = 256


@dataclass(frozen=True)
class SurrogateConfig:
    architecture: Architecture = "attention"
    embed_dim: int = 32
    depth: int = 2
    heads: int = 2
    mlp_hidden: int = 64
    lr: float = 1e-3
    epochs: int = 300
    batch_size: int = 32
    seed: int = 0
    activation: Activation = "gelu"
    optimizer: Literal["adam", "sgd"] = "adam"
    momentum: float = 0.9
    # None takes the window from the serialization order.
    window_size: Optional[int] = None
    full_attention: bool = False
    # None averages the heatmap over heads.
    heatmap_head: Optional[int] = None
    divergence_factor: float = 1e3
    eval_every: int = 10

    def __post_init__(self) -> None:
        positive = ("embed_dim", "depth", "heads", "mlp_hidden", "epochs", "batch_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.embed_dim % self.heads:
            raise InputError(
                f"embed_dim ({self.embed_dim}) must be divisible by heads ({self.heads})"
            )
        if self.lr <= 0:
            raise InputError(f"lr must be > 0, got {self.lr}")
        window = self.window_size
        if window is not None and (window < 3 or window % 2 == 0):
            raise InputError(f"window_size must be odd and >= 3, got {window}")
        if self.heatmap_head is not None and not 0 <= self.heatmap_head < self.heads:
            raise InputError(
                f"heatmap_head must be in [0, {self.heads}), got {self.heatmap_head}"
            )
        if self.architecture not in ("attention", "mlp"):
            raise InputError(
                f"unknown architecture {self.architecture!r}", tip="use attention or mlp"
            )
        if self.activation not in ("gelu", "silu"):
            raise InputError(f"unknown activation {self.activation!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise InputError(f"unknown optimizer {self.optimizer!r}")
        if self.eval_every < 1:
            raise InputError(f"eval_every must be >= 1, got {self.eval_every}")

    @property
    def variant(self) -> str:
        """Short label for reports: attention, full-attention or mlp."""
        if self.architecture == "mlp":
            return "mlp"
        return "full-attention" if self.full_attention else "attention"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SurrogateConfig":
        try:
            return cls(**data)
        except TypeError as err:
            raise InputError(f"bad surrogate settings: {err}")


@dataclass(frozen=True)
class TrainingRecord:
    epoch: int
    loss: float
    heldout_mape: Optional[float] = None


def effective_window(window: int, length: int) -> int:
    """Clamp `window` to the parameter count: the largest odd value <= L, at least 3."""
    cap = length if length % 2 else length - 1
    return max(3, min(window, cap))


class SurrogateModel:
    def __init__(
        self,
        space: DesignSpace,
        order: SerializationOrder,
        cfg: SurrogateConfig,
        objective: Objective = "ipc",
    ) -> None:
        if len(order) != len(space):
            raise InputError(
                f"serialization order covers {len(order)} parameters,"
                f" the space has {len(space)}"
            )
        self.space = space
        self.order = order
        self.cfg = cfg
        self.objective = objective
        self.window = effective_window(cfg.window_size or order.window_size, len(space))
        self.target_mean = 0.0
        self.target_scale = 1.0
        self.params: Dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(cfg.seed))

    def _init_params(self, rng: np.random.Generator) -> None:
        k, hidden = self.cfg.embed_dim, self.cfg.mlp_hidden

        def dense(name: str, fan_in: int, fan_out: int) -> None:
            self.params[name] = parameter(
                rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)), name
            )

        def zeros(name: str, size: int) -> None:
            self.params[name] = parameter(np.zeros(size), name)

        if self.cfg.architecture == "mlp":
            # One input per parameter is hot.
            width = int(np.sum(self.space.cardinalities))
            scale = 1.0 / math.sqrt(len(self.space))
            self.params["layer0"] = parameter(
                rng.normal(0.0, scale, size=(width, hidden)), "layer0"
            )
            zeros("layer0_bias", hidden)
            for b in range(1, self.cfg.depth):
                dense(f"layer{b}", hidden, hidden)
                zeros(f"layer{b}_bias", hidden)
            dense("head", hidden, 1)
            zeros("head_bias", 1)
            return

        for i, p in enumerate(self.space.params):
            name = f"embed.{i}"
            self.params[name] = parameter(rng.normal(0.0, 0.5, size=(p.cardinality, k)), name)
        self.params["position"] = parameter(
            rng.normal(0.0, 0.1, size=(len(self.space) + 1, k)), "position"
        )
        self.params["token"] = parameter(rng.normal(0.0, 0.5, size=k), "token")
        for b in range(self.cfg.depth):
            for w in ("q", "k", "v", "o"):
                dense(f"block{b}.w{w}", k, k)
            dense(f"block{b}.mlp1", k, hidden)
            zeros(f"block{b}.mlp1_bias", hidden)
            dense(f"block{b}.mlp2", hidden, k)
            zeros(f"block{b}.mlp2_bias", k)
        for w in ("q", "k", "v", "o"):
            dense(f"final.w{w}", k, k)
        dense("head", k, 1)
        zeros("head_bias", 1)

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    @property
    def sequence_length(self) -> int:
        return len(self.space) + 1

    # ===========
    # > Forward
    # =========

    def _indices(self, points: Sequence[DesignPoint]) -> np.ndarray:
        idx = np.array([p.values for p in points], dtype=np.int64).reshape(len(points), -1)
        if idx.shape[1] != len(self.space):
            raise InputError(
                f"design points have {idx.shape[1]} values,"
                f" the model expects {len(self.space)}"
            )
        cards = self.space.cardinalities
        if (idx < 0).any() or (idx >= cards).any():
            raise InputError("design point index out of its parameter's embedding table range")
        return idx

    def embed(self, tape: Tape, idx: np.ndarray) -> Tensor:
        """(B, L + 1, k) input sequence: prediction token then parameters in order."""
        batch, k = idx.shape[0], self.cfg.embed_dim
        parts = [tape.broadcast_to(self.params["token"], (batch, 1, k))]
        for i in self.order.order:
            e = tape.gather(self.params[f"embed.{i}"], idx[:, i])
            parts.append(tape.reshape(e, (batch, 1, k)))
        return tape.add(tape.concat(parts, axis=1), self.params["position"])

    def _attention(self, tape: Tape, x: Tensor, prefix: str) -> Tuple[Tensor, np.ndarray]:
        batch, length, k = x.shape
        heads = self.cfg.heads

        def split(w: str) -> Tensor:
            proj = tape.matmul(x, self.params[f"{prefix}.w{w}"])
            return tape.swapaxes(tape.reshape(proj, (batch, length, heads, k // heads)), 1, 2)

        q, kk, v = split("q"), split("k"), split("v")
        if self.cfg.full_attention:
            attended, weights = tape.masked_attention(q, kk, v)
        else:
            attended, weights = tape.windowed_attention(q, kk, v, self.window)
        merged = tape.reshape(tape.swapaxes(attended, 1, 2), (batch, length, k))
        return tape.matmul(merged, self.params[f"{prefix}.wo"]), weights

    def _mlp(self, tape: Tape, x: Tensor, prefix: str) -> Tensor:
        p = self.params
        h = tape.add(tape.matmul(x, p[f"{prefix}.mlp1"]), p[f"{prefix}.mlp1_bias"])
        h = tape.activation(h, self.cfg.activation)
        return tape.add(tape.matmul(h, p[f"{prefix}.mlp2"]), p[f"{prefix}.mlp2_bias"])

    def one_hot(self, idx: np.ndarray) -> np.ndarray:
        """(B, sum of cardinalities) concatenated one-hot encoding of index vectors."""
        cards = np.asarray(self.space.cardinalities, dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(cards)[:-1]])
        encoded = np.zeros((idx.shape[0], int(cards.sum())))
        encoded[np.arange(idx.shape[0])[:, None], idx + offsets] = 1.0
        return encoded

    def _forward_mlp(self, tape: Tape, idx: np.ndarray) -> Tensor:
        p = self.params
        h = Tensor(self.one_hot(idx))
        for b in range(self.cfg.depth):
            h = tape.add(tape.matmul(h, p[f"layer{b}"]), p[f"layer{b}_bias"])
            h = tape.activation(h, self.cfg.activation)
        return tape.add(tape.matmul(h, p["head"]), p["head_bias"])

    def forward(self, tape: Tape, idx: np.ndarray) -> Tuple[Tensor, np.ndarray]:
        """Normalized predictions (B,) and final-block heatmaps (B, L + 1, L + 1)."""
        if self.cfg.architecture == "mlp":
            pred = tape.reshape(self._forward_mlp(tape, idx), (idx.shape[0],))
            self._check_finite(pred)
            length = self.sequence_length
            return pred, np.full((idx.shape[0], length, length), 1.0 / length)

        x = self.embed(tape, idx)
        for b in range(self.cfg.depth):
            attended, _ = self._attention(tape, tape.layer_norm(x), f"block{b}")
            x = tape.add(x, attended)
            x = tape.add(x, self._mlp(tape, tape.layer_norm(x), f"block{b}"))
        attended, weights = self._attention(tape, tape.layer_norm(x), "final")
        x = tape.add(x, attended)

        summary = tape.layer_norm(tape.select(x, 0, axis=1))
        out = tape.add(tape.matmul(summary, self.params["head"]), self.params["head_bias"])
        pred = tape.reshape(out, (idx.shape[0],))
        self._check_finite(pred)

        if self.cfg.heatmap_head is None:
            heatmap = weights.mean(axis=1)
        else:
            heatmap = weights[:, self.cfg.heatmap_head]
        return pred, heatmap

    def _check_finite(self, pred: Tensor) -> None:
        if not np.isfinite(pred.data).all():
            raise NumericalError(
                f"the {self.objective} predictor produced a non-finite value",
                tip="the checkpoint is probably corrupt or training diverged",
            )

    def predict(self, points: Sequence[DesignPoint]) -> Tuple[np.ndarray, np.ndarray]:
        """De-normalized predictions (n,) and heatmaps (n, L + 1, L + 1)."""
        if not points:
            length = self.sequence_length
            return np.empty(0), np.empty((0, length, length))
        idx = self._indices(points)
        values, heatmaps = [], []
        for start in range(0, len(idx), PREDICT_CHUNK):
            chunk = idx[start : start + PREDICT_CHUNK]
            pred, heatmap = self.forward(Tape(record=False), chunk)
            values.append(pred.data * self.target_scale + self.target_mean)
            heatmaps.append(heatmap)
        return np.concatenate(values), np.concatenate(heatmaps)

    # ==============
    # > Persistence
    # ============

    def save(self, path: Path) -> None:
        metadata = {
            "objective": self.objective,
            "space": self.space.name,
            "parameters": list(self.space.names),
            "cardinalities": [int(c) for c in self.space.cardinalities],
            "order": list(self.order.order),
            "order-window": self.order.window_size,
            "degrees": list(self.order.degrees),
            "config": asdict(self.cfg),
            "target-mean": self.target_mean,
            "target-scale": self.target_scale,
            "version": attention_dse.__version__,
        }
        save_checkpoint(path, {name: t.data for name, t in self.params.items()}, metadata)

    @classmethod
    def load(cls, path: Path, space: DesignSpace) -> "SurrogateModel":
        tensors, meta = load_checkpoint(path)
        if meta.get("parameters") != list(space.names) or meta.get("cardinalities") != [
            int(c) for c in space.cardinalities
        ]:
            raise CompatibilityError(
                f"checkpoint '{path}' was trained on a different design space",
                tip=f"it has {len(meta.get('parameters', []))} parameters, the space has"
                f" {len(space)}",
            )
        order = SerializationOrder(
            tuple(meta["order"]), int(meta["order-window"]), tuple(meta["degrees"])
        )
        model = cls(space, order, SurrogateConfig.from_dict(meta["config"]), meta["objective"])
        if set(tensors) != set(model.params):
            raise CompatibilityError(f"checkpoint '{path}' has an unexpected tensor layout")
        for name, t in model.params.items():
            if tensors[name].shape != t.shape:
                raise CompatibilityError(f"tensor {name} in '{path}' has the wrong shape")
            t.data = tensors[name].astype(np.float64)
        model.target_mean = float(meta["target-mean"])
        model.target_scale = float(meta["target-scale"])
        return model


# ===========
# > Training
# =========


def _normalization(y: np.ndarray) -> Tuple[float, float]:
    mean = float(y.mean())
    std = float(y.std())
    if std > 0:
        return mean, std
    return mean, 1e-6 * max(1.0, abs(mean))


def train(
    space: DesignSpace,
    order: SerializationOrder,
    labels: Sequence[Tuple[DesignPoint, float]],
    cfg: SurrogateConfig,
    *,
    objective: Objective = "ipc",
    validation: Optional[Sequence[Tuple[DesignPoint, float]]] = None,
    progress: Optional[rich.progress.Progress] = None,
) -> Tuple[SurrogateModel, List[TrainingRecord]]:
    """Fit one predictor by minibatch MSE on z-score normalized targets."""
    if len(labels) < 2:
        raise InputError(f"training needs at least 2 labeled points, got {len(labels)}")
    y = np.array([value for _, value in labels], dtype=np.float64)
    if not np.isfinite(y).all():
        raise InputError("training labels must be finite")

    model = SurrogateModel(space, order, cfg, objective)
    model.target_mean, model.target_scale = _normalization(y)
    idx = model._indices([point for point, _ in labels])
    z = (y - model.target_mean) / model.target_scale

    params = model.parameters()
    optimizer: Union[Adam, SGD]
    if cfg.optimizer == "adam":
        optimizer = Adam(params, cfg.lr)
    else:
        optimizer = SGD(params, cfg.lr, cfg.momentum)
    rng = np.random.default_rng(cfg.seed + 1)
    task = None
    if progress is not None:
        task = progress.add_task(
            f"[bold]Training {objective}", total=cfg.epochs, unit="epochs"
        )

    log: List[TrainingRecord] = []
    initial_loss: Optional[float] = None
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(idx))
        total = 0.0
        for start in range(0, len(perm), cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            tape = Tape()
            pred, _ = model.forward(tape, idx[batch])
            loss = tape.mse_loss(pred, z[batch])
            optimizer.zero_grad()
            tape.backward(loss)
            optimizer.step()
            total += loss.item() * len(batch)
        epoch_loss = total / len(idx)

        if not math.isfinite(epoch_loss):
            raise NumericalError(
                f"{objective} training loss became non-finite at epoch {epoch}",
                tip="lower the learning rate",
            )
        if initial_loss is None:
            initial_loss = epoch_loss
        elif initial_loss > 0 and epoch_loss > cfg.divergence_factor * initial_loss:
            raise NumericalError(
                f"{objective} training diverged at epoch {epoch}"
                f" (loss {epoch_loss:.4g} vs initial {initial_loss:.4g})",
                tip="lower the learning rate",
            )

        heldout = None
        if validation and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            predicted, _ = model.predict([point for point, _ in validation])
            heldout = mape(predicted, [value for _, value in validation])
        log.append(TrainingRecord(epoch, epoch_loss, heldout))
        if progress is not None and task is not None:
            progress.update(task, advance=1, status=f"loss {epoch_loss:.4g}")

    return model, log


# ===========
# > Metrics
# =========


def _pair(pred: Sequence[float], truth: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"{p.size} predictions vs {t.size} true values")
    if p.size == 0:
        raise ValueError("no values to compare")
    return p, t


def mape(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Mean absolute percentage error, in percent."""
    p, t = _pair(pred, truth)
    if (t == 0).any():
        raise ValueError("MAPE is undefined when a true value is zero")
    return float(np.mean(np.abs(p - t) / np.abs(t)) * 100)


def mse(pred: Sequence[float], truth: Sequence[float]) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean((p - t) ** 2))


def r2_score(pred: Sequence[float], truth: Sequence[float]) -> float:
    p, t = _pair(pred, truth)
    ss_tot = float(((t - t.mean()) ** 2).sum())
    ss_res = float(((t - p) ** 2).sum())
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else 0.0
    return 1.0 - ss_res / ss_tot


@dataclass
class SurrogatePredictor:
    """The three per-objective models behind one predict() call."""

    models: Dict[str, SurrogateModel]

    def __post_init__(self) -> None:
        missing = [o for o in OBJECTIVES if o not in self.models]
        if missing:
            raise InputError(f"missing predictors for {', '.join(missing)}")
        orders = {m.order.order for m in self.models.values()}
        if len(orders) != 1:
            raise CompatibilityError("the three predictors use different serialization orders")

    @property
    def order(self) -> SerializationOrder:
        return self.models["ipc"].order

    @property
    def variant(self) -> str:
        return self.models["ipc"].cfg.variant

    def predict(
        self, points: Sequence[DesignPoint]
    ) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        """Objectives (n, 3) in (ipc, power, area) order plus per-objective heatmaps."""
        columns, heatmaps = [], {}
        for objective in OBJECTIVES:
            values, heatmaps[objective] = self.models[objective].predict(points)
            columns.append(values)
        if not points:
            return np.empty((0, 3)), heatmaps
        return np.stack(columns, axis=1), heatmaps

    def save(self, directory: Path) -> Dict[str, Path]:
        paths = {}
        for objective, model in self.models.items():
            paths[objective] = directory / f"{objective}.ckpt"
            model.save(paths[objective])
        return paths

    @classmethod
    def load(cls, directory: Path, space: DesignSpace) -> "SurrogatePredictor":
        if not directory.is_dir():
            raise InputError(f"checkpoint directory '{directory}' doesn't exist")
        models = {o: SurrogateModel.load(directory / f"{o}.ckpt", space) for o in OBJECTIVES}
        return cls(models)
