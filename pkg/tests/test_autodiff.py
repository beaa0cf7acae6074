import io
import json
import zipfile
from pathlib import Path
from typing import Callable, Final, List, Tuple

import numpy as np
import pytest

from attention_dse.design_space import (
    DesignPoint,
    DesignSpace,
    ParameterSpec,
    parse_design_space,
    random_sample,
)
from attention_dse.microarch_graph import SerializationOrder, load_graphs, serialize_space
from attention_dse.surrogate import (
    SurrogateConfig,
    SurrogateModel,
    SurrogatePredictor,
    effective_window,
    mape,
    mse,
    r2_score,
    train,
)
from attention_dse.tensor import (
    SGD,
    Adam,
    Tape,
    Tensor,
    attention_mask,
    load_checkpoint,
    parameter,
    save_checkpoint,
    sgd_step,
)
from attention_dse.utils import (
    CompatibilityError,
    InputError,
    NumericalError,
    make_rich_progress,
)

DATA_DIR: Final = Path(__file__).parent / "data"
EPS: Final = 1e-6
Builder = Callable[..., Tensor]


def rename_setup() -> Tuple[DesignSpace, SerializationOrder]:
    space = parse_design_space((DATA_DIR / "rename_space.json").read_text("utf-8"))
    graphs, _ = load_graphs((DATA_DIR / "rename_graph.json").read_text("utf-8"))
    return space, serialize_space(space, graphs)


def tiny_config(**overrides: object) -> SurrogateConfig:
    settings = dict(embed_dim=8, depth=1, heads=2, mlp_hidden=12, epochs=3, batch_size=16)
    settings.update(overrides)
    return SurrogateConfig(**settings)  # type: ignore[arg-type]


def linear_space(length: int) -> Tuple[DesignSpace, SerializationOrder]:
    params = tuple(ParameterSpec(f"p{i}", "Issue", (1, 2)) for i in range(length))
    return DesignSpace(params), SerializationOrder(tuple(range(length)), 5, (0,) * length)


def numeric_gradient(loss: Callable[[], float], t: Tensor, index: Tuple[int, ...]) -> float:
    original = t.data[index]
    t.data[index] = original + EPS
    plus = loss()
    t.data[index] = original - EPS
    minus = loss()
    t.data[index] = original
    return (plus - minus) / (2 * EPS)


def check_gradients(build: Builder, *arrays: np.ndarray, tol: float = 1e-5) -> None:
    """Compare backprop against central differences of mse(build(...), random target)."""
    tensors = [parameter(a.copy(), f"x{i}") for i, a in enumerate(arrays)]
    tape = Tape()
    out = build(tape, *tensors)
    target = np.random.default_rng(99).normal(size=out.shape)
    tape.backward(tape.mse_loss(out, target))

    def loss() -> float:
        replay = Tape(record=False)
        return replay.mse_loss(build(replay, *tensors), target).item()

    for t in tensors:
        numeric = np.zeros_like(t.data)
        for index in np.ndindex(*t.shape):
            numeric[index] = numeric_gradient(loss, t, index)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        scale = max(float(np.abs(numeric).max()), float(np.abs(analytic).max()), 1e-8)
        error = float(np.abs(analytic - numeric).max()) / scale
        assert error < tol, f"{t.name}: relative error {error:.3g}"


def r_squared(x: np.ndarray, y: np.ndarray, degree: int) -> float:
    fitted = np.polyval(np.polyfit(x, y, degree), x)
    ss_res = float(((y - fitted) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return 1.0 - ss_res / ss_tot


RNG: Final = np.random.default_rng(7)
MASK: Final = attention_mask(5, 3)


def normal(*shapes: Tuple[int, ...]) -> Tuple[np.ndarray, ...]:
    return tuple(RNG.normal(size=shape) for shape in shapes)


OP_CASES: Final = {
    "matmul": (lambda t, a, b: t.matmul(a, b), *normal((2, 3, 4), (4, 5))),
    "matmul-2d": (lambda t, a, b: t.matmul(a, b), *normal((3, 4), (4, 2))),
    "add": (lambda t, a, b: t.add(a, b), *normal((2, 3, 4), (4,))),
    "scale": (lambda t, a: t.scale(a, -1.7), *normal((3, 2))),
    "gather": (lambda t, a: t.gather(a, np.array([0, 2, 2, 4])), *normal((5, 3))),
    "concat": (lambda t, a, b: t.concat([a, b], axis=1), *normal((2, 1, 3), (2, 2, 3))),
    "broadcast": (lambda t, a: t.broadcast_to(a, (2, 1, 3)), *normal((3,))),
    "select": (lambda t, a: t.select(a, 0, axis=1), *normal((2, 4, 3))),
    "reshape": (lambda t, a: t.reshape(a, (6, 4)), *normal((2, 3, 4))),
    "swapaxes": (lambda t, a: t.swapaxes(a, 1, 2), *normal((2, 3, 4))),
    "softmax": (lambda t, a: t.softmax_rows(a), *normal((3, 4))),
    "softmax-masked": (lambda t, a: t.softmax_rows(a, MASK), *normal((2, 5, 5))),
    "layer-norm": (lambda t, a: t.layer_norm(a), *normal((3, 6))),
    "gelu": (lambda t, a: t.activation(a, "gelu"), *normal((3, 4))),
    "silu": (lambda t, a: t.activation(a, "silu"), *normal((3, 4))),
    "mse": (lambda t, a: t.mse_loss(a, np.linspace(-1, 1, 6)), *normal((6,))),
    "masked-attention": (
        lambda t, q, k, v: t.masked_attention(q, k, v, MASK)[0],
        *normal((2, 2, 5, 3), (2, 2, 5, 3), (2, 2, 5, 3)),
    ),
    "windowed-attention": (
        lambda t, q, k, v: t.windowed_attention(q, k, v, 3)[0],
        *normal((2, 2, 7, 3), (2, 2, 7, 3), (2, 2, 7, 3)),
    ),
}


class TestTape:
    @pytest.mark.parametrize("case", list(OP_CASES))
    def test_op_gradients(self, case: str) -> None:
        build, *arrays = OP_CASES[case]
        if case == "mse":
            # Reduce the scalar loss once more so the check's own target applies.
            check_gradients(lambda t, a: t.reshape(build(t, a), (1,)), *arrays)
        else:
            check_gradients(build, *arrays)

    def test_windowed_matches_masked(self) -> None:
        rng = np.random.default_rng(0)
        for _ in range(100):
            length = int(rng.integers(2, 41)) + 1
            window = int(rng.choice([3, 5, 7, 9, 11, 13, 15]))
            q, k, v = (Tensor(rng.normal(size=(2, 2, length, 4))) for _ in range(3))
            tape = Tape(record=False)
            out_w, weights_w = tape.windowed_attention(q, k, v, window)
            out_m, weights_m = tape.masked_attention(q, k, v, attention_mask(length, window))
            assert np.abs(out_w.data - out_m.data).max() <= 1e-12
            assert np.abs(weights_w - weights_m).max() <= 1e-12

    def test_windowed_gradients_match_masked(self) -> None:
        rng = np.random.default_rng(1)
        for length, window in ((9, 3), (12, 5), (20, 7)):
            arrays = [rng.normal(size=(1, 2, length, 4)) for _ in range(3)]
            target = rng.normal(size=(1, 2, length, 4))
            grads: List[List[np.ndarray]] = []
            for windowed in (True, False):
                q, k, v = (parameter(a.copy(), "qkv") for a in arrays)
                tape = Tape()
                if windowed:
                    out, _ = tape.windowed_attention(q, k, v, window)
                else:
                    out, _ = tape.masked_attention(q, k, v, attention_mask(length, window))
                tape.backward(tape.mse_loss(out, target))
                grads.append([t.grad for t in (q, k, v)])  # type: ignore[misc]
            for windowed_grad, masked_grad in zip(*grads):
                assert np.abs(windowed_grad - masked_grad).max() <= 1e-10

    def test_attention_flops(self) -> None:
        lengths = np.array([16, 32, 64, 128])
        windowed, full = [], []
        for n in lengths:
            q = Tensor(np.zeros((1, 1, n + 1, 8)))
            tape = Tape(record=False)
            tape.windowed_attention(q, q, q, 5)
            windowed.append(tape.attention_flops)
            tape = Tape(record=False)
            tape.masked_attention(q, q, q)
            full.append(tape.attention_flops)
        assert r_squared(lengths, np.array(windowed, dtype=float), 1) > 0.99
        assert r_squared(lengths, np.array(full, dtype=float), 2) > 0.99
        assert full[0] == 2 * 17 * 17 * 8
        assert windowed[-1] < full[-1] / 10

    def test_attention_mask(self) -> None:
        mask = attention_mask(6, 3)
        assert mask[0].all() and mask[:, 0].all()
        assert mask[2, 3] and mask[3, 2] and mask[4, 4]
        assert not mask[1, 3] and not mask[5, 2]

    def test_tape_errors(self) -> None:
        tape = Tape()
        a = parameter(np.ones((2, 3)), "a")
        with pytest.raises(ValueError):
            a.item()
        with pytest.raises(ValueError):
            tape.backward(a)
        with pytest.raises(ValueError):
            tape.matmul(a, parameter(np.ones((2, 3)), "b"))
        with pytest.raises(ValueError):
            tape.gather(a, np.array([2]))
        with pytest.raises(ValueError):
            tape.mse_loss(a, np.zeros(3))
        with pytest.raises(ValueError):
            tape.windowed_attention(*(Tensor(np.zeros((1, 1, 6, 2))) for _ in range(3)), 4)
        with pytest.raises(NumericalError):
            tape.softmax_rows(Tensor(np.array([[np.nan, 1.0]])))

    def test_no_recording(self) -> None:
        tape = Tape(record=False)
        a = parameter(np.ones((2, 3)), "a")
        out = tape.layer_norm(tape.scale(a, 2.0))
        assert len(tape) == 0 and not out.requires_grad

        tape = Tape()
        constant = Tensor(np.ones(3))
        assert not tape.add(constant, constant).requires_grad
        assert len(tape) == 0
        tape.add(a, constant)
        assert len(tape) == 1


class TestOptimizers:
    def test_sgd_with_momentum_converges(self) -> None:
        p = parameter(np.array([3.0, -2.0]), "p")
        optimizer = SGD([p], 0.1, momentum=0.5)
        for _ in range(100):
            optimizer.zero_grad()
            p.grad = 2 * p.data
            optimizer.step()
        assert np.abs(p.data).max() < 1e-3

    def test_adam_decreases_a_quadratic(self) -> None:
        p = parameter(np.array([3.0, -2.0]), "p")
        optimizer = Adam([p], 0.05)
        for _ in range(300):
            optimizer.zero_grad()
            p.grad = 2 * p.data
            optimizer.step()
        assert np.abs(p.data).max() < 0.3

    def test_errors(self) -> None:
        p = parameter(np.zeros(2), "p")
        p.grad = np.array([np.nan, 0.0])
        with pytest.raises(NumericalError):
            sgd_step([p], 0.1)
        with pytest.raises(ValueError):
            sgd_step([p], 0.0)
        with pytest.raises(ValueError):
            Adam([p], -1.0)


class TestCheckpoints:
    def test_round_trip_and_reproducible_bytes(self, tmp_path: Path) -> None:
        tensors = {"b": np.arange(6.0).reshape(2, 3), "a": np.array([0.5])}
        save_checkpoint(tmp_path / "one.ckpt", tensors, {"objective": "ipc"})
        save_checkpoint(tmp_path / "two.ckpt", tensors, {"objective": "ipc"})
        assert (tmp_path / "one.ckpt").read_bytes() == (tmp_path / "two.ckpt").read_bytes()
        loaded, meta = load_checkpoint(tmp_path / "one.ckpt")
        assert meta == {"objective": "ipc", "data-format": "1.0"}
        assert set(loaded) == {"a", "b"}
        assert np.array_equal(loaded["b"], tensors["b"])

    def test_errors(self, tmp_path: Path) -> None:
        with pytest.raises(InputError):
            load_checkpoint(tmp_path / "missing.ckpt")
        garbage = tmp_path / "garbage.ckpt"
        garbage.write_bytes(b"not a zip archive")
        with pytest.raises(CompatibilityError):
            load_checkpoint(garbage)

        future = tmp_path / "future.ckpt"
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w") as zfile:
            zfile.writestr("metadata.json", json.dumps({"data-format": "2.0"}))
        future.write_bytes(buffer.getvalue())
        with pytest.raises(CompatibilityError, match="unsupported checkpoint format"):
            load_checkpoint(future)


class TestSurrogate:
    def test_config_validation(self) -> None:
        with pytest.raises(InputError):
            SurrogateConfig(embed_dim=32, heads=3)
        with pytest.raises(InputError):
            SurrogateConfig(window_size=4)
        with pytest.raises(InputError):
            SurrogateConfig(heatmap_head=2)
        with pytest.raises(InputError):
            SurrogateConfig(lr=0.0)
        with pytest.raises(InputError):
            SurrogateConfig.from_dict({"colour": 1})
        with pytest.raises(InputError, match="unknown architecture"):
            SurrogateConfig(architecture="rnn")  # type: ignore[arg-type]
        assert SurrogateConfig.from_dict({"epochs": 5}).epochs == 5
        assert SurrogateConfig().variant == "attention"
        assert SurrogateConfig(full_attention=True).variant == "full-attention"
        assert SurrogateConfig(architecture="mlp").variant == "mlp"

    def test_effective_window(self) -> None:
        assert effective_window(5, 4) == 3
        assert effective_window(5, 10) == 5
        assert effective_window(9, 7) == 7
        assert effective_window(3, 2) == 3

    def test_forward_shapes_and_heatmaps(self) -> None:
        space, order = rename_setup()
        model = SurrogateModel(space, order, tiny_config())
        points = random_sample(space, 6, seed=3)
        values, heatmaps = model.predict(points)
        assert values.shape == (6,) and heatmaps.shape == (6, 5, 5)
        assert np.allclose(heatmaps.sum(axis=-1), 1.0)
        # Window 3: parameter positions two apart never attend to each other.
        assert (heatmaps[:, 1, 3] == 0).all() and (heatmaps[:, 4, 2] == 0).all()
        assert (heatmaps[:, 3, 0] > 0).all() and (heatmaps[:, 0, 4] > 0).all()

        empty_values, empty_maps = model.predict([])
        assert empty_values.shape == (0,) and empty_maps.shape == (0, 5, 5)
        with pytest.raises(InputError):
            model.predict([DesignPoint((0, 0, 9, 0))])

    @pytest.mark.parametrize(
        "case, overrides",
        [
            ("windowed_gelu", {}),
            ("full_silu", {"full_attention": True, "activation": "silu"}),
        ],
    )
    def test_forward_matches_golden(self, case: str, overrides: dict) -> None:
        golden = json.loads((DATA_DIR / "golden.json").read_text("utf-8"))["forward"]
        space = DesignSpace(
            (
                ParameterSpec("a", "Fetch", (1, 2)),
                ParameterSpec("b", "Decode", (1, 2, 3)),
                ParameterSpec("c", "Issue", (1, 2)),
                ParameterSpec("d", "Execute", (1, 2, 3)),
            )
        )
        order = SerializationOrder((2, 0, 3, 1), 3, (0, 0, 0, 0))
        cfg = SurrogateConfig(embed_dim=4, depth=1, heads=2, mlp_hidden=3, **overrides)
        model = SurrogateModel(space, order, cfg)
        for n, t in enumerate(model.params.values()):
            t.data = 0.4 * np.sin(0.9 * np.arange(t.size) + n).reshape(t.shape)

        values, heatmaps = model.predict([DesignPoint(tuple(p)) for p in golden["points"]])
        expected = golden[case]
        assert values.tolist() == pytest.approx(expected["predictions"], rel=1e-9)
        assert heatmaps[0, 0].tolist() == pytest.approx(expected["token_row"], rel=1e-9)

    def test_heatmap_head_selection(self) -> None:
        space, order = rename_setup()
        points = random_sample(space, 4, seed=5)
        averaged = SurrogateModel(space, order, tiny_config()).predict(points)[1]
        heads = [
            SurrogateModel(space, order, tiny_config(heatmap_head=h)).predict(points)[1]
            for h in (0, 1)
        ]
        assert np.allclose(averaged, (heads[0] + heads[1]) / 2, atol=1e-14)

    def test_untrained_model_sees_indices_only(self) -> None:
        space, order = rename_setup()
        relabeled = DesignSpace(
            tuple(
                ParameterSpec(p.name, p.stage, tuple(f"c{i}" for i in range(p.cardinality)))
                for p in space
            )
        )
        points = random_sample(space, 8, seed=1)
        first = SurrogateModel(space, order, tiny_config()).predict(points)[0]
        again = SurrogateModel(space, order, tiny_config()).predict(points)[0]
        other = SurrogateModel(relabeled, order, tiny_config()).predict(points)[0]
        assert np.array_equal(first, again)
        assert np.array_equal(first, other)

    @pytest.mark.parametrize("full_attention", [False, True])
    def test_end_to_end_gradients(self, full_attention: bool) -> None:
        space, order = rename_setup()
        model = SurrogateModel(space, order, tiny_config(full_attention=full_attention))
        points = random_sample(space, 6, seed=2)
        idx = np.array([p.values for p in points])
        target = np.random.default_rng(4).normal(size=6)

        tape = Tape()
        pred, _ = model.forward(tape, idx)
        tape.backward(tape.mse_loss(pred, target))

        def loss() -> float:
            replay = Tape(record=False)
            return replay.mse_loss(model.forward(replay, idx)[0], target).item()

        rng = np.random.default_rng(6)
        for name, t in model.params.items():
            assert t.grad is not None, f"{name} received no gradient"
            flat = rng.choice(t.size, size=min(20, t.size), replace=False)
            for f in flat:
                index = np.unravel_index(int(f), t.shape)
                numeric = numeric_gradient(loss, t, index)
                analytic = float(t.grad[index])
                scale = max(abs(numeric), abs(analytic), 1e-4)
                assert abs(numeric - analytic) / scale < 1e-4, f"{name}{index}"

    def test_model_flops_scale_linearly(self) -> None:
        lengths = np.array([16, 32, 64, 128])
        counts = {False: [], True: []}  # type: ignore[var-annotated]
        for full in (False, True):
            for n in lengths:
                space, order = linear_space(int(n))
                cfg = tiny_config(window_size=5, full_attention=full)
                model = SurrogateModel(space, order, cfg)
                tape = Tape(record=False)
                model.forward(tape, np.zeros((1, int(n)), dtype=np.int64))
                counts[full].append(tape.attention_flops)
        assert r_squared(lengths, np.array(counts[False], dtype=float), 1) > 0.99
        assert r_squared(lengths, np.array(counts[True], dtype=float), 2) > 0.99
        assert counts[False][-1] < counts[True][-1]

    def test_training_reduces_loss_and_is_deterministic(self) -> None:
        space, order = rename_setup()
        points = random_sample(space, 48, seed=8)
        labels = [(p, 1.0 + p.values[0] + 0.5 * p.values[1]) for p in points]
        cfg = tiny_config(epochs=40, lr=1e-2)
        model, log = train(space, order, labels, cfg, validation=labels[:8])
        again, _ = train(space, order, labels, cfg, validation=labels[:8])

        assert [r.epoch for r in log] == list(range(1, 41))
        assert log[-1].loss < 0.5 * log[0].loss
        assert log[9].heldout_mape is not None and log[8].heldout_mape is None
        for name, t in model.params.items():
            assert np.array_equal(t.data, again.params[name].data), name

    def test_training_progress(self) -> None:
        space, order = rename_setup()
        labels = [(p, float(p.values[0])) for p in random_sample(space, 20, seed=9)]
        progress = make_rich_progress()
        _, log = train(space, order, labels, tiny_config(epochs=2), progress=progress)
        (task,) = progress.tasks
        assert task.completed == 2
        assert task.fields == {"unit": "epochs", "status": f"loss {log[-1].loss:.4g}"}

    def test_constant_labels(self) -> None:
        space, order = rename_setup()
        points = random_sample(space, 20, seed=9)
        model, log = train(space, order, [(p, 2.5) for p in points], tiny_config(epochs=2))
        predicted, _ = model.predict(random_sample(space, 10, seed=10))
        assert np.abs(predicted - 2.5).max() < 1e-3

    def test_training_errors(self) -> None:
        space, order = rename_setup()
        points = random_sample(space, 20, seed=11)
        with pytest.raises(InputError):
            train(space, order, [(points[0], 1.0)], tiny_config())
        with pytest.raises(InputError):
            train(space, order, [(points[0], 1.0), (points[1], float("nan"))], tiny_config())

        labels = [(p, float(sum(p.values))) for p in points]
        reckless = tiny_config(optimizer="sgd", lr=1e6, momentum=0.0, batch_size=64, epochs=5)
        with pytest.raises(NumericalError):
            train(space, order, labels, reckless)

    def test_save_load(self, tmp_path: Path) -> None:
        space, order = rename_setup()
        points = random_sample(space, 24, seed=12)
        labels = [(p, 1.0 + p.values[2]) for p in points]
        model, _ = train(space, order, labels, tiny_config())
        model.save(tmp_path / "ipc.ckpt")
        model.save(tmp_path / "again.ckpt")
        assert (tmp_path / "ipc.ckpt").read_bytes() == (tmp_path / "again.ckpt").read_bytes()

        loaded = SurrogateModel.load(tmp_path / "ipc.ckpt", space)
        assert loaded.order == model.order and loaded.cfg == model.cfg
        assert np.array_equal(loaded.predict(points)[0], model.predict(points)[0])

        other = DesignSpace((ParameterSpec("F", "Rename", (1, 2)),))
        with pytest.raises(CompatibilityError):
            SurrogateModel.load(tmp_path / "ipc.ckpt", other)

    def test_mlp_baseline(self) -> None:
        space, order = rename_setup()
        model = SurrogateModel(space, order, tiny_config(architecture="mlp", depth=2))
        assert not any(name.startswith(("embed", "block", "final")) for name in model.params)
        points = random_sample(space, 6, seed=3)
        idx = np.array([p.values for p in points])
        encoded = model.one_hot(idx)
        assert encoded.shape == (6, sum(space.cardinalities))
        assert (encoded.sum(axis=1) == len(space)).all()

        values, heatmaps = model.predict(points)
        assert values.shape == (6,) and heatmaps.shape == (6, 5, 5)
        assert np.allclose(heatmaps, 0.2)

        target = np.random.default_rng(4).normal(size=6)
        tape = Tape()
        pred, _ = model.forward(tape, idx)
        tape.backward(tape.mse_loss(pred, target))

        def loss() -> float:
            replay = Tape(record=False)
            return replay.mse_loss(model.forward(replay, idx)[0], target).item()

        for name, t in model.params.items():
            assert t.grad is not None, f"{name} received no gradient"
            index = np.unravel_index(int(np.argmax(np.abs(t.grad))), t.shape)
            numeric = numeric_gradient(loss, t, index)
            analytic = float(t.grad[index])
            scale = max(abs(numeric), abs(analytic), 1e-4)
            assert abs(numeric - analytic) / scale < 1e-4, f"{name}{index}"

    def test_mlp_training_and_save_load(self, tmp_path: Path) -> None:
        space, order = rename_setup()
        points = random_sample(space, 48, seed=8)
        labels = [(p, 1.0 + p.values[0] + 0.5 * p.values[1]) for p in points]
        cfg = tiny_config(architecture="mlp", epochs=40, lr=1e-2)
        model, log = train(space, order, labels, cfg)
        assert log[-1].loss < 0.5 * log[0].loss

        model.save(tmp_path / "ipc.ckpt")
        loaded = SurrogateModel.load(tmp_path / "ipc.ckpt", space)
        assert loaded.cfg.architecture == "mlp" and set(loaded.params) == set(model.params)
        assert np.array_equal(loaded.predict(points)[0], model.predict(points)[0])

    def test_predictor_bundle(self, tmp_path: Path) -> None:
        space, order = rename_setup()
        points = random_sample(space, 16, seed=13)
        models = {}
        for objective, column in (("ipc", 0), ("power", 1), ("area", 2)):
            labels = [(p, 1.0 + p.values[column]) for p in points]
            models[objective], _ = train(
                space, order, labels, tiny_config(), objective=objective
            )
        predictor = SurrogatePredictor(models)
        values, heatmaps = predictor.predict(points[:5])
        assert values.shape == (5, 3)
        assert set(heatmaps) == {"ipc", "power", "area"}
        assert predictor.predict([])[0].shape == (0, 3)

        predictor.save(tmp_path)
        loaded = SurrogatePredictor.load(tmp_path, space)
        assert np.array_equal(loaded.predict(points[:5])[0], values)
        with pytest.raises(InputError):
            SurrogatePredictor({"ipc": models["ipc"]})
        with pytest.raises(InputError):
            SurrogatePredictor.load(tmp_path / "missing", space)


class TestMetrics:
    def test_mape(self) -> None:
        assert mape([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert mape([110.0], [100.0]) == pytest.approx(10.0)
        assert mape([90.0, 110.0], [100.0, 100.0]) == pytest.approx(10.0)
        with pytest.raises(ValueError):
            mape([1.0], [0.0])
        with pytest.raises(ValueError):
            mape([1.0, 2.0], [1.0])

    def test_mse_and_r2(self) -> None:
        truth = [1.0, 2.0, 3.0]
        assert mse([1.0, 2.0, 5.0], truth) == pytest.approx(4 / 3)
        assert r2_score(truth, truth) == 1.0
        assert r2_score([2.0, 2.0, 2.0], truth) == pytest.approx(0.0)
        assert r2_score([1.0, 1.0], [1.0, 1.0]) == 1.0
