import math

import numpy as np
import pytest

from gradcheck import gradient_check, richardson

from dlinoss.errors import ConfigError, NonFiniteError
from dlinoss.model import ModelConfig, forward, init_weights
from dlinoss.tasks import AddingTaskSpec, DecayTaskSpec, gen_adding, gen_decay
from dlinoss.train import (
    Adam,
    TrainRun,
    backward,
    cross_entropy_loss,
    evaluate,
    loss_and_grad,
    metric,
    mse_loss,
    train_loop,
)


class TestLosses:
    def test_mse_identical(self):
        v, g = mse_loss(np.ones((4, 3)), np.ones((4, 3)))
        assert v == 0.0 and np.all(g == 0)

    def test_rmse_is_sqrt_mse(self):
        rng = np.random.default_rng(0)
        p, t = rng.normal(size=(5, 7, 2)), rng.normal(size=(5, 7, 2))
        assert metric("rmse", p, t) == pytest.approx(math.sqrt(metric("mse", p, t)), rel=1e-15)

    def test_mse_mask(self):
        p = np.array([[[1.0], [5.0]]])
        t = np.zeros((1, 2, 1))
        v, g = mse_loss(p, t, np.array([[True, False]]))
        assert v == 1.0
        assert g[0, 1, 0] == 0.0

    def test_constant_half_on_adding(self):
        data = gen_adding(AddingTaskSpec(seq_len=10, n_train=20000, n_val=1, n_test=1, seed=0))
        y = data.train.targets
        # the best constant (the target mean, 1) and the 0.5 guess bracket the baseline value 1/6
        assert metric("mse", np.ones_like(y), y) == pytest.approx(1 / 6, rel=0.03)

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(4, 5))
        labels = rng.integers(0, 5, 4)
        v, g = cross_entropy_loss(logits, labels)
        p = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
        assert v == pytest.approx(-np.mean(np.log(p[np.arange(4), labels])), rel=1e-12)
        for i, j in [(0, 0), (2, 3)]:
            def f(x):
                z = logits.copy()
                z[i, j] = x
                return cross_entropy_loss(z, labels)[0]
            assert g[i, j] == pytest.approx(richardson(f, logits[i, j], 1e-3), rel=1e-8)

    def test_cross_entropy_class_mismatch(self):
        with pytest.raises(ConfigError):
            cross_entropy_loss(np.zeros((2, 3)), np.array([0, 3]))
        with pytest.raises(ConfigError):
            cross_entropy_loss(np.zeros((2, 3)), np.array([0, 1, 2]))

    def test_accuracy(self):
        p = np.array([[0.1, 0.9], [0.8, 0.2], [0.3, 0.7]])
        assert metric("accuracy", p, np.array([1, 0, 0])) == pytest.approx(2 / 3)

    def test_unknown_metric(self):
        with pytest.raises(ConfigError):
            metric("mae", np.zeros(2), np.zeros(2))


class TestBackward:
    def test_gradient_fidelity(self):
        worst, checked = gradient_check(10, seed=7)
        assert checked > 400
        assert worst <= 1e-5

    def test_single_oscillator_G(self):
        cfg = ModelConfig(input_dim=1, output_dim=1, hidden_dim=1, state_dim=1, num_blocks=1,
                          readout="per-step", mixing="none")
        rng = np.random.default_rng(3)
        w = init_weights(cfg, rng=rng)
        w["blocks.0.G_bar"] = np.array([0.7])
        w["blocks.0.A_bar"] = np.array([1.0])
        x, t = rng.normal(size=(1, 2, 1)), rng.normal(size=(1, 2, 1))
        _, grads = loss_and_grad(cfg, w, x, t)

        def f(val):
            w2 = dict(w)
            w2["blocks.0.G_bar"] = np.array([val])
            return loss_and_grad(cfg, w2, x, t)[0]

        fd = (f(0.7 + 1e-6) - f(0.7 - 1e-6)) / 2e-6
        assert abs(fd - grads["blocks.0.G_bar"][0]) <= 1e-5 * abs(fd)

    def test_zero_loss_gradient(self):
        cfg = ModelConfig(input_dim=2, output_dim=1, hidden_dim=3, state_dim=2, readout="per-step")
        w = init_weights(cfg, rng=np.random.default_rng(4))
        out, tape = forward(cfg, w, np.ones((2, 6, 2)), keep=True)
        grads = backward(cfg, w, tape, np.zeros_like(out))
        assert all(np.all(g == 0) for g in grads.values())
        assert list(grads) == list(w)

    def test_relu_boundary_subgradient(self):
        cfg = ModelConfig(input_dim=1, output_dim=1, hidden_dim=2, state_dim=3, readout="mean-pool")
        rng = np.random.default_rng(5)
        w = init_weights(cfg, rng=rng)
        w["blocks.0.G_bar"] = np.array([0.0, -0.5, 0.4])
        _, grads = loss_and_grad(cfg, w, rng.normal(size=(2, 5, 1)), rng.normal(size=(2, 1)))
        assert grads["blocks.0.G_bar"][0] == 0.0
        assert grads["blocks.0.G_bar"][1] == 0.0
        assert grads["blocks.0.G_bar"][2] != 0.0

    def test_clamped_A_gets_no_gradient(self):
        cfg = ModelConfig(input_dim=1, output_dim=1, hidden_dim=2, state_dim=2, variant="linoss-im",
                          readout="mean-pool")
        rng = np.random.default_rng(6)
        w = init_weights(cfg, rng=rng)
        w["blocks.0.A_bar"] = np.array([100.0, 1.0])
        _, grads = loss_and_grad(cfg, w, rng.normal(size=(2, 5, 1)), rng.normal(size=(2, 1)))
        assert grads["blocks.0.A_bar"][0] == 0.0
        assert grads["blocks.0.A_bar"][1] != 0.0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_gradient_names_parameter(self):
        cfg = ModelConfig(input_dim=1, output_dim=1, hidden_dim=2, state_dim=2, readout="per-step")
        w = init_weights(cfg, rng=np.random.default_rng(7))
        out, tape = forward(cfg, w, np.ones((1, 4, 1)), keep=True)
        g = np.zeros_like(out)
        g[0, 0, 0] = np.inf
        with pytest.raises(NonFiniteError) as info:
            backward(cfg, w, tape, g)
        # an infinite output gradient reaches every parameter; the first in order is reported
        assert info.value.param == "encoder.W"


class TestAdam:
    def test_convex_probe(self):
        rng = np.random.default_rng(8)
        Q = rng.normal(size=(6, 6))
        Q = Q @ Q.T + np.eye(6)
        x = {"x": rng.normal(size=6) * 3}
        for lr in (1e-3, 3e-3, 1e-2):
            params = {"x": x["x"].copy()}
            opt = Adam(lr=lr)
            losses = []
            for _ in range(400):
                v = params["x"]
                losses.append(0.5 * v @ Q @ v)
                opt.step(params, {"x": Q @ v})
            tail = np.array(losses[20:])
            assert np.all(np.diff(tail) <= 0)
            assert losses[-1] < losses[0]

    def test_first_step_size(self):
        params = {"w": np.array([1.0, -2.0])}
        Adam(lr=0.1).step(params, {"w": np.array([5.0, -0.01])})
        np.testing.assert_allclose(params["w"], [0.9, -1.9], rtol=1e-6)

    def test_moment_shapes(self):
        params = {"a": np.zeros((2, 3)), "b": np.zeros(4)}
        opt = Adam()
        opt.step(params, {"a": np.ones((2, 3)), "b": np.ones(4)})
        assert opt.m["a"].shape == (2, 3) and opt.v["b"].shape == (4,)
        assert opt.step_count == 1


def tiny_decay(seed=0):
    return gen_decay(DecayTaskSpec(seq_len=40, n_train=32, n_val=8, n_test=8, seed=seed))


def tiny_run(**kw):
    cfg = ModelConfig(input_dim=1, output_dim=1, hidden_dim=4, state_dim=4, num_blocks=1, readout="per-step")
    base = dict(task="decay", model=cfg, seed=1, max_steps=30, eval_every=10, batch_size=8, lr=1e-2)
    base.update(kw)
    return TrainRun(**base)


class TestTrainLoop:
    def test_zero_steps(self):
        data = tiny_decay()
        w0 = init_weights(tiny_run().model, rng=np.random.default_rng(0))
        run, best = train_loop(tiny_run(max_steps=0), data, w0)
        assert run.history == []
        assert all(np.array_equal(best[k], w0[k]) for k in w0)

    def test_deterministic(self):
        data = tiny_decay()
        a, wa = train_loop(tiny_run(), data)
        b, wb = train_loop(tiny_run(), data)
        assert a.history == b.history
        assert all(wa[k].tobytes() == wb[k].tobytes() for k in wa)

    def test_history_and_improvement(self):
        data = tiny_decay()
        run, best = train_loop(tiny_run(max_steps=100), data)
        steps = [h["step"] for h in run.history]
        assert steps == sorted(set(steps))
        assert run.status == "completed"
        assert run.best_val == min(h["val_metric"] for h in run.history)
        assert evaluate(run.model, best, data.val, "rmse") == pytest.approx(run.best_val, rel=1e-12)
        assert run.best_val < run.history[0]["val_metric"]
        assert "test_rmse" in run.final_metrics and len(run.wall_ms) == 100

    def test_threshold_stop(self):
        run, _ = train_loop(tiny_run(max_steps=50, threshold=1e6, stop_at_threshold=True), tiny_decay())
        assert run.steps_to_threshold == 10
        assert run.history[-1]["step"] == 10

    def test_patience(self):
        run, _ = train_loop(tiny_run(max_steps=1000, lr=0.0, patience=20), tiny_decay())
        assert [h["step"] for h in run.history] == [10, 20, 30]

    def test_divergence_recorded(self):
        data = tiny_decay()
        w = init_weights(tiny_run().model, rng=np.random.default_rng(0))
        w["decoder.W"][:] = np.nan
        run, _ = train_loop(tiny_run(), data, w)
        assert run.status == "diverged"
        assert run.final_metrics["diverged_at"] == 1

    def test_to_dict_fields(self):
        run, _ = train_loop(tiny_run(max_steps=10), tiny_decay())
        d = run.to_dict()
        for key in ("task", "variant", "config", "seed", "final_metrics", "steps_to_threshold"):
            assert key in d
