"""Training tests: the optimizer against a scalar oracle, schedule, loop behavior."""

import dataclasses
import math

import numpy as np
import pytest

import kolnet.training as training_mod
from kolnet.data import RngStream
from kolnet.multilevel import MultilevelConfig, build_multilevel, count_params
from kolnet.training import (
    ConfigError,
    DivergenceError,
    MetricsLog,
    MetricsRow,
    OptState,
    TrainConfig,
    adamw_step,
    desk_config,
    init_opt_state,
    lr_schedule,
    table_config,
    train,
    validate_config,
)


def make_state(shapes):
    return OptState(m={k: np.zeros(s) for k, s in shapes.items()},
                    v={k: np.zeros(s) for k, s in shapes.items()})


def test_adamw_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    state = make_state({"w": 2})
    adamw_step(params, {"w": np.zeros(2)}, state, lr=0.01, weight_decay=0.0)
    assert np.array_equal(params["w"], [1.0, -2.0])
    # nonzero moments decay by their beta factors under a zero gradient
    state.m["w"][:] = 1.0
    state.v["w"][:] = 1.0
    adamw_step(params, {"w": np.zeros(2)}, state, lr=0.0 + 1e-300, weight_decay=0.0)
    assert state.m["w"][0] == pytest.approx(0.9)
    assert state.v["w"][0] == pytest.approx(0.999)


def test_adamw_first_step_formula():
    g = 0.37
    params = {"w": np.array([5.0])}
    state = make_state({"w": 1})
    lr, eps = 1e-3, 1e-8
    adamw_step(params, {"w": np.array([g])}, state, lr=lr, weight_decay=0.0, eps=eps)
    want = 5.0 - lr * g / (abs(g) + eps)
    assert params["w"][0] == pytest.approx(want, rel=1e-12)


def test_adamw_decoupled_decay_alone():
    params = {"w": np.array([3.0])}
    state = make_state({"w": 1})
    adamw_step(params, {"w": np.zeros(1)}, state, lr=0.001, weight_decay=0.01)
    assert params["w"][0] == pytest.approx(3.0 * (1 - 1e-5), rel=1e-14)


def scalar_adam_oracle(grad_fn, theta, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook Adam on one scalar, written independently of the kernel."""
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        theta -= lr * mhat / (math.sqrt(vhat) + eps)
    return theta


def test_adamw_with_zero_decay_is_plain_adam():
    grad = lambda w: 2.0 * (w - 1.5)  # quadratic centered at 1.5
    oracle = scalar_adam_oracle(grad, 8.0, lr=0.05, steps=5000)
    params = {"w": np.array([8.0])}
    state = make_state({"w": 1})
    for _ in range(5000):
        adamw_step(params, {"w": np.array([grad(params["w"][0])])}, state,
                   lr=0.05, weight_decay=0.0)
    assert abs(params["w"][0] - 1.5) < 1e-6
    assert params["w"][0] == pytest.approx(oracle, abs=1e-9)


def test_adamw_shape_mismatch():
    params = {"w": np.zeros(3)}
    state = make_state({"w": 3})
    with pytest.raises(ValueError):
        adamw_step(params, {"w": np.zeros(2)}, state, lr=0.1, weight_decay=0.0)


def test_lr_schedule_published_black_scholes_steps():
    cfg = table_config("black_scholes")
    assert lr_schedule(0, cfg) == 1e-2
    assert lr_schedule(3999, cfg) == 1e-2
    assert lr_schedule(4000, cfg) == pytest.approx(2.5e-3)
    assert lr_schedule(8000, cfg) == pytest.approx(6.25e-4)


def test_lr_schedule_floor():
    cfg = dataclasses.replace(table_config("black_scholes"), min_lr=1e-4)
    assert lr_schedule(10 ** 7, cfg) == 1e-4
    with pytest.raises(ValueError):
        lr_schedule(-1, cfg)


def test_validate_config_errors_and_warnings():
    with pytest.raises(ConfigError):
        validate_config(dataclasses.replace(table_config("black_scholes"), decay=1.5))
    with pytest.raises(ConfigError):
        validate_config(dataclasses.replace(table_config("black_scholes"), min_lr=1.0))
    with pytest.raises(ConfigError):
        validate_config(dataclasses.replace(table_config("black_scholes"),
                                            norm="batch", batch_size=1))
    with pytest.raises(ConfigError):
        validate_config(TrainConfig(problem="nope"))
    notes = validate_config(dataclasses.replace(table_config("black_scholes"),
                                                batch_size=4096, q=7))
    assert len(notes) == 2  # searched-range advisories only


def test_table_configs_match_published_setup():
    bs = table_config("black_scholes")
    assert (bs.batch_size, bs.init_lr, bs.decay, bs.patience) == (65536, 1e-2, 0.25, 4000)
    assert (bs.levels, bs.q, bs.chi, bs.norm) == (4, 5, 1, "batch")
    basket = table_config("basket_put")
    assert (basket.batch_size, basket.init_lr, basket.em_steps) == (131072, 1e-3, 25)
    assert basket.eval_batches == 1 and basket.mc_samples == 1 << 20
    hp = table_config("heat_paraboloid")
    assert (hp.q, hp.decay, hp.weight_decay) == (4, 0.4, 0.01)


def _tiny_config(**over):
    base = dict(problem="black_scholes", levels=2, q=2, chi=1, norm="batch",
                batch_size=128, steps=30, init_lr=1e-2, min_lr=1e-8, decay=0.25,
                patience=4000, seed=0, eval_every=15, eval_batches=1,
                eval_batch_size=128)
    base.update(over)
    return TrainConfig(**base)


def test_train_is_deterministic():
    net1, log1 = train(_tiny_config())
    net2, log2 = train(_tiny_config())
    for r1, r2 in zip(log1.rows, log2.rows):
        assert r1.step == r2.step
        assert r1.train_mse == r2.train_mse  # bitwise
        assert r1.lr == r2.lr
        assert r1.l1_error == r2.l1_error
    for k in net1.params:
        assert np.array_equal(net1.params[k], net2.params[k])
    for k in net1.running:
        assert np.array_equal(net1.running[k], net2.running[k])


def test_train_learns_constant_targets(monkeypatch):
    from kolnet.data import TargetBatch

    monkeypatch.setattr(training_mod, "make_targets",
                        lambda spec, batch, s: TargetBatch(y=np.ones(len(batch))))
    cfg = _tiny_config(steps=500, batch_size=512, eval_every=10 ** 9,
                       eval_batch_size=512, norm="none", init_lr=3e-2,
                       patience=250, weight_decay=0.0)
    net, log = train(cfg)
    assert log.rows[-1].train_mse < 1e-4


def test_train_records_eval_rows_and_final():
    cfg = _tiny_config(steps=30, eval_every=10)
    _, log = train(cfg)
    eval_steps = [r.step for r in log.rows if r.l1_error is not None]
    assert eval_steps == [10, 20, 30]
    assert len(log.rows) == 30
    assert log.final_l1() == log.rows[-1].l1_error


def test_train_divergence_guard():
    cfg = _tiny_config(init_lr=1e9, norm="none", steps=200, eval_every=10 ** 9)
    with pytest.raises(DivergenceError):
        train(cfg)


def test_metrics_csv_roundtrip(tmp_path):
    log = MetricsLog(rows=[
        MetricsRow(step=1, time_s=0.5, train_mse=2.25, lr=1e-2, l1_error=None),
        MetricsRow(step=2, time_s=1.0, train_mse=1.0 / 3.0, lr=1e-2, l1_error=0.125),
    ])
    path = tmp_path / "metrics.csv"
    log.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,time_s,train_mse,lr,l1_error"
    assert lines[1].endswith(",")  # blank l1 on non-evaluation rows
    back = MetricsLog.from_csv(path)
    assert back.rows == log.rows


def test_training_loss_trend_all_problems():
    """Smoothed training loss is non-increasing early on (3-of-4-seed majority)."""
    window = 200
    for problem in ("black_scholes", "basket_put", "heat_paraboloid", "heat_gaussian"):
        cfg = dataclasses.replace(
            desk_config(problem), batch_size=128, steps=3 * window,
            eval_every=10 ** 9, eval_batch_size=128, eval_batches=1)
        passes = 0
        for seed in range(4):
            _, log = train(dataclasses.replace(cfg, seed=seed))
            mses = np.array([r.train_mse for r in log.rows])
            w1, w2, w3 = (mses[:window].mean(), mses[window:2 * window].mean(),
                          mses[2 * window:].mean())
            if w1 >= w2 * 0.999 and w2 >= w3 * 0.999:
                passes += 1
        assert passes >= 3, problem


def test_opt_state_shapes():
    cfg = MultilevelConfig(p=3, L=2, q=2, chi=1, norm="batch")
    net = build_multilevel(cfg, RngStream(0, 0))
    state = init_opt_state(net)
    assert set(state.m) == set(net.params)
    assert all(state.v[k].shape == net.params[k].shape for k in net.params)
    assert count_params(net) == sum(v.size for v in state.m.values())
