from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudrl.env import TrajectoryBatch, make_states, run_episode
from fraudrl.policy import (
    AdamState,
    TrainConfig,
    TrainingError,
    adam_step,
    dump_params,
    forward,
    gelu,
    gelu_grad,
    init_params,
    load_params,
    policy_fn,
    read_params,
    reinforce_grad,
    reinforce_loss,
    reinforce_update,
    save_params,
    train_agent,
    zero_params,
)
from fraudrl.rewards import PrecisionReward
from fraudrl.synthdata import GenConfig, generate_dataset


def tiny_traj(n=4, seed=1, dropout=0.1):
    d = generate_dataset(GenConfig(n_transactions=200, fraud_rate=0.4, seed=seed)).take(np.arange(n))
    params = init_params(6, dropout_rate=dropout, seed=seed)
    return params, run_episode(d, policy_fn(params), PrecisionReward(), seed)


def fd_grad(params, traj, cfg, h=1e-5):
    flat = params.flat()
    out = np.zeros_like(flat)
    for i in range(len(flat)):
        e = np.zeros_like(flat)
        e[i] = h
        out[i] = (reinforce_loss(params.with_flat(flat + e), traj, cfg)
                  - reinforce_loss(params.with_flat(flat - e), traj, cfg)) / (2 * h)
    return out


def analytic(params, traj, cfg):
    return np.concatenate([g.ravel() for g in reinforce_grad(params, traj, cfg)])


def max_rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def test_shapes():
    p = init_params()
    assert p.shapes == [(6, 8), (8, 32), (32, 8), (8, 1)]


def test_zero_params_give_half():
    states = make_states(np.random.rand(5, 2), np.random.rand(5, 2), 1)
    np.testing.assert_array_equal(forward(zero_params(), states), 0.5)


def test_hand_computed_forward():
    p = init_params(seed=3, dropout_rate=0.0)
    x = np.array([0.9, 0.7, 0.8, 0.6, 0.0, 1.0])
    h = x
    for w, b in zip(p.weights[:-1], p.biases[:-1]):
        z = h @ w + b
        h = np.array([0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in z])
    logit = float(h @ p.weights[-1][:, 0] + p.biases[-1][0])
    expected = 1 / (1 + math.exp(-logit))
    assert forward(p, x[None, :])[0] == pytest.approx(expected, abs=1e-12)


def test_gelu_grad_matches_finite_difference():
    x = np.linspace(-4, 4, 41)
    h = 1e-6
    np.testing.assert_allclose(gelu_grad(x), (gelu(x + h) - gelu(x - h)) / (2 * h), atol=1e-8)


def test_eval_mode_is_deterministic_and_train_mode_uses_dropout():
    p = init_params(seed=0)
    s = make_states(np.random.rand(64, 2), np.random.rand(64, 2), 0)
    np.testing.assert_array_equal(forward(p, s), forward(p, s))
    a = forward(p, s, train_mode=True, seed=1)
    b = forward(p, s, train_mode=True, seed=1)
    c = forward(p, s, train_mode=True, seed=2)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_probabilities_stay_open_interval(vals):
    p = zero_params()
    p.biases[-1][:] = vals[0]
    s = np.zeros((len(vals), 6))
    s[:, 0] = vals
    out = forward(p, s)
    assert np.all((out > 0) & (out < 1))


def test_gradient_matches_finite_differences():
    params, traj = tiny_traj()
    cfg = TrainConfig()
    assert max_rel_err(analytic(params, traj, cfg), fd_grad(params, traj, cfg)) <= 1e-4


def test_gradient_with_entropy_and_baseline():
    params, traj = tiny_traj(seed=5)
    cfg = TrainConfig(entropy_coef=0.3, baseline=True)
    assert max_rel_err(analytic(params, traj, cfg), fd_grad(params, traj, cfg)) <= 1e-4


def test_single_transaction_score_function():
    # one transaction, step 0 only, reward +1, p(block) = 0.5, action = block:
    # d loss / d logit = -(1 - p) * G = -0.5
    params = zero_params(dropout_rate=0.0)
    s = np.zeros((2, 1, 6))
    s[0, 0, 4] = 1.0
    s[1, 0, 5] = 1.0
    traj = TrajectoryBatch(
        states=s, actions=np.array([[1.0], [0.0]]), log_probs=np.log([[0.5], [1.0]]),
        alive=np.array([[1.0], [0.0]]), rewards=np.array([[1.0], [0.0]]),
        target=np.array([1.0]), wgt=np.array([1.0]), issuer_outcome=np.array([0]), dropout_seeds=(0, 0),
    )
    grads = reinforce_grad(params, traj, TrainConfig())
    assert grads[-1][0] == pytest.approx(-0.5)
    fd = fd_grad(params, traj, TrainConfig())
    np.testing.assert_allclose(analytic(params, traj, TrainConfig()), fd, atol=1e-8)


def test_dead_step_contributes_nothing():
    params, traj = tiny_traj(seed=2)
    cfg = TrainConfig()
    kw = {k: getattr(traj, k).copy() for k in ("states", "actions", "log_probs", "alive", "rewards", "target",
                                                  "wgt", "issuer_outcome")}
    dead = kw["alive"][1] == 0
    kw["states"][1][dead] = 123.0  # garbage that must not matter
    other = TrajectoryBatch(dropout_seeds=traj.dropout_seeds, **kw)
    for a, b in zip(reinforce_grad(params, traj, cfg), reinforce_grad(params, other, cfg)):
        np.testing.assert_allclose(a, b)


def test_adam_first_step_moves_by_lr():
    params, traj = tiny_traj()
    cfg = TrainConfig()
    grads = reinforce_grad(params, traj, cfg)
    new, state = adam_step(params, grads, AdamState.zeros_like(params), cfg)
    step = np.abs(new.flat() - params.flat())
    nz = np.abs(np.concatenate([g.ravel() for g in grads])) > 1e-6
    np.testing.assert_allclose(step[nz], cfg.learning_rate, rtol=1e-3)
    assert state.t == 1


def test_non_finite_gradient_raises():
    params, traj = tiny_traj()
    params.weights[0][0, 0] = np.nan
    with pytest.raises(TrainingError):
        reinforce_update(params, traj, TrainConfig())


def test_zero_episodes_is_noop():
    d = generate_dataset(GenConfig(n_transactions=50))
    start = init_params(seed=42)
    params, stats = train_agent(None, d, PrecisionReward(), TrainConfig(n_episodes=0), params=start)
    np.testing.assert_array_equal(params.flat(), start.flat())
    assert stats.n_episodes == 0 and stats.final_blocks is None


def test_training_is_deterministic():
    d = generate_dataset(GenConfig(n_transactions=3000))
    cfg = TrainConfig(n_episodes=2, batch_size=256, entropy_coef=20.0)
    a, sa = train_agent(None, d, PrecisionReward(), cfg)
    b, sb = train_agent(None, d, PrecisionReward(), cfg)
    np.testing.assert_array_equal(a.flat(), b.flat())
    assert sa.to_dict() == sb.to_dict()
    assert len(sa.mean_reward) == len(sa.block_counts0) == 2


def test_training_error_carries_episode():
    d = generate_dataset(GenConfig(n_transactions=100))

    def explode(step, action, target, wgt):
        raise ZeroDivisionError("division by zero")

    with pytest.raises(TrainingError) as exc:
        train_agent(None, d, explode, TrainConfig(n_episodes=1))
    assert exc.value.episode == 0
    assert "division by zero" in str(exc.value)


def test_params_roundtrip(tmp_path):
    p = init_params(seed=9, dropout_rate=0.2)
    blob = dump_params(p)
    assert blob[:4] == b"TRSK"
    q = load_params(blob)
    np.testing.assert_array_equal(p.flat(), q.flat())
    assert q.dropout_rate == 0.2 and q.init_seed == 9
    save_params(p, tmp_path / "p.policy")
    assert dump_params(read_params(tmp_path / "p.policy")) == blob


def test_load_rejects_garbage():
    with pytest.raises(ValueError):
        load_params(b"nope")
    blob = dump_params(init_params())
    with pytest.raises(ValueError):
        load_params(blob[:-8])
