from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudrl.env import (
    APPROVED,
    DECLINED,
    NOT_REACHED,
    EpisodeError,
    IssuerConfig,
    make_state,
    make_states,
    run_episode,
)
from fraudrl.rewards import PrecisionReward
from fraudrl.synthdata import Dataset, GenConfig, TransactionRecord, generate_dataset


def rec(pre=(0.9, 0.7), post=(0.8, 0.6), label=0, wgt=10.0, i=0):
    return TransactionRecord(i, pre, post, label, wgt, 0)


def const_policy(p):
    return lambda states, seed: np.full(len(states), p)


def test_make_state_examples():
    t = rec()
    assert make_state(t, 0).tolist() == [0.9, 0.7, 0, 0, 1, 0]
    assert make_state(t, 1).tolist() == [0.9, 0.7, 0.8, 0.6, 0, 1]
    zero = rec(pre=(0.0, 0.0), post=(0.0, 0.0))
    assert make_state(zero, 0).tolist() == [0, 0, 0, 0, 1, 0]


def test_masked_layout_and_bad_stage():
    t = rec()
    assert make_state(t, 0, layout="masked").tolist() == [0.9, 0.7, 0, 0]
    with pytest.raises(ValueError):
        make_state(t, 2)


def test_always_block():
    d = generate_dataset(GenConfig(n_transactions=50))
    traj = run_episode(d, const_policy(1.0), PrecisionReward(), 0)
    assert np.all(traj.actions[0] == 1)
    assert np.all(traj.alive[1] == 0)
    assert np.all(traj.rewards[1] == 0)
    assert np.all(traj.issuer_outcome == NOT_REACHED)


def test_never_block_reaches_step_one():
    d = generate_dataset(GenConfig(n_transactions=50))
    traj = run_episode(d, const_policy(0.0), PrecisionReward(), 0)
    assert np.all(traj.alive[1] == 1)
    assert np.all(traj.issuer_outcome == APPROVED)
    assert np.all(traj.rewards == 0)


def test_hand_traced_threshold_policy():
    # block at step 0 when pre0 > 0.5, at step 1 when post0 > 0.5
    records = [
        rec(pre=(0.9, 0.0), post=(0.9, 0.0), label=1, wgt=100.0, i=0),  # blocked at 0
        rec(pre=(0.1, 0.0), post=(0.9, 0.0), label=1, wgt=20.0, i=1),  # blocked at 1
        rec(pre=(0.1, 0.0), post=(0.7, 0.0), label=0, wgt=50.0, i=2),  # blocked at 1 (false positive)
        rec(pre=(0.2, 0.0), post=(0.1, 0.0), label=0, wgt=30.0, i=3),  # passes
    ]
    d = Dataset.from_records(records)

    def policy(states, seed):
        stage1 = states[:, 5] == 1
        score = np.where(stage1, states[:, 2], states[:, 0])
        return (score > 0.5).astype(float)

    traj = run_episode(d, policy, PrecisionReward((0.5, 0.7)), 3)
    assert traj.actions[0].tolist() == [1, 0, 0, 0]
    assert traj.alive[1].tolist() == [0, 1, 1, 1]
    assert traj.actions[1].tolist() == [0, 1, 1, 0]
    np.testing.assert_allclose(traj.rewards[0], [50.0, 0, 0, 0])
    np.testing.assert_allclose(traj.rewards[1], [0, 0.3 * 20, -0.7 * 50, 0])
    assert traj.terminal_states() == {"blocked0": 1, "declined": 0, "blocked1": 2, "passed": 1}
    np.testing.assert_allclose(traj.returns()[0], [50.0, 6.0, -35.0, 0.0])


def test_issuer_declines():
    d = generate_dataset(GenConfig(n_transactions=400, fraud_rate=0.5))
    issuer = IssuerConfig(p_approve_legit=1.0, p_approve_fraud=0.0, enabled=True)
    traj = run_episode(d, const_policy(0.0), PrecisionReward(), 1, issuer=issuer)
    fraud = d.label == 1
    assert np.all(traj.issuer_outcome[fraud] == DECLINED)
    assert np.all(traj.alive[1][fraud] == 0)
    assert np.all(traj.alive[1][~fraud] == 1)


def test_reward_error_becomes_episode_error():
    d = generate_dataset(GenConfig(n_transactions=10))

    def broken(step, action, target, wgt):
        raise ZeroDivisionError("division by zero")

    with pytest.raises(EpisodeError, match="division by zero"):
        run_episode(d, const_policy(0.5), broken, 0)


def test_bad_reward_shape():
    d = generate_dataset(GenConfig(n_transactions=10))
    with pytest.raises(EpisodeError):
        run_episode(d, const_policy(0.5), lambda s, a, t, w: np.ones(3), 0)
    with pytest.raises(EpisodeError):
        run_episode(d, const_policy(0.5), lambda s, a, t, w: a + np.inf, 0)


def test_trajectory_is_read_only():
    d = generate_dataset(GenConfig(n_transactions=10))
    traj = run_episode(d, const_policy(0.5), PrecisionReward(), 0)
    with pytest.raises(ValueError):
        traj.actions[0, 0] = 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.floats(0, 1), st.floats(0, 1), st.booleans())
def test_conservation_and_locality(seed, p_block, p_fraud_ok, issuer_on):
    d = generate_dataset(GenConfig(n_transactions=64, fraud_rate=0.3, seed=seed % 1000))
    issuer = IssuerConfig(0.9, p_fraud_ok, enabled=issuer_on)
    a = run_episode(d, const_policy(p_block), PrecisionReward(), seed, issuer=issuer)
    b = run_episode(d, const_policy(p_block), PrecisionReward(), seed, issuer=issuer)
    assert sum(a.terminal_states().values()) == len(d)
    assert np.all(a.rewards[1][a.alive[1] == 0] == 0)
    assert np.all(a.actions[1][a.alive[1] == 0] == 0)
    for name in ("actions", "alive", "rewards", "issuer_outcome"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_vectorised_states_match_single():
    d = generate_dataset(GenConfig(n_transactions=5))
    for stage in (0, 1):
        many = make_states(d.pre, d.post, stage)
        for i, t in enumerate(d):
            np.testing.assert_array_equal(many[i], make_state(t, stage))
