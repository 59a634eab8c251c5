"""Two-step block/pass decision process over a batch of transactions.

Step 0 is the Pre-auth checkpoint and step 1 the Post-auth checkpoint. An
optional issuer check sits between them and may decline a transaction that
passed step 0, removing it from the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .synthdata import Dataset, TransactionRecord

N_STEPS = 2
LAYOUTS = {"onehot": 6, "masked": 4}

# issuer outcome codes
NOT_REACHED = 0
APPROVED = 1
DECLINED = 2
OUTCOME_NAMES = {NOT_REACHED: "not_reached", APPROVED: "approved", DECLINED: "declined"}

RewardFn = Callable[[int, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
# (states, dropout_seed) -> block probabilities
PolicyFn = Callable[[np.ndarray, int], np.ndarray]


class EpisodeError(RuntimeError):
    """Reward evaluation failed inside an episode."""


@dataclass(frozen=True)
class IssuerConfig:
    p_approve_legit: float = 1.0
    p_approve_fraud: float = 1.0
    enabled: bool = False

    def __post_init__(self):
        for name in ("p_approve_legit", "p_approve_fraud"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class EnvConfig:
    issuer: IssuerConfig = IssuerConfig()
    layout: str = "onehot"

    def __post_init__(self):
        state_dim(self.layout)


def state_dim(layout: str = "onehot") -> int:
    try:
        return LAYOUTS[layout]
    except KeyError:
        raise ValueError(f"unknown state layout {layout!r}") from None


def make_states(pre: np.ndarray, post: np.ndarray, stage: int, layout: str = "onehot") -> np.ndarray:
    """Vectorised state construction; Post-auth scores are zeroed at stage 0."""
    if stage not in (0, 1):
        raise ValueError(f"stage must be 0 or 1, got {stage}")
    pre = np.asarray(pre, dtype=np.float64).reshape(-1, 2)
    post = np.asarray(post, dtype=np.float64).reshape(-1, 2)
    n = len(pre)
    out = np.zeros((n, state_dim(layout)))
    out[:, 0:2] = pre
    if stage == 1:
        out[:, 2:4] = post
    if layout == "onehot":
        out[:, 4 + stage] = 1.0
    return out


def make_state(t: TransactionRecord, stage: int, layout: str = "onehot") -> np.ndarray:
    return make_states(np.array([t.pre_scores]), np.array([t.post_scores]), stage, layout)[0]


@dataclass(frozen=True)
class TrajectoryBatch:
    """Realised two-step trajectories for one batch; arrays are read-only.

    Per-step arrays have a leading axis of length 2. ``dropout_seeds`` are the
    seeds the policy was called with, so the exact stochastic forward pass can
    be replayed when computing gradients.
    """

    states: np.ndarray  # (2, B, D)
    actions: np.ndarray  # (2, B) in {0, 1}
    log_probs: np.ndarray  # (2, B)
    alive: np.ndarray  # (2, B) in {0, 1}
    rewards: np.ndarray  # (2, B)
    target: np.ndarray  # (B,)
    wgt: np.ndarray  # (B,)
    issuer_outcome: np.ndarray  # (B,) outcome codes
    dropout_seeds: tuple[int, int]

    def __post_init__(self):
        for name in ("states", "actions", "log_probs", "alive", "rewards", "target", "wgt", "issuer_outcome"):
            getattr(self, name).setflags(write=False)

    @property
    def batch_size(self) -> int:
        return self.target.shape[0]

    def returns(self, gamma: float = 1.0) -> np.ndarray:
        """Reward-to-go per step, shape (2, B)."""
        g = np.empty_like(self.rewards)
        g[1] = self.rewards[1]
        g[0] = self.rewards[0] + gamma * g[1]
        return g

    def terminal_states(self) -> dict[str, int]:
        blocked0 = (self.actions[0] == 1)
        declined = self.issuer_outcome == DECLINED
        blocked1 = (self.alive[1] == 1) & (self.actions[1] == 1)
        passed = (self.alive[1] == 1) & (self.actions[1] == 0)
        return {
            "blocked0": int(blocked0.sum()),
            "declined": int(declined.sum()),
            "blocked1": int(blocked1.sum()),
            "passed": int(passed.sum()),
        }


def _bernoulli_log_prob(p: np.ndarray, a: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(a == 1, np.log(p), np.log1p(-p))


def _call_reward(reward_fn: RewardFn, step: int, action, target, wgt) -> np.ndarray:
    try:
        r = reward_fn(step, action, target, wgt)
    except Exception as exc:
        raise EpisodeError(f"reward evaluation failed at step {step}: {exc}") from exc
    r = np.asarray(r, dtype=np.float64)
    if r.ndim == 2 and r.shape[1] == 1:
        r = r[:, 0]
    if r.ndim == 0:
        r = np.full(len(action), float(r))
    if r.shape != (len(action),):
        raise EpisodeError(f"reward at step {step} has shape {r.shape}, expected ({len(action)},)")
    if not np.all(np.isfinite(r)):
        raise EpisodeError(f"reward at step {step} contains non-finite values")
    return r


def run_episode(
    batch: Dataset,
    policy: PolicyFn,
    reward_fn: RewardFn,
    rng_seed: int,
    issuer: IssuerConfig = IssuerConfig(),
    layout: str = "onehot",
) -> TrajectoryBatch:
    rng = np.random.default_rng(rng_seed)
    seeds = tuple(int(s) for s in rng.integers(0, 2**63 - 1, size=N_STEPS))
    n = len(batch)
    target = batch.label.astype(np.float64)
    wgt = batch.wgt.astype(np.float64)
    dim = state_dim(layout)

    states = np.zeros((N_STEPS, n, dim))
    actions = np.zeros((N_STEPS, n))
    log_probs = np.zeros((N_STEPS, n))
    alive = np.zeros((N_STEPS, n))
    rewards = np.zeros((N_STEPS, n))
    outcome = np.full(n, NOT_REACHED, dtype=np.int64)

    # step 0: every transaction is decided
    states[0] = make_states(batch.pre, batch.post, 0, layout)
    alive[0] = 1.0
    p0 = np.asarray(policy(states[0], seeds[0]), dtype=np.float64)
    a0 = (rng.random(n) < p0).astype(np.float64)
    actions[0] = a0
    log_probs[0] = _bernoulli_log_prob(p0, a0)
    if n:
        rewards[0] = _call_reward(reward_fn, 0, a0, target, wgt)

    # issuer check on step-0 passes
    passed0 = a0 == 0
    u_issuer = rng.random(n)
    if issuer.enabled:
        p_approve = np.where(target == 1, issuer.p_approve_fraud, issuer.p_approve_legit)
        approved = passed0 & (u_issuer < p_approve)
        outcome[passed0] = DECLINED
        outcome[approved] = APPROVED
    else:
        approved = passed0
        outcome[passed0] = APPROVED
    alive[1] = approved.astype(np.float64)

    # step 1: only surviving transactions act and are rewarded
    states[1] = make_states(batch.pre, batch.post, 1, layout)
    p1 = np.asarray(policy(states[1], seeds[1]), dtype=np.float64)
    u1 = rng.random(n)
    live = alive[1] == 1
    a1 = np.where(live, (u1 < p1).astype(np.float64), 0.0)
    actions[1] = a1
    log_probs[1] = np.where(live, _bernoulli_log_prob(p1, a1), 0.0)
    if live.any():
        rewards[1, live] = _call_reward(reward_fn, 1, a1[live], target[live], wgt[live])

    return TrajectoryBatch(
        states=states,
        actions=actions,
        log_probs=log_probs,
        alive=alive,
        rewards=rewards,
        target=target,
        wgt=wgt,
        issuer_outcome=outcome,
        dropout_seeds=seeds,
    )
