"""Block/pass policy network and its REINFORCE trainer.

The network maps a state vector through three GELU hidden layers
(8, 32, 8 units, dropout after each) to a single sigmoid unit giving
P(block). Gradients are written out by hand and checked against finite
differences in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf, expit

from .env import EnvConfig, EpisodeError, RewardFn, TrajectoryBatch, run_episode, state_dim
from .synthdata import Dataset

HIDDEN = (8, 32, 8)
MAGIC = b"TRSK"
FORMAT_VERSION = 1
PROB_EPS = 1e-15
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class TrainingError(RuntimeError):
    def __init__(self, message: str, episode: int | None = None):
        prefix = f"episode {episode}: " if episode is not None else ""
        super().__init__(prefix + message)
        self.episode = episode


@dataclass
class PolicyParams:
    weights: list  # each (in, out)
    biases: list  # each (out,)
    dropout_rate: float = 0.1
    init_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must have the same number of layers")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not match")
            if k and w.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k}: input dim {w.shape[0]} != previous output dim")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases],
            self.dropout_rate, self.init_seed,
        )

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "PolicyParams":
        new = self.copy()
        pos = 0
        for a in new.arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        return new

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(input_dim: int = 6, hidden=HIDDEN, dropout_rate: float = 0.1, seed: int = 0) -> PolicyParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return PolicyParams(weights, biases, dropout_rate, seed)


def zero_params(input_dim: int = 6, hidden=HIDDEN, dropout_rate: float = 0.1) -> PolicyParams:
    dims = [input_dim, *hidden, 1]
    return PolicyParams(
        [np.zeros((a, b)) for a, b in zip(dims, dims[1:])],
        [np.zeros(b) for b in dims[1:]],
        dropout_rate,
    )


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _dropout_masks(params: PolicyParams, n: int, seed) -> list:
    rate = params.dropout_rate
    if rate == 0.0:
        return [None] * (len(params.weights) - 1)
    rng = np.random.default_rng(seed)
    keep = 1.0 - rate
    return [(rng.random((n, w.shape[1])) < keep) / keep for w in params.weights[:-1]]


def _forward(params: PolicyParams, x: np.ndarray, train_mode: bool, seed):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise ValueError(f"state dimension {x.shape[1]} does not match policy input {params.input_dim}")
    masks = _dropout_masks(params, len(x), seed) if train_mode else [None] * (len(params.weights) - 1)
    inputs, pre_acts = [], []
    h = x
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        if k == len(params.weights) - 1:
            logits = z[:, 0]
            break
        pre_acts.append(z)
        h = gelu(z)
        if masks[k] is not None:
            h = h * masks[k]
    return logits, (inputs, pre_acts, masks)


def _backward(params: PolicyParams, cache, dlogits: np.ndarray) -> list[np.ndarray]:
    """Gradients (w0, b0, w1, b1, ...) given dLoss/dlogit per row."""
    inputs, pre_acts, masks = cache
    grads = [None] * (2 * len(params.weights))
    delta = dlogits[:, None]
    for k in range(len(params.weights) - 1, -1, -1):
        grads[2 * k] = inputs[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k == 0:
            break
        delta = delta @ params.weights[k].T
        if masks[k - 1] is not None:
            delta = delta * masks[k - 1]
        delta = delta * gelu_grad(pre_acts[k - 1])
    return grads


def forward_logits(params: PolicyParams, states, train_mode: bool = False, seed=None) -> np.ndarray:
    return _forward(params, states, train_mode, seed)[0]


def forward(params: PolicyParams, states, train_mode: bool = False, seed=None, clip: bool = True) -> np.ndarray:
    """Block probabilities.

    With ``clip`` they are kept inside (PROB_EPS, 1 - PROB_EPS) so sampled
    actions always have a finite log-probability. Scoring for evaluation
    passes ``clip=False`` so that ranking survives in saturated tails.
    """
    probs = expit(forward_logits(params, states, train_mode, seed))
    return np.clip(probs, PROB_EPS, 1.0 - PROB_EPS) if clip else probs


def policy_fn(params: PolicyParams, train_mode: bool = True):
    """Adapter to the environment's ``(states, seed) -> probs`` interface."""
    return lambda states, seed: forward(params, states, train_mode=train_mode, seed=seed)


@dataclass
class TrainConfig:
    n_episodes: int = 200
    batch_size: int = 1024
    learning_rate: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    gamma: float = 1.0
    entropy_coef: float = 0.0
    baseline: bool = False
    dropout_rate: float = 0.1
    seed: int = 42

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.n_episodes < 0:
            raise ValueError("n_episodes must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be >= 0")
        if self.gamma != 1.0:
            raise ValueError("only gamma = 1.0 is supported")
        self.adam_betas = tuple(self.adam_betas)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params: PolicyParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def _advantages(traj: TrajectoryBatch, cfg: TrainConfig) -> np.ndarray:
    g = traj.returns(cfg.gamma)
    if cfg.baseline:
        g = g.copy()
        for t in range(2):
            live = traj.alive[t] == 1
            if live.any():
                g[t, live] -= g[t, live].mean()
    return g


def reinforce_loss(params: PolicyParams, traj: TrajectoryBatch, cfg: TrainConfig) -> float:
    """-(1/B) sum_t sum_i alive * log pi(a|s) * G_t, minus the entropy bonus."""
    adv = _advantages(traj, cfg)
    total = 0.0
    for t in range(2):
        z = forward_logits(params, traj.states[t], train_mode=True, seed=traj.dropout_seeds[t])
        a = traj.actions[t]
        logp = np.where(a == 1, _log_sigmoid(z), _log_sigmoid(-z))
        total -= np.sum(traj.alive[t] * logp * adv[t])
        if cfg.entropy_coef:
            p = expit(z)
            ent = -(p * _log_sigmoid(z) + (1 - p) * _log_sigmoid(-z))
            total -= cfg.entropy_coef * np.sum(traj.alive[t] * ent)
    return total / traj.batch_size


def reinforce_grad(params: PolicyParams, traj: TrajectoryBatch, cfg: TrainConfig) -> list[np.ndarray]:
    adv = _advantages(traj, cfg)
    n = traj.batch_size
    grads = [np.zeros_like(a) for a in params.arrays()]
    for t in range(2):
        alive = traj.alive[t]
        if not alive.any():
            continue
        z, cache = _forward(params, traj.states[t], True, traj.dropout_seeds[t])
        p = expit(z)
        dz = -alive * adv[t] * (traj.actions[t] - p) / n
        if cfg.entropy_coef:
            # dH/dz = -z p (1 - p)
            dz = dz + cfg.entropy_coef * alive * z * p * (1 - p) / n
        for acc, g in zip(grads, _backward(params, cache, dz)):
            acc += g
    return grads


def adam_step(params: PolicyParams, grads, state: AdamState, cfg: TrainConfig) -> tuple[PolicyParams, AdamState]:
    b1, b2 = cfg.adam_betas
    t = state.t + 1
    new = params.copy()
    m_new, v_new = [], []
    for a, g, m, v in zip(new.arrays(), grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        a -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        m_new.append(m)
        v_new.append(v)
    return new, AdamState(m_new, v_new, t)


def reinforce_update(params: PolicyParams, traj: TrajectoryBatch, cfg: TrainConfig, opt_state: AdamState | None = None):
    """One REINFORCE step. Returns ``(params, opt_state, stats)``."""
    if opt_state is None:
        opt_state = AdamState.zeros_like(params)
    grads = reinforce_grad(params, traj, cfg)
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingError("non-finite policy gradient")
    new_params, new_state = adam_step(params, grads, opt_state, cfg)
    stats = {
        "grad_norm": float(np.sqrt(sum(float(np.sum(g * g)) for g in grads))),
        "mean_return": float(traj.returns(cfg.gamma)[0].mean()) if traj.batch_size else 0.0,
    }
    return new_params, new_state, stats


@dataclass
class TrainStats:
    mean_reward: list = field(default_factory=list)
    block_counts0: list = field(default_factory=list)
    block_counts1: list = field(default_factory=list)

    @property
    def n_episodes(self) -> int:
        return len(self.mean_reward)

    @property
    def initial_reward(self) -> float | None:
        return self.mean_reward[0] if self.mean_reward else None

    @property
    def final_reward(self) -> float | None:
        return self.mean_reward[-1] if self.mean_reward else None

    @property
    def final_blocks(self) -> tuple[int, int] | None:
        if not self.block_counts0:
            return None
        return self.block_counts0[-1], self.block_counts1[-1]

    def to_dict(self) -> dict:
        return {
            "mean_reward": list(self.mean_reward),
            "block_counts0": list(self.block_counts0),
            "block_counts1": list(self.block_counts1),
            "initial_reward": self.initial_reward,
            "final_reward": self.final_reward,
        }


def train_agent(
    env: EnvConfig | None,
    dataset: Dataset,
    reward_fn: RewardFn,
    cfg: TrainConfig,
    params: PolicyParams | None = None,
) -> tuple[PolicyParams, TrainStats]:
    """Run ``cfg.n_episodes`` shuffled passes over ``dataset``.

    Each episode walks the whole dataset in minibatches of ``cfg.batch_size``;
    every minibatch is one ``run_episode`` plus one REINFORCE/Adam step.
    """
    env = env or EnvConfig()
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(state_dim(env.layout), dropout_rate=cfg.dropout_rate, seed=cfg.seed)
    opt = AdamState.zeros_like(params)
    stats = TrainStats()
    n = len(dataset)
    for ep in range(cfg.n_episodes):
        order = rng.permutation(n)
        total_reward = 0.0
        blocks0 = blocks1 = 0
        for start in range(0, n, cfg.batch_size):
            batch = dataset.take(np.sort(order[start:start + cfg.batch_size]))
            ep_seed = int(rng.integers(0, 2**63 - 1))
            try:
                traj = run_episode(batch, policy_fn(params), reward_fn, ep_seed, env.issuer, env.layout)
                params, opt, _ = reinforce_update(params, traj, cfg, opt)
            except EpisodeError as exc:
                raise TrainingError(str(exc), episode=ep) from exc
            except TrainingError as exc:
                raise TrainingError(str(exc), episode=ep) from exc
            total_reward += float(traj.rewards.sum())
            blocks0 += int(traj.actions[0].sum())
            blocks1 += int((traj.alive[1] * traj.actions[1]).sum())
        if not params.is_finite():
            raise TrainingError("policy parameters became non-finite", episode=ep)
        stats.mean_reward.append(total_reward / n)
        stats.block_counts0.append(blocks0)
        stats.block_counts1.append(blocks1)
    return params, stats


def dump_params(params: PolicyParams) -> bytes:
    """``TRSK`` | u16 version | u16 n_layers | f64 dropout | i64 init_seed |
    (u32 in, u32 out) per layer | row-major f64 weights then biases per layer.
    All little-endian."""
    out = [MAGIC, struct.pack("<HH", FORMAT_VERSION, len(params.weights))]
    out.append(struct.pack("<dq", params.dropout_rate, params.init_seed))
    for w in params.weights:
        out.append(struct.pack("<II", *w.shape))
    for w, b in zip(params.weights, params.biases):
        out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(out)


def load_params(blob: bytes) -> PolicyParams:
    if blob[:4] != MAGIC:
        raise ValueError("not a policy file (bad magic)")
    version, n_layers = struct.unpack_from("<HH", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported policy file version {version}")
    dropout, init_seed = struct.unpack_from("<dq", blob, 8)
    pos = 24
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<II", blob, pos))
        pos += 8
    weights, biases = [], []
    for fan_in, fan_out in shapes:
        nw = fan_in * fan_out
        weights.append(np.frombuffer(blob, dtype="<f8", count=nw, offset=pos).reshape(fan_in, fan_out).astype(np.float64))
        pos += 8 * nw
        biases.append(np.frombuffer(blob, dtype="<f8", count=fan_out, offset=pos).astype(np.float64))
        pos += 8 * fan_out
    if pos != len(blob):
        raise ValueError("policy file has trailing or missing bytes")
    return PolicyParams(weights, biases, dropout, init_seed)


def save_params(params: PolicyParams, path: str | Path) -> None:
    Path(path).write_bytes(dump_params(params))


def read_params(path: str | Path) -> PolicyParams:
    return load_params(Path(path).read_bytes())
