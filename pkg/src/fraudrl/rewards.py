"""Reference reward functions.

Every reward follows the same call signature::

    reward(current_step, action, target, wgt) -> per-transaction vector

``action`` is 1 for block and 0 for pass, ``target`` is the fraud label and
``wgt`` the dollar value. ``listing1_reward`` and ``listing2_reward`` are
transcriptions of two LLM-written rewards (a zero-shot and a few-shot
design) and double as golden references for the reward DSL.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RewardContext:
    current_step: int
    action: np.ndarray
    target: np.ndarray
    wgt: np.ndarray

    def __post_init__(self):
        if self.current_step not in (0, 1):
            raise ValueError("current_step must be 0 or 1")
        n = len(self.action)
        if len(self.target) != n or len(self.wgt) != n:
            raise ValueError("action, target and wgt must have equal lengths")

    def args(self):
        return (
            self.current_step,
            np.asarray(self.action, dtype=np.float64),
            np.asarray(self.target, dtype=np.float64),
            np.asarray(self.wgt, dtype=np.float64),
        )


@dataclass(frozen=True)
class PrecisionRewardParams:
    """Per-stage precision floors; the later stage must be stricter."""

    alpha: tuple[float, float] = (0.5, 0.7)

    def __post_init__(self):
        a0, a1 = self.alpha
        if not (0.0 < a0 < 1.0 and 0.0 < a1 < 1.0):
            raise ValueError(f"alpha values must lie in (0, 1), got {self.alpha}")
        if not a0 < a1:
            raise ValueError(f"alpha must increase across stages, got {self.alpha}")


def precision_reward(ctx: RewardContext, p: PrecisionRewardParams = PrecisionRewardParams()) -> np.ndarray:
    """Blocked fraud earns ``(1 - alpha) * wgt``, blocked legit costs ``alpha * wgt``."""
    step, action, target, wgt = ctx.args()
    alpha = p.alpha[step]
    blocked = action == 1
    tp = blocked & (target == 1)
    fp = blocked & (target == 0)
    return (1.0 - alpha) * tp * wgt - alpha * fp * wgt


class PrecisionReward:
    """Callable wrapper with the plain reward signature."""

    def __init__(self, alpha=(0.5, 0.7)):
        self.params = PrecisionRewardParams(tuple(alpha))

    def __call__(self, current_step, action, target, wgt):
        return precision_reward(RewardContext(current_step, action, target, wgt), self.params)

    def __repr__(self):
        return f"PrecisionReward(alpha={self.params.alpha})"


def listing1_reward(current_step, action, target, wgt) -> np.ndarray:
    action = np.asarray(action, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    wgt = np.asarray(wgt, dtype=np.float64)
    reward = action * target * wgt
    if current_step == 0:
        reward = reward * 1.2
    elif current_step == 1:
        reward = reward * 0.9
    fn = (1 - action) * target * wgt
    reward = reward - fn * 0.5
    fp = action * (1 - target) * wgt
    reward = reward - fp * 0.1
    low_weight_penalty = action * (wgt < 50)
    reward = reward - low_weight_penalty * 0.005
    return reward / wgt


def listing2_reward(current_step, action, target, wgt) -> np.ndarray:
    action = np.asarray(action, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    wgt = np.asarray(wgt, dtype=np.float64)
    gamma_positive = 1.15
    gamma_negative = 0.9
    alpha = 1.2
    tp = (action == 1) & (target == 1)
    fp = (action == 1) & (target == 0)
    fn = (action == 0) & (target == 1)
    if current_step == 0:
        return gamma_positive * (tp * wgt - fp * (alpha * 0.005) * wgt - 0.15 * fn * wgt)
    if current_step == 1:
        return gamma_negative * (tp * wgt - fp * (alpha * 0.002) * wgt - 0.10 * fn * wgt)
    return np.zeros_like(wgt)


BUILTIN_REWARDS = {
    "precision": PrecisionReward(),
    "listing1": listing1_reward,
    "listing2": listing2_reward,
}


# The same rewards written in the reward DSL. Tests check them against the
# numpy versions above; the CLI uses them as few-shot examples.
PRECISION_DSL = """\
def get_reward(current_step, action, target, wgt):
    let tp = (action == 1) & (target == 1)
    let fp = (action == 1) & (target == 0)
    if current_step == 0:
        return (1 - 0.5) * tp * wgt - 0.5 * fp * wgt
    return (1 - 0.7) * tp * wgt - 0.7 * fp * wgt
"""

LISTING1_DSL = """\
def get_reward(current_step, action, target, wgt):
    let base = action * target * wgt
    let fn = (1 - action) * target * wgt
    let fp = action * (1 - target) * wgt
    let low_weight_penalty = action * (wgt < 50)
    if current_step == 0:
        return (base * 1.2 - fn * 0.5 - fp * 0.1 - low_weight_penalty * 0.005) / wgt
    elif current_step == 1:
        return (base * 0.9 - fn * 0.5 - fp * 0.1 - low_weight_penalty * 0.005) / wgt
    return (base - fn * 0.5 - fp * 0.1 - low_weight_penalty * 0.005) / wgt
"""

LISTING2_DSL = """\
def get_reward(current_step, action, target, wgt):
    let gamma_positive = 1.15
    let gamma_negative = 0.9
    let alpha = 1.2
    let tp = (action == 1) & (target == 1)
    let fp = (action == 1) & (target == 0)
    let fn = (action == 0) & (target == 1)
    if current_step == 0:
        return gamma_positive * (tp * wgt - fp * (alpha * 0.005) * wgt - 0.15 * fn * wgt)
    elif current_step == 1:
        return gamma_negative * (tp * wgt - fp * (alpha * 0.002) * wgt - 0.10 * fn * wgt)
    return 0 * wgt
"""

BUILTIN_DSL = {"precision": PRECISION_DSL, "listing1": LISTING1_DSL, "listing2": LISTING2_DSL}
