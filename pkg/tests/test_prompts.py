from __future__ import annotations

import os
from dataclasses import fields
from pathlib import Path

import pytest

from fraudrl.prompts import (
    MAX_INSTRUCTIONS,
    AllFailed,
    BestSoFar,
    BetterFound,
    Failure,
    MetricFeedback,
    PromptContext,
    PromptError,
    SuboptimalFound,
    build_feedback,
    build_initial,
    build_reflection,
    build_system,
    build_user,
    fmt_value,
)
from fraudrl.rewards import LISTING1_DSL, LISTING2_DSL, PRECISION_DSL

GOLDEN = Path(__file__).parent / "golden" / "prompts"
REGEN = bool(os.environ.get("FRAUDRL_REGEN_GOLDEN"))

FEEDBACK = MetricFeedback(
    episodes=150, blocks_step0=812, blocks_step1=97, initial_reward=-12.5, final_reward=3.25,
    recall_levels=[0.8, 0.85, 0.9], reached_recall=[0.8012, 0.8533, 0.9004],
    best_precision=[0.6965, 0.6422, 0.557], baseline_precision=[0.6657, 0.5879, 0.5127],
    bad_gmv_step0=9.0, bad_gmv_step1=1.0, total_gmv_step0=12.0, total_gmv_step1=2.5,
)


def prompt_set() -> dict[str, str]:
    zero = PromptContext(mode="zero_shot")
    few = PromptContext(mode="few_shot", example_rewards=[PRECISION_DSL, LISTING1_DSL],
                        best_so_far=BestSoFar(LISTING2_DSL, build_feedback(FEEDBACK)))
    reflected = zero.with_instruction("Keep step 0 rewards larger than step 1 rewards.")
    return {
        "prompt1_system_zero_shot.txt": build_system(zero),
        "prompt1_system_with_instructions.txt": build_system(reflected),
        "prompt2_3_user_zero_shot.txt": build_user(zero),
        "prompt2_3_user_few_shot.txt": build_user(few),
        "prompt4_feedback.txt": build_feedback(FEEDBACK),
        "prompt4_feedback_errors.txt": build_feedback(MetricFeedback(
            episodes=20, training_error="EvalError: division by zero at line 3, column 17",
            evaluation_error="UnreachableRecall: recall 0.9 cannot be reached")),
        "prompt5_reflect_better.txt": build_reflection(BetterFound(
            2, LISTING2_DSL, (0.8, 0.85, 0.9), (0.6657, 0.5879, 0.5127), build_feedback(FEEDBACK))),
        "prompt6_reflect_suboptimal.txt": build_reflection(SuboptimalFound(3, LISTING1_DSL)),
        "prompt7_reflect_all_failed.txt": build_reflection(AllFailed((
            Failure("def get_reward(current_step, action, target, wgt):\n    return 1\n",
                    "non-vector return: the returned reward must depend on action, target or wgt"),
            Failure("", "no fenced code block found in the response"),
        ))),
    }


@pytest.mark.parametrize("name", sorted(prompt_set()))
def test_prompt_matches_golden(name):
    text = prompt_set()[name]
    path = GOLDEN / name
    if REGEN:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(text.encode("utf-8"))
    assert path.read_bytes() == text.encode("utf-8")


def test_every_feedback_field_once():
    # distinct sentinels, so each one can only come from its own field
    fb = MetricFeedback(
        episodes=101, blocks_step0=202, blocks_step1=303, initial_reward=-4.04, final_reward=5.05,
        recall_levels=[0.606], reached_recall=[0.707], best_precision=[0.808], baseline_precision=[0.909],
        bad_gmv_step0=1111.0, bad_gmv_step1=2222.0, total_gmv_step0=3333.0, total_gmv_step1=4444.0,
        training_error="SENTINEL_TRAIN_ERR", evaluation_error="SENTINEL_EVAL_ERR",
    )
    text = build_feedback(fb)
    for f in fields(MetricFeedback):
        value = getattr(fb, f.name)
        needle = value if isinstance(value, str) else fmt_value(value)
        assert text.count(needle) == 1, (f.name, needle)


def test_error_sections_only_when_present():
    plain = build_feedback(FEEDBACK)
    assert "SENTINEL" not in plain
    assert "error" not in plain.lower()
    with_err = build_feedback(MetricFeedback(training_error="boom"))
    assert "boom" in with_err


def test_ratio_order_is_step0_over_step1():
    assert "9/1" in build_feedback(FEEDBACK)


def test_fmt_value():
    assert fmt_value(None) == "n/a"
    assert fmt_value(3.0) == "3"
    assert fmt_value([0.8, 0.85]) == "[0.8, 0.85]"
    assert fmt_value(1 / 3) == "0.333333"
    assert fmt_value(float("inf")) == "inf"


def test_mode_rules():
    with pytest.raises(PromptError):
        build_user(PromptContext(mode="few_shot"))
    with pytest.raises(PromptError):
        build_user(PromptContext(mode="zero_shot", example_rewards=[PRECISION_DSL]))
    with pytest.raises(PromptError):
        build_user(PromptContext(mode="one_shot"))


def test_few_shot_embeds_examples_zero_shot_does_not():
    few = build_user(PromptContext(mode="few_shot", example_rewards=[LISTING1_DSL]))
    zero = build_user(PromptContext(mode="zero_shot"))
    assert "low_weight_penalty" in few
    assert "low_weight_penalty" not in zero


def test_instructions_are_capped():
    ctx = PromptContext()
    for k in range(MAX_INSTRUCTIONS + 2):
        ctx = ctx.with_instruction(f"lesson {k}")
    assert len(ctx.instructions) == MAX_INSTRUCTIONS
    assert ctx.instructions[-1] == f"lesson {MAX_INSTRUCTIONS + 1}"


def test_initial_messages():
    msgs = build_initial(PromptContext())
    assert [m.role for m in msgs] == ["system", "user"]
    assert "get_reward" in msgs[1].content


def test_unknown_reflection_outcome():
    with pytest.raises(TypeError):
        build_reflection(object())
