"""Prompt assembly for reward-function generation.

Templates live in ``templates/*.txt`` with ``{slot}`` placeholders; every
function here is a pure function of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from ..llm import Message

MAX_INSTRUCTIONS = 3
MODES = ("zero_shot", "few_shot")


class PromptError(ValueError):
    pass


@lru_cache(maxsize=None)
def template(name: str) -> str:
    return resources.files(__name__).joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


def default_task_goal() -> str:
    return template("task_goal").strip()


def default_framework_snippet() -> str:
    return template("framework").rstrip("\n")


def default_dsl_grammar() -> str:
    return template("dsl_grammar").rstrip("\n")


def fmt_value(x) -> str:
    """Compact text for numbers and lists of numbers; ``None`` becomes ``n/a``."""
    if x is None:
        return "n/a"
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(fmt_value(v) for v in x) + "]"
    if isinstance(x, bool):
        return str(x)
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if x.is_integer() and abs(x) < 1e15:
            return str(int(x))
        return f"{x:.6g}"
    return str(x)


@dataclass(frozen=True)
class BestSoFar:
    source: str
    metrics: str


@dataclass
class PromptContext:
    mode: str = "zero_shot"
    task_goal: str = field(default_factory=default_task_goal)
    framework_code_snippet: str = field(default_factory=default_framework_snippet)
    example_rewards: list = field(default_factory=list)
    best_so_far: BestSoFar | None = None
    dsl_grammar: str = field(default_factory=default_dsl_grammar)
    instructions: list = field(default_factory=list)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise PromptError(f"unknown mode {self.mode!r}")
        if self.mode == "few_shot" and not self.example_rewards:
            raise PromptError("few_shot mode needs at least one example reward")
        if self.mode == "zero_shot" and self.example_rewards:
            raise PromptError("zero_shot mode must not carry example rewards")
        if not self.dsl_grammar or not self.dsl_grammar.strip():
            raise PromptError("the reward grammar text is missing")

    def with_instruction(self, text: str) -> "PromptContext":
        """Copy with ``text`` appended, keeping only the newest entries."""
        kept = (list(self.instructions) + [text])[-MAX_INSTRUCTIONS:]
        return PromptContext(self.mode, self.task_goal, self.framework_code_snippet, list(self.example_rewards),
                             self.best_so_far, self.dsl_grammar, kept)


def _fence(src: str) -> str:
    return "```\n" + src.strip("\n") + "\n```"


def build_system(ctx: PromptContext) -> str:
    ctx.validate()
    instr = ""
    if ctx.instructions:
        items = "\n".join(f"{i}. {text.strip()}" for i, text in enumerate(ctx.instructions, 1))
        instr = template("instructions").format(instructions=items)
    text = template("system").format(
        task_goal=ctx.task_goal, framework_code_snippet=ctx.framework_code_snippet, instructions_section=instr
    )
    return text.rstrip("\n") + "\n"


def build_user(ctx: PromptContext, feedback: str | None = None) -> str:
    ctx.validate()
    examples = ""
    if ctx.mode == "few_shot":
        examples = template("examples").format(examples="\n".join(_fence(src) for src in ctx.example_rewards))
    best = ""
    if ctx.best_so_far is not None:
        best = template("best").format(best_source=ctx.best_so_far.source.strip("\n"),
                                       best_metrics=ctx.best_so_far.metrics.rstrip("\n"))
    text = template("codegen").format(dsl_grammar=ctx.dsl_grammar, examples_section=examples, best_section=best)
    text = text.rstrip("\n") + "\n\n" + template("domain")
    if feedback:
        text += "\n" + feedback.rstrip("\n") + "\n"
    return text


def build_initial(ctx: PromptContext) -> list[Message]:
    """System and user messages opening a sampling request."""
    return [Message("system", build_system(ctx)), Message("user", build_user(ctx))]


@dataclass
class MetricFeedback:
    """Numbers reported back after a candidate was trained and evaluated.

    Stage pairs are (step 0, step 1), which is also the ratio order.
    """

    episodes: int | None = None
    blocks_step0: int | None = None
    blocks_step1: int | None = None
    initial_reward: float | None = None
    final_reward: float | None = None
    recall_levels: list | None = None
    reached_recall: list | None = None
    best_precision: list | None = None
    baseline_precision: list | None = None
    bad_gmv_step0: float | None = None
    bad_gmv_step1: float | None = None
    total_gmv_step0: float | None = None
    total_gmv_step1: float | None = None
    training_error: str = ""
    evaluation_error: str = ""

    @classmethod
    def from_results(cls, stats=None, report=None, training_error: str = "", evaluation_error: str = "",
                     recall_levels=None) -> "MetricFeedback":
        fb = cls(training_error=training_error, evaluation_error=evaluation_error)
        if recall_levels is not None:
            fb.recall_levels = list(recall_levels)
        if stats is not None and stats.n_episodes:
            fb.episodes = stats.n_episodes
            fb.blocks_step0, fb.blocks_step1 = stats.final_blocks
            fb.initial_reward = stats.initial_reward
            fb.final_reward = stats.final_reward
        if report is not None and report.levels:
            fb.recall_levels = report.thetas
            fb.reached_recall = [lv.recall for lv in report.levels]
            fb.best_precision = [lv.precision for lv in report.levels]
            fb.baseline_precision = [lv.baseline_precision for lv in report.levels]
            fb.bad_gmv_step0, fb.bad_gmv_step1 = report.bad_gmv_stage
            fb.total_gmv_step0, fb.total_gmv_step1 = report.total_gmv_stage
        return fb


_FEEDBACK_NUMERIC = (
    "episodes", "blocks_step0", "blocks_step1", "initial_reward", "final_reward", "recall_levels",
    "reached_recall", "best_precision", "baseline_precision", "bad_gmv_step0", "bad_gmv_step1",
    "total_gmv_step0", "total_gmv_step1",
)


def build_feedback(fb: MetricFeedback) -> str:
    text = template("feedback").format(**{k: fmt_value(getattr(fb, k)) for k in _FEEDBACK_NUMERIC})
    if fb.training_error:
        text += template("training_error").format(training_error=fb.training_error)
    if fb.evaluation_error:
        text += template("evaluation_error").format(evaluation_error=fb.evaluation_error)
    return text


@dataclass(frozen=True)
class Failure:
    source: str
    error: str


@dataclass(frozen=True)
class AllFailed:
    failures: tuple


@dataclass(frozen=True)
class BetterFound:
    iteration: int
    candidate: str
    recall_levels: tuple
    baseline_precision: tuple
    metrics: str


@dataclass(frozen=True)
class SuboptimalFound:
    iteration: int
    candidate: str


def build_reflection(outcome) -> str:
    if isinstance(outcome, AllFailed):
        parts = []
        for i, f in enumerate(outcome.failures, 1):
            src = f.source.strip("\n") or "(no code extracted)"
            parts.append(f"Attempt {i}:\n{_fence(src)}\nError: {f.error}\n")
        return template("reflect_all_failed").format(failures="\n".join(parts))
    if isinstance(outcome, BetterFound):
        return template("reflect_better").format(
            iteration=outcome.iteration, candidate=outcome.candidate.strip("\n"),
            recall_levels=fmt_value(list(outcome.recall_levels)),
            baseline_precision=fmt_value(list(outcome.baseline_precision)),
            metrics=outcome.metrics.rstrip("\n"),
        )
    if isinstance(outcome, SuboptimalFound):
        return template("reflect_suboptimal").format(iteration=outcome.iteration,
                                                     candidate=outcome.candidate.strip("\n"))
    raise TypeError(f"unknown reflection outcome {type(outcome).__name__}")
