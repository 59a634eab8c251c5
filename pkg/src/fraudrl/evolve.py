"""Evolutionary search over reward programs proposed by an LLM.

Each iteration samples candidates (resampling invalid ones), trains and
evaluates a policy per valid candidate, then updates the instruction
context in exactly one of three ways: a new best was found, only weaker
candidates were found, or everything failed and the LLM is asked to
reflect on the failures.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import prompts
from .env import EnvConfig, EpisodeError
from .evaluation import DEFAULT_THETAS, EvalReport, baseline_eval, evaluate_agent
from .llm import CompletionRequest, LLMError, Message
from .policy import TrainConfig, TrainingError, TrainStats, dump_params, train_agent
from .reward_dsl import DslError, extract_program, parse, validate
from .synthdata import Dataset

IMPROVED, NOT_IMPROVED, ALL_FAILED = "better_found", "suboptimal_found", "all_failed"
STAGE_PENALTY = 1.0


class EvolutionError(RuntimeError):
    pass


@dataclass
class EvolveConfig:
    n_iter: int = 60
    n_samples: int = 10
    n_episodes: int = 150
    recall_levels: tuple = DEFAULT_THETAS
    max_resamples_per_slot: int = 3
    t_init: float = 0.7
    t_min: float = 0.2
    t_max: float = 1.2
    t_step: float = 0.1
    seed: int = 42
    batch_size: int = 1024
    entropy_coef: float = 0.0
    mode: str = "zero_shot"
    example_rewards: tuple = ()
    max_tokens: int = 2048
    model_name: str = ""
    workers: int = 1

    def __post_init__(self):
        self.recall_levels = tuple(float(x) for x in self.recall_levels)
        self.example_rewards = tuple(self.example_rewards)
        if self.n_iter < 1 or self.n_samples < 1:
            raise ValueError("n_iter and n_samples must be >= 1")
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")
        if self.max_resamples_per_slot < 1:
            raise ValueError("max_resamples_per_slot must be >= 1")
        if not self.recall_levels or any(not 0 < t < 1 for t in self.recall_levels):
            raise ValueError("recall levels must lie in (0, 1)")
        if any(b <= a for a, b in zip(self.recall_levels, self.recall_levels[1:])):
            raise ValueError("recall levels must be strictly increasing")
        if not self.t_min <= self.t_init <= self.t_max:
            raise ValueError("t_init must lie in [t_min, t_max]")
        if self.t_step < 0:
            raise ValueError("t_step must be >= 0")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recall_levels"] = list(self.recall_levels)
        d["example_rewards"] = list(self.example_rewards)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "EvolveConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown evolve config fields: {sorted(unknown)}")
        return cls(**data)

    def train_config(self) -> TrainConfig:
        return TrainConfig(n_episodes=self.n_episodes, batch_size=self.batch_size,
                           entropy_coef=self.entropy_coef, seed=self.seed)


def success_score(report: EvalReport) -> float:
    """Mean precision uplift over the baseline, minus a penalty when the
    first stage catches no more fraud dollars than the second."""
    uplift = sum(lv.precision - lv.baseline_precision for lv in report.levels) / len(report.levels)
    return uplift - (0.0 if report.stage_constraint_ok else STAGE_PENALTY)


def update_temperature(temperature: float, outcome: str, cfg: EvolveConfig) -> float:
    if outcome == IMPROVED:
        t = cfg.t_init
    elif outcome == NOT_IMPROVED:
        t = temperature + cfg.t_step
    elif outcome == ALL_FAILED:
        t = temperature + 2 * cfg.t_step
    else:
        raise ValueError(f"unknown outcome {outcome!r}")
    # rounding keeps repeated increments from drifting (0.7 + 0.1 -> 0.7999...)
    return round(min(max(t, cfg.t_min), cfg.t_max), 10)


@dataclass
class CandidateRecord:
    iteration: int
    sample: int
    status: str = "invalid"  # invalid | train_error | eval_error | complete
    raw_text: str = ""
    source: str = ""
    validation: list = field(default_factory=list)
    attempts: list = field(default_factory=list)  # rejected samples before this one
    train_stats: dict | None = None
    train_error: str = ""
    eval_report: dict | None = None
    eval_error: str = ""
    success_score: float | None = None
    policy_file: str = ""

    @property
    def error(self) -> str:
        if self.status == "invalid":
            return "; ".join(self.validation) or "invalid reward function"
        return self.train_error or self.eval_error

    def report(self) -> EvalReport | None:
        return EvalReport.from_dict(self.eval_report) if self.eval_report else None

    def feedback(self, recall_levels) -> prompts.MetricFeedback:
        stats = None
        if self.train_stats:
            stats = TrainStats(list(self.train_stats["mean_reward"]), list(self.train_stats["block_counts0"]),
                               list(self.train_stats["block_counts1"]))
        return prompts.MetricFeedback.from_results(stats, self.report(), self.train_error, self.eval_error,
                                                   recall_levels=recall_levels)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CandidateRecord":
        return cls(**data)


@dataclass
class EvolutionState:
    iteration: int = 0  # completed iterations
    temperature: float = 0.7
    f_best: CandidateRecord | None = None
    instructions: list = field(default_factory=list)
    history: list = field(default_factory=list)
    llm_calls: int = 0

    @property
    def best_score(self) -> float | None:
        return self.f_best.success_score if self.f_best else None

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "temperature": self.temperature,
            "f_best": self.f_best.to_dict() if self.f_best else None,
            "instructions": list(self.instructions),
            "history": list(self.history),
            "llm_calls": self.llm_calls,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvolutionState":
        best = data.get("f_best")
        return cls(data["iteration"], data["temperature"], CandidateRecord.from_dict(best) if best else None,
                   list(data["instructions"]), list(data["history"]), data.get("llm_calls", 0))


@dataclass
class EvolveData:
    train: Dataset
    test: Dataset
    env: EnvConfig = field(default_factory=EnvConfig)


def _dump_json(obj) -> str:
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        return x
    return json.dumps(clean(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _context(cfg: EvolveConfig, state: EvolutionState) -> prompts.PromptContext:
    best = None
    if state.f_best is not None:
        metrics = prompts.build_feedback(state.f_best.feedback(cfg.recall_levels))
        best = prompts.BestSoFar(state.f_best.source, metrics)
    return prompts.PromptContext(mode=cfg.mode, example_rewards=list(cfg.example_rewards), best_so_far=best,
                                 instructions=list(state.instructions))


def _train_and_eval(args):
    """Worker: train on one valid program and evaluate it. Pure in its inputs."""
    source, data, tcfg, thetas, baseline = args
    prog = parse(source)
    out = {"train_stats": None, "train_error": "", "eval_report": None, "eval_error": "", "policy": None}
    try:
        params, stats = train_agent(data.env, data.train, prog, tcfg)
    except (TrainingError, EpisodeError, DslError, FloatingPointError, ValueError) as exc:
        out["train_error"] = str(exc)
        return out
    out["train_stats"] = stats.to_dict()
    out["policy"] = dump_params(params)
    try:
        report = evaluate_agent(params, data.test, thetas, layout=data.env.layout, baseline=baseline)
    except (ValueError, FloatingPointError) as exc:
        out["eval_error"] = str(exc)
        return out
    out["eval_report"] = report.to_dict()
    return out


class _Sampler:
    def __init__(self, llm, cfg: EvolveConfig, state: EvolutionState):
        self.llm, self.cfg, self.state = llm, cfg, state

    def ask(self, messages, temperature: float) -> str:
        req = CompletionRequest(messages, temperature=temperature, max_tokens=self.cfg.max_tokens,
                                model_name=self.cfg.model_name)
        text = self.llm.complete(req)
        self.state.llm_calls += 1
        return text


def _sample_slot(sampler: _Sampler, messages, temperature: float, iteration: int, j: int) -> CandidateRecord:
    rec = CandidateRecord(iteration, j)
    for attempt in range(sampler.cfg.max_resamples_per_slot):
        raw = sampler.ask(messages, temperature)
        source, problems = "", []
        try:
            source = extract_program(raw)
            prog = parse(source)
            report = validate(prog)
            problems = [f"{v.code}: {v.message}" for v in report.violations]
        except DslError as exc:
            problems = [str(exc)]
        if not problems:
            rec.raw_text, rec.source, rec.validation, rec.status = raw, source, [], "valid"
            return rec
        rec.attempts.append({"raw_text": raw, "source": source, "errors": problems})
    last = rec.attempts.pop()
    rec.raw_text, rec.source, rec.validation = last["raw_text"], last["source"], last["errors"]
    return rec


def _failures(records: list[CandidateRecord]) -> list[prompts.Failure]:
    out = []
    for r in records:
        for a in r.attempts:
            out.append(prompts.Failure(a["source"], "; ".join(a["errors"])))
        out.append(prompts.Failure(r.source, r.error))
    return out


def run_evolution(cfg: EvolveConfig, data: EvolveData, llm, run_dir: str | Path) -> EvolutionState:
    """Run (or resume) the search, persisting every candidate under ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    run_file = run_dir / "run.json"
    state = EvolutionState(temperature=cfg.t_init)
    if run_file.exists():
        saved = json.loads(run_file.read_text(encoding="utf-8"))
        if saved["config"] != json.loads(_dump_json(cfg.to_dict())):
            raise EvolutionError(f"{run_file} was written with a different configuration")
        state = EvolutionState.from_dict(saved["state"])
        if state.llm_calls and hasattr(llm, "skip"):
            llm.skip(state.llm_calls)

    def persist():
        _write(run_file, _dump_json({"config": cfg.to_dict(), "state": state.to_dict()}))
        if state.f_best is not None:
            _write(run_dir / "best.json", _dump_json(state.f_best.to_dict()))

    baseline = baseline_eval(data.test, cfg.recall_levels)
    tcfg = cfg.train_config()
    sampler = _Sampler(llm, cfg, state)

    while state.iteration < cfg.n_iter:
        k = state.iteration + 1
        calls_at_start = state.llm_calls
        temperature = state.temperature
        ctx = _context(cfg, state)
        messages = prompts.build_initial(ctx)
        try:
            records = [_sample_slot(sampler, messages, temperature, k, j) for j in range(cfg.n_samples)]
        except LLMError as exc:
            state.llm_calls = calls_at_start
            persist()
            raise EvolutionError(f"iteration {k}: LLM request failed: {exc}") from exc

        valid = [r for r in records if r.status == "valid"]
        jobs = [(r.source, data, tcfg, cfg.recall_levels, baseline) for r in valid]
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_train_and_eval, jobs))
        else:
            results = [_train_and_eval(job) for job in jobs]

        iter_dir = run_dir / f"iter_{k}"
        iter_dir.mkdir(exist_ok=True)
        for rec, res in zip(valid, results):
            rec.train_stats, rec.train_error = res["train_stats"], res["train_error"]
            rec.eval_report, rec.eval_error = res["eval_report"], res["eval_error"]
            if res["policy"] is not None:
                rec.policy_file = f"iter_{k}/cand_{rec.sample}.policy"
                (iter_dir / f"cand_{rec.sample}.policy").write_bytes(res["policy"])
            if rec.train_error:
                rec.status = "train_error"
            elif rec.eval_error:
                rec.status = "eval_error"
            else:
                rec.status = "complete"
                rec.success_score = success_score(rec.report())
        for rec in records:
            _write(iter_dir / f"cand_{rec.sample}.json", _dump_json(rec.to_dict()))

        complete = [r for r in records if r.status == "complete"]
        top = max(complete, key=lambda r: r.success_score, default=None)  # first on ties
        if top is not None and (state.f_best is None or top.success_score > state.f_best.success_score):
            outcome = IMPROVED
            state.f_best = top
            report = top.report()
            text = prompts.build_reflection(prompts.BetterFound(
                k, top.source, tuple(report.thetas), tuple(lv.baseline_precision for lv in report.levels),
                prompts.build_feedback(top.feedback(cfg.recall_levels)),
            ))
        elif top is not None:
            outcome = NOT_IMPROVED
            text = prompts.build_reflection(prompts.SuboptimalFound(k, top.source))
        else:
            outcome = ALL_FAILED
            ask = prompts.build_reflection(prompts.AllFailed(tuple(_failures(records))))
            try:
                text = sampler.ask([messages[0], Message("user", ask)], temperature)
            except LLMError as exc:
                state.llm_calls = calls_at_start
                persist()
                raise EvolutionError(f"iteration {k}: reflection request failed: {exc}") from exc
        state.instructions = (state.instructions + [text])[-prompts.MAX_INSTRUCTIONS:]
        state.temperature = update_temperature(temperature, outcome, cfg)
        state.history.append({
            "iteration": k,
            "temperature": temperature,
            "branch": outcome,
            "n_valid": len(valid),
            "n_complete": len(complete),
            "best_score": state.best_score,
        })
        state.iteration = k
        persist()
    return state
