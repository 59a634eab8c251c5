"""Command-line entry point.

    fraudrl gen-data    --config C --out DIR
    fraudrl train-human --config C --data DIR --out DIR
    fraudrl evolve      --config C --data DIR --out RUN_DIR [--llm mock --fixture F]
    fraudrl evaluate    --policy P --data CSV_OR_DIR --out DIR [--thetas 0.8,0.85,0.9]
    fraudrl longterm    --policy P --data CSV_OR_DIR --out DIR [--window 30]

Errors exit with status 1 and one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .env import EnvConfig, IssuerConfig
from .evaluation import (
    DEFAULT_THETAS,
    BaselineConfig,
    evaluate_agent,
    longterm_report,
    series_csv,
)
from .evolve import EvolveConfig, EvolveData, run_evolution
from .llm import HTTPChatClient, mock_from_fixture
from .policy import TrainConfig, read_params, save_params, train_agent
from .rewards import PrecisionReward
from .synthdata import GenConfig, generate_dataset, load_dataset, save_dataset, split_dataset

SPLIT_NAMES = ("train", "test_s", "test_l")


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a command needs; loaded from JSON, then overridden by flags."""

    data: GenConfig = field(default_factory=GenConfig)
    split_days: tuple = (14, 29)
    train: TrainConfig = field(default_factory=TrainConfig)
    evolve: EvolveConfig = field(default_factory=EvolveConfig)
    issuer: IssuerConfig = field(default_factory=IssuerConfig)
    layout: str = "onehot"
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    thetas: tuple = DEFAULT_THETAS
    alpha: tuple = (0.5, 0.7)
    window_days: int = 30
    llm: str = "mock"
    fixture: str | None = None

    def validate(self) -> None:
        if any(not 0 < t < 1 for t in self.thetas):
            raise CliError("recall levels must lie in (0, 1)")
        if self.llm not in ("live", "mock"):
            raise CliError(f"llm must be 'live' or 'mock', got {self.llm!r}")
        self.data.validate()

    @property
    def env(self) -> EnvConfig:
        return EnvConfig(issuer=self.issuer, layout=self.layout)

    def to_dict(self) -> dict:
        return {
            "data": self.data.to_dict(),
            "split_days": list(self.split_days),
            "train": _plain(asdict(self.train)),
            "evolve": self.evolve.to_dict(),
            "issuer": asdict(self.issuer),
            "layout": self.layout,
            "baseline": asdict(self.baseline),
            "thetas": list(self.thetas),
            "alpha": list(self.alpha),
            "window_days": self.window_days,
            "llm": self.llm,
            "fixture": self.fixture,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        rc = cls()
        if "data" in d:
            rc.data = GenConfig.from_dict(d["data"])
        if "split_days" in d:
            rc.split_days = tuple(int(x) for x in d["split_days"])
        if "train" in d:
            t = dict(d["train"])
            if "adam_betas" in t:
                t["adam_betas"] = tuple(t["adam_betas"])
            rc.train = TrainConfig(**t)
        if "evolve" in d:
            rc.evolve = EvolveConfig.from_dict(d["evolve"])
        if "issuer" in d:
            rc.issuer = IssuerConfig(**d["issuer"])
        if "baseline" in d:
            rc.baseline = BaselineConfig(**d["baseline"])
        for key in ("layout", "window_days", "llm", "fixture"):
            if key in d:
                setattr(rc, key, d[key])
        if "thetas" in d:
            rc.thetas = tuple(float(x) for x in d["thetas"])
        if "alpha" in d:
            rc.alpha = tuple(float(x) for x in d["alpha"])
        return rc

    def with_seed(self, seed: int) -> "RunConfig":
        rc = RunConfig.from_dict(self.to_dict())
        rc.data.seed = seed
        rc.train.seed = seed
        rc.evolve.seed = seed
        return rc

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(data)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_manifest(out: Path, command: str, rc: RunConfig, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": rc.to_dict(),
        "config_digest": rc.digest(),
        "seed": rc.data.seed,
        "versions": {
            "fraudrl": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "kernel_backend": kernels.BACKEND,
        },
    }
    manifest.update(extra or {})
    write_json(out / "manifest.json", manifest)


def _load_split(data_dir: Path, name: str):
    path = data_dir / f"{name}.csv"
    if not path.exists():
        raise CliError(f"missing {path}; run gen-data first")
    return load_dataset(path)


def _load_any(path: Path, default_split: str):
    return _load_split(path, default_split) if path.is_dir() else load_dataset(path)


def cmd_gen_data(args, rc: RunConfig, out: Path) -> dict:
    full = generate_dataset(rc.data)
    parts = split_dataset(full, rc.split_days)
    names = SPLIT_NAMES if len(parts) == 3 else [f"split_{k}" for k in range(len(parts))]
    for name, part in zip(names, parts):
        save_dataset(part, out / f"{name}.csv")
    return {"splits": {name: len(part) for name, part in zip(names, parts)}}


def cmd_train_human(args, rc: RunConfig, out: Path) -> dict:
    data_dir = Path(args.data)
    train = _load_split(data_dir, "train")
    test = _load_split(data_dir, "test_s")
    params, stats = train_agent(rc.env, train, PrecisionReward(rc.alpha), rc.train)
    save_params(params, out / "policy.policy")
    write_json(out / "train_stats.json", stats.to_dict())
    report = evaluate_agent(params, test, rc.thetas, layout=rc.layout, baseline_config=rc.baseline)
    write_json(out / "eval_report.json", report.to_dict())
    return {"stage_constraint_ok": report.stage_constraint_ok}


def _make_llm(rc: RunConfig):
    if rc.llm == "mock":
        if not rc.fixture:
            raise CliError("--llm mock needs --fixture")
        return mock_from_fixture(rc.fixture)
    return HTTPChatClient(model=rc.evolve.model_name or None)


def cmd_evolve(args, rc: RunConfig, out: Path) -> dict:
    data_dir = Path(args.data)
    data = EvolveData(_load_split(data_dir, "train"), _load_split(data_dir, "test_s"), rc.env)
    state = run_evolution(rc.evolve, data, _make_llm(rc), out)
    return {"iterations": state.iteration, "best_score": state.best_score}


def cmd_evaluate(args, rc: RunConfig, out: Path) -> dict:
    params = read_params(args.policy)
    d = _load_any(Path(args.data), "test_s")
    report = evaluate_agent(params, d, rc.thetas, layout=rc.layout, baseline_config=rc.baseline)
    write_json(out / "eval_report.json", report.to_dict())
    return {}


def cmd_longterm(args, rc: RunConfig, out: Path) -> dict:
    params = read_params(args.policy)
    d = _load_any(Path(args.data), "test_l")
    windows = longterm_report(params, d, rc.window_days, rc.thetas, layout=rc.layout)
    (out / "longterm.csv").write_text(series_csv(windows), encoding="utf-8")
    write_json(out / "longterm.json", [
        {"window_start": w.window_start, "window_end": w.window_end, "report": w.report.to_dict()} for w in windows
    ])
    return {"windows": len(windows), "flagged": [w.window_start for w in windows if w.flagged]}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-human": cmd_train_human,
    "evolve": cmd_evolve,
    "evaluate": cmd_evaluate,
    "longterm": cmd_longterm,
}


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override every seed in the configuration")
    common.add_argument("--out", required=True, help="output directory")

    parser = argparse.ArgumentParser(prog="fraudrl", description=__doc__.splitlines()[0] if __doc__ else None)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate and split synthetic datasets")

    p = sub.add_parser("train-human", parents=[common], help="train with the hand-written precision reward")
    p.add_argument("--data", required=True, help="directory written by gen-data")

    p = sub.add_parser("evolve", parents=[common], help="LLM-driven reward search")
    p.add_argument("--data", required=True)
    p.add_argument("--llm", choices=("live", "mock"))
    p.add_argument("--fixture", help="JSON array of scripted responses for --llm mock")
    p.add_argument("--mode", choices=("zero_shot", "few_shot"))
    p.add_argument("--n-iter", type=int)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a saved policy")
    p.add_argument("--policy", required=True)
    p.add_argument("--data", required=True, help="dataset CSV or gen-data directory")
    p.add_argument("--thetas", type=_floats)

    p = sub.add_parser("longterm", parents=[common], help="windowed evaluation over a long period")
    p.add_argument("--policy", required=True)
    p.add_argument("--data", required=True, help="dataset CSV or gen-data directory")
    p.add_argument("--window", type=int)
    p.add_argument("--thetas", type=_floats)
    return parser


def _apply_flags(rc: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        rc = rc.with_seed(args.seed)
    if getattr(args, "thetas", None):
        rc.thetas = args.thetas
    if getattr(args, "window", None):
        rc.window_days = args.window
    if getattr(args, "llm", None):
        rc.llm = args.llm
    if getattr(args, "fixture", None):
        rc.fixture = args.fixture
    if getattr(args, "mode", None) or getattr(args, "n_iter", None):
        ev = rc.evolve.to_dict()
        if args.mode:
            ev["mode"] = args.mode
        if args.n_iter:
            ev["n_iter"] = args.n_iter
        rc.evolve = EvolveConfig.from_dict(ev)
    return rc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = _apply_flags(load_config(args.config), args)
        rc.validate()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[args.command](args, rc, out)
        write_manifest(out, args.command, rc, {"result": extra})
    except Exception as exc:  # one machine-readable line, whatever went wrong
        err = {"error": type(exc).__name__, "message": str(exc).splitlines()[0] if str(exc) else "", "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0
