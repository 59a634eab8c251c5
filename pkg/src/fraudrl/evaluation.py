"""Dollar-weighted evaluation of two-stage blocking policies.

For a target fraud-GMV recall the two blocking thresholds are searched
jointly over observed scores, and the best achievable dollar precision is
compared with a single-threshold rule on the first Pre-auth score.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .env import make_states
from .policy import PolicyParams, forward
from .synthdata import Dataset

DEFAULT_THETAS = (0.80, 0.85, 0.90)
SERIES_HEADER = ["window_start", "theta", "precision", "baseline_precision", "recall", "t0", "t1"]


class UnreachableRecall(ValueError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    """Baseline ranks transactions by one Pre-auth score column."""

    score_index: int = 0


@dataclass
class DollarConfusion:
    tp_gmv: float
    fp_gmv: float
    tn_gmv: float
    fn_gmv: float

    @property
    def total(self) -> float:
        return self.tp_gmv + self.fp_gmv + self.tn_gmv + self.fn_gmv


@dataclass
class DollarMetrics:
    confusion: DollarConfusion
    recall: float
    precision: float
    tp_gmv_stage: tuple  # (stage0, stage1)
    blocked_gmv_stage: tuple  # (stage0, stage1)


def score_dataset(params: PolicyParams, d: Dataset, layout: str = "onehot") -> tuple[np.ndarray, np.ndarray]:
    """Deterministic block probabilities at both stages for every transaction."""
    p0 = forward(params, make_states(d.pre, d.post, 0, layout), train_mode=False, clip=False)
    p1 = forward(params, make_states(d.pre, d.post, 1, layout), train_mode=False, clip=False)
    return p0, p1


def _label_wgt(d):
    if isinstance(d, Dataset):
        return d.label, d.wgt
    label, wgt = d
    return np.asarray(label), np.asarray(wgt, dtype=np.float64)


def dollar_metrics(blocked0, blocked1, d) -> DollarMetrics:
    """Confusion, recall and precision from stage block masks.

    Precision is 1.0 when nothing is blocked; recall is 1.0 when there is no
    fraud GMV at all.
    """
    label, wgt = _label_wgt(d)
    blocked0 = np.asarray(blocked0, dtype=bool)
    blocked1 = np.asarray(blocked1, dtype=bool)
    if not (len(blocked0) == len(blocked1) == len(label)):
        raise ValueError("mask lengths must match the dataset")
    if np.any(blocked0 & blocked1):
        raise ValueError("a transaction blocked at stage 0 cannot also be blocked at stage 1")
    fraud = label == 1
    blocked = blocked0 | blocked1
    tp = float(wgt[blocked & fraud].sum())
    fp = float(wgt[blocked & ~fraud].sum())
    tn = float(wgt[~blocked & ~fraud].sum())
    fn = float(wgt[~blocked & fraud].sum())
    fraud_total = tp + fn
    recall = tp / fraud_total if fraud_total > 0 else 1.0
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    return DollarMetrics(
        confusion=DollarConfusion(tp, fp, tn, fn),
        recall=recall,
        precision=precision,
        tp_gmv_stage=(float(wgt[blocked0 & fraud].sum()), float(wgt[blocked1 & fraud].sum())),
        blocked_gmv_stage=(float(wgt[blocked0].sum()), float(wgt[blocked1].sum())),
    )


def quantize_dollars(wgt: np.ndarray) -> np.ndarray:
    """Integer money units (micro-dollars, coarser if needed) so sums are exact."""
    wgt = np.asarray(wgt, dtype=np.float64)
    scale = 1e6
    total = float(wgt.sum())
    while total * scale > 2.0**52 and scale > 1:
        scale /= 10.0
    return np.rint(wgt * scale).astype(np.int64)


@dataclass
class ThresholdResult:
    theta: float
    t0: float
    t1: float
    recall: float
    precision: float


def block_masks(p0, p1, t0: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
    b0 = np.asarray(p0) >= t0
    b1 = ~b0 & (np.asarray(p1) >= t1)
    return b0, b1


def search_levels(p0, p1, d, thetas, backend: str | None = None) -> list[ThresholdResult]:
    """Joint two-stage threshold search for several recall targets at once.

    Candidate cuts are the observed scores plus ``+inf`` at each stage; a
    transaction is blocked when its score is >= the cut. Among pairs reaching
    the target recall the most precise wins. Ties go to the lower t0, so the
    same blocking decisions are made as early as possible, then the higher t1.
    """
    label, wgt = _label_wgt(d)
    thetas = [float(t) for t in thetas]
    for t in thetas:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"recall target {t} outside [0, 1]")
    w = quantize_dollars(wgt)
    fw = np.where(np.asarray(label) == 1, w, 0)
    t0, t1, f, b, _, _, f_total = kernels.sweep_two_stage(p0, p1, fw, w, thetas, backend=backend)
    out = []
    for j, theta in enumerate(thetas):
        if math.isnan(t0[j]):
            raise UnreachableRecall(f"recall {theta} cannot be reached")
        recall = f[j] / f_total if f_total > 0 else 1.0
        precision = f[j] / b[j] if b[j] > 0 else 1.0
        out.append(ThresholdResult(theta, float(t0[j]), float(t1[j]), float(recall), float(precision)))
    return out


def threshold_search(p0, p1, d, theta: float, backend: str | None = None) -> ThresholdResult:
    return search_levels(p0, p1, d, [theta], backend=backend)[0]


@dataclass
class BaselineResult:
    theta: float
    threshold: float
    recall: float
    precision: float


def baseline_search(scores, d, thetas) -> list[BaselineResult]:
    """Single-threshold version of the search on one score column."""
    label, wgt = _label_wgt(d)
    scores = np.asarray(scores, dtype=np.float64)
    w = quantize_dollars(wgt)
    fw = np.where(np.asarray(label) == 1, w, 0)
    f_total = int(fw.sum())
    # NaN never clears a cut, so it contributes no candidate and is never blocked
    order = np.argsort(-scores, kind="stable")
    order = order[~np.isnan(scores[order])]
    s = scores[order]
    cf = np.cumsum(fw[order])
    cb = np.cumsum(w[order])
    if len(s):
        last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
        cand_t = np.r_[np.inf, s[last]]
        cand_f = np.r_[0, cf[last]]
        cand_b = np.r_[0, cb[last]]
    else:
        cand_t, cand_f, cand_b = np.array([np.inf]), np.array([0]), np.array([0])
    ff = cand_f.astype(np.float64)
    recall = ff / float(f_total) if f_total > 0 else np.ones_like(ff)
    prec = np.ones_like(ff)
    nz = cand_b > 0
    prec[nz] = ff[nz] / cand_b[nz].astype(np.float64)
    out = []
    for theta in thetas:
        feasible = recall >= theta
        if not feasible.any():
            raise UnreachableRecall(f"recall {theta} cannot be reached")
        masked = np.where(feasible, prec, -np.inf)
        i = int(np.argmax(masked))
        out.append(BaselineResult(float(theta), float(cand_t[i]), float(recall[i]), float(prec[i])))
    return out


def baseline_eval(d: Dataset, thetas=DEFAULT_THETAS, config: BaselineConfig = BaselineConfig()) -> list[BaselineResult]:
    return baseline_search(d.pre[:, config.score_index], d, thetas)


@dataclass
class LevelResult:
    theta: float
    recall: float
    precision: float
    t0: float
    t1: float
    baseline_precision: float
    baseline_recall: float
    baseline_threshold: float
    tp_gmv_stage: tuple
    blocked_gmv_stage: tuple

    @property
    def uplift(self) -> float:
        return self.precision - self.baseline_precision


@dataclass
class EvalReport:
    levels: list
    n_transactions: int = 0
    fraud_gmv: float = 0.0
    total_gmv: float = 0.0
    flags: list = field(default_factory=list)

    @property
    def thetas(self) -> list[float]:
        return [lv.theta for lv in self.levels]

    @property
    def primary(self) -> LevelResult:
        """The lowest recall target; its stage split feeds the feedback prompt."""
        return self.levels[0]

    @property
    def bad_gmv_stage(self) -> tuple:
        return self.primary.tp_gmv_stage

    @property
    def total_gmv_stage(self) -> tuple:
        return self.primary.blocked_gmv_stage

    @property
    def stage_constraint_ok(self) -> bool:
        return all(lv.tp_gmv_stage[0] > lv.tp_gmv_stage[1] for lv in self.levels)

    def to_dict(self) -> dict:
        return {
            "levels": [_level_dict(lv) for lv in self.levels],
            "n_transactions": self.n_transactions,
            "fraud_gmv": self.fraud_gmv,
            "total_gmv": self.total_gmv,
            "flags": list(self.flags),
            "stage_constraint_ok": self.stage_constraint_ok,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        levels = []
        for lv in data["levels"]:
            lv = {k: v for k, v in lv.items() if k in LevelResult.__dataclass_fields__}
            lv = {k: (_from_json_num(v) if not isinstance(v, list) else tuple(v)) for k, v in lv.items()}
            levels.append(LevelResult(**lv))
        return cls(levels, data.get("n_transactions", 0), data.get("fraud_gmv", 0.0),
                   data.get("total_gmv", 0.0), list(data.get("flags", [])))


def _json_num(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _from_json_num(x):
    if x == "inf":
        return math.inf
    if x == "-inf":
        return -math.inf
    return x


def _level_dict(lv: LevelResult) -> dict:
    d = {k: _json_num(v) for k, v in asdict(lv).items()}
    d["tp_gmv_stage"] = list(lv.tp_gmv_stage)
    d["blocked_gmv_stage"] = list(lv.blocked_gmv_stage)
    return d


def evaluate_scores(p0, p1, d: Dataset, thetas=DEFAULT_THETAS, baseline_config: BaselineConfig = BaselineConfig(),
                    baseline: list | None = None) -> EvalReport:
    thetas = list(thetas)
    agent = search_levels(p0, p1, d, thetas)
    if baseline is None:
        baseline = baseline_eval(d, thetas, baseline_config)
    levels = []
    for res, base in zip(agent, baseline):
        m = dollar_metrics(*block_masks(p0, p1, res.t0, res.t1), d)
        levels.append(LevelResult(
            theta=res.theta, recall=res.recall, precision=res.precision, t0=res.t0, t1=res.t1,
            baseline_precision=base.precision, baseline_recall=base.recall, baseline_threshold=base.threshold,
            tp_gmv_stage=m.tp_gmv_stage, blocked_gmv_stage=m.blocked_gmv_stage,
        ))
    fraud_gmv = float(d.wgt[d.label == 1].sum())
    flags = []
    if fraud_gmv == 0:
        flags.append("no_fraud_gmv")
    if any(lv.blocked_gmv_stage == (0.0, 0.0) for lv in levels):
        flags.append("nothing_blocked")
    return EvalReport(levels, len(d), fraud_gmv, float(d.wgt.sum()), flags)


def evaluate_agent(params: PolicyParams, d: Dataset, thetas=DEFAULT_THETAS, layout: str = "onehot",
                   baseline_config: BaselineConfig = BaselineConfig(), baseline: list | None = None) -> EvalReport:
    p0, p1 = score_dataset(params, d, layout)
    return evaluate_scores(p0, p1, d, thetas, baseline_config, baseline)


@dataclass
class WindowReport:
    window_start: int
    window_end: int  # exclusive
    report: EvalReport

    @property
    def flagged(self) -> bool:
        return bool(self.report.flags)


def longterm_report(params: PolicyParams, d_long: Dataset, window_days: int, thetas=DEFAULT_THETAS,
                    layout: str = "onehot", start_day: int | None = None) -> list[WindowReport]:
    """One report per consecutive window, thresholds re-searched in each."""
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    if len(d_long) == 0:
        raise ValueError("long-term dataset is empty")
    p0, p1 = score_dataset(params, d_long, layout)
    first, last = d_long.day_range
    if start_day is None:
        rng = d_long.meta.get("day_range")
        start_day = int(rng[0]) if rng else first
    out = []
    s = start_day
    while s <= last:
        idx = np.flatnonzero((d_long.days >= s) & (d_long.days < s + window_days))
        window = d_long.take(idx)
        if len(window) == 0:
            report = EvalReport([], 0, 0.0, 0.0, ["empty"])
        else:
            report = evaluate_scores(p0[idx], p1[idx], window, thetas)
        out.append(WindowReport(s, s + window_days, report))
        s += window_days
    return out


def series_rows(windows: list[WindowReport]) -> list[list]:
    rows = []
    for w in windows:
        for lv in w.report.levels:
            rows.append([w.window_start, lv.theta, lv.precision, lv.baseline_precision, lv.recall, lv.t0, lv.t1])
    return rows


def series_csv(windows: list[WindowReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SERIES_HEADER)
    for row in series_rows(windows):
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_series_csv(windows: list[WindowReport], path: str | Path) -> None:
    Path(path).write_text(series_csv(windows), encoding="utf-8")
