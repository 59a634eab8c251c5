"""Seeded synthetic transaction data with SL-like stage scores.

Each transaction carries two Pre-auth scores, two Post-auth scores, a fraud
label and a dollar weight. Scores are drawn from per-label Beta
distributions; the Post-auth scores of fraudulent transactions receive an
extra mean shift so that a second decision stage has real headroom over a
single-score rule.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import stats

SCORE_NAMES = ("pre0", "pre1", "post0", "post1")
CSV_HEADER = "id,day,pre0,pre1,post0,post1,label,wgt"
MIN_WEIGHT = 0.01


class ConfigError(ValueError):
    """Invalid generator configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _default_beta() -> dict[str, dict[str, tuple[float, float]]]:
    return {
        "pre0": {"legit": (1.2, 9.0), "fraud": (4.0, 2.2)},
        "pre1": {"legit": (1.5, 8.0), "fraud": (3.0, 3.0)},
        "post0": {"legit": (1.2, 9.0), "fraud": (4.0, 2.2)},
        "post1": {"legit": (1.5, 8.0), "fraud": (3.0, 3.0)},
    }


def _default_lognormal() -> dict[str, tuple[float, float]]:
    return {"legit": (4.0, 1.0), "fraud": (4.6, 1.1)}


@dataclass
class GenConfig:
    n_transactions: int = 100_000
    fraud_rate: float = 0.0132
    score_beta_params: dict = field(default_factory=_default_beta)
    signal_boost_post: float = 0.15
    weight_lognormal: dict = field(default_factory=_default_lognormal)
    # multiplicative fraud GMV factor per elapsed bucket of decay_bucket_days
    fraud_value_decay: float = 0.99
    decay_bucket_days: int = 7
    n_days: int = 14
    start_day: int = 0
    # relative transaction volume per day (length n_days); None means uniform
    day_volume: tuple | None = None
    # fraction of fraud score blended toward a legit draw by the last day
    score_drift: float = 0.0
    # pairwise correlation of the Gaussian copula shared by the four scores;
    # each score keeps its Beta marginal, 0 makes them conditionally independent
    score_correlation: float = 0.7
    seed: int = 42

    def validate(self) -> None:
        if not isinstance(self.n_transactions, (int, np.integer)) or self.n_transactions < 0:
            raise ConfigError("n_transactions", "must be a non-negative integer")
        if not 0.0 < self.fraud_rate < 1.0:
            raise ConfigError("fraud_rate", "must lie in (0, 1)")
        for name in SCORE_NAMES:
            if name not in self.score_beta_params:
                raise ConfigError("score_beta_params", f"missing entry for {name}")
            for label in ("legit", "fraud"):
                a, b = self.score_beta_params[name][label]
                if not (a > 0 and b > 0):
                    raise ConfigError("score_beta_params", f"{name}.{label} shapes must be > 0")
        if self.signal_boost_post < 0:
            raise ConfigError("signal_boost_post", "must be >= 0")
        for label in ("legit", "fraud"):
            mu, sigma = self.weight_lognormal[label]
            if not (mu > 0 and sigma > 0):
                raise ConfigError("weight_lognormal", f"{label} parameters must be > 0")
        if not 0.0 < self.fraud_value_decay <= 1.0:
            raise ConfigError("fraud_value_decay", "must lie in (0, 1]")
        if self.decay_bucket_days < 1:
            raise ConfigError("decay_bucket_days", "must be >= 1")
        if self.n_days < 1:
            raise ConfigError("n_days", "must be >= 1")
        if self.start_day < 0:
            raise ConfigError("start_day", "must be >= 0")
        if self.day_volume is not None:
            if len(self.day_volume) != self.n_days:
                raise ConfigError("day_volume", "length must equal n_days")
            if min(self.day_volume) < 0 or sum(self.day_volume) <= 0:
                raise ConfigError("day_volume", "weights must be >= 0 with a positive sum")
        if not 0.0 <= self.score_drift < 1.0:
            raise ConfigError("score_drift", "must lie in [0, 1)")
        if not 0.0 <= self.score_correlation < 1.0:
            raise ConfigError("score_correlation", "must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["score_beta_params"] = {
            k: {lab: list(v) for lab, v in per.items()} for k, per in self.score_beta_params.items()
        }
        d["weight_lognormal"] = {k: list(v) for k, v in self.weight_lognormal.items()}
        d["day_volume"] = None if self.day_volume is None else list(self.day_volume)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown generator field")
        kwargs = dict(data)
        if "score_beta_params" in kwargs:
            base = _default_beta()
            for k, per in kwargs["score_beta_params"].items():
                base.setdefault(k, {})
                for lab, v in per.items():
                    base[k][lab] = tuple(v)
            kwargs["score_beta_params"] = base
        if "weight_lognormal" in kwargs:
            base_w = _default_lognormal()
            base_w.update({k: tuple(v) for k, v in kwargs["weight_lognormal"].items()})
            kwargs["weight_lognormal"] = base_w
        if kwargs.get("day_volume") is not None:
            kwargs["day_volume"] = tuple(kwargs["day_volume"])
        return cls(**kwargs)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class TransactionRecord:
    id: int
    pre_scores: tuple[float, float]
    post_scores: tuple[float, float]
    fraud_label: int
    gmv_weight: float
    day_index: int


class Dataset:
    """Column-oriented transaction table ordered by ``day_index``.

    Iterating yields :class:`TransactionRecord` objects; the numpy columns
    (``ids``, ``days``, ``pre``, ``post``, ``label``, ``wgt``) are what the
    numerical code consumes.
    """

    def __init__(self, ids, days, pre, post, label, wgt, meta: dict | None = None):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.days = np.asarray(days, dtype=np.int64)
        self.pre = np.asarray(pre, dtype=np.float64).reshape(-1, 2)
        self.post = np.asarray(post, dtype=np.float64).reshape(-1, 2)
        self.label = np.asarray(label, dtype=np.int64)
        self.wgt = np.asarray(wgt, dtype=np.float64)
        n = len(self.ids)
        for name in ("days", "pre", "post", "label", "wgt"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if n and np.any(np.diff(self.days) < 0):
            raise ValueError("records must be sorted by day_index")
        self.meta = dict(meta or {})

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> TransactionRecord:
        return TransactionRecord(
            id=int(self.ids[i]),
            pre_scores=(float(self.pre[i, 0]), float(self.pre[i, 1])),
            post_scores=(float(self.post[i, 0]), float(self.post[i, 1])),
            fraud_label=int(self.label[i]),
            gmv_weight=float(self.wgt[i]),
            day_index=int(self.days[i]),
        )

    def __iter__(self) -> Iterator[TransactionRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def records(self) -> list[TransactionRecord]:
        return list(self)

    @classmethod
    def from_records(cls, records: Sequence[TransactionRecord], meta: dict | None = None) -> "Dataset":
        records = sorted(records, key=lambda r: r.day_index)
        return cls(
            ids=[r.id for r in records],
            days=[r.day_index for r in records],
            pre=[r.pre_scores for r in records] or np.zeros((0, 2)),
            post=[r.post_scores for r in records] or np.zeros((0, 2)),
            label=[r.fraud_label for r in records],
            wgt=[r.gmv_weight for r in records],
            meta=meta,
        )

    def take(self, idx, meta: dict | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.ids[idx], self.days[idx], self.pre[idx], self.post[idx],
            self.label[idx], self.wgt[idx], meta=meta if meta is not None else self.meta,
        )

    @property
    def day_range(self) -> tuple[int, int] | None:
        if len(self) == 0:
            return None
        return int(self.days[0]), int(self.days[-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for i in range(len(self)):
            buf.write(
                f"{self.ids[i]},{self.days[i]},{self.pre[i, 0]:.6f},{self.pre[i, 1]:.6f},"
                f"{self.post[i, 0]:.6f},{self.post[i, 1]:.6f},{self.label[i]},{self.wgt[i]:.6f}\n"
            )
        return buf.getvalue()


def save_dataset(d: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.write_text(d.to_csv(), encoding="utf-8")
    path.with_suffix(".meta.json").write_text(
        json.dumps(d.meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        table = np.loadtxt(fh, delimiter=",", ndmin=2) if path.stat().st_size > len(header) + 1 else np.zeros((0, 8))
    meta_path = path.with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return Dataset(
        ids=table[:, 0].astype(np.int64),
        days=table[:, 1].astype(np.int64),
        pre=table[:, 2:4],
        post=table[:, 4:6],
        label=table[:, 6].astype(np.int64),
        wgt=table[:, 7],
        meta=meta,
    )


def _day_counts(config: GenConfig) -> np.ndarray:
    """Deterministic allocation of transactions to days.

    Rounds the running total rather than each day, so any run of days whose
    volume share is a whole number of transactions gets exactly that many.
    """
    n = config.n_transactions
    if config.day_volume is None:
        vol = np.ones(config.n_days)
    else:
        vol = np.asarray(config.day_volume, dtype=np.float64)
    cum = np.floor(np.cumsum(vol) / vol.sum() * n + 0.5).astype(np.int64)
    cum[-1] = n
    return np.diff(cum, prepend=0)


def generate_dataset(config: GenConfig) -> Dataset:
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_transactions
    counts = _day_counts(config)
    days = np.repeat(np.arange(config.n_days, dtype=np.int64), counts) + config.start_day
    label = (rng.random(n) < config.fraud_rate).astype(np.int64)
    fraud = label == 1

    # later days blend fraud scores toward legit draws
    day_frac = (days - config.start_day) / max(config.n_days - 1, 1)
    blend = config.score_drift * day_frac

    # equicorrelated normals -> uniforms -> Beta quantiles, one column per score
    rho = config.score_correlation
    shared = rng.standard_normal((n, 1))
    z = np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * rng.standard_normal((n, 4))
    u = stats.norm.cdf(z)
    # the drift blend needs a legit-looking draw that is not tied to the fraud one
    u_alt = rng.random((n, 4))

    scores = np.empty((n, 4))
    for k, name in enumerate(SCORE_NAMES):
        legit_ab = config.score_beta_params[name]["legit"]
        fraud_ab = config.score_beta_params[name]["fraud"]
        u_legit = np.where(fraud, u_alt[:, k], u[:, k])
        legit_draw = stats.beta.ppf(u_legit, legit_ab[0], legit_ab[1])
        fraud_draw = stats.beta.ppf(u[:, k], fraud_ab[0], fraud_ab[1])
        if name.startswith("post"):
            fraud_draw = np.clip(fraud_draw + config.signal_boost_post, 0.0, 1.0)
        fraud_draw = (1.0 - blend) * fraud_draw + blend * legit_draw
        scores[:, k] = np.where(fraud, fraud_draw, legit_draw)
    scores = np.round(scores, 6)

    mu_l, sig_l = config.weight_lognormal["legit"]
    mu_f, sig_f = config.weight_lognormal["fraud"]
    wgt = np.where(
        fraud,
        rng.lognormal(mu_f, sig_f, size=n),
        rng.lognormal(mu_l, sig_l, size=n),
    )
    buckets = (days - config.start_day) // config.decay_bucket_days
    wgt = np.where(fraud, wgt * config.fraud_value_decay ** buckets, wgt)
    wgt = np.maximum(np.round(wgt, 6), MIN_WEIGHT)

    meta = {
        "seed": int(config.seed),
        "config_digest": config.digest(),
        "day_range": [config.start_day, config.start_day + config.n_days - 1],
    }
    return Dataset(
        ids=np.arange(n, dtype=np.int64),
        days=days,
        pre=scores[:, :2],
        post=scores[:, 2:],
        label=label,
        wgt=wgt,
        meta=meta,
    )


def split_dataset(d: Dataset, boundaries: Sequence[int]) -> list[Dataset]:
    """Cut ``d`` into ``len(boundaries) + 1`` consecutive day windows.

    Split ``k`` holds records with ``boundaries[k-1] <= day < boundaries[k]``.
    """
    bounds = [int(b) for b in boundaries]
    if not bounds:
        raise ValueError("at least one boundary is required")
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise ValueError(f"boundaries must be strictly increasing, got {bounds}")
    cuts = np.searchsorted(d.days, bounds, side="left")
    edges = [0, *cuts.tolist(), len(d)]
    out = []
    for k in range(len(edges) - 1):
        meta = dict(d.meta)
        lo = None if k == 0 else bounds[k - 1]
        hi = bounds[k] if k < len(bounds) else None
        meta["split"] = {"index": k, "lo": lo, "hi": hi}
        parent = d.meta.get("day_range")
        if parent:
            # the window this split covers, even where it holds no records
            meta["day_range"] = [parent[0] if lo is None else lo, parent[1] if hi is None else hi - 1]
        out.append(d.take(np.arange(edges[k], edges[k + 1]), meta=meta))
    return out
