"""ANLP scoring, multi-seed experiments and landscape export."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import config as cfgmod
from .dist import (
    GaussianMixture,
    mixture_cdf,
    quantized_lose_logprob,
    quantized_win_logprob,
)
from .featurize import (
    DEFAULT_TRIM,
    Batch,
    DataError,
    FeatureVector,
    Observation,
    RawRecord,
    as_batch,
    build_vocabulary,
    encode_all,
    read_log,
    split_indices,
)
from .models import ModelParams, predict, save_model
from .nonparametric import (
    KMEstimate,
    RSModel,
    km_fit,
    km_logprob_lose,
    km_logprob_win,
    rs_fit,
    rs_logprob_lose,
    rs_logprob_win,
)
from .sim import SimConfig, generate, read_truths
from .training import KINDS, TrainConfig, train

log = logging.getLogger(__name__)

MODEL_KINDS = ("cr", "pcr", "mcnet", "km", "rs", "oracle")
DEFAULT_L2_GRID = tuple(float(v) for v in np.logspace(-6, 1, 8))


@dataclass(frozen=True)
class OracleModel:
    """The generator's own laws, aligned record-for-record with a dataset."""

    truths: GaussianMixture
    kind: str = "oracle"


@dataclass(frozen=True)
class ANLPReport:
    anlp: float
    n_win: int
    n_lose: int
    anlp_win: float
    anlp_lose: float
    model_kind: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def model_kind(model) -> str:
    if isinstance(model, KMEstimate):
        return "km"
    if isinstance(model, RSModel):
        return "rs"
    if isinstance(model, GaussianMixture):
        return "mixture"
    return model.kind


def record_logprobs(model, data: Batch) -> np.ndarray:
    """Per-record log-probability: quantized pmf for wins, survival for losses."""
    won = data.won
    price = np.where(won, data.price, 0.0)
    if isinstance(model, KMEstimate):
        return np.where(won, km_logprob_win(model, price.astype(np.int64)),
                        km_logprob_lose(model, data.bid.astype(np.int64)))
    if isinstance(model, RSModel):
        return np.where(won, rs_logprob_win(model, price), rs_logprob_lose(model, data.bid))
    if isinstance(model, OracleModel):
        gm = model.truths
        if len(gm) != len(data):
            raise ValueError("oracle truths do not align with the dataset")
    elif isinstance(model, GaussianMixture):
        gm = model
    else:
        gm = predict(model, data)
    return np.where(won, quantized_win_logprob(gm, price), quantized_lose_logprob(gm, data.bid))


def anlp(model, dataset: Sequence[Observation] | Batch) -> ANLPReport:
    if not isinstance(dataset, Batch) and not dataset:
        raise DataError("empty dataset")
    data = as_batch(dataset)
    lp = record_logprobs(model, data)
    won = data.won
    n_win = int(won.sum())
    n_lose = len(data) - n_win
    a_win = float(-lp[won].mean()) if n_win else 0.0
    a_lose = float(-lp[~won].mean()) if n_lose else 0.0
    return ANLPReport(float(-lp.sum() / len(data)), n_win, n_lose, a_win, a_lose, model_kind(model))


def anlp_value(model, data: Batch) -> float:
    return float(-record_logprobs(model, data).mean())


# ---------------------------------------------------------------------------
# landscapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LandscapePoint:
    price: int
    pmf: float
    cdf: float


def landscape(model, x: FeatureVector | None, lo: int, hi: int) -> tuple[list[LandscapePoint], float]:
    """Binned winning-price curve over the integer prices lo..hi.

    Mass below ``lo`` is folded into the first row and mass above ``hi`` is
    returned as the tail, so the rows plus the tail always sum to one.
    """
    if hi < lo:
        raise ValueError("empty price range")
    prices = np.arange(lo, hi + 1)
    if isinstance(model, KMEstimate):
        cdf = model.cdf(prices)
    elif isinstance(model, RSModel):
        cdf = model.p_win * np.clip(prices + 0.5, 0.0, model.z_max) / model.z_max
    else:
        gm = model if isinstance(model, GaussianMixture) else predict(model, x)
        cdf = mixture_cdf(gm, prices + 0.5)
    cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))
    pmf = np.diff(cdf, prepend=0.0)
    points = [LandscapePoint(int(p), float(m), float(c)) for p, m, c in zip(prices, pmf, cdf)]
    return points, float(1.0 - cdf[-1])


def landscape_csv(points: Sequence[LandscapePoint], tail: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["price", "pmf", "cdf"])
    for p in points:
        w.writerow([p.price, repr(p.pmf), repr(p.cdf)])
    w.writerow(["TAIL", repr(tail), "1.0"])
    return buf.getvalue()


def export_landscape(model, x: FeatureVector | None, price_range: tuple[int, int]) -> str:
    points, tail = landscape(model, x, *price_range)
    return landscape_csv(points, tail)


def read_landscape_csv(text: str) -> tuple[list[LandscapePoint], float]:
    rows = list(csv.reader(io.StringIO(text)))
    points, tail = [], None
    for row in rows[1:]:
        if row[0] == "TAIL":
            tail = float(row[1])
        else:
            points.append(LandscapePoint(int(row[0]), float(row[1]), float(row[2])))
    if tail is None:
        raise DataError("landscape CSV has no TAIL line")
    return points, tail


def total_variation(a: Sequence[LandscapePoint], tail_a: float,
                    b: Sequence[LandscapePoint], tail_b: float) -> float:
    pa = {p.price: p.pmf for p in a}
    pb = {p.price: p.pmf for p in b}
    keys = pa.keys() | pb.keys()
    diff = sum(abs(pa.get(k, 0.0) - pb.get(k, 0.0)) for k in keys) + abs(tail_a - tail_b)
    return 0.5 * diff


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    models: tuple[str, ...] = ("cr", "pcr", "mcnet", "km", "rs")
    data: str = "sim"
    truth: str | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    l2_grid: tuple[float, ...] = DEFAULT_L2_GRID
    k_grid: tuple[int, ...] = (2, 3, 4)
    trim: int = DEFAULT_TRIM
    ratios: tuple[float, ...] = (0.6, 0.2, 0.2)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        bad = [m for m in self.models if m not in MODEL_KINDS]
        if bad:
            raise ValueError(f"unknown model kinds {bad}")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @classmethod
    def from_kv(cls, values: dict[str, str], base_dir: str | os.PathLike | None = None) -> "ExperimentSpec":
        kw: dict[str, Any] = {}
        if "models" in values:
            kw["models"] = cfgmod.str_list(values["models"])
        for key in ("data", "truth"):
            if key in values and values[key]:
                v = values[key]
                if base_dir is not None and v != "sim" and not os.path.isabs(v):
                    v = os.path.join(base_dir, v)
                kw[key] = v
        if "seeds" in values:
            kw["seeds"] = cfgmod.int_list(values["seeds"])
        if "l2_grid" in values:
            kw["l2_grid"] = cfgmod.float_list(values["l2_grid"])
        if "k_grid" in values:
            kw["k_grid"] = cfgmod.int_list(values["k_grid"])
        if "ratios" in values:
            kw["ratios"] = cfgmod.float_list(values["ratios"])
        if "trim" in values:
            kw["trim"] = int(values["trim"])
        sim_vals = {k: v for k, v in values.items() if k.startswith("sim.")}
        kw["sim"] = cfgmod.build(SimConfig, sim_vals, prefix="sim.")
        train_vals = {k: v for k, v in values.items() if not k.startswith("sim.") and k != "seed"}
        kw["train"] = cfgmod.build(TrainConfig, train_vals, cfgmod.TRAIN_ALIASES)
        try:
            return cls(**kw)
        except ValueError as exc:
            raise cfgmod.ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SeedRun:
    """Result of one model kind on one seed."""

    seed: int
    report: ANLPReport
    selected: dict
    model: Any = None
    epochs: list = field(default_factory=list)
    landscape: str = ""


@dataclass
class ExperimentReport:
    model_kind: str
    runs: list[ANLPReport]
    mean: float
    std: float
    config_digest: str
    selected: list[dict] = field(default_factory=list)

    @classmethod
    def aggregate(cls, kind: str, runs: Sequence[SeedRun], digest: str) -> "ExperimentReport":
        values = np.array([r.report.anlp for r in runs])
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        return cls(kind, [r.report for r in runs], float(np.mean(values)), std, digest,
                   [r.selected for r in runs])

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "mean": self.mean,
            "std": self.std,
            "config_digest": self.config_digest,
            "runs": [r.to_dict() for r in self.runs],
            "selected": self.selected,
        }


def load_source(spec: ExperimentSpec) -> tuple[list[RawRecord], GaussianMixture | None]:
    if spec.data == "sim":
        res = generate(spec.sim)
        return res.records, res.truths
    records = read_log(spec.data)
    truths = read_truths(spec.truth) if spec.truth else None
    if truths is not None and len(truths) != len(records):
        raise DataError("truth file does not align with the log")
    return records, truths


def _fit_parametric(kind: str, spec: ExperimentSpec, seed: int, train_b: Batch, valid_b: Batch):
    grid = [(l2, k) for k in (spec.k_grid if kind == "mcnet" else (spec.train.K,))
            for l2 in spec.l2_grid]
    best = None
    for l2, k in grid:
        cfg = dataclasses.replace(spec.train, l2=l2, K=k, seed=seed)
        res = train(kind, train_b, cfg)
        score = anlp_value(res.params, valid_b)
        log.info("seed %d %s l2=%g K=%d valid ANLP %.5f (%d epochs)",
                 seed, kind, l2, k, score, len(res.history))
        if best is None or score < best[0]:
            best = (score, l2, k, cfg)
    score, l2, k, cfg = best
    # refit the winner with per-epoch validation tracking for the metrics file
    res = train(kind, train_b, cfg, valid_b, anlp_value)
    selected = {"l2": l2, "valid_anlp": score}
    if kind == "mcnet":
        selected["K"] = k
    return res.params, selected, res.epochs


def run_seed(spec: ExperimentSpec, seed: int, records: Sequence[RawRecord],
             truths: GaussianMixture | None) -> dict[str, SeedRun]:
    tr_idx, va_idx, te_idx = split_indices(len(records), spec.ratios, seed)
    vocab = build_vocabulary([records[i] for i in tr_idx], spec.trim)

    def encoded(idx):
        return as_batch(encode_all([records[i] for i in idx], vocab), vocab.dimension)

    train_b, valid_b, test_b = encoded(tr_idx), encoded(va_idx), encoded(te_idx)
    first_x = FeatureVector(tuple(test_b.X[0].indices.tolist()), vocab.dimension)
    hi = int(train_b.bid.max())
    out: dict[str, SeedRun] = {}
    for kind in spec.models:
        epochs: list = []
        x = first_x
        if kind in KINDS:
            model, selected, epochs = _fit_parametric(kind, spec, seed, train_b, valid_b)
        elif kind == "km":
            model, selected = km_fit(train_b), {}
        elif kind == "rs":
            model, selected = rs_fit(train_b), {}
        else:
            if truths is None:
                raise DataError("oracle model needs ground-truth mixtures")
            model, selected = OracleModel(truths[te_idx]), {}
        report = anlp(model, test_b)
        if kind == "oracle":
            curve = export_landscape(model.truths[0], None, (0, hi))
        else:
            curve = export_landscape(model, x, (0, hi))
        out[kind] = SeedRun(seed, report, selected, model, epochs, curve)
        log.info("seed %d %s test ANLP %.5f", seed, kind, report.anlp)
    out["_vocab"] = vocab
    return out


def _run_seed_job(args):
    return run_seed(*args)


def run_experiment(spec: ExperimentSpec, out_dir: str | os.PathLike | None = None,
                   threads: int | None = None) -> dict[str, ExperimentReport]:
    """Split / train / select / test for each seed, then aggregate per model.

    Seeds are independent and may run in worker processes; the fold over
    their results is in seed order, so reports do not depend on ``threads``.
    """
    records, truths = load_source(spec)
    jobs = [(spec, s, records, truths) for s in spec.seeds]
    workers = min(threads or 1, len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_run_seed_job, jobs))
    else:
        per_seed = [_run_seed_job(j) for j in jobs]
    digest = spec.digest()
    reports = {k: ExperimentReport.aggregate(k, [r[k] for r in per_seed], digest)
               for k in spec.models}
    if out_dir is not None:
        write_experiment(Path(out_dir), spec, reports, per_seed)
    return reports


def write_experiment(out: Path, spec: ExperimentSpec, reports: dict[str, ExperimentReport],
                     per_seed: list[dict]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"config": spec.to_dict(), "config_digest": spec.digest(),
           "models": {k: r.to_dict() for k, r in reports.items()}}
    (out / "report.json").write_text(json.dumps(doc, sort_keys=True, indent=1, default=str) + "\n")
    for runs in per_seed:
        vocab = runs["_vocab"]
        for kind in spec.models:
            run = runs[kind]
            stem = f"{kind}_seed{run.seed}"
            (out / f"landscape_{stem}.csv").write_text(run.landscape)
            if kind in KINDS:
                (out / f"model_{stem}.json").write_bytes(save_model(run.model, vocab.checksum()))
                write_metrics(out / f"metrics_{stem}.csv", run.epochs)


def write_metrics(path, epochs) -> None:
    """Per-epoch CSV.  Wall-clock time is left out so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_anlp"])
        for e in epochs:
            w.writerow([e.epoch, repr(e.train_loss), "" if e.valid_anlp is None else repr(e.valid_anlp)])


def summary_table(reports: dict[str, ExperimentReport]) -> str:
    lines = [f"{'model':<8} {'mean ANLP':>10} {'std':>8}"]
    for kind, r in reports.items():
        lines.append(f"{kind:<8} {r.mean:>10.4f} {r.std:>8.4f}")
    return "\n".join(lines)
