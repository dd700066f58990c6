"""Synthetic second-price market with a known, feature-conditional landscape.

Each record gets one attribute per field.  Every (field, attribute) pair owns
a small block of effects drawn from a generator seeded by
``(seed, field, attribute)``; a profile's winning-price law is assembled from
the effects of its attributes, so identical profiles always share one law.
Component k's mean lives in the k-th of K equal bands of the configured mean
range, which keeps the truths multi-modal; stddevs and weights vary per
profile, which keeps them heteroscedastic.  ``weight_bias`` tilts the weights
toward the low bands, which sets the overall censoring rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import softmax

from .dist import (
    GaussianMixture,
    mixture_cdf,
    quantized_lose_logprob,
    quantized_win_logprob,
)
from .featurize import Observation, RawRecord, Vocabulary, build_vocabulary, encode_all

BID_POLICIES = ("fixed", "uniform", "quantile")


@dataclass(frozen=True)
class SimConfig:
    n_fields: int = 4
    attrs_per_field: int = 8
    n_records: int = 50_000
    n_components: int = 2
    mean_lo: float = 50.0
    mean_hi: float = 400.0
    sigma_lo: float = 5.0
    sigma_hi: float = 60.0
    weight_spread: float = 0.75
    weight_bias: float = 1.5
    bid_policy: str = "uniform"
    bid_fixed: int = 0
    bid_lo: int = 0
    bid_hi: int = 350
    bid_quantile: float = 0.5
    budget: float | None = None  # carried for strategy experiments; unused by generate
    seed: int = 0

    def __post_init__(self):
        if min(self.n_fields, self.attrs_per_field, self.n_records, self.n_components) < 1:
            raise ValueError("counts must be positive")
        if not self.mean_lo < self.mean_hi:
            raise ValueError("empty mean range")
        if not 1.0 <= self.sigma_lo <= self.sigma_hi:
            raise ValueError("sigma range must satisfy 1 <= lo <= hi")
        if self.bid_policy not in BID_POLICIES:
            raise ValueError(f"bid_policy must be one of {BID_POLICIES}")
        if self.bid_policy == "uniform" and not 0 <= self.bid_lo <= self.bid_hi:
            raise ValueError("empty bid range")
        if self.bid_policy == "fixed" and self.bid_fixed < 0:
            raise ValueError("bids must be nonnegative")
        if self.bid_policy == "quantile" and not 0.0 < self.bid_quantile < 1.0:
            raise ValueError("bid_quantile must be in (0, 1)")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


BENCHMARK = SimConfig()


def field_name(f: int) -> str:
    return f"f{f}"


def attr_name(a: int) -> str:
    return f"a{a}"


def _effects(config: SimConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-(field, attribute) effect blocks, each shaped (F, A, K)."""
    F, A, K = config.n_fields, config.attrs_per_field, config.n_components
    u = np.empty((F, A, K))
    v = np.empty((F, A, K))
    g = np.empty((F, A, K))
    for f in range(F):
        for a in range(A):
            rng = np.random.default_rng([config.seed, 0x1A4D5CA9E, f, a])
            u[f, a] = rng.random(K)
            v[f, a] = rng.random(K)
            g[f, a] = rng.standard_normal(K)
    return u, v, g


def profile_truths(config: SimConfig, profiles: np.ndarray) -> GaussianMixture:
    """Winning-price law for each row of an (n, n_fields) attribute-index array."""
    u, v, g = _effects(config)
    F, K = config.n_fields, config.n_components
    rows = np.arange(F)
    mean_u = np.mean(u[rows, profiles], axis=1)
    mean_v = np.mean(v[rows, profiles], axis=1)
    logits = config.weight_spread * np.sum(g[rows, profiles], axis=1) - config.weight_bias * np.arange(K)
    band = (np.arange(K) + mean_u) / K
    means = config.mean_lo + (config.mean_hi - config.mean_lo) * band
    sigmas = config.sigma_lo * (config.sigma_hi / config.sigma_lo) ** mean_v
    return GaussianMixture(softmax(logits, axis=1), means, sigmas)


def mixture_quantile(gm: GaussianMixture, q: float) -> float:
    lo = float(np.min(gm.means - 12 * gm.stddevs))
    hi = float(np.max(gm.means + 12 * gm.stddevs))
    return brentq(lambda t: mixture_cdf(gm, t) - q, lo, hi, xtol=1e-9)


def sample_prices(gm: GaussianMixture, rng: np.random.Generator) -> np.ndarray:
    """Draw one winning price per mixture, snapped to the integer bin
    (l - 0.5, l + 0.5] and clamped at zero."""
    n = len(gm)
    cum = np.cumsum(gm.weights, axis=1)
    comp = np.minimum((rng.random((n, 1)) > cum).sum(axis=1), gm.K - 1)
    idx = np.arange(n)
    draw = gm.means[idx, comp] + gm.stddevs[idx, comp] * rng.standard_normal(n)
    return np.maximum(np.ceil(draw - 0.5), 0).astype(np.int64)


@dataclass
class SimResult:
    records: list[RawRecord]
    observations: list[Observation]
    truths: GaussianMixture
    vocab: Vocabulary
    profiles: np.ndarray

    def __iter__(self):
        # unpacks as (dataset, truths)
        return iter((self.observations, self.truths))


def generate(config: SimConfig) -> SimResult:
    rng = np.random.default_rng([config.seed, 0x5A1E])
    n = config.n_records
    profiles = rng.integers(0, config.attrs_per_field, size=(n, config.n_fields))
    truths = profile_truths(config, profiles)
    w = sample_prices(truths, rng)
    if config.bid_policy == "fixed":
        bids = np.full(n, config.bid_fixed, dtype=np.int64)
    elif config.bid_policy == "uniform":
        bids = rng.integers(config.bid_lo, config.bid_hi + 1, size=n)
    else:
        cache: dict[tuple, int] = {}
        bids = np.empty(n, dtype=np.int64)
        for i, prof in enumerate(map(tuple, profiles)):
            if prof not in cache:
                q = mixture_quantile(truths[i], config.bid_quantile)
                cache[prof] = max(int(round(q)), 0)
            bids[i] = cache[prof]
    won = bids >= w
    records = []
    for i in range(n):
        feats = tuple((field_name(f), attr_name(int(a))) for f, a in enumerate(profiles[i]))
        records.append(RawRecord(feats, int(bids[i]), bool(won[i]),
                                 int(w[i]) if won[i] else None))
    vocab = build_vocabulary(records, trim_threshold=0)
    return SimResult(records, encode_all(records, vocab), truths, vocab, profiles)


def oracle_anlp(dataset: Sequence[Observation], truths: GaussianMixture) -> float:
    """ANLP scored with the generator's own laws."""
    if len(dataset) != len(truths):
        raise ValueError("dataset and truths must have the same length")
    won = np.array([o.won for o in dataset])
    price = np.array([o.winning_price if o.won else 0 for o in dataset], dtype=np.float64)
    bid = np.array([o.bid_price for o in dataset], dtype=np.float64)
    lp = np.where(won, quantized_win_logprob(truths, price), quantized_lose_logprob(truths, bid))
    return float(-lp.mean())


def true_expected_cost_check(truth: GaussianMixture, b: float) -> float:
    """Adaptive quadrature of the integral of w * pdf(w) over [0, b]."""
    if b <= 0:
        return 0.0
    w_, m_, s_ = (np.atleast_1d(a) for a in (truth.weights, truth.means, truth.stddevs))

    def integrand(t):
        return t * float(np.sum(w_ * np.exp(-0.5 * ((t - m_) / s_) ** 2) / (s_ * math.sqrt(2 * math.pi))))

    total = 0.0
    # split at each component's +-8 sigma window so no peak is skipped
    cuts = {0.0, float(b)}
    for m, s in zip(m_, s_):
        for k in (-8, -2, 0, 2, 8):
            c = m + k * s
            if 0.0 < c < b:
                cuts.add(float(c))
    edges = sorted(cuts)
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)
        total += val
    return total


# ---------------------------------------------------------------------------
# sidecar truth file
# ---------------------------------------------------------------------------


def write_truths(path, truths: GaussianMixture) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(truths)):
            t = truths[i]
            cols = [str(i), str(t.K)] + [repr(float(x)) for x in (*t.weights, *t.means, *t.stddevs)]
            fh.write("\t".join(cols) + "\n")


def read_truths(path) -> GaussianMixture:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            k = int(parts[1])
            vals = [float(x) for x in parts[2:]]
            if len(vals) != 3 * k:
                raise ValueError(f"truth row {parts[0]}: expected {3 * k} values")
            rows.append(vals)
    ks = {len(r) for r in rows}
    if len(ks) != 1:
        raise ValueError("mixed component counts in truth file")
    arr = np.array(rows)
    k = arr.shape[1] // 3
    return GaussianMixture(arr[:, :k], arr[:, k:2 * k], arr[:, 2 * k:])
