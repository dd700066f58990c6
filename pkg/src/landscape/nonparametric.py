"""Feature-free landscape baselines.

Kaplan-Meier over integer prices (with an explicit mass for "winning price
above the largest bid"), the random-strategy baseline, and a KL fit of one
quantized Gaussian to a Kaplan-Meier estimate.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy.optimize import minimize

from .dist import LOG_PROB_FLOOR, PROB_FLOOR, GaussianMixture, mixture_sf, quantized_bin_prob
from .featurize import Batch, DataError, Observation, as_batch

SIGMA_FLOOR = 1e-3


@dataclass(frozen=True)
class KMEstimate:
    prices: np.ndarray
    pmf: np.ndarray
    tail_mass: float
    max_bid: int

    def __post_init__(self):
        object.__setattr__(self, "prices", np.asarray(self.prices, dtype=np.int64))
        object.__setattr__(self, "pmf", np.asarray(self.pmf, dtype=np.float64))
        if self.prices.shape != self.pmf.shape:
            raise ValueError("prices and pmf must align")
        if np.any(np.diff(self.prices) <= 0):
            raise ValueError("prices must be sorted and distinct")
        # P(W >= prices[i]); the extra last entry is the tail alone
        suffix = np.append(np.cumsum(self.pmf[::-1])[::-1], 0.0) + self.tail_mass
        object.__setattr__(self, "_at_least", suffix)

    def prob_at(self, w):
        """pmf(w), zero off the support."""
        w = np.asarray(w)
        if len(self.prices) == 0:
            out = np.zeros(w.shape)
        else:
            i = np.minimum(np.searchsorted(self.prices, w), len(self.prices) - 1)
            out = np.where(self.prices[i] == w, self.pmf[i], 0.0)
        return out if np.ndim(out) else float(out)

    def prob_at_least(self, b):
        """P(W >= b)."""
        i = np.searchsorted(self.prices, np.asarray(b), side="left")
        out = self._at_least[i]
        return out if np.ndim(out) else float(out)

    def survival(self, v):
        """S(v) = P(W > v)."""
        i = np.searchsorted(self.prices, np.asarray(v), side="right")
        out = self._at_least[i]
        return out if np.ndim(out) else float(out)

    def cdf(self, v):
        return 1.0 - self.survival(v)


def _price_arrays(data) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    b = data if isinstance(data, Batch) else as_batch(data)
    return b.won, b.price, b.bid


def km_fit(data: Sequence[Observation] | Batch) -> KMEstimate:
    """Product-limit estimate over integer winning prices.

    Won auctions are events at their winning price; a lost auction at bid b
    stays in the risk set for every price v <= b, so ties put events before
    censorings.

    The product is evaluated run by run: between two censorings the factors
    telescope, so each run contributes one exact ratio.  Without censoring
    this makes the pmf bit-identical to the empirical frequencies.
    """
    if not isinstance(data, Batch) and not data:
        raise DataError("no records")
    won, price, bid = _price_arrays(data)
    if len(bid) == 0:
        raise DataError("no records")
    max_bid = int(bid.max())
    events = np.sort(price[won].astype(np.int64))
    censored = np.sort(bid[~won].astype(np.int64))
    if len(events) == 0:
        return KMEstimate(np.array([], np.int64), np.array([]), 1.0, max_bid)
    values, counts = np.unique(events, return_counts=True)
    at_risk = (len(events) - np.searchsorted(events, values, side="left")
               + len(censored) - np.searchsorted(censored, values, side="left"))

    pmf = np.empty(len(values))
    s_before = 1.0
    n_first = int(at_risk[0])
    prev_left = None
    for i, (d, n) in enumerate(zip(counts.tolist(), at_risk.tolist())):
        if prev_left is not None and n != prev_left:
            s_before = s_before * prev_left / n_first
            n_first = n
        pmf[i] = (d * s_before) / n_first
        prev_left = n - d
    tail = s_before * prev_left / n_first
    return KMEstimate(values, pmf, tail, max_bid)


def km_fit_grouped(data: Sequence[Observation], key: Callable[[Observation], Hashable]) -> dict:
    groups = defaultdict(list)
    for obs in data:
        groups[key(obs)].append(obs)
    return {k: km_fit(v) for k, v in groups.items()}


def km_logprob_win(est: KMEstimate, w):
    out = np.log(np.maximum(est.prob_at(w), PROB_FLOOR))
    return out if np.ndim(out) else float(out)


def km_logprob_lose(est: KMEstimate, b):
    out = np.log(np.maximum(est.prob_at_least(b), PROB_FLOOR))
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class RSModel:
    """Uniform density p/z on [0, z]; the remaining 1 - p lies above z."""

    p_win: float
    z_max: int

    def __post_init__(self):
        if not 0.0 <= self.p_win <= 1.0:
            raise ValueError("p_win must be a probability")
        if self.z_max < 1:
            raise ValueError("z_max must be at least 1")


def rs_fit(train: Sequence[Observation] | Batch) -> RSModel:
    won, _, bid = _price_arrays(train)
    if len(bid) == 0:
        raise DataError("no records")
    z = int(bid.max())
    if z == 0:
        raise DataError("maximum bid is 0; random strategy undefined")
    return RSModel(float(won.mean()), z)


def rs_logprob_win(m: RSModel, w):
    w = np.asarray(w, dtype=np.float64)
    p = np.where((w >= 0) & (w <= m.z_max), m.p_win / m.z_max, 0.0)
    out = np.log(np.maximum(p, PROB_FLOOR))
    return out if np.ndim(out) else float(out)


def rs_logprob_lose(m: RSModel, b):
    b = np.clip(np.asarray(b, dtype=np.float64), 0.0, m.z_max)
    p = (1.0 - m.p_win) + m.p_win * (m.z_max - b) / m.z_max
    out = np.log(np.maximum(p, PROB_FLOOR))
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# Gaussian fit
# ---------------------------------------------------------------------------


def _cross_entropy(est: KMEstimate, mu: float, sigma: float) -> float:
    gm = GaussianMixture.single(mu, sigma)
    q = np.maximum(quantized_bin_prob(gm, est.prices), PROB_FLOOR)
    ce = -float(np.dot(est.pmf, np.log(q)))
    if est.tail_mass > 0:
        q_tail = max(mixture_sf(gm, est.max_bid + 0.5), PROB_FLOOR)
        ce -= est.tail_mass * math.log(q_tail)
    return ce


def kl_to_gaussian(est: KMEstimate, mu: float, sigma: float) -> float:
    """KL(KM || quantized Gaussian), tail bucket included."""
    mass = np.append(est.pmf, est.tail_mass)
    mass = mass[mass > 0]
    return _cross_entropy(est, mu, sigma) + float(np.dot(mass, np.log(mass)))


def fit_gaussian_to_km(est: KMEstimate, grid_size: int = 61) -> tuple[float, float]:
    """Single Gaussian closest to ``est`` in KL divergence.

    Coarse grid over mean in [0, 2*max_bid] and stddev in [1, 2*max_bid]
    (log-spaced), then Nelder-Mead refinement to 1e-3 in both coordinates.
    """
    support = est.pmf > 0
    if est.tail_mass <= 0 and support.sum() == 1:
        return float(est.prices[support][0]), SIGMA_FLOOR
    if est.tail_mass >= 1.0:
        raise DataError("estimate has no mass below the maximum bid")
    top = max(2.0 * est.max_bid, 2.0)
    mus = np.linspace(0.0, top, grid_size)
    sigmas = np.geomspace(1.0, top, grid_size)
    best = (math.inf, 0.0, 1.0)
    for mu in mus:
        for sigma in sigmas:
            ce = _cross_entropy(est, mu, sigma)
            if ce < best[0]:
                best = (ce, mu, sigma)
    _, mu0, s0 = best
    res = minimize(lambda th: _cross_entropy(est, th[0], th[1]), x0=[mu0, s0],
                   method="Nelder-Mead", bounds=[(None, None), (SIGMA_FLOOR, None)],
                   options={"xatol": 1e-4, "fatol": 1e-12, "maxiter": 4000,
                            "initial_simplex": [[mu0, s0], [mu0 + 0.05 * s0, s0],
                                                [mu0, 1.05 * s0]]})
    return float(res.x[0]), float(res.x[1])
