"""Gaussian and Gaussian-mixture primitives for winning-price landscapes.

Every function accepts a :class:`GaussianMixture` whose parameter arrays have
shape ``(..., K)``.  A single mixture uses shape ``(K,)``; a batch of
per-record mixtures uses ``(n, K)`` and broadcasts against an ``(n,)`` array
of prices.  All densities and probabilities are computed in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcx, logsumexp, ndtr

LOG_2PI = math.log(2.0 * math.pi)
HALF_LOG_2PI = 0.5 * LOG_2PI
SQRT_2 = math.sqrt(2.0)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

PROB_FLOOR = 1e-12
LOG_PROB_FLOOR = math.log(PROB_FLOOR)


@dataclass(frozen=True)
class GaussianMixture:
    """Weights, means and standard deviations of a K-component mixture.

    Arrays share a trailing component axis; leading axes index records.
    """

    weights: np.ndarray
    means: np.ndarray
    stddevs: np.ndarray

    def __post_init__(self):
        for name in ("weights", "means", "stddevs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (self.weights.shape == self.means.shape == self.stddevs.shape):
            raise ValueError("weights, means and stddevs must share a shape")
        if self.weights.ndim == 0 or self.weights.shape[-1] < 1:
            raise ValueError("mixture needs at least one component")

    @property
    def K(self) -> int:
        return self.weights.shape[-1]

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def validate(self) -> "GaussianMixture":
        if not np.all(np.isfinite(self.means)):
            raise ValueError("means must be finite")
        if not np.all(np.isfinite(self.stddevs)) or np.any(self.stddevs <= 0):
            raise ValueError("stddevs must be positive and finite")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if np.any(np.abs(self.weights.sum(axis=-1) - 1.0) > 1e-9):
            raise ValueError("weights must sum to 1")
        return self

    def mean(self) -> np.ndarray:
        return np.sum(self.weights * self.means, axis=-1)

    def __getitem__(self, idx) -> "GaussianMixture":
        return GaussianMixture(self.weights[idx], self.means[idx], self.stddevs[idx])

    def __len__(self) -> int:
        if self.weights.ndim < 2:
            raise TypeError("single mixture has no length")
        return self.weights.shape[0]

    @classmethod
    def single(cls, mean: float, stddev: float) -> "GaussianMixture":
        return cls(np.array([1.0]), np.array([float(mean)]), np.array([float(stddev)]))


def _col(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)[..., None]


# ---------------------------------------------------------------------------
# standard normal
# ---------------------------------------------------------------------------


def log_std_normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    out = -0.5 * x * x - HALF_LOG_2PI
    return out if out.ndim else float(out)


def log_std_normal_cdf(x):
    """log Phi(x), finite for every finite x.

    Negative arguments go through the scaled complementary error function,
    ``Phi(x) = erfcx(t) exp(-t^2) / 2`` with ``t = -x/sqrt(2)``, so the
    Gaussian factor never has to be formed.  Positive arguments use
    ``log1p(-Phi(-x))`` to keep precision near log 1.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    neg = x < 0
    t = -x[neg] / SQRT_2
    out[neg] = np.log(0.5 * erfcx(t)) - t * t
    pos = ~neg
    out[pos] = np.log1p(-0.5 * erfc(x[pos] / SQRT_2))
    return out if out.ndim else float(out)


def std_normal_mills(z):
    """phi(z) / Phi(z), the derivative of log Phi."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    neg = z < 0
    out[neg] = SQRT_2_OVER_PI / erfcx(-z[neg] / SQRT_2)
    pos = ~neg
    zp = z[pos]
    out[pos] = np.exp(-0.5 * zp * zp - HALF_LOG_2PI) / ndtr(zp)
    return out if out.ndim else float(out)


def _normal_interval(lo, hi):
    """Phi(hi) - Phi(lo) for lo <= hi, evaluated on the side of the
    distribution where both terms are small."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    flip = lo > 0
    return np.where(flip, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


# ---------------------------------------------------------------------------
# mixtures
# ---------------------------------------------------------------------------


def mixture_log_pdf(gm: GaussianMixture, w):
    w = _col(w)
    z = (w - gm.means) / gm.stddevs
    terms = gm.log_weights - np.log(gm.stddevs) + log_std_normal_pdf(z)
    out = logsumexp(terms, axis=-1)
    return out if np.ndim(out) else float(out)


def mixture_log_sf(gm: GaussianMixture, b):
    """log Pr(W > b)."""
    b = _col(b)
    terms = gm.log_weights + log_std_normal_cdf((gm.means - b) / gm.stddevs)
    out = logsumexp(terms, axis=-1)
    return out if np.ndim(out) else float(out)


def mixture_cdf(gm: GaussianMixture, v):
    v = _col(v)
    out = np.sum(gm.weights * ndtr((v - gm.means) / gm.stddevs), axis=-1)
    return out if np.ndim(out) else float(out)


def mixture_sf(gm: GaussianMixture, v):
    v = _col(v)
    out = np.sum(gm.weights * ndtr((gm.means - v) / gm.stddevs), axis=-1)
    return out if np.ndim(out) else float(out)


def quantized_bin_prob(gm: GaussianMixture, w):
    """Pr(W in (w - 0.5, w + 0.5]) without the probability floor."""
    w = _col(w)
    lo = (w - 0.5 - gm.means) / gm.stddevs
    hi = (w + 0.5 - gm.means) / gm.stddevs
    out = np.sum(gm.weights * _normal_interval(lo, hi), axis=-1)
    return out if np.ndim(out) else float(out)


def quantized_win_logprob(gm: GaussianMixture, w):
    p = np.maximum(quantized_bin_prob(gm, w), PROB_FLOOR)
    out = np.log(p)
    return out if np.ndim(out) else float(out)


def quantized_lose_logprob(gm: GaussianMixture, b):
    """log Pr(W_bin >= b) = log Pr(W > b - 0.5), floored."""
    out = np.maximum(mixture_log_sf(gm, np.asarray(b, dtype=np.float64) - 0.5), LOG_PROB_FLOOR)
    return out if np.ndim(out) else float(out)


def expected_cost(gm: GaussianMixture, b):
    """Integral of w * pdf(w) over [0, b]: the expected second-price payment."""
    b = np.asarray(b, dtype=np.float64)
    if np.any(b < 0):
        raise ValueError("bid must be nonnegative")
    bb = _col(b)
    lo = (0.0 - gm.means) / gm.stddevs
    hi = (bb - gm.means) / gm.stddevs
    pdf_hi = np.exp(log_std_normal_pdf(hi))
    pdf_lo = np.exp(log_std_normal_pdf(lo))
    per_comp = gm.means * _normal_interval(lo, hi) - gm.stddevs * (pdf_hi - pdf_lo)
    out = np.maximum(np.sum(gm.weights * per_comp, axis=-1), 0.0)
    return out if np.ndim(out) else float(out)


def win_probability(gm: GaussianMixture, b):
    """F(b) = Pr(W <= b)."""
    out = -np.expm1(mixture_log_sf(gm, b))
    return out if np.ndim(out) else float(out)


def expected_utility(gm: GaussianMixture, b, u):
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise ValueError("utility must be finite")
    out = win_probability(gm, b) * u
    return out if np.ndim(out) else float(out)
