"""Censored maximum-likelihood landscape models.

Three models share one censored likelihood: a won auction contributes the
density of its winning price, a lost auction contributes the probability that
the winning price exceeds the bid.

* ``CRParams``    -- Gaussian with linear mean and one global stddev.
* ``PCRParams``   -- Gaussian with linear mean and log-linear stddev.
* ``MCNetParams`` -- one ReLU hidden layer emitting K mixture components.

Every model carries a ``scale`` (price units per output unit): means are
``scale * output`` and stddevs ``scale * exp(output)``.  With ``scale=1`` the
models are exactly the textbook forms; larger values only rescale the
optimisation geometry.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import math
from dataclasses import dataclass
from typing import ClassVar, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .dist import (
    HALF_LOG_2PI,
    GaussianMixture,
    log_std_normal_cdf,
    log_std_normal_pdf,
    std_normal_mills,
)
from .featurize import Batch, FeatureVector, Observation, as_batch

SIGMA_MIN = 1e-3
SIGMA_MAX = 1e6
_LOG_SIGMA_MIN = math.log(SIGMA_MIN)
_LOG_SIGMA_MAX = math.log(SIGMA_MAX)


class NumericError(ArithmeticError):
    """A loss or gradient became non-finite."""


class ModelFormatError(ValueError):
    """A model file is corrupt or does not match the expected vocabulary."""


def _arr(a) -> np.ndarray:
    return np.array(a, dtype=np.float64)


@dataclass(frozen=True)
class CRParams:
    beta: np.ndarray
    s: np.ndarray
    scale: float = 1.0

    kind: ClassVar[str] = "cr"
    array_names: ClassVar[tuple[str, ...]] = ("beta", "s")

    def __post_init__(self):
        object.__setattr__(self, "beta", _arr(self.beta))
        object.__setattr__(self, "s", _arr(self.s).reshape(()))

    @property
    def D(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class PCRParams:
    beta: np.ndarray
    alpha: np.ndarray
    scale: float = 1.0

    kind: ClassVar[str] = "pcr"
    array_names: ClassVar[tuple[str, ...]] = ("beta", "alpha")

    def __post_init__(self):
        object.__setattr__(self, "beta", _arr(self.beta))
        object.__setattr__(self, "alpha", _arr(self.alpha))
        if self.beta.shape != self.alpha.shape:
            raise ValueError("beta and alpha must have the same length")

    @property
    def D(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class MCNetParams:
    """Dense layers of the mixture network.

    ``W2`` rows are ordered as K mean heads, K log-stddev heads, K weight
    logits.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    scale: float = 1.0

    kind: ClassVar[str] = "mcnet"
    array_names: ClassVar[tuple[str, ...]] = ("W1", "b1", "W2", "b2")

    def __post_init__(self):
        for name in self.array_names:
            object.__setattr__(self, name, _arr(getattr(self, name)))
        H, D = self.W1.shape
        if self.b1.shape != (H,) or self.W2.shape[1] != H or self.W2.shape[0] % 3:
            raise ValueError("inconsistent MCNet layer shapes")
        if self.b2.shape != (self.W2.shape[0],) or H < 1 or self.W2.shape[0] < 3:
            raise ValueError("inconsistent MCNet layer shapes")

    @property
    def D(self) -> int:
        return self.W1.shape[1]

    @property
    def H(self) -> int:
        return self.W1.shape[0]

    @property
    def K(self) -> int:
        return self.W2.shape[0] // 3


ModelParams = Union[CRParams, PCRParams, MCNetParams]
PARAM_TYPES = {cls.kind: cls for cls in (CRParams, PCRParams, MCNetParams)}


def arrays(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: getattr(params, name) for name in params.array_names}


def with_arrays(params: ModelParams, values: dict[str, np.ndarray]) -> ModelParams:
    return dataclasses.replace(params, **values)


def init_params(kind: str, D: int, rng: np.random.Generator, *, K: int = 2, H: int = 64,
                init_scale: float | None = None, scale: float = 1.0) -> ModelParams:
    """Standard-normal initialisation, multiplied by ``init_scale``.

    The default multiplier is 1 for the linear models and 0.01 for MCNet,
    whose exp-activated stddev heads overflow at unit scale.
    """
    if kind == "cr":
        c = 1.0 if init_scale is None else init_scale
        return CRParams(c * rng.standard_normal(D), c * rng.standard_normal(), scale)
    if kind == "pcr":
        c = 1.0 if init_scale is None else init_scale
        return PCRParams(c * rng.standard_normal(D), c * rng.standard_normal(D), scale)
    if kind == "mcnet":
        c = 0.01 if init_scale is None else init_scale
        return MCNetParams(
            c * rng.standard_normal((H, D)),
            c * rng.standard_normal(H),
            c * rng.standard_normal((3 * K, H)),
            c * rng.standard_normal(3 * K),
            scale,
        )
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# shared likelihood pieces
# ---------------------------------------------------------------------------


def _clip_log_sigma(raw):
    log_sigma = np.clip(raw, _LOG_SIGMA_MIN, _LOG_SIGMA_MAX)
    inside = (raw > _LOG_SIGMA_MIN) & (raw < _LOG_SIGMA_MAX)
    return log_sigma, inside


def _gaussian_censored(mu, log_sigma, batch: Batch):
    """Per-record censored Gaussian NLL and its partials w.r.t. mu and log sigma."""
    sigma = np.exp(log_sigma)
    won = batch.won
    nll = np.empty_like(mu)
    d_mu = np.empty_like(mu)
    d_ls = np.empty_like(mu)

    r = (batch.price[won] - mu[won]) / sigma[won]
    nll[won] = log_sigma[won] + HALF_LOG_2PI + 0.5 * r * r
    d_mu[won] = -r / sigma[won]
    d_ls[won] = 1.0 - r * r

    lost = ~won
    z = (mu[lost] - batch.bid[lost]) / sigma[lost]
    lam = std_normal_mills(z)
    nll[lost] = -log_std_normal_cdf(z)
    d_mu[lost] = -lam / sigma[lost]
    d_ls[lost] = lam * z
    return nll, d_mu, d_ls


def _check_finite(nll, what):
    bad = ~np.isfinite(nll)
    if bad.any():
        raise NumericError(f"non-finite {what} loss at record {int(np.flatnonzero(bad)[0])}")


def _reg_mask(D: int) -> np.ndarray:
    # the bias column is not penalised
    m = np.ones(D)
    m[0] = 0.0
    return m


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def cr_negloglik(params: CRParams, batch, l2: float = 0.0):
    """Censored-regression negative log-likelihood (summed) and its gradient."""
    b = as_batch(batch)
    _check_dim(params, b)
    mu = params.scale * (b.X @ params.beta)
    log_sigma, inside = _clip_log_sigma(np.full(len(b), math.log(params.scale) + params.s))
    nll, d_mu, d_ls = _gaussian_censored(mu, log_sigma, b)
    _check_finite(nll, "CR")
    reg = _reg_mask(params.D)
    loss = float(nll.sum()) + 0.5 * l2 * float(np.sum(reg * params.beta ** 2))
    g_beta = params.scale * (b.X.T @ d_mu) + l2 * reg * params.beta
    g_s = np.sum(d_ls * inside)
    return loss, CRParams(g_beta, g_s, params.scale)


def pcr_negloglik(params: PCRParams, batch, l2: float = 0.0):
    """Heteroscedastic censored regression: per-record stddev exp(alpha . x)."""
    b = as_batch(batch)
    _check_dim(params, b)
    mu = params.scale * (b.X @ params.beta)
    log_sigma, inside = _clip_log_sigma(math.log(params.scale) + b.X @ params.alpha)
    nll, d_mu, d_ls = _gaussian_censored(mu, log_sigma, b)
    _check_finite(nll, "P-CR")
    reg = _reg_mask(params.D)
    loss = float(nll.sum()) + 0.5 * l2 * float(
        np.sum(reg * params.beta ** 2) + np.sum(reg * params.alpha ** 2))
    g_beta = params.scale * (b.X.T @ d_mu) + l2 * reg * params.beta
    g_alpha = b.X.T @ (d_ls * inside) + l2 * reg * params.alpha
    return loss, PCRParams(g_beta, g_alpha, params.scale)


def _mcnet_heads(params: MCNetParams, X):
    h_pre = X @ params.W1.T + params.b1
    h = np.maximum(h_pre, 0.0)
    z = h @ params.W2.T + params.b2
    K = params.K
    mu = params.scale * z[:, :K]
    log_sigma, inside = _clip_log_sigma(math.log(params.scale) + z[:, K:2 * K])
    z_pi = z[:, 2 * K:]
    log_pi = z_pi - logsumexp(z_pi, axis=1, keepdims=True)
    return h_pre, h, mu, log_sigma, inside, log_pi


def mcnet_negloglik(params: MCNetParams, batch, l2: float = 0.0):
    """Censored mixture NLL, with gradients by backpropagation."""
    b = as_batch(batch)
    _check_dim(params, b)
    h_pre, h, mu, log_sigma, inside, log_pi = _mcnet_heads(params, b.X)
    sigma = np.exp(log_sigma)
    won = b.won
    lost = ~won

    comp = np.empty_like(mu)
    dc_mu = np.empty_like(mu)
    dc_ls = np.empty_like(mu)

    r = (b.price[won, None] - mu[won]) / sigma[won]
    comp[won] = log_pi[won] - log_sigma[won] + log_std_normal_pdf(r)
    dc_mu[won] = r / sigma[won]
    dc_ls[won] = r * r - 1.0

    z = (mu[lost] - b.bid[lost, None]) / sigma[lost]
    lam = std_normal_mills(z)
    comp[lost] = log_pi[lost] + log_std_normal_cdf(z)
    dc_mu[lost] = lam / sigma[lost]
    dc_ls[lost] = -lam * z

    lse = logsumexp(comp, axis=1)
    nll = -lse
    _check_finite(nll, "MCNet")
    gamma = np.exp(comp - lse[:, None])

    d_mu = -gamma * dc_mu
    d_ls = -gamma * dc_ls
    d_zpi = np.exp(log_pi) - gamma
    dz = np.concatenate([params.scale * d_mu, d_ls * inside, d_zpi], axis=1)

    g_W2 = dz.T @ h + l2 * params.W2
    g_b2 = dz.sum(axis=0)
    dh_pre = (dz @ params.W2) * (h_pre > 0)
    g_W1 = np.asarray((b.X.T @ dh_pre).T) + l2 * params.W1
    g_b1 = dh_pre.sum(axis=0)

    loss = float(nll.sum()) + 0.5 * l2 * float(np.sum(params.W1 ** 2) + np.sum(params.W2 ** 2))
    return loss, MCNetParams(g_W1, g_b1, g_W2, g_b2, params.scale)


LOSSES = {"cr": cr_negloglik, "pcr": pcr_negloglik, "mcnet": mcnet_negloglik}


def negloglik(params: ModelParams, batch, l2: float = 0.0):
    return LOSSES[params.kind](params, batch, l2)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def _check_dim(params: ModelParams, b: Batch) -> None:
    if b.dimension != params.D:
        raise ValueError(f"feature dimension {b.dimension} does not match model dimension {params.D}")


def _feature_batch(x) -> tuple[Batch, bool]:
    if isinstance(x, FeatureVector):
        return as_batch([Observation(x, 0, False)]), True
    if isinstance(x, Observation):
        return as_batch([x]), True
    if isinstance(x, Batch):
        return x, False
    items = [Observation(v, 0, False) if isinstance(v, FeatureVector) else v for v in x]
    return as_batch(items), False


def predict(params: ModelParams, x) -> GaussianMixture:
    """Predicted winning-price law.

    ``x`` may be a single FeatureVector/Observation (returns a ``(K,)``
    mixture) or a sequence / Batch (returns an ``(n, K)`` mixture).
    """
    b, single = _feature_batch(x)
    _check_dim(params, b)
    n = len(b)
    if params.kind == "cr":
        mu = params.scale * (b.X @ params.beta)
        log_sigma, _ = _clip_log_sigma(np.full(n, math.log(params.scale) + params.s))
        gm = GaussianMixture(np.ones((n, 1)), mu[:, None], np.exp(log_sigma)[:, None])
    elif params.kind == "pcr":
        mu = params.scale * (b.X @ params.beta)
        log_sigma, _ = _clip_log_sigma(math.log(params.scale) + b.X @ params.alpha)
        gm = GaussianMixture(np.ones((n, 1)), mu[:, None], np.exp(log_sigma)[:, None])
    else:
        _, _, mu, log_sigma, _, log_pi = _mcnet_heads(params, b.X)
        gm = GaussianMixture(np.exp(log_pi), mu, np.exp(log_sigma))
    return gm[0] if single else gm


def mcnet_forward(params: MCNetParams, x: FeatureVector) -> GaussianMixture:
    return predict(params, x)


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def _encode_array(a: np.ndarray) -> dict:
    data = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return {"shape": list(a.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"], validate=True)
    shape = tuple(obj["shape"])
    a = np.frombuffer(raw, dtype="<f8")
    if a.size != math.prod(shape):
        raise ModelFormatError("array payload does not match its shape")
    return a.reshape(shape).astype(np.float64)


def save_model(params: ModelParams, vocab_checksum: str = "") -> bytes:
    doc = {
        "kind": params.kind,
        "D": params.D,
        "H": getattr(params, "H", 0),
        "K": getattr(params, "K", 1),
        "scale": params.scale,
        "vocab_checksum": vocab_checksum,
        "arrays": {name: _encode_array(a) for name, a in arrays(params).items()},
    }
    return json.dumps(doc, sort_keys=True, indent=1).encode("utf-8")


def load_model(blob: bytes, vocab_checksum: str | None = None,
               kind: str | None = None) -> tuple[ModelParams, str]:
    """Inverse of :func:`save_model`; returns ``(params, vocab_checksum)``.

    Passing ``vocab_checksum`` or ``kind`` makes a mismatch an error.
    """
    try:
        doc = json.loads(blob.decode("utf-8"))
        cls = PARAM_TYPES[doc["kind"]]
        values = {name: _decode_array(doc["arrays"][name]) for name in cls.array_names}
        params = cls(**values, scale=float(doc["scale"]))
        stored = doc["vocab_checksum"]
        header = (doc["D"], doc["H"], doc["K"])
    except ModelFormatError:
        raise
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"unreadable model file: {exc}") from None
    if header != (params.D, getattr(params, "H", 0), getattr(params, "K", 1)):
        raise ModelFormatError("model header does not match its arrays")
    if kind is not None and kind != params.kind:
        raise ModelFormatError(f"expected a {kind} model, found {params.kind}")
    if vocab_checksum is not None and vocab_checksum != stored:
        raise ModelFormatError("vocabulary checksum mismatch")
    return params, stored


def parameter_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays(params).values()])


def from_parameter_vector(params: ModelParams, vec: Sequence[float]) -> ModelParams:
    vec = np.asarray(vec, dtype=np.float64)
    out, pos = {}, 0
    for name, a in arrays(params).items():
        out[name] = vec[pos:pos + a.size].reshape(a.shape)
        pos += a.size
    return with_arrays(params, out)
