"""Adam and the mini-batch training loop with train-loss early stopping."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .featurize import Batch, DataError, Observation, as_batch
from .models import ModelParams, NumericError, arrays, init_params, negloglik, with_arrays

log = logging.getLogger(__name__)

KINDS = ("cr", "pcr", "mcnet")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 1024
    l2: float = 0.0
    max_epochs: int = 50
    early_stop_patience: int = 5
    early_stop_min_delta: float = 1e-4
    seed: int = 0
    K: int = 2
    H: int = 64
    init_scale: float | None = None
    price_scale: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("batch_size, max_epochs and early_stop_patience must be positive")
        if self.l2 < 0 or self.early_stop_min_delta < 0:
            raise ValueError("l2 and early_stop_min_delta must be nonnegative")
        if self.K < 1 or self.H < 1:
            raise ValueError("K and H must be positive")
        if self.price_scale is not None and self.price_scale <= 0:
            raise ValueError("price_scale must be positive")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class AdamState:
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        a = arrays(params)
        return cls({k: np.zeros_like(v) for k, v in a.items()},
                   {k: np.zeros_like(v) for k, v in a.items()})


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    g_all = arrays(grads)
    for name, p in arrays(params).items():
        g = g_all[name]
        m = b1 * state.first_moment[name] + (1.0 - b1) * g
        v = b2 * state.second_moment[name] + (1.0 - b2) * g * g
        new_p[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(new_m, new_v, t, b1, b2, state.epsilon)
    return with_arrays(params, new_p), new_state


def default_price_scale(batch: Batch) -> float:
    """Median bid, a data-derived unit for the model outputs."""
    return float(max(1.0, np.median(batch.bid)))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_anlp: float | None
    seconds: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[float]
    epochs: list[EpochRecord] = field(default_factory=list)

    def __iter__(self):
        # unpacks as (params, history)
        return iter((self.params, self.history))


def batch_objective(params: ModelParams, batch: Batch, l2: float):
    """Mean per-record NLL plus (l2/2)*||w||^2, with gradient."""
    n = len(batch)
    loss, grad = negloglik(params, batch, l2 * n)
    scaled = {k: v / n for k, v in arrays(grad).items()}
    return loss / n, with_arrays(grad, scaled)


def train(kind: str, train_set: Sequence[Observation] | Batch, config: TrainConfig,
          valid_set: Sequence[Observation] | Batch | None = None,
          valid_metric: Callable[[ModelParams, Batch], float] | None = None) -> TrainResult:
    """Fit one model kind by mini-batch Adam.

    Stops when the epoch's mean training objective fails to improve by
    ``early_stop_min_delta`` for ``early_stop_patience`` consecutive epochs.
    ``valid_metric`` is only recorded, never used for stopping.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if isinstance(train_set, Batch):
        data = train_set
    elif not train_set:
        raise DataError("empty training set")
    else:
        data = as_batch(train_set)
    valid = as_batch(valid_set) if valid_set is not None and len(valid_set) else None
    n = len(data)
    rng = np.random.default_rng(config.seed)
    scale = config.price_scale or default_price_scale(data)
    params = init_params(kind, data.dimension, rng, K=config.K, H=config.H,
                         init_scale=config.init_scale, scale=scale)
    state = AdamState.zeros_like(params)
    history: list[float] = []
    epochs: list[EpochRecord] = []
    best = math.inf
    stale = 0
    # overflow surfaces as a non-finite loss, reported as NumericError below
    with threadpool_limits(limits=1), np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.max_epochs + 1):
            t0 = time.perf_counter()
            shuffled = data.take(rng.permutation(n))
            total = 0.0
            for start in range(0, n, config.batch_size):
                mb = shuffled.slice(start, start + config.batch_size)
                try:
                    loss, grad = batch_objective(params, mb, config.l2)
                except NumericError as exc:
                    raise NumericError(f"epoch {epoch}, batch starting at {start}: {exc}") from None
                params, state = adam_step(params, grad, state, config.learning_rate)
                total += loss * len(mb)
            epoch_loss = total / n
            if not math.isfinite(epoch_loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            history.append(epoch_loss)
            v = valid_metric(params, valid) if (valid is not None and valid_metric) else None
            epochs.append(EpochRecord(epoch, epoch_loss, v, time.perf_counter() - t0))
            log.debug("%s epoch %d loss %.6f", kind, epoch, epoch_loss)
            if epoch_loss < best - config.early_stop_min_delta:
                best = epoch_loss
                stale = 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    return TrainResult(params, history, epochs)
