"""Bid-log ingestion, trimmed one-hot vocabularies and dataset splits."""

from __future__ import annotations

import bisect
import hashlib
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, TypeVar

import numpy as np
import scipy.sparse as sp

BIAS = ("__bias__", "__bias__")
OTHER = "__other__"
DEFAULT_TRIM = 10

T = TypeVar("T")


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class RawRecord:
    fields: tuple[tuple[str, str], ...]
    bid_price: int
    won: bool
    winning_price: int | None = None

    def __post_init__(self):
        if self.bid_price < 0:
            raise DataError("negative bid price")
        if self.won != (self.winning_price is not None):
            raise DataError("winning price must be present iff the auction was won")
        if self.won and not 0 <= self.winning_price <= self.bid_price:
            raise DataError("winning price must lie in [0, bid]")
        names = [f for f, _ in self.fields]
        if len(set(names)) != len(names):
            raise DataError("malformed record: duplicate field")


@dataclass(frozen=True)
class FeatureVector:
    active: tuple[int, ...]
    dimension: int

    def __post_init__(self):
        a = self.active
        if any(a[i] >= a[i + 1] for i in range(len(a) - 1)):
            raise ValueError("active indices must be strictly increasing")
        if a and (a[0] < 0 or a[-1] >= self.dimension):
            raise ValueError("active index out of range")


@dataclass(frozen=True)
class Observation:
    x: FeatureVector
    bid_price: int
    won: bool
    winning_price: int | None = None

    def __post_init__(self):
        if self.won != (self.winning_price is not None):
            raise DataError("winning price must be present iff the auction was won")
        if self.won and self.winning_price > self.bid_price:
            raise DataError("winning price exceeds bid")


# ---------------------------------------------------------------------------
# log format
# ---------------------------------------------------------------------------


def parse_line(line: str) -> RawRecord:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != 4:
        raise DataError(f"expected 4 tab-separated columns, got {len(parts)}")
    won_s, bid_s, price_s, feats = parts
    if won_s not in ("0", "1"):
        raise DataError(f"bad won flag {won_s!r}")
    won = won_s == "1"
    try:
        bid = int(bid_s)
        price = int(price_s) if price_s else None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    pairs = []
    for item in feats.split(";") if feats else ():
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise DataError(f"malformed field {item!r}")
        pairs.append((name, value))
    return RawRecord(tuple(pairs), bid, won, price)


def format_line(rec: RawRecord) -> str:
    price = "" if rec.winning_price is None else str(rec.winning_price)
    feats = ";".join(f"{k}={v}" for k, v in rec.fields)
    return f"{int(rec.won)}\t{rec.bid_price}\t{price}\t{feats}"


def read_log(path) -> list[RawRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_line(line))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return records


def write_log(path, records: Iterable[RawRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(format_line(rec) + "\n")


def win_rate(records: Sequence[RawRecord | Observation]) -> float:
    if not records:
        raise DataError("no records")
    return sum(1 for r in records if r.won) / len(records)


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


def bin_label(value: str, edges: Sequence[float]) -> str:
    """Map a numeric attribute onto the index of its half-open bin [e_i, e_i+1)."""
    try:
        v = float(value)
    except ValueError:
        raise DataError(f"malformed record: non-numeric value {value!r} in binned field") from None
    return f"bin{bisect.bisect_right(edges, v)}"


def _apply_bins(pairs, binning: Mapping[str, Sequence[float]]):
    if not binning:
        return pairs
    return tuple((f, bin_label(a, binning[f]) if f in binning else a) for f, a in pairs)


def count_attributes(records: Iterable[RawRecord], binning=None) -> Counter:
    """Count (field, attribute) occurrences; counters from shards merge with ``+``."""
    counts: Counter = Counter()
    for rec in records:
        names = [f for f, _ in rec.fields]
        if len(set(names)) != len(names):
            raise DataError("malformed record")
        counts.update(_apply_bins(rec.fields, binning or {}))
    return counts


@dataclass(frozen=True)
class Vocabulary:
    """Column assignment for one-hot features.

    Column 0 is the always-on bias.  Each field owns one ``other`` column that
    absorbs attributes seen fewer than ``trim_threshold`` times in training and
    attributes never seen at all.
    """

    index_of: Mapping[tuple[str, str], int]
    dimension: int
    trim_threshold: int
    other_bins: Mapping[str, int]
    binning: Mapping[str, tuple[float, ...]] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, counts: Counter, trim_threshold: int, binning=None) -> "Vocabulary":
        if not counts:
            raise DataError("no records")
        if trim_threshold < 0:
            raise ValueError("trim_threshold must be nonnegative")
        fields = sorted({f for f, _ in counts})
        index_of = {}
        other_bins = {}
        col = 1
        for f in fields:
            other_bins[f] = col
            col += 1
            for attr in sorted(a for (g, a) in counts if g == f):
                if counts[(f, attr)] >= trim_threshold:
                    index_of[(f, attr)] = col
                    col += 1
        bins = {k: tuple(float(e) for e in v) for k, v in (binning or {}).items()}
        return cls(index_of, col, trim_threshold, other_bins, bins)

    def column(self, field_name: str, attribute: str) -> int | None:
        idx = self.index_of.get((field_name, attribute))
        if idx is None:
            return self.other_bins.get(field_name)
        return idx

    def labels(self) -> list[tuple[str, str]]:
        out = [BIAS] * self.dimension
        for f, idx in self.other_bins.items():
            out[idx] = (f, OTHER)
        for key, idx in self.index_of.items():
            out[idx] = key
        return out

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"{self.dimension}\t{self.trim_threshold}\n")
        for f in sorted(self.binning):
            buf.write("#bins\t{}\t{}\n".format(f, ",".join(repr(e) for e in self.binning[f])))
        for idx, (f, a) in enumerate(self.labels()):
            buf.write(f"{f}\t{a}\t{idx}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        lines = text.splitlines()
        if not lines:
            raise DataError("empty vocabulary file")
        try:
            dim_s, trim_s = lines[0].split("\t")
            dimension, trim = int(dim_s), int(trim_s)
            index_of, other_bins, binning = {}, {}, {}
            seen = set()
            for line in lines[1:]:
                parts = line.split("\t")
                if parts[0] == "#bins":
                    binning[parts[1]] = tuple(float(e) for e in parts[2].split(",") if e)
                    continue
                f, a, idx_s = parts
                idx = int(idx_s)
                seen.add(idx)
                if (f, a) == BIAS:
                    if idx != 0:
                        raise DataError("bias column must be 0")
                elif a == OTHER:
                    other_bins[f] = idx
                else:
                    index_of[(f, a)] = idx
        except ValueError as exc:
            raise DataError(f"malformed vocabulary: {exc}") from None
        if seen != set(range(dimension)):
            raise DataError("vocabulary indices do not cover 0..dimension-1")
        return cls(index_of, dimension, trim, other_bins, binning)

    def checksum(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def build_vocabulary(records: Iterable[RawRecord], trim_threshold: int = DEFAULT_TRIM,
                     binning: Mapping[str, Sequence[float]] | None = None) -> Vocabulary:
    counts = count_attributes(records, binning)
    return Vocabulary.from_counts(counts, trim_threshold, binning)


def encode(record: RawRecord, vocab: Vocabulary) -> Observation:
    cols = {0}
    for f, a in _apply_bins(record.fields, vocab.binning):
        idx = vocab.column(f, a)
        # fields absent from training have no column at all
        if idx is not None:
            cols.add(idx)
    x = FeatureVector(tuple(sorted(cols)), vocab.dimension)
    return Observation(x, record.bid_price, record.won, record.winning_price)


def encode_all(records: Iterable[RawRecord], vocab: Vocabulary) -> list[Observation]:
    return [encode(r, vocab) for r in records]


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def split_sizes(n: int, ratios: Sequence[float] = (0.6, 0.2, 0.2)) -> tuple[int, ...]:
    if abs(math.fsum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    if any(r < 0 for r in ratios):
        raise ValueError("split ratios must be nonnegative")
    sizes = [int(round(n * r)) for r in ratios[:-1]]
    sizes.append(n - sum(sizes))
    if sizes[-1] < 0:
        raise ValueError("split ratios overflow the dataset")
    return tuple(sizes)


def split_indices(n: int, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> tuple[np.ndarray, ...]:
    if n <= 0:
        raise DataError("cannot split an empty dataset")
    sizes = split_sizes(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    return tuple(np.split(perm, np.cumsum(sizes)[:-1]))


def split_dataset(data: Sequence[T], ratios=(0.6, 0.2, 0.2), seed: int = 0) -> tuple[list[T], ...]:
    parts = split_indices(len(data), ratios, seed)
    return tuple([data[i] for i in part] for part in parts)


# ---------------------------------------------------------------------------
# dense array view used by the models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    """Column-oriented view of a list of observations.

    ``X`` is a CSR matrix of one-hot rows; ``price`` holds the winning price
    for won records and NaN for lost ones.
    """

    X: sp.csr_matrix
    bid: np.ndarray
    won: np.ndarray
    price: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "Batch":
        return Batch(self.X[idx], self.bid[idx], self.won[idx], self.price[idx])

    def slice(self, start: int, stop: int) -> "Batch":
        return Batch(self.X[start:stop], self.bid[start:stop], self.won[start:stop],
                     self.price[start:stop])


def as_batch(data: Sequence[Observation] | Batch, dimension: int | None = None) -> Batch:
    if isinstance(data, Batch):
        return data
    if not data:
        raise DataError("empty dataset")
    dim = data[0].x.dimension if dimension is None else dimension
    indptr = np.zeros(len(data) + 1, dtype=np.int64)
    cols = []
    for i, obs in enumerate(data):
        if obs.x.dimension != dim:
            raise DataError(f"record {i}: dimension {obs.x.dimension} != {dim}")
        cols.extend(obs.x.active)
        indptr[i + 1] = len(cols)
    indices = np.asarray(cols, dtype=np.int64)
    X = sp.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(len(data), dim))
    bid = np.array([o.bid_price for o in data], dtype=np.float64)
    won = np.array([o.won for o in data], dtype=bool)
    price = np.array([np.nan if o.winning_price is None else o.winning_price for o in data],
                     dtype=np.float64)
    return Batch(X, bid, won, price)


def iter_records(lines: Iterable[str]) -> Iterator[RawRecord]:
    for line in lines:
        if line.strip():
            yield parse_line(line)
