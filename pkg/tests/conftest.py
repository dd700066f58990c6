import numpy as np
import pytest
import scipy.sparse as sp

from landscape.dist import GaussianMixture
from landscape.featurize import Batch


def random_mixture(rng, K=None):
    K = K or int(rng.integers(1, 5))
    w = rng.dirichlet(np.ones(K))
    mu = rng.uniform(-50.0, 400.0, K)
    sd = np.exp(rng.uniform(np.log(0.5), np.log(80.0), K))
    return GaussianMixture(w, mu, sd)


def random_batch(rng, n=10, D=6, max_price=60):
    """One-hot rows (bias plus two random columns) with mixed wins and losses."""
    rows = []
    for _ in range(n):
        cols = {0} | set(rng.choice(np.arange(1, D), size=min(2, D - 1), replace=False).tolist())
        rows.append(sorted(cols))
    indptr = np.cumsum([0] + [len(r) for r in rows])
    indices = np.concatenate(rows)
    X = sp.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, D))
    won = rng.random(n) < 0.5
    bid = rng.integers(0, max_price, n).astype(np.float64)
    price = np.where(won, rng.integers(0, max_price, n), np.nan).astype(np.float64)
    bid = np.where(won, np.maximum(bid, np.nan_to_num(price)), bid)
    return Batch(X, bid, won, price)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
