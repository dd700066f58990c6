import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from landscape.dist import (
    GaussianMixture,
    expected_cost,
    expected_utility,
    log_std_normal_cdf,
    mixture_cdf,
    mixture_log_pdf,
    mixture_log_sf,
    mixture_sf,
    quantized_bin_prob,
    quantized_lose_logprob,
    quantized_win_logprob,
    std_normal_mills,
    win_probability,
)
from landscape.sim import true_expected_cost_check

from conftest import random_mixture
from oracles import pdf_mass_gauss_legendre

mpmath.mp.dps = 50


def mp_log_cdf(x):
    return float(mpmath.log(mpmath.ncdf(x)))


class TestLogNormalCdf:
    # frozen from mpmath at 50 digits
    @pytest.mark.parametrize("x, expected", [
        (-10.0, -53.23128515051247),
        (10.0, -7.619853024160525e-24),
        (0.0, -0.6931471805599453),
        (-40.0, -804.6084420137538),
    ])
    def test_pinned(self, x, expected):
        assert log_std_normal_cdf(x) == pytest.approx(expected, rel=1e-12, abs=1e-300)

    @pytest.mark.parametrize("x", np.linspace(-60, 12, 37).tolist())
    def test_matches_mpmath(self, x):
        assert log_std_normal_cdf(x) == pytest.approx(mp_log_cdf(x), rel=1e-12, abs=1e-300)

    @given(st.floats(-30, 30))
    def test_symmetry(self, x):
        # Phi(x) + Phi(-x) = 1
        total = math.exp(log_std_normal_cdf(x)) + math.exp(log_std_normal_cdf(-x))
        assert total == pytest.approx(1.0, abs=1e-14)

    def test_finite_far_tail(self):
        assert np.isfinite(log_std_normal_cdf(-1e4))

    @pytest.mark.parametrize("z", [-30.0, -5.0, -0.5, 0.0, 0.7, 4.0])
    def test_mills_is_derivative(self, z):
        h = 1e-6
        fd = (log_std_normal_cdf(z + h) - log_std_normal_cdf(z - h)) / (2 * h)
        assert std_normal_mills(z) == pytest.approx(fd, rel=1e-6)


class TestMixture:
    def test_single_gaussian_pdf(self):
        gm = GaussianMixture.single(3.0, 2.0)
        expected = -0.5 * 0.25 - math.log(2.0) - 0.5 * math.log(2 * math.pi)
        assert mixture_log_pdf(gm, 4.0) == pytest.approx(expected, rel=1e-14)

    def test_log_sf_matches_mpmath_in_tail(self):
        gm = GaussianMixture([0.3, 0.7], [0.0, 10.0], [1.0, 2.0])
        b = 80.0
        exact = mpmath.log(0.3 * mpmath.ncdf(-80) + 0.7 * mpmath.ncdf(-35))
        assert mixture_log_sf(gm, b) == pytest.approx(float(exact), rel=1e-12)

    def test_cdf_sf_complement(self, rng):
        for _ in range(50):
            gm = random_mixture(rng)
            v = rng.uniform(-100, 500)
            assert mixture_cdf(gm, v) + mixture_sf(gm, v) == pytest.approx(1.0, abs=1e-14)

    def test_vectorised_rows(self, rng):
        gms = [random_mixture(rng, 3) for _ in range(4)]
        stacked = GaussianMixture(np.stack([g.weights for g in gms]),
                                  np.stack([g.means for g in gms]),
                                  np.stack([g.stddevs for g in gms]))
        w = np.array([1.0, 50.0, 120.0, 300.0])
        row = quantized_bin_prob(stacked, w)
        for i, g in enumerate(gms):
            assert row[i] == quantized_bin_prob(g, w[i])

    def test_validate(self):
        with pytest.raises(ValueError):
            GaussianMixture([0.5, 0.6], [0, 1], [1, 1]).validate()
        with pytest.raises(ValueError):
            GaussianMixture([1.0], [0.0], [0.0]).validate()
        with pytest.raises(ValueError):
            GaussianMixture([1.0], [0.0], [1.0, 2.0])


class TestQuantized:
    def test_bin_probability_against_mpmath(self):
        gm = GaussianMixture([0.25, 0.75], [10.0, 200.0], [3.0, 40.0])
        w = 13
        exact = sum(p * (mpmath.ncdf((w + 0.5 - m) / s) - mpmath.ncdf((w - 0.5 - m) / s))
                    for p, m, s in zip([0.25, 0.75], [10.0, 200.0], [3.0, 40.0]))
        assert quantized_bin_prob(gm, w) == pytest.approx(float(exact), rel=1e-12)

    def test_far_right_bin_keeps_precision(self):
        # both endpoints deep in the upper tail
        gm = GaussianMixture.single(0.0, 1.0)
        exact = mpmath.ncdf(-19.5) - mpmath.ncdf(-20.5)
        assert quantized_bin_prob(gm, 20) == pytest.approx(float(exact), rel=1e-10)

    def test_lose_is_survival_above_half_bin(self):
        gm = GaussianMixture.single(50.0, 10.0)
        assert quantized_lose_logprob(gm, 40) == pytest.approx(math.log(mixture_sf(gm, 39.5)), rel=1e-13)

    def test_lose_at_zero_bid_is_log_one(self):
        gm = GaussianMixture.single(300.0, 5.0)
        assert quantized_lose_logprob(gm, 0) == pytest.approx(0.0, abs=1e-15)

    def test_floor(self):
        gm = GaussianMixture.single(0.0, 1.0)
        assert quantized_win_logprob(gm, 1000) == pytest.approx(math.log(1e-12))


def _pdf_total(gm):
    """Quadrature of the density split around every component, plus both tails."""
    lo = float(np.min(gm.means - 10 * gm.stddevs))
    hi = float(np.max(gm.means + 10 * gm.stddevs))
    cuts = {lo, hi}
    for m, s in zip(gm.means, gm.stddevs):
        for k in (-10, -4, -1, 0, 1, 4, 10):
            cuts.add(float(m + k * s))
    edges = sorted(cuts)
    f = lambda t: math.exp(mixture_log_pdf(gm, t))
    total = sum(integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
                for a, b in zip(edges[:-1], edges[1:]))
    return total + mixture_cdf(gm, lo) + mixture_sf(gm, hi)


class TestNormalization:
    def test_pdf_integrates_to_one(self, rng):
        for _ in range(50):
            gm = random_mixture(rng)
            total = _pdf_total(gm)
            assert total == pytest.approx(1.0, abs=1e-6)
            # the fixed-node rule used by the acceptance suite agrees with adaptive quad
            assert pdf_mass_gauss_legendre(gm) == pytest.approx(total, abs=1e-12)

    def test_bins_sum_to_one(self, rng):
        for _ in range(200):
            gm = random_mixture(rng)
            lo = int(np.floor(np.min(gm.means - 12 * gm.stddevs)))
            hi = int(np.ceil(np.max(gm.means + 12 * gm.stddevs)))
            bins = quantized_bin_prob(gm, np.arange(lo, hi + 1)).sum()
            total = bins + mixture_cdf(gm, lo - 0.5) + mixture_sf(gm, hi + 0.5)
            assert total == pytest.approx(1.0, abs=1e-9)


class TestExpectedCost:
    def test_matches_quadrature(self, rng):
        for _ in range(40):
            gm = random_mixture(rng)
            b = float(rng.uniform(0, 500))
            ref = true_expected_cost_check(gm, b)
            got = expected_cost(gm, b)
            assert got == pytest.approx(ref, rel=1e-6, abs=1e-12)

    def test_zero_bid(self):
        assert expected_cost(GaussianMixture.single(100, 10), 0.0) == 0.0

    def test_negative_bid_rejected(self):
        with pytest.raises(ValueError):
            expected_cost(GaussianMixture.single(100, 10), -1.0)

    def test_monotone_in_bid(self, rng):
        for _ in range(20):
            gm = random_mixture(rng)
            c = expected_cost(gm, np.linspace(0, 600, 301))
            assert np.all(np.diff(c) >= -1e-12)

    def test_large_bid_approaches_mean(self):
        gm = GaussianMixture([0.4, 0.6], [100.0, 250.0], [10.0, 20.0])
        assert expected_cost(gm, 1e4) == pytest.approx(0.4 * 100 + 0.6 * 250, rel=1e-12)

    def test_below_expected_price(self):
        gm = GaussianMixture([0.4, 0.6], [100.0, 250.0], [10.0, 20.0])
        assert expected_cost(gm, 200.0) < float(gm.mean())

    def test_win_probability_and_utility(self):
        gm = GaussianMixture.single(100.0, 10.0)
        assert win_probability(gm, 100.0) == pytest.approx(0.5, abs=1e-15)
        assert expected_utility(gm, 100.0, 8.0) == pytest.approx(4.0)
        with pytest.raises(ValueError):
            expected_utility(gm, 100.0, math.inf)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 400), st.floats(0.5, 60), st.floats(0, 800))
    def test_single_component_quadrature(self, mu, sigma, b):
        gm = GaussianMixture.single(mu, sigma)
        assert expected_cost(gm, b) == pytest.approx(true_expected_cost_check(gm, b), rel=1e-6, abs=1e-9)
