import numpy as np
import pytest
from scipy import stats

from landscape.dist import GaussianMixture, mixture_cdf, quantized_bin_prob
from landscape.featurize import FeatureVector, Observation
from landscape.sim import (
    BENCHMARK,
    SimConfig,
    generate,
    mixture_quantile,
    oracle_anlp,
    read_truths,
    true_expected_cost_check,
    write_truths,
)


def clamped_pmf(gm, top):
    """Pr(price = l) for l = 0..top under rounding to the nearest bin and clamping at 0."""
    p = quantized_bin_prob(gm, np.arange(top + 1))
    p[0] = mixture_cdf(gm, 0.5)
    return p


class TestGenerate:
    def test_histograms_match_truth(self):
        cfg = SimConfig(n_fields=1, attrs_per_field=3, n_records=100_000, bid_policy="fixed",
                        bid_fixed=10 ** 9, seed=5)
        res = generate(cfg)
        prices = np.array([r.winning_price for r in res.records])
        assert all(r.won for r in res.records)
        for a in range(3):
            rows = np.flatnonzero(res.profiles[:, 0] == a)
            truth = res.truths[int(rows[0])]
            top = int(prices[rows].max())
            pmf = clamped_pmf(truth, top)
            observed = np.bincount(prices[rows], minlength=top + 1).astype(float)
            expected = pmf * len(rows)
            # pool sparse bins so every cell expects at least 5
            obs_cells, exp_cells, o_acc, e_acc = [], [], 0.0, 0.0
            for o, e in zip(observed, expected):
                o_acc += o
                e_acc += e
                if e_acc >= 5:
                    obs_cells.append(o_acc)
                    exp_cells.append(e_acc)
                    o_acc = e_acc = 0.0
            obs_cells[-1] += o_acc
            exp_cells[-1] += e_acc + len(rows) * (1 - pmf.sum())
            _, p = stats.chisquare(obs_cells, exp_cells)
            assert p > 0.01

    def test_zero_bids_never_win(self):
        cfg = SimConfig(n_records=5000, mean_lo=200, mean_hi=400, sigma_lo=2, sigma_hi=20,
                        bid_policy="fixed", bid_fixed=0, seed=2)
        res = generate(cfg)
        assert sum(r.won for r in res.records) / 5000 < 1e-3

    def test_seed_repeat(self):
        a = generate(SimConfig(n_records=2000, seed=8))
        b = generate(SimConfig(n_records=2000, seed=8))
        c = generate(SimConfig(n_records=2000, seed=9))
        assert a.records == b.records
        assert np.array_equal(a.truths.means, b.truths.means)
        assert a.records != c.records

    def test_censoring_consistent(self):
        res = generate(SimConfig(n_records=3000, seed=1))
        for r in res.records:
            assert (r.winning_price is not None) == r.won
            if r.won:
                assert 0 <= r.winning_price <= r.bid_price

    def test_identical_profiles_share_a_law(self):
        res = generate(SimConfig(n_records=4000, n_fields=2, attrs_per_field=3, seed=3))
        seen = {}
        for i, prof in enumerate(map(tuple, res.profiles)):
            law = (tuple(res.truths.weights[i]), tuple(res.truths.means[i]), tuple(res.truths.stddevs[i]))
            assert seen.setdefault(prof, law) == law

    def test_quantile_policy(self):
        cfg = SimConfig(n_records=20_000, n_fields=1, attrs_per_field=4, bid_policy="quantile",
                        bid_quantile=0.3, seed=4)
        res = generate(cfg)
        rate = sum(r.won for r in res.records) / cfg.n_records
        assert rate == pytest.approx(0.3, abs=0.02)

    def test_benchmark_shape(self):
        res = generate(BENCHMARK)
        censored = 1 - sum(r.won for r in res.records) / BENCHMARK.n_records
        assert 0.4 <= censored <= 0.6
        assert res.truths.K == 2
        # heteroscedastic: stddevs vary across profiles
        assert np.ptp(res.truths.stddevs[:, 0]) > 10
        res.truths[0].validate()

    @pytest.mark.parametrize("kw", [dict(n_records=0), dict(mean_lo=5, mean_hi=5), dict(sigma_lo=0.5),
                                    dict(bid_policy="greedy"), dict(bid_quantile=1.0, bid_policy="quantile")])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)


class TestOracle:
    def test_all_lost_at_zero(self):
        truths = GaussianMixture(np.ones((3, 1)), np.full((3, 1), 100.0), np.full((3, 1), 5.0))
        data = [Observation(FeatureVector((0,), 1), 0, False)] * 3
        assert oracle_anlp(data, truths) == pytest.approx(0.0, abs=1e-15)

    def test_point_masses(self):
        truths = GaussianMixture(np.ones((2, 1)), np.array([[7.0], [12.0]]), np.full((2, 1), 1e-3))
        data = [Observation(FeatureVector((0,), 1), 20, True, 7), Observation(FeatureVector((0,), 1), 20, True, 12)]
        assert oracle_anlp(data, truths) == pytest.approx(0.0, abs=1e-12)

    def test_length_mismatch(self):
        truths = GaussianMixture(np.ones((2, 1)), np.zeros((2, 1)), np.ones((2, 1)))
        with pytest.raises(ValueError):
            oracle_anlp([Observation(FeatureVector((0,), 1), 0, False)], truths)

    def test_truth_file_round_trip(self, tmp_path):
        res = generate(SimConfig(n_records=50, seed=6))
        write_truths(tmp_path / "t.tsv", res.truths)
        back = read_truths(tmp_path / "t.tsv")
        for name in ("weights", "means", "stddevs"):
            assert np.array_equal(getattr(back, name), getattr(res.truths, name))


class TestExpectedCostCheck:
    def test_zero_bid(self):
        assert true_expected_cost_check(GaussianMixture.single(10, 2), 0.0) == 0.0

    def test_large_bid(self):
        gm = GaussianMixture([0.3, 0.7], [100.0, 300.0], [10.0, 30.0])
        assert true_expected_cost_check(gm, 2000.0) == pytest.approx(0.3 * 100 + 0.7 * 300, rel=1e-9)

    def test_quantile(self):
        gm = GaussianMixture([0.5, 0.5], [100.0, 300.0], [10.0, 10.0])
        assert mixture_quantile(gm, 0.5) == pytest.approx(200.0, abs=1e-6)
