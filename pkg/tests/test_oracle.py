import numpy as np
import pytest

from shufflelab.oracle import DivergenceError, GradientOracle, NoiseSpec
from shufflelab.problems import make_band_quadratic, make_signed_example
from shufflelab.rng import RngStream, substream


def draw_noise(oracle, problem, i, x, count, seed=0):
    g = substream(seed, "test-noise")
    exact = problem.component_grad(i, x)
    return np.stack([oracle.query(i, x, g) - exact for _ in range(count)])


class TestExactMode:
    def test_returns_exact_gradient(self):
        p = make_signed_example(4, 1.5)
        o = GradientOracle(p)
        x = np.zeros(1)
        assert float(o.query(0, x, None)[0]) == 1.5
        assert float(o.query(3, x, None)[0]) == -1.5

    def test_gaussian_with_zero_noise_is_exact(self):
        p = make_signed_example(4, 1.0)
        o = GradientOracle(p, mode="gaussian", noise=NoiseSpec(zeta=0.0, P=0.0))
        x = np.array([0.7])
        assert np.array_equal(o.query(1, x, RngStream(0, "noise", (1, 0))), p.component_grad(1, x))

    def test_nonfinite_point_rejected(self):
        p = make_signed_example(2, 1.0)
        o = GradientOracle(p)
        with pytest.raises(DivergenceError):
            o.query(0, np.array([np.nan]), None)
        with pytest.raises(DivergenceError):
            o.query(0, np.array([np.inf]), None)


class TestGaussianMoments:
    def test_additive_variance_window(self):
        p = make_signed_example(2, 1.0)
        o = GradientOracle(p, mode="gaussian", noise=NoiseSpec(zeta=1.0, P=0.0))
        xi = draw_noise(o, p, 0, np.zeros(1), 100_000)
        assert np.linalg.norm(xi.mean(axis=0)) <= 0.02
        second = float((xi * xi).sum(axis=1).mean())
        assert 0.97 <= second <= 1.03

    def test_gradient_proportional_variance_window(self):
        # ||grad f(x)||^2 = 9 at x = 3, so P = 4 targets E||xi||^2 = 36
        p = make_signed_example(2, 1.0)
        o = GradientOracle(p, mode="gaussian", noise=NoiseSpec(zeta=0.0, P=4.0))
        xi = draw_noise(o, p, 0, np.array([3.0]), 100_000)
        second = float((xi * xi).sum(axis=1).mean())
        assert 34.9 <= second <= 37.1

    def test_zero_mean_within_standard_errors(self):
        p = make_band_quadratic(d=6, lam=0.1, sigma_top=1.0, sigma_low=2.0, m=4).flatten()
        o = GradientOracle(p, mode="gaussian", noise=NoiseSpec(zeta=2.0, P=1.0))
        x = substream(1, "probe").normal(size=6)
        xi = draw_noise(o, p, 2, x, 50_000)
        se = xi.std(axis=0, ddof=1) / np.sqrt(len(xi))
        assert np.all(np.abs(xi.mean(axis=0)) <= 5.0 * se)

    def test_variance_contract_at_random_probes(self):
        p = make_band_quadratic(d=4, lam=0.2, sigma_top=3.0, sigma_low=1.0, m=2).flatten()
        o = GradientOracle(p, mode="gaussian", noise=NoiseSpec(zeta=1.5, P=0.5))
        rng = substream(2, "probe")
        for _ in range(10):
            x = rng.normal(size=4)
            target = 1.5**2 + 0.5 * float(p.grad(x) @ p.grad(x))
            xi = draw_noise(o, p, 1, x, 20_000, seed=3)
            sq = (xi * xi).sum(axis=1)
            se = float(sq.std(ddof=1) / np.sqrt(len(sq)))
            assert abs(float(sq.mean()) - target) <= 5.0 * se

    def test_reproducible_across_identical_streams(self):
        p = make_signed_example(4, 1.0)
        o = GradientOracle(p, mode="gaussian", noise=NoiseSpec(zeta=1.0, P=0.0))
        x = np.array([0.5])
        s = RngStream(42, "noise", (7, 3))
        assert np.array_equal(o.query(2, x, s), o.query(2, x, s))


class TestInternalSgd:
    def test_single_low_component_is_exact(self):
        b = make_band_quadratic(d=3, lam=0.1, sigma_top=2.0, sigma_low=9.0, m=2)
        # m=1 is odd, so emulate with sigma_low = 0: every j gives the top gradient
        b0 = make_band_quadratic(d=3, lam=0.1, sigma_top=2.0, sigma_low=0.0, m=2)
        o = GradientOracle(b0, mode="internal_sgd")
        x = substream(5, "probe").normal(size=3)
        for k in range(5):
            got = o.query(1, x, RngStream(0, "noise", (1, k)))
            assert np.allclose(got, b0.top_grad(1, x), rtol=1e-12)
        assert o.component_count == b.top_count == 2

    def test_low_level_variance_window(self):
        # d=1 band with sigma_low=10: xi = low - top gradient has norm 10 always
        b = make_band_quadratic(d=1, lam=0.0, sigma_top=0.0, sigma_low=10.0, m=8)
        o = GradientOracle(b, mode="internal_sgd")
        g = substream(6, "test-noise")
        x = np.array([0.3])
        sq = []
        for _ in range(10_000):
            xi = o.query(0, x, g) - b.top_grad(0, x)
            sq.append(float(xi @ xi))
        assert 97.0 <= float(np.mean(sq)) <= 103.0

    def test_unbiased_over_low_components(self):
        b = make_band_quadratic(d=4, lam=0.2, sigma_top=1.0, sigma_low=5.0, m=6)
        x = substream(7, "probe").normal(size=4)
        for i in range(2):
            mean = np.mean([b.low_grad(i, j, x) for j in range(6)], axis=0)
            assert np.allclose(mean, b.top_grad(i, x), rtol=1e-12, atol=1e-12)

    def test_requires_two_level_problem(self):
        p = make_signed_example(4, 1.0)
        with pytest.raises(ValueError):
            GradientOracle(p, mode="internal_sgd")


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(zeta=-1.0, P=0.0)
    with pytest.raises(ValueError):
        NoiseSpec(zeta=0.0, P=-0.5)
    with pytest.raises(ValueError):
        GradientOracle(make_signed_example(2, 1.0), mode="banana")
