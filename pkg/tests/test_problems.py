import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shufflelab.problems import (
    make_band_quadratic,
    make_sameclass_classification,
    make_signed_example,
)
from shufflelab.rng import substream


def mean_component_grad(problem, x):
    return np.mean([problem.component_grad(i, x) for i in range(problem.component_count)], axis=0)


def heterogeneity_at(problem, x):
    g = problem.grad(x)
    devs = [problem.component_grad(i, x) - g for i in range(problem.component_count)]
    return float(np.mean([d @ d for d in devs]))


class TestSignedExample:
    def test_gradients_at_zero(self):
        p = make_signed_example(4, 1.0)
        x = np.zeros(1)
        got = [float(p.component_grad(i, x)[0]) for i in range(4)]
        assert got == [1.0, 1.0, -1.0, -1.0]
        assert float(p.grad(x)[0]) == 0.0

    def test_zero_sigma_degenerates_to_plain_quadratic(self):
        p = make_signed_example(2, 0.0)
        for xv in [-2.0, 0.3, 5.0]:
            x = np.array([xv])
            assert float(p.component_grad(0, x)[0]) == xv
            assert float(p.component_grad(1, x)[0]) == xv
            assert float(p.value(x)) == xv * xv / 2

    def test_deviations_are_exactly_plus_minus_sigma(self):
        p = make_signed_example(6, 2.0)
        x = np.array([3.0])
        assert float(p.grad(x)[0]) == 3.0
        devs = [float((p.component_grad(i, x) - p.grad(x))[0]) for i in range(6)]
        assert devs == [2.0, 2.0, 2.0, -2.0, -2.0, -2.0]

    def test_metadata(self):
        p = make_signed_example(8, 0.5)
        assert p.dimension == 1
        assert p.component_count == 8
        assert p.smoothness == 1.0
        assert p.optimum_value == 0.0
        assert np.array_equal(p.optimum_point, np.zeros(1))

    def test_odd_count_rejected(self):
        with pytest.raises(ValueError):
            make_signed_example(5, 1.0)

    @given(
        half=st.integers(min_value=1, max_value=20),
        sigma=st.floats(min_value=0.0, max_value=10.0, allow_nan=False),
        xv=st.floats(min_value=-100.0, max_value=100.0, allow_nan=False),
    )
    @settings(max_examples=50, deadline=None)
    def test_component_mean_matches_global(self, half, sigma, xv):
        p = make_signed_example(2 * half, sigma)
        x = np.array([xv])
        assert np.allclose(mean_component_grad(p, x), p.grad(x), rtol=1e-12, atol=1e-12)
        assert heterogeneity_at(p, x) == pytest.approx(sigma * sigma, rel=1e-12, abs=1e-12)


class TestBandQuadratic:
    def test_degenerate_single_dimension(self):
        b = make_band_quadratic(d=1, lam=0.0, sigma_top=0.0, sigma_low=0.0, m=2)
        x = np.array([1.5])
        # A = [[2]] so f(x) = x^2
        assert float(b.value(x)) == pytest.approx(2.25)
        assert float(b.grad(x)[0]) == pytest.approx(3.0)
        g00 = b.low_grad(0, 0, x)
        for i in range(2):
            for j in range(2):
                assert np.array_equal(b.low_grad(i, j, x), g00)

    def test_smoothness_constant_d3(self):
        b = make_band_quadratic(d=3, lam=0.2, sigma_top=1.0, sigma_low=10.0, m=4)
        assert b.smoothness == pytest.approx(2.0 + math.sqrt(2.0) + 0.2, rel=1e-10)

    def test_benchmark_instance_shape(self):
        b = make_band_quadratic(d=20, lam=0.2, sigma_top=100.0, sigma_low=10.0, m=16)
        assert b.top_count == 2
        assert b.low_count == 16
        assert b.optimum_value == 0.0
        assert np.array_equal(b.optimum_point, np.zeros(20))
        x = substream(0, "probe").normal(size=20)
        H = b.hessian
        assert float(b.value(x)) == pytest.approx(0.5 * x @ H @ x, rel=1e-12)
        assert np.allclose(b.grad(x), H @ x, rtol=1e-12)

    def test_odd_low_count_rejected(self):
        with pytest.raises(ValueError):
            make_band_quadratic(d=2, lam=0.0, sigma_top=1.0, sigma_low=1.0, m=3)

    def test_top_components_average_low_components(self):
        b = make_band_quadratic(d=5, lam=0.3, sigma_top=2.0, sigma_low=7.0, m=6)
        rng = substream(1, "probe")
        for _ in range(10):
            x = rng.normal(size=5)
            for i in range(2):
                vals = [b.low_value(i, j, x) for j in range(6)]
                assert np.mean(vals) == pytest.approx(b.top_value(i, x), rel=1e-10, abs=1e-10)
                grads = np.mean([b.low_grad(i, j, x) for j in range(6)], axis=0)
                assert np.allclose(grads, b.top_grad(i, x), rtol=1e-10, atol=1e-10)

    def test_flatten_preserves_global_function(self):
        b = make_band_quadratic(d=4, lam=0.1, sigma_top=3.0, sigma_low=1.0, m=4)
        flat = b.flatten()
        assert flat.component_count == 8
        rng = substream(2, "probe")
        for _ in range(10):
            x = rng.normal(size=4)
            assert flat.value(x) == pytest.approx(b.value(x), rel=1e-12)
            assert np.allclose(mean_component_grad(flat, x), b.grad(x), rtol=1e-10, atol=1e-10)

    def test_flat_component_order_is_low_level_major_within_top(self):
        # flat id c = i*m + j by contract; sign pattern confirms the layout
        b = make_band_quadratic(d=2, lam=0.0, sigma_top=5.0, sigma_low=1.0, m=4)
        flat = b.flatten()
        x = np.zeros(2)
        ones = np.ones(2)
        for i in range(2):
            for j in range(4):
                expect = (5.0 if i == 0 else -5.0) + (1.0 if j < 2 else -1.0)
                assert np.allclose(flat.component_grad(i * 4 + j, x), expect * ones)

    def test_top_view_is_a_two_component_problem(self):
        b = make_band_quadratic(d=3, lam=0.2, sigma_top=4.0, sigma_low=2.0, m=2)
        top = b.top_view()
        assert top.component_count == 2
        x = substream(3, "probe").normal(size=3)
        for i in range(2):
            assert np.allclose(top.component_grad(i, x), b.top_grad(i, x))


class TestSameclassClassification:
    def test_small_instance_batch_bookkeeping(self):
        s = make_sameclass_classification(classes=2, per_class=4, dim=2, batch_size=2, seed=0)
        assert s.component_count == 4
        assert s.batch_labels[0] == (0, 0)
        assert s.batch_labels[1] == (0, 0)
        assert s.batch_labels[2] == (1, 1)
        assert s.batch_labels[3] == (1, 1)

    def test_batch_size_must_divide_per_class(self):
        with pytest.raises(ValueError):
            make_sameclass_classification(classes=2, per_class=5, dim=2, batch_size=2, seed=0)

    def test_heterogeneity_positive_for_separated_classes(self):
        s = make_sameclass_classification(classes=3, per_class=30, dim=5, batch_size=10, seed=0)
        assert s.component_count == 9
        x = np.zeros(s.dimension)
        assert heterogeneity_at(s, x) > 0.0

    def test_standard_batching_reduces_heterogeneity(self):
        same = make_sameclass_classification(classes=3, per_class=30, dim=5, batch_size=10, seed=0)
        std = make_sameclass_classification(
            classes=3, per_class=30, dim=5, batch_size=10, seed=0, batching="standard"
        )
        x = np.zeros(same.dimension)
        # identical data, identical global objective; only the batch composition differs
        assert std.value(x) == pytest.approx(same.value(x), rel=1e-12)
        assert heterogeneity_at(std, x) < heterogeneity_at(same, x)

    def test_redraw_per_epoch_changes_batches_not_objective(self):
        std = make_sameclass_classification(
            classes=2, per_class=6, dim=3, batch_size=3, seed=1,
            batching="standard", redraw_per_epoch=True,
        )
        a = std.at_epoch(1)
        b = std.at_epoch(2)
        assert a.batch_labels != b.batch_labels or not np.array_equal(
            a.batch_point_indices, b.batch_point_indices
        )
        x = substream(4, "probe").normal(size=std.dimension)
        assert a.value(x) == pytest.approx(b.value(x), rel=1e-12)
        # same epoch requested twice gives the identical view
        assert np.array_equal(a.batch_point_indices, std.at_epoch(1).batch_point_indices)

    def test_fixed_problems_return_self_per_epoch(self):
        p = make_signed_example(4, 1.0)
        assert p.at_epoch(7) is p
        s = make_sameclass_classification(classes=2, per_class=4, dim=2, batch_size=2, seed=0)
        assert s.at_epoch(7) is s


ALL_PROBLEMS = [
    lambda: make_signed_example(6, 1.5),
    lambda: make_band_quadratic(d=7, lam=0.2, sigma_top=3.0, sigma_low=10.0, m=4).flatten(),
    lambda: make_band_quadratic(d=7, lam=0.2, sigma_top=3.0, sigma_low=10.0, m=4).top_view(),
    lambda: make_sameclass_classification(classes=3, per_class=12, dim=4, batch_size=4, seed=2),
]


@pytest.mark.parametrize("factory", ALL_PROBLEMS)
def test_mean_consistency_invariant(factory):
    p = factory()
    rng = substream(10, "probe")
    worst = 0.0
    for _ in range(100):
        x = rng.normal(size=p.dimension) * 3.0
        g = p.grad(x)
        gap = float(np.linalg.norm(mean_component_grad(p, x) - g))
        bound = 1e-8 * (1.0 + float(np.linalg.norm(g)))
        assert gap <= bound
        worst = max(worst, gap)
    assert np.isfinite(worst)


@pytest.mark.parametrize("factory", ALL_PROBLEMS)
def test_componentwise_smoothness_invariant(factory):
    p = factory()
    rng = substream(11, "probe")
    L = p.smoothness
    for _ in range(1000):
        x = rng.normal(size=p.dimension) * 2.0
        y = rng.normal(size=p.dimension) * 2.0
        i = int(rng.integers(p.component_count))
        lhs = float(np.linalg.norm(p.component_grad(i, x) - p.component_grad(i, y)))
        assert lhs <= (1.0 + 1e-9) * L * float(np.linalg.norm(x - y))
