"""Moebius circle maps: values, derivatives, combinations and bisection inverse."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eulerflow.exceptions import ConvergenceFailure, InvalidParameter
from eulerflow.mobius import (MobiusCombination, anchored_forward, combination_forward,
                              combination_inverse, combination_log_det, kernel_terms,
                              mobius_forward, mobius_log_det, mobius_point)
from eulerflow.rotations import TWO_PI, circular_distance


def random_combination(rng, k=None, max_radius=0.9):
    k = k or int(rng.integers(1, 9))
    weights = rng.dirichlet(np.ones(k))
    r = max_radius * np.sqrt(rng.uniform(0, 1, k))
    a = rng.uniform(0, TWO_PI, k)
    return MobiusCombination(weights, np.stack([r * np.cos(a), r * np.sin(a)], 1))


class TestSingleKernel:
    def test_origin_is_identity(self, rng):
        theta = rng.uniform(0, TWO_PI, 100)
        np.testing.assert_allclose(mobius_forward([0.0, 0.0], theta), theta, atol=1e-15)
        np.testing.assert_array_equal(mobius_log_det([0.0, 0.0], theta), 0.0)

    def test_known_value(self):
        # x - w = (-0.5, 1), factor 0.75 / 1.25 = 0.6, image (-0.8, 0.6)
        assert mobius_forward([0.5, 0.0], np.pi / 2) == pytest.approx(math.atan2(0.6, -0.8), abs=1e-12)
        assert mobius_forward([0.5, 0.0], np.pi / 2) == pytest.approx(2.49809154479651, abs=1e-12)

    def test_real_axis_fixed_point(self):
        assert mobius_forward([0.5, 0.0], np.pi) == pytest.approx(np.pi, abs=1e-12)

    def test_known_log_det(self):
        assert mobius_log_det([0.5, 0.0], np.pi / 2) == pytest.approx(math.log(0.6), abs=1e-10)

    def test_unit_norm_output(self, rng):
        w = rng.uniform(-0.6, 0.6, (500, 2))
        y = mobius_point(w, rng.uniform(0, TWO_PI, 500))
        np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)

    def test_log_det_matches_finite_difference(self, rng):
        for _ in range(200):
            w = rng.uniform(-0.6, 0.6, 2)
            t = rng.uniform(0.1, TWO_PI - 0.1)
            h = 1e-6
            fd = (anchored_forward(w, t + h) - anchored_forward(w, t - h)) / (2 * h)
            ld = mobius_log_det(w, t)
            assert abs(ld - np.log(fd)) / (abs(ld) + 1e-12) < 1e-5 or abs(ld - np.log(fd)) < 1e-9

    def test_log_det_integrates_to_circle(self):
        # trapezoid rule on a periodic integrand, 4096 nodes
        theta = np.arange(4096) * TWO_PI / 4096
        for w in ([0.5, 0.0], [0.3, -0.6], [-0.1, 0.8]):
            integral = np.sum(np.exp(mobius_log_det(w, theta))) * TWO_PI / 4096
            assert integral == pytest.approx(TWO_PI, abs=1e-6)

    def test_rejects_outside_disk(self):
        with pytest.raises(InvalidParameter):
            mobius_forward([1.0, 0.0], 0.3)
        with pytest.raises(InvalidParameter):
            mobius_log_det([0.8, 0.8], 0.3)


class TestCombination:
    def test_single_kernel_is_anchored_map(self, rng):
        c = MobiusCombination([1.0], [[0.5, 0.0]])
        theta = rng.uniform(0, TWO_PI, 100)
        np.testing.assert_allclose(c.forward(theta), anchored_forward([0.5, 0.0], theta), atol=1e-14)
        np.testing.assert_allclose(c.log_det(theta), mobius_log_det([0.5, 0.0], theta), atol=1e-14)

    def test_anchored_differs_from_raw_by_constant(self, rng):
        theta = rng.uniform(0, TWO_PI, 100)
        w = [0.5, 0.2]
        shift = circular_distance(anchored_forward(w, theta) + mobius_forward(w, 0.0),
                                  mobius_forward(w, theta))
        np.testing.assert_allclose(shift, 0.0, atol=1e-12)

    def test_origin_kernels_identity(self, rng):
        c = MobiusCombination(rng.dirichlet(np.ones(5)), np.zeros((5, 2)))
        theta = rng.uniform(0, TWO_PI, 100)
        np.testing.assert_allclose(c.forward(theta), theta, atol=1e-14)
        np.testing.assert_allclose(c.log_det(theta), 0.0, atol=1e-14)

    def test_fixes_zero(self, rng):
        for _ in range(20):
            assert random_combination(rng).forward(0.0) == 0.0

    def test_two_kernel_monotone(self):
        c = MobiusCombination([0.5, 0.5], [[0.3, 0.0], [0.0, 0.3]])
        grid = np.arange(10000) * TWO_PI / 10000
        assert np.all(np.diff(c.forward(grid)) > 0)
        assert np.all(np.exp(c.log_det(grid)) > 0)

    def test_monotone_random(self, rng):
        grid = np.arange(10000) * TWO_PI / 10000
        for _ in range(20):
            c = random_combination(rng, max_radius=0.99)
            assert np.all(np.diff(c.forward(grid)) > 0)

    def test_log_det_matches_finite_difference(self, rng):
        for _ in range(1000):
            c = random_combination(rng)
            t = rng.uniform(0.01, TWO_PI - 0.01)
            h = 1e-6
            fd = (c.forward(t + h) - c.forward(t - h)) / (2 * h)
            ld = c.log_det(t)
            assert abs(ld - np.log(fd)) / (abs(ld) + 1e-12) < 1e-5 or abs(ld - np.log(fd)) < 1e-9

    def test_log_det_integrates_to_circle(self, rng):
        theta = np.arange(4096) * TWO_PI / 4096
        for _ in range(10):
            c = random_combination(rng, max_radius=0.8)
            integral = np.sum(np.exp(c.log_det(theta))) * TWO_PI / 4096
            assert integral == pytest.approx(TWO_PI, abs=1e-6)

    def test_invalid_weights(self):
        with pytest.raises(InvalidParameter):
            MobiusCombination([0.6, 0.6], [[0, 0], [0, 0]])
        with pytest.raises(InvalidParameter):
            MobiusCombination([1.2, -0.2], [[0, 0], [0, 0]])


class TestKernelTermDerivatives:
    """Analytic parameter derivatives used in backprop against central differences."""

    def test_parameter_derivatives(self, rng):
        n, k, h = 50, 3, 1e-6
        kernels = rng.uniform(-0.5, 0.5, (n, k, 2))
        theta = rng.uniform(0.1, TWO_PI - 0.1, n)
        t = kernel_terms(kernels, theta, derivatives=True)
        for j, (dF, ddF) in enumerate((("dF_du", "ddF_du"), ("dF_dv", "ddF_dv"))):
            kp, km = kernels.copy(), kernels.copy()
            kp[..., j] += h
            km[..., j] -= h
            tp, tm = kernel_terms(kp, theta), kernel_terms(km, theta)
            np.testing.assert_allclose(t[dF], (tp["F"] - tm["F"]) / (2 * h), rtol=1e-6, atol=1e-7)
            np.testing.assert_allclose(t[ddF], (tp["dF"] - tm["dF"]) / (2 * h), rtol=1e-6, atol=1e-7)
        tp = kernel_terms(kernels, theta + h)
        tm = kernel_terms(kernels, theta - h)
        np.testing.assert_allclose(t["ddF_dt"], (tp["dF"] - tm["dF"]) / (2 * h), rtol=1e-6, atol=1e-7)


class TestInverse:
    def test_identity(self, rng):
        c = MobiusCombination([1.0], [[0.0, 0.0]])
        theta = rng.uniform(0, TWO_PI, 100)
        np.testing.assert_allclose(c.inverse(theta), theta, atol=1e-12)

    def test_single_kernel_round_trip(self):
        c = MobiusCombination([1.0], [[0.5, 0.0]])
        back = c.inverse(c.forward(np.pi / 2), eps=1e-9)
        assert abs(back - np.pi / 2) < 1e-8

    def test_random_round_trips(self, rng):
        eps = 1e-8
        bound = math.ceil(math.log2(TWO_PI / eps)) + 2
        for _ in range(1000):
            c = random_combination(rng)
            t = rng.uniform(0, TWO_PI)
            back, n_iter = c.inverse(c.forward(t), eps=eps, return_iterations=True)
            assert circular_distance(back, t) <= eps
            assert n_iter <= bound

    def test_forward_of_inverse(self, rng):
        eps = 1e-9
        for _ in range(200):
            c = random_combination(rng, max_radius=0.99)
            target = rng.uniform(0, TWO_PI)
            assert circular_distance(c.forward(c.inverse(target, eps=eps)), target) <= eps

    def test_batched(self, rng):
        n, k = 2000, 8
        w = rng.dirichlet(np.ones(k), n)
        kern = rng.uniform(-0.65, 0.65, (n, k, 2))
        theta = rng.uniform(0, TWO_PI, n)
        back = combination_inverse(w, kern, combination_forward(w, kern, theta), eps=1e-9)
        assert np.max(circular_distance(back, theta)) < 1e-8

    def test_non_finite_target(self):
        c = MobiusCombination([1.0], [[0.2, 0.1]])
        with pytest.raises(ConvergenceFailure):
            c.inverse(np.nan)

    def test_nan_parameters_fail(self):
        w = np.array([[0.5, 0.5]])
        kern = np.array([[[np.nan, 0.0], [0.1, 0.0]]])
        with pytest.raises(ConvergenceFailure):
            combination_inverse(w, kern, np.array([3.0]), eps=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, TWO_PI, exclude_max=True), st.floats(-0.7, 0.7), st.floats(-0.7, 0.7))
    def test_round_trip_property(self, t, u, v):
        c = MobiusCombination([0.3, 0.7], [[u, v], [v, -u]])
        assert circular_distance(c.inverse(c.forward(t), eps=1e-9), t) <= 1e-9

    def test_log_det_consistent_with_batched(self, rng):
        c = random_combination(rng, k=4)
        theta = rng.uniform(0, TWO_PI, 10)
        w = np.broadcast_to(c.weights, (10, 4))
        k = np.broadcast_to(c.kernels, (10, 4, 2))
        np.testing.assert_allclose(combination_log_det(w, k, theta), c.log_det(theta), atol=1e-15)
