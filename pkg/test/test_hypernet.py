"""
SPDX-License-Identifier: BSD-2
"""

import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from implicit_flow import *


SMALL_SIREN = SirenConfig(hidden_layers=1, width=4)
SMALL_HYPER = HyperConfig(hidden_width=8)


class HyperConfigTest(unittest.TestCase):
    def test_defaults(self):
        hc = HyperConfig()
        self.assertEqual((hc.hidden_width, hc.t0, hc.t1), (128, 0.0, 0.1))
        self.assertEqual(hc.tau(0.05), 0.5)

    def test_degenerate(self):
        with self.assertRaises(IFLOW_Exception) as e:
            HyperConfig(t0=0.3, t1=0.3)
        self.assertEqual(e.exception.error, IFLOW_RC.DEGENERATE_INTERVAL)

    def test_width(self):
        with self.assertRaises(IFLOW_Exception) as e:
            HyperConfig(hidden_width=0)
        self.assertEqual(e.exception.field, "hidden_width")


class HyperInitTest(unittest.TestCase):
    def test_layout(self):
        phi = hyper_init(SMALL_HYPER, SMALL_SIREN, 0)
        mlps = phi.mlps()
        self.assertEqual(len(mlps), len(SMALL_SIREN.layout))
        for mlp, (o, i) in zip(mlps, SMALL_SIREN.layout):
            (first, relu), (second, ident) = mlp
            self.assertEqual(first.shape, (8, 1))
            self.assertEqual(second.shape, (o * i + o, 8))
            self.assertEqual(relu, Activation.relu())
            self.assertEqual(ident, Activation.identity())

    def test_deterministic(self):
        self.assertEqual(
            hyper_init(SMALL_HYPER, SMALL_SIREN, 4), hyper_init(SMALL_HYPER, SMALL_SIREN, 4)
        )

    def test_theta_within_siren_bounds(self):
        siren = SirenConfig(hidden_layers=2, width=16)
        phi = hyper_init(HyperConfig(hidden_width=32), siren, 1)
        theta = hyper_forward(phi, 0.0)
        self.assertTrue(np.all(np.abs(theta.values) <= init_bounds(siren) + 1e-2))

    def test_small_time_dependence(self):
        phi = hyper_init(HyperConfig(), SirenConfig(), 0)
        d = hyper_forward(phi, 0.1).values - hyper_forward(phi, 0.0).values
        self.assertLessEqual(np.max(np.abs(d)), 1e-3)

    def test_default_output_size(self):
        phi = hyper_init(HyperConfig(hidden_width=2), SirenConfig(), 0)
        self.assertEqual(len(hyper_forward(phi, 0.05)), 66690)


class HyperForwardTest(unittest.TestCase):
    def setUp(self):
        phi = hyper_init(SMALL_HYPER, SMALL_SIREN, 2)
        rng = np.random.default_rng(2)
        self.phi = phi.with_values(phi.values + rng.normal(0, 0.1, len(phi)))

    def test_deterministic(self):
        self.assertEqual(hyper_forward(self.phi, 0.07), hyper_forward(self.phi, 0.07))

    def test_continuity(self):
        a = hyper_forward(self.phi, 0.05)
        b = hyper_forward(self.phi, 0.05 + 1e-6)
        self.assertLessEqual(np.max(np.abs(a.values - b.values)), 1e-3)

    def test_output_config(self):
        theta = hyper_forward(self.phi, 0.0)
        self.assertEqual(theta.config, SMALL_SIREN)
        self.assertEqual(len(theta), param_count(SMALL_SIREN))

    def test_non_finite_time(self):
        with self.assertRaises(IFLOW_Exception) as e:
            hyper_forward(self.phi, float("nan"))
        self.assertEqual(e.exception.error, IFLOW_RC.NON_FINITE)


class HyperBackwardTest(unittest.TestCase):
    def setUp(self):
        phi = hyper_init(SMALL_HYPER, SMALL_SIREN, 3)
        rng = np.random.default_rng(3)
        self.phi = phi.with_values(phi.values + rng.normal(0, 0.1, len(phi)))
        self.g = rng.normal(size=param_count(SMALL_SIREN))

    def test_zero(self):
        grad = hyper_backward(self.phi, 0.04, np.zeros(param_count(SMALL_SIREN)))
        assert_array_equal(grad.values, np.zeros(len(self.phi)))

    def test_linear(self):
        a = hyper_backward(self.phi, 0.04, self.g)
        b = hyper_backward(self.phi, 0.04, 2.0 * self.g)
        assert_allclose(b.values, 2.0 * a.values, rtol=1e-14, atol=0)

    def test_matches_finite_differences(self):
        t = 0.04
        analytic = hyper_backward(self.phi, t, self.g)
        numeric = finite_diff_grad(
            lambda p: float(np.dot(self.g, hyper_forward(p, t).values)), self.phi, 1e-5
        )
        self.assertLessEqual(relative_error(analytic, numeric), 1e-5)

    def test_shape(self):
        with self.assertRaises(IFLOW_Exception) as e:
            hyper_backward(self.phi, 0.0, np.zeros(3))
        self.assertEqual(e.exception.error, IFLOW_RC.BAD_SHAPE)
        self.assertEqual(e.exception.layer, IFLOW_LAYER.HYPER)

    def test_end_to_end(self):
        coords = grid_coords(4, 4)
        rng = np.random.default_rng(5)
        targets0 = rng.normal(size=(16, 2))
        targets1 = rng.normal(size=(16, 2))

        def loss(p):
            total = 0.0
            for t, y in ((0.0, targets0), (0.1, targets1)):
                total += 0.5 * regression_loss(siren_forward(hyper_forward(p, t), coords), y)[0]
            return total

        analytic = None
        for t, y in ((0.0, targets0), (0.1, targets1)):
            _, g = siren_value_and_grad(hyper_forward(self.phi, t), coords, y, "squared")
            part = 0.5 * hyper_backward(self.phi, t, g).values
            analytic = part if analytic is None else analytic + part
        numeric = finite_diff_grad(loss, self.phi)
        self.assertLessEqual(relative_error(analytic, numeric), 1e-4)


class HyperBlobTest(unittest.TestCase):
    def test_round_trip(self):
        hc = HyperConfig(hidden_width=3, t0=0.25, t1=-0.5)
        phi = hyper_init(hc, SMALL_SIREN, 1)
        blob = phi.Marshal()
        self.assertEqual(blob[:4], b"IFHN")
        back, offset = HyperParams.Unmarshal(blob)
        self.assertEqual(offset, len(blob))
        self.assertEqual(back, phi)
        self.assertEqual(back.hyper_config, hc)
        self.assertEqual(back.siren_config, SMALL_SIREN)

    def test_siren_magic_rejected(self):
        blob = siren_init(SMALL_SIREN, 0).Marshal()
        with self.assertRaises(IFLOW_Exception) as e:
            HyperParams.Unmarshal(blob)
        self.assertEqual(e.exception.error, IFLOW_RC.BAD_MAGIC)

    def test_truncated(self):
        blob = hyper_init(SMALL_HYPER, SMALL_SIREN, 1).Marshal()
        with self.assertRaises(IFLOW_Exception) as e:
            HyperParams.Unmarshal(blob[:30])
        self.assertEqual(e.exception.error, IFLOW_RC.TRUNCATED)


class InterpolationTest(unittest.TestCase):
    def test_lerp_endpoints_exact(self):
        phi = hyper_init(SMALL_HYPER, SMALL_SIREN, 6)
        self.assertEqual(hyper_lerp(phi, 0.0), hyper_forward(phi, 0.0))
        self.assertEqual(hyper_lerp(phi, 0.1), hyper_forward(phi, 0.1))

    def test_lerp_params(self):
        a = siren_init(SMALL_SIREN, 0)
        b = siren_init(SMALL_SIREN, 1)
        mid = lerp_params(a, b, 0.5)
        assert_allclose(mid.values, 0.5 * (a.values + b.values))
        with self.assertRaises(IFLOW_Exception):
            lerp_params(a, siren_init(SirenConfig(hidden_layers=1, width=5), 0), 0.5)

    def test_consistency_ratio(self):
        phi = hyper_init(SMALL_HYPER, SMALL_SIREN, 7)
        ratio = interpolation_consistency(phi)
        self.assertGreaterEqual(ratio, 0.0)
        self.assertTrue(np.isfinite(ratio))
        self.assertEqual(interpolation_consistency(phi, 0.0), 0.0)


if __name__ == "__main__":
    unittest.main()
