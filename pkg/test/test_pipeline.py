"""
SPDX-License-Identifier: BSD-2
"""

import math
import unittest
from unittest import mock

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from implicit_flow import *
from implicit_flow import pipeline

from .IFLOW_BaseTest import circle_spec, tiny_encode_config, translation_spec


def _translation_flows(spec=None):
    spec = spec or translation_spec()
    return scene_bidirectional(spec, spec.t_start, spec.t_end)


class EncodeTest(unittest.TestCase):
    def test_strategies(self):
        fwd, bwd = _translation_flows()
        for strategy, count in (("hypernet", 1), ("single_siren", 1), ("two_sirens", 2)):
            scene = encode(fwd, bwd, tiny_encode_config(strategy=strategy))
            self.assertEqual(scene.strategy.value, strategy)
            self.assertEqual(len(scene.params), count)
            self.assertEqual((scene.width, scene.height), (8, 8))
            self.assertEqual(scene.flow_scale, 8.0)
            self.assertTrue(math.isfinite(scene.final_loss))
            self.assertEqual(scene.config["strategy"], strategy)
            f = scene.normalized_flow(0.05)
            self.assertEqual(f.size, (8, 8))
            self.assertTrue(np.all(np.isfinite(f.data)))

    def test_single_siren_has_time_input(self):
        fwd, bwd = _translation_flows()
        scene = encode(fwd, bwd, tiny_encode_config(strategy="single_siren"))
        self.assertEqual(scene.params[0].config.input_dims, 3)

    def test_deterministic(self):
        fwd, bwd = _translation_flows()
        cfg = tiny_encode_config(seed=3)
        self.assertEqual(encode(fwd, bwd, cfg), encode(fwd, bwd, cfg))

    def test_seed_matters(self):
        fwd, bwd = _translation_flows()
        a = encode(fwd, bwd, tiny_encode_config(seed=1))
        b = encode(fwd, bwd, tiny_encode_config(seed=2))
        self.assertNotEqual(a, b)

    def test_loss_decreases(self):
        fwd, bwd = _translation_flows()
        start = encode(fwd, bwd, tiny_encode_config(iterations=1))
        trained = encode(fwd, bwd, tiny_encode_config(iterations=200))
        self.assertLess(trained.final_loss, 0.5 * start.final_loss)

    def test_minibatch(self):
        fwd, bwd = _translation_flows()
        scene = encode(fwd, bwd, tiny_encode_config(batch_size=16))
        self.assertTrue(math.isfinite(scene.final_loss))

    def test_mismatch(self):
        fwd, _ = _translation_flows()
        with self.assertRaises(IFLOW_Exception) as e:
            encode(fwd, FlowField.zeros(4, 8), tiny_encode_config())
        self.assertEqual(e.exception.error, IFLOW_RC.BAD_SHAPE)

    def test_diverged(self):
        huge = FlowField.constant(4, 4, (1e300, 0.0))
        for strategy in ("hypernet", "two_sirens"):
            with self.assertRaises(IFLOW_Exception) as e:
                encode(huge, huge.scaled(-1.0), tiny_encode_config(strategy=strategy))
            self.assertEqual(e.exception.error, IFLOW_RC.DIVERGED)
            self.assertEqual(e.exception.layer, IFLOW_LAYER.PIPELINE)
            self.assertEqual(e.exception.iteration, 0)


class HypernetGradientTest(unittest.TestCase):
    def test_matches_loss(self):
        phi = hyper_init(HyperConfig(hidden_width=3), SirenConfig(hidden_layers=1, width=3), 0)
        coords = grid_coords(3, 3)
        rng = np.random.default_rng(0)
        y0 = rng.normal(size=(9, 2))
        y1 = rng.normal(size=(9, 2))
        for mode in ("squared", "norm"):
            loss, grad = hypernet_value_and_grad(phi, coords, y0, y1, 0.0, 0.1, mode)
            self.assertAlmostEqual(
                loss, pipeline._hypernet_loss(phi, coords, y0, y1, 0.0, 0.1, mode), places=12
            )
            numeric = finite_diff_grad(
                lambda p: pipeline._hypernet_loss(p, coords, y0, y1, 0.0, 0.1, mode), phi
            )
            self.assertLessEqual(relative_error(grad, numeric), 1e-4)

    def test_gradcheck(self):
        errors = gradcheck(trials=6, seed=1)
        self.assertEqual(len(errors), 6)
        self.assertLessEqual(max(errors), GRADCHECK_TOLERANCE)
        scaled = gradcheck(trials=6, seed=1, elementwise=False)
        for strict, loose in zip(errors, scaled):
            self.assertGreaterEqual(strict, loose)


class InterpolateTest(unittest.TestCase):
    def setUp(self):
        self.spec = translation_spec()
        self.source = AnalyticFlowSource(self.spec, 0.0, 0.1)

    def test_sweep_times(self):
        assert_allclose(sweep_times(0.0, 0.1), [0.0125, 0.025, 0.05, 0.075, 0.0875])
        self.assertEqual(sweep_times(1.0, 2.0, (0.0, 1.0)), [1.0, 2.0])

    def test_analytic_source(self):
        self.assertEqual(self.source.scene_time(0.0), 0.0)
        self.assertEqual(self.source.scene_time(0.1), 1.0)
        assert_allclose(self.source.normalized_flow(0.05).data[..., 0], np.full((8, 8), 8.0))
        self.assertIsNone(self.source.strategy)

    def test_custom_scene_interval(self):
        source = AnalyticFlowSource(self.spec, 0.0, 0.1, 0.25, 0.5)
        self.assertEqual(source.scene_time(0.1), 0.5)
        assert_allclose(source.normalized_flow(0.0).data[..., 0], np.full((8, 8), 2.0))

    def test_reconstruct_inputs(self):
        fwd, bwd = _translation_flows(self.spec)
        rfwd, rbwd = reconstruct_inputs(self.source)
        assert_allclose(rfwd.data, fwd.data, atol=1e-12)
        assert_allclose(rbwd.data, bwd.data, atol=1e-12)

    def test_endpoints(self):
        fwd, bwd = _translation_flows(self.spec)
        to0, to1 = interpolate_flows(self.source, 0.0)
        assert_array_equal(to0.data, np.zeros((8, 8, 2)))
        self.assertFalse(np.any(np.signbit(to0.data)))
        assert_allclose(to1.data, -fwd.data, atol=1e-12)
        to0, to1 = interpolate_flows(self.source, 0.1)
        assert_allclose(to0.data, -bwd.data, atol=1e-12)
        assert_array_equal(to1.data, np.zeros((8, 8, 2)))
        self.assertFalse(np.any(np.signbit(to1.data)))

    def test_midpoint(self):
        to0, to1 = interpolate_flows(self.source, 0.05)
        assert_allclose(to0.data[..., 0], np.full((8, 8), 0.4))
        assert_allclose(to1.data[..., 0], np.full((8, 8), -0.4))

    def test_linear_identity(self):
        fwd, bwd = _translation_flows()
        scene = encode(fwd, bwd, tiny_encode_config())
        for t in (0.0, 0.03, 0.1):
            to0, to1 = interpolate_flows(scene, t)
            f = scene.normalized_flow(t).data
            assert_allclose(to0.data - to1.data, 0.1 * f, atol=1e-12)

    def test_monotone_sweep(self):
        source = AnalyticFlowSource(circle_spec(), 0.0, 0.1)
        xs = [source.object_center(t)[0] for t in sweep_times(0.0, 0.1)]
        self.assertEqual(xs, sorted(xs))
        self.assertEqual(len(set(xs)), len(xs))

    def test_out_of_range(self):
        with self.assertRaises(IFLOW_Exception) as e:
            interpolate_flows(self.source, 0.2)
        self.assertEqual(e.exception.error, IFLOW_RC.OUT_OF_RANGE)

    def test_render_endpoints_exact(self):
        images = (scene_image(self.spec, 0.0), scene_image(self.spec, 1.0))
        self.assertEqual(render_intermediate(self.source, images, 0.0), images[0])
        self.assertEqual(render_intermediate(self.source, images, 0.1), images[1])

    def test_render_midpoint(self):
        spec = SceneSpec(kind="translation", velocity=(4.0, 0.0), width=32, height=32, center=(12.0, 16.0))
        source = AnalyticFlowSource(spec, 0.0, 0.1)
        images = (scene_image(spec, 0.0), scene_image(spec, 1.0))
        out = render_intermediate(source, images, 0.05)
        target = scene_image(spec, 0.5)
        err = np.abs(out.data - target.data)[1:-1, 1:-1]
        self.assertLessEqual(float(np.mean(err)), 0.03)

    def test_render_mismatch(self):
        img = Image(np.zeros((4, 4)))
        with self.assertRaises(IFLOW_Exception) as e:
            render_intermediate(self.source, (img, img), 0.05)
        self.assertEqual(e.exception.error, IFLOW_RC.BAD_SHAPE)


class EvaluateTest(unittest.TestCase):
    def test_analytic_is_exact(self):
        spec = circle_spec()
        source = AnalyticFlowSource(spec, 0.0, 0.1)
        report = evaluate(source, spec, [0.05, 0.0125])
        self.assertEqual(len(report.rows), 2)
        row = report.rows[0]
        self.assertEqual(row.strategy, "analytic")
        self.assertIsNone(row.omega)
        self.assertEqual(row.epe, 0.0)
        self.assertEqual(row.centroid_err, 0.0)
        self.assertEqual(row.coord_distance, 0.1)

    def test_translation_has_no_centroid(self):
        spec = translation_spec()
        report = evaluate(AnalyticFlowSource(spec, 0.0, 0.1), spec, [0.05])
        self.assertIsNone(report.rows[0].centroid_err)

    def test_encoded_scene(self):
        spec = circle_spec()
        fwd, bwd = scene_bidirectional(spec, 0.0, 1.0)
        scene = encode(fwd, bwd, tiny_encode_config())
        report = evaluate(scene, spec, sweep_times(0.0, 0.1))
        self.assertEqual([r.t for r in report.rows], sweep_times(0.0, 0.1))
        for row in report.rows:
            self.assertEqual(row.strategy, "hypernet")
            self.assertEqual(row.omega, 10.0)
            self.assertGreaterEqual(row.epe, 0.0)
            self.assertEqual(row.final_loss, scene.final_loss)

    def test_geometry_mismatch(self):
        source = AnalyticFlowSource(translation_spec(), 0.0, 0.1)
        with self.assertRaises(IFLOW_Exception) as e:
            evaluate(source, circle_spec(), [0.05])
        self.assertEqual(e.exception.error, IFLOW_RC.BAD_SHAPE)


class ReportTest(unittest.TestCase):
    def test_header(self):
        self.assertEqual(
            Report().to_csv(),
            "strategy,omega,coord_distance,t,epe,centroid_err,final_loss,seconds\n",
        )

    def test_cells(self):
        row = ReportRow("hypernet", 10.0, 0.1, 0.05, 0.5, None, 0.25, 1.5)
        self.assertEqual(row.cells(), ["hypernet", "10.0", "0.1", "0.05", "0.5", "", "0.25", ""])
        self.assertEqual(row.cells(timings=True)[-1], "1.5")
        report = Report(rows=[row])
        self.assertEqual(report.to_csv().splitlines()[1], "hypernet,10.0,0.1,0.05,0.5,,0.25,")


class AblateTest(unittest.TestCase):
    def setUp(self):
        self.spec = translation_spec()
        self.cfg = tiny_encode_config(iterations=5)

    def test_omega_sorted(self):
        report = ablate("omega", [30, 10], self.spec, self.cfg)
        self.assertEqual([r.omega for r in report.rows], [10.0, 30.0])
        self.assertEqual([name for name, _ in report.images], ["omega_10.0_t0.05", "omega_30.0_t0.05"])
        self.assertEqual(report.failures, [])

    def test_coord_distance(self):
        report = ablate("coord_distance", [0.2], self.spec, self.cfg, taus=(0.25, 0.5))
        self.assertEqual(len(report.rows), 2)
        self.assertEqual({r.coord_distance for r in report.rows}, {0.2})
        assert_allclose([r.t for r in report.rows], [0.05, 0.1])

    def test_all_strategies(self):
        report = ablate("strategy", [], self.spec, self.cfg)
        self.assertEqual(
            [r.strategy for r in report.rows], ["hypernet", "single_siren", "two_sirens"]
        )

    def test_empty(self):
        with self.assertRaises(IFLOW_Exception) as e:
            ablate("omega", [], self.spec, self.cfg)
        self.assertEqual(e.exception.error, IFLOW_RC.BAD_VALUE)

    def test_failure_continues(self):
        real = pipeline.encode

        def flaky(fwd, bwd, cfg):
            if cfg.siren.omega == 30.0:
                raise IFLOW_Exception(IFLOW_RC.make(IFLOW_LAYER.PIPELINE, IFLOW_RC.DIVERGED))
            return real(fwd, bwd, cfg)

        with mock.patch.object(pipeline, "encode", side_effect=flaky):
            with self.assertLogs("implicit_flow.pipeline", level="WARNING"):
                report = ablate("omega", [10, 30, 20], self.spec, self.cfg)
        self.assertEqual([r.omega for r in report.rows], [10.0, 20.0, 30.0])
        self.assertTrue(math.isnan(report.rows[2].epe))
        self.assertTrue(math.isnan(report.rows[2].final_loss))
        self.assertEqual(len(report.failures), 1)
        self.assertEqual(report.failures[0][0], 30.0)
        self.assertEqual(len(report.images), 2)

    def test_pyramid_images_and_timings(self):
        report = ablate("omega", [10], self.spec, self.cfg, timings=True, pyramid_levels=2)
        self.assertEqual(
            [name for name, _ in report.images], ["omega_10.0_t0.05_l0", "omega_10.0_t0.05_l1"]
        )
        self.assertEqual(report.images[1][1].width, 4)
        self.assertIsNotNone(report.rows[0].seconds)
        self.assertNotEqual(report.to_csv(timings=True).splitlines()[1].split(",")[-1], "")


if __name__ == "__main__":
    unittest.main()
