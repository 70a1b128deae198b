# Copyright 2022 DP Technology
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Tests for cforb.egomotion."""

import math
import time

from absl.testing import absltest
from absl.testing import parameterized
import numpy as np

from cforb import config as config_lib
from cforb import egomotion
from cforb.core import MotionParams, StereoCalib, rotation_angle
from cforb.errors import EstimationError, NonConvergenceError, SingularSystemError
from cforb.geometry import project_points, triangulate_points

CALIB = StereoCalib(f=718.856, cu=607.19, cv=185.22, baseline=0.537)
TRUE_MOTION = MotionParams(np.array([0.02, -0.05, 0.01]), np.array([0.3, -0.1, 0.8]))


def _landmarks(rng, num, far=30.0):
    return np.column_stack([
        rng.uniform(-8, 8, num), rng.uniform(-3, 3, num), rng.uniform(5, far, num)
    ])


def _observe(points, motion, calib=CALIB, noise=0.0, rng=None):
    uv_l, uv_r, valid = project_points(points, motion.rotation, motion.t, calib)
    assert np.all(valid)
    if noise > 0:
        uv_l = uv_l + rng.normal(0, noise, uv_l.shape)
        uv_r = uv_r + rng.normal(0, noise, uv_r.shape)
    return egomotion.Observations(points, uv_l, uv_r)


def _direct_cost(motion, obs, calib=CALIB):
    total = 0.0
    for i in range(len(obs)):
        moved = motion.rotation @ obs.landmarks[i] + motion.t
        u_l = calib.f * moved[0] / moved[2] + calib.cu
        u_r = calib.f * (moved[0] - calib.baseline) / moved[2] + calib.cu
        v = calib.f * moved[1] / moved[2] + calib.cv
        total += (obs.left[i, 0] - u_l) ** 2 + (obs.left[i, 1] - v) ** 2
        total += (obs.right[i, 0] - u_r) ** 2 + (obs.right[i, 1] - v) ** 2
    return total


def _rotation_error_deg(a, b):
    return math.degrees(rotation_angle(a.rotation.T @ b.rotation))


class ObservationsTest(absltest.TestCase):

    def test_length_mismatch(self):
        with self.assertRaises(ValueError):
            egomotion.Observations(np.zeros((2, 3)), np.zeros((2, 2)), np.zeros((3, 2)))

    def test_non_finite(self):
        with self.assertRaises(ValueError):
            egomotion.Observations(np.ones((1, 3)), np.array([[np.nan, 0.0]]), np.zeros((1, 2)))

    def test_stack_and_index(self):
        obs = _observe(_landmarks(np.random.default_rng(0), 4), TRUE_MOTION)
        again = egomotion.Observations.stack([obs[i] for i in range(len(obs))])
        np.testing.assert_array_equal(again.landmarks, obs.landmarks)
        np.testing.assert_array_equal(again.measured, obs.measured)
        self.assertLen(obs.subset([3, 1]), 2)
        self.assertEmpty(egomotion.Observations.stack([]))

    def test_row_offsets_follow_rows(self):
        obs = _observe(_landmarks(np.random.default_rng(1), 5), TRUE_MOTION)
        obs = egomotion.Observations(obs.landmarks, obs.left, obs.right, np.arange(5.0))
        np.testing.assert_array_equal(obs.subset([4, 0]).row_offset, [4.0, 0.0])
        self.assertEqual(obs[3].row_offset, 3.0)
        again = egomotion.Observations.stack([obs[i] for i in range(len(obs))])
        np.testing.assert_array_equal(again.row_offset, obs.row_offset)
        with self.assertRaises(ValueError):
            egomotion.Observations(obs.landmarks, obs.left, obs.right, np.zeros(4))
        np.testing.assert_array_equal(
            egomotion.Observations(obs.landmarks, obs.left, obs.right).row_offset, np.zeros(5)
        )


class ResidualTest(absltest.TestCase):

    def setUp(self):
        super().setUp()
        self.obs = _observe(_landmarks(np.random.default_rng(0), 50), TRUE_MOTION)

    def test_zero_at_truth(self):
        res = egomotion.residuals(TRUE_MOTION, self.obs, CALIB)
        self.assertEqual(res.shape, (200,))
        np.testing.assert_allclose(res, 0.0, atol=1e-9)

    def test_shifted_translation(self):
        shifted = MotionParams(TRUE_MOTION.r, TRUE_MOTION.t + np.array([0.0, 0.0, 0.1]))
        value = egomotion.cost(shifted, self.obs, CALIB)
        self.assertGreater(value, 0.0)
        self.assertAlmostEqual(value, _direct_cost(shifted, self.obs), delta=1e-9 * value)

    def test_empty(self):
        empty = egomotion.Observations.empty()
        self.assertEqual(egomotion.residuals(TRUE_MOTION, empty, CALIB).shape, (0,))
        self.assertEqual(egomotion.cost(TRUE_MOTION, empty, CALIB), 0.0)
        self.assertEqual(egomotion.jacobian(TRUE_MOTION, empty, CALIB).shape, (0, 6))

    def test_behind_camera(self):
        motion = MotionParams(np.zeros(3), np.array([0.0, 0.0, -40.0]))
        self.assertEqual(egomotion.cost(motion, self.obs, CALIB), math.inf)

    def test_row_offset_moves_right_prediction(self):
        offsets = np.linspace(-3.0, 3.0, len(self.obs))
        right = self.obs.right.copy()
        right[:, 1] += offsets
        shifted = egomotion.Observations(self.obs.landmarks, self.obs.left, right, offsets)
        np.testing.assert_allclose(egomotion.residuals(TRUE_MOTION, shifted, CALIB), 0.0, atol=1e-9)
        unshifted = egomotion.Observations(self.obs.landmarks, self.obs.left, right)
        res = egomotion.residuals(TRUE_MOTION, unshifted, CALIB).reshape(-1, 4)
        np.testing.assert_allclose(res[:, 3], offsets, atol=1e-9)
        np.testing.assert_allclose(res[:, :3], 0.0, atol=1e-9)


class JacobianTest(parameterized.TestCase):

    def test_finite_differences(self):
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(100):
            motion = MotionParams(rng.uniform(-0.2, 0.2, 3), rng.uniform(-1, 1, 3))
            obs = _observe(_landmarks(rng, 5), MotionParams.zero())
            analytic = egomotion.jacobian(motion, obs, CALIB)
            numeric = np.zeros_like(analytic)
            base = motion.as_vector()
            for k in range(6):
                step = np.zeros(6)
                step[k] = h
                plus = egomotion.residuals(MotionParams.from_vector(base + step), obs, CALIB)
                minus = egomotion.residuals(MotionParams.from_vector(base - step), obs, CALIB)
                numeric[:, k] = (plus - minus) / (2 * h)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-4)

    def test_translation_column_closed_form(self):
        obs = _observe(_landmarks(np.random.default_rng(1), 10), MotionParams.zero())
        motion = MotionParams(np.zeros(3), np.array([0.1, 0.2, 0.3]))
        jac = egomotion.jacobian(motion, obs, CALIB)
        z = obs.landmarks[:, 2] + 0.3
        np.testing.assert_allclose(jac[0::4, 3], -CALIB.f / z, rtol=1e-12)
        np.testing.assert_allclose(jac[2::4, 3], -CALIB.f / z, rtol=1e-12)
        np.testing.assert_array_equal(jac[1::4, 3], 0.0)


class GaussNewtonTest(absltest.TestCase):

    def setUp(self):
        super().setUp()
        self.obs = _observe(_landmarks(np.random.default_rng(0), 30), TRUE_MOTION)

    def test_fixed_point(self):
        result = egomotion.gauss_newton(TRUE_MOTION, self.obs, CALIB)
        np.testing.assert_allclose(result.as_vector(), TRUE_MOTION.as_vector(), atol=1e-12)

    def test_from_zero(self):
        result = egomotion.gauss_newton(MotionParams.zero(), self.obs, CALIB)
        np.testing.assert_allclose(result.r, TRUE_MOTION.r, atol=1e-6)
        np.testing.assert_allclose(result.t, TRUE_MOTION.t, atol=1e-6)

    def test_cost_never_increases(self):
        rng = np.random.default_rng(1)
        noisy = _observe(_landmarks(rng, 30), TRUE_MOTION, noise=1.0, rng=rng)
        init = MotionParams.zero()
        result = egomotion.gauss_newton(init, noisy, CALIB)
        self.assertLessEqual(egomotion.cost(result, noisy, CALIB), egomotion.cost(init, noisy, CALIB))

    def test_unchanged_stereo_rows_are_a_fixed_point(self):
        # Matches whose right row differs from the left row, seen again unmoved.
        rng = np.random.default_rng(8)
        left = np.column_stack([rng.uniform(100, 1100, 40), rng.uniform(20, 350, 40)])
        right = left - np.column_stack([rng.uniform(5, 60, 40), np.zeros(40)])
        right[:, 1] += rng.choice([-2.88, -0.72, 0.0, 0.96], 40)
        obs = egomotion.Observations(
            triangulate_points(left, right, CALIB), left, right, right[:, 1] - left[:, 1]
        )
        np.testing.assert_allclose(
            egomotion.residuals(MotionParams.zero(), obs, CALIB), 0.0, atol=1e-9
        )
        motion = egomotion.gauss_newton(MotionParams.zero(), obs, CALIB)
        np.testing.assert_allclose(motion.as_vector(), np.zeros(6), atol=1e-9)

    def test_collinear_landmarks(self):
        points = np.array([[-1.0, 0.0, 5.0], [0.0, 0.5, 6.0], [1.0, 1.0, 7.0]])
        obs = _observe(points, TRUE_MOTION)
        with self.assertRaises(SingularSystemError):
            egomotion.gauss_newton(MotionParams.zero(), obs, CALIB)

    def test_too_few_observations(self):
        with self.assertRaises(NonConvergenceError):
            egomotion.gauss_newton(MotionParams.zero(), self.obs.subset([0, 1]), CALIB)


class ClassifyInliersTest(absltest.TestCase):

    def test_exact_observation(self):
        obs = _observe(_landmarks(np.random.default_rng(0), 20), TRUE_MOTION)
        np.testing.assert_array_equal(
            egomotion.classify_inliers(TRUE_MOTION, obs, CALIB, 1e-6), np.arange(20)
        )

    def test_boundary_is_outlier(self):
        calib = StereoCalib(f=100.0, cu=50.0, cv=50.0, baseline=0.5)
        points = np.array([[0.0, 0.0, 5.0]])
        uv_l, uv_r, _ = project_points(points, np.eye(3), np.zeros(3), calib)
        # Squared errors 1 + 1 on the left plus 1 + 1 on the right.
        obs = egomotion.Observations(points, uv_l + 1.0, uv_r + 1.0)
        motion = MotionParams.zero()
        self.assertEmpty(egomotion.classify_inliers(motion, obs, calib, 4.0))
        self.assertLen(egomotion.classify_inliers(motion, obs, calib, 4.0001), 1)

    def test_planted_outliers(self):
        rng = np.random.default_rng(2)
        points = _landmarks(rng, 100)
        obs = _observe(points, TRUE_MOTION)
        left = obs.left.copy()
        outliers = rng.choice(100, size=20, replace=False)
        directions = rng.normal(size=(20, 2))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        left[outliers] += directions * rng.uniform(2.5, 20.0, (20, 1))
        obs = egomotion.Observations(points, left, obs.right)
        inliers = egomotion.classify_inliers(TRUE_MOTION, obs, CALIB, 4.0)
        np.testing.assert_array_equal(inliers, np.setdiff1d(np.arange(100), outliers))

    def test_behind_camera_is_outlier(self):
        obs = _observe(_landmarks(np.random.default_rng(3), 5), MotionParams.zero())
        motion = MotionParams(np.zeros(3), np.array([0.0, 0.0, -50.0]))
        self.assertEmpty(egomotion.classify_inliers(motion, obs, CALIB, 1e9))


class RansacTest(absltest.TestCase):

    def setUp(self):
        super().setUp()
        self.config = config_lib.pipeline_config()

    def test_noiseless(self):
        obs = _observe(_landmarks(np.random.default_rng(0), 100), TRUE_MOTION)
        estimate = egomotion.ransac_estimate(obs, CALIB, self.config)
        np.testing.assert_array_equal(estimate.inlier_indices, np.arange(100))
        np.testing.assert_allclose(estimate.params.as_vector(), TRUE_MOTION.as_vector(), atol=1e-6)
        self.assertGreaterEqual(estimate.final_cost, 0.0)

    def test_noise_and_outliers(self):
        rng = np.random.default_rng(42)
        points = _landmarks(rng, 130, far=15.0)
        obs = _observe(points, TRUE_MOTION, noise=0.1, rng=rng)
        left, right = obs.left.copy(), obs.right.copy()
        left[100:] = np.column_stack([rng.uniform(0, 1241, 30), rng.uniform(0, 376, 30)])
        right[100:] = np.column_stack([rng.uniform(0, 1241, 30), rng.uniform(0, 376, 30)])
        obs = egomotion.Observations(points, left, right)

        start = time.perf_counter()
        estimate = egomotion.ransac_estimate(obs, CALIB, self.config)
        elapsed = time.perf_counter() - start

        planted = np.intersect1d(estimate.inlier_indices, np.arange(100))
        self.assertGreaterEqual(len(planted), 95)
        translation_error = np.linalg.norm(estimate.params.t - TRUE_MOTION.t)
        self.assertLess(translation_error, 0.01 * np.linalg.norm(TRUE_MOTION.t))
        self.assertLess(_rotation_error_deg(estimate.params, TRUE_MOTION), 0.05)
        self.assertLess(elapsed, 1.0)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        obs = _observe(_landmarks(rng, 60), TRUE_MOTION, noise=0.5, rng=rng)
        a = egomotion.ransac_estimate(obs, CALIB, self.config)
        b = egomotion.ransac_estimate(obs, CALIB, self.config)
        np.testing.assert_array_equal(a.params.as_vector(), b.params.as_vector())
        np.testing.assert_array_equal(a.inlier_indices, b.inlier_indices)

    def test_returned_model_beats_every_sample(self):
        rng = np.random.default_rng(9)
        points = _landmarks(rng, 80, far=15.0)
        obs = _observe(points, TRUE_MOTION, noise=0.3, rng=rng)
        left, right = obs.left.copy(), obs.right.copy()
        left[60:] += rng.normal(0, 15.0, (20, 2))
        right[60:] += rng.normal(0, 15.0, (20, 2))
        obs = egomotion.Observations(points, left, right)
        config = config_lib.pipeline_config(ransac_iterations=30)

        estimate = egomotion.ransac_estimate(obs, CALIB, config, np.random.default_rng(3))
        samples = egomotion._draw_samples(len(obs), config, np.random.default_rng(3))
        self.assertLen(samples, 30)
        for sample in samples:
            try:
                motion = egomotion.gauss_newton(
                    MotionParams.zero(), obs.subset(sample), CALIB,
                    config.gn_max_iters, config.gn_step_tol,
                )
            except NonConvergenceError:
                continue
            inliers = egomotion.classify_inliers(motion, obs, CALIB, config.inlier_threshold)
            self.assertGreaterEqual(len(estimate.inlier_indices), len(inliers))

    def test_too_few_observations(self):
        obs = _observe(_landmarks(np.random.default_rng(0), 2), TRUE_MOTION)
        with self.assertRaises(EstimationError):
            egomotion.ransac_estimate(obs, CALIB, self.config)

    def test_no_sample_converges(self):
        points = np.array([[-1.0, 0.0, 5.0], [0.0, 0.5, 6.0], [1.0, 1.0, 7.0]])
        obs = _observe(points, TRUE_MOTION)
        with self.assertRaises(EstimationError):
            egomotion.ransac_estimate(obs, CALIB, self.config)


if __name__ == "__main__":
    absltest.main()
