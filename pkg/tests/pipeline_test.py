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

"""Tests for cforb.pipeline."""

import concurrent.futures
import os

from absl.testing import absltest
import numpy as np

from cforb import config as config_lib
from cforb import core
from cforb import egomotion
from cforb import evaluation
from cforb import geometry
from cforb import pipeline
from cforb.core import GrayImage, MotionParams, Pose, StereoCalib
from cforb.data import dataset
from cforb.data import synthetic
from cforb.errors import DataError, FrameReadError
from cforb.features import matching

CALIB = synthetic.DEFAULT_CALIB

# Long baseline and focal length keep the depth quantisation of rendered
# sprites small against the travelled distance.
E2E_CALIB = StereoCalib(f=1000.0, cu=320.0, cv=240.0, baseline=1.0)
E2E_MOTION = MotionParams(r=np.array([0.0, 0.002, 0.0]), t=np.array([0.02, 0.0, -0.25]))


def _identities(keypoints, centers, max_gap=7):
    """Landmark index of the sprite under each keypoint, -1 if none."""
    out = []
    for kp in keypoints:
        gap = np.max(np.abs(centers - np.array([kp.x, kp.y])), axis=1)
        best = int(np.argmin(gap))
        out.append(best if gap[best] <= max_gap else -1)
    return out


def _sprite_centers(scene, frame, calib):
    points = synthetic.camera_points(scene, frame)
    uv_l, uv_r, _ = geometry.project_points(points, np.eye(3), np.zeros(3), calib)
    return np.rint(uv_l), np.rint(uv_r)


class ExtractTest(absltest.TestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.config = config_lib.pipeline_config()
        cls.scene = synthetic.make_scene(seed=0, num_frames=1, num_landmarks=80)
        cls.left, cls.right = synthetic.render_sprites(cls.scene, 0, CALIB)
        cls.features = pipeline.extract(cls.left, cls.right, cls.config)

    def test_uniform_pair(self):
        uniform = GrayImage.filled(320, 240, 128)
        features = pipeline.extract(uniform, uniform, self.config)
        self.assertEmpty(features.left_kps)
        self.assertEmpty(features.stereo)

    def test_size_mismatch(self):
        with self.assertRaises(DataError):
            pipeline.extract(GrayImage.filled(64, 64), GrayImage.filled(64, 48), self.config)

    def test_aligned_lists(self):
        features = self.features
        self.assertLen(features.left_desc, len(features.left_kps))
        self.assertLen(features.right_desc, len(features.right_kps))
        for m in features.stereo:
            left, right = features.left_kps[m.left_idx], features.right_kps[m.right_idx]
            self.assertLessEqual(abs(left.y - right.y), self.config.vertical_max_px)
            self.assertBetween(left.x - right.x, self.config.min_disparity_px,
                               self.config.horizontal_max_px)
            residual = geometry.epipolar_residual(
                (left.x, left.y, 1.0), (right.x, right.y, 1.0), geometry.rectified_fundamental()
            )
            self.assertLessEqual(abs(residual), self.config.vertical_max_px)

    def test_sprite_identity(self):
        centers_l, centers_r = _sprite_centers(self.scene, 0, CALIB)
        ids_l = _identities(self.features.left_kps, centers_l)
        ids_r = _identities(self.features.right_kps, centers_r)
        stereo = self.features.stereo
        self.assertNotEmpty(stereo)
        correct = [ids_l[m.left_idx] for m in stereo
                   if ids_l[m.left_idx] >= 0 and ids_l[m.left_idx] == ids_r[m.right_idx]]
        self.assertGreaterEqual(len(correct), 0.95 * len(stereo))

        # Sprites far enough from the borders for the descriptor to fit in both views.
        margin = 30
        height, width = self.left.shape
        inside = np.all(
            (centers_l >= margin) & (centers_l < [width - margin, height - margin])
            & (centers_r >= margin) & (centers_r < [width - margin, height - margin]),
            axis=1,
        )
        visible = set(np.nonzero(inside)[0].tolist())
        self.assertNotEmpty(visible)
        matched = visible & set(correct)
        self.assertGreaterEqual(len(matched), 0.8 * len(visible))

    def test_swapped_images(self):
        features = pipeline.extract(self.right, self.left, self.config)
        self.assertEmpty(features.stereo)

    def test_with_executor(self):
        with concurrent.futures.ThreadPoolExecutor(max_workers=2) as executor:
            features = pipeline.extract(self.left, self.right, self.config, executor=executor)
        self.assertEqual(
            [(m.left_idx, m.right_idx) for m in features.stereo],
            [(m.left_idx, m.right_idx) for m in self.features.stereo],
        )


class StepTest(absltest.TestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.config = config_lib.pipeline_config(pyramid_levels=3)
        scene = synthetic.make_scene(seed=1, num_frames=1, num_landmarks=80)
        cls.left, cls.right = synthetic.render_sprites(scene, 0, CALIB)

    def test_first_frame(self):
        state = pipeline.step(pipeline.VoState.initial(), self.left, self.right, CALIB, self.config)
        self.assertEqual(state.frame_index, 1)
        np.testing.assert_array_equal(state.world_pose.to_matrix(), np.eye(3, 4))
        self.assertIsNotNone(state.prev)
        (stats,) = state.stats
        self.assertFalse(stats.flagged)
        self.assertEqual(stats.circular_matches, 0)
        self.assertGreater(stats.stereo_matches, 0)

    def test_static_camera(self):
        state = pipeline.VoState.initial()
        for _ in range(2):
            state = pipeline.step(state, self.left, self.right, CALIB, self.config)
        np.testing.assert_allclose(state.world_pose.to_matrix(), np.eye(3, 4), atol=1e-6)
        np.testing.assert_allclose(state.last_motion.as_vector(), np.zeros(6), atol=1e-6)
        stats = state.stats[1]
        self.assertFalse(stats.flagged)
        self.assertGreaterEqual(stats.circular_matches, self.config.ransac_sample_size)
        self.assertEqual(stats.inlier_pct, 100.0 * stats.inliers / stats.circular_matches)

    def test_featureless_frame(self):
        state = pipeline.step(pipeline.VoState.initial(), self.left, self.right, CALIB, self.config)
        uniform = GrayImage.filled(self.left.width, self.left.height, synthetic.BACKGROUND)
        state = pipeline.step(state, uniform, uniform, CALIB, self.config)
        stats = state.stats[-1]
        self.assertTrue(stats.flagged)
        self.assertEqual(stats.circular_matches, 0)
        self.assertEqual(stats.inlier_pct, 0.0)
        self.assertIn("0 circular matches", stats.fallback_reason)
        np.testing.assert_array_equal(state.world_pose.to_matrix(), np.eye(3, 4))

    def test_fallback_repeats_last_motion(self):
        motion = MotionParams(np.zeros(3), np.array([0.0, 0.0, -1.0]))
        state = pipeline.step(pipeline.VoState.initial(), self.left, self.right, CALIB, self.config)
        state = pipeline.VoState(
            prev=state.prev, world_pose=state.world_pose, frame_index=state.frame_index,
            last_motion=motion, stats=state.stats,
        )
        uniform = GrayImage.filled(self.left.width, self.left.height, synthetic.BACKGROUND)
        state = pipeline.step(state, uniform, uniform, CALIB, self.config)
        np.testing.assert_allclose(state.world_pose.translation, [0.0, 0.0, 1.0])

    def test_deterministic(self):
        first = pipeline.step(pipeline.VoState.initial(), self.left, self.right, CALIB, self.config)
        a = pipeline.step(first, self.left, self.right, CALIB, self.config)
        b = pipeline.step(first, self.left, self.right, CALIB, self.config)
        np.testing.assert_array_equal(a.world_pose.to_matrix(), b.world_pose.to_matrix())
        self.assertEqual(a.stats[-1].inliers, b.stats[-1].inliers)


class BuildObservationsTest(absltest.TestCase):

    def test_unchanged_pair_reprojects_exactly(self):
        # Stereo matches whose right row is off the left row by rescaling.
        pairs = [((400.0, 200.0), (380.0, 197.12)), ((300.5, 100.0), (250.5, 100.96)),
                 ((120.0, 300.0), (110.0, 300.0))]
        circular = [matching.CircularMatch(l, r, l, r) for l, r in pairs]
        obs = pipeline.build_observations(circular, CALIB)
        np.testing.assert_allclose(obs.row_offset, [-2.88, 0.96, 0.0], atol=1e-12)
        np.testing.assert_allclose(
            egomotion.residuals(MotionParams.zero(), obs, CALIB), 0.0, atol=1e-9
        )

    def test_empty(self):
        self.assertEmpty(pipeline.build_observations([], CALIB))


class FrameRngTest(absltest.TestCase):

    def test_frames_draw_different_samples(self):
        config = config_lib.pipeline_config()

        def draw(index):
            return egomotion._draw_samples(60, config, pipeline.frame_rng(config.seed, index))

        same = [np.array_equal(a, b) for a, b in zip(draw(1), draw(2))]
        self.assertFalse(all(same))
        for a, b in zip(draw(3), draw(3)):
            np.testing.assert_array_equal(a, b)


class RunTest(absltest.TestCase):

    def test_single_frame(self):
        scene = synthetic.make_scene(seed=2, num_frames=1, num_landmarks=40)
        pair = synthetic.render_sprites(scene, 0, CALIB)
        trajectory, stats = pipeline.run([pair], CALIB, config_lib.pipeline_config())
        self.assertLen(trajectory, 1)
        self.assertLen(stats, 1)
        np.testing.assert_array_equal(trajectory[0].to_matrix(), np.eye(3, 4))

    def test_empty_sequence(self):
        with self.assertRaises(DataError):
            pipeline.run([], CALIB, config_lib.pipeline_config())

    def test_failing_iterator(self):
        uniform = GrayImage.filled(64, 64, 128)

        def frames():
            yield uniform, uniform
            yield uniform, uniform
            raise OSError("disk went away")

        with self.assertRaises(FrameReadError) as ctx:
            pipeline.run(frames(), CALIB, config_lib.pipeline_config())
        self.assertEqual(ctx.exception.frame_index, 2)

    def test_corrupt_file(self):
        root = self.create_tempdir().full_path
        scene = synthetic.make_scene(seed=3, num_frames=3, num_landmarks=30)
        synthetic.write_synthetic_dataset(scene, CALIB, root, render=True)
        with open(os.path.join(root, "left", "000001.png"), "wb") as f:
            f.write(b"garbage")
        source = dataset.load_dirs(root)
        with self.assertRaisesRegex(FrameReadError, "frame 1") as ctx:
            pipeline.run(source.frames(), source.calib, config_lib.pipeline_config())
        self.assertEqual(ctx.exception.frame_index, 1)

    def test_rendered_sequence(self):
        scene = synthetic.make_scene(
            seed=0,
            num_frames=20,
            num_landmarks=80,
            calib=E2E_CALIB,
            motion=E2E_MOTION,
            depth_range=(8.0, 16.0),
            spacing=56,
        )
        config = config_lib.pipeline_config(pyramid_levels=3, horizontal_max_px=400.0)
        frames = (synthetic.render_sprites(scene, k, E2E_CALIB) for k in range(scene.num_frames))
        trajectory, stats = pipeline.run(frames, E2E_CALIB, config)
        gt = synthetic.scene_poses(scene)

        self.assertLen(trajectory, 20)
        self.assertLen(stats, 20)
        np.testing.assert_array_equal(trajectory[0].to_matrix(), np.eye(3, 4))
        for pose in trajectory:
            rot = pose.rotation
            np.testing.assert_allclose(rot.T @ rot, np.eye(3), atol=1e-9)
        self.assertFalse(any(s.flagged for s in stats))

        path_length = evaluation.trajectory_distances(gt)[-1]
        drift = np.linalg.norm(trajectory[-1].translation - gt[-1].translation)
        self.assertLess(drift, 0.01 * path_length)

        report = evaluation.evaluate(trajectory, gt, frame_stats=stats)
        t_err, r_err = evaluation.segment_error(trajectory, gt, 0, len(gt) - 1)
        self.assertTrue(report.short_path)
        self.assertAlmostEqual(report.overall_translation, t_err / path_length, delta=1e-6)
        self.assertAlmostEqual(report.overall_rotation, np.degrees(r_err) / path_length,
                               delta=1e-6)
        self.assertLen(report.per_frame_inlier_pct, 20)


    def test_streaming_interface(self):
        scene = synthetic.make_scene(seed=4, num_frames=1, num_landmarks=40)
        pair = synthetic.render_sprites(scene, 0, CALIB)
        config = config_lib.pipeline_config(pyramid_levels=3)
        with pipeline.VisualOdometry(CALIB, config) as vo:
            first = vo.process(*pair)
            second = vo.process(*pair)
        np.testing.assert_array_equal(first.to_matrix(), np.eye(3, 4))
        np.testing.assert_allclose(second.to_matrix(), np.eye(3, 4), atol=1e-6)
        self.assertLen(vo.trajectory, 2)
        self.assertEqual([s.frame for s in vo.stats], [0, 1])

class PoseChainingTest(absltest.TestCase):

    def test_chain_matches_scene_poses(self):
        motion = MotionParams(np.array([0.01, -0.02, 0.03]), np.array([0.1, 0.0, -0.3]))
        scene = synthetic.SyntheticScene(np.array([[0.0, 0.0, 20.0]]), (motion,) * 3)
        world = Pose.identity()
        for _ in range(3):
            world = world @ core.inverse(core.motion_to_transform(motion))
        expected = synthetic.scene_poses(scene)[-1]
        np.testing.assert_allclose(world.to_matrix(), expected.to_matrix(), atol=1e-12)
        # The camera moves forward along +z of the first frame.
        self.assertGreater(world.translation[2], 0.0)


if __name__ == "__main__":
    absltest.main()
