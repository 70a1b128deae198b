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

"""Frame-to-frame stereo visual odometry.

Each stereo pair is reduced to filtered stereo matches; consecutive pairs are
linked by circular matching; the previous pair's matches are triangulated and
their reprojection into the current pair gives the motion between frames.
Camera poses are chained as world <- world * inverse(motion), the first frame
being the origin.
"""

import concurrent.futures
import dataclasses
from typing import Iterable, List, Optional, Sequence, Tuple

from absl import logging
import ml_collections as mlc
import numpy as np

from cforb import core
from cforb import utils
from cforb.core import GrayImage, MotionParams, Pose, StereoCalib
from cforb.egomotion import Observations, ransac_estimate
from cforb.errors import DataError, EstimationError, FrameReadError
from cforb.features import descriptor, detector, matching
from cforb.geometry import triangulate_points


@dataclasses.dataclass(frozen=True)
class FrameFeatures:
    """Described keypoints of one stereo pair and their filtered stereo matches."""

    left_kps: List[detector.Keypoint]
    right_kps: List[detector.Keypoint]
    left_desc: descriptor.DescriptorSet
    right_desc: descriptor.DescriptorSet
    stereo: List[matching.StereoMatch]


@dataclasses.dataclass(frozen=True)
class FrameStats:
    frame: int
    left_keypoints: int
    right_keypoints: int
    stereo_matches: int
    circular_matches: int
    inliers: int
    inlier_pct: float
    flagged: bool
    fallback_reason: str
    seconds: float


@dataclasses.dataclass(frozen=True)
class VoState:
    prev: Optional[FrameFeatures]
    world_pose: Pose
    frame_index: int
    last_motion: MotionParams
    stats: Tuple[FrameStats, ...]

    @staticmethod
    def initial() -> "VoState":
        return VoState(
            prev=None,
            world_pose=Pose.identity(),
            frame_index=0,
            last_motion=MotionParams.zero(),
            stats=(),
        )


def _describe(
    img: GrayImage, config: mlc.ConfigDict, pattern: descriptor.SamplingPattern
) -> Tuple[List[detector.Keypoint], descriptor.DescriptorSet]:
    keypoints = detector.detect(img, config)
    kept, descriptors = descriptor.compute_all(img, keypoints, pattern, config.scale_factor)
    return [keypoints[i] for i in kept], descriptors


def extract(
    left: GrayImage,
    right: GrayImage,
    config: mlc.ConfigDict,
    pattern: Optional[descriptor.SamplingPattern] = None,
    executor: Optional[concurrent.futures.Executor] = None,
) -> FrameFeatures:
    """Detects, describes and stereo-matches one pair.

    Keypoints whose receptive fields leave the image are dropped, so keypoint
    and descriptor lists stay index-aligned. Both images are processed on
    `executor` when given.

    Raises:
        DataError: If the two images differ in size.
    """
    if left.shape != right.shape:
        raise DataError(f"Stereo images differ in size: {left.shape} vs {right.shape}.")
    pattern = pattern or descriptor.build_pattern()
    if executor is not None:
        left_future = executor.submit(_describe, left, config, pattern)
        right_future = executor.submit(_describe, right, config, pattern)
        (left_kps, left_desc), (right_kps, right_desc) = (
            left_future.result(), right_future.result()
        )
    else:
        left_kps, left_desc = _describe(left, config, pattern)
        right_kps, right_desc = _describe(right, config, pattern)

    stereo = matching.match_stereo(left_desc, right_desc, config)
    num_mutual = len(stereo)
    stereo = matching.vertical_filter(stereo, left_kps, right_kps, config.vertical_max_px)
    stereo = matching.horizontal_filter(
        stereo, left_kps, right_kps, config.horizontal_max_px, config.min_disparity_px
    )
    logging.vlog(
        1, "Extracted %d/%d keypoints, %d mutual matches, %d after constraints",
        len(left_kps), len(right_kps), num_mutual, len(stereo),
    )
    return FrameFeatures(left_kps, right_kps, left_desc, right_desc, stereo)


def frame_rng(seed: int, frame_index: int) -> np.random.Generator:
    """RANSAC generator of one frame, derived from the run seed and the frame index."""
    return np.random.default_rng([seed, frame_index])


def build_observations(
    circular: Sequence[matching.CircularMatch], calib: StereoCalib
) -> Observations:
    """Previous-pair triangulations observed at the current-pair pixels.

    Landmarks are triangulated on the left row; the previous right-minus-left
    row offset of each match is carried into its right-row prediction, so an
    unchanged scene reprojects with zero residual.
    """
    if not circular:
        return Observations.empty()
    p_l_prev = np.array([c.p_l_prev for c in circular], dtype=np.float64)
    p_r_prev = np.array([c.p_r_prev for c in circular], dtype=np.float64)
    return Observations(
        landmarks=triangulate_points(p_l_prev, p_r_prev, calib),
        left=np.array([c.p_l_curr for c in circular], dtype=np.float64),
        right=np.array([c.p_r_curr for c in circular], dtype=np.float64),
        row_offset=p_r_prev[:, 1] - p_l_prev[:, 1],
    )


def step(
    state: VoState,
    left: GrayImage,
    right: GrayImage,
    calib: StereoCalib,
    config: mlc.ConfigDict,
    pattern: Optional[descriptor.SamplingPattern] = None,
    executor: Optional[concurrent.futures.Executor] = None,
) -> VoState:
    """Processes one stereo pair and returns the advanced state.

    When fewer circular matches than the RANSAC sample size survive, or the
    estimation fails, the previous motion is repeated and the frame is
    flagged in its statistics.
    """
    index = state.frame_index
    circular: List[matching.CircularMatch] = []
    num_inliers = 0
    reason = ""
    motion = None
    with utils.timing(f"frame {index}") as elapsed:
        curr = extract(left, right, config, pattern, executor)
        if state.prev is not None:
            circular = matching.circular_match(state.prev, curr, config)
            if len(circular) < config.ransac_sample_size:
                reason = f"{len(circular)} circular matches"
            else:
                try:
                    estimate = ransac_estimate(
                        build_observations(circular, calib), calib, config,
                        frame_rng(config.seed, index),
                    )
                    motion = estimate.params
                    num_inliers = len(estimate.inlier_indices)
                except EstimationError as e:
                    reason = str(e)

    world_pose = state.world_pose
    last_motion = state.last_motion
    if state.prev is not None:
        if motion is None:
            logging.warning("Frame %d: reusing the previous motion (%s)", index, reason)
            motion = state.last_motion
        world_pose = core.compose(world_pose, core.inverse(core.motion_to_transform(motion)))
        last_motion = motion

    stats = FrameStats(
        frame=index,
        left_keypoints=len(curr.left_kps),
        right_keypoints=len(curr.right_kps),
        stereo_matches=len(curr.stereo),
        circular_matches=len(circular),
        inliers=num_inliers,
        inlier_pct=100.0 * num_inliers / len(circular) if circular else 0.0,
        flagged=bool(reason),
        fallback_reason=reason,
        seconds=elapsed[0],
    )
    logging.info(
        "Frame %d: %d stereo, %d circular, %d inliers (%.1f%%)%s",
        index, stats.stereo_matches, stats.circular_matches, stats.inliers,
        stats.inlier_pct, " [flagged]" if stats.flagged else "",
    )
    return VoState(
        prev=curr,
        world_pose=world_pose,
        frame_index=index + 1,
        last_motion=last_motion,
        stats=state.stats + (stats,),
    )


class VisualOdometry:
    """Streaming odometry over stereo pairs; extraction runs on two threads."""

    def __init__(self, calib: StereoCalib, config: mlc.ConfigDict):
        self.calib = calib
        self.config = config
        self.state = VoState.initial()
        self.trajectory: List[Pose] = []
        self._pattern = descriptor.build_pattern()
        self._executor = concurrent.futures.ThreadPoolExecutor(max_workers=2)

    def process(self, left: GrayImage, right: GrayImage) -> Pose:
        """Consumes the next pair and returns its camera-to-world pose."""
        self.state = step(
            self.state, left, right, self.calib, self.config, self._pattern, self._executor
        )
        self.trajectory.append(self.state.world_pose)
        return self.state.world_pose

    @property
    def stats(self) -> List[FrameStats]:
        return list(self.state.stats)

    def close(self) -> None:
        self._executor.shutdown(wait=True)

    def __enter__(self) -> "VisualOdometry":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def run(
    sequence: Iterable[Tuple[GrayImage, GrayImage]],
    calib: StereoCalib,
    config: mlc.ConfigDict,
) -> Tuple[List[Pose], List[FrameStats]]:
    """Runs the odometry over a sequence of stereo pairs.

    Returns:
        A tuple of:
            * One camera-to-world pose per frame, the first being the identity.
            * One statistics record per frame.

    Raises:
        DataError: If the sequence is empty.
        FrameReadError: If a pair cannot be read, naming its frame index.
    """
    frames = iter(sequence)
    with VisualOdometry(calib, config) as vo:
        while True:
            index = vo.state.frame_index
            try:
                pair = next(frames)
            except StopIteration:
                break
            except FrameReadError:
                raise
            except (DataError, OSError) as e:
                raise FrameReadError(index, e) from e
            vo.process(*pair)
    if not vo.trajectory:
        raise DataError("The sequence has no stereo pairs.")
    return vo.trajectory, vo.stats
