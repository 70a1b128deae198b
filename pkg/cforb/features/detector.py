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

"""Oriented FAST detection over a scale pyramid.

Corners come from the FAST-9 segment test on the 16-pixel Bresenham circle,
are thinned by 3x3 non-maximum suppression, ranked by response, and oriented
by the intensity centroid of a disc around the corner.
"""

import dataclasses
import math
from typing import List, Tuple

from absl import logging
import ml_collections as mlc
import numpy as np
from scipy import ndimage

from cforb.core import GrayImage, Pyramid
from cforb.errors import PatchBoundsError

# Bresenham circle of radius 3 as (dx, dy), clockwise from the top.
CIRCLE_OFFSETS = (
    (0, -3), (1, -3), (2, -2), (3, -1),
    (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1),
    (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)
CIRCLE_RADIUS = 3
ARC_LENGTH = 9

TWO_PI = 2.0 * math.pi


@dataclasses.dataclass(frozen=True)
class Keypoint:
    """Oriented corner. `x`, `y` are level-0 pixel coordinates."""

    x: float
    y: float
    response: float = 0.0
    angle: float = 0.0  # radians in [0, 2pi)
    octave: int = 0
    # Both centroid moments vanished; the angle is 0 and carries no information.
    degenerate: bool = False

    def __post_init__(self):
        if not 0.0 <= self.angle < TWO_PI:
            raise ValueError(f"Keypoint angle must lie in [0, 2pi), got {self.angle}.")
        if self.octave < 0:
            raise ValueError(f"Keypoint octave must be non-negative, got {self.octave}.")

    @property
    def pt(self) -> Tuple[float, float]:
        return self.x, self.y

    def level_xy(self, scale_factor: float) -> Tuple[int, int]:
        """Integer pixel of the keypoint at its own octave."""
        scale = scale_factor ** self.octave
        return int(round(self.x / scale)), int(round(self.y / scale))


@dataclasses.dataclass(frozen=True)
class OrientationMoments:
    """Intensity moments m_pq of a disc, offsets relative to its centre."""

    m00: int
    m10: int
    m01: int

    def __post_init__(self):
        if self.m00 < 0:
            raise ValueError(f"m00 must be non-negative, got {self.m00}.")

    @property
    def degenerate(self) -> bool:
        return self.m10 == 0 and self.m01 == 0

    @property
    def centroid(self) -> Tuple[float, float]:
        if self.m00 == 0:
            return 0.0, 0.0
        return self.m10 / self.m00, self.m01 / self.m00


def _arc_mask(passed: np.ndarray) -> np.ndarray:
    """True where `passed` [16, ...] holds a contiguous circular run of ARC_LENGTH."""
    wrapped = np.concatenate([passed, passed[: ARC_LENGTH - 1]], axis=0)
    found = np.zeros(passed.shape[1:], dtype=bool)
    for start in range(len(CIRCLE_OFFSETS)):
        found |= np.all(wrapped[start : start + ARC_LENGTH], axis=0)
    return found


def fast_score_map(img: GrayImage, threshold: int, border: int) -> np.ndarray:
    """Segment-test scores for every pixel; 0 where the test fails.

    Only pixels at least max(border, 3) away from every image side are tested.
    The score of a corner is the sum of |I_p - I_c| - threshold over the circle
    pixels exceeding the threshold in the winning polarity.
    """
    height, width = img.shape
    scores = np.zeros((height, width), dtype=np.int32)
    b = max(int(border), CIRCLE_RADIUS)
    if width < 2 * b + 7 or height < 2 * b + 7:
        return scores

    arr = img.data.astype(np.int32)
    center = arr[b : height - b, b : width - b]
    circle = np.stack(
        [arr[b + dy : height - b + dy, b + dx : width - b + dx] for dx, dy in CIRCLE_OFFSETS]
    )
    bright_excess = circle - (center + threshold)
    dark_excess = (center - threshold) - circle
    brighter = bright_excess > 0
    darker = dark_excess > 0

    bright_score = np.where(_arc_mask(brighter), np.sum(bright_excess * brighter, axis=0), 0)
    dark_score = np.where(_arc_mask(darker), np.sum(dark_excess * darker, axis=0), 0)
    scores[b : height - b, b : width - b] = np.maximum(bright_score, dark_score)
    return scores


def non_max_suppression(scores: np.ndarray) -> np.ndarray:
    """Mask of positive scores equal to the maximum of their 3x3 neighbourhood."""
    local_max = ndimage.maximum_filter(scores, size=3, mode="constant", cval=0)
    return (scores > 0) & (scores == local_max)


def fast_detect(img: GrayImage, threshold: int, border: int) -> List[Keypoint]:
    """FAST-9 corners after non-maximum suppression, by descending score.

    Keypoints are returned in the coordinates of `img` with octave 0 and no
    orientation. An image too small for the border yields no corners.
    """
    scores = fast_score_map(img, threshold, border)
    ys, xs = np.nonzero(non_max_suppression(scores))
    responses = scores[ys, xs]
    order = np.lexsort((xs, ys, -responses))
    return [
        Keypoint(x=float(xs[i]), y=float(ys[i]), response=float(responses[i]))
        for i in order
    ]


def _disc_offsets(radius: int) -> Tuple[np.ndarray, np.ndarray]:
    dy, dx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    inside = dx * dx + dy * dy <= radius * radius
    return dx[inside], dy[inside]


def compute_moments(img: GrayImage, cx: int, cy: int, radius: int) -> OrientationMoments:
    """Moments m00, m10, m01 over the integer disc dx^2 + dy^2 <= radius^2.

    Raises:
        PatchBoundsError: If the disc is not fully inside the image.
    """
    cx, cy, radius = int(cx), int(cy), int(radius)
    if cx - radius < 0 or cy - radius < 0 or cx + radius >= img.width or cy + radius >= img.height:
        raise PatchBoundsError(
            f"Disc of radius {radius} at ({cx}, {cy}) leaves the "
            f"{img.width}x{img.height} image; enforce a border margin."
        )
    dx, dy = _disc_offsets(radius)
    values = img.data[cy + dy, cx + dx].astype(np.int64)
    return OrientationMoments(
        m00=int(values.sum()),
        m10=int(np.dot(dx, values)),
        m01=int(np.dot(dy, values)),
    )


def orientation(moments: OrientationMoments) -> float:
    """Angle of the centroid vector, atan2(m01, m10), in [0, 2pi).

    A degenerate patch (m10 = m01 = 0) has angle 0; check `moments.degenerate`.
    """
    if moments.degenerate:
        return 0.0
    angle = math.atan2(moments.m01, moments.m10) % TWO_PI
    if angle >= TWO_PI:
        angle = 0.0
    return angle


def detect(img: GrayImage, config: mlc.ConfigDict) -> List[Keypoint]:
    """Oriented multi-scale corners, at most `max_features`, by descending response.

    Ties are ordered by (octave, y, x) at the keypoint's own level.
    """
    pyramid = Pyramid.build(img, config.pyramid_levels, config.scale_factor)
    radius = int(config.patch_radius)

    candidates = []
    for octave, level in enumerate(pyramid.levels):
        level_kps = fast_detect(level, config.fast_threshold, radius)
        logging.debug(
            "Level %d (%dx%d): %d corners", octave, level.width, level.height, len(level_kps)
        )
        for kp in level_kps:
            candidates.append((-kp.response, octave, int(kp.y), int(kp.x)))
    candidates.sort()

    keypoints = []
    for neg_response, octave, y, x in candidates[: config.max_features]:
        moments = compute_moments(pyramid[octave], x, y, radius)
        scale = pyramid.scale(octave)
        keypoints.append(
            Keypoint(
                x=x * scale,
                y=y * scale,
                response=-neg_response,
                angle=orientation(moments),
                octave=octave,
                degenerate=moments.degenerate,
            )
        )
    return keypoints
