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

"""Stereo matching, geometric match constraints and circular matching.

Nothing here uses epipolar geometry: left/right correspondences come from the
descriptors, and the row/disparity constraints only prune them afterwards.
"""

import dataclasses
from typing import Dict, List, Protocol, Sequence, Tuple

import ml_collections as mlc
import numpy as np

from cforb.features import descriptor
from cforb.features.detector import Keypoint

Point2 = Tuple[float, float]


@dataclasses.dataclass(frozen=True)
class StereoMatch:
    """Mutual-best correspondence between a left and a right keypoint."""

    left_idx: int
    right_idx: int
    distance: int  # Hamming bits


@dataclasses.dataclass(frozen=True)
class CircularMatch:
    """A feature closed across the four images of two consecutive stereo pairs."""

    p_l_prev: Point2
    p_r_prev: Point2
    p_l_curr: Point2
    p_r_curr: Point2
    # Keypoint indices in the four images.
    l_prev_idx: int = -1
    r_prev_idx: int = -1
    l_curr_idx: int = -1
    r_curr_idx: int = -1
    # Indices into the previous/current stereo match lists.
    prev_match: int = -1
    curr_match: int = -1


class StereoFeatures(Protocol):
    """What circular matching needs from an extracted frame."""

    left_kps: Sequence[Keypoint]
    right_kps: Sequence[Keypoint]
    left_desc: descriptor.DescriptorSet
    right_desc: descriptor.DescriptorSet
    stereo: Sequence[StereoMatch]


def match_stereo(
    left_desc: descriptor.DescriptorSet,
    right_desc: descriptor.DescriptorSet,
    config: mlc.ConfigDict,
) -> List[StereoMatch]:
    """Mutual-best cascade matches, ordered by left index.

    (i, j) is kept iff j is the cascade match of left i among all right
    descriptors and i is the cascade match of right j among all left ones.
    Descriptors with an all-zero coarse prefix never match.
    """
    if len(left_desc) == 0 or len(right_desc) == 0:
        return []
    dist = descriptor.distance_matrix(left_desc, right_desc, config)
    dist[~descriptor.informative(left_desc), :] = descriptor.NO_MATCH
    dist[:, ~descriptor.informative(right_desc)] = descriptor.NO_MATCH
    # argmin returns the first minimum, i.e. the lowest index on ties.
    best_right = np.argmin(dist, axis=1)
    best_left = np.argmin(dist, axis=0)
    matches = []
    for i, j in enumerate(best_right):
        d = int(dist[i, j])
        if d > config.full_hamming_max:
            continue
        if best_left[j] == i:
            matches.append(StereoMatch(left_idx=i, right_idx=int(j), distance=d))
    return matches


def vertical_filter(
    matches: Sequence[StereoMatch],
    left_kps: Sequence[Keypoint],
    right_kps: Sequence[Keypoint],
    max_dy: float,
) -> List[StereoMatch]:
    """Keeps matches with |y_left - y_right| <= max_dy."""
    return [
        m for m in matches
        if abs(left_kps[m.left_idx].y - right_kps[m.right_idx].y) <= max_dy
    ]


def horizontal_filter(
    matches: Sequence[StereoMatch],
    left_kps: Sequence[Keypoint],
    right_kps: Sequence[Keypoint],
    max_dx: float,
    min_disp: float,
) -> List[StereoMatch]:
    """Keeps matches with min_disp <= x_left - x_right <= max_dx."""
    return [
        m for m in matches
        if min_disp <= left_kps[m.left_idx].x - right_kps[m.right_idx].x <= max_dx
    ]


def _positions(kps: Sequence[Keypoint]) -> np.ndarray:
    if not kps:
        return np.zeros((0, 2))
    return np.array([(kp.x, kp.y) for kp in kps], dtype=np.float64)


def _in_window(positions: np.ndarray, center: np.ndarray, half_size: float) -> np.ndarray:
    """Ascending indices of positions inside the square window around `center`."""
    if len(positions) == 0:
        return np.zeros((0,), dtype=np.int64)
    inside = np.all(np.abs(positions - center) <= half_size, axis=1)
    return np.nonzero(inside)[0]


def circular_match(
    prev: StereoFeatures, curr: StereoFeatures, config: mlc.ConfigDict
) -> List[CircularMatch]:
    """Closes each current stereo match through the previous stereo pair.

    For a current match (l, r): the current-left descriptor is matched against
    previous-left features inside the window around l; the winner must belong
    to a previous stereo match whose right feature is then matched against
    current-right features inside the window around it. The loop closes iff
    that last match returns r. Output follows the current match order.
    """
    window = config.circular_window_px
    prev_left_pos = _positions(prev.left_kps)
    curr_left_pos = _positions(curr.left_kps)
    prev_right_pos = _positions(prev.right_kps)
    curr_right_pos = _positions(curr.right_kps)
    prev_match_of_left: Dict[int, int] = {
        m.left_idx: k for k, m in enumerate(prev.stereo)
    }

    closed = []
    for k, match in enumerate(curr.stereo):
        # (1) current left -> previous left.
        candidates = _in_window(prev_left_pos, curr_left_pos[match.left_idx], window)
        l_prev = descriptor.cascade_match(
            curr.left_desc[match.left_idx], prev.left_desc[candidates], config, candidates
        )
        if l_prev is None:
            continue
        # (2) previous left -> previous right through the previous stereo match.
        prev_k = prev_match_of_left.get(l_prev)
        if prev_k is None:
            continue
        r_prev = prev.stereo[prev_k].right_idx
        # (3) previous right -> current right.
        candidates = _in_window(curr_right_pos, prev_right_pos[r_prev], window)
        r_curr = descriptor.cascade_match(
            prev.right_desc[r_prev], curr.right_desc[candidates], config, candidates
        )
        # (4) the loop must return to the starting match.
        if r_curr != match.right_idx:
            continue
        closed.append(
            CircularMatch(
                p_l_prev=tuple(prev_left_pos[l_prev]),
                p_r_prev=tuple(prev_right_pos[r_prev]),
                p_l_curr=tuple(curr_left_pos[match.left_idx]),
                p_r_curr=tuple(curr_right_pos[match.right_idx]),
                l_prev_idx=l_prev,
                r_prev_idx=r_prev,
                l_curr_idx=match.left_idx,
                r_curr_idx=match.right_idx,
                prev_match=prev_k,
                curr_match=k,
            )
        )
    return closed
