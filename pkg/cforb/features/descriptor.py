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

"""Retina-pattern binary descriptors and Hamming matching.

A descriptor is a `uint8[64]` array: 512 intensity comparisons between
smoothed receptive fields, bit k stored most-significant-first in byte k // 8.
The first 16 bytes only compare points of the three outer rings, which makes
them usable as a coarse pre-filter before the full distance.
"""

import dataclasses
import functools
import itertools
from typing import Optional, Sequence, Tuple

import ml_collections as mlc
import numpy as np

from cforb.core import GrayImage
from cforb.errors import PatchBoundsError
from cforb.features.detector import Keypoint

BinaryDescriptor = np.ndarray  # [64] uint8
DescriptorSet = np.ndarray  # [num_descriptors, 64] uint8

NUM_RINGS = 7
POINTS_PER_RING = 6
NUM_POINTS = 1 + NUM_RINGS * POINTS_PER_RING  # := 43.
NUM_PAIRS = 512
DESCRIPTOR_BYTES = NUM_PAIRS // 8  # := 64.
COARSE_BYTES = 16
INNER_RADIUS = 1.5
OUTER_RADIUS = 22.0
CENTER_SIGMA = 1.0

# Distance reported for pairs rejected by the coarse test.
NO_MATCH = NUM_PAIRS + 1

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


@dataclasses.dataclass(frozen=True)
class SamplingPattern:
    """Receptive fields at unit scale and the ordered comparison pairs."""

    # [43, 3]: dx, dy, sigma in pixels. Ring 7 (outermost) first, centre last.
    points: np.ndarray
    # [43]: ring index of each point, 0 for the centre.
    rings: np.ndarray
    # [512, 2]: (i, j) point indices, coarse to fine.
    pairs: np.ndarray

    def __post_init__(self):
        if self.points.shape != (NUM_POINTS, 3):
            raise ValueError(f"Expected {NUM_POINTS} receptive fields, got {self.points.shape}.")
        if self.pairs.shape != (NUM_PAIRS, 2):
            raise ValueError(f"Expected {NUM_PAIRS} pairs, got {self.pairs.shape}.")
        if np.any(self.pairs[:, 0] == self.pairs[:, 1]):
            raise ValueError("A pair compares a receptive field with itself.")
        if len({tuple(p) for p in self.pairs.tolist()}) != NUM_PAIRS:
            raise ValueError("Sampling pairs must be unique.")

    @property
    def max_extent(self) -> float:
        """Largest distance from the keypoint covered at unit scale."""
        return float(np.max(np.hypot(self.points[:, 0], self.points[:, 1]) + self.points[:, 2]))


def ring_radii() -> np.ndarray:
    """Radii of rings 1..7, geometric from 1.5 px to 22 px."""
    ratio = OUTER_RADIUS / INNER_RADIUS
    return INNER_RADIUS * ratio ** (np.arange(NUM_RINGS) / (NUM_RINGS - 1))


@functools.lru_cache(maxsize=1)
def build_pattern() -> SamplingPattern:
    """The deterministic 43-field pattern and its 512 coarse-to-fine pairs."""
    radii = ring_radii()
    gaps = np.diff(radii)
    points = []
    rings = []
    for ring in range(NUM_RINGS, 0, -1):
        radius = radii[ring - 1]
        # The outermost ring has no next ring and reuses its inner gap.
        sigma = 0.5 * (gaps[ring - 1] if ring < NUM_RINGS else gaps[-1])
        offset = (ring % 2) * np.pi / POINTS_PER_RING
        for j in range(POINTS_PER_RING):
            theta = 2.0 * np.pi * j / POINTS_PER_RING + offset
            points.append((radius * np.cos(theta), radius * np.sin(theta), sigma))
            rings.append(ring)
    points.append((0.0, 0.0, CENTER_SIGMA))
    rings.append(0)

    # With points ordered outermost first, i < j gives ring_i >= ring_j.
    candidates = sorted(
        itertools.combinations(range(NUM_POINTS), 2),
        key=lambda p: (-(rings[p[0]] + rings[p[1]]) / 2.0, rings[p[0]], rings[p[1]], p[0], p[1]),
    )
    return SamplingPattern(
        points=np.array(points, dtype=np.float64),
        rings=np.array(rings, dtype=np.int32),
        pairs=np.array(candidates[:NUM_PAIRS], dtype=np.int32),
    )


@functools.lru_cache(maxsize=32)
def _disc_offsets(radius: int) -> Tuple[np.ndarray, np.ndarray]:
    dy, dx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    inside = dx * dx + dy * dy <= radius * radius
    return dx[inside], dy[inside]


def _field_means(
    data: np.ndarray, cx: np.ndarray, cy: np.ndarray, radii: np.ndarray
) -> np.ndarray:
    """Mean intensity over integer discs; cx, cy are [N, P], radii is [P]."""
    means = np.zeros(cx.shape, dtype=np.float64)
    for radius in np.unique(radii):
        cols = np.nonzero(radii == radius)[0]
        dx, dy = _disc_offsets(int(radius))
        values = data[cy[:, cols, None] + dy, cx[:, cols, None] + dx]
        means[:, cols] = values.sum(axis=-1, dtype=np.int64) / float(len(dx))
    return means


def compute_all(
    img: GrayImage,
    keypoints: Sequence[Keypoint],
    pattern: SamplingPattern,
    scale_factor: float,
) -> Tuple[np.ndarray, DescriptorSet]:
    """Describes every keypoint whose receptive fields fit in the image.

    Returns:
        A tuple of:
            * Indices into `keypoints` of the described keypoints, ascending.
            * The [num_kept, 64] uint8 descriptors, aligned with the indices.
    """
    num = len(keypoints)
    if num == 0:
        return np.zeros((0,), dtype=np.int64), np.zeros((0, DESCRIPTOR_BYTES), dtype=np.uint8)

    xs = np.array([kp.x for kp in keypoints])
    ys = np.array([kp.y for kp in keypoints])
    angles = np.array([kp.angle for kp in keypoints])
    octaves = np.array([kp.octave for kp in keypoints])
    cos, sin = np.cos(angles)[:, None], np.sin(angles)[:, None]

    kept = np.zeros(num, dtype=bool)
    bits = np.zeros((num, NUM_PAIRS), dtype=bool)
    for octave in np.unique(octaves):
        members = np.nonzero(octaves == octave)[0]
        scale = scale_factor ** int(octave)
        dx = scale * pattern.points[None, :, 0]
        dy = scale * pattern.points[None, :, 1]
        px = xs[members, None] + dx * cos[members] - dy * sin[members]
        py = ys[members, None] + dx * sin[members] + dy * cos[members]
        cx = np.rint(px).astype(np.int64)
        cy = np.rint(py).astype(np.int64)
        radii = np.rint(scale * pattern.points[:, 2]).astype(np.int64)

        inside = np.all(
            (cx - radii >= 0)
            & (cy - radii >= 0)
            & (cx + radii < img.width)
            & (cy + radii < img.height),
            axis=1,
        )
        if not np.any(inside):
            continue
        rows = members[inside]
        means = _field_means(img.data, cx[inside], cy[inside], radii)
        bits[rows] = means[:, pattern.pairs[:, 0]] > means[:, pattern.pairs[:, 1]]
        kept[rows] = True

    indices = np.nonzero(kept)[0]
    return indices, np.packbits(bits[indices], axis=1)


def compute(
    img: GrayImage, kp: Keypoint, pattern: SamplingPattern, scale_factor: float = 1.2
) -> BinaryDescriptor:
    """Descriptor of a single keypoint.

    Raises:
        PatchBoundsError: If a receptive field falls outside the image.
    """
    indices, descriptors = compute_all(img, [kp], pattern, scale_factor)
    if len(indices) == 0:
        raise PatchBoundsError(
            f"Receptive fields of keypoint ({kp.x:.1f}, {kp.y:.1f}) at octave "
            f"{kp.octave} leave the {img.width}x{img.height} image."
        )
    return descriptors[0]


def hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bit distance between byte strings, broadcast over leading dimensions."""
    distance = _POPCOUNT[np.bitwise_xor(a, b)].sum(axis=-1, dtype=np.int64)
    if np.ndim(distance) == 0:
        return int(distance)
    return distance


def informative(descriptors: np.ndarray) -> np.ndarray:
    """Mask of descriptors with at least one set bit in the coarse prefix.

    Outer receptive fields lying on one flat intensity compare equal and leave
    the coarse bytes zero; such descriptors do not identify their keypoint.
    """
    descriptors = np.asarray(descriptors, dtype=np.uint8)
    return np.any(descriptors[..., :COARSE_BYTES] != 0, axis=-1)


def cascade_match(
    query: BinaryDescriptor,
    candidates: DescriptorSet,
    config: mlc.ConfigDict,
    candidate_ids: Optional[np.ndarray] = None,
) -> Optional[int]:
    """Best candidate after the coarse 16-byte test, or None.

    Candidates whose first 16 bytes differ from the query by more than
    `coarse_hamming_max` bits are skipped. The smallest full distance wins if
    it is at most `full_hamming_max`; ties go to the lowest index.

    Args:
        query: The [64] descriptor to match.
        candidates: The [N, 64] descriptors to search.
        config: Pipeline configuration providing both thresholds.
        candidate_ids: Optional ascending ids reported instead of row numbers.

    Returns:
        The row number (or id) of the winner, or None.
    """
    candidates = np.asarray(candidates, dtype=np.uint8).reshape(-1, DESCRIPTOR_BYTES)
    if len(candidates) == 0:
        return None
    coarse = hamming(query[:COARSE_BYTES], candidates[:, :COARSE_BYTES])
    survivors = np.nonzero(coarse <= config.coarse_hamming_max)[0]
    if len(survivors) == 0:
        return None
    full = hamming(query, candidates[survivors])
    best = int(np.argmin(full))
    if full[best] > config.full_hamming_max:
        return None
    index = int(survivors[best])
    return int(candidate_ids[index]) if candidate_ids is not None else index


def distance_matrix(
    a: DescriptorSet, b: DescriptorSet, config: mlc.ConfigDict, chunk_size: int = 256
) -> np.ndarray:
    """Full distances [len(a), len(b)], NO_MATCH where the coarse test fails."""
    out = np.full((len(a), len(b)), NO_MATCH, dtype=np.int64)
    if len(a) == 0 or len(b) == 0:
        return out
    for start in range(0, len(a), chunk_size):
        rows = a[start : start + chunk_size, None, :]
        coarse = hamming(rows[..., :COARSE_BYTES], b[None, :, :COARSE_BYTES])
        full = hamming(rows, b[None, :, :])
        out[start : start + chunk_size] = np.where(
            coarse <= config.coarse_hamming_max, full, NO_MATCH
        )
    return out
