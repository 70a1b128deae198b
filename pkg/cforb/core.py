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

"""Value types shared by every stage: images, calibration, motions and poses."""

from __future__ import annotations

import dataclasses
import math
from typing import List, Sequence, Tuple

import cv2
import numpy as np

# Smallest pyramid level side, in pixels.
MIN_LEVEL_SIZE = 32

# Orthonormality tolerance applied when a pose is constructed. Pose files carry
# about seven significant digits, so this is looser than what composition keeps.
POSE_ORTHONORMAL_TOL = 1e-4


@dataclasses.dataclass(frozen=True)
class GrayImage:
    """Row-major 8-bit intensity raster."""

    data: np.ndarray  # [height, width] uint8

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"GrayImage needs a 2-D array, got shape {self.data.shape}.")
        if self.data.dtype != np.uint8:
            raise ValueError(f"GrayImage needs uint8 data, got {self.data.dtype}.")
        if self.data.size == 0:
            raise ValueError("GrayImage must have positive width and height.")

    @staticmethod
    def from_array(array: np.ndarray) -> GrayImage:
        """Rounds, clips to [0, 255] and casts `array` to a GrayImage."""
        array = np.asarray(array)
        if array.dtype != np.uint8:
            array = np.clip(np.rint(array), 0, 255).astype(np.uint8)
        return GrayImage(np.ascontiguousarray(array))

    @staticmethod
    def filled(width: int, height: int, value: int = 0) -> GrayImage:
        return GrayImage(np.full((height, width), value, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


def pyramid_level_size(width: int, height: int, scale_factor: float, level: int) -> Tuple[int, int]:
    """Size of pyramid `level`: floor(original / scale_factor^level)."""
    scale = scale_factor ** level
    return int(math.floor(width / scale)), int(math.floor(height / scale))


@dataclasses.dataclass(frozen=True)
class Pyramid:
    """Scale pyramid, largest level first; level 0 is the original image."""

    levels: Tuple[GrayImage, ...]
    scale_factor: float

    def __post_init__(self):
        if not self.levels:
            raise ValueError("A pyramid needs at least one level.")
        if self.scale_factor <= 1.0:
            raise ValueError(f"scale_factor must exceed 1, got {self.scale_factor}.")

    @staticmethod
    def build(image: GrayImage, num_levels: int, scale_factor: float) -> Pyramid:
        """Builds up to `num_levels` levels; stops before a side drops below 32."""
        levels: List[GrayImage] = [image]
        for k in range(1, num_levels):
            width, height = pyramid_level_size(image.width, image.height, scale_factor, k)
            if width < MIN_LEVEL_SIZE or height < MIN_LEVEL_SIZE:
                break
            resized = cv2.resize(image.data, (width, height), interpolation=cv2.INTER_AREA)
            levels.append(GrayImage(np.ascontiguousarray(resized)))
        return Pyramid(levels=tuple(levels), scale_factor=scale_factor)

    def scale(self, level: int) -> float:
        return self.scale_factor ** level

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, level: int) -> GrayImage:
        return self.levels[level]


def build_pyramid(image: GrayImage, num_levels: int, scale_factor: float) -> Pyramid:
    return Pyramid.build(image, num_levels, scale_factor)


@dataclasses.dataclass(frozen=True)
class StereoCalib:
    """Rectified stereo rig; both cameras share the intrinsics."""

    f: float  # focal length, pixels
    cu: float  # principal point u, pixels
    cv: float  # principal point v, pixels
    baseline: float  # meters

    def __post_init__(self):
        values = (self.f, self.cu, self.cv, self.baseline)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"Calibration values must be finite, got {values}.")
        if self.f <= 0:
            raise ValueError(f"Focal length must be positive, got {self.f}.")
        if self.baseline <= 0:
            raise ValueError(f"Baseline must be positive, got {self.baseline}.")

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.f, 0.0, self.cu], [0.0, self.f, self.cv], [0.0, 0.0, 1.0]]
        )


def rotation_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler(rx: float, ry: float, rz: float) -> np.ndarray:
    """R = Rx(rx) @ Ry(ry) @ Rz(rz)."""
    return rotation_x(rx) @ rotation_y(ry) @ rotation_z(rz)


def rotation_angle(rot: np.ndarray) -> float:
    """Rotation angle in radians, in [0, pi].

    Computed as atan2(|vee(R - R^T)| / 2, (trace - 1) / 2), which stays exact
    next to the identity where arccos((trace - 1) / 2) does not.
    """
    rot = np.asarray(rot, dtype=np.float64)
    cos = max(min(0.5 * (np.trace(rot) - 1.0), 1.0), -1.0)
    skew = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    sin = 0.5 * float(np.linalg.norm(skew))
    return float(math.atan2(sin, cos))


@dataclasses.dataclass(frozen=True)
class MotionParams:
    """Frame-to-frame motion: Euler angles `r` (radians) and translation `t` (meters)."""

    r: np.ndarray  # [3] (rx, ry, rz)
    t: np.ndarray  # [3]

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64).reshape(-1)
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if r.shape != (3,) or t.shape != (3,):
            raise ValueError(f"MotionParams needs two 3-vectors, got {r.shape} and {t.shape}.")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("MotionParams must be finite.")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @staticmethod
    def zero() -> MotionParams:
        return MotionParams(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(vec: Sequence[float]) -> MotionParams:
        vec = np.asarray(vec, dtype=np.float64)
        return MotionParams(vec[:3], vec[3:6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.t])

    @property
    def rotation(self) -> np.ndarray:
        return rotation_from_euler(*self.r)


@dataclasses.dataclass(frozen=True)
class Pose:
    """Rigid transform [R|t] mapping camera coordinates to world coordinates."""

    rotation: np.ndarray  # [3, 3]
    translation: np.ndarray  # [3]

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ValueError(
                f"incorrect pose shapes: rotation {rot.shape}, translation {trans.shape}"
            )
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ValueError("Pose must be finite.")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > POSE_ORTHONORMAL_TOL:
            raise ValueError("Pose rotation is not orthonormal.")
        if np.linalg.det(rot) < 0:
            raise ValueError("Pose rotation has determinant -1 (reflection).")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity() -> Pose:
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(matrix: np.ndarray) -> Pose:
        """Accepts a 3x4 [R|t] or a 4x4 homogeneous matrix."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape not in ((3, 4), (4, 4)):
            raise ValueError(f"Expected a 3x4 or 4x4 matrix, got {matrix.shape}.")
        return Pose(matrix[:3, :3], matrix[:3, 3])

    def to_matrix(self) -> np.ndarray:
        """3x4 [R|t]."""
        return np.concatenate([self.rotation, self.translation[:, None]], axis=1)

    def to_homogeneous(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :4] = self.to_matrix()
        return mat

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transforms [..., 3] points."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def inverse(self) -> Pose:
        rot_t = self.rotation.T
        return Pose(rot_t, -rot_t @ self.translation)

    def compose(self, child: Pose) -> Pose:
        return compose(self, child)

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)


def compose(parent: Pose, child: Pose) -> Pose:
    """Rigid composition parent * child (child applied first)."""
    return Pose(
        parent.rotation @ child.rotation,
        parent.rotation @ child.translation + parent.translation,
    )


def inverse(pose: Pose) -> Pose:
    return pose.inverse()


def motion_to_transform(motion: MotionParams) -> Pose:
    """Rigid transform X' = R(r) X + t of a motion; maps frame t-1 to frame t."""
    return Pose(motion.rotation, motion.t)
