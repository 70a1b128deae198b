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

"""Rectified stereo geometry: triangulation, reprojection and epipolar residuals."""

import dataclasses
from typing import Optional, Sequence, Tuple

import numpy as np

from cforb.core import MotionParams, StereoCalib
from cforb.errors import BehindCameraError, TriangulationError

LEFT = "left"
RIGHT = "right"


@dataclasses.dataclass(frozen=True)
class Landmark:
    """3-D point in the left-camera frame of the stereo pair that observed it."""

    X: np.ndarray  # [3] meters

    def __post_init__(self):
        point = np.asarray(self.X, dtype=np.float64).reshape(-1)
        if point.shape != (3,) or not np.all(np.isfinite(point)):
            raise ValueError(f"Landmark needs a finite 3-vector, got {self.X!r}.")
        if point[2] <= 0:
            raise ValueError(f"Landmark must lie in front of the camera, got Z={point[2]}.")
        object.__setattr__(self, "X", point)


def triangulate(
    p_l: Sequence[float],
    p_r: Sequence[float],
    calib: StereoCalib,
    min_disparity: float = 0.5,
    max_dy: Optional[float] = None,
) -> Landmark:
    """Back-projects a rectified stereo correspondence using the left row.

    Raises:
        TriangulationError: If the disparity is below `min_disparity` or the
            rows disagree by more than `max_dy`.
    """
    u_l, v_l = float(p_l[0]), float(p_l[1])
    u_r, v_r = float(p_r[0]), float(p_r[1])
    disparity = u_l - u_r
    if not disparity >= min_disparity:
        raise TriangulationError(
            f"Disparity {disparity:.3f} px is below the minimum of {min_disparity} px."
        )
    if max_dy is not None and abs(v_l - v_r) > max_dy:
        raise TriangulationError(
            f"Rows {v_l:.2f} and {v_r:.2f} differ by more than {max_dy} px."
        )
    z = calib.f * calib.baseline / disparity
    return Landmark(
        np.array([(u_l - calib.cu) * z / calib.f, (v_l - calib.cv) * z / calib.f, z])
    )


def triangulate_points(
    p_l: np.ndarray, p_r: np.ndarray, calib: StereoCalib
) -> np.ndarray:
    """Vectorized triangulation of [N, 2] pixel arrays; no disparity checks."""
    disparity = p_l[:, 0] - p_r[:, 0]
    z = calib.f * calib.baseline / disparity
    x = (p_l[:, 0] - calib.cu) * z / calib.f
    y = (p_l[:, 1] - calib.cv) * z / calib.f
    return np.stack([x, y, z], axis=-1)


def project_points(
    points: np.ndarray, rotation: np.ndarray, translation: np.ndarray, calib: StereoCalib
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Projects [N, 3] points moved by X' = R X + t into both cameras.

    Returns:
        A tuple of:
            * [N, 2] left pixels.
            * [N, 2] right pixels.
            * [N] mask of points with Z' > 0; other rows are not meaningful.
    """
    moved = points @ rotation.T + translation
    z = moved[:, 2]
    valid = z > 0
    safe_z = np.where(valid, z, 1.0)
    v = calib.f * moved[:, 1] / safe_z + calib.cv
    u_l = calib.f * moved[:, 0] / safe_z + calib.cu
    u_r = calib.f * (moved[:, 0] - calib.baseline) / safe_z + calib.cu
    return np.stack([u_l, v], axis=-1), np.stack([u_r, v], axis=-1), valid


def project(
    landmark: Landmark, motion: MotionParams, calib: StereoCalib, side: str = LEFT
) -> Tuple[float, float]:
    """Pixel of `landmark` after `motion` in the left or right camera.

    Raises:
        BehindCameraError: If the moved point has Z' <= 0.
    """
    if side not in (LEFT, RIGHT):
        raise ValueError(f"side must be '{LEFT}' or '{RIGHT}', got {side!r}.")
    uv_l, uv_r, valid = project_points(landmark.X[None, :], motion.rotation, motion.t, calib)
    if not valid[0]:
        raise BehindCameraError(f"Landmark {landmark.X} moves behind the camera.")
    uv = uv_l[0] if side == LEFT else uv_r[0]
    return float(uv[0]), float(uv[1])


def rectified_fundamental() -> np.ndarray:
    """Fundamental matrix of a rectified pair: m'^T F m = v - v'."""
    return np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def stereo_fundamental(calib: StereoCalib) -> np.ndarray:
    """F = K^-T [t]x K^-1 of the rig, with the right camera at x = +baseline."""
    k_inv = np.linalg.inv(calib.intrinsics)
    # Right camera coordinates: X_r = X_l - (baseline, 0, 0).
    t = np.array([-calib.baseline, 0.0, 0.0])
    t_cross = np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])
    return k_inv.T @ t_cross @ k_inv


def epipolar_residual(m: Sequence[float], m_prime: Sequence[float], fundamental: np.ndarray) -> float:
    """The scalar m'^T F m for homogeneous pixels (u, v, 1)."""
    m = np.asarray(m, dtype=np.float64)
    m_prime = np.asarray(m_prime, dtype=np.float64)
    return float(m_prime @ fundamental @ m)
