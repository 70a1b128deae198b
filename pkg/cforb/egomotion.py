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

"""Frame-to-frame ego-motion from stereo reprojection errors.

Landmarks triangulated in the previous stereo pair are moved by the motion
(r, t) and reprojected into the current pair. The motion minimises the sum of
squared left and right reprojection errors with plain Gauss-Newton, wrapped in
RANSAC over minimal samples and refined on the final inlier set.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence

from absl import logging
import ml_collections as mlc
import numpy as np
import scipy.linalg

from cforb.core import MotionParams, StereoCalib, rotation_x, rotation_y, rotation_z
from cforb.errors import EstimationError, NonConvergenceError, SingularSystemError
from cforb.geometry import Landmark, project_points

NUM_PARAMS = 6
MAX_CONDITION = 1e12


@dataclasses.dataclass(frozen=True)
class Observation:
    """A previous-frame landmark and its detections in the current pair."""

    landmark: Landmark
    x_l: np.ndarray  # [2] current left pixel
    x_r: np.ndarray  # [2] current right pixel
    row_offset: float = 0.0


@dataclasses.dataclass(frozen=True)
class Observations:
    """Batched observations; row i is one `Observation`."""

    landmarks: np.ndarray  # [N, 3]
    left: np.ndarray  # [N, 2]
    right: np.ndarray  # [N, 2]
    # Right-image row minus left-image row of each landmark's stereo match,
    # added to the predicted right row. Zero when None.
    row_offset: Optional[np.ndarray] = None  # [N]

    def __post_init__(self):
        landmarks = np.asarray(self.landmarks, dtype=np.float64).reshape(-1, 3)
        left = np.asarray(self.left, dtype=np.float64).reshape(-1, 2)
        right = np.asarray(self.right, dtype=np.float64).reshape(-1, 2)
        if self.row_offset is None:
            row_offset = np.zeros(len(landmarks))
        else:
            row_offset = np.asarray(self.row_offset, dtype=np.float64).reshape(-1)
        if not len(landmarks) == len(left) == len(right) == len(row_offset):
            raise ValueError(
                "All observation fields must have the same length. "
                f"Got {len(landmarks)} landmarks, {len(left)} left and "
                f"{len(right)} right pixels and {len(row_offset)} row offsets."
            )
        if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
            raise ValueError("Observed pixels must be finite.")
        if not np.all(np.isfinite(row_offset)):
            raise ValueError("Row offsets must be finite.")
        object.__setattr__(self, "landmarks", landmarks)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "row_offset", row_offset)

    @staticmethod
    def empty() -> Observations:
        return Observations(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((0, 2)))

    @staticmethod
    def stack(items: Sequence[Observation]) -> Observations:
        if not items:
            return Observations.empty()
        return Observations(
            landmarks=np.stack([o.landmark.X for o in items]),
            left=np.stack([np.asarray(o.x_l, dtype=np.float64) for o in items]),
            right=np.stack([np.asarray(o.x_r, dtype=np.float64) for o in items]),
            row_offset=np.array([o.row_offset for o in items], dtype=np.float64),
        )

    def __len__(self) -> int:
        return len(self.landmarks)

    def __getitem__(self, index: int) -> Observation:
        return Observation(
            Landmark(self.landmarks[index]), self.left[index], self.right[index],
            float(self.row_offset[index]),
        )

    def subset(self, indices: Sequence[int]) -> Observations:
        indices = np.asarray(indices, dtype=np.int64)
        return Observations(
            self.landmarks[indices], self.left[indices], self.right[indices],
            self.row_offset[indices],
        )

    @property
    def measured(self) -> np.ndarray:
        """[N, 4] rows (u_l, v_l, u_r, v_r)."""
        return np.concatenate([self.left, self.right], axis=1)


@dataclasses.dataclass(frozen=True)
class MotionEstimate:
    params: MotionParams
    inlier_indices: np.ndarray  # sorted, unique
    final_cost: float  # square pixels over the inliers


def _predict(motion: MotionParams, obs: Observations, calib: StereoCalib):
    uv_l, uv_r, valid = project_points(obs.landmarks, motion.rotation, motion.t, calib)
    uv_r[:, 1] += obs.row_offset
    return np.concatenate([uv_l, uv_r], axis=1), valid


def residuals(motion: MotionParams, obs: Observations, calib: StereoCalib) -> np.ndarray:
    """[4N] residuals observed - predicted, rows (u_l, v_l, u_r, v_r) per observation.

    Observations that move behind the camera get +inf residuals.
    """
    if len(obs) == 0:
        return np.zeros((0,))
    predicted, valid = _predict(motion, obs, calib)
    res = obs.measured - predicted
    res[~valid] = np.inf
    return res.reshape(-1)


def cost(motion: MotionParams, obs: Observations, calib: StereoCalib) -> float:
    """Sum of squared reprojection errors; +inf if a landmark is behind the camera."""
    res = residuals(motion, obs, calib)
    return float(np.dot(res, res))


def _rotation_derivatives(r: np.ndarray):
    """dR/drx, dR/dry, dR/drz for R = Rx Ry Rz."""
    rx, ry, rz = rotation_x(r[0]), rotation_y(r[1]), rotation_z(r[2])
    cx, sx = math.cos(r[0]), math.sin(r[0])
    cy, sy = math.cos(r[1]), math.sin(r[1])
    cz, sz = math.cos(r[2]), math.sin(r[2])
    d_rx = np.array([[0.0, 0.0, 0.0], [0.0, -sx, -cx], [0.0, cx, -sx]])
    d_ry = np.array([[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]])
    d_rz = np.array([[-sz, -cz, 0.0], [cz, -sz, 0.0], [0.0, 0.0, 0.0]])
    return d_rx @ ry @ rz, rx @ d_ry @ rz, rx @ ry @ d_rz


def jacobian(motion: MotionParams, obs: Observations, calib: StereoCalib) -> np.ndarray:
    """[4N, 6] derivatives of `residuals` w.r.t. (rx, ry, rz, tx, ty, tz)."""
    num = len(obs)
    if num == 0:
        return np.zeros((0, NUM_PARAMS))
    points = obs.landmarks
    moved = points @ motion.rotation.T + motion.t
    x, y, z = moved[:, 0], moved[:, 1], moved[:, 2]

    # d X' / d params: [N, 3, 6].
    d_moved = np.zeros((num, 3, NUM_PARAMS))
    for k, d_rot in enumerate(_rotation_derivatives(motion.r)):
        d_moved[:, :, k] = points @ d_rot.T
    d_moved[:, :, 3:] = np.eye(3)

    # d (u_l, v_l, u_r, v_r) / d X': [N, 4, 3].
    f = calib.f
    inv_z = 1.0 / z
    d_proj = np.zeros((num, 4, 3))
    d_proj[:, 0, 0] = f * inv_z
    d_proj[:, 0, 2] = -f * x * inv_z**2
    d_proj[:, 1, 1] = f * inv_z
    d_proj[:, 1, 2] = -f * y * inv_z**2
    d_proj[:, 2, 0] = f * inv_z
    d_proj[:, 2, 2] = -f * (x - calib.baseline) * inv_z**2
    d_proj[:, 3, :] = d_proj[:, 1, :]

    # Residuals are observed - predicted.
    return -(d_proj @ d_moved).reshape(4 * num, NUM_PARAMS)


def gauss_newton(
    init: MotionParams,
    obs: Observations,
    calib: StereoCalib,
    max_iters: int = 50,
    step_tol: float = 1e-9,
) -> MotionParams:
    """Minimises the stereo reprojection cost from `init`.

    Iterates delta = -(J^T J)^-1 J^T r until |delta| < step_tol or `max_iters`.
    The returned motion never costs more than `init`.

    Raises:
        SingularSystemError: If J^T J is numerically singular.
        NonConvergenceError: With fewer than 3 observations, a landmark behind
            the camera, or a cost increase on two consecutive iterations.
    """
    if len(obs) < 3:
        raise NonConvergenceError(f"Gauss-Newton needs 3 observations, got {len(obs)}.")
    current = init
    current_cost = cost(current, obs, calib)
    if not math.isfinite(current_cost):
        raise NonConvergenceError("A landmark is behind the camera at the initial motion.")
    best, best_cost = current, current_cost
    increases = 0

    for iteration in range(max_iters):
        res = residuals(current, obs, calib)
        jac = jacobian(current, obs, calib)
        hessian = jac.T @ jac
        gradient = jac.T @ res
        condition = np.linalg.cond(hessian)
        if not math.isfinite(condition) or condition > MAX_CONDITION:
            raise SingularSystemError(
                f"Normal equations are singular (condition number {condition:.3g})."
            )
        try:
            delta = -scipy.linalg.solve(hessian, gradient, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError) as e:
            raise SingularSystemError(f"Normal equations cannot be solved: {e}") from e

        current = MotionParams.from_vector(current.as_vector() + delta)
        new_cost = cost(current, obs, calib)
        if not math.isfinite(new_cost):
            raise NonConvergenceError("Gauss-Newton step moved a landmark behind the camera.")
        logging.vlog(2, "Gauss-Newton iteration %d: cost %.6g, |delta| %.3g",
                     iteration, new_cost, np.linalg.norm(delta))

        increases = increases + 1 if new_cost > current_cost else 0
        if increases >= 2:
            raise NonConvergenceError(
                f"Cost increased on two consecutive iterations (now {new_cost:.6g})."
            )
        if new_cost < best_cost:
            best, best_cost = current, new_cost
        current_cost = new_cost
        if np.linalg.norm(delta) < step_tol:
            break
    return best


def classify_inliers(
    motion: MotionParams, obs: Observations, calib: StereoCalib, threshold: float
) -> np.ndarray:
    """Indices i with |x_l - pi_l|^2 + |x_r - pi_r|^2 < threshold, ascending.

    Observations behind the camera are outliers.
    """
    if len(obs) == 0:
        return np.zeros((0,), dtype=np.int64)
    predicted, valid = _predict(motion, obs, calib)
    errors = np.sum((obs.measured - predicted) ** 2, axis=1)
    return np.nonzero(valid & (errors < threshold))[0]


def _draw_samples(num_obs: int, config: mlc.ConfigDict, rng: np.random.Generator):
    return [
        np.sort(rng.choice(num_obs, size=config.ransac_sample_size, replace=False))
        for _ in range(config.ransac_iterations)
    ]


def ransac_estimate(
    obs: Observations,
    calib: StereoCalib,
    config: mlc.ConfigDict,
    rng: Optional[np.random.Generator] = None,
) -> MotionEstimate:
    """Robust motion: RANSAC over minimal samples, then an all-inlier refinement.

    Every sample is fitted by Gauss-Newton from zero motion and scored by its
    inlier count over all observations, ties going to the lower inlier cost.
    All samples are drawn up front from `rng`, a generator seeded with
    `config.seed` when None.

    Raises:
        EstimationError: With fewer observations than the sample size, or when
            no sample converges.
    """
    if len(obs) < config.ransac_sample_size:
        raise EstimationError(
            f"RANSAC needs {config.ransac_sample_size} observations, got {len(obs)}."
        )
    if rng is None:
        rng = np.random.default_rng(config.seed)
    samples = _draw_samples(len(obs), config, rng)

    best: Optional[MotionEstimate] = None
    failures = 0
    for sample in samples:
        try:
            motion = gauss_newton(
                MotionParams.zero(), obs.subset(sample), calib,
                config.gn_max_iters, config.gn_step_tol,
            )
        except NonConvergenceError as e:
            failures += 1
            logging.vlog(1, "RANSAC sample %s rejected: %s", sample.tolist(), e)
            continue
        inliers = classify_inliers(motion, obs, calib, config.inlier_threshold)
        inlier_cost = cost(motion, obs.subset(inliers), calib)
        if (
            best is None
            or len(inliers) > len(best.inlier_indices)
            or (len(inliers) == len(best.inlier_indices) and inlier_cost < best.final_cost)
        ):
            best = MotionEstimate(motion, inliers, inlier_cost)
    if best is None:
        raise EstimationError(f"None of the {len(samples)} RANSAC samples converged.")

    if len(best.inlier_indices) >= config.ransac_sample_size:
        try:
            refined = gauss_newton(
                best.params, obs.subset(best.inlier_indices), calib,
                config.gn_max_iters, config.gn_step_tol,
            )
            inliers = classify_inliers(refined, obs, calib, config.inlier_threshold)
            if len(inliers) >= len(best.inlier_indices):
                best = MotionEstimate(refined, inliers, cost(refined, obs.subset(inliers), calib))
        except NonConvergenceError as e:
            logging.warning("Inlier refinement failed, keeping the best sample: %s", e)

    logging.vlog(
        1, "RANSAC: %d/%d inliers, %d failed samples, cost %.4g",
        len(best.inlier_indices), len(obs), failures, best.final_cost,
    )
    return best
