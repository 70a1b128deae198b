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

"""Synthetic stereo scenes with known motion.

A scene is a cloud of landmarks expressed in the first left camera frame and a
list of frame-to-frame motions; motion k maps frame k coordinates to frame
k + 1 coordinates exactly like the estimated motions of the pipeline. Scenes
can be turned into noisy observation tracks or rendered as images in which
every landmark is a unique 9x9 binary sprite.
"""

import dataclasses
import os
from typing import List, Optional, Sequence, Tuple

from absl import logging
import numpy as np
import pandas as pd

from cforb import core
from cforb.core import GrayImage, MotionParams, Pose, StereoCalib
from cforb.data import dataset
from cforb.data import image as image_lib
from cforb.data import poses as poses_lib
from cforb.egomotion import Observations
from cforb.errors import DataError, SceneError
from cforb.geometry import project_points

SPRITE_SIZE = 9
SPRITE_HALF = SPRITE_SIZE // 2
# Footprint of a sprite rotated by any angle.
ROTATED_HALF = int(np.ceil(SPRITE_HALF * np.sqrt(2.0)))
BACKGROUND = 128
DARK = 20
BRIGHT = 235
FRAME_RATE_HZ = 10.0
MIN_DEPTH = 0.1

DEFAULT_IMAGE_SIZE = (640, 480)
DEFAULT_CALIB = StereoCalib(f=700.0, cu=320.0, cv=240.0, baseline=0.54)
DEFAULT_MOTION = MotionParams(r=np.array([0.0, 0.003, 0.0]), t=np.array([0.0, 0.0, -0.2]))

TRACK_COLUMNS = ["landmark", "x_l", "y_l", "x_r", "y_r", "outlier"]


@dataclasses.dataclass(frozen=True)
class SyntheticScene:
    landmarks: np.ndarray  # [M, 3] meters, first left camera frame
    motions: Tuple[MotionParams, ...]  # [num_frames - 1]
    noise_sigma: float = 0.0  # pixels
    outlier_rate: float = 0.0
    seed: int = 0
    image_size: Tuple[int, int] = DEFAULT_IMAGE_SIZE  # (width, height)

    def __post_init__(self):
        landmarks = np.asarray(self.landmarks, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "landmarks", landmarks)
        object.__setattr__(self, "motions", tuple(self.motions))
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError(f"outlier_rate must lie in [0, 1), got {self.outlier_rate}.")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}.")
        for frame in range(self.num_frames):
            depths = camera_points(self, frame)[:, 2]
            if np.any(depths <= 0):
                bad = int(np.nonzero(depths <= 0)[0][0])
                raise SceneError(f"Landmark {bad} is behind the camera at frame {frame}.")

    @property
    def num_frames(self) -> int:
        return len(self.motions) + 1

    @property
    def num_landmarks(self) -> int:
        return len(self.landmarks)


@dataclasses.dataclass(frozen=True)
class SyntheticTracks:
    """Noisy projections of a scene.

    `observations[k]` pairs the exact landmark coordinates in frame k with
    their noisy pixels in frame k + 1, the input `ransac_estimate` expects for
    motion k.
    """

    observations: List[Observations]
    motions: Tuple[MotionParams, ...]
    pixels: np.ndarray  # [num_frames, M, 4] observed (u_l, v_l, u_r, v_r)
    outliers: np.ndarray  # [num_frames, M] bool


def _camera_transforms(motions: Sequence[MotionParams]) -> List[Pose]:
    """World (frame 0) to camera k transforms."""
    transforms = [Pose.identity()]
    for motion in motions:
        transforms.append(core.compose(core.motion_to_transform(motion), transforms[-1]))
    return transforms


def camera_points(scene: SyntheticScene, frame: int) -> np.ndarray:
    """Landmarks in the left camera frame of `frame`."""
    transform = _camera_transforms(scene.motions[:frame])[-1]
    return transform.apply(scene.landmarks)


def scene_poses(scene: SyntheticScene) -> List[Pose]:
    """Ground-truth camera-to-world poses, chained the way the pipeline chains them."""
    poses = [Pose.identity()]
    for motion in scene.motions:
        poses.append(core.compose(poses[-1], core.inverse(core.motion_to_transform(motion))))
    return poses


def _project_frame(scene: SyntheticScene, frame: int, calib: StereoCalib) -> np.ndarray:
    points = camera_points(scene, frame)
    uv_l, uv_r, _ = project_points(points, np.eye(3), np.zeros(3), calib)
    return np.concatenate([uv_l, uv_r], axis=1)


def generate_tracks(scene: SyntheticScene, calib: StereoCalib) -> SyntheticTracks:
    """Projects every landmark into every frame with noise and outliers.

    Noise and outliers are drawn per frame in order from a generator seeded
    with `scene.seed`, so the output is a pure function of the scene.
    """
    rng = np.random.default_rng(scene.seed)
    width, height = scene.image_size
    num = scene.num_landmarks
    pixels = np.zeros((scene.num_frames, num, 4))
    outliers = np.zeros((scene.num_frames, num), dtype=bool)
    for frame in range(scene.num_frames):
        observed = _project_frame(scene, frame, calib)
        observed = observed + rng.normal(0.0, scene.noise_sigma, size=observed.shape)
        mask = rng.random(num) < scene.outlier_rate
        random_pixels = rng.uniform(0.0, 1.0, size=(num, 4)) * np.array(
            [width, height, width, height], dtype=np.float64
        )
        pixels[frame] = np.where(mask[:, None], random_pixels, observed)
        outliers[frame] = mask

    observations = []
    for frame in range(1, scene.num_frames):
        observations.append(
            Observations(
                landmarks=camera_points(scene, frame - 1),
                left=pixels[frame, :, :2],
                right=pixels[frame, :, 2:],
            )
        )
    return SyntheticTracks(
        observations=observations, motions=scene.motions, pixels=pixels, outliers=outliers
    )


def sprite_pattern(index: int) -> np.ndarray:
    """The 9x9 dark/bright identity pattern of landmark `index`."""
    bits = np.random.default_rng(index + 1).integers(0, 2, size=(SPRITE_SIZE, SPRITE_SIZE))
    return np.where(bits == 1, BRIGHT, DARK).astype(np.uint8)


def _sprite_stamp(roll: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Destination offsets covered by a sprite rolled by `roll` and their source cells."""
    half = SPRITE_HALF if roll == 0.0 else ROTATED_HALF
    dy, dx = np.mgrid[-half : half + 1, -half : half + 1]
    c, s = np.cos(roll), np.sin(roll)
    # Inverse rotation maps each destination offset back into the pattern.
    sx = np.rint(c * dx + s * dy).astype(np.int64)
    sy = np.rint(-s * dx + c * dy).astype(np.int64)
    inside = (np.abs(sx) <= SPRITE_HALF) & (np.abs(sy) <= SPRITE_HALF)
    return dx[inside], dy[inside], sx[inside] + SPRITE_HALF, sy[inside] + SPRITE_HALF


def _footprint(roll: float) -> int:
    return 2 * (SPRITE_HALF if roll == 0.0 else ROTATED_HALF) + 1


def _visible(centers: np.ndarray, image_size: Tuple[int, int]) -> np.ndarray:
    width, height = image_size
    return (
        (centers[:, 0] >= 0) & (centers[:, 0] < width)
        & (centers[:, 1] >= 0) & (centers[:, 1] < height)
    )


def _conflicts(centers: np.ndarray, candidates: np.ndarray, footprint: int) -> List[int]:
    """Greedy in index order: ids in `candidates` whose footprint hits an earlier one."""
    kept: List[int] = []
    dropped = []
    for i in candidates:
        if kept:
            gap = np.max(np.abs(centers[kept] - centers[i]), axis=1)
            if np.any(gap < footprint):
                dropped.append(int(i))
                continue
        kept.append(int(i))
    return dropped


def _render(
    scene: SyntheticScene, centers: np.ndarray, roll: float, image_size: Tuple[int, int]
) -> GrayImage:
    width, height = image_size
    canvas = np.full((height, width), BACKGROUND, dtype=np.uint8)
    visible = np.nonzero(_visible(centers, image_size))[0]
    footprint = _footprint(roll)
    clashes = _conflicts(centers, visible, footprint)
    if clashes:
        raise SceneError(
            f"Sprites of landmarks {clashes[:5]} overlap; regenerate the scene with "
            "another seed or a larger spacing."
        )
    dx, dy, sx, sy = _sprite_stamp(roll)
    for index in visible:
        cx, cy = centers[index]
        x, y = cx + dx, cy + dy
        inside = (x >= 0) & (x < width) & (y >= 0) & (y < height)
        pattern = sprite_pattern(int(index))
        canvas[y[inside], x[inside]] = pattern[sy[inside], sx[inside]]
    return GrayImage(canvas)


def render_sprites(
    scene: SyntheticScene,
    frame: int,
    calib: StereoCalib,
    image_size: Optional[Tuple[int, int]] = None,
    roll: float = 0.0,
) -> Tuple[GrayImage, GrayImage]:
    """Left and right images of `frame`, one sprite per landmark in view.

    Sprites are drawn at the rounded noise-free projection and rotated by the
    in-plane camera `roll` (radians). Landmarks whose centre leaves an image
    are skipped in that image.

    Raises:
        SceneError: If two visible sprites overlap.
    """
    image_size = tuple(image_size or scene.image_size)
    projected = _project_frame(scene, frame, calib)
    centers_l = np.rint(projected[:, :2]).astype(np.int64)
    centers_r = np.rint(projected[:, 2:]).astype(np.int64)
    return (
        _render(scene, centers_l, roll, image_size),
        _render(scene, centers_r, roll, image_size),
    )


def make_scene(
    seed: int,
    num_frames: int,
    num_landmarks: int,
    noise_sigma: float = 0.0,
    outlier_rate: float = 0.0,
    calib: StereoCalib = DEFAULT_CALIB,
    image_size: Tuple[int, int] = DEFAULT_IMAGE_SIZE,
    motion: MotionParams = DEFAULT_MOTION,
    depth_range: Tuple[float, float] = (8.0, 20.0),
    spacing: int = 48,
    margin: int = 24,
) -> SyntheticScene:
    """Builds a renderable scene with constant frame-to-frame `motion`.

    Landmarks sit on distinct cells of a `spacing` grid over the first left
    view at random depths. Landmarks that would pass behind a camera or whose
    sprites would collide in any view are removed, so the scene can hold
    fewer than `num_landmarks` points.

    Raises:
        SceneError: If the grid has fewer cells than requested landmarks.
    """
    if num_frames < 1:
        raise SceneError(f"A scene needs at least one frame, got {num_frames}.")
    width, height = image_size
    rng = np.random.default_rng(seed)
    us = np.arange(margin, width - margin, spacing)
    vs = np.arange(margin, height - margin, spacing)
    cells = np.stack(np.meshgrid(us, vs), axis=-1).reshape(-1, 2).astype(np.float64)
    if num_landmarks > len(cells):
        raise SceneError(
            f"{num_landmarks} landmarks need {num_landmarks} grid cells but only "
            f"{len(cells)} fit in {width}x{height} at spacing {spacing}."
        )
    chosen = cells[rng.choice(len(cells), size=num_landmarks, replace=False)]
    depth = rng.uniform(depth_range[0], depth_range[1], size=num_landmarks)
    landmarks = np.stack(
        [
            (chosen[:, 0] - calib.cu) * depth / calib.f,
            (chosen[:, 1] - calib.cv) * depth / calib.f,
            depth,
        ],
        axis=-1,
    )
    motions = tuple([motion] * (num_frames - 1))

    keep = np.ones(num_landmarks, dtype=bool)
    for transform in _camera_transforms(motions):
        keep &= transform.apply(landmarks)[:, 2] > MIN_DEPTH
    for transform in _camera_transforms(motions):
        points = transform.apply(landmarks)
        uv_l, uv_r, _ = project_points(points, np.eye(3), np.zeros(3), calib)
        for uv in (uv_l, uv_r):
            centers = np.rint(uv).astype(np.int64)
            candidates = np.nonzero(keep & _visible(centers, image_size))[0]
            keep[_conflicts(centers, candidates, _footprint(np.pi / 4))] = False
    if not np.all(keep):
        logging.info("Removed %d of %d landmarks from the scene", int(np.sum(~keep)), num_landmarks)

    return SyntheticScene(
        landmarks=landmarks[keep],
        motions=motions,
        noise_sigma=noise_sigma,
        outlier_rate=outlier_rate,
        seed=seed,
        image_size=tuple(image_size),
    )


def track_table(tracks: SyntheticTracks, frame: int) -> pd.DataFrame:
    pixels = tracks.pixels[frame]
    return pd.DataFrame(
        {
            "landmark": np.arange(len(pixels)),
            "x_l": pixels[:, 0],
            "y_l": pixels[:, 1],
            "x_r": pixels[:, 2],
            "y_r": pixels[:, 3],
            "outlier": tracks.outliers[frame].astype(int),
        },
        columns=TRACK_COLUMNS,
    )


def write_synthetic_dataset(
    scene: SyntheticScene, calib: StereoCalib, out_dir: str, render: bool = False
) -> None:
    """Writes the scene in the paired-directory layout.

    Rendered scenes get left/ and right/ images; otherwise tracks/%06d.csv
    holds the noisy observations of every frame. calib.txt, times.txt (10 Hz)
    and the ground-truth poses.txt are always written.

    Raises:
        DataError: If the output cannot be written.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, dataset.CALIB_FILE), "w", newline="\n") as f:
            f.write(dataset.format_dirs_calib(calib))
        poses_lib.write_times(
            np.arange(scene.num_frames) / FRAME_RATE_HZ, os.path.join(out_dir, dataset.TIMES_FILE)
        )
        poses_lib.write_trajectory(scene_poses(scene), os.path.join(out_dir, dataset.POSES_FILE))

        if render:
            left_dir = os.path.join(out_dir, dataset.DIRS_LEFT_DIR)
            right_dir = os.path.join(out_dir, dataset.DIRS_RIGHT_DIR)
            os.makedirs(left_dir, exist_ok=True)
            os.makedirs(right_dir, exist_ok=True)
            for frame in range(scene.num_frames):
                left, right = render_sprites(scene, frame, calib)
                image_lib.write_image(left, os.path.join(left_dir, f"{frame:06d}.png"))
                image_lib.write_image(right, os.path.join(right_dir, f"{frame:06d}.png"))
        else:
            tracks_dir = os.path.join(out_dir, "tracks")
            os.makedirs(tracks_dir, exist_ok=True)
            tracks = generate_tracks(scene, calib)
            for frame in range(scene.num_frames):
                track_table(tracks, frame).to_csv(
                    os.path.join(tracks_dir, f"{frame:06d}.csv"),
                    index=False,
                    float_format="%.6f",
                    lineterminator="\n",
                )
    except OSError as e:
        raise DataError(f"Cannot write synthetic dataset to {out_dir}: {e}") from e
    logging.info(
        "Wrote %d frames with %d landmarks to %s", scene.num_frames, scene.num_landmarks, out_dir
    )
