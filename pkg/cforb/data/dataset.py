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

"""Stereo sequence sources: the KITTI odometry layout and paired directories.

KITTI layout::

    <seq>/image_0/000000.png ...   left camera
    <seq>/image_1/000000.png ...   right camera
    <seq>/calib.txt                P0: ... / P1: ... rows (12 floats each)
    <seq>/times.txt                optional, seconds per frame

Paired-directory layout::

    <root>/left/*.png|pgm
    <root>/right/*.png|pgm
    <root>/calib.txt               one line "f cu cv baseline"
    <root>/times.txt               optional
    <root>/poses.txt               optional ground truth
"""

import dataclasses
import os
from typing import Iterator, List, Optional, Sequence, Tuple

from absl import logging
import numpy as np

from cforb.core import GrayImage, Pose, StereoCalib
from cforb.data import image as image_lib
from cforb.data import poses as poses_lib
from cforb.errors import CalibrationError, DataError, FrameReadError

KITTI_LEFT_DIR = "image_0"
KITTI_RIGHT_DIR = "image_1"
DIRS_LEFT_DIR = "left"
DIRS_RIGHT_DIR = "right"
CALIB_FILE = "calib.txt"
TIMES_FILE = "times.txt"
POSES_FILE = "poses.txt"

# Baselines outside this range (meters) point at a parse problem.
BASELINE_SANITY_RANGE = (0.1, 2.0)


@dataclasses.dataclass(frozen=True)
class SequenceSource:
    """A rectified stereo sequence on disk; frames are read lazily."""

    left_dir: str
    right_dir: str
    left_files: Tuple[str, ...]
    right_files: Tuple[str, ...]
    calib: StereoCalib
    timestamps: Optional[np.ndarray] = None
    ground_truth: Optional[List[Pose]] = None

    def __post_init__(self):
        if len(self.left_files) != len(self.right_files):
            raise DataError(
                f"{len(self.left_files)} left images in {self.left_dir} but "
                f"{len(self.right_files)} right images in {self.right_dir}."
            )
        if self.timestamps is not None:
            if len(self.timestamps) != len(self.left_files):
                raise DataError(
                    f"{len(self.timestamps)} timestamps for {len(self.left_files)} frames."
                )
            if np.any(np.diff(self.timestamps) <= 0):
                raise DataError("Timestamps must be strictly increasing.")

    def __len__(self) -> int:
        return len(self.left_files)

    def read_frame(self, index: int) -> Tuple[GrayImage, GrayImage]:
        try:
            left = image_lib.read_image(os.path.join(self.left_dir, self.left_files[index]))
            right = image_lib.read_image(os.path.join(self.right_dir, self.right_files[index]))
        except DataError as e:
            raise FrameReadError(index, e) from e
        return left, right

    def frames(self, max_frames: Optional[int] = None) -> Iterator[Tuple[GrayImage, GrayImage]]:
        """Yields (left, right) pairs in order, reading each only when requested."""
        count = len(self) if max_frames is None else min(len(self), max_frames)
        for index in range(count):
            yield self.read_frame(index)


def list_images(directory: str) -> Tuple[str, ...]:
    if not os.path.isdir(directory):
        raise DataError(f"Image directory {directory} does not exist.")
    return tuple(sorted(f for f in os.listdir(directory) if image_lib.is_image_file(f)))


def _check_baseline(baseline: float, source: str) -> None:
    if not baseline > 0:
        raise CalibrationError(f"{source}: derived baseline {baseline} is not positive.")
    low, high = BASELINE_SANITY_RANGE
    if not low < baseline < high:
        logging.warning("%s: unusual baseline %.4f m", source, baseline)


def parse_kitti_calib(calib_string: str, source: str = "<string>") -> StereoCalib:
    """Rig from the P0 and P1 projection rows of a KITTI calib file."""
    projections = {}
    for line_number, line in enumerate(calib_string.splitlines(), start=1):
        if ":" not in line:
            continue
        key, _, values = line.partition(":")
        key = key.strip()
        if key not in ("P0", "P1"):
            continue
        try:
            numbers = [float(v) for v in values.split()]
        except ValueError as e:
            raise CalibrationError(f"{source}:{line_number}: garbled {key} row") from e
        if len(numbers) != 12:
            raise CalibrationError(
                f"{source}:{line_number}: {key} needs 12 values, got {len(numbers)}"
            )
        projections[key] = np.array(numbers).reshape(3, 4)
    for key in ("P0", "P1"):
        if key not in projections:
            raise CalibrationError(f"{source}: missing {key} row")

    p0, p1 = projections["P0"], projections["P1"]
    if p1[0, 0] == 0:
        raise CalibrationError(f"{source}: P1 has a zero focal length")
    baseline = -p1[0, 3] / p1[0, 0]
    _check_baseline(baseline, source)
    try:
        return StereoCalib(f=p0[0, 0], cu=p0[0, 2], cv=p0[1, 2], baseline=baseline)
    except ValueError as e:
        raise CalibrationError(f"{source}: {e}") from e


def parse_dirs_calib(calib_string: str, source: str = "<string>") -> StereoCalib:
    """Rig from the first non-comment line `f cu cv baseline`."""
    for line_number, line in enumerate(calib_string.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            f, cu, cv, baseline = (float(v) for v in line.split())
        except ValueError as e:
            raise CalibrationError(
                f"{source}:{line_number}: expected 'f cu cv baseline', got {line!r}"
            ) from e
        _check_baseline(baseline, source)
        try:
            return StereoCalib(f=f, cu=cu, cv=cv, baseline=baseline)
        except ValueError as e:
            raise CalibrationError(f"{source}:{line_number}: {e}") from e
    raise CalibrationError(f"{source}: no calibration line")


def _read_text(path: str, error_type=DataError) -> str:
    try:
        with open(path, "r") as f:
            return f.read()
    except OSError as e:
        raise error_type(f"Cannot read {path}: {e}") from e


def read_kitti_calib(path: str) -> StereoCalib:
    return parse_kitti_calib(_read_text(path, CalibrationError), source=path)


def read_dirs_calib(path: str) -> StereoCalib:
    return parse_dirs_calib(_read_text(path, CalibrationError), source=path)


def format_dirs_calib(calib: StereoCalib) -> str:
    return f"{calib.f:.12g} {calib.cu:.12g} {calib.cv:.12g} {calib.baseline:.12g}\n"


def _optional_times(path: str) -> Optional[np.ndarray]:
    return poses_lib.read_times(path) if os.path.exists(path) else None


def _optional_poses(path: Optional[str]) -> Optional[List[Pose]]:
    if path is None:
        return None
    return poses_lib.read_poses(path)


def _check_ground_truth(poses: Optional[Sequence[Pose]], num_frames: int, source: str) -> None:
    if poses is not None and len(poses) != num_frames:
        raise DataError(f"{source}: {len(poses)} poses for {num_frames} frames.")


def load_kitti(
    sequence_dir: str,
    calib_file: Optional[str] = None,
    poses_file: Optional[str] = None,
) -> SequenceSource:
    """Loads a KITTI odometry sequence; `calib_file` defaults to <seq>/calib.txt."""
    calib = read_kitti_calib(calib_file or os.path.join(sequence_dir, CALIB_FILE))
    left_dir = os.path.join(sequence_dir, KITTI_LEFT_DIR)
    right_dir = os.path.join(sequence_dir, KITTI_RIGHT_DIR)
    left_files, right_files = list_images(left_dir), list_images(right_dir)
    ground_truth = _optional_poses(poses_file)
    _check_ground_truth(ground_truth, len(left_files), poses_file)
    source = SequenceSource(
        left_dir=left_dir,
        right_dir=right_dir,
        left_files=left_files,
        right_files=right_files,
        calib=calib,
        timestamps=_optional_times(os.path.join(sequence_dir, TIMES_FILE)),
        ground_truth=ground_truth,
    )
    logging.info("Loaded KITTI sequence %s: %d frames", sequence_dir, len(source))
    return source


def load_dirs(
    root: str,
    calib_file: Optional[str] = None,
    poses_file: Optional[str] = None,
) -> SequenceSource:
    """Loads the paired-directory layout; poses.txt is used when present."""
    calib = read_dirs_calib(calib_file or os.path.join(root, CALIB_FILE))
    left_dir = os.path.join(root, DIRS_LEFT_DIR)
    right_dir = os.path.join(root, DIRS_RIGHT_DIR)
    left_files, right_files = list_images(left_dir), list_images(right_dir)
    if poses_file is None and os.path.exists(os.path.join(root, POSES_FILE)):
        poses_file = os.path.join(root, POSES_FILE)
    ground_truth = _optional_poses(poses_file)
    _check_ground_truth(ground_truth, len(left_files), poses_file)
    source = SequenceSource(
        left_dir=left_dir,
        right_dir=right_dir,
        left_files=left_files,
        right_files=right_files,
        calib=calib,
        timestamps=_optional_times(os.path.join(root, TIMES_FILE)),
        ground_truth=ground_truth,
    )
    logging.info("Loaded paired directories %s: %d frames", root, len(source))
    return source
