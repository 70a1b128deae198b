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

"""KITTI pose and timestamp files: one row-major 3x4 [R|t] per line."""

from typing import List, Sequence

import numpy as np

from cforb.core import Pose
from cforb.errors import DataError


def parse_poses(poses_string: str, source: str = "<string>") -> List[Pose]:
    """Parses camera-to-world poses, 12 floats per non-empty line."""
    poses = []
    for line_number, line in enumerate(poses_string.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            values = [float(v) for v in line.split()]
        except ValueError as e:
            raise DataError(f"{source}:{line_number}: non-numeric pose entry") from e
        if len(values) != 12:
            raise DataError(
                f"{source}:{line_number}: expected 12 values, got {len(values)}"
            )
        try:
            poses.append(Pose.from_matrix(np.array(values).reshape(3, 4)))
        except ValueError as e:
            raise DataError(f"{source}:{line_number}: {e}") from e
    return poses


def read_poses(path: str) -> List[Pose]:
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise DataError(f"Cannot read poses file {path}: {e}") from e
    return parse_poses(text, source=path)


def format_pose(pose: Pose) -> str:
    # Adding 0.0 turns negative zeros into zeros.
    return " ".join(f"{v + 0.0:.15g}" for v in pose.to_matrix().reshape(-1))


def write_trajectory(trajectory: Sequence[Pose], path: str) -> None:
    """Writes one pose per line; an empty trajectory gives an empty file."""
    with open(path, "w", newline="\n") as f:
        for pose in trajectory:
            f.write(format_pose(pose) + "\n")


def parse_times(times_string: str, source: str = "<string>") -> np.ndarray:
    """Parses one timestamp (seconds) per line; they must strictly increase."""
    try:
        times = np.array(
            [float(line) for line in times_string.split() if line.strip()], dtype=np.float64
        )
    except ValueError as e:
        raise DataError(f"{source}: non-numeric timestamp") from e
    if len(times) > 1 and np.any(np.diff(times) <= 0):
        raise DataError(f"{source}: timestamps must be strictly increasing")
    return times


def read_times(path: str) -> np.ndarray:
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise DataError(f"Cannot read timestamps file {path}: {e}") from e
    return parse_times(text, source=path)


def write_times(times: Sequence[float], path: str) -> None:
    with open(path, "w", newline="\n") as f:
        for t in times:
            f.write(f"{t:.6f}\n")
