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

"""Odometry errors over path segments, following the KITTI benchmark protocol.

For every start frame (every `step_frames` frames) and segment length L, the
segment ends at the first frame whose ground-truth path distance reaches the
start distance plus L. The relative motions of estimate and ground truth over
the segment are compared; translation errors are reported as a fraction of L
and rotation errors in degrees per meter, averaged by length, by speed and
overall.
"""

import dataclasses
import math
from typing import Dict, List, Optional, Sequence, Tuple

from absl import logging
import numpy as np
import pandas as pd

from cforb import core
from cforb.core import Pose
from cforb.errors import EvaluationError
from cforb.pipeline import FrameStats

SEGMENT_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)
SPEED_BIN_KMH = 10

LENGTH_SUFFIX = "_length.csv"
SPEED_SUFFIX = "_speed.csv"
FRAMES_SUFFIX = "_frames.csv"
LENGTH_COLUMNS = ["length_m", "trans_pct", "rot_degm"]
SPEED_COLUMNS = ["speed_kmh", "trans_pct", "rot_degm"]
FRAMES_COLUMNS = ["frame", "inlier_pct", "circular_matches", "flagged"]

# (translation fraction, rotation deg/m)
ErrorPair = Tuple[float, float]


@dataclasses.dataclass(frozen=True)
class EvalReport:
    per_length: Dict[int, ErrorPair]
    per_speed: Dict[int, ErrorPair]
    overall_translation: float  # fraction
    overall_rotation: float  # deg/m
    per_frame_inlier_pct: List[float]
    num_segments: int = 0
    # The path was shorter than the shortest segment; the overall errors come
    # from the whole trajectory instead.
    short_path: bool = False
    frame_stats: Tuple[FrameStats, ...] = ()


def trajectory_distances(poses: Sequence[Pose]) -> np.ndarray:
    """Cumulative path length at every frame, starting at 0."""
    positions = np.array([p.translation for p in poses])
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def segment_error(
    est: Sequence[Pose], gt: Sequence[Pose], first: int, last: int
) -> Tuple[float, float]:
    """Translation (m) and rotation (rad) of E = dT_gt^-1 * dT_est over [first, last]."""
    delta_gt = core.compose(core.inverse(gt[first]), gt[last])
    delta_est = core.compose(core.inverse(est[first]), est[last])
    error = core.compose(core.inverse(delta_gt), delta_est)
    return float(np.linalg.norm(error.translation)), core.rotation_angle(error.rotation)


def segment_table(
    est: Sequence[Pose],
    gt: Sequence[Pose],
    timestamps: Optional[np.ndarray] = None,
    step_frames: int = 10,
    lengths: Sequence[int] = SEGMENT_LENGTHS,
) -> pd.DataFrame:
    """One row per evaluated segment: errors normalised by length and speed."""
    dist = trajectory_distances(gt)
    rows = []
    for first in range(0, len(gt), step_frames):
        for length in lengths:
            last = int(np.searchsorted(dist, dist[first] + length, side="left"))
            if last >= len(gt):
                continue
            t_err, r_err = segment_error(est, gt, first, last)
            speed = math.nan
            if timestamps is not None:
                speed = 3.6 * (dist[last] - dist[first]) / (timestamps[last] - timestamps[first])
            rows.append(
                {
                    "first_frame": first,
                    "last_frame": last,
                    "length_m": length,
                    "trans_err": t_err / length,
                    "rot_err": math.degrees(r_err) / length,
                    "speed_kmh": speed,
                }
            )
    columns = ["first_frame", "last_frame", "length_m", "trans_err", "rot_err", "speed_kmh"]
    return pd.DataFrame(rows, columns=columns)


def _validate(est: Sequence[Pose], gt: Sequence[Pose], timestamps: Optional[np.ndarray]) -> None:
    if len(est) != len(gt):
        raise EvaluationError(
            f"Estimated trajectory has {len(est)} poses but ground truth has {len(gt)}."
        )
    if len(gt) < 2:
        raise EvaluationError(f"At least 2 poses are needed, got {len(gt)}.")
    if timestamps is not None:
        if len(timestamps) != len(gt):
            raise EvaluationError(f"{len(timestamps)} timestamps for {len(gt)} poses.")
        if np.any(np.diff(timestamps) <= 0):
            raise EvaluationError("Timestamps must be strictly increasing.")


def evaluate(
    est: Sequence[Pose],
    gt: Sequence[Pose],
    timestamps: Optional[np.ndarray] = None,
    frame_stats: Sequence[FrameStats] = (),
    step_frames: int = 10,
    min_speed_segments: int = 3,
) -> EvalReport:
    """Segment errors of `est` against `gt` by length, speed and overall.

    Speed bins (width 10 km/h, centred on multiples of 10) need timestamps
    and are only reported with at least `min_speed_segments` segments.

    Raises:
        EvaluationError: On length mismatches, fewer than two poses or a
            ground-truth path of zero length.
    """
    _validate(est, gt, timestamps)
    timestamps = None if timestamps is None else np.asarray(timestamps, dtype=np.float64)
    segments = segment_table(est, gt, timestamps, step_frames)
    inlier_pct = [s.inlier_pct for s in frame_stats]

    if segments.empty:
        total = float(trajectory_distances(gt)[-1])
        if total <= 0:
            raise EvaluationError("The ground-truth path has zero length.")
        logging.warning(
            "Path of %.1f m is shorter than %d m; using the whole trajectory",
            total, SEGMENT_LENGTHS[0],
        )
        t_err, r_err = segment_error(est, gt, 0, len(gt) - 1)
        return EvalReport(
            per_length={},
            per_speed={},
            overall_translation=t_err / total,
            overall_rotation=math.degrees(r_err) / total,
            per_frame_inlier_pct=inlier_pct,
            num_segments=0,
            short_path=True,
            frame_stats=tuple(frame_stats),
        )

    by_length = segments.groupby("length_m")[["trans_err", "rot_err"]].mean()
    per_length = {
        int(length): (float(row.trans_err), float(row.rot_err))
        for length, row in by_length.iterrows()
    }

    per_speed = {}
    if timestamps is not None:
        bins = (np.round(segments["speed_kmh"] / SPEED_BIN_KMH) * SPEED_BIN_KMH).astype(int)
        grouped = segments.assign(speed_bin=bins).groupby("speed_bin")
        for speed, group in grouped:
            if len(group) < min_speed_segments:
                continue
            per_speed[int(speed)] = (
                float(group["trans_err"].mean()), float(group["rot_err"].mean())
            )

    return EvalReport(
        per_length=per_length,
        per_speed=per_speed,
        overall_translation=float(segments["trans_err"].mean()),
        overall_rotation=float(segments["rot_err"].mean()),
        per_frame_inlier_pct=inlier_pct,
        num_segments=len(segments),
        short_path=False,
        frame_stats=tuple(frame_stats),
    )


def _error_frame(errors: Dict[int, ErrorPair], key: str) -> pd.DataFrame:
    keys = sorted(errors)
    return pd.DataFrame(
        {
            key: keys,
            "trans_pct": [100.0 * errors[k][0] for k in keys],
            "rot_degm": [errors[k][1] for k in keys],
        },
        columns=[key, "trans_pct", "rot_degm"],
    )


def _write_csv(df: pd.DataFrame, path: str) -> None:
    df.to_csv(path, index=False, lineterminator="\n")


def frames_frame(stats: Sequence[FrameStats]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "frame": [s.frame for s in stats],
            "inlier_pct": [s.inlier_pct for s in stats],
            "circular_matches": [s.circular_matches for s in stats],
            "flagged": [int(s.flagged) for s in stats],
        },
        columns=FRAMES_COLUMNS,
    )


def export_csv(report: EvalReport, prefix: str) -> None:
    """Writes <prefix>_length.csv, <prefix>_speed.csv and <prefix>_frames.csv."""
    _write_csv(_error_frame(report.per_length, "length_m"), prefix + LENGTH_SUFFIX)
    _write_csv(_error_frame(report.per_speed, "speed_kmh"), prefix + SPEED_SUFFIX)
    _write_csv(frames_frame(report.frame_stats), prefix + FRAMES_SUFFIX)


def write_frame_stats(stats: Sequence[FrameStats], path: str) -> None:
    """Full per-frame statistics, one row per frame."""
    fields = [f.name for f in dataclasses.fields(FrameStats)]
    df = pd.DataFrame([dataclasses.astuple(s) for s in stats], columns=fields)
    df["flagged"] = df["flagged"].astype(int)
    _write_csv(df, path)


def read_csv_report(prefix: str) -> Dict[str, pd.DataFrame]:
    """Tables written by `export_csv`, keyed by "length", "speed" and "frames"."""
    return {
        "length": pd.read_csv(prefix + LENGTH_SUFFIX),
        "speed": pd.read_csv(prefix + SPEED_SUFFIX),
        "frames": pd.read_csv(prefix + FRAMES_SUFFIX),
    }
