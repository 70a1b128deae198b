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

"""Command line entry point: cforb run | eval | synth.

Exit codes:
    0   success
    2   unreadable or inconsistent data, unwritable outputs
    3   more than half of the frames fell back to the previous motion
    64  usage errors (unknown command, bad flags, invalid configuration)

Only the documented key=value summary lines are written to standard output.
"""

import os
import sys
from typing import Callable, Dict, List, Sequence

from absl import app
from absl import flags
from absl import logging

from cforb import config as config_lib
from cforb import evaluation
from cforb import pipeline
from cforb.core import StereoCalib
from cforb.data import dataset
from cforb.data import poses as poses_lib
from cforb.data import synthetic
from cforb.errors import ConfigError, DataError, Error, EvaluationError, SceneError

EXIT_OK = 0
EXIT_DATA = 2
EXIT_COLLAPSE = 3
EXIT_USAGE = 64

_HELP_ARGS = ("-h", "--help", "--helpshort", "--helpfull", "--helpxml")

USAGE = """usage: cforb <command> [flags]

commands:
  run     estimate the trajectory of a stereo sequence
  eval    compare a trajectory with ground truth (KITTI protocol)
  synth   generate a synthetic stereo dataset with known motion

Use `cforb <command> --help` for the flags of a command."""


class UsageError(Error):
    """Invalid command line."""


def _define_run_flags(fv: flags.FlagValues) -> None:
    flags.DEFINE_string("dataset", None, "Dataset directory.", flag_values=fv)
    flags.DEFINE_enum(
        "format", "kitti", ["kitti", "dirs"],
        "Dataset layout: KITTI odometry or paired left/right directories.",
        flag_values=fv,
    )
    flags.DEFINE_string(
        "sequence", "00",
        "KITTI sequence id; images are read from <dataset>/sequences/<id> when "
        "that directory exists, else from <dataset>.",
        flag_values=fv,
    )
    flags.DEFINE_string("calib", None, "Calibration file overriding the dataset's.", flag_values=fv)
    flags.DEFINE_string("poses", None, "Ground-truth poses for a closing evaluation.", flag_values=fv)
    flags.DEFINE_string("config", None, "Pipeline configuration file (key = value).", flag_values=fv)
    flags.DEFINE_integer("seed", None, "RANSAC seed overriding the configuration.", flag_values=fv)
    flags.DEFINE_string("traj-out", None, "Output trajectory file.", flag_values=fv)
    flags.DEFINE_string("stats-out", None, "Optional per-frame statistics CSV.", flag_values=fv)
    flags.DEFINE_integer(
        "max-frames", None, "Process at most this many frames.", lower_bound=1, flag_values=fv
    )
    flags.mark_flags_as_required(["dataset", "traj-out"], flag_values=fv)


def _define_eval_flags(fv: flags.FlagValues) -> None:
    flags.DEFINE_string("est", None, "Estimated trajectory file.", flag_values=fv)
    flags.DEFINE_string("gt", None, "Ground-truth trajectory file.", flag_values=fv)
    flags.DEFINE_string("times", None, "Optional timestamps file (enables speed bins).", flag_values=fv)
    flags.DEFINE_string("out", None, "Prefix of the CSV outputs.", flag_values=fv)
    flags.DEFINE_string("config", None, "Configuration file for the evaluation stride.", flag_values=fv)
    flags.mark_flags_as_required(["est", "gt", "out"], flag_values=fv)


def _define_synth_flags(fv: flags.FlagValues) -> None:
    flags.DEFINE_integer("seed", 0, "Scene and noise seed.", flag_values=fv)
    flags.DEFINE_integer("frames", 20, "Number of stereo pairs.", lower_bound=1, flag_values=fv)
    flags.DEFINE_integer("landmarks", 80, "Number of landmarks requested.", lower_bound=0, flag_values=fv)
    flags.DEFINE_float("noise", 0.1, "Pixel noise sigma of the track tables.", lower_bound=0.0, flag_values=fv)
    flags.DEFINE_float("outliers", 0.0, "Fraction of outlier observations.", flag_values=fv)
    flags.DEFINE_string("out", None, "Output directory.", flag_values=fv)
    flags.DEFINE_boolean("render", False, "Render sprite images instead of track tables.", flag_values=fv)
    flags.mark_flag_as_required("out", flag_values=fv)


def _load_config(path, seed=None):
    config = config_lib.base_config()
    if path:
        config = config_lib.load_config_file(path, base=config)
    if seed is not None:
        config.seed = seed
    return config_lib.validate_config(config)


def _run(fv: flags.FlagValues) -> int:
    config = _load_config(fv["config"].value, fv["seed"].value)
    if fv.format == "kitti":
        sequence_dir = os.path.join(fv.dataset, "sequences", fv.sequence)
        if not os.path.isdir(sequence_dir):
            sequence_dir = fv.dataset
        source = dataset.load_kitti(sequence_dir, fv.calib, fv.poses)
    else:
        source = dataset.load_dirs(fv.dataset, fv.calib, fv.poses)

    trajectory, stats = pipeline.run(
        source.frames(fv["max-frames"].value), source.calib, config
    )
    poses_lib.write_trajectory(trajectory, fv["traj-out"].value)
    if fv["stats-out"].value:
        evaluation.write_frame_stats(stats, fv["stats-out"].value)

    if source.ground_truth is not None:
        timestamps = source.timestamps
        try:
            report = evaluation.evaluate(
                trajectory,
                source.ground_truth[: len(trajectory)],
                None if timestamps is None else timestamps[: len(trajectory)],
                stats,
                config.eval_step_frames,
                config.eval_min_speed_segments,
            )
            logging.info(
                "Ground truth: %.3f%% translation, %.6f deg/m rotation over %d segments",
                100.0 * report.overall_translation, report.overall_rotation, report.num_segments,
            )
        except EvaluationError as e:
            logging.warning("Closing evaluation skipped: %s", e)

    flagged = sum(s.flagged for s in stats)
    print(f"frames={len(trajectory)} flagged={flagged}")
    if 2 * flagged > len(trajectory):
        logging.error("Estimation collapsed: %d of %d frames flagged", flagged, len(trajectory))
        return EXIT_COLLAPSE
    return EXIT_OK


def _eval(fv: flags.FlagValues) -> int:
    config = _load_config(fv.config)
    est = poses_lib.read_poses(fv.est)
    gt = poses_lib.read_poses(fv.gt)
    times = poses_lib.read_times(fv.times) if fv.times else None
    report = evaluation.evaluate(
        est, gt, times,
        step_frames=config.eval_step_frames,
        min_speed_segments=config.eval_min_speed_segments,
    )
    evaluation.export_csv(report, fv.out)
    print(
        f"overall_trans_pct={100.0 * report.overall_translation:.3f} "
        f"overall_rot_degm={report.overall_rotation:.6f}"
    )
    return EXIT_OK


def _synth(fv: flags.FlagValues) -> int:
    if not 0.0 <= fv.outliers < 1.0:
        raise UsageError(f"--outliers must lie in [0, 1), got {fv.outliers}.")
    calib: StereoCalib = synthetic.DEFAULT_CALIB
    scene = synthetic.make_scene(
        seed=fv.seed,
        num_frames=fv.frames,
        num_landmarks=fv.landmarks,
        noise_sigma=fv.noise,
        outlier_rate=fv.outliers,
        calib=calib,
    )
    synthetic.write_synthetic_dataset(scene, calib, fv.out, render=fv.render)
    print(f"frames={scene.num_frames} landmarks={scene.num_landmarks}")
    return EXIT_OK


_COMMANDS: Dict[str, tuple] = {
    "run": (_define_run_flags, _run),
    "eval": (_define_eval_flags, _eval),
    "synth": (_define_synth_flags, _synth),
}


def _usage_error(message: str, help_text: str = USAGE) -> int:
    print(f"cforb: {message}", file=sys.stderr)
    print(help_text, file=sys.stderr)
    return EXIT_USAGE


def run_cli(argv: Sequence[str]) -> int:
    """Runs one command; `argv[0]` is the program name. Returns the exit code."""
    if len(argv) < 2 or argv[1] in ("-h", "--help", "help"):
        return _usage_error("missing command")
    name = argv[1]
    if name not in _COMMANDS:
        return _usage_error(f"unknown command {name!r}")
    define, command = _COMMANDS[name]

    fv = flags.FlagValues()
    define(fv)
    if any(arg in _HELP_ARGS for arg in argv[2:]):
        print(fv.get_help())
        return EXIT_OK
    try:
        remaining = fv([f"{argv[0]} {name}"] + list(argv[2:]))
    except flags.Error as e:
        return _usage_error(str(e), fv.get_help())
    if len(remaining) > 1:
        return _usage_error(f"unexpected arguments {remaining[1:]}", fv.get_help())

    try:
        return command(fv)
    except (UsageError, ConfigError, SceneError) as e:
        print(f"cforb {name}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EvaluationError, OSError) as e:
        print(f"cforb {name}: {e}", file=sys.stderr)
        return EXIT_DATA


def _main(argv: Sequence[str]) -> int:
    return run_cli(argv)


def _parse_global_flags(argv: Sequence[str]) -> List[str]:
    """Parses absl's own flags (logging verbosity) ahead of the command.

    Only the flags before the command name are parsed globally; help flags are
    left for the command so that `cforb run --help` lists the run flags.
    """
    head, rest = [argv[0]], list(argv[1:])
    while rest and rest[0].startswith("-") and rest[0] not in _HELP_ARGS:
        head.append(rest.pop(0))
    return flags.FLAGS(head, known_only=True) + rest


def main() -> None:
    app.run(_main, flags_parser=_parse_global_flags)


if __name__ == "__main__":
    main()
