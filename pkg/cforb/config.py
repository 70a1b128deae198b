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

"""Pipeline configuration.

The configuration is a flat, locked `ml_collections.ConfigDict`. Algorithm
parameters live here and in `key = value` config files; command-line flags
only carry dataset plumbing.
"""

import copy
from typing import Any, Optional

import ml_collections as mlc

from cforb.errors import ConfigError

# Keys that must be strictly positive.
POSITIVE_KEYS = (
    "fast_threshold",
    "max_features",
    "pyramid_levels",
    "scale_factor",
    "patch_radius",
    "coarse_hamming_max",
    "full_hamming_max",
    "vertical_max_px",
    "horizontal_max_px",
    "min_disparity_px",
    "ransac_iterations",
    "ransac_sample_size",
    "inlier_threshold",
    "gn_max_iters",
    "gn_step_tol",
    "eval_step_frames",
    "eval_min_speed_segments",
)

COARSE_BITS = 128
DESCRIPTOR_BITS = 512


def base_config() -> mlc.ConfigDict:
    return mlc.ConfigDict(
        {
            # detector
            "fast_threshold": 20,
            "max_features": 2000,
            "pyramid_levels": 8,
            "scale_factor": 1.2,
            "patch_radius": 15,
            # descriptor
            "coarse_hamming_max": 40,
            "full_hamming_max": 128,
            # stereo constraints
            "vertical_max_px": 3.0,
            "horizontal_max_px": 128.0,
            "min_disparity_px": 0.5,
            # circular matching
            "circular_window_px": 100.0,
            # ego-motion
            "ransac_iterations": 50,
            "ransac_sample_size": 3,
            "inlier_threshold": 4.0,
            "gn_max_iters": 50,
            "gn_step_tol": 1e-9,
            "seed": 0,
            # evaluation
            "eval_step_frames": 10,
            "eval_min_speed_segments": 3,
        }
    )


def validate_config(config: mlc.ConfigDict) -> mlc.ConfigDict:
    """Checks the value ranges of a pipeline configuration.

    Raises:
        ConfigError: If any value is out of range.
    """
    for key in POSITIVE_KEYS:
        if not config[key] > 0:
            raise ConfigError(f"{key} must be positive, got {config[key]}.")
    if config.circular_window_px < 0:
        raise ConfigError(
            f"circular_window_px must be non-negative, got {config.circular_window_px}."
        )
    if config.seed < 0:
        raise ConfigError(f"seed must be non-negative, got {config.seed}.")
    if config.scale_factor <= 1.0:
        raise ConfigError(
            f"scale_factor must be greater than 1, got {config.scale_factor}."
        )
    if config.ransac_sample_size < 3:
        raise ConfigError(
            f"ransac_sample_size must be at least 3, got {config.ransac_sample_size}."
        )
    if config.coarse_hamming_max > COARSE_BITS:
        raise ConfigError(
            f"coarse_hamming_max must be at most {COARSE_BITS}, "
            f"got {config.coarse_hamming_max}."
        )
    if config.full_hamming_max > DESCRIPTOR_BITS:
        raise ConfigError(
            f"full_hamming_max must be at most {DESCRIPTOR_BITS}, "
            f"got {config.full_hamming_max}."
        )
    return config


def pipeline_config(**overrides: Any) -> mlc.ConfigDict:
    """Returns a validated, locked configuration with `overrides` applied."""
    config = base_config()
    config.lock()
    for key, value in overrides.items():
        if key not in config:
            raise ConfigError(f"Unknown configuration key: {key}")
        try:
            config[key] = _coerce(config[key], value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Bad value for {key}: {value!r} ({e})") from e
    return validate_config(config)


def _coerce(default: Any, value: Any) -> Any:
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError("expected an integer")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def parse_config_string(text: str, source: str = "<string>",
                        base: Optional[mlc.ConfigDict] = None) -> mlc.ConfigDict:
    """Parses `key = value` lines on top of `base` (defaults when None).

    Blank lines and `#` comments are ignored. Unknown keys are an error.
    """
    overrides = {} if base is None else {k: copy.deepcopy(v) for k, v in base.items()}
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(
                f"{source}:{line_number}: expected 'key = value', got {raw_line!r}"
            )
        if key not in base_config():
            raise ConfigError(f"{source}:{line_number}: unknown key {key!r}")
        overrides[key] = value
    try:
        return pipeline_config(**overrides)
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}") from e


def load_config_file(path: str, base: Optional[mlc.ConfigDict] = None) -> mlc.ConfigDict:
    """Reads a `key = value` configuration file."""
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    return parse_config_string(text, source=path, base=base)
