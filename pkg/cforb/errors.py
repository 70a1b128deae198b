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

"""Exceptions raised by the odometry package."""

from typing import Optional


class Error(Exception):
    """Base class for exceptions."""


class ConfigError(Error):
    """An error indicating an invalid or unparsable pipeline configuration."""


# Data exceptions.
class DataError(Error):
    """A base class for dataset, calibration and file format errors."""


class CalibrationError(DataError):
    """An error indicating a missing, garbled or non-physical calibration."""


class ImageReadError(DataError):
    """An error indicating that an image file could not be decoded."""


class FrameReadError(DataError):
    """An error indicating that a stereo pair of the sequence is unreadable."""

    def __init__(self, frame_index: int, cause: Optional[BaseException] = None):
        message = f"Failed to read frame {frame_index}"
        if cause is not None:
            message += f": {cause}"
        super().__init__(message)
        self.frame_index = frame_index
        self.cause = cause


# Geometry exceptions.
class GeometryError(Error):
    """A base class for projective geometry failures."""


class TriangulationError(GeometryError):
    """An error indicating that a stereo pair cannot be triangulated."""


class BehindCameraError(GeometryError):
    """An error indicating that a point projects from behind the camera."""


class PatchBoundsError(GeometryError):
    """An error indicating that a sampling disc leaves the image."""


# Estimation exceptions.
class EstimationError(Error):
    """A base class for ego-motion estimation failures."""


class NonConvergenceError(EstimationError):
    """An error indicating that Gauss-Newton did not converge."""


class SingularSystemError(NonConvergenceError):
    """An error indicating numerically singular normal equations."""


class SceneError(Error):
    """An error indicating an invalid synthetic scene."""


class EvaluationError(Error):
    """An error indicating trajectories that cannot be evaluated together."""
