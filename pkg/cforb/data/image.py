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

"""8-bit image decoding and encoding (PNG and binary PGM)."""

import os

import cv2
import numpy as np

from cforb.core import GrayImage
from cforb.errors import DataError, ImageReadError

IMAGE_EXTENSIONS = (".png", ".pgm")


def is_image_file(name: str) -> bool:
    return os.path.splitext(name)[1].lower() in IMAGE_EXTENSIONS


def read_image(path: str) -> GrayImage:
    """Reads an 8-bit image; colour inputs are converted with the usual luma weights.

    Raises:
        ImageReadError: If the file is missing, undecodable or not 8-bit.
    """
    data = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ImageReadError(f"Cannot decode image {path}")
    if data.dtype != np.uint8:
        raise ImageReadError(f"Only 8-bit images are supported, {path} is {data.dtype}")
    if data.ndim == 3:
        channels = data.shape[2]
        if channels == 1:
            data = data[..., 0]
        elif channels == 3:
            data = cv2.cvtColor(data, cv2.COLOR_BGR2GRAY)
        elif channels == 4:
            data = cv2.cvtColor(data, cv2.COLOR_BGRA2GRAY)
        else:
            raise ImageReadError(f"Unsupported channel count {channels} in {path}")
    return GrayImage(np.ascontiguousarray(data))


def write_image(image: GrayImage, path: str) -> None:
    if not cv2.imwrite(path, image.data):
        raise DataError(f"Cannot write image {path}")
