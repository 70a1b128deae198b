# Copyright 2021 DeepMind Technologies Limited
# Copyright 2022 DP Technology
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#            http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Common utilities for the odometry pipeline."""
import contextlib
import time
from typing import Iterator, List

from absl import logging


@contextlib.contextmanager
def timing(msg: str, verbosity: int = 1) -> Iterator[List[float]]:
    """Logs the duration of the wrapped block.

    The yielded list receives the elapsed seconds when the block exits, so
    callers can keep the measurement as well as log it.
    """
    logging.vlog(verbosity, "Started %s", msg)
    elapsed = []
    tic = time.perf_counter()
    try:
        yield elapsed
    finally:
        toc = time.perf_counter()
        elapsed.append(toc - tic)
        logging.vlog(verbosity, "Finished %s in %.3f seconds", msg, toc - tic)
