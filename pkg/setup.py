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
"""Install script for setuptools."""

from setuptools import find_packages
from setuptools import setup

setup(
    name="cforb",
    version="0.1.0",
    description="Circular FREAK-ORB stereo visual odometry with KITTI-protocol evaluation.",
    author="DP Technology",
    license="Apache License, Version 2.0",
    packages=find_packages(exclude=["tests", "examples"]),
    install_requires=[
        "absl-py",
        "ml-collections",
        "numpy",
        "opencv-python-headless",
        "pandas>=1.5",
        "scipy",
    ],
    entry_points={
        "console_scripts": ["cforb=cforb.cli:main"],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: Apache Software License",
        "Operating System :: POSIX :: Linux",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
)
