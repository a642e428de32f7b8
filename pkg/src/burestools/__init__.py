"""
A library for the mean spectral densities of generalized Bures products:
products of weighted CUE sums and rectangular Ginibre chains.
"""

# This file is part of BuresTools (a library for the mean eigenvalue and
# singular value densities of generalized Bures products).
# Copyright (c) 2021 Lucas Ng

# BuresTools is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# BuresTools is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.

# You should have received a copy of the GNU General Public License
# along with BuresTools.  If not, see <https://www.gnu.org/licenses/>.

__version__ = "0.1.0"

import os

HOME = os.path.dirname(os.path.abspath(__file__))
CPU_COUNT = os.cpu_count() or 1


class BuresError(Exception):
    """Root of every error raised by BuresTools. ``code`` is stable and machine-readable."""

    code = "BuresError"

    def __init__(self, message: str = "", **details):
        super().__init__(message)
        self.details = details


from .model import *
from .transforms import *
from .solver import *
from .mc import *
from .fit import *
from .utils import *
from .cli import *
