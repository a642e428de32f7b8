"""
The BuresTools CLI; see :func:`burestools.cli.main`.
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

import sys

from burestools.cli import main

sys.exit(main())
