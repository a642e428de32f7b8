"""
Definitions of BuresTools utility functions and objects.
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

import hashlib
import json
import math
from fractions import Fraction
from typing import Collection, Optional, Sequence, Union

import numpy as np
import pandas as pd
import prettytable

from .model import CueSumFactor, GinibreFactor, ModelSpec, ValidatedModel

__all__ = [
    "POLE_GUARD",
    "IMAG_OFFSET",
    "DEFAULT_N",
    "DEFAULT_SAMPLES",
    "GRID_POINTS",
    "cue_model",
    "bures_model",
    "t_model",
    "t_example1",
    "ginibre_model",
    "w_model",
    "v_model",
    "default_grid",
    "parse_grid",
    "model_hash",
    "TabularResult",
]

POLE_GUARD: float = 1e-9
"""
Minimum distance from a pole at which a transform is still evaluated.

Closer than this a :class:`~burestools.transforms.PoleHit` is raised instead.
"""

IMAG_OFFSET: float = 1e-9
"""
The imaginary part added to real arguments of the singular-value solver.
"""

DEFAULT_N: int = 512
"""Default final column dimension of Monte Carlo matrices."""

DEFAULT_SAMPLES: int = 40
"""Default number of Monte Carlo matrices per density comparison."""

GRID_POINTS: int = 512
"""Number of logarithmic points near zero, and of linear points across the bulk, in :func:`default_grid`."""


################################################################################


def cue_model(weights: Collection[complex], name: str = "S") -> ModelSpec:
    """
    A single CUE sum.

    Examples
    --------
    >>> import burestools as bt
    >>> bt.validate(bt.cue_model([1])).tag
    <ModelTag.S: 'S'>
    """
    return ModelSpec((CueSumFactor(tuple(weights)),), name)


def bures_model() -> ModelSpec:
    """
    The Bures model, ``(U_1 + U_2) A / sqrt(2)`` with square Ginibre ``A``.

    Examples
    --------
    >>> import burestools as bt
    >>> model = bt.validate(bt.bures_model())
    >>> model.tag, model.model_class.example_forms
    (<ModelTag.W: 'W'>, (<ExampleForm.EQUAL_WEIGHTS: 'EqualWeights'>,))
    """
    w = 1 / math.sqrt(2)
    return ModelSpec((CueSumFactor((w, w)), GinibreFactor(1.0, 1, 1)), "bures")


def t_model(weight_sets: Sequence[Collection[complex]], name: str = "T") -> ModelSpec:
    """A product of CUE sums, one weight collection per factor."""
    return ModelSpec(tuple(CueSumFactor(tuple(ws)) for ws in weight_sets), name)


def t_example1(J: int, L: int, w: complex = 1.0) -> ModelSpec:
    """
    ``J`` identical CUE sums of ``L`` equal weights whose overall product
    weight is ``w``: every weight is ``w**(1/J) / sqrt(L)``.
    """
    each = complex(w) ** (1 / J) / math.sqrt(L)
    return t_model([[each] * L for _ in range(J)], name=f"T-J{J}-L{L}")


def ginibre_model(
    sigmas: Sequence[float], dims: Sequence[Union[int, Fraction]], name: str = "P"
) -> ModelSpec:
    """
    A Ginibre chain. ``dims`` has one more entry than ``sigmas``: factor k
    is ``dims[k] x dims[k + 1]``.
    """
    assert len(dims) == len(sigmas) + 1, "dims must have one more entry than sigmas"
    return ModelSpec(
        tuple(GinibreFactor(s, dims[k], dims[k + 1]) for k, s in enumerate(sigmas)), name
    )


def w_model(
    weight_sets: Sequence[Collection[complex]],
    sigmas: Sequence[float],
    dims: Sequence[Union[int, Fraction]],
    name: str = "W",
) -> ModelSpec:
    """
    A product of CUE sums (all of side ``dims[0]``) followed by a Ginibre chain.

    Examples
    --------
    >>> import burestools as bt
    >>> spec = bt.w_model([[0.5**0.5] * 2], [1, 1], [1, 2, 1])
    >>> bt.validate(spec).s
    (Fraction(1, 1), Fraction(1, 1), Fraction(2, 1), Fraction(1, 1))
    """
    cues = tuple(CueSumFactor(tuple(ws), Fraction(dims[0])) for ws in weight_sets)
    return ModelSpec(cues + ginibre_model(sigmas, dims).factors, name)


def v_model(blocks: Sequence[ModelSpec], name: str = "V") -> ModelSpec:
    """Concatenate W products into one chain; adjacent blocks must agree on their shared dimension."""
    return ModelSpec(tuple(f for block in blocks for f in block.factors), name)


################################################################################


def default_grid(upper: float, lower: float = 0.0, n: int = GRID_POINTS, floor: float = 1e-6) -> np.ndarray:
    """
    ``n`` logarithmic points from ``floor * upper`` up to a tenth of the range,
    plus ``n`` linear points across ``[lower, upper]``, sorted and deduplicated.
    """
    span = upper - lower
    log_part = np.geomspace(max(lower, floor * upper), lower + span / 10, n) if lower == 0 else np.array([])
    lin_part = np.linspace(lower, upper, n)
    grid = np.unique(np.concatenate([log_part, lin_part]))
    return grid[grid > 0]


def parse_grid(spec: str, upper: Optional[float] = None, lower: float = 0.0) -> np.ndarray:
    """
    Parse a grid spec such as ``lin:0:1:100+log:1e-4:1e-2:50`` or ``default``.

    ``default`` needs ``upper``.
    """
    if spec.strip() == "default":
        if upper is None:
            raise ValueError("the default grid needs an upper bound")
        return default_grid(upper, lower)
    parts = []
    for chunk in spec.split("+"):
        kind, *bounds = chunk.strip().split(":")
        if kind not in ("lin", "log") or len(bounds) != 3:
            raise ValueError(f"bad grid chunk {chunk!r}; expected lin:a:b:n or log:a:b:n")
        a, b, n = float(bounds[0]), float(bounds[1]), int(bounds[2])
        parts.append(np.linspace(a, b, n) if kind == "lin" else np.geomspace(a, b, n))
    return np.unique(np.concatenate(parts))


def model_hash(model: Union[ModelSpec, ValidatedModel]) -> str:
    """sha256 of the model's canonical JSON form."""
    text = json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


################################################################################


class TabularResult:
    """
    Rendering shared by the result containers.

    Subclasses set :attr:`meta` and implement :meth:`tabulate`.

    Attributes
    ----------
    meta : dict
    pretty_meta : str
    """

    __slots__ = ("meta", "pretty_meta")

    meta: dict
    pretty_meta: str

    def _set_meta(self, meta: dict):
        self.meta = dict(meta)
        self.pretty_meta = "\n".join(f"{key}: {value}" for key, value in self.meta.items())

    def tabulate(self, dp: Optional[int] = None) -> prettytable.PrettyTable:
        raise NotImplementedError

    def __str__(self):
        return self.prettify()

    def prettify(self, dp: Optional[int] = None) -> str:
        """
        Alias to str(self). Get the result as its :class:`prettytable.PrettyTable`
        in string form, with added metadata.

        Parameters
        ----------
        dp : int, optional
            The decimal places to use.
        """
        return f"{self.pretty_meta}\n\n{self.tabulate(dp)}"

    def to_csv(self, dp: Optional[int] = None, **kwargs) -> str:
        """
        Get the result as a CSV preceded by ``#``-prefixed metadata lines.

        Parameters
        ----------
        dp : int, optional
            The decimal places to use.
        **kwargs
            Extra arguments to be passed to :func:`csv.writer` via :class:`prettytable.PrettyTable`.
        """
        csv_meta = "".join(f"# {key},{value}\n" for key, value in self.meta.items())
        return f"{csv_meta}{self.tabulate(dp).get_csv_string(**kwargs)}"

    def to_html(self, dp: Optional[int] = None, **kwargs) -> str:
        """Get the result as a HTML table."""
        return self.tabulate(dp).get_html_string(**kwargs)

    def to_json(self, dp: Optional[int] = None, **kwargs) -> str:
        """Get the result as a JSON string."""
        return self.tabulate(dp).get_json_string(**kwargs)

    def to_df(self, dp: Optional[int] = None, **kwargs) -> pd.DataFrame:
        """
        Get the result as a pandas DataFrame.

        Parameters
        ----------
        dp : int, optional
            The decimal places to limit the display to.
        **kwargs
            Extra arguments to be passed to the
            :class:`pandas.DataFrame` instance.
        """
        table = self.tabulate(dp)
        return pd.DataFrame(table._rows, columns=table.field_names, **kwargs)
