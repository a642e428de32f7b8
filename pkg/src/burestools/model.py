"""
Definitions, validation and classification of generalized Bures products.

A model is an ordered product of factors, each either a weighted sum of
independent CUE matrices or a rectangular Ginibre matrix. All dimensions are
carried as exact rationals relative to the final column dimension.
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

import cmath
import enum
import math
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import BuresError

__all__ = [
    "ValidationError",
    "DimensionMismatch",
    "EmptyModel",
    "NonPositiveScale",
    "NotSquare",
    "NotApplicable",
    "CueSumFactor",
    "GinibreFactor",
    "ModelSpec",
    "ModelTag",
    "ExampleForm",
    "ModelClass",
    "ValidatedModel",
    "validate",
    "classify",
    "zero_mode_fraction",
    "divergence_exponent",
    "zero_order",
]


class ValidationError(BuresError):
    """For when a model specification is malformed."""

    code = "ValidationError"


class DimensionMismatch(ValidationError):
    """For when adjacent factors' inner dimensions disagree."""

    code = "DimensionMismatch"


class EmptyModel(ValidationError):
    """For when a model has no factors."""

    code = "EmptyModel"


class NonPositiveScale(ValidationError):
    """For when a sigma, a ratio or all of a sum's weights are not positive."""

    code = "NonPositiveScale"


class NotSquare(ValidationError):
    """For when an eigenvalue query is made on a product whose outer dimensions differ."""

    code = "NotSquare"


class NotApplicable(BuresError):
    """For when a quantity is undefined for the model, e.g. the divergence exponent of an annulus."""

    code = "NotApplicable"


Ratio = Union[int, Fraction, str]


def _ratio(value: Ratio) -> Fraction:
    try:
        out = Fraction(value)
    except (TypeError, ValueError) as exc:
        raise NonPositiveScale(f"dimension entry {value!r} is not a rational number") from exc
    if out <= 0:
        raise NonPositiveScale(f"dimension entry {value!r} must be positive", value=str(value))
    return out


################################################################################


class ExampleForm(enum.Enum):
    """How the moduli of a CUE sum's weights are arranged; selects the transform evaluator."""

    EQUAL_WEIGHTS = "EqualWeights"
    TWO_WEIGHTS = "TwoWeights"
    GENERAL_WEIGHTS = "GeneralWeights"


class ModelTag(enum.Enum):
    S = "S"
    P = "P"
    T = "T"
    W = "W"
    V = "V"
    GENERAL_CHAIN = "GeneralChain"


@dataclass(frozen=True)
class CueSumFactor:
    """
    A weighted sum of independent N x N CUE matrices, ``sum_l w_l U_l``.

    Parameters
    ----------
    weights : Sequence[complex]
        The weights w_1..w_L. At least one must be nonzero.
    size : Fraction, optional
        The side of the square factor in chain units. Inferred from its
        neighbours when omitted.
    """

    weights: Tuple[complex, ...]
    size: Optional[Fraction] = None

    kind = "cue_sum"

    def __post_init__(self):
        weights = tuple(complex(w) for w in self.weights)
        if not weights:
            raise NonPositiveScale("a CUE sum needs at least one weight")
        if not all(cmath.isfinite(w) for w in weights):
            raise NonPositiveScale("CUE weights must be finite", weights=[str(w) for w in weights])
        if all(w == 0 for w in weights):
            raise NonPositiveScale("at least one CUE weight must be nonzero")
        object.__setattr__(self, "weights", weights)
        if self.size is not None:
            object.__setattr__(self, "size", _ratio(self.size))

    @property
    def L(self) -> int:
        return len(self.weights)

    @property
    def moduli_sq(self) -> np.ndarray:
        """The squared moduli |w_l|^2."""
        return np.abs(np.asarray(self.weights)) ** 2

    @property
    def total_weight(self) -> float:
        """sum_l |w_l|^2, the value of the factor's transform at the origin."""
        return float(self.moduli_sq.sum())

    @property
    def example_form(self) -> ExampleForm:
        moduli = self.moduli_sq
        if np.allclose(moduli, moduli[0], rtol=1e-12, atol=0):
            return ExampleForm.EQUAL_WEIGHTS
        if self.L == 2:
            return ExampleForm.TWO_WEIGHTS
        return ExampleForm.GENERAL_WEIGHTS

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "weights": [_complex_token(w) for w in self.weights]}
        if self.size is not None:
            out["size"] = str(self.size)
        return out


@dataclass(frozen=True)
class GinibreFactor:
    """
    A rectangular Ginibre matrix with entry scale ``sigma``.

    Parameters
    ----------
    sigma : float
        Entries have E|a|^2 = sigma^2 / sqrt(rows * cols).
    row_ratio, col_ratio : Fraction
        Row and column dimensions in chain units.
    """

    sigma: float
    row_ratio: Fraction
    col_ratio: Fraction

    kind = "ginibre"

    def __post_init__(self):
        sigma = float(self.sigma)
        if not (math.isfinite(sigma) and sigma > 0):
            raise NonPositiveScale(f"sigma must be positive, got {self.sigma!r}", sigma=self.sigma)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "row_ratio", _ratio(self.row_ratio))
        object.__setattr__(self, "col_ratio", _ratio(self.col_ratio))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "sigma": self.sigma,
            "rows": str(self.row_ratio),
            "cols": str(self.col_ratio),
        }


EnsembleFactor = Union[CueSumFactor, GinibreFactor]


def _complex_token(w: complex) -> str:
    return f"{w.real!r}{'+' if w.imag >= 0 else '-'}{abs(w.imag)!r}i"


################################################################################


@dataclass(frozen=True)
class ModelSpec:
    """
    An ordered product of ensemble factors, leftmost first.

    Attributes
    ----------
    factors : Tuple[EnsembleFactor, ...]
    name : str
    dimension_chain : Tuple[Fraction, ...]
        Row dimension of every factor followed by the final column dimension,
        normalized so that the last entry is 1. Computing it validates the
        chain.
    """

    factors: Tuple[EnsembleFactor, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    def __len__(self):
        return len(self.factors)

    @property
    def dimension_chain(self) -> Tuple[Fraction, ...]:
        rows, cols = _resolve_dimensions(self.factors)
        chain = [rows[0]] + cols
        return tuple(d / chain[-1] for d in chain)

    def normalized(self) -> "ModelSpec":
        """The same model with every CUE size filled in and all ratios relative to the final column."""
        chain = self.dimension_chain
        factors = []
        for i, factor in enumerate(self.factors):
            if isinstance(factor, CueSumFactor):
                factors.append(replace(factor, size=chain[i]))
            else:
                factors.append(replace(factor, row_ratio=chain[i], col_ratio=chain[i + 1]))
        return ModelSpec(tuple(factors), self.name)

    def to_dict(self) -> dict:
        return {"name": self.name, "factors": [f.to_dict() for f in self.factors]}


def _resolve_dimensions(factors: Sequence[EnsembleFactor]) -> Tuple[List[Fraction], List[Fraction]]:
    if not factors:
        raise EmptyModel("the model has no factors")
    rows: List[Optional[Fraction]] = []
    cols: List[Optional[Fraction]] = []
    for factor in factors:
        if isinstance(factor, GinibreFactor):
            rows.append(factor.row_ratio)
            cols.append(factor.col_ratio)
        else:
            rows.append(factor.size)
            cols.append(factor.size)
    # square factors of unknown size inherit from the left, then from the right
    n = len(factors)
    for order in (range(n), reversed(range(n))):
        for i in order:
            if rows[i] is not None:
                continue
            neighbour = None
            if i > 0 and cols[i - 1] is not None:
                neighbour = cols[i - 1]
            elif i < n - 1 and rows[i + 1] is not None:
                neighbour = rows[i + 1]
            if neighbour is not None:
                rows[i] = cols[i] = neighbour
    rows = [Fraction(1) if r is None else r for r in rows]
    cols = [Fraction(1) if c is None else c for c in cols]
    for i in range(n - 1):
        if cols[i] != rows[i + 1]:
            raise DimensionMismatch(
                f"factor {i} has {cols[i]} columns but factor {i + 1} has {rows[i + 1]} rows",
                index=i,
                left=str(cols[i]),
                right=str(rows[i + 1]),
            )
    return rows, cols


################################################################################


@dataclass(frozen=True)
class ModelClass:
    """The structural family of a model and the weight arrangement of each of its CUE sums."""

    tag: ModelTag
    example_forms: Tuple[ExampleForm, ...]

    @property
    def uniform_form(self) -> Optional[ExampleForm]:
        """The common example form of all CUE sums, if they share one."""
        forms = set(self.example_forms)
        return forms.pop() if len(forms) == 1 else None


_BLOCKS = re.compile(r"(C+G+)")


def classify(spec: Union[ModelSpec, "ValidatedModel"]) -> ModelClass:
    """
    Sort a model into S, P, T, W, V or GeneralChain.

    The family is read off the pattern of factor kinds: CUE sums alone give
    S (one) or T (several), Ginibre factors alone give P, one run of CUE sums
    followed by one run of Ginibre factors gives W, and two or more such runs
    give V.
    """
    if isinstance(spec, ValidatedModel):
        spec = spec.spec
    if not spec.factors:
        raise EmptyModel("the model has no factors")
    pattern = "".join("C" if isinstance(f, CueSumFactor) else "G" for f in spec.factors)
    forms = tuple(f.example_form for f in spec.factors if isinstance(f, CueSumFactor))
    if "G" not in pattern:
        tag = ModelTag.S if len(pattern) == 1 else ModelTag.T
    elif "C" not in pattern:
        tag = ModelTag.P
    elif _BLOCKS.fullmatch(pattern):
        tag = ModelTag.W
    elif re.fullmatch(r"(C+G+)+", pattern):
        tag = ModelTag.V
    else:
        tag = ModelTag.GENERAL_CHAIN
    return ModelClass(tag, forms)


################################################################################


@dataclass(frozen=True)
class ValidatedModel:
    """
    A model whose dimension chain has been checked and normalized.

    Not intended to be constructed manually; see :func:`validate`.

    Attributes
    ----------
    spec : ModelSpec
        The normalized specification.
    s : Tuple[Fraction, ...]
        ``s[i]`` is the row dimension of factor ``i`` relative to the final
        column dimension, and ``s[-1] == 1``.
    model_class : ModelClass
    """

    spec: ModelSpec
    s: Tuple[Fraction, ...]
    model_class: ModelClass

    @property
    def factors(self) -> Tuple[EnsembleFactor, ...]:
        return self.spec.factors

    @property
    def tag(self) -> ModelTag:
        return self.model_class.tag

    @property
    def is_square(self) -> bool:
        """Whether eigenvalue queries are allowed (s_1 = 1)."""
        return self.s[0] == 1

    @property
    def alpha(self) -> Fraction:
        """Fraction of structural zero modes, 1 - min over the chain."""
        return 1 - min(self.s)

    def spans(self) -> List[Tuple[EnsembleFactor, Fraction, Fraction]]:
        """Every factor with its row and column ratios."""
        return [(f, self.s[i], self.s[i + 1]) for i, f in enumerate(self.factors)]

    def blocks(self) -> List[List[int]]:
        """Factor indices grouped into runs of CUE sums followed by Ginibre factors."""
        pattern = "".join("C" if isinstance(f, CueSumFactor) else "G" for f in self.factors)
        return [list(range(m.start(), m.end())) for m in _BLOCKS.finditer(pattern)]

    def dimensions(self, n_outer: int) -> List[Fraction]:
        """The chain scaled so that the final column dimension is ``n_outer``."""
        return [d * n_outer for d in self.s]

    def to_dict(self) -> Dict:
        return self.spec.to_dict()

    def require_square(self):
        if not self.is_square:
            raise NotSquare(
                f"eigenvalues need a square product, the outer ratio is {self.s[0]}",
                s_1=str(self.s[0]),
            )


def validate(spec: ModelSpec) -> ValidatedModel:
    """
    Check a model's dimension chain and compute its ratios.

    Parameters
    ----------
    spec : ModelSpec

    Returns
    -------
    ValidatedModel

    Raises
    ------
    EmptyModel, DimensionMismatch, NonPositiveScale

    Examples
    --------
    >>> import burestools as bt
    >>> model = bt.validate(bt.ModelSpec((bt.CueSumFactor((0.5**0.5, 0.5**0.5)), bt.GinibreFactor(1, 1, 1))))
    >>> model.tag, model.s
    (<ModelTag.W: 'W'>, (Fraction(1, 1), Fraction(1, 1), Fraction(1, 1)))
    """
    if not spec.factors:
        raise EmptyModel("the model has no factors")
    normalized = spec.normalized()
    return ValidatedModel(normalized, normalized.dimension_chain, classify(normalized))


################################################################################


def zero_mode_fraction(model: ValidatedModel) -> Fraction:
    """
    The fraction alpha of exact zero eigenvalues forced by the narrowest
    point of the dimension chain.

    Parameters
    ----------
    model : ValidatedModel
        Must be square.

    Returns
    -------
    Fraction
        ``1 - min(s)``, zero when the chain never narrows below the outer size.
    """
    model.require_square()
    return model.alpha


def _cue_vanishes(factor: CueSumFactor) -> Optional[bool]:
    # whether the factor's transform has a simple zero at -1; None when undecided
    form = factor.example_form
    if form is ExampleForm.EQUAL_WEIGHTS:
        return factor.L >= 2
    if form is ExampleForm.TWO_WEIGHTS:
        return False
    moduli = np.sort(factor.moduli_sq)
    rest = moduli[:-1].sum()
    if moduli[-1] > rest * (1 + 1e-9):
        return False
    return None


def zero_order(model: ValidatedModel) -> Optional[int]:
    """
    Order of the zero of the composed transform at -1: every CUE sum entered
    at unit ratio whose own transform vanishes there, plus every Ginibre
    factor whose column ratio is 1.

    Returns None when a general-weight CUE sum makes the count undecidable.
    """
    count = 0
    for factor, s_in, s_out in model.spans():
        if isinstance(factor, CueSumFactor):
            if s_in != 1:
                continue
            vanishes = _cue_vanishes(factor)
            if vanishes is None:
                return None
            count += int(vanishes)
        elif s_out == 1:
            count += 1
    return count


def _family_exponent(model: ValidatedModel) -> Optional[int]:
    # equal-modulus CUE sums of length >= 2
    def equal_count(indices):
        return sum(
            1
            for i in indices
            if isinstance(model.factors[i], CueSumFactor)
            and model.factors[i].example_form is ExampleForm.EQUAL_WEIGHTS
            and model.factors[i].L >= 2
        )

    if any(f is ExampleForm.GENERAL_WEIGHTS for f in model.model_class.example_forms):
        return None
    if model.tag is ModelTag.T:
        return equal_count(range(len(model.factors)))
    d = 0
    for block in model.blocks():
        s_block = model.s[block[0]]
        cues = [i for i in block if isinstance(model.factors[i], CueSumFactor)]
        ginibres = [i for i in block if isinstance(model.factors[i], GinibreFactor)]
        # unit effective ratios among the second and later Ginibre rows
        unit = sum(1 for i in ginibres[1:] if model.s[i] == 1)
        d += (equal_count(cues) + 1) * int(s_block == 1) + unit
    return d


def divergence_exponent(model: ValidatedModel, spectrum_kind: str = "eigenvalue") -> Optional[int]:
    """
    The integer d governing the densities near zero.

    The radial eigenvalue density behaves as R^{-(d-2)/d} and the singular
    value density as x^{-d/(d+1)}.

    Parameters
    ----------
    model : ValidatedModel
    spectrum_kind : {"eigenvalue", "singular"}

    Returns
    -------
    int or None
        None when a general-weight CUE sum touches zero in a way the formula
        does not cover.

    Raises
    ------
    NotApplicable
        If the spectral domain does not touch zero (d = 0).

    Examples
    --------
    >>> import burestools as bt
    >>> bt.divergence_exponent(bt.validate(bt.bures_model()))
    2
    """
    if spectrum_kind not in ("eigenvalue", "singular"):
        raise ValueError(f"unknown spectrum kind {spectrum_kind!r}")
    if spectrum_kind == "eigenvalue":
        model.require_square()
    if model.tag in (ModelTag.T, ModelTag.W, ModelTag.V):
        d = _family_exponent(model)
    else:
        # the singular transform carries one extra (M + s_1) factor
        order = zero_order(model)
        d = None if order is None else order + int(model.s[0] == 1) - 1
    if d is None:
        return None
    if d <= 0:
        raise NotApplicable("the spectral domain does not reach zero", d=d)
    return d
