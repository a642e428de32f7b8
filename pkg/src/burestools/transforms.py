"""
N-transforms of the individual factors and their composition into the
master relation of a whole product, for eigenvalues and for singular values.

The eigenvalue side composes the rotationally-symmetric transforms of the
factors; the singular side multiplies the same product by ``(M + s_1)/M``.
Every factor enters through its row and column ratios, so Ginibre factors
telescope into the products over rectangularity ratios.
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
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.optimize

from . import BuresError
from .model import CueSumFactor, ExampleForm, ValidatedModel
from .utils import POLE_GUARD

__all__ = [
    "PoleHit",
    "BranchLoss",
    "ContinuationStall",
    "BranchCollision",
    "SFactorState",
    "TransformValue",
    "n_cue_equal_weights",
    "n_cue_two_weights",
    "n_cue_general",
    "n_ginibre_chain",
    "compose_eigen",
    "compose_singular",
    "Composition",
]

Number = Union[float, complex]


class PoleHit(BuresError):
    """For when a transform is evaluated within the pole guard of one of its poles."""

    code = "PoleHit"


class BranchLoss(BuresError):
    """For when continuation cannot tell the physical root of a quadratic from the other."""

    code = "BranchLoss"


class ContinuationStall(BuresError):
    """For when a continuation step size underflows."""

    code = "ContinuationStall"


class BranchCollision(BuresError):
    """For when a discriminant of the CUE-sum system vanishes away from the path endpoint."""

    code = "BranchCollision"


@dataclass(frozen=True)
class SFactorState:
    """
    Auxiliary unknowns of one general CUE sum: ``C`` and one ``M_l`` per
    weight, with ``M_l (M_l + 1) = -C |w_l|^2`` and ``sum(M_l) = m``.
    """

    C: Number
    M: Tuple[Number, ...]

    @property
    def argument(self) -> Number:
        return sum(self.M)


@dataclass(frozen=True)
class TransformValue:
    """A transform value together with its argument and per-factor diagnostics."""

    value: Number
    argument: Number
    factor_states: Tuple[SFactorState, ...] = ()


def _real_if_close(value: complex, like) -> Number:
    if not isinstance(like, complex) and abs(value.imag) <= 1e-12 * max(1.0, abs(value)):
        return value.real
    return value


################################################################################


def n_cue_equal_weights(m: Number, L: int, w: Number) -> Number:
    """
    Transform of a CUE sum of ``L`` terms all weighted ``w / sqrt(L)``.

    Parameters
    ----------
    m : complex
    L : int
    w : complex
        The overall weight; ``|w|^2`` is the sum of the squared moduli.

    Returns
    -------
    complex
        ``|w|^2 (m + 1) / (m / L + 1)``

    Raises
    ------
    PoleHit
        Within :data:`~burestools.utils.POLE_GUARD` of ``m = -L``.

    Examples
    --------
    >>> import burestools as bt
    >>> bt.n_cue_equal_weights(-0.5, 2, 1)
    0.6666666666666666
    """
    if L == 1:
        return abs(w) ** 2
    if abs(m + L) < POLE_GUARD:
        raise PoleHit(f"m = {m} is at the pole -L = {-L}", argument=str(m), pole=-L)
    return abs(w) ** 2 * (m + 1) / (m / L + 1)


def _d_equal_weights(m: Number, L: int, w: Number) -> Number:
    return abs(w) ** 2 * (1 - 1 / L) / (m / L + 1) ** 2


################################################################################


def _two_weight_coefficients(m: Number, a: float, b: float):
    # (m + 2) n^2 - (m + 1)(A + B) n + m A B = 0 with A, B = (|w1| +- |w2|)^2
    big = (math.sqrt(a) + math.sqrt(b)) ** 2
    small = (math.sqrt(a) - math.sqrt(b)) ** 2
    return m + 2, -(m + 1) * (big + small), m * big * small


def _two_weight_roots(m: Number, a: float, b: float) -> List[complex]:
    qa, qb, qc = _two_weight_coefficients(m, a, b)
    if abs(qa) < POLE_GUARD:
        if qb == 0:
            raise PoleHit("degenerate two-weight quadratic", argument=str(m))
        return [complex(-qc / qb)]
    disc = cmath.sqrt(qb * qb - 4 * qa * qc)
    # pick the sign that avoids cancellation
    q = -(qb + disc) / 2 if abs(qb + disc) >= abs(qb - disc) else -(qb - disc) / 2
    if q == 0:
        return [0j, 0j]
    return [complex(q / qa), complex(qc / q)]


def _nearest(roots: Sequence[complex], previous: complex) -> complex:
    if len(roots) == 1:
        return roots[0]
    distances = sorted((abs(r - previous), i) for i, r in enumerate(roots))
    (near, i), (far, _) = distances[0], distances[1]
    spread = abs(roots[0] - roots[1])
    if spread > 1e-9 * (1 + abs(previous)) and far > 0 and near / far > 0.9:
        raise BranchLoss(
            "continuation is equidistant from both roots",
            roots=[str(r) for r in roots],
            previous=str(previous),
        )
    return roots[i]


def n_cue_two_weights(
    m: Number, w1: Number, w2: Number, previous: Optional[Number] = None, steps: int = 64
) -> Number:
    """
    Transform of a two-term CUE sum ``w1 U1 + w2 U2``.

    The transform solves a quadratic; the physical root is the one
    continuously connected to ``|w1|^2 + |w2|^2`` at ``m = 0``.

    Parameters
    ----------
    m : complex
    w1, w2 : complex
    previous : complex, optional
        The transform value at a nearby argument on the physical branch.
        If omitted, real ``m >= -1`` takes the larger root and any other
        ``m`` is continued along the segment from 0.
    steps : int, default=64
        Number of continuation steps when ``previous`` is omitted.

    Raises
    ------
    BranchLoss
        If the continuation cannot tell the two roots apart.

    Examples
    --------
    >>> import burestools as bt
    >>> bt.n_cue_two_weights(-1, 1, 0.5)
    0.75
    """
    a, b = abs(w1) ** 2, abs(w2) ** 2
    roots = _two_weight_roots(m, a, b)
    if previous is not None:
        return _real_if_close(_nearest(roots, complex(previous)), m)
    if not isinstance(m, complex) and m >= -1 - 1e-12:
        # (m + 1)^2 (A + B)^2 - 4 m (m + 2) A B > 0 for real m >= -1: the roots never meet
        return max(r.real for r in roots)
    value = complex(a + b)
    for t in np.linspace(0, 1, steps + 1)[1:]:
        value = _nearest(_two_weight_roots(m * t, a, b), value)
    return _real_if_close(value, m)


def _d_two_weights(m: Number, value: Number, a: float, b: float) -> Number:
    big = (math.sqrt(a) + math.sqrt(b)) ** 2
    small = (math.sqrt(a) - math.sqrt(b)) ** 2
    dp_dm = value * value - (big + small) * value + big * small
    dp_dn = 2 * (m + 2) * value - (m + 1) * (big + small)
    return -dp_dm / dp_dn


################################################################################


class _GeneralSum:
    """
    The CUE-sum system reduced to one unknown: ``t``, the ``M`` of the
    weight of largest modulus. Then ``C = -t (t + 1) / a_max`` and every
    other ``M_l`` is a root of its quadratic in ``C``.
    """

    __slots__ = ("moduli", "top", "ties", "others")

    def __init__(self, weights: Sequence[Number]):
        self.moduli = np.abs(np.asarray(weights, dtype=complex)) ** 2
        self.top = float(self.moduli.max())
        self.ties = np.isclose(self.moduli, self.top, rtol=1e-12, atol=0)
        self.others = np.flatnonzero(~self.ties)

    def C(self, t: Number) -> Number:
        return -t * (t + 1) / self.top

    def principal(self, t: float) -> np.ndarray:
        disc = 1 - 4 * self.C(t) * self.moduli[self.others]
        return (-1 + np.sqrt(np.maximum(disc, 0.0))) / 2

    def tracked(self, t: complex, previous: np.ndarray) -> np.ndarray:
        out = np.empty(len(self.others), dtype=complex)
        C = self.C(t)
        for j, l in enumerate(self.others):
            disc = cmath.sqrt(1 - 4 * C * self.moduli[l])
            roots = [(-1 + disc) / 2, (-1 - disc) / 2]
            if abs(disc) < 1e-7:
                raise BranchCollision(
                    f"discriminant of weight {l} vanishes on the continuation path",
                    C=str(C),
                    weight=int(l),
                )
            out[j] = roots[0] if abs(roots[0] - previous[j]) <= abs(roots[1] - previous[j]) else roots[1]
        return out

    def residual(self, t: Number, others: np.ndarray, m: Number) -> Number:
        return self.ties.sum() * t + others.sum() - m

    def slope(self, t: Number, others: np.ndarray) -> Number:
        dM = self.moduli[self.others] * (2 * t + 1) / (self.top * (2 * others + 1))
        return self.ties.sum() + dM.sum()

    def value(self, t: Number, others: np.ndarray, m: Number) -> Number:
        a_others = self.moduli[self.others]
        if self.ties.sum() == 1:
            # free of the 0/0 at m = t = -1
            return self.top + (a_others * (t + m + 1) / (others + 1)).sum()
        return (m + 1) * (self.ties.sum() * self.top / (t + 1) + (a_others / (others + 1)).sum())

    def state(self, t: Number, others: np.ndarray) -> SFactorState:
        M = np.empty(len(self.moduli), dtype=complex)
        M[self.ties] = t
        M[self.others] = others
        if np.all(np.abs(M.imag) < 1e-14):
            return SFactorState(float(np.real(self.C(t))), tuple(float(x) for x in M.real))
        return SFactorState(complex(self.C(t)), tuple(complex(x) for x in M))

    def solve_real(self, m: float) -> float:
        if m == 0:
            return 0.0

        def g(t):
            return self.residual(t, self.principal(t), m)

        if m > 0:
            # C < 0 keeps every principal root real and nonnegative, so g(m) >= 0
            return scipy.optimize.brentq(g, 0.0, m, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        if g(-0.5) <= 0:
            return scipy.optimize.brentq(g, -0.5, 0.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        # only a single dominant weight can pass below -1/2
        grid = np.linspace(-0.5, -1.0, 257)
        values = [g(t) for t in grid]
        for (t_hi, g_hi), (t_lo, g_lo) in zip(zip(grid, values), zip(grid[1:], values[1:])):
            if g_lo <= 0 <= g_hi:
                if g_lo == 0:
                    return float(t_lo)
                return scipy.optimize.brentq(g, t_lo, t_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        raise ContinuationStall(f"no root of the CUE-sum system on the real segment at m = {m}")

    def continue_to(self, m: complex, start: Tuple[complex, complex, np.ndarray], steps: int = 16):
        m0, t, others = start
        h = 1.0 / steps
        s = 0.0
        while s < 1.0:
            step = min(h, 1.0 - s)
            target = m0 + (m - m0) * (s + step)
            try:
                t_new, others_new = self._newton(target, t, others)
            except (ContinuationStall, ZeroDivisionError, FloatingPointError):
                h /= 2
                if h < 1e-12:
                    raise ContinuationStall(
                        "continuation step size underflow in the CUE-sum system", argument=str(m)
                    )
                continue
            t, others, s = t_new, others_new, s + step
            h = min(2 * h, 1.0 / steps)
        return t, others

    def _newton(self, m: complex, t: complex, others: np.ndarray):
        for _ in range(50):
            current = self.tracked(t, others)
            r = self.residual(t, current, m)
            if abs(r) < 1e-14 * (1 + abs(m)):
                return t, current
            t_next = t - r / self.slope(t, current)
            if not cmath.isfinite(t_next) or abs(t_next - t) > 0.5:
                break
            t, others = t_next, current
        raise ContinuationStall("Newton did not converge", argument=str(m))


def n_cue_general(
    m: Number, weights: Sequence[Number], state: Optional[SFactorState] = None
) -> TransformValue:
    """
    Transform of a CUE sum with arbitrary weights.

    Solves ``sum(M_l) = m`` and ``M_l (M_l + 1) = -C |w_l|^2`` by continuation
    from ``m = 0``, ``C = 0``, all ``M_l = 0``, then returns
    ``-m (m + 1) / C`` in a form that stays finite at ``m = 0``. Without a
    ``state``, real ``m >= -1`` is bracketed on the real axis instead.

    Parameters
    ----------
    m : complex
    weights : Sequence[complex]
    state : SFactorState, optional
        A solved state at a nearby argument to continue from.

    Returns
    -------
    TransformValue

    Raises
    ------
    ContinuationStall, BranchCollision

    Examples
    --------
    >>> import burestools as bt
    >>> round(bt.n_cue_general(0, [1, 0.5, 0.25]).value, 12)
    1.3125
    """
    system = _GeneralSum(weights)
    real = not isinstance(m, complex) and state is None and m >= -1
    if real:
        t = system.solve_real(float(m))
        others = system.principal(t).astype(complex)
    else:
        if state is None:
            start = (0j, 0j, np.zeros(len(system.others), dtype=complex))
        else:
            M = np.asarray(state.M, dtype=complex)
            start = (complex(state.argument), complex(M[system.ties][0]), M[system.others])
        t, others = system.continue_to(complex(m), start)
    value = system.value(t, others, m)
    return TransformValue(_real_if_close(complex(value), m), m, (system.state(t, others),))


def _d_general(state: SFactorState, moduli: np.ndarray) -> Optional[complex]:
    # implicit derivative of N = (m + 1) sum(|w_l|^2 / (M_l + 1)); None near a singular point
    M = np.asarray(state.M, dtype=complex)
    if np.any(np.abs(M + 1) < 1e-6) or np.any(np.abs(2 * M + 1) < 1e-6):
        return None
    S = (moduli / (2 * M + 1)).sum()
    if abs(S) < 1e-12:
        return None
    dM = moduli / ((2 * M + 1) * S)
    return complex((moduli / (M + 1)).sum() - (M.sum() + 1) * (moduli * dM / (M + 1) ** 2).sum())


################################################################################


def n_ginibre_chain(m: Number, chain: Sequence[Tuple[float, float]], prefactor: bool = True) -> Number:
    """
    Transform of ``P^dagger P`` for a Ginibre chain ``P = A_1 ... A_K``.

    Parameters
    ----------
    m : complex
    chain : Sequence[Tuple[float, float]]
        ``(sigma_k, r_k)`` for every factor, with ``r_k`` the row dimension
        of ``A_k`` relative to the final column dimension.
    prefactor : bool, default=True
        Include ``(m + r_1)/m``. Without it the chain is the factor it
        contributes to a longer product, ``sigma^2 sqrt(r_1) prod_k (m + r_{k+1}) / r_k``
        with ``r_{K+1} = 1``, which is regular at ``m = 0``.

    Returns
    -------
    complex
        ``sigma^2 sqrt(r_1) (m + 1)/m prod_k (m / r_k + 1)`` with
        ``sigma = prod sigma_k``.

    Raises
    ------
    PoleHit
        Near ``m = 0`` when ``prefactor`` is set.

    Examples
    --------
    >>> import burestools as bt
    >>> bt.n_ginibre_chain(1, [(1, 1)])
    4.0
    >>> bt.n_ginibre_chain(0, [(1, 2)], prefactor=False)
    0.7071067811865476
    """
    if prefactor and abs(m) < POLE_GUARD:
        raise PoleHit("m = 0 is a pole of the Ginibre-chain transform", argument=str(m))
    sigma2 = float(np.prod([s for s, _ in chain])) ** 2
    rows = [float(r) for _, r in chain]
    out = sigma2 * math.sqrt(rows[0])
    for r, r_next in zip(rows, rows[1:] + [1.0]):
        out = out * (m + r_next) / r
    if prefactor:
        out = out * (m + rows[0]) / m
    return out


################################################################################


class Composition:
    """
    The master relation of a validated model, with branch memory.

    Two-weight and general CUE sums have several roots; a composition
    remembers the last committed root of each so that a sequence of nearby
    evaluations stays on one branch. Closed-form factors need no memory.

    Parameters
    ----------
    model : ValidatedModel

    Attributes
    ----------
    model : ValidatedModel
    fd_step : float
        Relative step of the differences used for general-weight derivatives
        where implicit differentiation breaks down, e.g. at ``M_l = -1``.
    """

    __slots__ = ("model", "_memory", "_pending", "fd_step")

    model: ValidatedModel
    fd_step: float

    def __init__(self, model: ValidatedModel, fd_step: float = 1e-6):
        self.model = model
        self._memory: Dict[int, object] = {}
        self._pending: Dict[int, object] = {}
        self.fd_step = fd_step

    def __repr__(self):
        return f"<{self.__module__}.{type(self).__qualname__} of {len(self.model.factors)} factors at {hex(id(self))}>"

    def reset(self):
        """Forget every remembered branch."""
        self._memory.clear()
        self._pending.clear()

    def commit(self):
        """Remember the roots of the last evaluation as the current branch."""
        self._memory.update(self._pending)

    def _cue(self, i: int, factor: CueSumFactor, x: Number, tracked: bool) -> Number:
        if not isinstance(x, complex):
            # rounding spill past the ends of the real segment
            if -1 - 1e-12 <= x < -1:
                x = -1.0
            elif 0 < x <= 1e-15:
                x = 0.0
        form = factor.example_form
        if form is ExampleForm.EQUAL_WEIGHTS:
            return n_cue_equal_weights(x, factor.L, math.sqrt(factor.total_weight))
        if form is ExampleForm.TWO_WEIGHTS:
            w1, w2 = factor.weights
            value = n_cue_two_weights(x, w1, w2, previous=self._memory.get(i) if tracked else None)
            self._pending[i] = value
            return value
        result = n_cue_general(x, factor.weights, state=self._memory.get(i) if tracked else None)
        self._pending[i] = result.factor_states[0]
        return result.value

    def _d_cue(self, i: int, factor: CueSumFactor, x: Number, value: Number, tracked: bool) -> Number:
        form = factor.example_form
        if form is ExampleForm.EQUAL_WEIGHTS:
            return _d_equal_weights(x, factor.L, math.sqrt(factor.total_weight))
        if form is ExampleForm.TWO_WEIGHTS:
            a, b = factor.moduli_sq
            return _d_two_weights(x, value, a, b)
        state = self._pending.get(i)
        if isinstance(state, SFactorState):
            slope = _d_general(state, factor.moduli_sq)
            if slope is not None:
                return _real_if_close(slope, x)
        h = self.fd_step * max(1.0, abs(x))
        saved = dict(self._pending)
        if not isinstance(x, complex) and (x + h > 0 or x - h < -1):
            # second-order one-sided difference inside the real segment
            sign = -1.0 if x + h > 0 else 1.0
            near = self._cue(i, factor, x + sign * h, tracked)
            far = self._cue(i, factor, x + 2 * sign * h, tracked)
            self._pending = saved
            return sign * (-3 * value + 4 * near - far) / (2 * h)
        up = self._cue(i, factor, x + h, tracked)
        down = self._cue(i, factor, x - h, tracked)
        self._pending = saved
        return (up - down) / (2 * h)

    def terms(self, m: Number, tracked: bool = False, derivative: bool = False):
        """
        Per-factor contributions to the product at ``m`` and, optionally,
        their derivatives.

        A CUE sum entered at ratio ``s`` contributes its own transform at
        ``m / s``; a Ginibre factor with ratios ``s_in, s_out`` contributes
        ``sigma^2 sqrt(s_in / s_out) (m + s_out) / s_in``.
        """
        values, slopes = [], []
        for i, (factor, s_in, s_out) in enumerate(self.model.spans()):
            if isinstance(factor, CueSumFactor):
                s = float(s_in)
                value = self._cue(i, factor, m / s, tracked)
                values.append(value)
                if derivative:
                    slopes.append(self._d_cue(i, factor, m / s, value, tracked) / s)
            else:
                s = float(s_out)
                values.append(n_ginibre_chain(m / s, [(factor.sigma, float(s_in) / s)], prefactor=False))
                slopes.append(factor.sigma ** 2 * math.sqrt(float(s_in) / s) / float(s_in))
        return values, slopes

    @staticmethod
    def _product(values: Sequence[Number]) -> Number:
        out = 1.0
        for v in values:
            out = out * v
        return out

    @staticmethod
    def _product_derivative(values: Sequence[Number], slopes: Sequence[Number]) -> Number:
        # product rule without dividing by a vanishing factor
        total = 0.0
        for i, slope in enumerate(slopes):
            term = slope
            for j, v in enumerate(values):
                if j != i:
                    term = term * v
            total = total + term
        return total

    def eigen(self, m: Number, tracked: bool = False) -> Number:
        """The composed rotationally-symmetric transform at ``m``."""
        self.model.require_square()
        values, _ = self.terms(m, tracked)
        return self._product(values)

    def eigen_derivative(self, m: Number, tracked: bool = False) -> Number:
        self.model.require_square()
        values, slopes = self.terms(m, tracked, derivative=True)
        return self._product_derivative(values, slopes)

    def singular(self, M: Number, tracked: bool = False) -> Number:
        """The composed transform of ``X^dagger X`` at ``M``."""
        if abs(M) < POLE_GUARD:
            raise PoleHit("M = 0 is a pole of the singular-value transform", argument=str(M))
        values, _ = self.terms(M, tracked)
        return (M + float(self.model.s[0])) / M * self._product(values)

    def singular_derivative(self, M: Number, tracked: bool = False) -> Number:
        if abs(M) < POLE_GUARD:
            raise PoleHit("M = 0 is a pole of the singular-value transform", argument=str(M))
        values, slopes = self.terms(M, tracked, derivative=True)
        s1 = float(self.model.s[0])
        prefactor = (M + s1) / M
        d_prefactor = -s1 / M ** 2
        return d_prefactor * self._product(values) + prefactor * self._product_derivative(values, slopes)

    def moment_polynomial(self, M: Number, tracked: bool = False) -> Number:
        """``M`` times the singular transform, analytic at ``M = 0``."""
        values, _ = self.terms(M, tracked)
        return (M + float(self.model.s[0])) * self._product(values)

    def states(self) -> Tuple[SFactorState, ...]:
        """Auxiliary states of the general CUE sums from the last evaluation."""
        return tuple(v for v in self._pending.values() if isinstance(v, SFactorState))


def compose_eigen(m: Number, model: ValidatedModel) -> Number:
    """
    The rotationally-symmetric N-transform of the whole product at ``m``.

    Parameters
    ----------
    m : complex
    model : ValidatedModel
        Must be square.

    Examples
    --------
    >>> import burestools as bt
    >>> round(bt.compose_eigen(0, bt.validate(bt.bures_model())), 12)
    1.0
    """
    return Composition(model).eigen(m)


def compose_singular(M: Number, model: ValidatedModel) -> Number:
    """
    The holomorphic N-transform of ``X^dagger X`` at ``M``, including the
    ``(M + s_1)/M`` prefactor.

    Parameters
    ----------
    M : complex
    model : ValidatedModel

    Raises
    ------
    PoleHit
    """
    return Composition(model).singular(M)
