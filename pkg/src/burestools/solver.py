"""
Solvers of the master relations.

The eigenvalue side solves ``compose_eigen(m) = R^2`` for the radial
M-transform and differentiates it into the radial density. The singular
side solves ``compose_singular(M) = x + i eps`` along the real axis and
reads the density off the imaginary part of the Green function. Closed-form
densities of the solvable special cases live here too, as oracles.
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
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import prettytable
import scipy.integrate
import scipy.optimize

from . import BuresError
from .model import (
    CueSumFactor,
    ExampleForm,
    ModelSpec,
    ModelTag,
    NotApplicable,
    ValidatedModel,
    divergence_exponent,
    validate,
)
from .transforms import (
    BranchCollision,
    BranchLoss,
    Composition,
    ContinuationStall,
    PoleHit,
    SFactorState,
)
from .utils import IMAG_OFFSET, TabularResult, default_grid

__all__ = [
    "NoRealRoot",
    "NoUpperBranch",
    "SupportEdgeAmbiguity",
    "RadialSolution",
    "DomainGeometry",
    "DensityCurve",
    "solve_radial",
    "radial_density",
    "radial_cumulative",
    "singular_density",
    "singular_upper_edge",
    "domain_geometry",
    "closed_form_radii",
    "normalization",
    "theory_moments",
    "scaling_relation_check",
    "conjecture_residual",
    "bures_closed_form",
    "t_example1_closed_form",
    "marchenko_pastur_closed_form",
    "integer_ratio_closed_form",
]

AnyModel = Union[ModelSpec, ValidatedModel]
BURES_EDGE = 3 * math.sqrt(3)


class NoRealRoot(BuresError):
    """For when the radial master relation has no root in the allowed real interval."""

    code = "NoRealRoot"


class NoUpperBranch(BuresError):
    """For when the singular-value continuation loses the physical branch."""

    code = "NoUpperBranch"


class SupportEdgeAmbiguity(BuresError):
    """For when the upper edge of a singular spectrum cannot be located; carries the bracketing x values."""

    code = "SupportEdgeAmbiguity"


def _validated(model: AnyModel) -> ValidatedModel:
    return model if isinstance(model, ValidatedModel) else validate(model)


################################################################################


@dataclass(frozen=True)
class RadialSolution:
    """
    The radial M-transform at one radius.

    Attributes
    ----------
    R : float
    m_value : float
        The root of ``compose_eigen(m) = R^2`` in ``[alpha - 1, 0]``.
    factor_states : Tuple[SFactorState, ...]
        Auxiliary states of the general-weight CUE sums at the root.
    """

    R: float
    m_value: float
    factor_states: Tuple[SFactorState, ...] = ()


@dataclass(frozen=True)
class DomainGeometry:
    """
    The mean spectral domain of a square model: a centered disk or annulus.

    Attributes
    ----------
    R_ext, R_int : float
    alpha : float
        Fraction of structural zero modes.
    d : int, optional
        The divergence exponent, absent for an annulus or an undecided model.
    """

    R_ext: float
    R_int: float
    alpha: float
    d: Optional[int]

    @property
    def is_disk(self) -> bool:
        return self.R_int == 0


class DensityCurve(TabularResult):
    """
    A density sampled on a grid.

    Not intended to be constructed manually.

    Attributes
    ----------
    grid : numpy.ndarray
        Radii (eigenvalue kind) or positions ``x`` (singular kind), increasing.
    values : numpy.ndarray
        The radial density ``rho_rad(R)`` or the singular density ``rho(x)``.
    kind : {"eigenvalue-radial", "singular"}
    m_values : numpy.ndarray
        The solved transform at every grid point; real for the eigenvalue kind.
    geometry : DomainGeometry, optional
    flags : Dict[str, Tuple[int, ...]]
        Grid indices carrying a flag such as ``DerivativeBlowup`` or ``Extended``.
    meta : dict
    pretty_meta : str
    """

    __slots__ = ("grid", "values", "kind", "m_values", "geometry", "flags")

    EIGENVALUE = "eigenvalue-radial"
    SINGULAR = "singular"

    grid: np.ndarray
    values: np.ndarray
    kind: str
    m_values: np.ndarray
    geometry: Optional[DomainGeometry]
    flags: Dict[str, Tuple[int, ...]]

    def __init__(
        self,
        grid: Sequence[float],
        values: Sequence[float],
        kind: str,
        m_values: Sequence[complex],
        geometry: Optional[DomainGeometry] = None,
        flags: Optional[Dict[str, Tuple[int, ...]]] = None,
        meta: Optional[dict] = None,
    ):
        assert kind in (self.EIGENVALUE, self.SINGULAR), f"unknown density kind {kind!r}"
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.kind = kind
        self.m_values = np.asarray(m_values)
        self.geometry = geometry
        self.flags = dict(flags or {})
        self._set_meta(meta or {})

    def __repr__(self):
        return f"<{self.__module__}.{type(self).__qualname__} of {len(self)} {self.kind} points at {hex(id(self))}>"

    def __len__(self):
        return len(self.grid)

    def __eq__(self, other):
        return (
            isinstance(other, DensityCurve)
            and self.kind == other.kind
            and np.array_equal(self.grid, other.grid)
            and np.array_equal(self.values, other.values)
        )

    def __getitem__(self, key):
        if isinstance(key, slice):
            indices = range(len(self))[key]
            flags = {
                name: tuple(indices.index(i) for i in where if i in indices)
                for name, where in self.flags.items()
            }
            return self.__class__(
                self.grid[key],
                self.values[key],
                self.kind,
                self.m_values[key],
                self.geometry,
                flags,
                self.meta,
            )
        elif isinstance(key, int):
            return self.grid[key], self.values[key]
        else:
            raise NotImplementedError("__getitem__ only supports slice and int")

    def copy(self):
        """Copy an instance of DensityCurve."""
        return self.__class__(
            self.grid.copy(),
            self.values.copy(),
            self.kind,
            self.m_values.copy(),
            self.geometry,
            self.flags,
            self.meta,
        )

    def integral(self) -> float:
        """Trapezoid integral of the curve over its grid."""
        finite = np.isfinite(self.values)
        return float(scipy.integrate.trapezoid(self.values[finite], self.grid[finite]))

    def tabulate(self, dp: Optional[int] = None) -> prettytable.PrettyTable:
        """
        Create a :class:`prettytable.PrettyTable` of the curve.

        Columns are ``R, m_value, rho_rad`` for the eigenvalue kind and
        ``x, re_M, im_M, rho`` for the singular kind.

        Parameters
        ----------
        dp : int, optional
            The decimal places to use.
        """
        table = prettytable.PrettyTable()
        if self.kind == self.EIGENVALUE:
            table.add_column("R", [float(r) for r in self.grid])
            table.add_column("m_value", [float(np.real(m)) for m in self.m_values])
            table.add_column("rho_rad", [float(v) for v in self.values])
        else:
            table.add_column("x", [float(x) for x in self.grid])
            table.add_column("re_M", [float(np.real(m)) for m in self.m_values])
            table.add_column("im_M", [float(np.imag(m)) for m in self.m_values])
            table.add_column("rho", [float(v) for v in self.values])
        table.align = "l"
        if dp is not None:
            table.float_format = f".{dp}"
        return table


################################################################################


def closed_form_radii(model: AnyModel) -> Optional[Tuple[float, float]]:
    """
    The external and internal radii from the per-family formulas, or None
    for a general chain.

    A CUE sum contributes ``sum |w_l|^2`` to ``R_ext^2`` and
    ``max(0, |w|_max^2 - sum of the rest)`` to ``R_int^2`` (``|w|^2`` when
    it has one term, 0 when all its weights are equal). Ginibre factors
    contribute ``sigma^2`` and close the hole.

    Examples
    --------
    >>> import burestools as bt
    >>> bt.closed_form_radii(bt.t_model([[1, 0.5]]))
    (1.118033988749895, 0.8660254037844386)
    """
    model = _validated(model)
    if model.tag is ModelTag.GENERAL_CHAIN:
        return None
    outer, inner = 1.0, 1.0
    for factor in model.factors:
        if isinstance(factor, CueSumFactor):
            moduli = np.sort(factor.moduli_sq)
            outer *= float(moduli.sum())
            if factor.example_form is ExampleForm.EQUAL_WEIGHTS and factor.L >= 2:
                inner = 0.0
            else:
                inner *= max(0.0, float(moduli[-1] - moduli[:-1].sum()))
        else:
            outer *= factor.sigma ** 2
            inner = 0.0
    return math.sqrt(outer), math.sqrt(inner)


def domain_geometry(model: AnyModel) -> DomainGeometry:
    """
    Radii of the mean spectral domain from the endpoint values of the
    composed transform: ``R_ext^2 = N(0)`` and ``R_int^2 = N(alpha - 1)``.

    The result is cross-checked against :func:`closed_form_radii` and a
    mismatch is logged.

    Parameters
    ----------
    model : ValidatedModel
        Must be square.

    Returns
    -------
    DomainGeometry

    Examples
    --------
    >>> import burestools as bt
    >>> geometry = bt.domain_geometry(bt.t_model([[1, 0.5]]))
    >>> round(geometry.R_ext ** 2, 12), round(geometry.R_int ** 2, 12)
    (1.25, 0.75)
    """
    model = _validated(model)
    model.require_square()
    composition = Composition(model)
    outer = float(np.real(composition.eigen(0.0)))
    inner = float(np.real(composition.eigen(float(model.alpha) - 1.0)))
    if inner < 1e-14 * outer:
        inner = 0.0
    try:
        d = divergence_exponent(model)
    except NotApplicable:
        d = None
    closed = closed_form_radii(model)
    if closed is not None:
        tolerance = 1e-10 * max(1.0, outer)
        if abs(closed[0] ** 2 - outer) > tolerance or abs(closed[1] ** 2 - inner) > tolerance:
            logging.warning(
                f"Domain radii ({math.sqrt(outer)}, {math.sqrt(inner)}) of model {model.spec.name!r} "
                f"disagree with the closed form {closed}."
            )
    return DomainGeometry(math.sqrt(outer), math.sqrt(inner), float(model.alpha), d)


################################################################################


class _RadialProblem:
    # one model's radial master relation with a shared composition

    __slots__ = ("model", "composition", "geometry", "lower")

    def __init__(self, model: ValidatedModel):
        model.require_square()
        self.model = model
        self.composition = Composition(model)
        self.geometry = domain_geometry(model)
        self.lower = float(model.alpha) - 1.0

    def residual(self, m: float, target: float) -> float:
        return float(np.real(self.composition.eigen(m))) - target

    def solve(self, R: float, upper: float = 0.0) -> float:
        if R >= self.geometry.R_ext:
            return 0.0
        if R <= self.geometry.R_int:
            return self.lower
        target = R * R
        lo = self.residual(self.lower, target)
        hi = self.residual(upper, target)
        if lo > 0 or (hi < 0 and upper == 0.0):
            raise NoRealRoot(
                f"no radial root at R = {R} in [{self.lower}, {upper}]",
                R=R,
                lower=lo,
                upper=hi,
            )
        if hi <= 0:
            return upper
        return scipy.optimize.brentq(
            self.residual, self.lower, upper, args=(target,), xtol=1e-15, rtol=4 * np.finfo(float).eps
        )

    def extend(self, R: float) -> Optional[float]:
        # the analytic continuation of the bulk root across a borderline
        target = R * R
        if R > self.geometry.R_ext:
            a, step, sign = 0.0, 0.1, 1.0
        elif 0 < R < self.geometry.R_int:
            a, step, sign = self.lower, 0.1, -1.0
        else:
            return None
        try:
            for _ in range(60):
                b = a + sign * step
                if self.residual(b, target) * sign > 0:
                    lo, hi = (a, b) if sign > 0 else (b, a)
                    return scipy.optimize.brentq(self.residual, lo, hi, args=(target,), xtol=1e-15)
                step *= 2
        except (BuresError, ValueError, ZeroDivisionError):
            return None
        return None

    def march(self, R_grid: Sequence[float]) -> List[RadialSolution]:
        R_grid = np.asarray(R_grid, dtype=float)
        assert np.all(R_grid >= 0), "radii must be nonnegative"
        out: List[Optional[RadialSolution]] = [None] * len(R_grid)
        upper = 0.0
        # inward from the external borderline, so each root brackets the next
        for i in np.argsort(R_grid, kind="stable")[::-1]:
            m = self.solve(float(R_grid[i]), upper)
            upper = m
            self.composition.eigen(m)
            out[i] = RadialSolution(float(R_grid[i]), float(m), self.composition.states())
        return out

    def slope(self, m: float) -> float:
        return float(np.real(self.composition.eigen_derivative(m)))

    def density(self, R: float, m: float) -> Tuple[float, bool]:
        slope = self.slope(m)
        if not math.isfinite(slope) or slope <= 1e-12 * self.geometry.R_ext ** 2:
            return (math.inf if R > 0 else 0.0), True
        return 2 * R / slope, False


def solve_radial(model: AnyModel, R_grid: Sequence[float]) -> List[RadialSolution]:
    """
    Solve the radial master relation on a grid of radii.

    Radii at or beyond ``R_ext`` get ``m = 0``, radii at or inside
    ``R_int`` get ``m = alpha - 1``; in between, the real root of
    ``compose_eigen(m) = R^2`` is found by bracketing, marching inward from
    the external borderline so that every root brackets the next.

    Parameters
    ----------
    model : ValidatedModel
        Must be square.
    R_grid : Sequence[float]

    Returns
    -------
    List[RadialSolution]
        One solution per radius, in grid order.

    Raises
    ------
    NoRealRoot

    Examples
    --------
    >>> import burestools as bt
    >>> [round(s.m_value, 12) for s in bt.solve_radial(bt.t_example1(1, 2), [1, 0.5 ** 0.5])]
    [0.0, -0.666666666667]
    """
    return _RadialProblem(_validated(model)).march(R_grid)


def radial_density(
    model: AnyModel, R_grid: Sequence[float], method: str = "analytic", extend: bool = False
) -> DensityCurve:
    """
    The radial eigenvalue density ``rho_rad(R) = d/dR M(R^2)``.

    Parameters
    ----------
    model : ValidatedModel
        Must be square.
    R_grid : Sequence[float]
    method : {"analytic", "finite_difference"}, default="analytic"
        ``analytic`` uses ``2 R / N'(m)`` at the solved root with the
        product rule over the factors; ``finite_difference`` differentiates
        the solved curve itself.
    extend : bool, default=False
        Continue the bulk solution across the borderlines instead of
        setting the density to zero outside the domain. Points so computed
        are flagged ``Extended``.

    Returns
    -------
    DensityCurve
        Points where the derivative degenerates are flagged
        ``DerivativeBlowup``; their values are kept.

    Examples
    --------
    >>> import burestools as bt
    >>> curve = bt.radial_density(bt.t_example1(1, 2), [0.5, 1, 1.5])
    >>> [round(v, 6) for v in curve.values]
    [0.653061, 4.0, 0.0]
    """
    if method not in ("analytic", "finite_difference"):
        raise ValueError(f"unknown differentiation method {method!r}")
    model = _validated(model)
    problem = _RadialProblem(model)
    geometry = problem.geometry
    R_grid = np.asarray(R_grid, dtype=float)
    solutions = problem.march(R_grid)
    m_values = np.array([s.m_value for s in solutions])
    values = np.zeros(len(R_grid))
    blowups, extended = [], []
    for i, (R, m) in enumerate(zip(R_grid, m_values)):
        outside = R > geometry.R_ext or R < geometry.R_int
        if outside:
            if not extend:
                continue
            m_ext = problem.extend(float(R))
            if m_ext is None:
                continue
            m_values[i] = m = m_ext
            extended.append(i)
        if method == "finite_difference" and not outside:
            values[i] = _finite_difference(problem, float(R))
            continue
        values[i], blown = problem.density(float(R), float(m))
        if blown:
            blowups.append(i)
    meta = {
        "Model": model.spec.name,
        "Spectrum": DensityCurve.EIGENVALUE,
        "R_ext": geometry.R_ext,
        "R_int": geometry.R_int,
        "alpha": geometry.alpha,
        "d": geometry.d,
        "Derivative": method,
    }
    flags = {"DerivativeBlowup": tuple(blowups), "Extended": tuple(extended)}
    return DensityCurve(R_grid, values, DensityCurve.EIGENVALUE, m_values, geometry, flags, meta)


def _finite_difference(problem: _RadialProblem, R: float) -> float:
    geometry = problem.geometry
    h = 1e-5 * geometry.R_ext
    lo, hi = max(R - h, geometry.R_int), min(R + h, geometry.R_ext)
    if hi - lo < 1e-300:
        return 0.0
    return (problem.solve(hi) - problem.solve(lo)) / (hi - lo)


def radial_cumulative(model: AnyModel, R_grid: Sequence[float]) -> np.ndarray:
    """
    ``M(R^2) + 1``: the mean fraction of eigenvalues of modulus at most R,
    zero modes included.
    """
    return np.array([s.m_value + 1 for s in solve_radial(model, R_grid)])


################################################################################


class _SingularProblem:
    # the singular master relation marched down the real axis

    __slots__ = ("model", "composition", "epsilon", "critical_M", "upper_edge", "flips", "extrapolated")

    def __init__(self, model: ValidatedModel, epsilon: float = IMAG_OFFSET):
        self.model = model
        self.composition = Composition(model)
        self.epsilon = epsilon
        self.critical_M, self.upper_edge = self._locate_edge()
        self.flips = 0
        self.extrapolated = 0

    def transform(self, M: complex, tracked: bool = False) -> complex:
        return self.composition.singular(M, tracked)

    def _locate_edge(self) -> Tuple[float, float]:
        # the edge is the image of the first turning point of N on the positive axis
        composition = self.composition
        composition.reset()

        def slope(M):
            return float(np.real(composition.singular_derivative(M, tracked=True)))

        grid = np.geomspace(1e-6, 1e4, 401)
        previous = None
        # each grid point continues the branch from the one before
        for a, b in zip(grid, grid[1:]):
            if previous is None:
                previous = slope(a)
                composition.commit()
            current = slope(b)
            if previous < 0 <= current:
                M_star = scipy.optimize.brentq(slope, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
                edge = float(np.real(composition.singular(M_star, tracked=True)))
                composition.reset()
                return M_star, edge
            composition.commit()
            previous = current
        composition.reset()
        raise SupportEdgeAmbiguity(
            "the singular transform has no turning point on the positive axis",
            x_bracket=[float(np.real(composition.singular(grid[-1]))), float(np.real(composition.singular(grid[0])))],
        )

    def real_root(self, x: float) -> float:
        # N decreases from +inf to the edge value on (0, M*)
        lo = self.critical_M * 1e-3
        for _ in range(40):
            if np.real(self.transform(lo)) > x:
                break
            lo *= 1e-1
        return scipy.optimize.brentq(
            lambda M: float(np.real(self.transform(M))) - x, lo, self.critical_M, xtol=1e-15
        )

    def _newton(self, z: complex, M: complex) -> complex:
        composition = self.composition
        for _ in range(60):
            F = composition.singular(M, tracked=True) - z
            if abs(F) <= 1e-12 * (1 + abs(z)):
                return M
            step = F / composition.singular_derivative(M, tracked=True)
            if not cmath.isfinite(step) or abs(step) > 0.5 * (1 + abs(M)):
                raise ContinuationStall("Newton diverged on the singular master relation", argument=str(z))
            M = M - step
        raise ContinuationStall("Newton did not converge on the singular master relation", argument=str(z))

    def _herglotz(self, M: complex, x: float, epsilon: Optional[float] = None) -> complex:
        z = complex(x, self.epsilon if epsilon is None else epsilon)
        if ((M + 1) / z).imag <= 0:
            return M
        self.flips += 1
        M = M.conjugate()
        # the conjugate solves N = conj(z); one Newton step back to z
        try:
            step = (self.composition.singular(M, tracked=True) - z) / self.composition.singular_derivative(
                M, tracked=True
            )
        except (PoleHit, BranchLoss, BranchCollision, ContinuationStall, ZeroDivisionError):
            return M
        corrected = M - step
        if cmath.isfinite(corrected) and ((corrected + 1) / z).imag <= 0:
            return corrected
        return M

    def track(self, x_from: float, M_from: complex, x_to: float) -> complex:
        h_max = 0.02 * self.upper_edge
        h = min(h_max, x_from - x_to)
        x, M = x_from, M_from
        while x > x_to:
            step = min(h, x - x_to)
            target = x - step
            seed = M - 1e-3j * (1 + abs(M)) if abs(M.imag) < 1e-6 * (1 + abs(M)) else M
            try:
                M_new = self._newton(complex(target, self.epsilon), seed)
            except (ContinuationStall, PoleHit, BranchLoss, BranchCollision, ZeroDivisionError, FloatingPointError):
                M_new = None
            if M_new is None or abs(M_new - M) > 0.25 * (1 + abs(M)):
                h /= 2
                if h < 1e-12 * self.upper_edge:
                    raise NoUpperBranch(
                        f"lost the physical branch of the singular master relation near x = {x}",
                        x=x,
                        M=str(M),
                        model=self.model.spec.name,
                    )
                continue
            M_new = self._herglotz(M_new, target)
            self.composition.singular(M_new, tracked=True)
            self.composition.commit()
            x, M = target, M_new
            h = min(2 * h, h_max)
        return M

    def density(self, x: float, M: complex) -> float:
        rho = -((M + 1) / complex(x, self.epsilon)).imag / math.pi
        if (self.upper_edge - x) < 1e-2 * self.upper_edge:
            # Richardson step towards eps -> 0
            try:
                M2 = self._newton(complex(x, 2 * self.epsilon), M)
            except (ContinuationStall, PoleHit, BranchLoss, BranchCollision):
                return max(rho, 0.0)
            M2 = self._herglotz(M2, x, 2 * self.epsilon)
            rho2 = -((M2 + 1) / complex(x, 2 * self.epsilon)).imag / math.pi
            rho = 2 * rho - rho2
            self.extrapolated += 1
        return max(rho, 0.0)

    def solve(self, x_grid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        values = np.zeros(len(x_grid))
        m_values = np.zeros(len(x_grid), dtype=complex)
        self.composition.reset()
        x_prev = 1.5 * max(self.upper_edge, float(x_grid.max()))
        M_prev = complex(self.real_root(x_prev))
        self.composition.singular(M_prev, tracked=True)
        self.composition.commit()
        for i in np.argsort(x_grid, kind="stable")[::-1]:
            x = float(x_grid[i])
            if x >= self.upper_edge:
                M = complex(self.real_root(x)) if x > self.upper_edge else complex(self.critical_M)
                self.composition.singular(M, tracked=True)
                self.composition.commit()
                m_values[i], values[i] = M, 0.0
            else:
                M = self.track(x_prev, M_prev, x)
                m_values[i], values[i] = M, self.density(x, M)
            x_prev, M_prev = x, M
        return values, m_values


def singular_upper_edge(model: AnyModel) -> float:
    """
    The upper edge of the singular spectrum: the value of the singular
    transform at its first turning point on the positive axis.

    Raises
    ------
    SupportEdgeAmbiguity

    Examples
    --------
    >>> import burestools as bt
    >>> round(bt.singular_upper_edge(bt.bures_model()), 9) == round(3 * 3 ** 0.5, 9)
    True
    """
    return _SingularProblem(_validated(model)).upper_edge


def singular_density(
    model: AnyModel,
    x_grid: Sequence[float],
    epsilon: float = IMAG_OFFSET,
    check: bool = True,
) -> DensityCurve:
    """
    The density of the eigenvalues of ``X^dagger X``.

    For every ``x`` the relation ``compose_singular(M) = x + i epsilon`` is
    solved by Newton continuation, starting from the real root beyond the
    upper edge and marching down in ``x``. The root with ``Im G <= 0``,
    ``G = (M + 1) / z``, is kept and ``rho = -Im G / pi``. Near the upper
    edge the density is extrapolated to ``epsilon -> 0``.

    Parameters
    ----------
    model : ValidatedModel
    x_grid : Sequence[float]
        Positive positions.
    epsilon : float, default=:data:`~burestools.utils.IMAG_OFFSET`
    check : bool, default=True
        When the grid covers the support, compare the integral of the curve
        to the continuous mass and raise instead of returning a curve that
        fails.

    Returns
    -------
    DensityCurve

    Raises
    ------
    SupportEdgeAmbiguity
        When the upper edge cannot be located, e.g. for a single CUE whose
        singular values are all 1.
    NoUpperBranch
        When the continuation loses the physical branch or the curve fails
        the normalization check.
    """
    model = _validated(model)
    x_grid = np.asarray(x_grid, dtype=float)
    if np.any(x_grid <= 0):
        raise ValueError("singular-value grids must be positive")
    problem = _SingularProblem(model, epsilon)
    values, m_values = problem.solve(x_grid)
    if problem.flips:
        logging.info(f"Conjugated {problem.flips} roots onto the Herglotz branch.")
    if problem.extrapolated:
        logging.info(f"Richardson extrapolation used at {problem.extrapolated} points near the upper edge.")
    meta = {
        "Model": model.spec.name,
        "Spectrum": DensityCurve.SINGULAR,
        "Upper edge": problem.upper_edge,
        "Imaginary offset": epsilon,
        "Richardson points": problem.extrapolated,
        "Herglotz flips": problem.flips,
    }
    curve = DensityCurve(x_grid, values, DensityCurve.SINGULAR, m_values, None, {}, meta)
    if check and x_grid.min() <= 1e-3 * problem.upper_edge and x_grid.max() >= 0.99 * problem.upper_edge:
        integral, expected = _singular_mass(curve), float(min(model.s))
        curve.meta["Integral"] = integral
        if abs(integral - expected) > 2e-2:
            raise NoUpperBranch(
                f"singular density integrates to {integral}, expected {expected}",
                integral=integral,
                expected=expected,
                model=model.spec.name,
            )
    return curve


def _singular_mass(curve: DensityCurve) -> float:
    # trapezoid plus a power-law tail below the first grid point
    order = np.argsort(curve.grid)
    x, rho = curve.grid[order], curve.values[order]
    total = float(scipy.integrate.trapezoid(rho, x))
    if rho[0] > 0 and rho[1] > 0:
        gamma = -math.log(rho[1] / rho[0]) / math.log(x[1] / x[0])
        if gamma < 1:
            total += rho[0] * x[0] / (1 - gamma)
    return total


################################################################################


def normalization(model: AnyModel, kind: str = "eigenvalue") -> Tuple[float, float]:
    """
    The integrated analytic density and the mass it should carry.

    The radial density is integrated by adaptive quadrature over
    ``[R_int, R_ext]`` and should give ``1 - alpha``. The singular density
    is integrated over the default grid and should give ``min(s)``, the
    fraction of nonzero eigenvalues of ``X^dagger X``.

    Returns
    -------
    Tuple[float, float]
        ``(integral, expected)``
    """
    model = _validated(model)
    if kind == "eigenvalue":
        problem = _RadialProblem(model)
        geometry = problem.geometry

        def integrand(R):
            return problem.density(R, problem.solve(R))[0]

        integral, _ = scipy.integrate.quad(
            integrand, geometry.R_int, geometry.R_ext, limit=200, epsabs=1e-11, epsrel=1e-11
        )
        return integral, 1.0 - geometry.alpha
    if kind == "singular":
        edge = singular_upper_edge(model)
        curve = singular_density(model, default_grid(edge), check=False)
        return _singular_mass(curve), float(min(model.s))
    raise ValueError(f"unknown spectrum kind {kind!r}")


def theory_moments(model: AnyModel, n_max: int = 4, radius: Optional[float] = None, points: int = 64) -> np.ndarray:
    """
    Moments ``m_n`` of ``X^dagger X`` from the singular transform.

    With ``phi(M) = M N(M)``, analytic at 0, the M-transform inverts to
    ``m_n = [M^(n-1)] phi(M)^n / n``; the Taylor coefficients are taken
    from samples of ``phi`` on a small circle around the origin.

    Parameters
    ----------
    model : ValidatedModel
    n_max : int, default=4
    radius : float, optional
        Radius of the sampling circle, a tenth of the narrowest ratio by default.
    points : int, default=64

    Returns
    -------
    numpy.ndarray
        ``[m_1, ..., m_{n_max}]``

    Examples
    --------
    >>> import burestools as bt
    >>> [round(m, 10) for m in bt.theory_moments(bt.bures_model(), 2)]
    [1.0, 2.5]
    """
    model = _validated(model)
    assert 1 <= n_max < points, "n_max must be positive and below the number of circle points"
    radius = 0.1 * float(min(model.s)) if radius is None else radius
    composition = Composition(model)
    samples = np.empty(points, dtype=complex)
    for k in range(points):
        M = radius if k == 0 else radius * cmath.exp(2j * math.pi * k / points)
        samples[k] = composition.moment_polynomial(M, tracked=True)
        composition.commit()
    out = np.empty(n_max)
    for n in range(1, n_max + 1):
        coefficients = np.fft.fft(samples ** n) / points
        out[n - 1] = (coefficients[n - 1] / radius ** (n - 1)).real / n
    return out


def scaling_relation_check(model: AnyModel, R: Union[float, Sequence[float]]) -> float:
    """
    Largest gap between ``M_T(R^2)`` for a product of ``J`` identical CUE
    sums and ``M_S(R^(2/J))`` for one of them.

    Examples
    --------
    >>> import burestools as bt
    >>> bt.scaling_relation_check(bt.t_example1(3, 2), [0.5]) < 1e-8
    True
    """
    model = _validated(model)
    assert model.tag in (ModelTag.S, ModelTag.T), "the scaling relation holds for products of CUE sums"
    first = model.factors[0]
    assert all(
        isinstance(f, CueSumFactor) and np.allclose(f.moduli_sq, first.moduli_sq, rtol=1e-12, atol=0)
        for f in model.factors
    ), "the scaling relation needs identical factors"
    J = len(model.factors)
    R = np.atleast_1d(np.asarray(R, dtype=float))
    single = validate(ModelSpec((first,), f"{model.spec.name}-single"))
    m_T = np.array([s.m_value for s in solve_radial(model, R)])
    m_S = np.array([s.m_value for s in solve_radial(single, R ** (1 / J))])
    return float(np.max(np.abs(m_T - m_S)))


def conjecture_residual(model: AnyModel, x_grid: Sequence[float]) -> float:
    """
    Largest relative residual of ``(M + 1)/M * compose_eigen(M) = z`` at the
    roots ``M`` returned by the singular solver, for a square model.
    """
    model = _validated(model)
    model.require_square()
    curve = singular_density(model, x_grid, check=False)
    composition = Composition(model)
    residuals = []
    for x, M in zip(curve.grid, curve.m_values):
        z = complex(x, IMAG_OFFSET)
        value = (M + 1) / M * composition.eigen(complex(M))
        residuals.append(abs(value - z) / abs(z))
    return float(max(residuals))


################################################################################


def bures_closed_form(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    The Bures singular-value density, supported on ``[0, 3 sqrt(3)]``.

    Examples
    --------
    >>> import burestools as bt
    >>> round(bt.bures_closed_form(1.0), 5)
    0.20772
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = BURES_EDGE / x
        root = np.sqrt(np.maximum(ratio ** 2 - 1, 0.0))
        value = (np.cbrt(ratio + root) ** 2 - np.cbrt(ratio - root) ** 2) / (4 * math.sqrt(3) * math.pi)
    out = np.where((x > 0) & (x <= BURES_EDGE), value, 0.0)
    return float(out) if out.ndim == 0 else out


def t_example1_closed_form(
    R: Union[float, np.ndarray], J: int, L: int, w: complex = 1.0
) -> Union[float, np.ndarray]:
    """
    The radial density of ``J`` identical CUE sums of ``L`` equal weights
    with overall product weight ``w`` (see :func:`~burestools.utils.t_example1`).

    With ``a = |w|^(2/J)``,
    ``rho_rad = (2/J)(1 - 1/L) a R^(2/J - 1) / (a - R^(2/J)/L)^2`` for
    ``R <= |w|`` and 0 beyond.
    """
    R = np.asarray(R, dtype=float)
    a = abs(w) ** (2 / J)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = R ** (2 / J)
        value = (2 / J) * (1 - 1 / L) * a * R ** (2 / J - 1) / (a - u / L) ** 2
    out = np.where(R <= abs(w), value, 0.0)
    return float(out) if out.ndim == 0 else out


def marchenko_pastur_closed_form(
    x: Union[float, np.ndarray], r: float = 1.0, sigma: float = 1.0
) -> Union[float, np.ndarray]:
    """
    The continuous part of the singular density of one Ginibre factor with
    ``r`` times as many rows as columns.

    The eigenvalues of ``X^dagger X`` follow the Marchenko-Pastur law of
    ratio ``c = 1/r`` scaled by ``sigma^2 sqrt(r)``; for ``r < 1`` an atom
    of mass ``1 - r`` at zero is not included.
    """
    x = np.asarray(x, dtype=float)
    c = 1 / r
    scale = sigma ** 2 * math.sqrt(r)
    lo, hi = scale * (1 - math.sqrt(c)) ** 2, scale * (1 + math.sqrt(c)) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.sqrt(np.maximum((hi - x) * (x - lo), 0.0)) / (2 * math.pi * c * scale * x)
    out = np.where((x > lo) & (x < hi) & (x > 0), value, 0.0)
    return float(out) if out.ndim == 0 else out


def integer_ratio_closed_form(R: Union[float, np.ndarray], K: int) -> Union[float, np.ndarray]:
    """
    The radial density ``(2/K) R^(2/K - 1)`` on the unit disk of a W product
    whose CUE-sum lengths equal the integer ratios of its Ginibre chain, for
    which ``M(R^2) = R^(2/K) - 1``.
    """
    R = np.asarray(R, dtype=float)
    with np.errstate(divide="ignore"):
        value = (2 / K) * R ** (2 / K - 1)
    out = np.where(R <= 1, value, 0.0)
    return float(out) if out.ndim == 0 else out
