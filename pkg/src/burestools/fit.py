"""
Fits of the erfc form-factor to finite-size spectral borderlines.

At finite N the radial density is softened across each borderline ``R_b``
to ``rho_rad(R) * f(R)`` with ``f = erfc(q_b s_b (R - R_b) sqrt(N)) / 2``.
Here ``q_b`` and ``R_b`` are fitted to Monte Carlo edge profiles, and the
fitted width ``1 / (q_b sqrt(N))`` is tracked across matrix sizes.
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

import logging
import math
from dataclasses import dataclass
from typing import Generator, List, Optional, Sequence, Union

import numpy as np
import prettytable
import scipy.optimize
import scipy.special
import scipy.stats

from . import CPU_COUNT, BuresError
from .mc import MonteCarloRun, SpectrumSample, radial_histogram
from .model import ModelSpec, ValidatedModel, validate
from .solver import domain_geometry, radial_density
from .utils import DEFAULT_SAMPLES, TabularResult

__all__ = [
    "FitDiverged",
    "InsufficientWindow",
    "EdgeProfile",
    "ErfcFitResult",
    "EdgeScalingTest",
    "EdgeScalingResult",
    "erfc_form_factor",
    "edge_profile",
    "synthetic_profile",
    "fit_erfc",
    "MIN_EDGE_BINS",
]

MIN_EDGE_BINS: int = 12
"""The fewest bins with nonzero standard errors that :func:`fit_erfc` accepts."""

BORDERLINES = {"external": 1, "internal": -1}


class FitDiverged(BuresError):
    """For when the form-factor fit does not converge to a finite, in-window result."""

    code = "FitDiverged"


class InsufficientWindow(BuresError):
    """For when an edge profile has too few usable bins."""

    code = "InsufficientWindow"


################################################################################


def erfc_form_factor(
    R: Union[float, np.ndarray], N: int, q_b: float, R_b: float, s_b: int = 1
) -> Union[float, np.ndarray]:
    """
    ``erfc(q_b s_b (R - R_b) sqrt(N)) / 2``.

    Parameters
    ----------
    R : float or numpy.ndarray
    N : int
    q_b : float
        Positive.
    R_b : float
    s_b : {1, -1}, default=1
        1 for an external borderline, -1 for an internal one.

    Examples
    --------
    >>> import burestools as bt
    >>> bt.erfc_form_factor(1.0, 100, 0.7, 1.0)
    0.5
    >>> round(bt.erfc_form_factor(1.1, 100, 1.0, 1.0), 6)
    0.07865
    """
    assert q_b > 0, "q_b must be positive"
    assert N >= 1, "N must be positive"
    value = 0.5 * scipy.special.erfc(q_b * s_b * (np.asarray(R) - R_b) * math.sqrt(N))
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True, eq=False)
class EdgeProfile:
    """
    The empirical radial density around one borderline.

    Attributes
    ----------
    R : numpy.ndarray
        Bin centers.
    density, stderr : numpy.ndarray
        Zero-count bins carry the standard error of a single pseudo-count.
    theory : numpy.ndarray
        The bulk density continued across the borderline.
    s_b : int
    N : int
    R_b_theory : float
        The solver's borderline radius.
    """

    R: np.ndarray
    density: np.ndarray
    stderr: np.ndarray
    theory: np.ndarray
    s_b: int
    N: int
    R_b_theory: float

    @property
    def borderline(self) -> str:
        return "external" if self.s_b == 1 else "internal"


class ErfcFitResult(TabularResult):
    """
    A fitted borderline.

    Attributes
    ----------
    q_b : float
    R_b : float
        The fitted borderline radius.
    covariance : numpy.ndarray
        2 x 2 covariance of ``(q_b, R_b)``.
    residual : float
        RMS of the weighted residuals.
    profile : EdgeProfile
    """

    __slots__ = ("q_b", "R_b", "covariance", "residual", "profile")

    q_b: float
    R_b: float
    covariance: np.ndarray
    residual: float
    profile: EdgeProfile

    def __init__(self, q_b: float, R_b: float, covariance: np.ndarray, residual: float, profile: EdgeProfile):
        self.q_b = q_b
        self.R_b = R_b
        self.covariance = covariance
        self.residual = residual
        self.profile = profile
        self._set_meta({"Borderline": profile.borderline, "N": profile.N, "R_b theory": profile.R_b_theory})

    def __repr__(self):
        return f"<{self.__module__}.{type(self).__qualname__} of q_b={self.q_b:.4g} R_b={self.R_b:.4g} at {hex(id(self))}>"

    @property
    def width(self) -> float:
        """The transition width ``1 / (q_b sqrt(N))``."""
        return 1 / (self.q_b * math.sqrt(self.profile.N))

    @property
    def q_b_stderr(self) -> float:
        return float(math.sqrt(max(self.covariance[0, 0], 0.0)))

    @property
    def R_b_stderr(self) -> float:
        return float(math.sqrt(max(self.covariance[1, 1], 0.0)))

    def model(self, R: Optional[np.ndarray] = None) -> np.ndarray:
        """The fitted ``rho_rad * f`` at the profile's radii."""
        R = self.profile.R if R is None else R
        return self.profile.theory * erfc_form_factor(R, self.profile.N, self.q_b, self.R_b, self.profile.s_b)

    def tabulate(self, dp: Optional[int] = None) -> prettytable.PrettyTable:
        table = prettytable.PrettyTable()
        table.field_names = ["borderline", "q_b", "R_b", "residual", "N"]
        table.add_row([self.profile.borderline, self.q_b, self.R_b, self.residual, self.profile.N])
        table.align = "l"
        if dp is not None:
            table.float_format = f".{dp}"
        return table


################################################################################


def _window(R_b: float, N: int, window: float) -> np.ndarray:
    half = window / math.sqrt(N)
    return np.array([max(R_b - half, 0.0), R_b + half])


def edge_profile(
    samples: Sequence[SpectrumSample],
    model: Union[ModelSpec, ValidatedModel],
    borderline: str = "external",
    window: float = 6.0,
    bins: int = 40,
) -> EdgeProfile:
    """
    Histogram the eigenvalue moduli on ``R_b +- window / sqrt(N)``.

    Parameters
    ----------
    samples : Sequence[SpectrumSample]
        Eigenvalue samples of one matrix size.
    model : ValidatedModel
    borderline : {"external", "internal"}, default="external"
    window : float, default=6.0
        Half-width of the window in units of ``1 / sqrt(N)``.
    bins : int, default=40

    Raises
    ------
    InsufficientWindow
        If an internal borderline is requested of a disk.
    """
    model = model if isinstance(model, ValidatedModel) else validate(model)
    s_b = BORDERLINES[borderline]
    geometry = domain_geometry(model)
    R_b = geometry.R_ext if s_b == 1 else geometry.R_int
    if R_b <= 0:
        raise InsufficientWindow("a disk has no internal borderline", borderline=borderline)
    N = samples[0].n_outer
    lo, hi = _window(R_b, N, window)
    curve = radial_histogram(samples, np.linspace(lo, hi, bins + 1))
    R = curve.centers
    # one pseudo-count
    floor = math.sqrt((1 / curve.total) * (1 - 1 / curve.total)) / curve.widths
    stderr = np.where(curve.counts > 0, curve.stderr, floor)
    theory = radial_density(model, R, extend=True).values
    missing = theory <= 0
    if missing.any():
        logging.warning(
            f"The bulk density could not be continued at {int(missing.sum())} radii; holding the borderline value."
        )
        inside = np.flatnonzero(~missing)
        if not inside.size:
            raise InsufficientWindow("no radius in the window has a bulk density", R_b=R_b, N=N)
        nearest = inside[np.abs(R[inside, None] - R[None, missing]).argmin(axis=0)]
        theory[missing] = theory[nearest]
    return EdgeProfile(R, curve.densities, stderr, theory, s_b, N, R_b)


def synthetic_profile(
    q_b: float,
    R_b: float,
    N: int,
    s_b: int = 1,
    bulk: float = 1.0,
    noise: float = 0.01,
    rng: Optional[np.random.Generator] = None,
    window: float = 6.0,
    bins: int = 40,
) -> EdgeProfile:
    """
    An edge profile drawn from the form-factor over a flat bulk density,
    with Gaussian noise of relative size ``noise``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = _window(R_b, N, window)
    edges = np.linspace(lo, hi, bins + 1)
    R = (edges[1:] + edges[:-1]) / 2
    theory = np.full(bins, float(bulk))
    truth = theory * erfc_form_factor(R, N, q_b, R_b, s_b)
    stderr = noise * np.maximum(truth, 1e-3 * bulk)
    density = truth + stderr * rng.standard_normal(bins)
    return EdgeProfile(R, density, stderr, theory, s_b, N, R_b)


def fit_erfc(profile: EdgeProfile, q_b0: float = 1.0, R_b0: Optional[float] = None) -> ErfcFitResult:
    """
    Weighted least squares of the profile against ``rho_rad * f`` in
    ``(q_b, R_b)`` by Levenberg-Marquardt.

    Parameters
    ----------
    profile : EdgeProfile
    q_b0 : float, default=1.0
    R_b0 : float, optional
        Defaults to the solver's borderline radius.

    Raises
    ------
    InsufficientWindow
        With fewer than :data:`MIN_EDGE_BINS` usable bins.
    FitDiverged

    Examples
    --------
    >>> import burestools as bt
    >>> fit = bt.fit_erfc(bt.synthetic_profile(0.7, 1.0, 256))
    >>> abs(fit.q_b - 0.7) < 0.035
    True
    """
    usable = int((profile.stderr > 0).sum())
    if usable < MIN_EDGE_BINS:
        raise InsufficientWindow(
            f"{usable} usable bins; at least {MIN_EDGE_BINS} are needed", bins=usable, N=profile.N
        )
    keep = profile.stderr > 0
    R, y, se, bulk = profile.R[keep], profile.density[keep], profile.stderr[keep], profile.theory[keep]
    root_n = math.sqrt(profile.N)

    # q_b = exp(theta) keeps it positive
    def residuals(params):
        theta, R_b = params
        f = 0.5 * scipy.special.erfc(math.exp(theta) * profile.s_b * (R - R_b) * root_n)
        return (bulk * f - y) / se

    start = [math.log(q_b0), profile.R_b_theory if R_b0 is None else R_b0]
    try:
        result = scipy.optimize.least_squares(residuals, start, method="lm")
    except (ValueError, OverflowError) as exc:
        raise FitDiverged(str(exc), N=profile.N) from exc
    theta, R_b = result.x
    lo, hi = R.min(), R.max()
    if not result.success or not np.all(np.isfinite(result.x)) or abs(theta) > math.log(1e3) or not lo <= R_b <= hi:
        raise FitDiverged(
            f"the fit ended at q_b = {math.exp(min(theta, 700.0)):.4g}, R_b = {R_b:.4g}: {result.message}",
            N=profile.N,
            window=(float(lo), float(hi)),
        )
    q_b = math.exp(theta)
    dof = max(len(R) - 2, 1)
    chi2 = float(np.sum(result.fun ** 2))
    jac = result.jac
    try:
        covariance = np.linalg.inv(jac.T @ jac) * chi2 / dof
    except np.linalg.LinAlgError:
        covariance = np.full((2, 2), np.nan)
    # from theta to q_b
    scale = np.array([q_b, 1.0])
    covariance = covariance * np.outer(scale, scale)
    residual = math.sqrt(chi2 / len(R))
    logging.info(f"Fitted the {profile.borderline} borderline at N = {profile.N}: q_b = {q_b:.6g}, R_b = {R_b:.6g}.")
    return ErfcFitResult(q_b, float(R_b), covariance, residual, profile)


################################################################################


class EdgeScalingResult(TabularResult):
    """
    Borderline fits across matrix sizes and the regression of the log
    width on ``log N``.

    Not intended to be constructed manually; see :class:`EdgeScalingTest`.

    Attributes
    ----------
    sizes : numpy.ndarray
    fits : List[ErfcFitResult]
    slope, intercept, slope_stderr : float
        Of ``log(width)`` against ``log(N)``; the slope should be -1/2.
    meta : dict
    pretty_meta : str
    """

    __slots__ = ("sizes", "fits", "slope", "intercept", "slope_stderr")

    sizes: np.ndarray
    fits: List[ErfcFitResult]
    slope: float
    intercept: float
    slope_stderr: float

    def __init__(self, fits: Sequence[ErfcFitResult], meta: Optional[dict] = None):
        self.fits = list(fits)
        self.sizes = np.array([f.profile.N for f in self.fits])
        if len(self.fits) >= 2:
            regression = scipy.stats.linregress(np.log(self.sizes), np.log([f.width for f in self.fits]))
            self.slope = float(regression.slope)
            self.intercept = float(regression.intercept)
            self.slope_stderr = float(regression.stderr)
        else:
            self.slope = self.intercept = self.slope_stderr = math.nan
        self._set_meta({**(meta or {}), "Width slope": self.slope, "Slope stderr": self.slope_stderr})

    def __repr__(self):
        return f"<{self.__module__}.{type(self).__qualname__} of N={list(self.sizes)} at {hex(id(self))}>"

    def __eq__(self, other):
        return (
            isinstance(other, EdgeScalingResult)
            and np.array_equal(self.sizes, other.sizes)
            and [(f.q_b, f.R_b) for f in self.fits] == [(f.q_b, f.R_b) for f in other.fits]
        )

    def __getitem__(self, key):
        if isinstance(key, slice):
            return self.__class__(self.fits[key], self.meta)
        if isinstance(key, int):
            return self.fits[key]
        raise NotImplementedError("__getitem__ only supports slices or ints")

    def __len__(self):
        return len(self.fits)

    def copy(self):
        """Copy an instance of EdgeScalingResult."""
        return self.__class__(self.fits, self.meta)

    def tabulate(self, dp: Optional[int] = None) -> prettytable.PrettyTable:
        """
        Create a :class:`prettytable.PrettyTable` with columns
        ``borderline, q_b, R_b, residual, N, width``.
        """
        table = prettytable.PrettyTable()
        table.field_names = ["borderline", "q_b", "R_b", "residual", "N", "width"]
        for f in self.fits:
            table.add_row([f.profile.borderline, f.q_b, f.R_b, f.residual, f.profile.N, f.width])
        table.align = "l"
        if dp is not None:
            table.float_format = f".{dp}"
        return table


class EdgeScalingTest:
    """
    Sample a model at several matrix sizes and fit one borderline at each.

    Parameters
    ----------
    model : ValidatedModel
        Must be square.
    sizes : Sequence[int], default=(128, 256, 512)
    borderline : {"external", "internal"}, default="external"
    seed : int, default=0
    entries : str, default="gaussian"
    window : float, default=6.0
    bins : int, default=40

    Attributes
    ----------
    result : EdgeScalingResult
        Set once :meth:`run` completes or :meth:`generate` is exhausted.
    """

    def __init__(
        self,
        model: Union[ModelSpec, ValidatedModel],
        sizes: Sequence[int] = (128, 256, 512),
        borderline: str = "external",
        seed: int = 0,
        entries: str = "gaussian",
        window: float = 6.0,
        bins: int = 40,
    ):
        self.model = model if isinstance(model, ValidatedModel) else validate(model)
        self.model.require_square()
        if borderline not in BORDERLINES:
            raise ValueError(f"unknown borderline {borderline!r}; expected one of {tuple(BORDERLINES)}")
        self.sizes = list(sizes)
        self.borderline = borderline
        self.seed = seed
        self.entries = entries
        self.window = window
        self.bins = bins

    def __repr__(self):
        return f"<{self.__module__}.{type(self).__qualname__} of {self.model.spec.name or 'model'} at {hex(id(self))}>"

    def run(self, samples: int = DEFAULT_SAMPLES, n_nodes: int = CPU_COUNT) -> EdgeScalingResult:
        """
        Fit every size.

        This is an alias to the :meth:`generate` method and handles the iteration for you.

        Parameters
        ----------
        samples : int, default=:data:`~burestools.utils.DEFAULT_SAMPLES`
            Matrices per size.
        n_nodes : int, default=os.cpu_count()
            The number of CPU cores to distribute work across using Pathos.
        """
        for _ in self.generate(samples, n_nodes):
            pass
        return self.result

    def generate(
        self, samples: int = DEFAULT_SAMPLES, n_nodes: int = CPU_COUNT
    ) -> Generator[ErfcFitResult, None, None]:
        """Yield the fit at each size in turn."""
        fits = []
        for N in self.sizes:
            run = MonteCarloRun(self.model, N, self.seed, self.entries, command="fit-erfc").run(samples, n_nodes)
            profile = edge_profile(run.eigenvalue_samples, self.model, self.borderline, self.window, self.bins)
            fit = fit_erfc(profile)
            fits.append(fit)
            yield fit
        self.result = EdgeScalingResult(
            fits,
            {
                "Model": self.model.spec.name,
                "Borderline": self.borderline,
                "Samples": samples,
                "Seed": self.seed,
                "Entries": self.entries,
            },
        )
