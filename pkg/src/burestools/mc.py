"""
A Monte Carlo laboratory for generalized Bures products: Haar unitary and
Ginibre samplers, finite-size realizations of a model, their spectra, and
the histograms, moments and entropies that are compared with the theory.
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

import functools
import hashlib
import logging
import math
import struct
import zlib
from dataclasses import dataclass, replace
from typing import Generator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pathos.pools
import prettytable
import scipy.linalg
import scipy.special
import scipy.stats
from tqdm import tqdm

from . import CPU_COUNT, BuresError, __version__
from .model import CueSumFactor, ModelSpec, ValidatedModel, validate
from .solver import DomainGeometry, theory_moments
from .utils import DEFAULT_N, DEFAULT_SAMPLES, TabularResult, model_hash

__all__ = [
    "NonIntegerDimension",
    "EigenSolverFailure",
    "DegenerateState",
    "RngStream",
    "SpectrumSample",
    "EmpiricalCurve",
    "MomentTable",
    "ComparisonTable",
    "MonteCarloRun",
    "ENTRY_DISTRIBUTIONS",
    "sample_cue",
    "sample_ginibre",
    "realize_model",
    "structural_zero_count",
    "eigenvalues",
    "singular_spectrum",
    "radial_histogram",
    "value_histogram",
    "compare",
    "moment_check",
    "empirical_moments",
    "von_neumann_entropy",
    "entropy_summary",
    "haar_trace_check",
    "eigenphase_uniformity",
    "angular_uniformity",
    "single_ring_check",
    "write_spectra",
    "read_spectra",
]

ENTRY_DISTRIBUTIONS = ("gaussian", "uniform", "phase")
SPECTRA_MAGIC = b"BURESPEC"
SPECTRA_VERSION = 1
_HEADER = struct.Struct("<8sI32sQQQB")
_RECORD = struct.Struct("<QQ")


class NonIntegerDimension(BuresError):
    """For when a dimension chain scaled to the requested size is not integral."""

    code = "NonIntegerDimension"


class EigenSolverFailure(BuresError):
    """For when the dense eigensolver does not converge; carries the matrix hash."""

    code = "EigenSolverFailure"


class DegenerateState(BuresError):
    """For when a spectrum has no weight to normalize."""

    code = "DegenerateState"


################################################################################


@dataclass(frozen=True)
class RngStream:
    """
    A reproducible random substream.

    Stream ``i`` of a run draws from
    ``SeedSequence(seed, spawn_key=(key, i))``, so every sample depends only
    on the seed, the subcommand key and its own index.

    Attributes
    ----------
    seed : int
    stream_id : int
    key : int
        Subcommand key; see :meth:`for_command`.
    """

    seed: int
    stream_id: int = 0
    key: int = 0

    @classmethod
    def for_command(cls, seed: int, command: str) -> "RngStream":
        """The root stream of a subcommand, keyed by the CRC32 of its name."""
        return cls(seed, 0, zlib.crc32(command.encode("utf-8")))

    def substream(self, stream_id: int) -> "RngStream":
        return replace(self, stream_id=stream_id)

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.key, self.stream_id)))


@dataclass(frozen=True, eq=False)
class SpectrumSample:
    """
    The spectrum of one realization.

    Attributes
    ----------
    values : numpy.ndarray
        Complex eigenvalues, or the nonnegative eigenvalues of ``X^dagger X``.
    n_outer : int
    zero_count : int
        Structural zeros forced by the dimension chain.
    kind : {"eigenvalue", "singular"}
    """

    values: np.ndarray
    n_outer: int
    zero_count: int = 0
    kind: str = "eigenvalue"

    def __post_init__(self):
        assert 0 <= self.zero_count <= len(self.values), "zero_count exceeds the spectrum size"

    def __eq__(self, other):
        return (
            isinstance(other, SpectrumSample)
            and self.kind == other.kind
            and self.n_outer == other.n_outer
            and self.zero_count == other.zero_count
            and np.array_equal(self.values, other.values)
        )

    def nonzero(self) -> np.ndarray:
        """The values with the ``zero_count`` smallest moduli dropped."""
        if not self.zero_count:
            return self.values
        order = np.argsort(np.abs(self.values), kind="stable")
        return self.values[np.sort(order[self.zero_count :])]


################################################################################


def sample_cue(n: int, rng: np.random.Generator, phase_correction: bool = True) -> np.ndarray:
    """
    Draw an ``n x n`` Haar unitary.

    The Q factor of a complex Ginibre matrix has its columns multiplied by
    the phases of R's diagonal. Without that correction the result is not
    Haar distributed.

    Parameters
    ----------
    n : int
    rng : numpy.random.Generator
    phase_correction : bool, default=True

    Examples
    --------
    >>> import numpy as np
    >>> import burestools as bt
    >>> U = bt.sample_cue(8, np.random.default_rng(0))
    >>> np.allclose(U.conj().T @ U, np.eye(8))
    True
    """
    assert n >= 1, "n must be positive"
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2)
    q, r = scipy.linalg.qr(z)
    if phase_correction:
        d = np.diagonal(r)
        q = q * (d / np.abs(d))
    return q


def sample_ginibre(
    rows: int, cols: int, sigma: float, rng: np.random.Generator, entries: str = "gaussian"
) -> np.ndarray:
    """
    Draw a ``rows x cols`` Ginibre matrix with ``E|a|^2 = sigma^2 / sqrt(rows cols)``.

    Parameters
    ----------
    rows, cols : int
    sigma : float
    rng : numpy.random.Generator
    entries : {"gaussian", "uniform", "phase"}, default="gaussian"
        ``uniform`` draws the real and imaginary parts uniformly and
        ``phase`` draws a fixed modulus with a uniform phase, both with the
        Gaussian's variance.
    """
    assert rows >= 1 and cols >= 1, "dimensions must be positive"
    assert sigma > 0, "sigma must be positive"
    scale = sigma / math.sqrt(2 * math.sqrt(rows * cols))
    shape = (rows, cols)
    if entries == "gaussian":
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    if entries == "uniform":
        width = math.sqrt(3) * scale
        return rng.uniform(-width, width, shape) + 1j * rng.uniform(-width, width, shape)
    if entries == "phase":
        return math.sqrt(2) * scale * np.exp(2j * math.pi * rng.random(shape))
    raise ValueError(f"unknown entry distribution {entries!r}; expected one of {ENTRY_DISTRIBUTIONS}")


def _integral_dimensions(model: ValidatedModel, n_outer: int) -> List[int]:
    dims = model.dimensions(n_outer)
    bad = [str(d) for d in dims if d.denominator != 1]
    if bad:
        raise NonIntegerDimension(
            f"dimension chain at n = {n_outer} is not integral: {[str(d) for d in dims]}",
            n_outer=n_outer,
            dimensions=[str(d) for d in dims],
        )
    return [int(d) for d in dims]


def structural_zero_count(model: Union[ModelSpec, ValidatedModel], n_outer: int) -> int:
    """Zeros of ``X^dagger X`` forced by the narrowest dimension, ``n_outer - min(dims)``."""
    model = model if isinstance(model, ValidatedModel) else validate(model)
    return n_outer - min(_integral_dimensions(model, n_outer))


def realize_model(
    model: Union[ModelSpec, ValidatedModel],
    n_outer: int,
    rng: np.random.Generator,
    entries: str = "gaussian",
    return_factors: bool = False,
):
    """
    Draw every factor of a model independently, left to right, and multiply.

    Parameters
    ----------
    model : ValidatedModel
    n_outer : int
        The final column dimension.
    rng : numpy.random.Generator
    entries : str, default="gaussian"
        Entry distribution of the Ginibre factors.
    return_factors : bool, default=False
        Also return the drawn factor matrices; CUE sums are returned as the
        list of their unitaries.

    Raises
    ------
    NonIntegerDimension
    """
    model = model if isinstance(model, ValidatedModel) else validate(model)
    dims = _integral_dimensions(model, n_outer)
    matrices, drawn = [], []
    for i, factor in enumerate(model.factors):
        if isinstance(factor, CueSumFactor):
            unitaries = [sample_cue(dims[i], rng) for _ in factor.weights]
            drawn.append(unitaries)
            matrices.append(sum(w * U for w, U in zip(factor.weights, unitaries)))
        else:
            A = sample_ginibre(dims[i], dims[i + 1], factor.sigma, rng, entries)
            drawn.append(A)
            matrices.append(A)
    X = functools.reduce(np.matmul, matrices)
    return (X, drawn) if return_factors else X


def _matrix_hash(matrix: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(matrix).tobytes()).hexdigest()


def eigenvalues(matrix: np.ndarray, zero_count: int = 0) -> SpectrumSample:
    """
    All eigenvalues of a square matrix from the dense non-Hermitian solver.

    Raises
    ------
    EigenSolverFailure
    """
    assert matrix.shape[0] == matrix.shape[1], "eigenvalues need a square matrix"
    try:
        values = scipy.linalg.eigvals(matrix)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverFailure(str(exc), matrix_hash=_matrix_hash(matrix)) from exc
    return SpectrumSample(values, matrix.shape[0], zero_count, "eigenvalue")


def singular_spectrum(matrix: np.ndarray, zero_count: int = 0) -> SpectrumSample:
    """
    The eigenvalues ``mu_i`` of ``X^dagger X`` from the Hermitian solver,
    clipped at zero.
    """
    values = scipy.linalg.eigvalsh(matrix.conj().T @ matrix)
    return SpectrumSample(np.maximum(values, 0.0), matrix.shape[1], zero_count, "singular")


################################################################################


class EmpiricalCurve(TabularResult):
    """
    A normalized histogram of pooled spectra.

    Not intended to be constructed manually; see :func:`radial_histogram`
    and :func:`value_histogram`.

    Attributes
    ----------
    bin_edges : numpy.ndarray
    densities : numpy.ndarray
        ``count / (total * width)``, where ``total`` includes the zero modes.
    stderr : numpy.ndarray
        Binomial standard errors of the densities.
    counts : numpy.ndarray
    total : int
    alpha_hat : float
        Empirical fraction of structural zeros.
    kind : {"radial", "value"}
    meta : dict
    pretty_meta : str
    """

    __slots__ = ("bin_edges", "densities", "stderr", "counts", "total", "alpha_hat", "kind")

    bin_edges: np.ndarray
    densities: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    total: int
    alpha_hat: float
    kind: str

    def __init__(self, bin_edges, counts, total: int, zeros: int, kind: str, meta: Optional[dict] = None):
        self.bin_edges = np.asarray(bin_edges, dtype=float)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.total = int(total)
        self.alpha_hat = zeros / total
        self.kind = kind
        widths = np.diff(self.bin_edges)
        p = self.counts / total
        self.densities = p / widths
        self.stderr = np.sqrt(p * (1 - p) / total) / widths
        self._set_meta(meta or {})

    def __repr__(self):
        return f"<{self.__module__}.{type(self).__qualname__} of {len(self.counts)} bins at {hex(id(self))}>"

    def __eq__(self, other):
        return (
            isinstance(other, EmpiricalCurve)
            and self.total == other.total
            and np.array_equal(self.bin_edges, other.bin_edges)
            and np.array_equal(self.counts, other.counts)
        )

    def __getitem__(self, key):
        if isinstance(key, int):
            return self.bin_edges[key], self.bin_edges[key + 1], self.densities[key]
        raise NotImplementedError("__getitem__ only supports int")

    def copy(self):
        """Copy an instance of EmpiricalCurve."""
        zeros = round(self.alpha_hat * self.total)
        return self.__class__(self.bin_edges.copy(), self.counts.copy(), self.total, zeros, self.kind, self.meta)

    @property
    def centers(self) -> np.ndarray:
        return (self.bin_edges[1:] + self.bin_edges[:-1]) / 2

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    def mass(self) -> float:
        """Histogram mass plus the zero fraction; 1 when the bins cover every nonzero value."""
        return float((self.densities * self.widths).sum() + self.alpha_hat)

    def tabulate(self, dp: Optional[int] = None) -> prettytable.PrettyTable:
        """
        Create a :class:`prettytable.PrettyTable` with columns
        ``bin_lo, bin_hi, density, stderr``.

        Parameters
        ----------
        dp : int, optional
            The decimal places to use.
        """
        table = prettytable.PrettyTable()
        table.add_column("bin_lo", [float(x) for x in self.bin_edges[:-1]])
        table.add_column("bin_hi", [float(x) for x in self.bin_edges[1:]])
        table.add_column("density", [float(x) for x in self.densities])
        table.add_column("stderr", [float(x) for x in self.stderr])
        table.align = "l"
        if dp is not None:
            table.float_format = f".{dp}"
        return table


def _histogram(samples: Sequence[SpectrumSample], bins, values_of, kind: str) -> EmpiricalCurve:
    assert len(samples) >= 1, "need at least one sample"
    pooled = np.concatenate([values_of(s.nonzero()) for s in samples])
    total = sum(len(s.values) for s in samples)
    zeros = sum(s.zero_count for s in samples)
    if np.ndim(bins) == 0:
        upper = float(pooled.max()) if len(pooled) else 1.0
        bins = np.linspace(0.0, upper * (1 + 1e-9) or 1.0, int(bins) + 1)
    counts, edges = np.histogram(pooled, bins=bins)
    empty = int((counts == 0).sum())
    if empty:
        logging.warning(f"EmptyBins: {empty} of {len(counts)} bins have no counts.")
    meta = {
        "Samples": len(samples),
        "Values": total,
        "Zero modes": zeros,
        "Outside bins": len(pooled) - int(counts.sum()),
    }
    return EmpiricalCurve(edges, counts, total, zeros, kind, meta)


def radial_histogram(samples: Sequence[SpectrumSample], bins: Union[int, Sequence[float]] = 50) -> EmpiricalCurve:
    """
    Histogram of the eigenvalue moduli, normalized to ``1 - alpha_hat``.

    Structural zeros are left out of the bins and reported as
    :attr:`EmpiricalCurve.alpha_hat`.

    Parameters
    ----------
    samples : Sequence[SpectrumSample]
    bins : int or Sequence[float], default=50
        A number of equal bins from 0 to the largest modulus, or the edges.
    """
    return _histogram(samples, bins, np.abs, "radial")


def value_histogram(samples: Sequence[SpectrumSample], bins: Union[int, Sequence[float]] = 50) -> EmpiricalCurve:
    """Histogram of the eigenvalues of ``X^dagger X``; see :func:`radial_histogram`."""
    return _histogram(samples, bins, np.real, "value")


################################################################################


class ComparisonTable(TabularResult):
    """
    An empirical histogram joined with the bin-averaged theory.

    Attributes
    ----------
    empirical : EmpiricalCurve
    theory : numpy.ndarray
    z : numpy.ndarray
        ``(density - theory) / stderr``, 0 where both agree exactly.
    masked : numpy.ndarray
        Bins within the edge window of a support edge.
    within : numpy.ndarray
        Whether each bin is within ``max(rel_tol * theory, sigmas * stderr)``.
    """

    __slots__ = ("empirical", "theory", "z", "masked", "within")

    def __init__(
        self,
        empirical: EmpiricalCurve,
        theory: Sequence[float],
        edges: Sequence[float] = (),
        edge_bins: int = 3,
        rel_tol: float = 0.05,
        sigmas: float = 3.0,
    ):
        self.empirical = empirical
        self.theory = np.asarray(theory, dtype=float)
        assert len(self.theory) == len(empirical.densities), "one theory value per bin"
        gap = np.abs(empirical.densities - self.theory)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.z = np.where(empirical.stderr > 0, (empirical.densities - self.theory) / empirical.stderr, 0.0)
        window = edge_bins * float(empirical.widths.max())
        centers = empirical.centers
        self.masked = np.zeros(len(centers), dtype=bool)
        for edge in edges:
            self.masked |= np.abs(centers - edge) < window
        self.within = gap <= np.maximum(rel_tol * self.theory, sigmas * empirical.stderr)
        self._set_meta(
            {
                **empirical.meta,
                "Edges": ";".join(f"{e:.12g}" for e in edges),
                "Masked bins": int(self.masked.sum()),
                "Failing bins": int((~self.within & ~self.masked).sum()),
            }
        )

    def __repr__(self):
        return f"<{self.__module__}.{type(self).__qualname__} of {len(self.theory)} bins at {hex(id(self))}>"

    @property
    def agrees(self) -> bool:
        """Whether every unmasked bin is within tolerance."""
        return bool(np.all(self.within | self.masked))

    def tabulate(self, dp: Optional[int] = None) -> prettytable.PrettyTable:
        table = self.empirical.tabulate()
        table.add_column("theory", [float(x) for x in self.theory])
        table.add_column("z", [float(x) for x in self.z])
        table.add_column("masked", [int(x) for x in self.masked])
        if dp is not None:
            table.float_format = f".{dp}"
        return table


def compare(
    empirical: EmpiricalCurve, theory: Sequence[float], edges: Sequence[float] = (), edge_bins: int = 3
) -> ComparisonTable:
    """
    Join a histogram with theory bin averages, with per-bin z-scores and a
    mask over the bins within ``edge_bins`` bin widths of any support edge.
    """
    return ComparisonTable(empirical, theory, edges, edge_bins)


################################################################################


class MomentTable(TabularResult):
    """
    Empirical and theoretical moments ``m_n = E (1/N) Tr (X^dagger X)^n``.

    Attributes
    ----------
    orders : numpy.ndarray
    empirical, stderr, theory : numpy.ndarray
    """

    __slots__ = ("orders", "empirical", "stderr", "theory")

    def __init__(self, empirical, stderr, theory, meta: Optional[dict] = None):
        self.empirical = np.asarray(empirical, dtype=float)
        self.stderr = np.asarray(stderr, dtype=float)
        self.theory = np.asarray(theory, dtype=float)
        self.orders = np.arange(1, len(self.theory) + 1)
        self._set_meta(meta or {})

    def __repr__(self):
        return f"<{self.__module__}.{type(self).__qualname__} of {len(self.orders)} moments at {hex(id(self))}>"

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.stderr > 0, (self.empirical - self.theory) / self.stderr, 0.0)

    def tabulate(self, dp: Optional[int] = None) -> prettytable.PrettyTable:
        table = prettytable.PrettyTable()
        table.add_column("n", [int(n) for n in self.orders])
        table.add_column("empirical", [float(x) for x in self.empirical])
        table.add_column("stderr", [float(x) for x in self.stderr])
        table.add_column("theory", [float(x) for x in self.theory])
        table.add_column("z", [float(x) for x in self.z])
        table.align = "l"
        if dp is not None:
            table.float_format = f".{dp}"
        return table


def moment_check(
    model: Union[ModelSpec, ValidatedModel],
    n_max: int = 4,
    samples: int = 1000,
    n_outer: int = 64,
    seed: int = 0,
    entries: str = "gaussian",
    n_nodes: int = 1,
) -> MomentTable:
    """
    Compare ``(1/N) Tr (X^dagger X)^n`` averaged over samples with the
    moments from :func:`~burestools.solver.theory_moments`.

    Examples
    --------
    >>> import burestools as bt
    >>> table = bt.moment_check(bt.ginibre_model([1], [1, 1]), n_max=2, samples=200)
    >>> [float(x) for x in table.theory.round(10)]
    [1.0, 2.0]
    """
    model = model if isinstance(model, ValidatedModel) else validate(model)
    run = MonteCarloRun(model, n_outer, seed, entries, command="moments")
    run.run(samples, n_nodes)
    empirical, stderr = empirical_moments(run.singular_samples, n_max)
    meta = {"Model": model.spec.name, "N": n_outer, "Samples": samples, "Seed": seed}
    return MomentTable(empirical, stderr, theory_moments(model, n_max), meta)


def empirical_moments(samples: Sequence[SpectrumSample], n_max: int = 4) -> Tuple[np.ndarray, np.ndarray]:
    """The sample means of ``(1/N) sum mu_i^n`` for ``n = 1..n_max`` and their standard errors."""
    powers = np.array([[np.sum(s.values ** n) / s.n_outer for n in range(1, n_max + 1)] for s in samples])
    empirical = powers.mean(axis=0)
    stderr = powers.std(axis=0, ddof=1) / math.sqrt(len(powers)) if len(powers) > 1 else np.zeros(n_max)
    return empirical, stderr


def von_neumann_entropy(sample: SpectrumSample) -> float:
    """
    ``-sum p_i log p_i`` in nats with ``p_i = mu_i / sum mu``.

    Raises
    ------
    DegenerateState
        If every ``mu_i`` is zero.

    Examples
    --------
    >>> import numpy as np
    >>> import burestools as bt
    >>> round(bt.von_neumann_entropy(bt.SpectrumSample(np.ones(4), 4, kind="singular")), 12) == round(np.log(4), 12)
    True
    """
    mu = np.maximum(np.real(sample.values), 0.0)
    norm = mu.sum()
    if norm <= 0:
        raise DegenerateState("the spectrum has no weight", n_outer=sample.n_outer)
    return float(scipy.special.entr(mu / norm).sum())


def entropy_summary(samples: Sequence[SpectrumSample]) -> Tuple[float, float]:
    """Mean von Neumann entropy and its standard error."""
    values = np.array([von_neumann_entropy(s) for s in samples])
    se = values.std(ddof=1) / math.sqrt(len(values)) if len(values) > 1 else 0.0
    return float(values.mean()), float(se)


################################################################################


def haar_trace_check(
    n: int = 64, samples: int = 10_000, seed: int = 0, phase_correction: bool = True
) -> Tuple[float, float]:
    """
    The mean of ``|Tr U|^2`` over Haar samples and its standard error; the
    exact value is 1.
    """
    stream = RngStream.for_command(seed, "haar-trace")
    traces = np.array(
        [abs(np.trace(sample_cue(n, stream.substream(i).generator(), phase_correction))) ** 2 for i in range(samples)]
    )
    return float(traces.mean()), float(traces.std(ddof=1) / math.sqrt(samples))


def eigenphase_uniformity(
    n: int = 64, samples: int = 200, seed: int = 0, phase_correction: bool = True
) -> float:
    """The KS p-value of pooled eigenphases against the uniform law on ``[0, 2 pi)``."""
    stream = RngStream.for_command(seed, "haar-phases")
    phases = np.concatenate(
        [
            np.angle(scipy.linalg.eigvals(sample_cue(n, stream.substream(i).generator(), phase_correction)))
            for i in range(samples)
        ]
    )
    return float(scipy.stats.kstest(np.mod(phases, 2 * math.pi) / (2 * math.pi), "uniform").pvalue)


def angular_uniformity(samples: Sequence[SpectrumSample], bins: int = 32) -> float:
    """The chi-squared p-value of the eigenvalue arguments against uniformity."""
    angles = np.concatenate([np.angle(s.nonzero()) for s in samples])
    counts, _ = np.histogram(angles, bins=bins, range=(-math.pi, math.pi))
    return float(scipy.stats.chisquare(counts).pvalue)


def single_ring_check(samples: Sequence[SpectrumSample], geometry: DomainGeometry, width: float = 5.0) -> int:
    """
    The number of nonzero eigenvalues outside
    ``[R_int - width / sqrt(N), R_ext + width / sqrt(N)]``.
    """
    outside = 0
    for s in samples:
        margin = width / math.sqrt(s.n_outer)
        moduli = np.abs(s.nonzero())
        outside += int(((moduli < geometry.R_int - margin) | (moduli > geometry.R_ext + margin)).sum())
    return outside


################################################################################


def write_spectra(path: str, samples: Sequence[SpectrumSample], hash_hex: str, seed: int):
    """
    Persist spectra as flat little-endian records.

    The header is the magic ``BURESPEC``, the format version (u32), the
    32-byte model hash, N (u64), the seed (u64), the sample count (u64) and
    the kind (u8: 0 eigenvalues, 1 singular). Each record is the zero count
    and the number of values (u64 each) followed by float64 values,
    interleaved real and imaginary parts for eigenvalues.
    """
    assert samples, "nothing to write"
    kind = samples[0].kind
    assert all(s.kind == kind for s in samples), "samples must share a kind"
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(
                SPECTRA_MAGIC,
                SPECTRA_VERSION,
                bytes.fromhex(hash_hex),
                samples[0].n_outer,
                seed,
                len(samples),
                0 if kind == "eigenvalue" else 1,
            )
        )
        for s in samples:
            f.write(_RECORD.pack(s.zero_count, len(s.values)))
            if kind == "eigenvalue":
                data = np.column_stack([s.values.real, s.values.imag]).astype("<f8")
            else:
                data = np.asarray(s.values, dtype="<f8")
            f.write(data.tobytes())


def read_spectra(path: str) -> Tuple[dict, List[SpectrumSample]]:
    """
    Read a file written by :func:`write_spectra`.

    Returns
    -------
    Tuple[dict, List[SpectrumSample]]
        The header fields and the samples.
    """
    with open(path, "rb") as f:
        raw = f.read()
    magic, version, digest, n_outer, seed, count, kind = _HEADER.unpack_from(raw, 0)
    if magic != SPECTRA_MAGIC:
        raise ValueError(f"{path} is not a spectra file")
    if version != SPECTRA_VERSION:
        raise ValueError(f"unsupported spectra version {version}")
    header = {"version": version, "model_hash": digest.hex(), "n_outer": n_outer, "seed": seed, "count": count}
    kind = "eigenvalue" if kind == 0 else "singular"
    offset = _HEADER.size
    samples = []
    for _ in range(count):
        zeros, length = _RECORD.unpack_from(raw, offset)
        offset += _RECORD.size
        width = 2 * length if kind == "eigenvalue" else length
        data = np.frombuffer(raw, dtype="<f8", count=width, offset=offset).astype(float)
        offset += 8 * width
        values = data[0::2] + 1j * data[1::2] if kind == "eigenvalue" else data
        samples.append(SpectrumSample(values, n_outer, zeros, kind))
    return header, samples


################################################################################


class MonteCarloRun:
    """
    Sampling of a model's spectra at one matrix size.

    Sample ``i`` draws from its own substream, so the result depends only on
    the seed and the sample count, never on the number of workers.

    Parameters
    ----------
    model : ValidatedModel
    n_outer : int, default=:data:`~burestools.utils.DEFAULT_N`
    seed : int, default=0
    entries : str, default="gaussian"
    command : str, default="mc"
        Keys the substreams; see :meth:`RngStream.for_command`.

    Attributes
    ----------
    eigenvalue_samples : List[SpectrumSample]
        Empty for non-square models.
    singular_samples : List[SpectrumSample]
    meta : dict

    Examples
    --------
    >>> import burestools as bt
    >>> run = bt.MonteCarloRun(bt.bures_model(), n_outer=16, seed=1)
    >>> len(run.run(samples=3, n_nodes=1).singular_samples)
    3
    """

    model: ValidatedModel
    n_outer: int
    seed: int
    entries: str
    stream: RngStream
    zero_count: int
    eigenvalue_samples: List[SpectrumSample]
    singular_samples: List[SpectrumSample]
    meta: dict

    def __init__(
        self,
        model: Union[ModelSpec, ValidatedModel],
        n_outer: int = DEFAULT_N,
        seed: int = 0,
        entries: str = "gaussian",
        command: str = "mc",
    ):
        if entries not in ENTRY_DISTRIBUTIONS:
            raise ValueError(f"unknown entry distribution {entries!r}; expected one of {ENTRY_DISTRIBUTIONS}")
        self.model = model if isinstance(model, ValidatedModel) else validate(model)
        self.n_outer = n_outer
        self.seed = seed
        self.entries = entries
        self.stream = RngStream.for_command(seed, command)
        self.zero_count = structural_zero_count(self.model, n_outer)
        self.eigenvalue_samples = []
        self.singular_samples = []

    def __repr__(self):
        return f"<{self.__module__}.{type(self).__qualname__} of {self.model.spec.name or 'model'} at N={self.n_outer} at {hex(id(self))}>"

    def draw(self, i: int) -> Tuple[Optional[SpectrumSample], SpectrumSample]:
        """The spectra of sample ``i``."""
        X = realize_model(self.model, self.n_outer, self.stream.substream(i).generator(), self.entries)
        eigen = eigenvalues(X, self.zero_count) if self.model.is_square else None
        return eigen, singular_spectrum(X, self.zero_count)

    def run(self, samples: int = DEFAULT_SAMPLES, n_nodes: int = CPU_COUNT, progress: bool = False) -> "MonteCarloRun":
        """
        Draw every sample.

        This is an alias to the :meth:`generate` method and handles the iteration for you.

        Parameters
        ----------
        samples : int, default=:data:`~burestools.utils.DEFAULT_SAMPLES`
        n_nodes : int, default=os.cpu_count()
            The number of CPU cores to distribute work across using Pathos.
        progress : bool, default=False
            Show a tqdm progress bar.

        Returns
        -------
        MonteCarloRun
            ``self``, with the samples stored.
        """
        for _ in self.generate(samples, n_nodes, progress):
            pass
        return self

    def generate(
        self, samples: int = DEFAULT_SAMPLES, n_nodes: int = CPU_COUNT, progress: bool = False
    ) -> Generator[Tuple[Optional[SpectrumSample], SpectrumSample], None, None]:
        """
        Draw the samples, yielding each pair of spectra in sample order.

        The samples are stored to :attr:`eigenvalue_samples` and
        :attr:`singular_samples` once the generator is exhausted.
        """
        assert samples >= 1, "need at least one sample"
        pool = pathos.pools.ProcessPool(nodes=n_nodes) if n_nodes > 1 else None
        try:
            pairs = pool.imap(self.draw, range(samples)) if pool else map(self.draw, range(samples))
            if progress:
                pairs = tqdm(pairs, total=samples, desc=f"N={self.n_outer}")
            eigen, singular = [], []
            for pair in pairs:
                if pair[0] is not None:
                    eigen.append(pair[0])
                singular.append(pair[1])
                yield pair
        finally:
            if pool is not None:
                pool.close()
                pool.join()
                pool.clear()
        self.eigenvalue_samples = eigen
        self.singular_samples = singular
        self.meta = {
            "Model": self.model.spec.name,
            "Model hash": model_hash(self.model),
            "N": self.n_outer,
            "Samples": samples,
            "Seed": self.seed,
            "Entries": self.entries,
            "Version": __version__,
        }
