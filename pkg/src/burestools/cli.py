"""
The BuresTools command line: model documents, run configuration and the
``theory``, ``mc``, ``compare``, ``fit-erfc`` and ``oracle`` subcommands.

Every subcommand writes plain CSV files with ``#``-prefixed metadata into
the output directory, together with a ``manifest.json`` listing the
resolved configuration and the sha256 of every file it wrote.
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

import argparse
import cmath
import dataclasses
import hashlib
import json
import logging
import math
import os
import re
import sys
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import prettytable
import tomli

from . import CPU_COUNT, BuresError, __version__
from .fit import EdgeScalingTest
from .mc import (
    ENTRY_DISTRIBUTIONS,
    MomentTable,
    MonteCarloRun,
    compare,
    empirical_moments,
    entropy_summary,
    radial_histogram,
    value_histogram,
    write_spectra,
)
from .model import CueSumFactor, ExampleForm, GinibreFactor, ModelSpec, ModelTag, ValidatedModel, validate
from .solver import (
    bures_closed_form,
    domain_geometry,
    marchenko_pastur_closed_form,
    normalization,
    radial_cumulative,
    radial_density,
    singular_density,
    singular_upper_edge,
    t_example1_closed_form,
    theory_moments,
)
from .utils import DEFAULT_N, DEFAULT_SAMPLES, TabularResult, model_hash, parse_grid

__all__ = [
    "ParseError",
    "UsageError",
    "RunConfig",
    "COMMANDS",
    "parse_weight",
    "parse_model_document",
    "load_document",
    "run",
    "main",
]

COMMANDS = ("theory", "mc", "compare", "fit-erfc", "oracle")

_NUMBER = r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_WEIGHT = re.compile(
    rf"^(?P<re>[+-]?{_NUMBER})(?:(?P<sign>[+-])(?P<im>{_NUMBER})?i)?$|^(?P<pure>[+-]?(?:{_NUMBER})?)i$"
)
_TOML_POSITION = re.compile(r"line (\d+), column (\d+)")


class ParseError(BuresError):
    """For a model document that does not follow the grammar; carries ``line`` and ``column``."""

    code = "ParseError"

    def __init__(self, message: str = "", line: int = 1, column: int = 1, **details):
        super().__init__(f"{message} (at line {line}, column {column})", line=line, column=column, **details)
        self.line = line
        self.column = column


class UsageError(BuresError):
    """For a request the command line cannot honour."""

    code = "UsageError"


################################################################################


def _locate(text: str, needle: str) -> Tuple[int, int]:
    index = text.find(needle)
    if index < 0:
        return 1, 1
    line = text.count("\n", 0, index) + 1
    return line, index - (text.rfind("\n", 0, index) + 1) + 1


def parse_weight(token, text: str = "") -> complex:
    """
    Parse a weight: a TOML number or an ``a+bi`` string such as ``"1"``,
    ``"0.5-0.25i"`` or ``"2i"``.

    Parameters
    ----------
    token : str or float
    text : str, optional
        The whole document, to locate a bad token.

    Raises
    ------
    ParseError

    Examples
    --------
    >>> import burestools as bt
    >>> bt.parse_weight("0.5-0.25i")
    (0.5-0.25j)
    """
    if isinstance(token, (int, float)) and not isinstance(token, bool):
        return complex(token)
    if isinstance(token, str):
        match = _WEIGHT.match(token.replace(" ", ""))
        if match:
            if match.group("re") is not None:
                imag = 0.0
                if match.group("sign"):
                    imag = float(match.group("im") or 1.0) * (-1 if match.group("sign") == "-" else 1)
                return complex(float(match.group("re")), imag)
            pure = match.group("pure")
            return complex(0.0, float(pure + "1" if pure in ("", "+", "-") else pure))
    line, column = _locate(text, f'"{token}"' if isinstance(token, str) else str(token))
    raise ParseError(f"bad weight token {token!r}; expected a+bi", line, column, token=str(token))


def _ratio(value, name: str, text: str) -> Fraction:
    try:
        return Fraction(str(value))
    except (ValueError, ZeroDivisionError):
        line, column = _locate(text, f"{name} = {value}")
        raise ParseError(f"{name} must be a number, got {value!r}", line, column) from None


def _parse_factor(factor, index: int, text: str):
    if not isinstance(factor, dict):
        raise ParseError(f"factor {index} is not a table", *_locate(text, "[[model.factors]]"))
    kind = factor.get("kind")
    if kind == CueSumFactor.kind:
        weights = factor.get("weights")
        if not isinstance(weights, list):
            raise ParseError(f"cue_sum factor {index} needs a weights list", *_locate(text, "cue_sum"))
        size = factor.get("size")
        return CueSumFactor(
            tuple(parse_weight(w, text) for w in weights),
            None if size is None else _ratio(size, "size", text),
        )
    if kind == GinibreFactor.kind:
        missing = [key for key in ("rows", "cols") if key not in factor]
        if missing:
            raise ParseError(f"ginibre factor {index} is missing {missing}", *_locate(text, "ginibre"))
        return GinibreFactor(
            factor.get("sigma", 1.0), _ratio(factor["rows"], "rows", text), _ratio(factor["cols"], "cols", text)
        )
    raise ParseError(
        f"factor {index} has unknown kind {kind!r}; expected 'cue_sum' or 'ginibre'",
        *_locate(text, f'"{kind}"'),
    )


def _load_toml(text: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        match = _TOML_POSITION.search(str(exc))
        line, column = (int(match.group(1)), int(match.group(2))) if match else (1, 1)
        raise ParseError(str(exc).split(" (at")[0], line, column) from exc


def parse_model_document(text: str) -> ModelSpec:
    """
    Parse a TOML model document.

    The ``[model]`` table has an optional ``name`` and an ordered array of
    ``[[model.factors]]`` tables, each either
    ``kind = "cue_sum"`` with ``weights`` (and optionally ``size``) or
    ``kind = "ginibre"`` with ``sigma``, ``rows`` and ``cols``.

    Raises
    ------
    ParseError
    ValidationError
        Forwarded from :func:`~burestools.model.validate`.

    Examples
    --------
    >>> import burestools as bt
    >>> spec = bt.parse_model_document('''
    ... [[model.factors]]
    ... kind = "cue_sum"
    ... weights = ["0.70710678+0i", "0.70710678+0i"]
    ... [[model.factors]]
    ... kind = "ginibre"
    ... sigma = 1.0
    ... rows = 1
    ... cols = 1
    ... ''')
    >>> bt.validate(spec).tag
    <ModelTag.W: 'W'>
    """
    document = _load_toml(text)
    model = document.get("model")
    if not isinstance(model, dict):
        raise ParseError("missing [model] table", 1, 1)
    factors = model.get("factors", [])
    if not isinstance(factors, list):
        raise ParseError("model.factors must be an array of tables", *_locate(text, "factors"))
    spec = ModelSpec(tuple(_parse_factor(f, i, text) for i, f in enumerate(factors)), str(model.get("name", "")))
    validate(spec)
    return spec


def load_document(path: str) -> Tuple[ModelSpec, dict]:
    """Read a model document from disk; returns the model and its ``[run]`` table."""
    with open(path, "rb") as f:
        raw = f.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("the document is not UTF-8", 1, exc.start + 1) from exc
    spec = parse_model_document(text)
    table = _load_toml(text).get("run", {})
    return spec, table if isinstance(table, dict) else {}


################################################################################


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """
    A fully resolved run: flags first, then the document's ``[run]`` table,
    then the defaults.
    """

    command: str
    model_path: str
    out: str
    grid: str = "default"
    n: int = DEFAULT_N
    samples: int = DEFAULT_SAMPLES
    seed: int = 0
    workers: int = CPU_COUNT
    entries: str = "gaussian"
    bins: int = 50
    sizes: Tuple[int, ...] = (128, 256, 512)
    borderline: str = "external"
    n_max: int = 4

    @classmethod
    def resolve(cls, args: argparse.Namespace, table: Optional[dict] = None) -> "RunConfig":
        table = table or {}
        values = {}
        for field in dataclasses.fields(cls):
            flag = getattr(args, field.name, None)
            if flag is not None:
                values[field.name] = flag
            elif field.name in table:
                values[field.name] = table[field.name]
        if isinstance(values.get("sizes"), (str, list)):
            sizes = values["sizes"]
            values["sizes"] = tuple(int(s) for s in (sizes.split(",") if isinstance(sizes, str) else sizes))
        config = cls(**values)
        config.check()
        return config

    def check(self):
        """
        Raises
        ------
        UsageError
        """
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}", command=self.command)
        if self.samples < 1:
            raise UsageError(f"at least one sample is needed, got {self.samples}", samples=self.samples)
        if self.n < 1:
            raise UsageError(f"the matrix size must be positive, got {self.n}", n=self.n)
        if not 0 <= self.seed < 2 ** 64:
            raise UsageError(f"the seed must be an unsigned 64-bit integer, got {self.seed}", seed=self.seed)
        if self.workers < 1:
            raise UsageError(f"at least one worker is needed, got {self.workers}", workers=self.workers)
        if self.entries not in ENTRY_DISTRIBUTIONS:
            raise UsageError(f"unknown entry distribution {self.entries!r}", entries=self.entries)
        if self.bins < 1:
            raise UsageError(f"at least one bin is needed, got {self.bins}", bins=self.bins)
        if not 1 <= self.n_max < 64:
            raise UsageError(f"n_max must lie in [1, 63], got {self.n_max}", n_max=self.n_max)
        if self.borderline not in ("external", "internal") or not self.sizes:
            raise UsageError("fit-erfc needs a borderline and at least one size", borderline=self.borderline)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["sizes"] = list(self.sizes)
        return out


class _Output:
    # the output directory and the hashes of what has been written to it

    def __init__(self, path: str):
        self.path = path
        self.artifacts: Dict[str, str] = {}
        os.makedirs(path, exist_ok=True)

    def write(self, name: str, data):
        data = data.encode("utf-8") if isinstance(data, str) else data
        with open(os.path.join(self.path, name), "wb") as f:
            f.write(data)
        self.artifacts[name] = hashlib.sha256(data).hexdigest()
        logging.info(f"Wrote {name}.")

    def table(self, name: str, result: TabularResult, meta: Optional[dict] = None):
        if meta:
            result._set_meta({**meta, **result.meta})
        self.write(name, result.to_csv())

    def binary(self, name: str, writer, *args):
        path = os.path.join(self.path, name)
        writer(path, *args)
        with open(path, "rb") as f:
            self.artifacts[name] = hashlib.sha256(f.read()).hexdigest()


def _json(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2, default=str) + "\n"


################################################################################


def _theory(config: RunConfig, model: ValidatedModel, out: _Output, meta: dict) -> dict:
    checks = {}
    if model.is_square:
        geometry = domain_geometry(model)
        R = parse_grid(config.grid, upper=geometry.R_ext)
        curve = radial_density(model, R)
        out.table("theory_eigenvalue.csv", curve, meta)
        checks["eigenvalue_normalization"] = list(normalization(model, "eigenvalue"))
        checks["geometry"] = dataclasses.asdict(geometry)
    x = parse_grid(config.grid, upper=singular_upper_edge(model))
    curve = singular_density(model, x[x > 0])
    out.table("theory_singular.csv", curve, meta)
    checks["singular_flags"] = {key: len(value) for key, value in curve.flags.items()}
    return checks


def _mc(config: RunConfig, model: ValidatedModel, out: _Output, meta: dict) -> dict:
    mc = MonteCarloRun(model, config.n, config.seed, config.entries, command=config.command)
    mc.run(config.samples, config.workers, progress=logging.getLogger().isEnabledFor(logging.INFO))
    meta = {**meta, **mc.meta}
    if mc.eigenvalue_samples:
        out.table("mc_radial.csv", radial_histogram(mc.eigenvalue_samples, config.bins), meta)
        out.binary("spectra_eigenvalue.bin", write_spectra, mc.eigenvalue_samples, meta["Model hash"], config.seed)
    out.table("mc_singular.csv", value_histogram(mc.singular_samples, config.bins), meta)
    out.binary("spectra_singular.bin", write_spectra, mc.singular_samples, meta["Model hash"], config.seed)
    empirical, stderr = empirical_moments(mc.singular_samples, config.n_max)
    out.table("mc_moments.csv", MomentTable(empirical, stderr, theory_moments(model, config.n_max)), meta)
    entropy, entropy_se = entropy_summary(mc.singular_samples)
    return {"entropy": entropy, "entropy_stderr": entropy_se}


def _singular_bin_average(model: ValidatedModel, edges: np.ndarray, points: int = 8) -> np.ndarray:
    widths = np.diff(edges)
    offsets = (np.arange(points) + 0.5) / points
    x = (edges[:-1, None] + widths[:, None] * offsets[None, :]).ravel()
    return singular_density(model, x, check=False).values.reshape(len(widths), points).mean(axis=1)


def _compare(config: RunConfig, model: ValidatedModel, out: _Output, meta: dict) -> dict:
    mc = MonteCarloRun(model, config.n, config.seed, config.entries, command=config.command)
    mc.run(config.samples, config.workers, progress=logging.getLogger().isEnabledFor(logging.INFO))
    meta = {**meta, **mc.meta}
    checks = {}
    if mc.eigenvalue_samples:
        geometry = domain_geometry(model)
        empirical = radial_histogram(mc.eigenvalue_samples, config.bins)
        cumulative = radial_cumulative(model, empirical.bin_edges)
        theory = np.diff(cumulative) / empirical.widths
        table = compare(empirical, theory, sorted({0.0, geometry.R_int, geometry.R_ext}))
        out.table("compare_radial.csv", table, meta)
        checks["radial_agrees"] = table.agrees
    empirical = value_histogram(mc.singular_samples, config.bins)
    table = compare(empirical, _singular_bin_average(model, empirical.bin_edges), [0.0, singular_upper_edge(model)])
    out.table("compare_singular.csv", table, meta)
    checks["singular_agrees"] = table.agrees
    return checks


def _fit(config: RunConfig, model: ValidatedModel, out: _Output, meta: dict) -> dict:
    test = EdgeScalingTest(model, config.sizes, config.borderline, config.seed, config.entries)
    result = test.run(config.samples, config.workers)
    out.table("fit_erfc.csv", result, meta)
    return {"width_slope": result.slope, "width_slope_stderr": result.slope_stderr}


class _OracleCurve(TabularResult):
    __slots__ = ("columns", "grid", "values")

    def __init__(self, columns: Sequence[str], grid: np.ndarray, values: np.ndarray, meta: dict):
        self.columns = list(columns)
        self.grid = grid
        self.values = values
        self._set_meta(meta)

    def tabulate(self, dp: Optional[int] = None) -> prettytable.PrettyTable:
        table = prettytable.PrettyTable()
        table.add_column(self.columns[0], [float(v) for v in self.grid])
        table.add_column(self.columns[1], [float(v) for v in self.values])
        if dp is not None:
            table.float_format = f".{dp}"
        return table


def _equal_cue_weights(model: ValidatedModel) -> Optional[complex]:
    weights = {w for f in model.factors for w in f.weights}
    first = next(iter(weights))
    if all(cmath.isclose(w, first, rel_tol=1e-7) for w in weights) and len({f.L for f in model.factors}) == 1:
        return first
    return None


def _oracle(config: RunConfig, model: ValidatedModel, out: _Output, meta: dict) -> dict:
    factors = model.factors
    if model.tag in (ModelTag.S, ModelTag.T) and _equal_cue_weights(model) is not None:
        J, L = len(factors), factors[0].L
        w = (_equal_cue_weights(model) * math.sqrt(L)) ** J
        R = parse_grid(config.grid, upper=abs(w))
        curve = _OracleCurve(("R", "rho_rad"), R, t_example1_closed_form(R, J, L, w), {"Oracle": "T-Example-1"})
    elif (
        model.tag == ModelTag.W
        and len(factors) == 2
        and model.model_class.example_forms == (ExampleForm.EQUAL_WEIGHTS,)
        and factors[0].L == 2
        and math.isclose(factors[0].total_weight, 1.0, rel_tol=1e-7)
        and math.isclose(factors[1].sigma, 1.0)
        and model.s == (1, 1, 1)
    ):
        x = parse_grid(config.grid, upper=3 * math.sqrt(3))
        curve = _OracleCurve(("x", "rho"), x, bures_closed_form(x), {"Oracle": "Bures"})
    elif model.tag == ModelTag.P and len(factors) == 1:
        r, sigma = float(model.s[0]), factors[0].sigma
        x = parse_grid(config.grid, upper=sigma ** 2 * math.sqrt(r) * (1 + math.sqrt(1 / r)) ** 2)
        curve = _OracleCurve(("x", "rho"), x, marchenko_pastur_closed_form(x, r, sigma), {"Oracle": "Marchenko-Pastur"})
    else:
        raise UsageError("the model has no closed-form oracle", tag=model.tag.value)
    out.table("oracle.csv", curve, meta)
    return {}


_HANDLERS = {"theory": _theory, "mc": _mc, "compare": _compare, "fit-erfc": _fit, "oracle": _oracle}


def run(config: RunConfig, spec: ModelSpec) -> Dict[str, str]:
    """
    Run one subcommand and write its outputs and manifest.

    Returns
    -------
    Dict[str, str]
        The sha256 of every file written, manifest excluded.
    """
    config.check()
    model = validate(spec)
    digest = model_hash(model)
    meta = {"Model": model.spec.name, "Model hash": digest, "Seed": config.seed, "Grid": config.grid}
    out = _Output(config.out)
    checks = _HANDLERS[config.command](config, model, out, meta)
    manifest = {
        "version": __version__,
        "command": config.command,
        "config": config.to_dict(),
        "model": model.to_dict(),
        "model_hash": digest,
        "artifacts": dict(sorted(out.artifacts.items())),
        "checks": checks,
    }
    out.write("manifest.json", _json(manifest))
    return out.artifacts


################################################################################


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burestools", description="Densities of generalized Bures products, in theory and by Monte Carlo."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--model", required=True, dest="model_path", help="TOML model document")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--n", type=int, help="final column dimension of sampled matrices")
    parser.add_argument("--samples", type=int)
    parser.add_argument("--grid", help="'default' or lin:a:b:n / log:a:b:n joined with '+'")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--entries", choices=ENTRY_DISTRIBUTIONS)
    parser.add_argument("--bins", type=int)
    parser.add_argument("--sizes", help="comma-separated matrix sizes for fit-erfc")
    parser.add_argument("--borderline", choices=("external", "internal"))
    parser.add_argument("--n-max", type=int, dest="n_max")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point of the ``burestools`` command.

    Returns
    -------
    int
        0 on success, 2 on usage and parse errors, 1 on any other error.
    """
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        spec, table = load_document(args.model_path)
        config = RunConfig.resolve(args, table)
    except UsageError as exc:
        logging.error(f"{exc.code}: {exc}")
        return 2
    except (ParseError, OSError) as exc:
        logging.error(f"{getattr(exc, 'code', 'ParseError')}: {exc}")
        _diagnose(args.out, exc)
        return 2
    except BuresError as exc:
        logging.error(f"{exc.code}: {exc}")
        _diagnose(args.out, exc)
        return 1
    try:
        run(config, spec)
    except UsageError as exc:
        logging.error(f"{exc.code}: {exc}")
        return 2
    except BuresError as exc:
        logging.error(f"{exc.code}: {exc}")
        _diagnose(config.out, exc)
        return 1
    return 0


def _diagnose(path: str, exc: Exception):
    os.makedirs(path, exist_ok=True)
    body = {
        "code": getattr(exc, "code", type(exc).__name__),
        "message": str(exc),
        "details": getattr(exc, "details", {}),
    }
    with open(os.path.join(path, "diagnostics.json"), "w", encoding="utf-8") as f:
        f.write(_json(body))


if __name__ == "__main__":
    sys.exit(main())
