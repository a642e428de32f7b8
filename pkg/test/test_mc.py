import math
import os
import tempfile
from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg

import burestools as bt


def test_cue_is_unitary():
    U = bt.sample_cue(16, np.random.default_rng(3))
    assert np.allclose(U.conj().T @ U, np.eye(16), atol=1e-12)


def test_haar_trace():
    mean, se = bt.haar_trace_check(n=64, samples=10_000, seed=1)
    assert abs(mean - 1) < 3 * se


def test_haar_trace_fails_without_phase_correction():
    mean, se = bt.haar_trace_check(n=64, samples=10_000, seed=1, phase_correction=False)
    assert abs(mean - 1) > 3 * se


def test_eigenphases_uniform():
    assert bt.eigenphase_uniformity(n=64, samples=200, seed=2) > 0.01


def test_ginibre_variance():
    A = bt.sample_ginibre(200, 50, 2.0, np.random.default_rng(4))
    assert A.shape == (200, 50)
    assert math.isclose(np.mean(np.abs(A) ** 2), 4 / math.sqrt(200 * 50), rel_tol=0.05)


@pytest.mark.parametrize("entries", ["uniform", "phase"])
def test_ginibre_entry_distributions(entries):
    A = bt.sample_ginibre(100, 100, 1.0, np.random.default_rng(5), entries)
    assert math.isclose(np.mean(np.abs(A) ** 2), 1 / 100, rel_tol=0.05)


def test_unknown_entries():
    with pytest.raises(ValueError):
        bt.sample_ginibre(2, 2, 1.0, np.random.default_rng(0), "cauchy")


def test_ginibre_spectral_radius():
    A = bt.sample_ginibre(512, 512, 1.0, np.random.default_rng(6))
    radius = np.max(np.abs(bt.eigenvalues(A).values))
    assert abs(radius - 1) < 5 / math.sqrt(512)


def test_realize_bures_replays_factors(bures):
    rng = np.random.default_rng(7)
    X, (unitaries, A) = bt.realize_model(bures, 4, rng, return_factors=True)
    assert np.allclose(X, (unitaries[0] + unitaries[1]) @ A / math.sqrt(2), atol=1e-12)


def test_realize_t_matches_manual_product():
    model = bt.validate(bt.t_example1(2, 2))
    X, (first, second) = bt.realize_model(model, 8, np.random.default_rng(8), return_factors=True)
    w = 1 / math.sqrt(2)
    manual = (w * first[0] + w * first[1]) @ (w * second[0] + w * second[1])
    assert np.allclose(X, manual, atol=1e-12)
    again = bt.realize_model(model, 8, np.random.default_rng(8))
    assert np.array_equal(X, again)


def test_bottleneck_zero_modes():
    model = bt.validate(bt.w_model([[0.5 ** 0.5] * 2], [1, 1], [1, Fraction(1, 2), 1]))
    X = bt.realize_model(model, 512, np.random.default_rng(9))
    mu = bt.singular_spectrum(X).values
    assert np.sum(mu < 1e-10 * mu.max()) >= 256
    assert bt.structural_zero_count(model, 512) == 256


def test_non_integer_dimension():
    model = bt.validate(bt.w_model([[0.5 ** 0.5] * 2], [1, 1], [1, Fraction(1, 2), 1]))
    with pytest.raises(bt.NonIntegerDimension):
        bt.realize_model(model, 5, np.random.default_rng(0))


def test_cue_spectra():
    U = bt.sample_cue(32, np.random.default_rng(10))
    assert np.allclose(np.abs(bt.eigenvalues(U).values), 1, atol=1e-10)
    assert np.allclose(bt.singular_spectrum(U).values, 1, atol=1e-10)


def test_triangular_eigenvalues():
    T = np.triu(np.arange(1, 17, dtype=complex).reshape(4, 4))
    assert np.allclose(np.sort(bt.eigenvalues(T).values.real), [1, 6, 11, 16])


def test_zero_column_adds_zero_mode():
    X = bt.sample_ginibre(8, 8, 1.0, np.random.default_rng(11))
    padded = np.hstack([X, np.zeros((8, 1))])
    count = np.sum(bt.singular_spectrum(X).values < 1e-12)
    assert np.sum(bt.singular_spectrum(padded).values < 1e-12) == count + 1


def test_bures_edge_band(bures_run):
    for sample in bures_run.eigenvalue_samples:
        assert abs(np.max(np.abs(sample.values)) - 1) < 5 / math.sqrt(sample.n_outer)


def test_single_cue_histogram():
    U = bt.sample_cue(64, np.random.default_rng(12))
    curve = bt.radial_histogram([bt.eigenvalues(U)], np.linspace(0.05, 2.05, 21))
    assert curve.counts[9] == 64 and curve.counts.sum() == 64


def test_histogram_mass(bures_run):
    curve = bt.radial_histogram(bures_run.eigenvalue_samples, 30)
    assert math.isclose(curve.mass(), 1, rel_tol=1e-12)
    assert curve.alpha_hat == 0
    curve = bt.value_histogram(bures_run.singular_samples, 30)
    assert math.isclose(curve.mass(), 1, rel_tol=1e-12)


def test_zero_modes_excluded_from_bins():
    model = bt.validate(bt.w_model([[0.5 ** 0.5] * 2], [1, 1], [1, Fraction(1, 2), 1]))
    run = bt.MonteCarloRun(model, n_outer=64, seed=3).run(samples=4, n_nodes=1)
    curve = bt.radial_histogram(run.eigenvalue_samples, 20)
    assert curve.alpha_hat == 0.5
    assert math.isclose(curve.mass(), 1, rel_tol=1e-12)


def test_standard_errors_scale(bures):
    small = bt.MonteCarloRun(bures, n_outer=128, seed=4).run(samples=8, n_nodes=1)
    large = bt.MonteCarloRun(bures, n_outer=128, seed=4).run(samples=32, n_nodes=1)
    edges = np.linspace(0, 1, 11)
    ratio = bt.radial_histogram(large.eigenvalue_samples, edges).stderr / bt.radial_histogram(
        small.eigenvalue_samples, edges
    ).stderr
    assert np.all(np.abs(ratio[2:8] - 0.5) < 0.1)


def test_run_is_independent_of_workers(bures):
    serial = bt.MonteCarloRun(bures, n_outer=16, seed=5).run(samples=4, n_nodes=1)
    parallel = bt.MonteCarloRun(bures, n_outer=16, seed=5).run(samples=4, n_nodes=2)
    assert serial.singular_samples == parallel.singular_samples
    assert serial.eigenvalue_samples == parallel.eigenvalue_samples


def test_generate_yields_in_order(bures):
    run = bt.MonteCarloRun(bures, n_outer=16, seed=6)
    pairs = list(run.generate(samples=3, n_nodes=1))
    assert [p[1] for p in pairs] == run.singular_samples


def test_substreams_differ():
    stream = bt.RngStream.for_command(0, "mc")
    a = stream.substream(0).generator().random()
    b = stream.substream(1).generator().random()
    c = bt.RngStream.for_command(0, "compare").generator().random()
    assert len({a, b, c}) == 3
    assert a == bt.RngStream.for_command(0, "mc").generator().random()


@pytest.mark.parametrize("name", ["bures", "ginibre"])
def test_moments(name, request):
    model = request.getfixturevalue(name)
    table = bt.moment_check(model, n_max=2, samples=200, n_outer=64, seed=8)
    assert np.all(np.abs(table.empirical - table.theory) < 3 * table.stderr)
    assert table.to_df().columns.tolist() == ["n", "empirical", "stderr", "theory", "z"]


def test_single_cue_moments():
    table = bt.moment_check(bt.cue_model([1]), n_max=3, samples=3, n_outer=16)
    assert np.allclose(table.empirical, 1, atol=1e-10)
    assert np.allclose(table.theory, 1, atol=1e-10)


def test_entropy():
    flat = bt.SpectrumSample(np.ones(8), 8, kind="singular")
    assert math.isclose(bt.von_neumann_entropy(flat), math.log(8))
    pure = bt.SpectrumSample(np.array([0, 0, 3.0]), 3, kind="singular")
    assert bt.von_neumann_entropy(pure) == 0
    with pytest.raises(bt.DegenerateState):
        bt.von_neumann_entropy(bt.SpectrumSample(np.zeros(3), 3, kind="singular"))


def test_entropy_summary(bures_run):
    mean, se = bt.entropy_summary(bures_run.singular_samples)
    assert 0 < mean < math.log(128) and se > 0


def test_angular_uniformity(bures_run):
    assert bt.angular_uniformity(bures_run.eigenvalue_samples) > 0.01


def test_single_ring(bures_run, bures):
    assert bt.single_ring_check(bures_run.eigenvalue_samples, bt.domain_geometry(bures)) == 0


def test_compare_table(bures_run, bures):
    empirical = bt.radial_histogram(bures_run.eigenvalue_samples, 20)
    theory = np.diff(bt.radial_cumulative(bures, empirical.bin_edges)) / empirical.widths
    table = bt.compare(empirical, theory, [0.0, 1.0])
    assert table.masked[0] and not table.masked[8]
    assert table.to_df().columns.tolist()[-3:] == ["theory", "z", "masked"]


def test_spectra_files(bures_run, bures):
    with tempfile.TemporaryDirectory() as folder:
        path = os.path.join(folder, "spectra.bin")
        digest = bt.model_hash(bures)
        bt.write_spectra(path, bures_run.eigenvalue_samples, digest, 11)
        with open(path, "rb") as f:
            assert f.read(8) == b"BURESPEC"
        header, samples = bt.read_spectra(path)
    assert header["model_hash"] == digest and header["seed"] == 11 and header["count"] == 10
    assert samples == bures_run.eigenvalue_samples


def test_eigen_solver_failure():
    with pytest.raises(bt.EigenSolverFailure) as info:
        bt.eigenvalues(np.full((3, 3), np.nan))
    assert len(info.value.details["matrix_hash"]) == 64


def _bin_average(model, bin_edges, points=8):
    widths = np.diff(bin_edges)
    x = (bin_edges[:-1, None] + widths[:, None] * ((np.arange(points) + 0.5) / points)[None, :]).ravel()
    return bt.singular_density(model, x, check=False).values.reshape(len(widths), points).mean(axis=1)


AGREEMENT_MODELS = {
    "bures": bt.bures_model(),
    "t_example2": bt.t_model([[1, 1], [1, 0.5]]),
    "w_example1": bt.w_model([[0.5 ** 0.5] * 2], [1, 1], [1, 2, 1]),
    "v_two_blocks": bt.v_model(
        [bt.w_model([[0.6 / math.sqrt(2)] * 2], [1], [1, 1]), bt.w_model([[1 / math.sqrt(2)] * 2], [2], [1, 1])]
    ),
}


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(AGREEMENT_MODELS))
def test_bulk_agrees_with_theory(name):
    model = bt.validate(AGREEMENT_MODELS[name])
    run = bt.MonteCarloRun(model, n_outer=512, seed=2021, command="compare").run(samples=40)
    # 20 bins hold about a thousand values each over 40 samples
    geometry = bt.domain_geometry(model)
    empirical = bt.radial_histogram(run.eigenvalue_samples, 20)
    theory = np.diff(bt.radial_cumulative(model, empirical.bin_edges)) / empirical.widths
    radial = bt.compare(empirical, theory, sorted({0.0, geometry.R_int, geometry.R_ext}))
    assert radial.agrees, radial.prettify(dp=4)
    empirical = bt.value_histogram(run.singular_samples, 20)
    singular = bt.compare(empirical, _bin_average(model, empirical.bin_edges), [0.0, bt.singular_upper_edge(model)])
    assert singular.agrees, singular.prettify(dp=4)
