from fractions import Fraction
import math

import numpy as np
import pytest

import burestools as bt


def test_solve_radial_t_example1(t_ex1):
    solutions = bt.solve_radial(t_ex1, [1, 1 / math.sqrt(2)])
    assert solutions[0].m_value == 0
    assert math.isclose(solutions[1].m_value, -2 / 3, rel_tol=1e-12)


def test_radial_density_t_example1(t_ex1):
    curve = bt.radial_density(t_ex1, [0.5, 1.0, 1.5])
    assert np.allclose(curve.values, [0.5 / 0.875 ** 2, 4.0, 0.0], rtol=1e-10)
    assert curve.kind == bt.DensityCurve.EIGENVALUE


@pytest.mark.parametrize("J, L, w", [(1, 2, 1), (2, 3, 1), (3, 2, 0.5)])
def test_t_example1_closed_form(J, L, w):
    R = np.linspace(0.02, 0.98, 49) * w
    curve = bt.radial_density(bt.t_example1(J, L, w), R)
    assert np.max(np.abs(curve.values - bt.t_example1_closed_form(R, J, L, w))) < 1e-8


def test_t_example1_closed_form_support():
    assert bt.t_example1_closed_form(1.0, 1, 2) == 4
    assert bt.t_example1_closed_form(1.2, 1, 2) == 0
    near_zero = bt.t_example1_closed_form(np.array([1e-6, 1e-4]), 2, 2)
    assert math.isclose(near_zero[0], near_zero[1], rel_tol=1e-3)


def test_integer_ratio_closed_form():
    model = bt.validate(bt.w_model([[1]], [1, 1], [1, 1, 1]))
    R = np.linspace(0.1, 0.9, 9)
    curve = bt.radial_density(model, R)
    assert np.allclose(curve.values, bt.integer_ratio_closed_form(R, 2), rtol=1e-8)
    assert np.allclose(curve.m_values, R - 1, atol=1e-12)


def test_finite_difference_agrees(t_ex1):
    R = np.linspace(0.1, 0.9, 9)
    analytic = bt.radial_density(t_ex1, R)
    numeric = bt.radial_density(t_ex1, R, method="finite_difference")
    assert np.allclose(analytic.values, numeric.values, rtol=1e-5)


def test_extended_density_is_flagged(bures):
    curve = bt.radial_density(bures, [0.5, 1.05, 1.1], extend=True)
    assert curve.flags["Extended"] == (1, 2)
    assert np.all(curve.values > 0)


def test_radial_cumulative(t_ex1):
    R = np.array([0.0, 0.5, 1.0, 2.0])
    cumulative = bt.radial_cumulative(t_ex1, R)
    assert np.allclose(cumulative[[0, 2, 3]], [0, 1, 1], atol=1e-12)
    assert 0 < cumulative[1] < 1


def test_annulus_geometry(annulus):
    geometry = bt.domain_geometry(annulus)
    assert math.isclose(geometry.R_ext ** 2, 1.25, abs_tol=1e-10)
    assert math.isclose(geometry.R_int ** 2, 0.75, abs_tol=1e-10)
    assert geometry.d is None and not geometry.is_disk


def test_bures_geometry(bures):
    geometry = bt.domain_geometry(bures)
    assert math.isclose(geometry.R_ext, 1, abs_tol=1e-10)
    assert geometry.R_int == 0 and geometry.d == 2 and geometry.is_disk


def test_w_example2_geometry():
    geometry = bt.domain_geometry(bt.w_model([[1, 0.5]], [1.5], [1, 1]))
    assert math.isclose(geometry.R_ext ** 2, 1.5 ** 2 * 1.25, abs_tol=1e-10)
    assert geometry.R_int == 0


def test_v_geometry():
    first = bt.w_model([[0.6 / math.sqrt(2)] * 2], [1], [1, 1])
    second = bt.w_model([[1 / math.sqrt(2)] * 2], [2], [1, 1])
    geometry = bt.domain_geometry(bt.v_model([first, second]))
    assert math.isclose(geometry.R_ext, 1.2, abs_tol=1e-10)


def test_closed_form_radii_match(bures, annulus):
    for model in (bures, annulus, bt.validate(bt.t_example1(3, 2, 0.5))):
        geometry = bt.domain_geometry(model)
        R_ext, R_int = bt.closed_form_radii(model)
        assert math.isclose(R_ext, geometry.R_ext, abs_tol=1e-10)
        assert math.isclose(R_int, geometry.R_int, abs_tol=1e-10)


def test_eigenvalue_normalization(t_ex1, annulus):
    for model in (t_ex1, annulus):
        integral, expected = bt.normalization(model)
        assert math.isclose(integral, expected, abs_tol=1e-6)


@pytest.mark.parametrize("J", [2, 3])
def test_scaling_relation(J):
    assert bt.scaling_relation_check(bt.t_example1(J, 2), np.linspace(0.05, 0.95, 19)) < 1e-8


def test_scaling_relation_single_factor(t_ex1):
    assert bt.scaling_relation_check(t_ex1, [0.3, 0.6]) == 0


def test_not_square_radial():
    with pytest.raises(bt.NotSquare):
        bt.radial_density(bt.ginibre_model([1], [2, 1]), [0.5])


def test_bures_oracle(bures):
    x = np.linspace(0.05, 5.19, 200)
    curve = bt.singular_density(bures, x)
    assert np.max(np.abs(curve.values - bt.bures_closed_form(x))) < 1e-6


def test_bures_upper_edge(bures):
    assert math.isclose(bt.singular_upper_edge(bures), 3 * math.sqrt(3), abs_tol=1e-6)


def test_bures_closed_form_values():
    assert bt.bures_closed_form(3 * math.sqrt(3)) == 0
    assert math.isclose(bt.bures_closed_form(1.0), 0.20772, abs_tol=1e-5)
    assert bt.bures_closed_form(6.0) == 0


def test_bures_normalization(bures):
    x = bt.default_grid(3 * math.sqrt(3))
    curve = bt.singular_density(bures, x)
    assert math.isclose(curve.meta["Integral"], 1, abs_tol=2e-2)


def test_marchenko_pastur(ginibre):
    x = np.linspace(0.05, 3.9, 100)
    curve = bt.singular_density(ginibre, x)
    assert np.max(np.abs(curve.values - bt.marchenko_pastur_closed_form(x))) < 1e-6


def test_rectangular_marchenko_pastur():
    model = bt.validate(bt.ginibre_model([1], [2, 1]))
    edge = bt.singular_upper_edge(model)
    assert math.isclose(edge, math.sqrt(2) * (1 + math.sqrt(0.5)) ** 2, rel_tol=1e-8)
    x = np.linspace(0.3, 0.95 * edge, 50)
    curve = bt.singular_density(model, x)
    assert np.max(np.abs(curve.values - bt.marchenko_pastur_closed_form(x, 2))) < 1e-6


def test_single_cue_is_ambiguous():
    with pytest.raises(bt.SupportEdgeAmbiguity):
        bt.singular_density(bt.cue_model([1]), [0.5, 1.0])


def test_singular_grid_must_be_positive(bures):
    with pytest.raises(ValueError):
        bt.singular_density(bures, [0.0, 1.0])


def test_divergence_slopes(bures):
    R = np.geomspace(1e-4, 1e-2, 20)
    curve = bt.radial_density(bt.t_example1(3, 2), R)
    slope = np.polyfit(np.log(R), np.log(curve.values), 1)[0]
    assert abs(slope + 1 / 3) < 0.02
    curve = bt.singular_density(bures, R)
    slope = np.polyfit(np.log(R), np.log(curve.values), 1)[0]
    assert abs(slope + 2 / 3) < 0.02


def test_theory_moments(bures, ginibre):
    assert np.allclose(bt.theory_moments(bures, 2), [1.0, 2.5], atol=1e-10)
    assert np.allclose(bt.theory_moments(ginibre, 3), [1.0, 2.0, 5.0], atol=1e-10)


def test_conjecture_residual(bures):
    assert bt.conjecture_residual(bures, [0.5, 1.0, 2.0, 4.0]) < 1e-8


def test_density_curve_container(t_ex1):
    curve = bt.radial_density(t_ex1, np.linspace(0.1, 0.9, 5))
    assert curve.copy() == curve
    assert len(curve[1:3]) == 2
    assert curve.to_df().columns.tolist() == ["R", "m_value", "rho_rad"]
    assert curve.to_csv().startswith("# Model,")


T_EXAMPLE2 = bt.t_model([[1, 1], [1, 0.5]])
W_EXAMPLE2 = bt.w_model([[1, 0.5]], [1.5], [1, 1])
W_UNIT_CHAIN = bt.w_model([[0.5 ** 0.5] * 2], [1, 1], [1, 1, 1])
V_TWO_BLOCKS = bt.v_model(
    [bt.w_model([[0.6 / math.sqrt(2)] * 2], [1], [1, 1]), bt.w_model([[1 / math.sqrt(2)] * 2], [2], [1, 1])]
)


@pytest.mark.parametrize("spec", [T_EXAMPLE2, W_EXAMPLE2], ids=["T", "W"])
def test_two_weight_singular_density(spec):
    model = bt.validate(spec)
    edge = bt.singular_upper_edge(model)
    assert 0 < edge < 20
    curve = bt.singular_density(model, bt.default_grid(edge))
    assert math.isclose(curve.meta["Integral"], 1, abs_tol=2e-2)
    assert np.all(curve.values >= 0)
    assert np.all(np.isfinite(curve.values))


def test_general_weight_upper_edge():
    model = bt.validate(bt.t_model([[1, 0.5, 0.25]]))
    assert abs(bt.singular_upper_edge(model) - 2.804) < 5e-3


@pytest.mark.slow
def test_general_weight_singular_density():
    model = bt.validate(bt.t_model([[1, 0.5, 0.25]]))
    curve = bt.singular_density(model, bt.default_grid(bt.singular_upper_edge(model)))
    assert math.isclose(curve.meta["Integral"], 1, abs_tol=2e-2)


def test_w_example2_five_sums_solves_or_reports():
    model = bt.validate(bt.w_model([[1, 0.5]] * 5, [1.5], [1, 1]))
    try:
        edge = bt.singular_upper_edge(model)
        curve = bt.singular_density(model, bt.default_grid(edge))
    except bt.BuresError as exc:
        assert exc.code in {
            "NoUpperBranch",
            "SupportEdgeAmbiguity",
            "ContinuationStall",
            "BranchLoss",
            "BranchCollision",
            "PoleHit",
        }
        assert exc.details
        return
    assert math.isclose(curve.meta["Integral"], 1, abs_tol=2e-2)
    assert np.all(curve.values >= 0)


def test_roots_solve_the_offset_relation(bures):
    x = np.linspace(0.2, 5.0, 40)
    curve = bt.singular_density(bures, x)
    for xi, M in zip(x, curve.m_values):
        z = complex(xi, bt.IMAG_OFFSET)
        assert abs(bt.compose_singular(M, bures) - z) < 1e-9
        assert ((M + 1) / z).imag <= 0


def test_herglotz_flip_lands_on_the_offset(bures):
    problem = bt.solver._SingularProblem(bures)
    x = 1.0
    z = complex(x, problem.epsilon)
    physical = complex(bt.singular_density(bures, [x]).m_values[0])
    assert ((physical + 1) / z).imag < 0
    mirror = problem._newton(z, physical.conjugate())
    assert ((mirror + 1) / z).imag > 0
    flipped = problem._herglotz(mirror, x)
    assert problem.flips == 1
    assert abs(bt.compose_singular(flipped, bures) - z) < 1e-11
    assert abs(flipped - physical) < 1e-6


@pytest.mark.parametrize(
    "spec,d", [(T_EXAMPLE2, 1), (W_UNIT_CHAIN, 3), (V_TWO_BLOCKS, 4)], ids=["T", "W", "V"]
)
def test_radial_divergence_slopes(spec, d):
    model = bt.validate(spec)
    assert bt.divergence_exponent(model) == d
    R = np.geomspace(1e-4, 1e-2, 20)
    curve = bt.radial_density(model, R)
    slope = np.polyfit(np.log(R), np.log(curve.values), 1)[0]
    assert abs(slope + (d - 2) / d) < 0.03


@pytest.mark.parametrize("m", np.linspace(-0.95, 0, 12))
def test_family_reductions(m):
    weights = [[1, 0.5], [0.5 ** 0.5] * 2]
    w = bt.w_model(weights, [1.5], [1, 1])
    single_block = bt.validate(bt.v_model([w]))
    assert single_block.tag is bt.ModelTag.W
    assert bt.compose_eigen(m, single_block) == bt.compose_eigen(m, bt.validate(w))
    assert bt.domain_geometry(single_block) == bt.domain_geometry(bt.validate(w))
    bare = bt.validate(bt.w_model(weights, [], [1]))
    assert bare.tag is bt.ModelTag.T
    assert math.isclose(bt.compose_eigen(m, bare), bt.compose_eigen(m, bt.validate(bt.t_model(weights))), rel_tol=1e-12)


@pytest.mark.parametrize("r", [Fraction(3, 4), Fraction(1, 2), Fraction(1, 4)])
def test_cumulative_starts_at_zero_mode_fraction(r):
    model = bt.validate(bt.w_model([[0.5 ** 0.5] * 2], [1, 1], [1, r, 1]))
    cumulative = bt.radial_cumulative(model, [0.0, 0.25, 0.5, 2.0])
    assert math.isclose(cumulative[0], 1 - r, abs_tol=1e-12)
    assert cumulative[-1] == 1
    assert np.all(np.diff(cumulative) >= 0)
