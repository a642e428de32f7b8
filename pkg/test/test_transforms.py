import math

import numpy as np
import pytest

import burestools as bt


def test_equal_weights_values():
    assert bt.n_cue_equal_weights(0, 2, 1) == 1
    assert bt.n_cue_equal_weights(-1, 3, 0.7) == 0
    assert math.isclose(bt.n_cue_equal_weights(-0.5, 2, 1), 2 / 3)


def test_equal_weights_pole():
    with pytest.raises(bt.PoleHit):
        bt.n_cue_equal_weights(-2, 2, 1)


def test_two_weights_endpoints():
    assert math.isclose(bt.n_cue_two_weights(0, 1, 0.5), 1.25)
    assert math.isclose(bt.n_cue_two_weights(-1, 1, 0.5), 0.75)


def test_two_weights_match_equal_weights():
    w = 1 / math.sqrt(2)
    assert math.isclose(bt.n_cue_two_weights(-0.5, w, w), 2 / 3, rel_tol=1e-12)


def test_two_weights_off_axis_continuation():
    m = -0.4 + 0.3j
    continued = bt.n_cue_two_weights(m, 1, 0.5)
    tracked = bt.n_cue_two_weights(m, 1, 0.5, previous=bt.n_cue_two_weights(m * 0.99, 1, 0.5))
    assert abs(continued - tracked) < 1e-12


def test_general_at_origin():
    result = bt.n_cue_general(0, [1, 0.5, 0.25])
    assert math.isclose(result.value, 1.3125)
    state = result.factor_states[0]
    assert state.C == 0 and all(M == 0 for M in state.M)


@pytest.mark.parametrize("m", [-0.7, -0.2, 0.3 + 0.1j])
def test_general_single_weight(m):
    assert abs(bt.n_cue_general(m, [0.8]).value - 0.64) < 1e-12


def test_general_equal_weights():
    w = 1 / math.sqrt(2)
    assert math.isclose(bt.n_cue_general(-0.5, [w, w]).value, 2 / 3, rel_tol=1e-12)


@pytest.mark.parametrize("m", np.linspace(-0.99, 0, 50))
def test_evaluators_agree(m):
    w = 1 / math.sqrt(2)
    equal = bt.n_cue_equal_weights(m, 2, 1)
    assert abs(bt.n_cue_two_weights(m, w, w) - equal) < 1e-10
    assert abs(bt.n_cue_general(m, [w, w]).value - equal) < 1e-10
    general = bt.n_cue_general(m, [1, 0.5])
    assert abs(general.value - bt.n_cue_two_weights(m, 1, 0.5)) < 1e-10
    assert math.isclose(general.factor_states[0].argument, m, abs_tol=1e-12)


def test_two_weights_positive_axis():
    grid = np.geomspace(1e-3, 1e4, 200)
    value = bt.n_cue_two_weights(grid[0], 1, 0.5)
    for m in grid[1:]:
        value = bt.n_cue_two_weights(m, 1, 0.5, previous=value)
        assert math.isclose(bt.n_cue_two_weights(m, 1, 0.5), value, rel_tol=1e-12)
    # the larger root tends to (|w1| + |w2|)^2
    assert abs(value - 2.25) < 1e-3


@pytest.mark.parametrize("m", [0.5, 3.0, 40.0])
def test_general_positive_axis(m):
    weights = [1, 0.5, 0.25]
    real = bt.n_cue_general(m, weights)
    continued = bt.n_cue_general(complex(m), weights)
    assert abs(real.value - continued.value) < 1e-10
    assert math.isclose(real.factor_states[0].argument, m, rel_tol=1e-12)
    assert real.factor_states[0].C < 0


def test_ginibre_chain():
    assert bt.n_ginibre_chain(1, [(1, 1)]) == 4
    assert bt.n_ginibre_chain(-1, [(1, 1), (1, 2)]) == 0
    assert math.isclose(bt.n_ginibre_chain(1e6, [(1, 1)]) / 1e6, 1, rel_tol=1e-5)
    with pytest.raises(bt.PoleHit):
        bt.n_ginibre_chain(0, [(1, 1)])
    assert bt.n_ginibre_chain(0, [(2, 1)], prefactor=False) == 4


@pytest.mark.parametrize("M", [0.7, 3.0, -0.4 + 0.2j])
def test_ginibre_chain_is_the_composed_transform(M):
    model = bt.validate(bt.ginibre_model([1, 1.5], [2, 3, 1]))
    assert model.s == (2, 3, 1)
    chain = [(1, 2), (1.5, 3)]
    assert abs(bt.compose_singular(M, model) - bt.n_ginibre_chain(M, chain)) < 1e-12 * abs(bt.n_ginibre_chain(M, chain))


def test_compose_eigen(bures):
    assert math.isclose(bt.compose_eigen(0, bures), 1)
    assert bt.compose_eigen(-1, bures) == 0


@pytest.mark.parametrize("m", [-0.8, -0.3, 0.2])
def test_compose_eigen_t_example1(m):
    model = bt.validate(bt.t_example1(2, 3))
    assert math.isclose(bt.compose_eigen(m, model), ((m + 1) / (m / 3 + 1)) ** 2, rel_tol=1e-12)


@pytest.mark.parametrize("M", [0.7, -0.4 + 0.2j])
def test_compose_singular(bures, ginibre, M):
    assert abs(bt.compose_singular(M, bures) - (M + 1) ** 3 / M / (M / 2 + 1)) < 1e-12
    assert abs(bt.compose_singular(M, ginibre) - (M + 1) ** 2 / M) < 1e-12
    assert abs(bt.compose_singular(M, bt.validate(bt.cue_model([1]))) - (M + 1) / M) < 1e-12


def test_compose_singular_pole(bures):
    with pytest.raises(bt.PoleHit):
        bt.compose_singular(0, bures)


def test_composition_derivatives(bures):
    composition = bt.Composition(bures)
    for m in (-0.6, -0.1, 0.4):
        h = 1e-6
        numeric = (composition.eigen(m + h) - composition.eigen(m - h)) / (2 * h)
        assert math.isclose(composition.eigen_derivative(m), numeric, rel_tol=1e-7)
        numeric = (composition.singular(m + h) - composition.singular(m - h)) / (2 * h)
        assert math.isclose(composition.singular_derivative(m), numeric, rel_tol=1e-7)


def test_general_weights_derivative():
    model = bt.validate(bt.t_model([[1, 0.5, 0.25]]))
    composition = bt.Composition(model)
    m = -0.4
    h = 1e-5
    numeric = (composition.eigen(m + h) - composition.eigen(m - h)) / (2 * h)
    assert math.isclose(composition.eigen_derivative(m), numeric, rel_tol=1e-5)


@pytest.mark.parametrize("M", [0.3, 2.0, 1.5 - 0.4j])
def test_general_weights_singular_derivative(M):
    composition = bt.Composition(bt.validate(bt.t_model([[1, 0.5, 0.25]])))
    h = 1e-5
    numeric = (composition.singular(M + h) - composition.singular(M - h)) / (2 * h)
    assert abs(composition.singular_derivative(M) - numeric) < 1e-5 * abs(numeric)


def test_moment_polynomial_is_regular(bures):
    composition = bt.Composition(bures)
    assert math.isclose(composition.moment_polynomial(0), 1.0)
    assert np.isclose(composition.moment_polynomial(0.1), 0.1 * composition.singular(0.1))
