import pytest

import burestools as bt


@pytest.fixture(name="bures", scope="module")
def _bures():
    return bt.validate(bt.bures_model())


@pytest.fixture(name="t_ex1", scope="module")
def _t_ex1():
    return bt.validate(bt.t_example1(1, 2))


@pytest.fixture(name="annulus", scope="module")
def _annulus():
    return bt.validate(bt.t_model([[1, 0.5]]))


@pytest.fixture(name="ginibre", scope="module")
def _ginibre():
    return bt.validate(bt.ginibre_model([1], [1, 1]))


@pytest.fixture(name="bures_run", scope="module")
def _bures_run(bures):
    return bt.MonteCarloRun(bures, n_outer=128, seed=11).run(samples=10, n_nodes=1)


@pytest.fixture(name="bures_document")
def _bures_document():
    return """
[model]
name = "bures"

[[model.factors]]
kind = "cue_sum"
weights = ["0.70710678+0i", "0.70710678+0i"]

[[model.factors]]
kind = "ginibre"
sigma = 1.0
rows = 1
cols = 1

[run]
n = 32
samples = 4
seed = 5
"""
