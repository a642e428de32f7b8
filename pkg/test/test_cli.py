import argparse
import hashlib
import json
import os

import numpy as np
import pandas as pd
import pytest

import burestools as bt


def _write(directory, text, name="model.toml"):
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def _read(path):
    return pd.read_csv(path, comment="#")


@pytest.mark.parametrize(
    "token,value",
    [("1", 1), ("0.5-0.25i", 0.5 - 0.25j), ("2i", 2j), ("-i", -1j), ("1+i", 1 + 1j), (0.5, 0.5), ("1e-1", 0.1)],
)
def test_parse_weight(token, value):
    assert bt.parse_weight(token) == value


def test_parse_bures_document(bures_document):
    model = bt.validate(bt.parse_model_document(bures_document))
    assert model.spec.name == "bures"
    assert model.tag is bt.ModelTag.W
    assert model.model_class.example_forms == (bt.ExampleForm.EQUAL_WEIGHTS,)


def test_document_without_factors():
    with pytest.raises(bt.EmptyModel):
        bt.parse_model_document('[model]\nname = "nothing"\n')


def test_bad_weight_is_located():
    text = '[[model.factors]]\nkind = "cue_sum"\nweights = ["1+2j"]\n'
    with pytest.raises(bt.ParseError) as info:
        bt.parse_model_document(text)
    assert (info.value.line, info.value.column) == (3, 12)
    assert info.value.details["token"] == "1+2j"


def test_toml_syntax_error_is_located():
    with pytest.raises(bt.ParseError) as info:
        bt.parse_model_document("[model]\nname\n")
    assert info.value.line == 2


def test_unknown_factor_kind():
    with pytest.raises(bt.ParseError):
        bt.parse_model_document('[[model.factors]]\nkind = "gue"\n')


def test_flags_override_run_table():
    args = argparse.Namespace(command="mc", model_path="m.toml", out="out", samples=7, seed=None, sizes="64,128")
    config = bt.RunConfig.resolve(args, {"samples": 3, "seed": 9})
    assert config.samples == 7 and config.seed == 9
    assert config.n == bt.DEFAULT_N
    assert config.sizes == (64, 128)


@pytest.mark.parametrize("field,value", [("samples", 0), ("n", 0), ("seed", -1), ("workers", 0), ("entries", "cauchy")])
def test_bad_config(field, value):
    with pytest.raises(bt.UsageError):
        bt.RunConfig(command="mc", model_path="m", out="o", **{field: value}).check()


def test_theory_matches_bures_oracle(tmp_path, bures_document):
    model = _write(tmp_path, bures_document)
    grid = "lin:0.1:5:50"
    assert bt.main(["theory", "--model", model, "--out", str(tmp_path / "theory"), "--grid", grid]) == 0
    assert bt.main(["oracle", "--model", model, "--out", str(tmp_path / "oracle"), "--grid", grid]) == 0
    theory = _read(tmp_path / "theory" / "theory_singular.csv")
    oracle = _read(tmp_path / "oracle" / "oracle.csv")
    assert np.allclose(theory["x"], oracle["x"])
    assert np.allclose(theory["rho"], oracle["rho"], rtol=0, atol=1e-6)
    assert (tmp_path / "theory" / "theory_eigenvalue.csv").exists()


def test_oracle_needs_closed_form(tmp_path):
    model = _write(tmp_path, '[[model.factors]]\nkind = "cue_sum"\nweights = [1, 0.5]\n')
    assert bt.main(["oracle", "--model", model, "--out", str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out" / "oracle.csv").exists()


def test_zero_samples_is_a_usage_error(tmp_path, bures_document):
    model = _write(tmp_path, bures_document)
    out = tmp_path / "out"
    assert bt.main(["compare", "--model", model, "--out", str(out), "--samples", "0"]) == 2
    assert not out.exists() or not os.listdir(out)


def test_mc_is_reproducible_across_workers(tmp_path, bures_document):
    model = _write(tmp_path, bures_document)
    assert bt.main(["mc", "--model", model, "--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert bt.main(["mc", "--model", model, "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    for name in ("mc_radial.csv", "mc_singular.csv", "mc_moments.csv", "spectra_eigenvalue.bin", "spectra_singular.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header, samples = bt.read_spectra(str(tmp_path / "a" / "spectra_singular.bin"))
    assert len(samples) == 4 and header["n_outer"] == 32 and header["seed"] == 5


def test_manifest_hashes(tmp_path, bures_document):
    model = _write(tmp_path, bures_document)
    out = tmp_path / "out"
    assert bt.main(["compare", "--model", model, "--out", str(out), "--workers", "1", "--bins", "10"]) == 0
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "compare"
    assert manifest["config"]["samples"] == 4
    assert set(manifest["artifacts"]) == {"compare_radial.csv", "compare_singular.csv"}
    for name, digest in manifest["artifacts"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert manifest["model_hash"] == bt.model_hash(bt.parse_model_document(bures_document))


def test_validation_error_writes_diagnostics(tmp_path):
    text = (
        '[[model.factors]]\nkind = "ginibre"\nrows = 1\ncols = 2\n'
        '[[model.factors]]\nkind = "ginibre"\nrows = 3\ncols = 1\n'
    )
    model = _write(tmp_path, text)
    out = tmp_path / "out"
    assert bt.main(["theory", "--model", model, "--out", str(out)]) == 1
    diagnostics = json.loads((out / "diagnostics.json").read_text(encoding="utf-8"))
    assert diagnostics["code"] == "DimensionMismatch"


def test_parse_error_exit_code(tmp_path):
    model = _write(tmp_path, '[[model.factors]]\nkind = "cue_sum"\nweights = ["x"]\n')
    out = tmp_path / "out"
    assert bt.main(["theory", "--model", model, "--out", str(out)]) == 2
    assert json.loads((out / "diagnostics.json").read_text(encoding="utf-8"))["details"]["line"] == 3


MODELS = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, "models")


@pytest.mark.parametrize("name", sorted(os.listdir(MODELS)))
def test_shipped_documents_load(name):
    spec, table = bt.load_document(os.path.join(MODELS, name))
    model = bt.validate(spec)
    assert model.spec.name
    assert isinstance(table, dict)


@pytest.mark.slow
def test_five_sum_theory_is_flagged_or_complete(tmp_path):
    text = '[[model.factors]]\nkind = "cue_sum"\nweights = [1, 0.5]\n' * 5
    text += '[[model.factors]]\nkind = "ginibre"\nsigma = 1.5\nrows = 1\ncols = 1\n'
    model = _write(tmp_path, text)
    out = tmp_path / "out"
    code = bt.main(["theory", "--model", model, "--out", str(out)])
    if code == 1:
        diagnostics = json.loads((out / "diagnostics.json").read_text(encoding="utf-8"))
        assert diagnostics["code"] in {
            "NoUpperBranch",
            "NoRealRoot",
            "SupportEdgeAmbiguity",
            "ContinuationStall",
            "BranchLoss",
            "BranchCollision",
            "PoleHit",
        }
        assert diagnostics["details"]
        assert not (out / "theory_singular.csv").exists()
        return
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert "theory_singular.csv" in manifest["artifacts"]
    theory = _read(out / "theory_singular.csv")
    assert np.all(np.isfinite(theory["rho"])) and np.all(theory["rho"] >= 0)
