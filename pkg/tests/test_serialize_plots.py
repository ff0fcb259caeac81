import json
import math
from pathlib import Path

import numpy as np
import pytest

from artifact.errors import EmptySeries
from artifact.plots import emit_plot, render
from artifact.serialize import csv_text, dumps, fmt, write_csv

GOLDEN = Path(__file__).parent / "golden" / "profile_exp.svg"


def exp_profile_series():
    # phi = e mu e^{-mu}, the solution on O(1) with v = e^mu
    mu = np.linspace(0.0, 1.0, 33)
    return {"name": "O(1) exp", "x": mu, "y": math.e * mu * np.exp(-mu)}


def test_fmt_rules():
    assert fmt(2.0) == "2.0"
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(math.pi)) == math.pi
    assert fmt(float("nan")) == '"nan"' and fmt(float("-inf")) == '"-inf"'


def test_dumps_sorts_keys_and_inlines_numeric_lists():
    text = dumps({"b": [1.0, 2.5], "a": {"z": True, "y": None}, "c": np.float64(0.5)})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert '"b": [1.0, 2.5]' in text
    assert json.loads(text) == {"a": {"y": None, "z": True}, "b": [1.0, 2.5], "c": 0.5}


def test_dumps_handles_complex_and_numpy_arrays():
    data = json.loads(dumps({"m": np.array([1 + 2j, 3j])}))
    assert data == {"m": {"re": [1.0, 0.0], "im": [2.0, 3.0]}}


def test_csv_text(tmp_path):
    rows = [{"eps": 0.5, "m": 1, "note": None}, {"eps": 1e-3, "m": 2, "note": "x"}]
    text = csv_text(rows, ["eps", "m", "note"])
    assert text.splitlines() == ["eps,m,note", "0.5,1,", "0.001,2,x"]
    assert write_csv(tmp_path / "sub" / "t.csv", rows, ["eps", "m", "note"]).read_text() == text


def test_render_is_deterministic(tmp_path):
    a = render(exp_profile_series())
    b = emit_plot([exp_profile_series()], "profile", tmp_path / "p.svg").read_text()
    assert a == b and a.startswith("<svg")


def test_render_matches_golden_file():
    assert render(exp_profile_series()) == GOLDEN.read_text()


def test_render_kinds():
    conv = {"x": [1.0, 0.5, 0.25, 0.0], "y": [0.5, 1.0, 2.0, 3.0]}
    assert "1/epsilon guide" in render(conv, "convergence")
    assert "weight on the moment polytope" in render({"x": [0.0, 1.0], "y": [1.0, 2.0]}, "polytope-weight")


def test_render_errors():
    with pytest.raises(EmptySeries):
        render([])
    with pytest.raises(EmptySeries):
        render({"x": [1.0, 2.0], "y": [1.0]})
    with pytest.raises(EmptySeries):
        render({"x": [0.0, -1.0], "y": [1.0, 2.0]}, "convergence")
    with pytest.raises(ValueError):
        render(exp_profile_series(), "histogram")
