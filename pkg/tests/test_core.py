import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grove.core import (ConfigError, DataError, Dataset, ForestConfig, Mode, PredictionResult,
                        Sample, as_points, beta_min, check_config, load_config, load_dataset,
                        read_points, save_config, save_dataset, validate_config)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_single_row_parse(tmp_path):
    data = load_dataset(write(tmp_path, "x1,y,w\n0.5,1.0,1"))
    assert (data.n, data.d, data.has_treatment) == (1, 1, True)
    assert data.y[0] == 1.0 and data.w[0] == 1


@pytest.mark.parametrize("text, message", [
    ("x1,y,w\n1.5,1.0,1\n", "feature out of range, row 1"),
    ("x1,y,w\n0.5,1.0,2\n", "treatment not binary, row 1"),
    ("x1,y,w\n0.5,1.0,1\n0.2,1.0,0.5\n", "treatment not binary, row 2"),
    ("x1,x2,y\n0.5,0.1,1.0\n0.5,1.0\n", "malformed row, row 2"),
    ("x1,y\n0.5,abc\n", "malformed row, row 1"),
    ("x1,y\n0.5,nan\n", "response not finite, row 1"),
    ("x2,y\n0.5,1\n", "header must start with x1"),
    ("x1,w\n0.5,1\n", "missing response column y"),
    ("", "empty file"),
    ("x1,y\n", "no data rows"),
])
def test_load_errors_name_the_row(tmp_path, text, message):
    with pytest.raises(DataError, match=message):
        load_dataset(write(tmp_path, text))


def test_missing_treatment_when_expected(tmp_path):
    with pytest.raises(DataError, match="missing treatment"):
        load_dataset(write(tmp_path, "x1,y\n0.5,1\n"), expect_treatment=True)


def test_d_comes_from_header(tmp_path):
    data = load_dataset(write(tmp_path, "x1,x2,x3,y\n0.1,0.2,0.3,4\n0.0,1.0,0.5,-1\n"))
    assert data.d == 3 and not data.has_treatment


unit = st.floats(0.0, 1.0, allow_nan=False)
finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 12))
    d = draw(st.integers(1, 4))
    X = draw(st.lists(st.lists(unit, min_size=d, max_size=d), min_size=n, max_size=n))
    y = draw(st.lists(finite, min_size=n, max_size=n))
    w = draw(st.one_of(st.none(), st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    return Dataset(X, y, w)


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_save_load_round_trip(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("rt") / "data.csv"
    save_dataset(data, path)
    assert load_dataset(path) == data
    assert b"\r\n" not in path.read_bytes()


def test_read_points_ignores_response_columns(tmp_path):
    pts = read_points(write(tmp_path, "x1,x2,y,w\n0.1,0.2,3,1\n0.3,0.4,5,0\n"))
    np.testing.assert_array_equal(pts, [[0.1, 0.2], [0.3, 0.4]])
    with pytest.raises(DataError, match="row 1"):
        read_points(write(tmp_path, "x1\n2.0\n", "p.csv"))


def test_dataset_is_immutable():
    data = Dataset([[0.1], [0.2]], [1.0, 2.0], [0, 1])
    with pytest.raises(AttributeError):
        data.y = None
    with pytest.raises(ValueError):
        data.X[0, 0] = 0.5


def test_dataset_validation():
    with pytest.raises(DataError, match="row 2"):
        Dataset([[0.1], [-0.1]], [0, 0])
    with pytest.raises(DataError, match="treatment not binary, row 1"):
        Dataset([[0.1]], [0], [3])
    with pytest.raises(DataError):
        Dataset([[0.1], [0.2]], [0])


def test_samples_round_trip():
    data = Dataset([[0.1, 0.9], [0.5, 0.5]], [1.0, -2.0], [1, 0])
    assert Dataset.from_samples(data.samples) == data
    with pytest.raises(DataError):
        Sample((1.2,), 0.0)
    with pytest.raises(DataError):
        Dataset.from_samples([Sample((0.1,), 0.0, 1), Sample((0.1,), 0.0)])


def test_validate_config_examples():
    data = Dataset(np.random.default_rng(0).random((500, 2)), np.zeros(500),
                   np.arange(500) % 2)
    validate_config(ForestConfig(subsample_size=50), data)
    with pytest.raises(ConfigError, match="subsample exceeds n"):
        validate_config(ForestConfig(subsample_size=600), data)
    no_w = Dataset(data.X, data.y)
    with pytest.raises(ConfigError, match="treatment"):
        validate_config(ForestConfig(mode="causal_double_sample"), no_w)
    validate_config(ForestConfig(mode="regression_double_sample"), no_w)
    with pytest.raises(ConfigError, match="trivial"):
        validate_config(ForestConfig(mode="trivial"), data)


@pytest.mark.parametrize("kwargs", [
    dict(alpha=0.25), dict(alpha=0.0), dict(pi=0.0), dict(pi=1.5),
    dict(num_trees=0), dict(subsample_size=0), dict(min_leaf=0), dict(seed=-1),
    dict(seed=2**64), dict(subsample_size=5, min_leaf=3, mode="causal_double_sample"),
])
def test_check_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        check_config(ForestConfig(**kwargs))


def test_double_sample_needs_half_at_least_k():
    check_config(ForestConfig(subsample_size=6, min_leaf=3, mode="regression_double_sample"))
    # propensity trees use the whole subsample, so the half-size rule does not apply
    check_config(ForestConfig(subsample_size=5, min_leaf=3, mode="propensity"))


def test_config_json_round_trip(tmp_path):
    cfg = ForestConfig(num_trees=7, subsample_size=11, min_leaf=2, alpha=0.1, pi=0.3,
                       mode=Mode.PROPENSITY, seed=2**63 + 5)
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    assert set(json.loads(path.read_text())) == {
        "num_trees", "subsample_size", "min_leaf", "alpha", "pi", "mode", "seed"}
    assert load_config(path) == cfg
    with pytest.raises(ConfigError, match="unknown"):
        ForestConfig.from_dict({"trees": 3})


def test_default_trees_equal_n():
    assert ForestConfig().trees_for(123) == 123
    assert ForestConfig(num_trees=9).trees_for(123) == 9


def _beta_hp(alpha, pi, d):
    mpmath.mp.dps = 50
    a = mpmath.mpf(alpha)
    ratio = mpmath.log(1 / a) / mpmath.log(1 / (1 - a))
    return float(1 - 1 / (1 + (d / mpmath.mpf(pi)) * ratio))


def test_beta_min_values():
    # high-precision evaluation of the closed form
    assert _beta_hp("0.2", 1, 1) == pytest.approx(0.8782, abs=1e-4)
    assert _beta_hp("0.2", 1, 20) == pytest.approx(0.99312, abs=1e-5)
    assert beta_min(0.2, 1, 1) == pytest.approx(0.8782, abs=1e-4)
    assert beta_min(0.2, 1, 20) == pytest.approx(0.99312, abs=1e-5)
    assert beta_min(0.2, 1, 1) < beta_min(0.2, 1, 2)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-4, 0.2), st.floats(0.01, 1.0), st.integers(1, 50))
def test_beta_min_shape(alpha, pi, d):
    b = beta_min(alpha, pi, d)
    assert 0.0 < b < 1.0
    assert b == pytest.approx(_beta_hp(repr(alpha), repr(pi), d), rel=1e-12)
    assert beta_min(alpha, pi, d + 1) > b
    if pi < 0.99:
        assert beta_min(alpha, min(1.0, pi * 1.01), d) < b


@pytest.mark.parametrize("args", [(0.3, 1, 1), (0.1, 0, 1), (0.1, 1, 0)])
def test_beta_min_rejects(args):
    with pytest.raises(ValueError):
        beta_min(*args)


def test_as_points_shapes():
    assert as_points([], 3).shape == (0, 3)
    assert as_points([0.1, 0.2]).shape == (1, 2)
    with pytest.raises(DataError):
        as_points([[0.1, 0.2]], 3)


def test_prediction_result_fields():
    r = PredictionResult(1.0, 0.25, 0.0, 2.0)
    assert r.ci_level == 0.95
