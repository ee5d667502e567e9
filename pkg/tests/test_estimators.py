from __future__ import annotations

import numpy as np
import pytest

from nncwo.dataset import MissingColumnError
from nncwo.estimators import (
    Backend,
    EffectEstimate,
    estimate,
    nn_cwo,
    required_columns,
)
from nncwo.glm import fit_wls, predict_linear
from nncwo.neural import Hyperparams
from nncwo.scm import Scenario, ScenarioSpec, build_scenario, sample, truth_grid

FAST = Hyperparams(input_units=16, n_layers=1, units=(8,), dropout_rate=0.0,
                   dropout_rates=(0.0,), epochs=20)


def _data(kind, dim=1, n=4000, seed=0):
    scm = build_scenario(ScenarioSpec(kind, dim, seed))
    return scm, sample(scm, n, seed + 100)


def test_nn_cwo_one_feature_is_wls_bit_for_bit():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 2, 300).astype(float)
    y = 0.3 + 0.2 * x + rng.normal(0, 0.1, 300)
    w = rng.uniform(0.5, 2.0, 300)
    pts = np.array([0.0, 1.0])
    ref = predict_linear(fit_wls(x[:, None], y, w), pts[:, None])
    for backend in Backend:
        np.testing.assert_array_equal(nn_cwo(x, y, pts, w, backend=backend), ref)


def test_nn_cwo_dispatches_to_network_for_many_features():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 2, size=(400, 3)).astype(float)
    y = x.sum(axis=1) / 3
    w = np.ones(400)
    nn = nn_cwo(x, y, x[:4], w, FAST, Backend.NNCWO, 0)
    lin = nn_cwo(x, y, x[:4], w, FAST, Backend.CWO, 0)
    assert not np.array_equal(nn, lin)


def test_nn_cwo_rejects_mismatched_prediction_points():
    with pytest.raises(ValueError):
        nn_cwo(np.zeros((5, 2)), np.zeros(5), np.zeros((1, 3)), np.ones(5))


def test_frontdoor_dim1_backends_identical():
    _, d = _data(Scenario.FRONTDOOR)
    a = estimate(Scenario.FRONTDOOR, d, backend=Backend.NNCWO)
    b = estimate(Scenario.FRONTDOOR, d, backend=Backend.CWO)
    assert a.values == b.values


@pytest.mark.parametrize("kind", list(Scenario))
def test_estimates_near_truth(kind):
    scm, d = _data(kind, n=20000)
    truth = truth_grid(scm, "exact")
    est = estimate(kind, d, FAST, Backend.CWO)
    for k, v in truth.items():
        assert abs(est[k] - v) < 0.03


@pytest.mark.parametrize("kind", list(Scenario))
def test_estimate_deterministic(kind):
    _, d = _data(kind, n=1500)
    a = estimate(kind, d, FAST, Backend.NNCWO, seed=3)
    b = estimate(kind, d, FAST, Backend.NNCWO, seed=3)
    assert a == b


def test_estimate_json_roundtrip():
    _, d = _data(Scenario.MSBD, n=1500)
    est = estimate(Scenario.MSBD, d, FAST, Backend.CWO)
    assert set(est.to_dict()["mu"]) == {"00", "01", "10", "11"}
    assert EffectEstimate.from_dict(est.to_dict()) == est


def test_effect_estimate_validates_grid():
    with pytest.raises(ValueError):
        EffectEstimate(Scenario.MSBD, {(0,): 0.1, (1,): 0.2})
    with pytest.raises(ValueError):
        EffectEstimate(Scenario.FRONTDOOR, {(0,): np.nan, (1,): 0.2})


def test_missing_column_is_named():
    _, d = _data(Scenario.FRONTDOOR)
    with pytest.raises(MissingColumnError, match="'W'"):
        required_columns(Scenario.SURROGATE, d)
