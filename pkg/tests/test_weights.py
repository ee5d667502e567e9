from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nncwo.dataset import BINARY, Dataset, MissingColumnError
from nncwo.scm import Scenario, ScenarioSpec, build_scenario, sample
from nncwo.weights import (
    SURROGATE_XZ,
    DegenerateTreatmentError,
    PropensityModel,
    WeightVector,
    bd_weights,
    chain_probability,
    covariate_block,
    frontdoor_stage_weights,
    joint_frequency,
    msbd_stages,
    msbd_weights,
    surrogate_weights,
)


def _data(kind, dim=2, n=3000, seed=0):
    return sample(build_scenario(ScenarioSpec(kind, dim, seed)), n, seed)


def _table(rows, cols):
    return Dataset(tuple(cols), (BINARY,) * len(cols), np.array(rows, dtype=float))


def test_bd_weights_single_binary_covariate_closed_form():
    # with a saturated covariate the propensity is the within-stratum frequency
    rows = [[0, 0]] * 30 + [[1, 0]] * 10 + [[0, 1]] * 15 + [[1, 1]] * 45
    d = _table(rows, ("Z", "X"))
    w = bd_weights(d, "X", ("Z",), ridge_lambda=0.0).values
    px = 60 / 100
    p1 = {0: 15 / 45, 1: 45 / 55}  # P(X=1 | Z=z)
    for i, (z, x) in enumerate(rows):
        pxz = p1[z] if x else 1 - p1[z]
        marg = px if x else 1 - px
        assert w[i] == pytest.approx(marg / pxz, rel=1e-6)


def test_weights_are_clipped():
    # X is almost determined by Z, so raw propensities approach 0 and 1
    rows = [[0, 0]] * 500 + [[0, 1]] + [[1, 1]] * 500 + [[1, 0]]
    d = _table(rows, ("Z", "X"))
    w = bd_weights(d, "X", ("Z",), clip_eps=0.05).values
    assert w.max() <= 0.5 / 0.05 + 1e-12


def test_constant_treatment_is_degenerate():
    d = _table([[0, 1], [1, 1], [0, 1]], ("Z", "X"))
    with pytest.raises(DegenerateTreatmentError, match="'X'"):
        bd_weights(d, "X", ("Z",))


def test_clip_eps_validated():
    d = _data(Scenario.SURROGATE)
    with pytest.raises(ValueError):
        surrogate_weights(d, clip_eps=0.5)


def test_propensity_without_conditioning_is_frequency():
    d = _table([[1], [0], [1], [1]], ("X",))
    pm = PropensityModel.fit(d, "X")
    np.testing.assert_allclose(pm.prob_one(d), 0.75)


def test_chain_probability_sums_to_one_over_patterns():
    # P(z1, z2) from the chain rule, summed over the 4 patterns in a saturated table
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 2, size=(400, 2))
    d = _table(rows, ("Z1", "Z2"))
    p = chain_probability(d, ("Z1", "Z2"), ridge_lambda=0.0)
    seen = {}
    for r, v in zip(map(tuple, rows), p):
        seen[r] = v
    assert sum(seen.values()) == pytest.approx(1.0, abs=1e-6)


def test_joint_frequency():
    d = _table([[0, 1], [0, 1], [1, 1], [0, 0]], ("A", "B"))
    np.testing.assert_allclose(joint_frequency(d, ("A", "B")), [0.5, 0.5, 0.25, 0.25])


def test_surrogate_modes_differ():
    d = _data(Scenario.SURROGATE)
    a = surrogate_weights(d).values
    b = surrogate_weights(d, mode=SURROGATE_XZ).values
    assert a.shape == b.shape and not np.allclose(a, b)


def test_frontdoor_stage_one_is_unit():
    d = _data(Scenario.FRONTDOOR)
    s1, s2 = frontdoor_stage_weights(d)
    np.testing.assert_array_equal(s1.values, 1.0)
    assert s2.values.shape == (d.n,)


def test_msbd_stages_use_full_history():
    d = _data(Scenario.MSBD)
    assert msbd_stages(d) == [
        ("X1", ("Z1_1", "Z1_2")),
        ("X2", ("X1", "Y1", "Z1_1", "Z1_2", "Z2_1", "Z2_2")),
    ]


def test_msbd_weights_positive():
    w = msbd_weights(_data(Scenario.MSBD))
    assert np.all(w.values > 0)


def test_block_discovery_and_errors():
    d = _data(Scenario.FRONTDOOR, dim=3)
    assert covariate_block(d, "Z") == ("Z1", "Z2", "Z3")
    gap = Dataset(("Z1", "Z3"), (BINARY, BINARY), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="contiguous"):
        covariate_block(gap, "Z")
    with pytest.raises(MissingColumnError):
        covariate_block(Dataset(("X",), (BINARY,), np.zeros((1, 1))), "Z")


def test_weight_vector_normalized_has_unit_mean():
    w = WeightVector(np.array([0.5, 1.0, 4.0]))
    assert w.normalized().mean() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        WeightVector(np.array([1.0, 0.0]))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), clip=st.floats(0.001, 0.2))
def test_weights_bounded_by_clip(seed, clip):
    d = _data(Scenario.SURROGATE, dim=2, n=500, seed=seed % 50)
    w = surrogate_weights(d, clip_eps=clip).values
    assert np.all(w > 0) and np.all(w <= 1.0 / clip + 1e-9)
