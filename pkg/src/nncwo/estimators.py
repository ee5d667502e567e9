"""The dispatching regression operator and the three scenario pipelines.

``nn_cwo`` fits a weighted regression of a target on features and predicts
at new points: a neural network when there is more than one feature (under
the NN-CWO backend), weighted least squares otherwise. The pipelines
compose it with the weights from :mod:`nncwo.weights`:

* front-door: regress Y on Z with weights P(z)/P(z|x), predict at the
  observed Z, then regress those predictions on X with unit weights and
  read off x = 0 and x = 1;
* surrogate: regress Y on (X, W) with weights P(w)/P(w|z) and evaluate at
  (0, 1) and (1, 0);
* MSBD: regress Y2 on (X1, X2) with sequential weights and evaluate on the
  full 2x2 grid.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dataset import Dataset
from .glm import fit_wls, predict_linear
from .neural import LINEAR, Hyperparams, build_mlp, forward, train
from .scm import Scenario
from .weights import (
    DEFAULT_CLIP_EPS,
    SURROGATE_Z,
    covariate_block,
    frontdoor_stage_weights,
    msbd_stages,
    msbd_weights,
    surrogate_weights,
)

FRONTDOOR_GRID = np.array([[0.0], [1.0]])
SURROGATE_GRID = np.array([[0.0, 1.0], [1.0, 0.0]])
MSBD_GRID = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])

GRID_KEYS = {
    Scenario.FRONTDOOR: [(0,), (1,)],
    Scenario.SURROGATE: [(0,), (1,)],
    Scenario.MSBD: [(0, 0), (0, 1), (1, 0), (1, 1)],
}


class Backend(str, enum.Enum):
    NNCWO = "nncwo"
    CWO = "cwo"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class EffectEstimate:
    """Interventional means keyed by treatment value tuples, e.g. ``(0,)`` or ``(1, 0)``."""

    scenario: Scenario
    values: Mapping[tuple[int, ...], float]
    backend: Backend | None = None  # None for ground truth

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.backend is not None:
            object.__setattr__(self, "backend", Backend(self.backend))
        vals = {tuple(int(b) for b in k): float(v) for k, v in self.values.items()}
        expected = GRID_KEYS[self.scenario]
        if sorted(vals) != expected:
            raise ValueError(f"{self.scenario.value} estimates need keys {expected}, got {sorted(vals)}")
        if not all(np.isfinite(v) for v in vals.values()):
            raise ValueError("estimate values must be finite")
        object.__setattr__(self, "values", {k: vals[k] for k in expected})

    def __getitem__(self, key) -> float:
        if isinstance(key, int):
            key = (key,)
        return self.values[tuple(key)]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "backend": None if self.backend is None else self.backend.value,
            "mu": {"".join(map(str, k)): v for k, v in self.values.items()},
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EffectEstimate":
        vals = {tuple(int(c) for c in k): v for k, v in d["mu"].items()}
        return cls(d["scenario"], vals, d.get("backend"))


def _sub_seeds(seed: int, k: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(int(seed)).generate_state(k, np.uint64)]


def nn_cwo(
    features,
    target,
    pred_points,
    w,
    hp: Hyperparams | None = None,
    backend: Backend = Backend.NNCWO,
    seed: int = 0,
    *,
    first_activation: str = LINEAR,
) -> np.ndarray:
    """Weighted regression of ``target`` on ``features``, predicted at ``pred_points``.

    With one feature, or under the CWO backend, this is weighted least
    squares. Otherwise a network is built, trained with ``w`` as sample
    weights, and evaluated in inference mode.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    xp = np.asarray(pred_points, dtype=np.float64)
    if xp.ndim == 1:
        xp = xp[:, None]
    d = x.shape[1]
    if d < 1:
        raise ValueError("need at least one feature")
    if xp.shape[1] != d:
        raise ValueError(f"prediction points have {xp.shape[1]} columns, features have {d}")
    w = np.asarray(getattr(w, "values", w), dtype=np.float64)
    backend = Backend(backend)
    if d == 1 or backend is Backend.CWO:
        return predict_linear(fit_wls(x, target, w), xp)
    hp = hp or Hyperparams()
    init_seed, train_seed = _sub_seeds(seed, 2)
    net = build_mlp(d, hp, init_seed, first_activation=first_activation)
    net, _ = train(net, x, target, w, hp, train_seed)
    return forward(net, xp, training=False)


def estimate_frontdoor(
    data: Dataset,
    hp: Hyperparams | None = None,
    backend: Backend = Backend.NNCWO,
    clip_eps: float = DEFAULT_CLIP_EPS,
    seed: int = 0,
) -> EffectEstimate:
    """Composition of the Z -> Y operator (adjusting for X) and the X -> Z operator."""
    z = covariate_block(data, "Z")
    data.require(("X", "Y", *z))
    stage1, stage2 = frontdoor_stage_weights(data, clip_eps)
    s_a, s_b = _sub_seeds(seed, 2)
    zmat = data.select(z)
    y2 = nn_cwo(zmat, data.column("Y"), zmat, stage2.normalized(), hp, backend, s_a)
    mu = nn_cwo(data.select(["X"]), y2, FRONTDOOR_GRID, stage1, hp, backend, s_b)
    return EffectEstimate(Scenario.FRONTDOOR, {(0,): mu[0], (1,): mu[1]}, backend)


def estimate_surrogate(
    data: Dataset,
    hp: Hyperparams | None = None,
    backend: Backend = Backend.NNCWO,
    clip_eps: float = DEFAULT_CLIP_EPS,
    seed: int = 0,
    *,
    weight_mode: str = SURROGATE_Z,
) -> EffectEstimate:
    z = covariate_block(data, "Z")
    data.require(("X", "W", "Y", *z))
    w = surrogate_weights(data, clip_eps, weight_mode).normalized()
    mu = nn_cwo(data.select(["X", "W"]), data.column("Y"), SURROGATE_GRID, w, hp, backend, seed)
    return EffectEstimate(Scenario.SURROGATE, {(0,): mu[0], (1,): mu[1]}, backend)


def estimate_msbd(
    data: Dataset,
    hp: Hyperparams | None = None,
    backend: Backend = Backend.NNCWO,
    clip_eps: float = DEFAULT_CLIP_EPS,
    seed: int = 0,
) -> EffectEstimate:
    stages = msbd_stages(data)
    data.require(("X1", "X2", "Y1", "Y2"))
    w = msbd_weights(data, stages, clip_eps).normalized()
    mu = nn_cwo(data.select(["X1", "X2"]), data.column("Y2"), MSBD_GRID, w, hp, backend, seed)
    keys = GRID_KEYS[Scenario.MSBD]
    return EffectEstimate(Scenario.MSBD, dict(zip(keys, mu)), backend)


_PIPELINES = {
    Scenario.FRONTDOOR: estimate_frontdoor,
    Scenario.SURROGATE: estimate_surrogate,
    Scenario.MSBD: estimate_msbd,
}


def estimate(
    scenario: Scenario | str,
    data: Dataset,
    hp: Hyperparams | None = None,
    backend: Backend = Backend.NNCWO,
    clip_eps: float = DEFAULT_CLIP_EPS,
    seed: int = 0,
    **kwargs,
) -> EffectEstimate:
    return _PIPELINES[Scenario(scenario)](data, hp, backend, clip_eps, seed, **kwargs)


def required_columns(scenario: Scenario | str, data: Dataset) -> None:
    """Raise MissingColumnError naming the first column the pipeline lacks."""
    scenario = Scenario(scenario)
    if scenario is Scenario.FRONTDOOR:
        data.require(("X", "Y"))
        covariate_block(data, "Z")
    elif scenario is Scenario.SURROGATE:
        data.require(("X", "W", "Y"))
        covariate_block(data, "Z")
    else:
        data.require(("X1", "X2", "Y1", "Y2"))
        covariate_block(data, "Z1_")
        covariate_block(data, "Z2_")
