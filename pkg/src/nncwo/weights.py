"""Per-sample stabilized weights for the back-door style operators.

Every weight is a ratio of a marginal (or joint) probability of the
"treatment" of an operator over its conditional probability given the
adjustment set. Conditionals are clipped logistic propensities; joint
distributions over several binary columns are factored with the chain rule.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .glm import DEFAULT_LOGISTIC_RIDGE, LogisticModel, fit_logistic, predict_proba

DEFAULT_CLIP_EPS = 0.01

SURROGATE_Z = "z"  # P(w) / P(w | z)
SURROGATE_XZ = "conditional-on-xz"  # P(w) / P(w | x, z)
SURROGATE_MODES = (SURROGATE_Z, SURROGATE_XZ)


class DegenerateTreatmentError(ValueError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"column {column!r} is constant; its propensity is degenerate")


def _check_clip(clip_eps: float) -> float:
    if not (0.0 < clip_eps < 0.5):
        raise ValueError(f"clip_eps must lie in (0, 0.5), got {clip_eps!r}")
    return float(clip_eps)


@dataclass(frozen=True)
class WeightVector:
    values: np.ndarray
    clip_eps: float = DEFAULT_CLIP_EPS

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("weights must be a vector")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("weights must be positive and finite")
        _check_clip(self.clip_eps)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def mean(self) -> float:
        return float(self.values.mean())

    def normalized(self) -> "WeightVector":
        """Rescaled to mean one."""
        return WeightVector(self.values / self.values.mean(), self.clip_eps)

    @classmethod
    def ones(cls, n: int, clip_eps: float = DEFAULT_CLIP_EPS) -> "WeightVector":
        return cls(np.ones(n), clip_eps)


@dataclass(frozen=True)
class PropensityModel:
    """P(target = 1 | conditioning) for a binary target column.

    With empty conditioning the probability is the empirical frequency;
    otherwise a ridge logistic regression. Outputs are clipped to
    [clip_eps, 1 - clip_eps].
    """

    target: str
    conditioning: tuple[str, ...]
    clip_eps: float
    model: LogisticModel | None = None
    frequency: float | None = None

    @classmethod
    def fit(
        cls,
        data: Dataset,
        target: str,
        conditioning: Sequence[str] = (),
        clip_eps: float = DEFAULT_CLIP_EPS,
        ridge_lambda: float = DEFAULT_LOGISTIC_RIDGE,
    ) -> "PropensityModel":
        clip_eps = _check_clip(clip_eps)
        if data.n == 0:
            raise ValueError("empty dataset")
        y = data.column(target)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError(f"propensity target {target!r} must be binary")
        if y.min() == y.max():
            raise DegenerateTreatmentError(target)
        conditioning = tuple(conditioning)
        if not conditioning:
            return cls(target, (), clip_eps, frequency=float(y.mean()))
        model = fit_logistic(data.select(conditioning), y, ridge_lambda=ridge_lambda)
        return cls(target, conditioning, clip_eps, model=model)

    def prob_one(self, data: Dataset) -> np.ndarray:
        if self.model is None:
            p = np.full(data.n, self.frequency)
        else:
            p = predict_proba(self.model, data.select(self.conditioning))
        return np.clip(p, self.clip_eps, 1.0 - self.clip_eps)

    def prob_observed(self, data: Dataset) -> np.ndarray:
        """P(target = observed value | conditioning) per row."""
        p1 = self.prob_one(data)
        return np.where(data.column(self.target) == 1.0, p1, 1.0 - p1)


def chain_probability(
    data: Dataset,
    targets: Sequence[str],
    given: Sequence[str] = (),
    clip_eps: float = DEFAULT_CLIP_EPS,
    ridge_lambda: float = DEFAULT_LOGISTIC_RIDGE,
) -> np.ndarray:
    """P(targets | given) per row via the chain rule.

    Factor j conditions target j on ``given`` plus targets 1..j-1; a factor
    with nothing to condition on is the empirical frequency.
    """
    out = np.ones(data.n)
    for j, t in enumerate(targets):
        cond = (*given, *targets[:j])
        pm = PropensityModel.fit(data, t, cond, clip_eps, ridge_lambda)
        out *= pm.prob_observed(data)
    return out


def joint_frequency(data: Dataset, columns: Sequence[str]) -> np.ndarray:
    """Empirical probability of each row's value pattern over ``columns``."""
    sub = data.select(columns)
    _, inverse, counts = np.unique(sub, axis=0, return_inverse=True, return_counts=True)
    return counts[inverse.reshape(-1)] / data.n


def bd_weights(
    data: Dataset,
    treatment: str,
    covars: Sequence[str],
    clip_eps: float = DEFAULT_CLIP_EPS,
    ridge_lambda: float = DEFAULT_LOGISTIC_RIDGE,
) -> WeightVector:
    """Stabilized back-door weight P(x_i) / P(x_i | z_i)."""
    if not covars:
        raise ValueError("bd_weights needs at least one covariate")
    num = PropensityModel.fit(data, treatment, (), clip_eps).prob_observed(data)
    den = PropensityModel.fit(data, treatment, covars, clip_eps, ridge_lambda).prob_observed(data)
    return WeightVector(num / den, clip_eps)


def msbd_stages(data: Dataset) -> list[tuple[str, tuple[str, ...]]]:
    """Default two-stage description for MSBD scenario columns.

    Stage 1 adjusts X1 for the first covariate block; stage 2 adjusts X2
    for the full history (X1, Y1, both covariate blocks).
    """
    z1 = _block(data, "Z1_")
    z2 = _block(data, "Z2_")
    return [("X1", z1), ("X2", ("X1", "Y1", *z1, *z2))]


def msbd_weights(
    data: Dataset,
    stages: Sequence[tuple[str, Sequence[str]]] | None = None,
    clip_eps: float = DEFAULT_CLIP_EPS,
    ridge_lambda: float = DEFAULT_LOGISTIC_RIDGE,
) -> WeightVector:
    """Sequential stabilized weight P(x) / prod_k P(x_k | history_k).

    The numerator is the empirical joint frequency of all stage treatments.
    """
    if stages is None:
        stages = msbd_stages(data)
    if not stages:
        raise ValueError("at least one stage required")
    treatments = [t for t, _ in stages]
    for t in treatments:
        if data.column(t).min() == data.column(t).max():
            raise DegenerateTreatmentError(t)
    num = joint_frequency(data, treatments)
    den = np.ones(data.n)
    for t, hist in stages:
        if not hist:
            raise ValueError(f"stage {t!r} has an empty conditioning set")
        den *= PropensityModel.fit(data, t, hist, clip_eps, ridge_lambda).prob_observed(data)
    return WeightVector(num / den, clip_eps)


def surrogate_weights(
    data: Dataset,
    clip_eps: float = DEFAULT_CLIP_EPS,
    mode: str = SURROGATE_Z,
    ridge_lambda: float = DEFAULT_LOGISTIC_RIDGE,
) -> WeightVector:
    """P(w_i) / P(w_i | z_i), or P(w_i) / P(w_i | x_i, z_i) in the xz mode."""
    if mode not in SURROGATE_MODES:
        raise ValueError(f"unknown surrogate weight mode {mode!r}")
    z = _block(data, "Z")
    covars = z if mode == SURROGATE_Z else ("X", *z)
    data.require(("W", *covars))
    return bd_weights(data, "W", covars, clip_eps, ridge_lambda)


def frontdoor_stage_weights(
    data: Dataset,
    clip_eps: float = DEFAULT_CLIP_EPS,
    ridge_lambda: float = DEFAULT_LOGISTIC_RIDGE,
) -> tuple[WeightVector, WeightVector]:
    """Weights of the two front-door operators.

    The X -> Z operator has no adjustment set, so its weight is one. The
    Z -> Y operator adjusts for X: P(z_i) / P(z_i | x_i), both chain-ruled
    over the components of z.
    """
    z = _block(data, "Z")
    data.require(("X", *z))
    stage1 = WeightVector.ones(data.n, clip_eps)
    num = chain_probability(data, z, (), clip_eps, ridge_lambda)
    den = chain_probability(data, z, ("X",), clip_eps, ridge_lambda)
    return stage1, WeightVector(num / den, clip_eps)


_BLOCK_RE = {}


def _block(data: Dataset, prefix: str) -> tuple[str, ...]:
    """Columns ``<prefix>1 .. <prefix>D`` present in ``data``, in index order."""
    pat = _BLOCK_RE.setdefault(prefix, re.compile(re.escape(prefix) + r"(\d+)$"))
    found = sorted(
        (int(m.group(1)), c) for c in data.columns if (m := pat.match(c))
    )
    cols = tuple(c for _, c in found)
    if not cols:
        data.index(f"{prefix}1")  # raises MissingColumnError
    expected = tuple(f"{prefix}{j}" for j in range(1, len(cols) + 1))
    if cols != expected:
        raise ValueError(f"covariate block {prefix}* is not contiguous: {cols}")
    return cols


covariate_block = _block
