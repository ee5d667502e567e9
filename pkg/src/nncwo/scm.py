"""Benchmark structural causal models: construction, sampling, interventions, truth.

Three fixed graph shapes are supported (front-door, surrogate and a two-stage
sequential back-door model). Binary variables follow
``V ~ Bernoulli(sigmoid(c0 + c . pa(V)))`` and the continuous outcome is
``Y = sigmoid(c0 + c . pa(Y) + eps)`` with ``eps ~ Normal(0, noise_sd)``.

Random numbers are counter based: every uniform draw is a pure function of
``(seed, variable, stream, row)``, so datasets are reproducible, any prefix of
a sample equals a smaller sample, and interventional samples share their
random numbers with observational ones (non-descendants of the intervened
variable come out bit-identical).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit, ndtri

from .dataset import BINARY, UNIT, Dataset

MAX_ENUM_BINARY = 24
DEFAULT_NOISE_SD = 0.1
GH_POINTS = 21

# rows per RNG block; each block owns a disjoint Philox counter range
_CHUNK = 1 << 16

LOGISTIC = "logistic"  # Bernoulli(sigmoid(linear predictor))
AFFINE = "affine"  # deterministic: value = linear predictor
SQUASHED = "squashed"  # sigmoid(linear predictor + gaussian noise)


class Scenario(str, enum.Enum):
    FRONTDOOR = "frontdoor"
    SURROGATE = "surrogate"
    MSBD = "msbd"

    def __str__(self) -> str:
        return self.value


class EnumerationBoundError(ValueError):
    pass


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    kind: Scenario
    dim: int
    coeff_seed: int = 0
    noise_sd: float = DEFAULT_NOISE_SD

    def __post_init__(self):
        object.__setattr__(self, "kind", Scenario(self.kind))
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        if not (self.noise_sd >= 0 and np.isfinite(self.noise_sd)):
            raise ValueError(f"noise_sd must be finite and >= 0, got {self.noise_sd!r}")
        if not (0 <= int(self.coeff_seed) < 2**64):
            raise ValueError("coeff_seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str  # BINARY or UNIT
    parents: tuple[str, ...] = ()
    mechanism: str = LOGISTIC
    latent: bool = False


@dataclass(frozen=True, eq=False)
class Scm:
    """Instantiated structural equations, variables in topological order."""

    kind: Scenario
    dim: int
    variables: tuple[Variable, ...]
    coefficients: Mapping[str, np.ndarray]
    noise_sd: float
    treatments: tuple[str, ...]
    outcome: str
    columns: tuple[str, ...]  # observed column order of sampled datasets
    _index: Mapping[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        seen: dict[str, int] = {}
        for i, v in enumerate(self.variables):
            if v.name in seen:
                raise ValueError(f"duplicate variable {v.name!r}")
            for p in v.parents:
                if p not in seen:
                    raise ValueError(
                        f"{v.name!r} lists parent {p!r} that does not precede it"
                    )
            if v.latent and v.parents:
                raise ValueError(f"latent variable {v.name!r} cannot have parents")
            seen[v.name] = i
        coefs = {}
        for v in self.variables:
            c = np.array(self.coefficients[v.name], dtype=np.float64)
            if c.shape != (1 + len(v.parents),):
                raise ValueError(
                    f"{v.name!r} needs {1 + len(v.parents)} coefficients, got {c.shape}"
                )
            if not np.all(np.isfinite(c)):
                raise ValueError(f"non-finite coefficient for {v.name!r}")
            c.setflags(write=False)
            coefs[v.name] = c
        object.__setattr__(self, "coefficients", MappingProxyType(coefs))
        object.__setattr__(self, "_index", MappingProxyType(seen))
        for name in (*self.treatments, self.outcome, *self.columns):
            if name not in seen:
                raise ValueError(f"unknown variable {name!r}")

    def variable(self, name: str) -> Variable:
        return self.variables[self._index[name]]

    def parents(self, name: str) -> tuple[str, ...]:
        return self.variable(name).parents

    @property
    def latents(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables if v.latent)

    def n_binary(self) -> int:
        return sum(v.kind == BINARY for v in self.variables)

    def with_coefficients(self, updates: Mapping[str, Sequence[float]]) -> "Scm":
        """Copy with some variables' coefficient vectors replaced."""
        coefs = dict(self.coefficients)
        for name, c in updates.items():
            if name not in self._index:
                raise KeyError(name)
            coefs[name] = np.asarray(c, dtype=np.float64)
        return replace(self, coefficients=coefs)

    def with_coefficient(self, name: str, parent: str, value: float) -> "Scm":
        """Copy with the weight of edge ``parent -> name`` set to ``value``.

        ``parent=None`` addresses the intercept.
        """
        c = np.array(self.coefficients[name])
        if parent is None:
            c[0] = value
        else:
            c[1 + self.parents(name).index(parent)] = value
        return self.with_coefficients({name: c})

    def with_noise(self, noise_sd: float) -> "Scm":
        if not noise_sd >= 0:
            raise ValueError("noise_sd must be >= 0")
        return replace(self, noise_sd=float(noise_sd))

    def descendants(self, name: str) -> set[str]:
        out: set[str] = set()
        for v in self.variables:
            if name in v.parents or out.intersection(v.parents):
                out.add(v.name)
        return out


def z_block(prefix: str, dim: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{j}" for j in range(1, dim + 1))


def build_scenario(spec: ScenarioSpec) -> Scm:
    """Instantiate the structural equations for ``spec``.

    Coefficients are i.i.d. Uniform(-1, 1) drawn from ``coeff_seed`` in
    variable order; the latent confounder's edges into X and Y use
    Uniform(0.5, 1.5) so confounding is never negligible.
    """
    rng = np.random.default_rng(int(spec.coeff_seed))
    D = spec.dim

    def draw(k):
        return rng.uniform(-1.0, 1.0, size=k)

    variables: list[Variable] = []
    coefs: dict[str, np.ndarray] = {}

    def add(var: Variable, c):
        variables.append(var)
        coefs[var.name] = np.asarray(c, dtype=np.float64)

    if spec.kind is Scenario.FRONTDOOR:
        zs = z_block("Z", D)
        add(Variable("U", BINARY, latent=True), draw(1))
        add(Variable("X", BINARY, ("U",)), [*draw(1), rng.uniform(0.5, 1.5)])
        for z in zs:
            add(Variable(z, BINARY, ("X",)), draw(2))
        add(
            Variable("Y", UNIT, (*zs, "U"), SQUASHED),
            [*draw(1 + D), rng.uniform(0.5, 1.5)],
        )
        treatments, outcome = ("X",), "Y"
        columns = ("X", *zs, "Y")
    elif spec.kind is Scenario.SURROGATE:
        zs = z_block("Z", D)
        for z in zs:
            add(Variable(z, BINARY), draw(1))
        add(Variable("X", BINARY, zs), draw(1 + D))
        # W is the complement of X: the surrogate grid evaluates (x, w) in {(0,1), (1,0)}
        add(Variable("W", BINARY, ("X",), AFFINE), [1.0, -1.0])
        add(Variable("Y", UNIT, (*zs, "W"), SQUASHED), draw(2 + D))
        treatments, outcome = ("X",), "Y"
        columns = ("X", "W", *zs, "Y")
    elif spec.kind is Scenario.MSBD:
        z1 = z_block("Z1_", D)
        z2 = z_block("Z2_", D)
        for z in z1:
            add(Variable(z, BINARY), draw(1))
        add(Variable("X1", BINARY, z1), draw(1 + D))
        add(Variable("Y1", BINARY, ("X1", *z1)), draw(2 + D))
        for z in z2:
            add(Variable(z, BINARY, (*z1, "X1", "Y1")), draw(3 + D))
        add(Variable("X2", BINARY, ("X1", "Y1", *z2)), draw(3 + D))
        add(
            Variable("Y2", UNIT, (*z1, *z2, "X1", "Y1", "X2"), SQUASHED),
            draw(4 + 2 * D),
        )
        treatments, outcome = ("X1", "X2"), "Y2"
        columns = (*z1, "X1", "Y1", *z2, "X2", "Y2")
    else:  # pragma: no cover - enum is closed
        raise ValueError(spec.kind)

    return Scm(
        kind=spec.kind,
        dim=D,
        variables=tuple(variables),
        coefficients=coefs,
        noise_sd=float(spec.noise_sd),
        treatments=treatments,
        outcome=outcome,
        columns=columns,
    )


def assignment_grid(scm_or_kind) -> list[dict[str, int]]:
    """All treatment assignments of a scenario in canonical order."""
    kind = scm_or_kind.kind if isinstance(scm_or_kind, Scm) else Scenario(scm_or_kind)
    names = ("X1", "X2") if kind is Scenario.MSBD else ("X",)
    return [dict(zip(names, bits)) for bits in itertools.product((0, 1), repeat=len(names))]


def validate_assignment(scm: Scm, a: Mapping[str, int]) -> dict[str, int]:
    if set(a) != set(scm.treatments):
        raise AssignmentError(
            f"{scm.kind.value} assignments must set exactly {list(scm.treatments)}, got {sorted(a)}"
        )
    out = {}
    for k, v in a.items():
        if v not in (0, 1):
            raise AssignmentError(f"treatment {k} must be 0 or 1, got {v!r}")
        out[k] = int(v)
    return out


# --- random streams -------------------------------------------------------


def _stream_key(seed: int, var_index: int, stream: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), var_index, stream])
    return ss.generate_state(2, np.uint64)


def _open_uniforms(key: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1) for rows [start, stop) of one stream.

    ``start`` must be a multiple of the RNG block size.
    """
    n = stop - start
    first = start // _CHUNK
    out = np.empty(n, dtype=np.float64)
    for k, s in enumerate(range(0, n, _CHUNK)):
        e = min(s + _CHUNK, n)
        bg = np.random.Philox(key=key, counter=[0, first + k, 0, 0])
        raw = bg.random_raw(e - s)
        out[s:e] = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return out


def _linear(coef: np.ndarray, parents: Sequence[np.ndarray], n: int) -> np.ndarray:
    eta = np.full(n, coef[0])
    for c, p in zip(coef[1:], parents):
        if c != 0.0:
            eta += c * p
    return eta


def _simulate(
    scm: Scm, seed: int, fixed: Mapping[str, int], start: int, stop: int
) -> dict[str, np.ndarray]:
    assert start % _CHUNK == 0
    n = stop - start
    values: dict[str, np.ndarray] = {}
    for i, var in enumerate(scm.variables):
        if var.name in fixed:
            values[var.name] = np.full(n, float(fixed[var.name]))
            continue
        coef = scm.coefficients[var.name]
        eta = _linear(coef, [values[p] for p in var.parents], n)
        if var.mechanism == LOGISTIC:
            u = _open_uniforms(_stream_key(seed, i, 0), start, stop)
            values[var.name] = (u < expit(eta)).astype(np.float64)
        elif var.mechanism == AFFINE:
            values[var.name] = eta
        elif var.mechanism == SQUASHED:
            if scm.noise_sd > 0:
                u = _open_uniforms(_stream_key(seed, i, 1), start, stop)
                eta = eta + scm.noise_sd * ndtri(u)
            values[var.name] = expit(eta)
        else:
            raise ValueError(f"unknown mechanism {var.mechanism!r}")
    return values


def _to_dataset(scm: Scm, values: Mapping[str, np.ndarray], keep_latent: bool) -> Dataset:
    names = list(scm.columns)
    if keep_latent:
        names += [v for v in scm.latents if v not in names]
    kinds = tuple(scm.variable(c).kind for c in names)
    mat = np.column_stack([values[c] for c in names])
    return Dataset(tuple(names), kinds, mat)


def _check_n(n) -> int:
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    return int(n)


def sample(scm: Scm, n: int, seed: int, *, keep_latent: bool = False) -> Dataset:
    """Draw ``n`` observational rows by ancestral sampling.

    Latent confounders are simulated but dropped unless ``keep_latent``.
    """
    n = _check_n(n)
    return _to_dataset(scm, _simulate(scm, seed, {}, 0, n), keep_latent)


def sample_do(
    scm: Scm, a: Mapping[str, int], n: int, seed: int, *, keep_latent: bool = False
) -> Dataset:
    """Ancestral sampling in the model mutilated by ``do(a)``."""
    a = validate_assignment(scm, a)
    n = _check_n(n)
    return _to_dataset(scm, _simulate(scm, seed, a, 0, n), keep_latent)


def mc_truth(scm: Scm, a: Mapping[str, int], n: int = 10**6, seed: int = 0) -> float:
    """Monte-Carlo interventional mean of the outcome over ``n`` do-samples.

    Rows are simulated in blocks to bound memory; the counter-based streams
    make the result identical to averaging one ``sample_do`` draw.
    """
    a = validate_assignment(scm, a)
    n = _check_n(n)
    block = 16 * _CHUNK
    total = 0.0
    for start in range(0, n, block):
        stop = min(start + block, n)
        total += float(_simulate(scm, seed, a, start, stop)[scm.outcome].sum())
    return total / n


def squashed_mean(eta: np.ndarray, noise_sd: float) -> np.ndarray:
    """E[sigmoid(eta + eps)], eps ~ N(0, noise_sd^2), by 21-point Gauss-Hermite."""
    eta = np.asarray(eta, dtype=np.float64)
    if noise_sd == 0:
        return expit(eta)
    nodes, wts = hermgauss(GH_POINTS)
    shifted = eta[..., None] + np.sqrt(2.0) * noise_sd * nodes
    return expit(shifted) @ wts / np.sqrt(np.pi)


def exact_truth(scm: Scm, a: Mapping[str, int]) -> float:
    """E[outcome | do(a)] by enumerating every binary configuration.

    Each configuration of the non-intervened random binary variables is
    weighted by its exact probability in the mutilated model; the outcome's
    conditional mean is the Gauss-Hermite smoothed structural mean.
    """
    a = validate_assignment(scm, a)
    if scm.n_binary() > MAX_ENUM_BINARY:
        raise EnumerationBoundError(
            f"{scm.n_binary()} binary variables exceed the enumeration bound of {MAX_ENUM_BINARY}"
        )
    free = [
        v.name for v in scm.variables if v.mechanism == LOGISTIC and v.name not in a
    ]
    k = len(free)
    bit_of = {name: j for j, name in enumerate(free)}
    total = 0.0
    block = 1 << 16
    n_cfg = 1 << k
    for start in range(0, n_cfg, block):
        idx = np.arange(start, min(start + block, n_cfg), dtype=np.int64)
        m = idx.shape[0]
        prob = np.ones(m)
        values: dict[str, np.ndarray] = {}
        y_mean = None
        for var in scm.variables:
            if var.name in a:
                values[var.name] = np.full(m, float(a[var.name]))
                continue
            eta = _linear(scm.coefficients[var.name], [values[p] for p in var.parents], m)
            if var.mechanism == LOGISTIC:
                bit = ((idx >> bit_of[var.name]) & 1).astype(np.float64)
                p1 = expit(eta)
                prob *= np.where(bit == 1.0, p1, 1.0 - p1)
                values[var.name] = bit
            elif var.mechanism == AFFINE:
                values[var.name] = eta
            else:
                mean = squashed_mean(eta, scm.noise_sd)
                values[var.name] = mean
                if var.name == scm.outcome:
                    y_mean = mean
        total += float(prob @ y_mean)
    return total


def truth_grid(
    scm: Scm, mode: str = "exact", n: int = 10**6, seed: int = 0
) -> dict[tuple[int, ...], float]:
    """Truth for every assignment of the scenario's grid, keyed by value tuples."""
    out = {}
    for a in assignment_grid(scm):
        key = tuple(a[t] for t in scm.treatments)
        if mode == "exact":
            out[key] = exact_truth(scm, a)
        elif mode == "mc":
            out[key] = mc_truth(scm, a, n, seed)
        else:
            raise ValueError(f"unknown truth mode {mode!r}")
    return out
