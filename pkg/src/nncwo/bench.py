"""Monte-Carlo benchmark: AAE per replication, MAAE per cell, CSV and SVG output."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, fields
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .dataset import format_float
from .estimators import Backend, EffectEstimate, estimate
from .neural import Hyperparams
from .scm import (
    MAX_ENUM_BINARY,
    Scenario,
    ScenarioSpec,
    Scm,
    build_scenario,
    sample,
    truth_grid,
)
from .weights import DEFAULT_CLIP_EPS

log = logging.getLogger(__name__)

DESK_SIZES = (500, 1000, 2000, 4000, 6000, 8000, 10000)
PAPER_SIZES = tuple(range(500, 10001, 500))
DESK_DIMS = {Scenario.FRONTDOOR: (1, 16), Scenario.SURROGATE: (1, 16), Scenario.MSBD: (1, 8)}

RECORD_HEADER = ("scenario", "method", "dim", "size", "rep", "aae", "wall_time")
MAAE_HEADER = ("scenario", "method", "dim", "size", "maae", "reps")


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    scenario: Scenario
    dims: tuple[int, ...] = (1, 16)
    sizes: tuple[int, ...] = DESK_SIZES
    reps: int = 20
    methods: tuple[Backend, ...] = (Backend.NNCWO, Backend.CWO)
    truth_mode: str = "mc"
    truth_samples: int = 10**6
    base_seed: int = 0
    hp: Hyperparams = field(default_factory=Hyperparams)
    clip_eps: float = DEFAULT_CLIP_EPS
    # wall times are nondeterministic; unless enabled they are written as 0
    record_timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "methods", tuple(Backend(m) for m in self.methods))
        if isinstance(self.hp, dict):
            object.__setattr__(self, "hp", Hyperparams.from_dict(self.hp))
        if not self.dims or any(d < 1 for d in self.dims):
            raise ValueError("dims must be a nonempty list of positive integers")
        if len(set(self.dims)) != len(self.dims):
            raise ValueError("dims must be distinct")
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise ValueError("sizes must be a nonempty list of positive integers")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError("sizes must be strictly increasing")
        if int(self.reps) != self.reps or self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.methods or len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must be a nonempty list of distinct backends")
        if self.truth_mode not in ("exact", "mc"):
            raise ValueError(f"truth_mode must be 'exact' or 'mc', got {self.truth_mode!r}")
        if self.truth_samples < 1:
            raise ValueError("truth_samples must be >= 1")
        if not 0 < self.clip_eps < 0.5:
            raise ValueError("clip_eps must lie in (0, 0.5)")
        if self.truth_mode == "exact":
            for d in self.dims:
                n_bin = _binary_count(self.scenario, d)
                if n_bin > MAX_ENUM_BINARY:
                    raise ValueError(
                        f"exact truth at dim={d} needs {n_bin} binary variables "
                        f"(bound {MAX_ENUM_BINARY})"
                    )

    @classmethod
    def desk(cls, scenario, **overrides) -> "BenchConfig":
        scenario = Scenario(scenario)
        base = dict(scenario=scenario, dims=DESK_DIMS[scenario])
        base.update(overrides)
        return cls(**base)

    @classmethod
    def full(cls, scenario, **overrides) -> "BenchConfig":
        """Full protocol: 100 replications, sizes 500..10000 step 500, 10^7 truth samples."""
        scenario = Scenario(scenario)
        base = dict(
            scenario=scenario,
            dims=DESK_DIMS[scenario],
            sizes=PAPER_SIZES,
            reps=100,
            truth_mode="mc",
            truth_samples=10**7,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "dims": list(self.dims),
            "sizes": list(self.sizes),
            "reps": self.reps,
            "methods": [m.value for m in self.methods],
            "truth_mode": self.truth_mode,
            "truth_samples": self.truth_samples,
            "base_seed": self.base_seed,
            "hp": self.hp.to_dict(),
            "clip_eps": self.clip_eps,
            "record_timing": self.record_timing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown bench config keys: {unknown}")
        if "scenario" not in d:
            raise ValueError("bench config needs a scenario")
        d = dict(d)
        if "hp" in d:
            d["hp"] = Hyperparams.from_dict(d["hp"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _binary_count(scenario: Scenario, dim: int) -> int:
    if scenario is Scenario.FRONTDOOR:
        return dim + 2  # U, X, Z block
    if scenario is Scenario.SURROGATE:
        return dim + 2  # X, W, Z block
    return 2 * dim + 3  # Z1, Z2 blocks, X1, Y1, X2


@dataclass(frozen=True)
class BenchRecord:
    scenario: str
    method: str
    dim: int
    size: int
    rep: int
    aae: float
    wall_time: float = 0.0


@dataclass(frozen=True)
class MaaeRow:
    scenario: str
    method: str
    dim: int
    size: int
    maae: float
    reps: int


@dataclass(frozen=True)
class BenchFailure:
    scenario: str
    method: str
    dim: int
    size: int
    rep: int
    error: str


def derive_seed(*parts: int) -> int:
    """A 64-bit seed that is a pure function of ``parts``."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


# stream tags keep derived seeds for different purposes apart
_COEFF, _DATA, _TRUTH, _FIT = 1, 2, 3, 4


def coeff_seed(cfg: BenchConfig, dim: int) -> int:
    return derive_seed(cfg.base_seed, _COEFF, dim)


def data_seed(cfg: BenchConfig, dim: int, size: int, rep: int) -> int:
    return derive_seed(cfg.base_seed, _DATA, dim, size, rep)


def aae(est: EffectEstimate, truth: EffectEstimate) -> float:
    """Mean absolute difference between two estimates over the treatment grid."""
    if est.scenario != truth.scenario or list(est.values) != list(truth.values):
        raise GridMismatchError(
            f"grids differ: {est.scenario.value}{list(est.values)} vs "
            f"{truth.scenario.value}{list(truth.values)}"
        )
    diffs = [abs(est.values[k] - truth.values[k]) for k in truth.values]
    return float(sum(diffs) / len(diffs))


def median(values: Sequence[float]) -> float:
    """Median; mean of the two central order statistics for even counts."""
    xs = sorted(values)
    if not xs:
        raise ValueError("median of empty sequence")
    m = len(xs) // 2
    if len(xs) % 2:
        return float(xs[m])
    return float((xs[m - 1] + xs[m]) / 2.0)


def scenario_truth(cfg: BenchConfig, scm: Scm, dim: int) -> EffectEstimate:
    vals = truth_grid(scm, cfg.truth_mode, cfg.truth_samples, derive_seed(cfg.base_seed, _TRUTH, dim))
    return EffectEstimate(cfg.scenario, vals)


@dataclass
class _CellResult:
    dim: int
    size: int
    rep: int
    records: list[BenchRecord]
    failures: list[BenchFailure]
    checksums: list[str]


@lru_cache(maxsize=8)
def _model(spec: ScenarioSpec) -> Scm:
    # models are rebuilt per process from their (picklable) spec
    return build_scenario(spec)


def scenario_spec(cfg: BenchConfig, dim: int) -> ScenarioSpec:
    return ScenarioSpec(cfg.scenario, dim, coeff_seed(cfg, dim))


def run_replication(cfg: BenchConfig, truth: EffectEstimate, dim: int,
                    size: int, rep: int) -> _CellResult:
    """Draw one dataset and run every method on it."""
    data = sample(_model(scenario_spec(cfg, dim)), size, data_seed(cfg, dim, size, rep))
    checksum = data.checksum()
    fit_seed = derive_seed(cfg.base_seed, _FIT, dim, size, rep)
    records, failures, sums = [], [], []
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            est = estimate(cfg.scenario, data, cfg.hp, method, cfg.clip_eps, fit_seed)
            err = aae(est, truth)
            if not np.isfinite(err):
                raise FloatingPointError("non-finite AAE")
        except Exception as exc:  # recorded and reported, never silently dropped
            failures.append(BenchFailure(cfg.scenario.value, method.value, dim, size, rep,
                                         f"{type(exc).__name__}: {exc}"))
            continue
        finally:
            sums.append(data.checksum())
        wall = time.perf_counter() - t0 if cfg.record_timing else 0.0
        records.append(BenchRecord(cfg.scenario.value, method.value, dim, size, rep, err, wall))
    if any(s != checksum for s in sums):
        raise RuntimeError("a method modified the shared dataset")
    return _CellResult(dim, size, rep, records, failures, [checksum] + sums)


def _sort_key(r):
    return (r.scenario, r.method, r.dim, r.size, getattr(r, "rep", 0))


def aggregate(records: Iterable[BenchRecord]) -> list[MaaeRow]:
    cells: dict[tuple, list[float]] = {}
    for r in records:
        cells.setdefault((r.scenario, r.method, r.dim, r.size), []).append(r.aae)
    rows = [MaaeRow(*key, median(v), len(v)) for key, v in cells.items()]
    return sorted(rows, key=_sort_key)


def run_benchmark(
    cfg: BenchConfig,
    workers: int = 1,
    progress: Callable[[int, int, list[MaaeRow]], None] | None = None,
) -> tuple[list[BenchRecord], list[MaaeRow]]:
    """Run every (dim, size, replication) cell and aggregate MAAE.

    Truth is computed once per dimension. Replications are independent and
    seeded from ``cfg.base_seed``, so the output does not depend on
    ``workers`` or completion order. ``progress(dim, size, rows)`` is called
    once a (dim, size) cell has all its replications.

    Failed replications are excluded from the medians; each one triggers a
    ``RuntimeWarning``.
    """
    truths = {d: scenario_truth(cfg, _model(scenario_spec(cfg, d)), d) for d in cfg.dims}
    tasks = [(d, s, r) for d in cfg.dims for s in cfg.sizes for r in range(cfg.reps)]
    pending = {(d, s): cfg.reps for d in cfg.dims for s in cfg.sizes}
    by_cell: dict[tuple[int, int], list[BenchRecord]] = {}
    results: list[_CellResult] = []

    def collect(res: _CellResult):
        results.append(res)
        for f in res.failures:
            msg = (f"replication failed ({f.scenario} {f.method} dim={f.dim} size={f.size} "
                   f"rep={f.rep}): {f.error}")
            log.warning(msg)
            warnings.warn(msg, RuntimeWarning)
        key = (res.dim, res.size)
        by_cell.setdefault(key, []).extend(res.records)
        pending[key] -= 1
        if pending[key] == 0 and progress is not None:
            progress(res.dim, res.size, aggregate(by_cell[key]))

    if workers <= 1:
        for d, s, r in tasks:
            collect(run_replication(cfg, truths[d], d, s, r))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(run_replication, cfg, truths[d], d, s, r) for d, s, r in tasks]
            for fut in as_completed(futs):
                collect(fut.result())

    records = sorted((r for res in results for r in res.records), key=_sort_key)
    return records, aggregate(records)


# --- CSV ------------------------------------------------------------------


def _write_csv_atomic(path: str, header, rows) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def emit_csv(records: Sequence[BenchRecord], maae_rows: Sequence[MaaeRow],
             path_prefix: str | os.PathLike) -> tuple[str, str]:
    """Write ``<prefix>_records.csv`` and ``<prefix>_maae.csv``; return their paths."""
    if not records or not maae_rows:
        raise ValueError("nothing to write")
    prefix = os.fspath(path_prefix)
    rec_path, maae_path = f"{prefix}_records.csv", f"{prefix}_maae.csv"
    rec_rows = [
        (r.scenario, r.method, r.dim, r.size, r.rep, format_float(r.aae), format_float(r.wall_time))
        for r in sorted(records, key=_sort_key)
    ]
    maae = [
        (m.scenario, m.method, m.dim, m.size, format_float(m.maae), m.reps)
        for m in sorted(maae_rows, key=_sort_key)
    ]
    _write_csv_atomic(rec_path, RECORD_HEADER, rec_rows)
    try:
        _write_csv_atomic(maae_path, MAAE_HEADER, maae)
    except BaseException:
        os.remove(rec_path)
        raise
    return rec_path, maae_path


def read_records_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        BenchRecord(r["scenario"], r["method"], int(r["dim"]), int(r["size"]), int(r["rep"]),
                    float(r["aae"]), float(r["wall_time"]))
        for r in rows
    ]


def read_maae_csv(path) -> list[MaaeRow]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        MaaeRow(r["scenario"], r["method"], int(r["dim"]), int(r["size"]), float(r["maae"]), int(r["reps"]))
        for r in rows
    ]


# --- SVG ------------------------------------------------------------------

_STYLE = {
    Backend.NNCWO.value: dict(label="NN-CWO", color="#1f5fa8", dash=None),
    Backend.CWO.value: dict(label="CWO", color="#c0392b", dash="8 5"),
}
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 150, 40, 60


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    first = np.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-12 * max(1.0, abs(hi)):
        out.append(float(round(v / step) * step))
        v += step
    return out


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def emit_svg(maae_rows: Sequence[MaaeRow], dim: int, path: str | os.PathLike,
             title: str | None = None) -> str:
    """Standalone SVG line chart of MAAE against sample size for one dimension.

    One polyline per method; NN-CWO solid, CWO dashed.
    """
    rows = [r for r in maae_rows if r.dim == dim]
    if not rows:
        raise ValueError(f"no MAAE rows for dim={dim}")
    methods = sorted({r.method for r in rows}, key=lambda m: (m != Backend.NNCWO.value, m))
    sizes = sorted({r.size for r in rows})
    x_lo, x_hi = sizes[0], sizes[-1]
    y_hi = max(r.maae for r in rows) * 1.1 or 1.0
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(x):
        return _ML + (pw * (x - x_lo) / (x_hi - x_lo) if x_hi > x_lo else pw / 2)

    def py(y):
        return _MT + ph * (1.0 - y / y_hi)

    scen = rows[0].scenario
    title = title or f"MAAE vs sample size ({scen}, D={dim})"
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_ML + pw / 2:.1f}" y="{_MT / 2 + 5:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
        f'<g class="axes" stroke="black" stroke-width="1">'
        f'<line x1="{_ML}" y1="{_MT + ph}" x2="{_ML + pw}" y2="{_MT + ph}"/>'
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_MT + ph}"/></g>',
    ]
    for t in _ticks(x_lo, x_hi):
        x = px(t)
        out.append(f'<line class="tick" x1="{x:.2f}" y1="{_MT + ph}" x2="{x:.2f}" y2="{_MT + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{_MT + ph + 20}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{_fmt(t)}</text>')
    for t in _ticks(0.0, y_hi):
        y = py(t)
        out.append(f'<line class="tick" x1="{_ML - 5}" y1="{y:.2f}" x2="{_ML}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<line x1="{_ML}" y1="{y:.2f}" x2="{_ML + pw}" y2="{y:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{_ML - 8}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{t:.4g}</text>')
    out.append(f'<text x="{_ML + pw / 2:.1f}" y="{_H - 15}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="13">Sample size N</text>')
    out.append(f'<text x="18" y="{_MT + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="13" transform="rotate(-90 18 {_MT + ph / 2:.1f})">MAAE</text>')
    for i, m in enumerate(methods):
        style = _STYLE.get(m, dict(label=m, color="#555555", dash="2 3"))
        pts = sorted((r.size, r.maae) for r in rows if r.method == m)
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        dash = f' stroke-dasharray="{style["dash"]}"' if style["dash"] else ""
        out.append(f'<polyline class="series" data-method="{m}" points="{coords}" fill="none" '
                   f'stroke="{style["color"]}" stroke-width="2"{dash}/>')
        ly = _MT + 20 + 22 * i
        lx = _ML + pw + 15
        out.append(f'<g class="legend"><line x1="{lx}" y1="{ly}" x2="{lx + 30}" y2="{ly}" '
                   f'stroke="{style["color"]}" stroke-width="2"{dash}/>'
                   f'<text x="{lx + 38}" y="{ly + 4}" font-family="sans-serif" font-size="12">'
                   f'{style["label"]}</text></g>')
    out.append("</svg>")
    path = os.fspath(path)
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return path
