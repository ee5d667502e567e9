from __future__ import annotations

import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nncwo.bench import (
    MAAE_HEADER,
    RECORD_HEADER,
    BenchConfig,
    BenchRecord,
    GridMismatchError,
    MaaeRow,
    aae,
    aggregate,
    emit_csv,
    emit_svg,
    median,
    read_maae_csv,
    read_records_csv,
    run_benchmark,
)
from nncwo.estimators import EffectEstimate
from nncwo.neural import Hyperparams
from nncwo.scm import Scenario

FD = Scenario.FRONTDOOR
SVG = "{http://www.w3.org/2000/svg}"
FAST = Hyperparams(input_units=8, n_layers=1, units=(4,), dropout_rate=0.0,
                   dropout_rates=(0.0,), epochs=5)


def _est(kind, vals):
    return EffectEstimate(kind, vals)


def test_aae_identical_is_zero():
    e = _est(FD, {(0,): 0.3, (1,): 0.5})
    assert aae(e, e) == 0.0


def test_aae_two_point():
    assert aae(_est(FD, {(0,): 0.2, (1,): 0.6}), _est(FD, {(0,): 0.3, (1,): 0.5})) == pytest.approx(0.1)


def test_aae_msbd_single_discrepancy():
    keys = [(0, 0), (0, 1), (1, 0), (1, 1)]
    truth = _est(Scenario.MSBD, dict.fromkeys(keys, 0.5))
    est = _est(Scenario.MSBD, {**dict.fromkeys(keys, 0.5), (1, 0): 0.58})
    assert aae(est, truth) == pytest.approx(0.02)


def test_aae_grid_mismatch():
    fd = _est(FD, {(0,): 0.2, (1,): 0.6})
    sur = _est(Scenario.SURROGATE, {(0,): 0.2, (1,): 0.6})
    with pytest.raises(GridMismatchError):
        aae(fd, sur)


def test_median_order_independent():
    assert median([0.03, 0.01, 0.02]) == 0.02
    assert median([0.01, 0.02, 0.03]) == 0.02
    assert median([4.0, 1.0, 3.0, 2.0]) == 2.5


@settings(max_examples=100)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_median_matches_naive_sort(xs):
    s = sorted(xs)
    k = len(s)
    ref = s[k // 2] if k % 2 else (s[k // 2 - 1] + s[k // 2]) / 2
    assert median(xs) == ref
    assert median(xs) == pytest.approx(float(np.median(xs)))


def test_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(FD, sizes=(1000, 500))
    with pytest.raises(ValueError):
        BenchConfig(FD, reps=0)
    with pytest.raises(ValueError):
        BenchConfig(FD, dims=(30,), truth_mode="exact")


def test_config_json_roundtrip(tmp_path):
    import json

    cfg = BenchConfig(Scenario.MSBD, dims=(1, 2), sizes=(100, 200), reps=3, hp=FAST)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert BenchConfig.from_json(path) == cfg


def test_full_scale():
    cfg = BenchConfig.full(FD)
    assert cfg.reps == 100 and cfg.truth_samples == 10**7
    assert cfg.sizes == tuple(range(500, 10001, 500))


def _records():
    recs = [
        BenchRecord("frontdoor", m, 1, s, r, 0.01 * (r + 1) + (0.001 if m == "cwo" else 0.0))
        for m in ("nncwo", "cwo") for s in (500, 1000) for r in range(3)
    ]
    return recs[::-1], aggregate(recs)


def test_aggregate_is_median_per_cell():
    _, rows = _records()
    assert len(rows) == 4
    for row in rows:
        assert row.reps == 3
        assert row.maae == pytest.approx(0.02 + (0.001 if row.method == "cwo" else 0.0))


def test_csv_roundtrip_and_layout(tmp_path):
    recs, rows = _records()
    rp, mp = emit_csv(recs, rows, tmp_path / "out")
    lines = open(rp).read().splitlines()
    assert lines[0] == ",".join(RECORD_HEADER)
    assert open(mp).read().splitlines()[0] == ",".join(MAAE_HEADER)
    back = read_records_csv(rp)
    assert back == sorted(recs, key=lambda r: (r.scenario, r.method, r.dim, r.size, r.rep))
    assert read_maae_csv(mp) == rows


def test_csv_single_record(tmp_path):
    rec = [BenchRecord("msbd", "cwo", 1, 500, 0, 1 / 3)]
    rp, _ = emit_csv(rec, aggregate(rec), tmp_path / "one")
    lines = open(rp).read().splitlines()
    assert len(lines) == 2
    assert lines[1] == "msbd,cwo,1,500,0,0.33333333333333331,0"


def test_csv_unwritable_path(tmp_path):
    recs, rows = _records()
    with pytest.raises(OSError):
        emit_csv(recs, rows, tmp_path / "missing" / "out")


def _svg_rows(decreasing=True):
    sizes = (500, 1000, 2000, 4000, 8000)
    rows = []
    for m, base in (("nncwo", 0.05), ("cwo", 0.06)):
        for i, s in enumerate(sizes):
            rows.append(MaaeRow("frontdoor", m, 16, s, base / (i + 1), 20))
    return rows


def test_svg_structure(tmp_path):
    path = emit_svg(_svg_rows(), 16, tmp_path / "p.svg")
    root = ET.parse(path).getroot()
    lines = root.findall(f".//{SVG}polyline")
    assert len(lines) == 2
    by_method = {pl.get("data-method"): pl for pl in lines}
    assert by_method["cwo"].get("stroke-dasharray")
    assert by_method["nncwo"].get("stroke-dasharray") is None
    for pl in lines:
        pts = [tuple(map(float, p.split(","))) for p in pl.get("points").split()]
        assert len(pts) == 5
        xs, ys = zip(*pts)
        assert list(xs) == sorted(xs)
        # decreasing MAAE -> increasing pixel y
        assert all(b > a for a, b in zip(ys, ys[1:]))
    text = open(path).read()
    assert "Sample size" in text and "MAAE" in text and "NN-CWO" in text


def test_svg_empty_selection(tmp_path):
    with pytest.raises(ValueError):
        emit_svg(_svg_rows(), 3, tmp_path / "p.svg")


def _tiny_cfg(**kw):
    base = dict(scenario=Scenario.SURROGATE, dims=(1, 2), sizes=(200, 400), reps=2,
                truth_mode="exact", hp=FAST, base_seed=11)
    base.update(kw)
    return BenchConfig(**base)


def test_run_benchmark_single_rep_maae_equals_aae():
    recs, rows = run_benchmark(_tiny_cfg(reps=1, dims=(1,)))
    for row in rows:
        (rec,) = [r for r in recs if (r.method, r.dim, r.size) == (row.method, row.dim, row.size)]
        assert row.maae == rec.aae


def test_run_benchmark_shapes_and_progress():
    seen = []
    recs, rows = run_benchmark(_tiny_cfg(), progress=lambda d, s, r: seen.append((d, s, len(r))))
    assert len(recs) == 2 * 2 * 2 * 2
    assert len(rows) == 2 * 2 * 2
    assert sorted(seen) == [(1, 200, 2), (1, 400, 2), (2, 200, 2), (2, 400, 2)]
    assert all(r.wall_time == 0.0 for r in recs)


def test_run_benchmark_reproducible_across_workers(tmp_path):
    cfg = _tiny_cfg()
    a = emit_csv(*run_benchmark(cfg, workers=1), tmp_path / "a")
    b = emit_csv(*run_benchmark(cfg, workers=2), tmp_path / "b")
    for pa, pb in zip(a, b):
        assert open(pa, "rb").read() == open(pb, "rb").read()


def test_failed_replication_is_excluded_with_warning(monkeypatch):
    import nncwo.bench as bench

    real = bench.estimate

    def flaky(scenario, data, hp, method, clip_eps, seed):
        if method.value == "nncwo" and data.n == 200:
            raise FloatingPointError("boom")
        return real(scenario, data, hp, method, clip_eps, seed)

    monkeypatch.setattr(bench, "estimate", flaky)
    with pytest.warns(RuntimeWarning, match="boom"):
        recs, rows = run_benchmark(_tiny_cfg(dims=(1,)))
    assert not any(r.method == "nncwo" and r.size == 200 for r in rows)
    assert any(r.method == "cwo" and r.size == 200 for r in rows)
    assert re.search("nncwo", " ".join(r.method for r in recs))
