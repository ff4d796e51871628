import math
import warnings

import numpy as np
import pytest

from tomotactile import AdhesionSpec, GradientSpec, acquire_frame, apply_regions, ContactSpec
from tomotactile.geometry import ConfigurationError
from tomotactile.metrics import FitParams
from tomotactile import studies
from tomotactile.studies import (METRICS, StudyError, SimConfig, SweepGrid, TABLE_I,
                                 block_current, compare_frames, default_diameters,
                                 material_positioning, mean_position_error, nearest_index,
                                 normalize_value, run_adhesion_study, run_performance_map,
                                 run_thickness_study, scale_divisions, shared_solver,
                                 table_i_records, write_manifest, write_perfmap_csv,
                                 write_perfmap_pgms)

COARSE = SimConfig(divisions=(8, 8, 2), shell_divisions=8)
ON_NODES = ((0.0, 0.0), (15.0, 15.0), (-15.0, 7.5))


def small_grid(n=3):
    ax = np.logspace(-3, 2, n)
    return SweepGrid(ax, ax.copy(), np.logspace(-3, 1, 5), pa_positions=ON_NODES)


@pytest.fixture(scope="module")
def small_map():
    return run_performance_map(small_grid(), COARSE)


def test_scale_divisions():
    assert scale_divisions((30, 30, 5), 0.5) == (16, 16, 3)
    assert scale_divisions((30, 30, 5), 1.0) == (30, 30, 5)
    assert scale_divisions((30, 30, 5), 2.0) == (60, 60, 10)
    with pytest.raises(ConfigurationError):
        scale_divisions((30, 30, 5), 0.0)


def test_scaled_keeps_shell():
    cfg = SimConfig().scaled(0.5)
    assert cfg.divisions == (16, 16, 3) and cfg.shell_divisions == 45


@pytest.mark.parametrize("kw", [dict(sigma_low=[1.0, 0.5]), dict(contact=[0.1, 1.0, 2.0]),
                                dict(sigma_up=[0.0, 1.0]), dict(pa_positions=())])
def test_sweep_grid_validation(kw):
    base = dict(sigma_low=[0.1, 1.0], sigma_up=[0.1, 1.0], contact=[0.1, 0.2, 0.5, 1.0])
    base.update(kw)
    with pytest.raises(ConfigurationError):
        SweepGrid(**base)


def test_default_grid():
    g = SweepGrid.default()
    assert g.sigma_low.size == 11 and math.isclose(g.sigma_low[0], 1e-3)
    assert math.isclose(g.sigma_up[-1], 100.0)
    assert math.isclose(g.f_h, 0.1) and math.isclose(g.sr_level, 0.1)


def test_map_shape_and_normalization(small_map):
    assert small_map.shape == (3, 3)
    assert not small_map.failures
    for m in METRICS:
        n = small_map.normalized(m)
        assert np.all((n >= 0) & (n <= 1))
        assert not small_map.normalization[m]["degenerate"]
        assert n.min() == 0.0 and n.max() == 1.0
        raw = small_map.raw(m)
        # the maximal raw record normalizes to exactly 1
        assert n.flat[np.argmax(raw)] == 1.0


def test_balanced_score_is_product(small_map):
    prod = np.ones(small_map.shape)
    for m in METRICS:
        prod *= small_map.normalized(m)
    assert np.array_equal(prod, small_map.balanced_score())


def test_degenerate_metric_normalizes_to_one():
    recs = [studies.PerformanceRecord(1.0, float(k + 1), 0.3, 0.5 + k) for k in range(4)]
    meta = studies._normalization(recs)
    assert meta["sens"]["degenerate"] and meta["sr"]["degenerate"]
    assert not meta["fmax"]["degenerate"]
    studies._apply_normalization(recs, meta)
    assert all(r.normalized["sens"] == 1.0 for r in recs)
    assert [r.normalized["fmax"] for r in recs] == pytest.approx([0, 1 / 3, 2 / 3, 1])


def test_normalize_value_clamps_with_warning():
    meta = {"min": 1.0, "max": 3.0, "degenerate": False}
    assert normalize_value(2.0, meta) == 0.5
    with pytest.warns(UserWarning, match="clamped"):
        assert normalize_value(5.0, meta) == 1.0
    assert math.isnan(normalize_value(float("nan"), meta))


def test_map_deterministic_and_thread_independent(small_map, tmp_path):
    again = run_performance_map(small_grid(), COARSE)
    threaded = run_performance_map(small_grid(), SimConfig(divisions=(8, 8, 2), shell_divisions=8,
                                                           threads=3))
    paths = []
    for k, res in enumerate((small_map, again, threaded)):
        p = tmp_path / f"m{k}.csv"
        write_perfmap_csv(res, p)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1] == paths[2]
    lines = paths[0].decode().splitlines()
    assert len(lines) == 10 and lines[0].startswith("i_low,i_up")


def test_uniform_diagonal_is_a_uniform_mesh():
    s = 0.3
    graded = COARSE.volume(GradientSpec(s, s, 0.0, COARSE.height))
    plain = COARSE.volume()
    plain = plain.with_sigma(np.full(plain.n_elements, s))
    c = ContactSpec((0.0, 0.0), 4.0, 0.1)
    a = acquire_frame(apply_regions(graded, c)).values
    b = acquire_frame(apply_regions(plain, c)).values
    assert np.array_equal(a, b)


def test_table_i_placement(small_map):
    rows = dict(table_i_records(small_map))
    assert list(rows) == ["A", "B", "C", "D", "BC", "DA"]
    g = small_map.grid
    bc = rows["BC"]
    assert bc.i_up == nearest_index(g.sigma_up, TABLE_I["B"])
    assert bc.i_low == nearest_index(g.sigma_low, TABLE_I["C"])
    with pytest.raises(ConfigurationError):
        table_i_records(small_map, labels=("ABC",))


def test_material_positioning(small_map):
    table = material_positioning(table_i_records(small_map), small_map)
    assert len(table.sr_fmax) == 6 and len(table.diagonal) == 3
    for _, a, b in table.sr_fmax + table.pa_sens:
        assert 0.0 <= a <= 1.0 and 0.0 <= b <= 1.0


def test_failure_limit_aborts_with_partial(monkeypatch):
    calls = {"n": 0}
    real = studies.fit_output_model

    def flaky(f, phi, seed=0):
        calls["n"] += 1
        if calls["n"] % 3 == 0:
            nan = float("nan")
            return FitParams(nan, nan, nan, converged=False)
        return real(f, phi, seed=seed)

    monkeypatch.setattr(studies, "fit_output_model", flaky)
    with pytest.raises(StudyError) as info:
        run_performance_map(small_grid(), COARSE)
    partial = info.value.partial
    assert partial is not None and len(partial.failures) == 3
    assert all(math.isnan(partial.records[f["i_low"]][f["i_up"]].sens)
               for f in partial.failures)


def test_artifact_writers(small_map, tmp_path):
    paths = write_perfmap_pgms(small_map, tmp_path)
    assert [p.name for p in paths] == [f"perfmap_{m}.pgm" for m in METRICS]
    write_manifest(tmp_path / "manifest.json", COARSE.as_dict(), small_map.timings,
                   small_map.failures, {"grid": small_map.grid.as_dict()})
    import json
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["config"]["divisions"] == [8, 8, 2] and doc["failures"] == []


def test_compare_frames_self_and_degenerate(rng):
    v = rng.uniform(0, 1, 256)
    corr, mae = compare_frames(v, v)
    assert math.isclose(corr, 1.0) and mae == 0.0
    assert compare_frames(3.0 * v, v)[1] < 1e-15
    with pytest.raises(StudyError):
        compare_frames(np.zeros(256), v)


def test_thickness_study_rows():
    cfg = SimConfig(divisions=(16, 16, 3))
    rows, ref = run_thickness_study((1, 4), cfg)
    assert [r.thickness for r in rows] == [1.0, 4.0]
    assert ref.size == 256
    for r in rows:
        assert -1 <= r.correlation <= 1 and r.mae >= 0 and 0 < r.max_potential <= cfg.v_cc
    with pytest.raises(ConfigurationError):
        run_thickness_study((0, 1), cfg)


def test_default_diameters_end_at_full_coverage():
    for n in (5, 7):
        ds = default_diameters(n)
        full = AdhesionSpec(n).full_coverage_diameter(60.0)
        assert ds[-1] == full and all(a < b for a, b in zip(ds, ds[1:]))


def test_full_coverage_matches_bare_detector():
    jac, solver = shared_solver(COARSE)
    full = AdhesionSpec(5, AdhesionSpec(5).full_coverage_diameter(60.0))
    a = mean_position_error(COARSE, full, jac, solver, ON_NODES)
    b = mean_position_error(COARSE, None, jac, solver, ON_NODES)
    assert abs(a - b) < 1e-9
    total, _ = block_current(COARSE, full)
    assert abs(total - 0.36) < 1e-9


def test_adhesion_study_validation_and_skip():
    with pytest.raises(ConfigurationError, match="outside"):
        run_adhesion_study((5,), [20.0], COARSE, ON_NODES)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = run_adhesion_study((5,), [1.0, 16.0], COARSE, ON_NODES)
    assert res.skipped == [{"n": 5, "diameter": 1.0}]
    assert any("cover no element" in str(w.message) for w in caught)
    assert [r.diameter for r in res.currents] == [16.0]
