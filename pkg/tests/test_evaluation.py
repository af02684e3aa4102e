import csv
import json

import numpy as np
import pytest

from dtloc import evaluation, rfmap
from dtloc.evaluation import ConfigError, ExperimentConfig


@pytest.fixture(scope="module")
def toy_db():
    """Well separated random fingerprints: any single noiseless entry identifies its position."""
    return rfmap.from_values(np.random.default_rng(8).uniform(-110.0, -50.0, size=(40, 8, 8)))


@pytest.fixture(scope="module")
def free_db(free_scene):
    return rfmap.build(free_scene)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("doc", [
    {"quantiles": [0.5, 1.5]},
    {"quantiles": [0.0]},
    {"trials": 0},
    {"experiments": ["error_map", "plots"]},
    {"ladder": [0, 1]},
    {"test_positions": "some"},
    {"sigma_dbm": -1},
    {"confidence": 1.0},
    {"no_such_key": 1},
])
def test_invalid_configs_are_rejected(doc):
    with pytest.raises(ConfigError):
        evaluation.config_from_dict(doc)


def test_config_file_round_trip(tmp_path):
    cfg = ExperimentConfig(trials=7, ladder=(1, 3), quantiles=(0.5, 1.0), test_positions=(2, 5))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert evaluation.load_config(path) == cfg
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        evaluation.load_config(path)


def test_ladder_beyond_database_is_rejected(toy_db):
    with pytest.raises(ConfigError):
        ExperimentConfig(ladder=(1, 9), test_positions=(0,)).check_against(toy_db)
    with pytest.raises(ConfigError):
        ExperimentConfig(test_positions=(99,)).check_against(toy_db)


def test_error_map_is_deterministic_and_skips_masked_cells(six_db, tmp_path):
    cfg = ExperimentConfig(error_map_trials=1, seed=3)
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        evaluation.run_error_map(cfg, six_db, out_dir=tmp_path / name)
    a, b = (tmp_path / n / "error_map.csv" for n in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    rows = _rows(a)
    assert len(rows) == six_db.n_positions
    for r in rows[::97]:
        assert not six_db.grid.masked[int(r["row"]) * six_db.grid.cols + int(r["col"])]


def test_quantiles_and_correlation_are_well_formed(toy_db):
    cfg = ExperimentConfig(error_map_trials=50, quantiles=(0.5, 0.8, 0.9, 0.99, 1.0))
    stats = evaluation.run_error_map(cfg, toy_db)
    assert list(stats.percentiles_m) == sorted(stats.percentiles_m)
    assert -1.0 <= stats.correlation <= 1.0
    assert stats.percentiles_m[-1] == pytest.approx(stats.max_error_m.max())


def test_inverted_cdf_quantiles():
    e = np.array([0.0, 0.0, 1.0, 2.0, 10.0])
    assert evaluation.empirical_quantiles(e, (0.4, 0.6, 0.8, 1.0)).tolist() == [0.0, 1.0, 2.0, 10.0]


def test_bootstrap_is_reproducible():
    e = np.random.default_rng(0).exponential(3.0, 500)
    a = evaluation.bootstrap_mean_ci(e, np.random.default_rng(1))
    b = evaluation.bootstrap_mean_ci(e, np.random.default_rng(1))
    assert a == b and a[0] < e.mean() < a[1]


def test_zero_noise_percentile_table_is_all_zero(toy_db, tmp_path):
    cfg = ExperimentConfig(trials=20, sigma_dbm=0.0, test_positions=(3, 17))
    rows = evaluation.percentile_table(cfg, toy_db, {"A": 3, "B": 17}, quantiles=(0.8, 0.9, 1.0), out_dir=tmp_path)
    assert len(rows) == 6
    assert all(r[c] == 0.0 for r in rows for c in ("(1,1,1)", "(2,2,2)", "(4,4,4)", "(6,6,6)"))
    header = _rows(tmp_path / "percentiles.csv")[0].keys()
    assert "reference_(6,6,6)" in header


def test_percentile_table_carries_reference_values(toy_db):
    cfg = ExperimentConfig(trials=10)
    rows = evaluation.percentile_table(cfg, toy_db, {"NLoS": 4})
    row = next(r for r in rows if r["quantile"] == 0.9)
    assert row["reference_(6,6,6)"] == 0.8
    assert [r["quantile"] for r in rows] == [0.99, 0.9, 0.8]


def test_time_sweep_without_noise_is_flat_zero(toy_db):
    cfg = ExperimentConfig(trials=30, sigma_dbm=0.0, bootstrap=100)
    pts = evaluation.run_sweep(cfg, toy_db, 11)
    t = [p for p in pts if p.sweep == "T"]
    assert [p.value for p in t] == [1, 2, 4, 6]
    assert all(p.mean_error_m == 0.0 and p.half_width_m == 0.0 for p in t)


def test_sweep_csv_layout(toy_db, tmp_path):
    cfg = ExperimentConfig(trials=20, bootstrap=50, ladder=(1, 2))
    evaluation.run_sweep(cfg, toy_db, 5, out_dir=tmp_path, label="LoS")
    rows = _rows(tmp_path / "sweep_LoS_5.csv")
    assert [(r["sweep"], r["value"]) for r in rows] == [(s, v) for s in ("K", "B", "T", "joint") for v in ("1", "2")]
    for r in rows:
        assert float(r["ci_low_m"]) <= float(r["mean_error_m"]) <= float(r["ci_high_m"])


def test_full_report_with_many_times_converges(six_db):
    cfg = ExperimentConfig(sigma_dbm=2.0)
    rng_positions = np.random.default_rng(0).choice(six_db.n_positions, 5, replace=False)
    for p in rng_positions:
        errs = evaluation.trial_errors(six_db, int(p), (six_db.n_beams, six_db.n_subbands, 64), 3, cfg)
        assert np.all(errs == 0.0)


def test_free_space_error_map_is_left_right_symmetric(free_db):
    stats = evaluation.run_error_map(ExperimentConfig(error_map_trials=20), free_db)
    bx = free_db.metadata["bs_position"][0]
    x = free_db.positions[:, 0]
    span = np.abs(x - bx) <= 80.0
    left = stats.mean_error_m[span & (x < bx)].mean()
    right = stats.mean_error_m[span & (x > bx)].mean()
    assert stats.mean_error_m.mean() > 20.0  # arcs of near-equal distance are hard to tell apart
    assert abs(left - right) <= 0.05 * (left + right) / 2


def test_auto_positions_match_the_selection_rule(six_db):
    cfg = ExperimentConfig()
    pos = evaluation.auto_positions(six_db, cfg)
    bs = np.asarray(six_db.metadata["bs_position"][:2])
    best = evaluation.best_rss_dbm(six_db)
    for label, want, los in (("LoS", 50.0, True), ("NLoS", 80.0, False)):
        p = pos[label]
        assert bool(six_db.los[p]) == los
        assert abs(np.linalg.norm(six_db.positions[p, :2] - bs) - want) <= 3.0
        d = np.linalg.norm(six_db.positions[:, :2] - bs, axis=1)
        rivals = (six_db.los == los) & (np.abs(d - want) <= 3.0)
        assert best[p] == best[rivals].max()


def test_run_experiment_writes_manifest(six_db, six_db_file, tmp_path):
    cfg = ExperimentConfig(db_path=str(six_db_file), output_dir=str(tmp_path), trials=20, error_map_trials=1,
                           bootstrap=50, seed=5)
    manifest = evaluation.run_experiment(cfg)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert "manifest.json" in names and "timings.json" in names and "error_map.csv" in names
    assert len([n for n in names if n.startswith("sweep_")]) == 2
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk == json.loads(json.dumps(manifest, sort_keys=True))
    assert on_disk["seed"] == 5 and "output_dir" not in on_disk["config"]
    assert set(on_disk["outputs"]) == {n for n in names if n.endswith(".csv")}
