import dataclasses

import numpy as np
import pytest

from shredkit import datasets as ds
from shredkit import harness as H
from shredkit import models as M
from shredkit.errors import CellFailureError, ConfigError, DegenerateTruthError, InvalidArgumentError, TrainingDivergedError

from oracles import relative_error_metric


def _tiny(**overrides):
    base = dict(
        dataset=H.DatasetSpec(grid=(8, 8), n_times=90, n_modes=3, seed=1),
        lag=6,
        trials=2,
        network=H.NetworkSpec(hidden_size=6, num_layers=1, decoder_sizes=(12,)),
        train=M.TrainConfig(max_epochs=3, batch_size=16, learning_rate=3e-3, early_stop_patience=2),
    )
    base.update(overrides)
    return H.ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# metric


def test_metric_examples():
    x = np.random.default_rng(0).standard_normal((4, 5))
    assert H.reconstruction_error(x, x) == 0.0
    assert H.reconstruction_error(np.zeros_like(x), x) == pytest.approx(1.0, abs=1e-15)
    assert H.reconstruction_error([[3.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(0.8, abs=1e-15)


def test_metric_matches_one_line_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        t, m = rng.integers(1, 20, size=2)
        est, tru = rng.standard_normal((t, m)), rng.standard_normal((t, m))
        assert abs(H.reconstruction_error(est, tru) - relative_error_metric(est, tru)) < 1e-14


def test_metric_errors():
    with pytest.raises(DegenerateTruthError):
        H.reconstruction_error(np.ones((2, 2)), np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(Exception):
        H.reconstruction_error(np.ones((2, 3)), np.ones((2, 2)))
    np.testing.assert_allclose(H.per_snapshot_error([[0.0, 1.0], [2.0, 2.0]], [[0.0, 2.0], [2.0, 2.0]]), [0.5, 0.0])


# ---------------------------------------------------------------------------
# configuration


def test_config_round_trip_and_cells():
    cfg = _tiny(methods=("shred", "qr_pod"), sensor_counts=(2, 4), alphas=(0.0, 0.5))
    assert len(cfg.all_cells()) == 8
    again = H.ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    explicit = _tiny(cells=[("sdn", "qr", 3, 0.1)])
    assert explicit.all_cells() == [H.Cell("sdn", "qr", 3, 0.1)]
    assert H.ExperimentConfig.from_dict(explicit.to_dict()) == explicit


def test_config_rejects_unknown_and_invalid():
    doc = _tiny().to_dict()
    doc["bogus"] = 1
    doc["dataset"]["zzz"] = 2
    with pytest.raises(ConfigError) as info:
        H.ExperimentConfig.from_dict(doc)
    assert "bogus" in str(info.value) and "dataset.zzz" in str(info.value)
    for bad in (dict(trials=0), dict(sensor_counts=(0,)), dict(methods=("magic",)), dict(split="weekly"),
                dict(noise_scope="train"), dict(alphas=(-1.0,))):
        with pytest.raises(ConfigError):
            _tiny(**bad)


def test_sub_seeds_distinct_and_stable():
    seeds = {H.sub_seed(7, r) for r in H._ROLES}
    assert len(seeds) == len(H._ROLES)
    assert H.sub_seed(7, "init") == H.sub_seed(7, "init")


# ---------------------------------------------------------------------------
# trials


def test_qr_pod_exact_regime():
    cfg = _tiny(dataset=H.DatasetSpec(kind="low_rank", grid=(20,), n_times=80, rank=5, seed=3),
                methods=("qr_pod",), sensor_counts=(20,), pod_rank=5, lag=2)
    r = H.run_trial(cfg, cfg.all_cells()[0], 0)
    assert r.error < 1e-8


def test_qr_pod_square_qr_sensors_on_low_rank():
    cfg = _tiny(dataset=H.DatasetSpec(kind="low_rank", grid=(30,), n_times=60, rank=4, seed=2),
                methods=("qr_pod",), placements=("qr",), sensor_counts=(4,), lag=2)
    assert H.run_trial(cfg, cfg.all_cells()[0], 0).error < 1e-8


def test_trial_deterministic():
    cfg = _tiny(methods=("shred",))
    cell = cfg.all_cells()[0]
    a, b = H.run_trial(cfg, cell, 1), H.run_trial(cfg, cell, 1)
    assert a == b and a.seed == cfg.base_seed + 1


def test_method_fairness_same_inputs():
    cfg = _tiny(alphas=(0.3,))
    a = H._prepare(cfg, 5, "random", 3, 0.3)
    b = H._prepare(cfg, 5, "random", 3, 0.3)
    assert a.sensors == b.sensors and np.array_equal(a.windows.inputs, b.windows.inputs)
    assert np.array_equal(a.split.test, b.split.test)


def test_noise_scope_test_only_keeps_training_clean():
    cfg = _tiny(noise_scope="test")
    data = H._prepare(cfg, 0, "random", 3, 0.5)
    clean = H._prepare(cfg, 0, "random", 3, 0.0)
    tr, te = data.split.train, data.split.test
    assert np.array_equal(data.windows.inputs[tr], clean.windows.inputs[tr])
    assert not np.array_equal(data.windows.inputs[te], clean.windows.inputs[te])


def test_no_leakage_qr_basis_ignores_test_targets():
    cfg = _tiny(placements=("qr",))
    data = H._prepare(cfg, 0, "qr", 3, 0.0)
    field = H.build_field(cfg.dataset)
    zeroed = field.snapshots.copy()
    zeroed[cfg.lag + data.split.test] = 0.0
    from shredkit.pod import fit_pod
    a = fit_pod(field.snapshots[cfg.lag + data.split.train], 3)
    b = fit_pod(zeroed[cfg.lag + data.split.train], 3)
    assert np.array_equal(a.modes, b.modes)
    assert np.array_equal(data.basis.modes, a.modes)


# ---------------------------------------------------------------------------
# ensembles


def test_quantiles_hand_example():
    s = H.summarize_errors(H.Cell("shred", "random", 3, 0.0), [1.0, 2.0, 3.0, 4.0])
    assert s.median == 2.5 and s.q25 == 1.75 and s.q75 == 3.25


def test_single_trial_summary():
    cfg = _tiny(methods=("qr_pod",), trials=1)
    (s,) = H.run_ensemble(cfg, workers=1)
    assert s.median == s.q25 == s.q75 == s.errors[0]


def test_noise_sweep_alpha_zero_matches_ensemble():
    base = _tiny(methods=("qr_pod", "sdn"), trials=2)
    plain = H.run_ensemble(base, workers=1)
    sweep = H.run_noise_sweep(dataclasses.replace(base, alphas=(0.5, 0.0)), workers=1)
    assert [s.alpha for s in sweep] == [0.0, 0.0, 0.5, 0.5]
    zero = {s.method: s for s in sweep if s.alpha == 0.0}
    for s in plain:
        assert zero[s.method] == s
    assert H.run_noise_sweep(dataclasses.replace(base, alphas=(0.5, 0.0)), workers=1) == sweep


def test_all_trials_failed_raises_cell_failure(monkeypatch):
    cfg = _tiny(trials=3)

    def boom(config, cell, trial):
        raise TrainingDivergedError(0, "probe")

    monkeypatch.setattr(H, "run_trial", boom)
    with pytest.raises(CellFailureError) as info:
        H.run_ensemble(cfg, workers=1)
    assert list(info.value.seeds) == [0, 1, 2]


def test_partial_failure_is_counted(monkeypatch):
    cfg = _tiny(methods=("qr_pod",), trials=3)
    real = H.run_trial

    def flaky(config, cell, trial):
        if trial == 1:
            raise TrainingDivergedError(2, "probe")
        return real(config, cell, trial)

    monkeypatch.setattr(H, "run_trial", flaky)
    (s,) = H.run_ensemble(cfg, workers=1)
    assert s.n_trials == 2 and s.n_failed == 1


def test_worker_count_does_not_change_results(monkeypatch):
    cfg = _tiny(methods=("qr_pod", "sdn"), trials=2)
    one = H.run_trials(cfg, workers=1)[0]
    two = H.run_trials(cfg, workers=2)[0]
    assert one == two
    monkeypatch.setenv(H.DETERMINISTIC_ENV, "1")
    assert H.resolve_workers(8) == 1
    monkeypatch.delenv(H.DETERMINISTIC_ENV)
    with pytest.raises(InvalidArgumentError):
        H.resolve_workers(0)


def test_trial_rows_round_trip(tmp_path):
    rows = [H.TrialResult("shred", "qr", 3, 0.25, 0, 10, 0.1 + 0.2, 7, 1.5),
            H.TrialResult("qr_pod", "random", 5, 0.0, 1, 11, 1e-17)]
    path = tmp_path / "t.csv"
    H.write_trial_rows(path, rows)
    back = H.read_trial_rows(path)
    assert back == rows and back[0].error == 0.1 + 0.2


def test_summary_document_round_trip():
    s = H.summarize_errors(H.Cell("sdn", "qr", 2, 0.1), [0.3, 0.1, 0.2])
    doc = H.summary_document(_tiny(), [s])
    assert H.summaries_from_document(doc) == [s]
    with pytest.raises(ConfigError):
        H.summaries_from_document({"summaries": [{"method": "x"}]})


# ---------------------------------------------------------------------------
# forecasting


def _forecast_cfg(**overrides):
    # 194 samples: 164 train, 20 validation, 10 test
    base = dict(dataset=H.DatasetSpec(grid=(8, 8), n_times=200, n_modes=3, seed=1),
                split="sst", sensor_counts=(3,), horizon=4, forecast_runs=2)
    base.update(overrides)
    return _tiny(**base)


def test_forecast_requires_temporal_split_and_short_horizon():
    with pytest.raises(InvalidArgumentError):
        H.run_forecast_experiment(_tiny(), horizon=2, runs=1, workers=1)
    with pytest.raises(InvalidArgumentError):
        H.run_forecast_experiment(_forecast_cfg(), horizon=500, runs=1, workers=1)


def test_oracle_forecast_equals_reconstruction_error():
    cfg = _forecast_cfg()
    result, runs = H.run_forecast_experiment(cfg, horizon=1, runs=1, workers=1, oracle=True, with_runs=True)
    data = H._prepare(cfg, cfg.base_seed, "random", 3, 0.0)
    model, scaled, _ = H._fit_network(cfg, data, "shred", cfg.base_seed, "check")
    first = data.split.test[:1]
    est = model.predict(scaled.inputs[first])
    truth = data.clean.snapshots[cfg.lag + first]
    assert result.shred_errors[0, 0] == pytest.approx(H.reconstruction_error(est, truth), abs=1e-12)
    assert result.target_times[0] == cfg.lag + first[0]


def test_forecast_shapes_and_round_trip():
    cfg = _forecast_cfg()
    result = H.run_forecast_experiment(cfg, workers=1)
    assert result.shred_errors.shape == (2, 4) and result.pod_errors.shape == (2, 4)
    assert result.ensemble_errors.shape == (4,)
    assert np.all(np.diff(result.target_times) == 1)
    back = H.ForecastResult.from_dict(result.to_dict())
    assert np.array_equal(back.shred_errors, result.shred_errors) and back.seeds == result.seeds


def test_ensemble_of_identical_runs_equals_single(monkeypatch):
    cfg = _forecast_cfg()
    real = H._forecast_run
    monkeypatch.setattr(H, "_forecast_run", lambda config, seed, horizon, oracle: real(config, 0, horizon, oracle))
    result = H.run_forecast_experiment(cfg, runs=3, workers=1)
    np.testing.assert_allclose(result.ensemble_errors, result.shred_errors[0], rtol=1e-12)
    assert np.array_equal(result.shred_errors[0], result.shred_errors[2])


def test_forecast_result_shape_check():
    with pytest.raises(Exception):
        H.ForecastResult(np.arange(3), (0, 1), np.zeros((2, 2)), np.zeros((2, 3)), np.zeros(3), np.zeros(3))


def test_turbulence_layout_split_sizes():
    cfg = _tiny(split="turbulence")
    assert cfg.split_samples(1567, 0).sizes() == (1100, 50, 417)
    inter = _tiny(split_fractions=(1100 / 1567, 234 / 1567, 233 / 1567))
    assert inter.split_samples(1567, 3).sizes() == (1100, 234, 233)
    assert ds.n_windowed_samples(1400, 52) == 1348


def test_public_trial_helpers_match_run_trial():
    cfg = _tiny()
    cell = H.Cell("shred", "random", 3, 0.0)
    data = H.prepare_trial(cfg, cell, 1)
    model, scaled, _ = H.fit_network(cfg, data, "shred", 1)
    est = model.predict(scaled.inputs[data.split.test])
    err = H.reconstruction_error(est, data.clean.snapshots[cfg.lag + data.split.test])
    assert err == H.run_trial(cfg, cell, 1).error
    with pytest.raises(InvalidArgumentError):
        H.fit_network(cfg, data, "qr_pod", 1)
