"""Experiment engine: determinism, aggregation, serialization."""

import json

import numpy as np
import pytest

from sdmimo.harness import (
    ConfigError,
    ExperimentConfig,
    channel_to_csv,
    emit_results,
    run_convergence,
    run_experiment,
    run_trial,
    trial_rng,
    wilson_interval,
)
from sdmimo.channel import ArrayGeometry, AngularSector, generate_channel


def tiny_config(**kw):
    base = dict(name="tiny", num_antennas=16, num_users=2, num_paths=6,
                trials=3, symbols_per_trial=10, seed=42,
                detectors=("sdvb1", "sd-lmmse"))
    base.update(kw)
    return ExperimentConfig.from_dict(base)


class TestConfig:
    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError, match="snrdb"):
            ExperimentConfig.from_dict({"snrdb": 10})

    def test_unknown_detector_rejected(self):
        with pytest.raises(ConfigError, match="zf"):
            tiny_config(detectors=("zf",))

    def test_sweep_validation(self):
        with pytest.raises(ConfigError, match="sweep_values"):
            tiny_config(sweep="snr_db")
        with pytest.raises(ConfigError, match="cannot sweep"):
            tiny_config(sweep="name", sweep_values=(1,))

    def test_sdvb_alias_resolves_by_order(self):
        cfg = tiny_config(detectors=("sdvb",), sd_order=2)
        assert cfg.detectors == ("sdvb2",)

    def test_phase_definition(self):
        cfg = tiny_config(spacing_over_wavelength=0.5, sector_center_deg=30.0)
        assert cfg.phase == pytest.approx(2 * np.pi * 0.5 * 0.5)
        steered = cfg.replace(steering_angle_deg=0.0)
        assert steered.phase == 0.0

    def test_roundtrip_dict(self):
        cfg = tiny_config(sweep="snr_db", sweep_values=(0.0, 6.0))
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert again.config_hash() == cfg.config_hash()


class TestRunTrial:
    def test_counts_shape(self):
        cfg = tiny_config()
        res = run_trial(cfg, trial_rng(cfg.seed, 0))
        assert set(res.errors) == {"sdvb1", "sd-lmmse"}
        assert res.symbols["sdvb1"] == cfg.num_users * cfg.symbols_per_trial

    def test_deterministic(self):
        cfg = tiny_config()
        a = run_trial(cfg, trial_rng(cfg.seed, 1))
        b = run_trial(cfg, trial_rng(cfg.seed, 1))
        assert a.errors == b.errors

    def test_noiseless_unquantized_lmmse_perfect(self):
        # infinite resolution via huge bit depth + tiny step, huge SNR
        cfg = tiny_config(detectors=("lmmse-unquantized",), snr_db=200.0,
                          trials=1, symbols_per_trial=50)
        res = run_trial(cfg, trial_rng(0, 0))
        assert res.errors["lmmse-unquantized"] == 0

    def test_coupled_trial_runs(self):
        cfg = tiny_config(coupling=True, trials=1, symbols_per_trial=5,
                          detectors=("sd-lmmse", "sdvb1"))
        res = run_trial(cfg, trial_rng(1, 0))
        assert res.symbols["sd-lmmse"] == 10

    def test_coupled_detection_sane_at_high_snr(self):
        # mutual coupling on: the VB detector still detects far above chance
        cfg = ExperimentConfig(name="mc", num_antennas=32, num_users=2,
                               coupling=True, snr_db=15.0, bits=3,
                               detectors=("sdvb2",), trials=5,
                               symbols_per_trial=40, seed=2)
        curve = run_experiment(cfg)
        assert curve.ser("sdvb2")[0] < 0.05

    def test_16qam_pipeline(self):
        cfg = ExperimentConfig(name="qam", num_antennas=32, num_users=2,
                               constellation="16qam", snr_db=18.0, bits=3,
                               detectors=("sdvb1", "sd-lmmse"), trials=4,
                               symbols_per_trial=25, seed=3)
        curve = run_experiment(cfg)
        assert curve.ser("sdvb1")[0] < 0.2
        assert np.all(curve.symbols[0] == 4 * 25 * 2)

    def test_single_user_second_order_sanity(self):
        # K=1, N=32, 3-bit at 12 dB: the 2nd-order detector is essentially
        # error-free (SER below 1e-2 with plenty of margin)
        cfg = ExperimentConfig(name="sanity", num_antennas=32, num_users=1,
                               bits=3, snr_db=12.0, detectors=("sdvb2",),
                               trials=20, symbols_per_trial=100, seed=5)
        curve = run_experiment(cfg)
        assert int(curve.symbols[0, 0]) == 2000
        assert curve.ser("sdvb2")[0] < 1e-2


class TestRunExperiment:
    def test_single_point_equals_run_trial_sum(self):
        cfg = tiny_config(trials=2)
        curve = run_experiment(cfg)
        total = {name: 0 for name in cfg.detectors}
        for t in range(2):
            res = run_trial(cfg, trial_rng(cfg.seed, t))
            for name in total:
                total[name] += res.errors[name]
        for j, name in enumerate(curve.detectors):
            assert curve.errors[0, j] == total[name]

    def test_parallel_matches_serial(self):
        serial = run_experiment(tiny_config(threads=1))
        parallel = run_experiment(tiny_config(threads=2))
        assert np.array_equal(serial.errors, parallel.errors)
        assert np.array_equal(serial.symbols, parallel.symbols)

    def test_seed_changes_draws(self):
        cfg_a, cfg_b = tiny_config(), tiny_config(seed=43)
        a = trial_rng(cfg_a.seed, 0).standard_normal(16)
        b = trial_rng(cfg_b.seed, 0).standard_normal(16)
        c = trial_rng(cfg_a.seed, 0).standard_normal(16)
        assert not np.array_equal(a, b)
        assert np.array_equal(a, c)

    def test_random_guess_floor_at_low_snr(self):
        # SER tends to 1 - 1/|S| as SNR -> -inf
        cfg = tiny_config(snr_db=-60.0, trials=4, symbols_per_trial=200,
                          detectors=("sdvb1",))
        curve = run_experiment(cfg)
        lo, hi = curve.interval("sdvb1", 0)
        assert lo <= 0.75 <= hi

    def test_sweep_grid(self):
        cfg = tiny_config(sweep="snr_db", sweep_values=(0.0, 12.0), trials=2,
                          detectors=("sdvb1",))
        curve = run_experiment(cfg)
        assert curve.errors.shape == (2, 1)
        assert curve.ser("sdvb1")[0] >= curve.ser("sdvb1")[1]


class TestConvergence:
    def test_per_iteration_counts(self):
        cfg = tiny_config(detectors=("sdvb1", "sdvb2"), max_iters=8, trials=2,
                          symbols_per_trial=5)
        curve = run_convergence(cfg)
        assert curve.sweep_name == "iteration"
        assert curve.sweep_values == list(range(1, 9))
        assert np.all(curve.symbols == 2 * 5 * cfg.num_users)
        # error counts should not grow with iterations on average
        assert curve.errors[-1].sum() <= curve.errors[0].sum()

    def test_requires_vb_detector(self):
        with pytest.raises(ConfigError, match="convergence"):
            run_convergence(tiny_config(detectors=("sd-lmmse",)))


class TestEmitResults:
    def test_csv_layout_and_roundtrip(self, tmp_path):
        cfg = tiny_config(sweep="snr_db", sweep_values=(0.0, 6.0, 12.0), trials=2)
        curve = run_experiment(cfg)
        csv_path, json_path = emit_results(curve, tmp_path)
        lines = open(csv_path).read().strip().splitlines()
        assert lines[0] == "snr_db,detector,errors,symbols,ser,ci_low,ci_high"
        assert len(lines) == 1 + 3 * 2  # grid x detectors
        sidecar = json.loads(open(json_path).read())
        rerun = run_experiment(ExperimentConfig.from_dict(sidecar["config"]))
        csv2, _ = emit_results(rerun, tmp_path / "again")
        assert open(csv_path).read() == open(csv2).read()

    def test_empty_detector_list_header_only(self, tmp_path):
        cfg = tiny_config(detectors=())
        curve = run_experiment(cfg)
        csv_path, _ = emit_results(curve, tmp_path)
        lines = open(csv_path).read().strip().splitlines()
        assert len(lines) == 1

    def test_filenames_carry_name_and_seed(self, tmp_path):
        curve = run_experiment(tiny_config(name="fig4", seed=9,
                                           detectors=("sdvb1",), trials=1))
        csv_path, json_path = emit_results(curve, tmp_path)
        assert csv_path.endswith("fig4-9.csv") and json_path.endswith("fig4-9.json")


class TestWilson:
    def test_known_value(self):
        lo, hi = wilson_interval(5, 100)
        assert 0.016 < lo < 0.022 and 0.11 < hi < 0.12

    def test_zero_and_full(self):
        lo, hi = wilson_interval(0, 50)
        assert lo == 0.0 and 0 < hi < 0.1
        lo, hi = wilson_interval(50, 50)
        assert 0.9 < lo < 1.0 and hi == 1.0

    def test_no_data(self):
        assert wilson_interval(0, 0) == (0.0, 1.0)


def test_channel_csv_dump(tmp_path):
    rng = np.random.default_rng(3)
    ch = generate_channel(ArrayGeometry(8, 0.25), AngularSector(0, 40), 3, 4, rng)
    path = channel_to_csv(ch, tmp_path / "chan.csv")
    lines = open(path).read().strip().splitlines()
    assert lines[0] == "h0_re,h0_im,h1_re,h1_im,h2_re,h2_im"
    assert len(lines) == 9
    first = [float(v) for v in lines[1].split(",")]
    assert first[0] == ch.matrix[0, 0].real and first[1] == ch.matrix[0, 0].imag
