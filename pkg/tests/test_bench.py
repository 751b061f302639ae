"""Benchmark harness tests: config parsing, runners, CSV emission, CLI."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

import ttpmf.bench as bench
from ttpmf.bench import (
    ConfigError,
    RunConfig,
    RunReport,
    config_from_mapping,
    emit_csv,
    load_config,
    run_compare,
    run_scaling,
)
from ttpmf.cli import main as cli_main


def quick_cfg(**overrides) -> RunConfig:
    base = dict(
        scenario="linear1d",
        filters=("dense", "tt"),
        runs=2,
        k_f=3,
        master_seed=7,
        n_per_axis=21,
        cross_tol=1e-4,
        cross_max_rank=30,
    )
    base.update(overrides)
    return RunConfig(**base)


class TestRunConfig:
    def test_defaults_are_valid(self):
        cfg = RunConfig(scenario="radar")
        assert cfg.filters == ("dense", "fft", "tt", "ttfft", "pf")
        assert cfg.grid_config().n_per_axis == cfg.n_per_axis
        assert cfg.cross_config().tol == cfg.cross_tol

    @pytest.mark.parametrize(
        "overrides",
        [
            {"runs": 0},
            {"k_f": 0},
            {"n_per_axis": 10},
            {"n_per_axis": 1},
            {"sigma_mult": 0.0},
            {"round_tol": -1e-8},
            {"cross_tol": 0.0},
            {"cross_max_rank": 0},
            {"pf_particles": 0},
            {"filters": ("dense", "unknown")},
            {"scenario": ""},
        ],
    )
    def test_invalid_values_rejected(self, overrides):
        with pytest.raises(ConfigError):
            quick_cfg(**overrides)


class TestConfigParsing:
    def test_yaml_round_trip(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(
            "scenario: radar\n"
            "filters: [dense, pf]\n"
            "runs: 3\n"
            "k_f: 4\n"
            "master_seed: 11\n"
            "out_dir: out\n"
            "grid:\n  n_per_axis: 21\n  sigma_mult: 5.0\n  round_tol: 1.0e-9\n"
            "cross:\n  tol: 1.0e-3\n  max_rank: 77\n  rng_seed: 5\n"
            "pf:\n  particles: 500\n",
            encoding="utf-8",
        )
        cfg = load_config(path)
        assert cfg.scenario == "radar"
        assert cfg.filters == ("dense", "pf")
        assert (cfg.runs, cfg.k_f, cfg.master_seed) == (3, 4, 11)
        assert (cfg.n_per_axis, cfg.sigma_mult, cfg.round_tol) == (21, 5.0, 1e-9)
        assert (cfg.cross_tol, cfg.cross_max_rank, cfg.cross_seed) == (1e-3, 77, 5)
        assert cfg.pf_particles == 500
        assert cfg.out_dir == "out"

    def test_filters_accept_comma_string(self):
        cfg = config_from_mapping({"scenario": "radar", "filters": "dense, tt"})
        assert cfg.filters == ("dense", "tt")

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"scenario": "radar", "typo_key": 1})

    def test_unknown_section_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"scenario": "radar", "grid": {"n_axis": 5}})

    def test_missing_scenario_rejected(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"runs": 3})

    def test_non_mapping_root_rejected(self):
        with pytest.raises(ConfigError):
            config_from_mapping([1, 2, 3])

    def test_non_integer_where_integer_expected(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"scenario": "radar", "runs": "many"})

    def test_missing_file_reported_as_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    def test_invalid_yaml_reported_as_config_error(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("scenario: [unclosed\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_shipped_configs_parse(self):
        root = Path(__file__).resolve().parent.parent / "configs"
        for name in ("radar.yaml", "linear1d.yaml", "linear2d.yaml", "scaling.yaml"):
            cfg = load_config(root / name)
            assert cfg.runs >= 1


class TestRunCompare:
    def test_linear1d_report_structure(self):
        report = run_compare(quick_cfg())
        assert report.scenario == "linear1d"
        assert [r.name for r in report.rows] == ["dense", "tt"]
        assert not report.failures
        dense = report.row("dense")
        assert dense.rel_diff_pct == 0.0
        assert dense.rmse is not None and len(dense.rmse) == 1
        assert dense.bytes_tpm > 0 and dense.bytes_pmd > 0
        assert dense.ms_per_step is not None and dense.ms_per_step > 0
        assert dense.max_mass_dev is not None and dense.max_mass_dev <= 1e-9
        assert dense.trace is not None and len(dense.trace) == 3
        # trace rows: k plus truth, estimate and error per axis
        assert all(len(row) == 1 + 3 * 1 for row in dense.trace)
        tt_row = report.row("tt")
        assert tt_row.rel_diff_pct is not None and tt_row.rel_diff_pct >= 0.0

    def test_identical_config_reproduces_statistics(self):
        a = run_compare(quick_cfg())
        b = run_compare(quick_cfg())
        for ra, rb in zip(a.rows, b.rows):
            assert ra.rmse == rb.rmse
            assert ra.rel_diff_pct == rb.rel_diff_pct
            assert ra.bytes_tpm == rb.bytes_tpm
            assert ra.clipped_mass == rb.clipped_mass
            assert ra.trace == rb.trace

    def test_unknown_scenario_raises_config_error(self):
        with pytest.raises(ConfigError):
            run_compare(quick_cfg(scenario="warp_drive"))

    def test_filter_failure_recorded_without_killing_run(self, monkeypatch):
        def explode(*args, **kwargs):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr(bench, "dense_pmf_step", explode)
        report = run_compare(quick_cfg())
        dense = report.row("dense")
        assert dense.failure is not None and "synthetic failure" in dense.failure
        assert report.row("tt").failure is None
        # without the baseline no relative difference can be formed
        assert report.row("tt").rel_diff_pct is None

    def test_pf_runs_and_tracks(self):
        report = run_compare(
            quick_cfg(filters=("dense", "pf"), pf_particles=2000)
        )
        pf = report.row("pf")
        assert pf.failure is None
        assert pf.bytes_tpm == 0
        assert pf.bytes_pmd == 2000 * 2 * 8
        assert pf.rel_diff_pct is not None


class TestRunScaling:
    def test_small_dimension_measured(self):
        cfg = quick_cfg(
            scenario="scaling", filters=("dense", "tt"), runs=1, k_f=1,
            n_per_axis=9, cross_tol=1e-2, cross_max_rank=20,
        )
        (report,) = run_scaling(cfg, [2])
        dense = report.row("dense", dim=2)
        assert not dense.storage_estimated
        assert dense.bytes_tpm == 8 * 9**4
        tt_row = report.row("tt", dim=2)
        assert 0 < tt_row.bytes_tpm
        assert tt_row.ms_per_step is not None

    def test_memory_guard_skips_dense_filters(self):
        cfg = quick_cfg(
            scenario="scaling", filters=("dense", "fft", "tt"), runs=1, k_f=1,
            n_per_axis=15, cross_tol=1e-2, cross_max_rank=10,
        )
        reports = run_scaling(cfg, [4])
        dense = reports[0].row("dense", dim=4)
        assert dense.skipped is not None
        assert dense.storage_estimated
        assert dense.bytes_tpm == 8 * 15**8
        assert dense.bytes_pmd == 8 * 15**4
        fft = reports[0].row("fft", dim=4)
        assert fft.skipped is not None
        tt_row = reports[0].row("tt", dim=4)
        assert tt_row.skipped is None and tt_row.failure is None

    def test_dimension_below_two_rejected(self):
        with pytest.raises(ConfigError):
            run_scaling(quick_cfg(scenario="scaling"), [1])

    def test_merge_flattens_rows_and_drops_traces(self):
        cfg = quick_cfg(
            scenario="scaling", filters=("tt",), runs=1, k_f=1,
            n_per_axis=9, cross_tol=1e-2, cross_max_rank=10,
        )
        merged = RunReport.merge(run_scaling(cfg, [2, 3]))
        assert [r.dim for r in merged.rows] == [2, 3]
        assert all(r.trace is None for r in merged.rows)


class TestEmitCsv:
    def test_summary_has_exactly_nine_columns(self, tmp_path):
        report = run_compare(quick_cfg())
        emit_csv(report, tmp_path)
        lines = (tmp_path / "summary.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == (
            "filter,d,rmse_x,rmse_y,rel_diff_pct,bytes_tpm,bytes_pmd,"
            "ms_per_step,clipped_mass"
        )
        assert all(line.count(",") == 8 for line in lines)
        # the 1D scenario has no second state component
        assert lines[1].split(",")[3] == ""

    def test_reemission_is_byte_identical(self, tmp_path):
        report = run_compare(quick_cfg())
        emit_csv(report, tmp_path / "a")
        emit_csv(report, tmp_path / "b")
        for name in ("summary.csv", "trace_dense.csv", "trace_tt.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()

    def test_trace_layout(self, tmp_path):
        report = run_compare(quick_cfg())
        emit_csv(report, tmp_path)
        lines = (tmp_path / "trace_tt.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "k,true_x,est_x,err_x"
        assert len(lines) == 1 + 3  # header + k_f steps of the first run
        assert lines[1].split(",")[0] == "0"

    def test_empty_filter_list_gives_header_only_summary(self, tmp_path):
        report = run_compare(quick_cfg(filters=()))
        emit_csv(report, tmp_path)
        content = (tmp_path / "summary.csv").read_text(encoding="utf-8")
        assert content == (
            "filter,d,rmse_x,rmse_y,rel_diff_pct,bytes_tpm,bytes_pmd,"
            "ms_per_step,clipped_mass\n"
        )

    def test_estimated_storage_labeled(self, tmp_path):
        cfg = quick_cfg(
            scenario="scaling", filters=("dense",), runs=1, k_f=1, n_per_axis=15
        )
        merged = RunReport.merge(run_scaling(cfg, [4]))
        emit_csv(merged, tmp_path)
        row = (tmp_path / "summary.csv").read_text(encoding="utf-8").splitlines()[1]
        fields = row.split(",")
        assert fields[5] == f"estimated:{8 * 15**8}"
        assert fields[6] == f"estimated:{8 * 15**4}"

    def test_timings_file_written(self, tmp_path):
        report = run_compare(quick_cfg())
        paths = emit_csv(report, tmp_path)
        assert tmp_path / "timings.txt" in paths
        text = (tmp_path / "timings.txt").read_text(encoding="utf-8")
        assert "dense" in text and "tt" in text


class TestCli:
    def _write_cfg(self, tmp_path) -> Path:
        path = tmp_path / "cfg.yaml"
        path.write_text(
            "scenario: linear1d\n"
            "filters: [dense]\n"
            "runs: 1\nk_f: 2\n"
            "grid:\n  n_per_axis: 21\n"
            f"out_dir: {tmp_path / 'out'}\n",
            encoding="utf-8",
        )
        return path

    def test_compare_success_exit_zero(self, tmp_path, capsys):
        path = self._write_cfg(tmp_path)
        assert cli_main(["compare", "--config", str(path)]) == 0
        assert (tmp_path / "out" / "summary.csv").exists()
        assert "dense" in capsys.readouterr().out

    def test_out_override(self, tmp_path):
        path = self._write_cfg(tmp_path)
        out = tmp_path / "elsewhere"
        assert cli_main(["compare", "--config", str(path), "--out", str(out)]) == 0
        assert (out / "summary.csv").exists()

    def test_config_error_exit_two(self, tmp_path, capsys):
        missing = tmp_path / "nope.yaml"
        assert cli_main(["compare", "--config", str(missing)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_filter_override_exit_two(self, tmp_path):
        path = self._write_cfg(tmp_path)
        assert (
            cli_main(["compare", "--config", str(path), "--filters", "bogus"]) == 2
        )

    def test_filter_failure_exit_one(self, tmp_path, monkeypatch, capsys):
        def explode(*args, **kwargs):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr(bench, "dense_pmf_step", explode)
        path = self._write_cfg(tmp_path)
        assert cli_main(["compare", "--config", str(path)]) == 1
        assert "synthetic failure" in capsys.readouterr().err

    def test_scaling_subcommand(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(
            "scenario: scaling\n"
            "filters: [tt]\n"
            "runs: 1\nk_f: 1\n"
            "grid:\n  n_per_axis: 9\n"
            "cross:\n  tol: 1.0e-2\n  max_rank: 25\n"
            f"out_dir: {tmp_path / 'out'}\n",
            encoding="utf-8",
        )
        assert cli_main(["scaling", "--config", str(path), "--dims", "2,3"]) == 0
        lines = (
            (tmp_path / "out" / "summary.csv").read_text(encoding="utf-8").splitlines()
        )
        assert len(lines) == 3  # header + one tt row per dimension

    def test_scaling_bad_dims_exit_two(self, tmp_path):
        path = self._write_cfg(tmp_path)
        assert cli_main(["scaling", "--config", str(path), "--dims", "x"]) == 2

    def test_selftest_subcommand(self, capsys):
        assert cli_main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "selftest PASS" in out
