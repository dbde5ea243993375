import json
from pathlib import Path

import numpy as np
import pytest

from misstmle import harness, report
from misstmle.cli import load_study_config, main
from misstmle.harness import (ResultRow, StudyConfig, compute_metrics, empirical_se,
                              model_se_error, relative_bias, rows_from_csv, rows_to_csv,
                              run_study)

FAST_STUDY = dict(scenarios=("simple",), mdags=("A",), methods=("cca", "ext-tmle"),
                  n_per_dataset=260, n_reps=3, m=2, cycles=1, master_seed=77)


class TestRelativeBias:
    def test_arithmetic(self):
        pct, _ = relative_bias(np.full(10, 0.18), 0.2)
        assert pct == pytest.approx(-10.0)

    def test_exact_recovery(self):
        pct, mcse = relative_bias(np.full(5, 0.2), 0.2)
        assert pct == 0.0
        assert mcse == 0.0

    def test_mcse_formula_frozen(self):
        # R=2000 draws with sd 0.14 around psi0=0.2: mcse = 100*sd/(psi0*sqrt(R))
        gen = np.random.default_rng(0)
        psis = 0.2 + 0.14 * gen.standard_normal(2000)
        _, mcse = relative_bias(psis, 0.2)
        sd = float(np.std(psis, ddof=1))
        assert mcse == pytest.approx(100.0 * sd / (0.2 * np.sqrt(2000)), rel=1e-12)
        assert mcse == pytest.approx(1.57, abs=0.12)

    def test_zero_truth_rejected(self):
        with pytest.raises(ValueError):
            relative_bias(np.ones(3), 0.0)


class TestEmpiricalSe:
    def test_three_point_example(self):
        se, _ = empirical_se(np.array([0.1, 0.2, 0.3]))
        assert se == pytest.approx(0.1)

    def test_constant_vector(self):
        se, mcse = empirical_se(np.full(6, 0.4))
        assert se == 0.0
        assert mcse == 0.0

    def test_mcse_formula_frozen(self):
        # se=0.14 at R=2000 gives mcse = se/sqrt(2(R-1)) ~= 0.0022
        gen = np.random.default_rng(1)
        psis = 0.14 * gen.standard_normal(2000)
        se, mcse = empirical_se(psis)
        assert mcse == pytest.approx(se / np.sqrt(2 * 1999), rel=1e-12)
        assert mcse == pytest.approx(0.0022, abs=0.0003)


class TestModelSeError:
    def test_no_error(self):
        pct, _ = model_se_error(np.full(8, 0.125), 0.125)
        assert pct == pytest.approx(0.0)

    def test_twenty_percent_under(self):
        pct, _ = model_se_error(np.full(8, 0.10), 0.125)
        assert pct == pytest.approx(-20.0)

    def test_mcse_formula(self):
        gen = np.random.default_rng(2)
        ses = 0.12 + 0.01 * gen.standard_normal(500)
        emp = 0.13
        pct, mcse = model_se_error(ses, emp)
        mod = np.sqrt(np.mean(ses**2))
        var_s2 = np.var(ses**2, ddof=1)
        expected = 100.0 * (mod / emp) * np.sqrt(var_s2 / (4 * 500 * mod**4) + 1 / (2 * 499))
        assert mcse == pytest.approx(expected, rel=1e-12)

    def test_zero_empirical_se_rejected(self):
        with pytest.raises(ValueError):
            model_se_error(np.ones(3), 0.0)

    def test_mcse_scaling_with_replication_count(self):
        # doubling R shrinks each metric's MCSE by ~1/sqrt(2)
        gen = np.random.default_rng(3)
        psis = 0.2 + 0.1 * gen.standard_normal(4000)
        ses = 0.1 + 0.01 * gen.standard_normal(4000)
        for fn in (lambda v: relative_bias(v, 0.2)[1], lambda v: empirical_se(v)[1]):
            ratio = fn(psis[:4000]) / fn(psis[:2000])
            assert ratio == pytest.approx(1 / np.sqrt(2), rel=0.1)
        m_full = model_se_error(ses, 0.1)[1]
        m_half = model_se_error(ses[:2000], 0.1)[1]
        assert m_full / m_half == pytest.approx(1 / np.sqrt(2), rel=0.1)


@pytest.fixture(scope="module")
def small_rows():
    return run_study(StudyConfig(**FAST_STUDY))


class TestRunStudy:
    def test_rows_cover_grid(self, small_rows):
        assert len(small_rows) == 3 * 2  # reps x methods
        assert {r.method for r in small_rows} == {"cca", "ext-tmle"}
        assert all(not r.failed for r in small_rows)

    def test_deterministic_across_runs_and_jobs(self, small_rows):
        again = run_study(StudyConfig(**FAST_STUDY))
        parallel = run_study(StudyConfig(**{**FAST_STUDY, "jobs": 2}))
        strip = lambda rows: [(r.scenario, r.mdag, r.method, r.rep, r.psi, r.se, r.n_used) for r in rows]
        assert strip(again) == strip(small_rows)
        assert strip(parallel) == strip(small_rows)

    def test_complete_data_mode_recovers_truth(self):
        cfg = StudyConfig(scenarios=("simple",), mdags=("none",), methods=("cca",),
                          n_per_dataset=400, n_reps=6, master_seed=11)
        rows = run_study(cfg)
        psis = np.array([r.psi for r in rows])
        assert abs(psis.mean() - 0.2) < 3 * psis.std(ddof=1) / np.sqrt(len(psis)) + 0.05

    def test_methods_share_the_masked_dataset(self):
        cfg = StudyConfig(**FAST_STUDY)
        d1, m1, _ = harness._cell_streams(cfg, 0, "simple", "A")
        d2, m2, _ = harness._cell_streams(cfg, 0, "simple", "A")
        assert d1 == d2 and m1 == m2

    def test_csv_round_trip(self, small_rows):
        text = rows_to_csv(small_rows)
        back = rows_from_csv(text)
        assert [(r.psi, r.se, r.n_used) for r in back] == \
               [(r.psi, r.se, r.n_used) for r in small_rows]


class TestReportEmission:
    def test_files_written_and_rerender_identical(self, small_rows, tmp_path):
        cfg = StudyConfig(**FAST_STUDY)
        out = tmp_path / "study"
        written = report.emit_report(small_rows, cfg, out)
        names = {p.name for p in written}
        assert {"results.csv", "timings.csv", "metrics.csv", "report.md", "config.json",
                "rel_bias.svg", "emp_se.svg", "mod_se_err.svg"} <= names
        before = {p.name: p.read_bytes() for p in out.iterdir() if p.name != "timings.csv"}
        report.render_from_results(out)
        after = {p.name: p.read_bytes() for p in out.iterdir() if p.name != "timings.csv"}
        assert before == after

    def test_metrics_row_count_covers_grid(self, small_rows, tmp_path):
        cfg = StudyConfig(**FAST_STUDY)
        metrics = compute_metrics(small_rows, cfg)
        assert len(metrics) == len(cfg.scenarios) * len(cfg.mdags) * len(cfg.methods)

    def test_empty_method_set_yields_header_only_metrics(self, tmp_path):
        cfg = StudyConfig(**{**FAST_STUDY, "methods": ("cca",)})
        metrics = compute_metrics([], cfg)
        # no rows at all: every cell reports zero usable replications
        assert all(m.n_reps == 0 for m in metrics)
        text = report.metrics_csv([])
        assert text.splitlines() == [text.splitlines()[0]]

    def test_report_labels_exact(self, small_rows, tmp_path):
        cfg = StudyConfig(**FAST_STUDY)
        md = report.report_md(compute_metrics(small_rows, cfg), cfg)
        assert "| Complete-case |" in md and "| Ext-TMLE |" in md
        full = report.report_md(compute_metrics([], StudyConfig()), StudyConfig())
        for label in ("Complete-case", "Ext-TMLE", "Ext-TMLE+MCMI", "MI-no int",
                      "MI-2-way int", "MI-higher int", "MI-CART", "MI-RF"):
            assert f"| {label} |" in full

    def test_failed_rows_excluded_and_counted(self):
        cfg = StudyConfig(**{**FAST_STUDY, "methods": ("cca",), "n_reps": 4})
        rows = [ResultRow("simple", "A", "cca", r, 0.2 + 0.01 * r, 0.1, 100, False, "", 0.1)
                for r in range(3)]
        rows.append(ResultRow("simple", "A", "cca", 3, float("nan"), float("nan"), 0, True, "boom", 0.1))
        (metric,) = compute_metrics(rows, cfg)
        assert metric.n_reps == 3
        assert metric.n_failed == 1
        assert np.isfinite(metric.rel_bias_pct)


class TestCli:
    def test_simgen_estimate_round_trip(self, tmp_path, capsys):
        out = tmp_path / "toy.csv"
        assert main(["simgen", "--scenario", "simple", "--mdag", "A", "--n", "400",
                     "--seed", "3", "--out", str(out)]) == 0
        sidecar = json.loads(out.with_suffix(".truth.json").read_text())
        assert sidecar["true_effect"] == 0.2
        assert len(sidecar["y_exposed"]) == 400
        assert main(["estimate", "--data", str(out), "--method", "cca", "--seed", "4"]) == 0
        out_lines = capsys.readouterr().out.strip().splitlines()
        assert out_lines[-2] == "method,psi,se,ci_lo,ci_hi,n_used"
        fields = out_lines[-1].split(",")
        assert fields[0] == "cca"
        assert np.isfinite(float(fields[1]))

    def test_study_and_report_commands(self, tmp_path, capsys):
        cfg_file = tmp_path / "study.toml"
        cfg_file.write_text('scenarios = ["simple"]\nmdags = ["A"]\nmethods = ["cca"]\n'
                            'n = 240\nreps = 2\nseed = 5\nm = 2\ncycles = 1\n')
        outdir = tmp_path / "out"
        assert main(["study", "--config", str(cfg_file), "--out", str(outdir), "--quiet"]) == 0
        results = (outdir / "results.csv").read_bytes()
        metrics = (outdir / "metrics.csv").read_bytes()
        assert main(["report", "--dir", str(outdir)]) == 0
        assert (outdir / "metrics.csv").read_bytes() == metrics
        assert (outdir / "results.csv").read_bytes() == results

    def test_config_overrides(self, tmp_path):
        cfg_file = tmp_path / "c.toml"
        cfg_file.write_text("reps = 9\nseed = 1\n")
        cfg = load_study_config(str(cfg_file), {"n_reps": 4, "master_seed": None})
        assert cfg.n_reps == 4
        assert cfg.master_seed == 1
