import json
from pathlib import Path

import numpy as np
import pytest

from surpscale.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, main

from corpusgen import make_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    _, _, _, paths = make_corpus(root, seed=30, n_words=60, n_subjects=3, k=10)
    return paths


def run(args):
    return main([str(a) for a in args])


class TestSweepCommand:
    def test_explicit_grid_runs_two_fits(self, corpus, tmp_path):
        out = tmp_path / "out"
        code = run(["sweep", "--archive", corpus["archive"], "--words", corpus["words"],
                    "--rts", corpus["rts"], "--out", out, "--grid", "1.0,2.5",
                    "--scheme", "equal"])
        assert code == EXIT_OK
        curve = (out / "sweep_curve.csv").read_text().splitlines()
        assert curve[1] == "t,delta_llh_x1000,converged"
        assert len(curve) == 4  # config + header + two grid rows
        assert (out / "sweep_report.txt").exists()

    def test_missing_archive_exits_1_no_outputs(self, corpus, tmp_path):
        out = tmp_path / "out"
        code = run(["sweep", "--archive", tmp_path / "nope.scla", "--words",
                    corpus["words"], "--rts", corpus["rts"], "--out", out])
        assert code == EXIT_ERROR
        assert not out.exists()

    def test_byte_identical_across_workers(self, corpus, tmp_path):
        outs = []
        for i, workers in enumerate((1, 8)):
            out = tmp_path / f"out{i}"
            code = run(["sweep", "--archive", corpus["archive"], "--words",
                        corpus["words"], "--rts", corpus["rts"], "--out", out,
                        "--grid", "1.0,1.5,2.5,4.0", "--scheme", "equal",
                        "--workers", workers])
            assert code == EXIT_OK
            outs.append(out)
        for name in ("sweep_curve.csv", "sweep_report.txt"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_config_file_and_flag_precedence(self, corpus, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({
            "archive": corpus["archive"], "words": corpus["words"],
            "rts": corpus["rts"], "grid": "1.0,2.0", "scheme": "equal",
        }))
        out = tmp_path / "out"
        code = run(["sweep", "--config", cfg_file, "--out", out, "--grid", "1.0,3.0"])
        assert code == EXIT_OK
        curve = (out / "sweep_curve.csv").read_text().splitlines()
        assert curve[2].startswith("1.0,") and curve[3].startswith("3.0,")
        # effective config echoed for provenance, flag value wins
        assert '"grid": "1.0,3.0"' in curve[0]

    def test_inputs_not_mutated(self, corpus, tmp_path):
        before = {k: Path(p).read_bytes() for k, p in corpus.items()}
        run(["sweep", "--archive", corpus["archive"], "--words", corpus["words"],
             "--rts", corpus["rts"], "--out", tmp_path / "o", "--grid", "1.0,2.0",
             "--scheme", "equal"])
        after = {k: Path(p).read_bytes() for k, p in corpus.items()}
        assert before == after


class TestCalibrateCommand:
    def test_emits_both_schemes_and_subsets(self, corpus, tmp_path):
        out = tmp_path / "out"
        code = run(["calibrate", "--archive", corpus["archive"], "--words",
                    corpus["words"], "--rts", corpus["rts"], "--out", out,
                    "--t", "1.0", "--tstar", "2.5"])
        assert code == EXIT_OK
        rows = (out / "calibration_metrics.csv").read_text().splitlines()[2:]
        metrics = {tuple(r.split(",")[:3]) for r in rows}
        assert ("ece", "equal", "all") in metrics
        assert ("cece", "log", "all") in metrics
        assert ("hce_ts", "equal", "all") in metrics
        assert ("ece", "log", "multi_token_words") in metrics

    def test_log_scheme_with_no_samples_errors(self, corpus, tmp_path):
        from surpscale.store import write_archive, write_rt_table, write_word_table

        empty = tmp_path / "empty.scla"
        write_archive(empty, [], vocab_size=4)
        words = tmp_path / "w.jsonl"
        rts = tmp_path / "r.csv"
        write_word_table(words, [])
        write_rt_table(rts, [])
        code = run(["calibrate", "--archive", empty, "--words", words, "--rts", rts,
                    "--out", tmp_path / "o", "--t", "1.0", "--scheme", "log"])
        assert code == EXIT_ERROR

    def test_tstar_equal_one_gives_zero_hce(self, corpus, tmp_path):
        out = tmp_path / "out"
        run(["calibrate", "--archive", corpus["archive"], "--words", corpus["words"],
             "--rts", corpus["rts"], "--out", out, "--t", "1.0", "--tstar", "1.0"])
        rows = (out / "calibration_metrics.csv").read_text().splitlines()[2:]
        hce = [r.split(",")[3] for r in rows if r.startswith("hce_ts,equal")]
        assert float(hce[0]) == 0.0


class TestAnalyzeCommand:
    def test_emits_all_tables(self, corpus, tmp_path):
        out = tmp_path / "out"
        code = run(["analyze", "--archive", corpus["archive"], "--words",
                    corpus["words"], "--rts", corpus["rts"], "--out", out,
                    "--tstar", "2.5", "--grid", "1.0,2.5", "--top-n", "5"])
        assert code in (EXIT_OK, EXIT_NOT_CONVERGED)
        for name in ("delta_mse_by_factor.csv", "probability_direction.csv",
                     "per_word_top.csv", "selective_curves.csv",
                     "surprisal_histograms.csv", "analysis_report.txt"):
            assert (out / name).exists(), name
        curves = (out / "selective_curves.csv").read_text().splitlines()
        scopes = {line.split(",")[0] for line in curves[2:]}
        assert scopes == {"all", "single", "multi"}

    def test_requires_tstar(self, corpus, tmp_path):
        code = run(["analyze", "--archive", corpus["archive"], "--words",
                    corpus["words"], "--rts", corpus["rts"], "--out", tmp_path / "o"])
        assert code == EXIT_ERROR


class TestCheckCommand:
    def test_default_run_passes(self, tmp_path, capsys):
        code = run(["check", "--trials", "100", "--seed", "3", "--out", tmp_path / "o"])
        assert code == EXIT_OK
        text = (tmp_path / "o" / "theorem_report.txt").read_text()
        assert "passed: True" in text
        assert "monotonicity_violations: 0" in text

    def test_trials_zero_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run(["check", "--trials", "0"])
        assert exc.value.code == 2

    def test_sign_flipped_build_fails(self, monkeypatch):
        # mutation check: corrupt the scaled-surprisal kernel and the
        # property run must report violations through the exit code
        import surpscale.analysis as analysis_mod

        original = analysis_mod._gold_surprisal_rows

        def flipped(z, gold, temps):
            return -original(z, gold, temps)

        monkeypatch.setattr(analysis_mod, "_gold_surprisal_rows", flipped)
        assert run(["check", "--trials", "50", "--seed", "3"]) != EXIT_OK

    def test_check_with_archive_alignment(self, corpus, tmp_path, capsys):
        code = run(["check", "--trials", "50", "--seed", "3",
                    "--archive", corpus["archive"], "--tstar", "2.5"])
        out = capsys.readouterr().out
        assert "tstar_closest_to_alpha_half" in out
        assert code == EXIT_OK
