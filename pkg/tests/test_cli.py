"""Command-line interface: subcommand wiring, config overrides, exit codes."""

import json

import pytest

from glyceval.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from glyceval.harmonize import read_records_csv


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = main(["simulate", "--subjects", "2", "--days", "2",
                 "--seed", "5", "--out", str(out)])
    assert code == EXIT_OK
    return out


class TestExitCodes:
    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["definitely-not-a-command"]) == EXIT_USAGE
        capsys.readouterr()

    def test_missing_input_is_data_error(self, tmp_path, capsys):
        code = main(["harmonize", "--in", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "out")])
        assert code == EXIT_DATA
        assert "error:" in capsys.readouterr().err


class TestSimulate:
    def test_writes_records_and_manifest(self, sim_dir):
        manifest = json.loads((sim_dir / "cohort.json").read_text())
        assert manifest["n_subjects"] == 2
        assert len(manifest["subject_seeds"]) == 2
        records = read_records_csv(sim_dir / "records.csv", source="simulator")
        assert len(records) == 2
        assert all(r.n_steps == 2 * 288 for r in records)

    def test_deterministic_across_runs(self, sim_dir, tmp_path):
        again = tmp_path / "again"
        main(["simulate", "--subjects", "2", "--days", "2",
              "--seed", "5", "--out", str(again)])
        assert (again / "records.csv").read_bytes() == \
            (sim_dir / "records.csv").read_bytes()


class TestEpisodeCommands:
    def test_make_episodes(self, sim_dir, tmp_path):
        out = tmp_path / "ep"
        assert main(["make-episodes", "--in", str(sim_dir),
                     "--out", str(out)]) == EXIT_OK
        lines = (out / "episodes.csv").read_text().splitlines()
        # 2 subjects x 4 onsets x 10 menu entries, plus header
        assert len(lines) == 1 + 2 * 4 * 10

    def test_make_action_menu(self, sim_dir, tmp_path):
        out = tmp_path / "am"
        assert main(["make-action-menu", "--in", str(sim_dir),
                     "--out", str(out)]) == EXIT_OK
        lines = (out / "action_menu.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 * 4 * 9


class TestModelCommands:
    def test_fit_and_eval_gating(self, sim_dir, tmp_path):
        model = tmp_path / "zoh.json"
        assert main(["fit", "--model", "zoh", "--out", str(model)]) == EXIT_OK
        out = tmp_path / "gating"
        code = main(["eval-gating", "--model-file", str(model), "--model-name",
                     "zoh", "--in", str(sim_dir / "records.csv"), "--out", str(out),
                     "--source", "simulator", "--resamples", "50"])
        assert code == EXIT_OK
        assert (out / "metrics.csv").exists()
        assert (out / "gating_per_patient.csv").exists()

    def test_config_file_overridden_by_flags(self, sim_dir, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"n_subjects": 5, "days": 2, "master_seed": 5}))
        out = tmp_path / "sim"
        code = main(["--config", str(config), "simulate",
                     "--subjects", "2", "--out", str(out)])
        assert code == EXIT_OK
        manifest = json.loads((out / "cohort.json").read_text())
        assert manifest["n_subjects"] == 2  # flag wins
        assert manifest["days"] == 2       # config wins over default

    def test_unknown_config_key_is_data_error(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"n_subjcts": 5}))
        code = main(["--config", str(config), "simulate",
                     "--out", str(tmp_path / "sim")])
        assert code == EXIT_DATA
        capsys.readouterr()
