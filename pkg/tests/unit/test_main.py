import pytest
from unittest.mock import MagicMock, patch

from dcasim.globals import *
from dcasim.__main__ import SUBCOMMANDS, build_parser, main
from dcasim.config import Config
from dcasim.exceptions import ConfigError, ConvergenceError, MeshError


def patched_job(side_effect=None) -> MagicMock:
    return MagicMock(side_effect=side_effect)


class TestParser:

    def test_every_subcommand_is_registered(self):
        assert set(SUBCOMMANDS) == {"generate-rve", "cluster", "solve-micro", "solve-macro", "homogenize",
                                    "solve-multiscale", "compare-fields"}

    def test_overrides_are_parsed(self):
        args = build_parser().parse_args(["cluster", "--config", "run.json", "--k", "12", "--seed", "3",
                                          "--threads", "2", "--out", "results"])

        assert (args.command, args.config, args.k, args.seed, args.threads, args.out) == \
            ("cluster", "run.json", 12, 3, 2, "results")

    def test_config_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["cluster"])


class TestMain:

    def test_successful_job_returns_zero(self, run_config_factory, tmp_path):
        config_path = run_config_factory(clustering={"k_macro": 4})
        job = patched_job()

        with patch.dict(SUBCOMMANDS, {"cluster": (job, "")}):
            code = main(["cluster", "--config", str(config_path), "--k", "7", "--out", str(tmp_path / "results")])

        assert code == EXIT_OK
        job.assert_called_once()
        config = job.call_args.args[0]
        assert isinstance(config, Config)
        assert config.get_k_macro() == 7
        assert config.get_out_dir() == tmp_path / "results"

    @pytest.mark.parametrize("error, expected", [
        (ConfigError("bad config"), EXIT_CONFIG),
        (MeshError("inverted element"), EXIT_CONFIG),
        (ConvergenceError("no convergence", {STEP_STR: 2}), EXIT_CONVERGENCE),
        (OSError("disk full"), EXIT_IO),
    ])
    def test_failures_map_onto_exit_codes(self, run_config_factory, error, expected):
        config_path = run_config_factory()

        with patch.dict(SUBCOMMANDS, {"solve-macro": (patched_job(error), "")}):
            code = main(["solve-macro", "--config", str(config_path)])

        assert code == expected

    def test_missing_config_file_is_an_io_error(self, tmp_path):
        assert main(["cluster", "--config", str(tmp_path / "missing.json")]) == EXIT_IO

    def test_invalid_config_is_a_config_error(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{\"paths\": ")

        assert main(["cluster", "--config", str(path)]) == EXIT_CONFIG

    def test_missing_mesh_entry_is_a_config_error(self, run_config_factory):
        assert main(["solve-macro", "--config", str(run_config_factory())]) == EXIT_CONFIG
