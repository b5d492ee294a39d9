from importlib.metadata import PackageNotFoundError
from pathlib import Path
from unittest.mock import patch

import pytest
from pytest_mock import MockerFixture

from augforest.cli.main import EXIT_CONFIG, EXIT_RUNTIME, _parse_args, main, overrides_from_args, run
from augforest.config import RunConfig
from augforest.errors import SearchError


@pytest.fixture(autouse=True)
def no_user_config(mocker: MockerFixture, tmp_path: Path) -> None:
    mocker.patch("augforest.config._CONFIG_FILE", tmp_path / "absent" / "augforest.json")
    mocker.patch("augforest.cli.main.configure_logging")


class TestParseArgs:
    def test_version(self, mocker: MockerFixture) -> None:
        """Test version retrieval in argument parsing."""
        mock_version = mocker.patch("augforest.cli.main.version", return_value="1.0.0")

        with pytest.raises(SystemExit):
            _parse_args(["--version"])

        mock_version.assert_called_once_with("augforest")

    def test_package_not_found(self, mocker: MockerFixture) -> None:
        mocker.patch("augforest.cli.main.version", side_effect=PackageNotFoundError())

        args = _parse_args(["search", "--seed", "3"])

        assert args.command == "search"
        assert args.seed == 3
        assert not args.verbose

    def test_command_is_required(self) -> None:
        with pytest.raises(SystemExit):
            _parse_args([])

    def test_reads_sys_argv(self) -> None:
        with patch("sys.argv", ["augforest", "benchmark", "-v", "--methods", "greedy"]):
            args = _parse_args()

        assert args.command == "benchmark"
        assert args.verbose
        assert args.methods == "greedy"

    def test_forest_only_flags(self) -> None:
        args = _parse_args(["forest", "--iters", "5", "--eta", "0.5", "--d-max", "2"])
        assert args.iters == 5
        assert args.eta == 0.5
        assert args.d_max == 2
        with pytest.raises(SystemExit):
            _parse_args(["search", "--iters", "5"])


class TestOverrides:
    def test_only_given_flags(self) -> None:
        """Test that flags left unset do not override the config file."""
        args = _parse_args(["search", "--seed", "7"])
        assert overrides_from_args(args) == {"seed": 7}

    def test_nested_keys(self, tmp_path: Path) -> None:
        args = _parse_args(
            [
                "forest",
                "--seed", "1",
                "--out", str(tmp_path),
                "--synth", "gaussian",
                "--groups", "4",
                "--d-max", "1",
                "--eval", "mc:50",
                "--iters", "3",
                "--eta", "0.25",
            ]
        )
        assert overrides_from_args(args) == {
            "seed": 1,
            "out": str(tmp_path),
            "synth": {"kind": "gaussian", "groups": 4},
            "search": {"d_max": 1, "eval_mode": "mc:50"},
            "bilevel": {"iterations": 3, "eta": 0.25},
        }

    def test_benchmark_methods(self) -> None:
        args = _parse_args(["benchmark", "--methods", "greedy, exhaustive,"])
        assert overrides_from_args(args) == {"benchmark": {"methods": ["greedy", "exhaustive"]}}

    def test_eval_flags(self, tmp_path: Path) -> None:
        policy = tmp_path / "tree.json"
        args = _parse_args(["eval", "--policy", str(policy), "--similarity"])
        assert overrides_from_args(args) == {"eval": {"policy": str(policy), "similarity": True}}


class TestRun:
    def test_missing_seed(self) -> None:
        assert run(["search", "--synth", "gaussian"]) == EXIT_CONFIG

    def test_missing_data_file(self, tmp_path: Path) -> None:
        assert run(["search", "--seed", "1", "--data", str(tmp_path / "missing.csv")]) == EXIT_CONFIG

    def test_success(self, mocker: MockerFixture, tmp_path: Path) -> None:
        mock_search = mocker.patch("augforest.commands.search.search")

        assert run(["search", "--seed", "2", "--synth", "gaussian", "--out", str(tmp_path)]) == 0

        mock_search.assert_called_once()
        (config,) = mock_search.call_args.args
        assert isinstance(config, RunConfig)
        assert config.seed == 2
        assert config.out == tmp_path

    def test_command_failure(self, mocker: MockerFixture) -> None:
        mocker.patch("augforest.commands.forest.forest", side_effect=SearchError("no candidates"))

        assert run(["forest", "--seed", "2", "--synth", "gaussian"]) == EXIT_RUNTIME

    def test_unexpected_failure(self, mocker: MockerFixture) -> None:
        mocker.patch("augforest.commands.benchmark.benchmark", side_effect=RuntimeError("boom"))
        mock_exception = mocker.patch("logging.exception")

        assert run(["benchmark", "--seed", "2", "--synth", "gaussian"]) == EXIT_RUNTIME
        mock_exception.assert_called_once()

    def test_eval_needs_a_policy(self, tmp_path: Path) -> None:
        assert run(["eval", "--seed", "2", "--synth", "gaussian", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_malformed_eval_mode(self, tmp_path: Path) -> None:
        assert run(["search", "--seed", "2", "--synth", "gaussian", "--eval", "mc:x", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_main_exits_with_run_status(mocker: MockerFixture) -> None:
    mocker.patch("augforest.cli.main.run", return_value=EXIT_CONFIG)

    with pytest.raises(SystemExit) as excinfo:
        main()

    assert excinfo.value.code == EXIT_CONFIG
