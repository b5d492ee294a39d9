import argparse
import logging
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any

from augforest.errors import AugForestError, ConfigError
from augforest.logs import configure_logging

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _shared_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", type=Path, help="JSON config file (default: $XDG_CONFIG_HOME/augforest.json)")
    parser.add_argument("--seed", type=int, help="Master seed (required here or in the config file)")
    parser.add_argument("--out", type=Path, help="Output root (default: $XDG_CACHE_HOME/augforest/runs)")
    parser.add_argument("--threads", type=int, help="Worker threads for independent evaluations")
    parser.add_argument("--name", help="Run directory name instead of a timestamp")
    parser.add_argument("--synth", choices=["gaussian", "graphs"], help="Generate a synthetic dataset")
    parser.add_argument("--groups", type=int, help="Number of synthetic groups")
    parser.add_argument("--data", type=Path, help="Dataset file (.csv or graph manifest .json)")
    parser.add_argument("--registry", help="'vector', 'graph', or a registry manifest path")
    parser.add_argument("--d-max", type=int, dest="d_max", help="Maximum tree depth")
    parser.add_argument("--eval", dest="eval_mode", help="Evaluation mode: exact, mc or mc:R")
    parser.add_argument("--search-subset", type=int, help="Rows kept for tree search")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging")
    return parser


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    try:
        augforest_version = version("augforest")
    except PackageNotFoundError:
        augforest_version = "unknown"

    shared = _shared_flags()
    parser = argparse.ArgumentParser(prog="augforest")
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {augforest_version}"
    )

    subparsers = parser.add_subparsers(dest="command")
    subparsers.required = True
    subparsers.add_parser("search", parents=[shared], help="Search one augmentation tree")
    forest_subparser = subparsers.add_parser(
        "forest", parents=[shared], help="Learn per-group trees and group weights"
    )
    forest_subparser.add_argument("--iters", type=int, help="Outer iterations")
    forest_subparser.add_argument("--eta", type=float, help="Weight learning rate")
    benchmark_subparser = subparsers.add_parser(
        "benchmark", parents=[shared], help="Compare greedy and exhaustive search"
    )
    benchmark_subparser.add_argument("--methods", help="Comma-separated methods (greedy,exhaustive)")
    eval_subparser = subparsers.add_parser("eval", parents=[shared], help="Evaluate a tree or forest")
    eval_subparser.add_argument("--policy", type=Path, help="Tree or forest file")
    eval_subparser.add_argument("--checkpoint", type=Path, help="Model checkpoint to evaluate")
    eval_subparser.add_argument(
        "--similarity", action="store_true", help="Also report the feature similarity between groups"
    )

    return parser.parse_args(argv)


def overrides_from_args(args: argparse.Namespace) -> dict[str, Any]:
    """Config-file shaped dictionary of the flags that were given."""
    out: dict[str, Any] = {}

    def put(path: str, value: Any) -> None:
        if value is None:
            return
        node = out
        *parents, leaf = path.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = str(value) if isinstance(value, Path) else value

    put("seed", args.seed)
    put("out", args.out)
    put("threads", args.threads)
    put("name", args.name)
    put("synth.kind", args.synth)
    put("synth.groups", args.groups)
    put("data", args.data)
    put("registry", args.registry)
    put("search.d_max", args.d_max)
    put("search.eval_mode", args.eval_mode)
    put("search_subset", args.search_subset)
    put("bilevel.iterations", getattr(args, "iters", None))
    put("bilevel.eta", getattr(args, "eta", None))
    methods = getattr(args, "methods", None)
    if methods is not None:
        put("benchmark.methods", [m.strip() for m in methods.split(",") if m.strip()])
    put("eval.policy", getattr(args, "policy", None))
    put("eval.checkpoint", getattr(args, "checkpoint", None))
    if getattr(args, "similarity", False):
        put("eval.similarity", True)
    return out


def run(argv: list[str] | None = None) -> int:
    args = _parse_args(argv)
    configure_logging(args.verbose)

    # Commands are lazily imported so a broken optional dependency of one
    # command does not stop the others from running.
    try:
        from augforest.config import load_config

        config = load_config(args.config, overrides_from_args(args))
        if args.command == "search":
            from augforest.commands.search import search

            search(config)
        elif args.command == "forest":
            from augforest.commands.forest import forest

            forest(config)
        elif args.command == "benchmark":
            from augforest.commands.benchmark import benchmark

            benchmark(config)
        elif args.command == "eval":
            from prettyprinter import install_extras

            from augforest.commands.eval import evaluate

            install_extras(frozenset({"attrs"}))
            evaluate(config)
        else:
            raise NotImplementedError(f"Unknown command {args.command}")
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)  # noqa: T201
        return EXIT_CONFIG
    except AugForestError as e:
        print(f"Error running {args.command}: {e}", file=sys.stderr)  # noqa: T201
        return EXIT_RUNTIME
    except Exception as e:
        logging.exception(f"Unexpected failure in {args.command}")
        print(f"Error running {args.command}: {e}", file=sys.stderr)  # noqa: T201
        return EXIT_RUNTIME
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
