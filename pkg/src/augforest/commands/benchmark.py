"""Greedy against exhaustive search on one instance, with their measured costs."""

import csv
import logging
import time
from pathlib import Path

from attrs import evolve, frozen

from augforest.commands.common import open_run
from augforest.config import RunConfig
from augforest.errors import ConfigError
from augforest.oracle import exhaustive_search, write_comparison_csv
from augforest.policy.io import dump_tree
from augforest.search import search_tree

logger = logging.getLogger(__name__)

METHODS = ('greedy', 'exhaustive')


@frozen
class BenchmarkRow:
    method: str
    candidate_evals: int
    models_trained: int
    best_loss: float
    wall_time: float


def write_benchmark_csv(rows: list[BenchmarkRow], path: Path) -> None:
    with path.open('w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['method', 'candidate_evals', 'models_trained', 'best_L_val', 'wall_time_s'])
        for row in rows:
            writer.writerow(
                [row.method, row.candidate_evals, row.models_trained, repr(row.best_loss), f"{row.wall_time:.3f}"]
            )


def benchmark(config: RunConfig) -> Path:
    unknown = [m for m in config.benchmark.methods if m not in METHODS]
    if unknown or not config.benchmark.methods:
        raise ConfigError(f"Unknown benchmark methods {unknown}, expected some of {list(METHODS)}")
    with open_run(config) as run:
        train, val = run.pooled_search_data()
        search_config = config.search_config()
        out = run.run_dir
        rows: list[BenchmarkRow] = []
        for method in config.benchmark.methods:
            start = time.perf_counter()
            if method == 'greedy':
                result = search_tree(run.problem, train, val, search_config)
                trace = result.trace
                row = BenchmarkRow(method, trace.candidate_evals, trace.models_trained, trace.best_loss, 0.0)
                dump_tree(result.tree, out / 'greedy_tree.json')
            else:
                exhaustive = exhaustive_search(run.problem, train, val, search_config)
                row = BenchmarkRow(method, exhaustive.candidate_count, 1, exhaustive.best.loss, 0.0)
                dump_tree(exhaustive.best.tree, out / 'exhaustive_tree.json')
                write_comparison_csv(exhaustive, run.registry, out / 'exhaustive_table.csv')
            rows.append(evolve(row, wall_time=time.perf_counter() - start))
            logger.info(
                f"{method}: {row.candidate_evals} candidate evaluations, {row.models_trained} models, "
                f"best L_val={row.best_loss:.6f}"
            )
        write_benchmark_csv(rows, out / 'benchmark.csv')
        return out
