import logging
from collections.abc import Iterator
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path

from attrs import frozen

from augforest.config import RunConfig, build_dataset, build_registry, snapshot
from augforest.data.dataset import Dataset, GroupData, Split
from augforest.logs import attach_run_log, detach_run_log
from augforest.model.problem import Problem, make_problem
from augforest.seeding import derive_seed
from augforest.transforms.registry import Registry

logger = logging.getLogger(__name__)

_SUBSET_STREAM = 7


@frozen
class RunContext:
    config: RunConfig
    run_dir: Path
    dataset: Dataset
    registry: Registry
    problem: Problem

    def search_dataset(self) -> Dataset:
        """The rows tree search sees: all of them, or the configured subset."""
        return self.dataset.search_subset(self.config.search_subset, derive_seed(self.config.seed, _SUBSET_STREAM))

    def pooled_search_data(self) -> tuple[GroupData, GroupData]:
        pooled = self.search_dataset().pooled()
        return pooled.by_group(Split.TRAIN)[1], pooled.by_group(Split.VAL)[1]


@contextmanager
def open_run(config: RunConfig) -> Iterator[RunContext]:
    """Create the run directory, snapshot the config and mirror logs into it."""
    run_dir = config.run_dir(datetime.now().strftime('%Y%m%d-%H%M%S'))
    run_dir.mkdir(parents=True, exist_ok=True)
    handler = attach_run_log(run_dir)
    try:
        snapshot(config, run_dir / 'config.json')
        dataset = build_dataset(config)
        dataset.require_groups()
        registry = build_registry(config)
        problem = make_problem(
            dataset,
            registry,
            hidden_dim=config.model.hidden_dim,
            l2=config.model.l2,
            encoder_rounds=config.model.encoder_rounds,
        )
        logger.info(
            f"Run {run_dir.name}: {len(dataset)} rows in groups {list(dataset.group_ids)}, "
            f"{len(registry.candidates())} candidate transforms"
        )
        yield RunContext(config, run_dir, dataset, registry, problem)
    finally:
        detach_run_log(handler)
