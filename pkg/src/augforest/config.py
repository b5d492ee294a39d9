"""
Run configuration: built-in defaults, then the config file, then command-line flags.

The file is `--config PATH`, or `$XDG_CONFIG_HOME/augforest.json` when that
exists. File and flag dictionaries are deep-merged before structuring, so a
flag only replaces the one setting it names.
"""

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any

from attrs import evolve, field, frozen
from cattrs import Converter
from cattrs.errors import BaseValidationError, ForbiddenExtraKeysError
from deepmerge.merger import Merger
from xdg_base_dirs import xdg_cache_home, xdg_config_home

from augforest.data.dataset import DEFAULT_VAL_FRACTION, Dataset
from augforest.data.io import load_dataset
from augforest.data.synth import (
    conflicting_shifts,
    replicate_groups,
    synth_gaussian_groups,
    synth_random_graphs,
)
from augforest.errors import AugForestError, ConfigError
from augforest.forest import BilevelConfig
from augforest.model.spec import DEFAULT_L2
from augforest.search import SearchConfig
from augforest.transforms.registry import REGISTRIES, Registry, load_manifest

_CONFIG_FILE = xdg_config_home() / "augforest.json"
DEFAULT_OUT = xdg_cache_home() / "augforest" / "runs"

SERIALIZER = Converter(forbid_extra_keys=True)
SERIALIZER.register_structure_hook(Path, lambda value, _: Path(value))
SERIALIZER.register_unstructure_hook(Path, str)

# dicts merge key by key, anything else from the later source wins
_MERGER = Merger([(dict, "merge")], ["override"], ["override"])


class SynthKind(Enum):
    GAUSSIAN = 'gaussian'
    GRAPHS = 'graphs'


class GroupLayout(Enum):
    # even groups want a rotation, odd groups want nothing
    CONFLICTING = 'conflicting'
    # every group draws from the same distribution
    SHARED = 'shared'
    # verbatim copies of one group
    REPLICATED = 'replicated'


@frozen
class SynthConfig:
    kind: SynthKind = SynthKind.GAUSSIAN
    groups: int = 2
    n_per_group: int = 200
    layout: GroupLayout = GroupLayout.CONFLICTING
    separation: float = 3.0
    val_fraction: float = DEFAULT_VAL_FRACTION
    size_range: tuple[int, int] = (8, 30)
    edge_prob_range: tuple[float, float] = (0.1, 0.4)
    label_rule: str = 'degree'
    feature_dim: int = 2


@frozen
class ModelConfig:
    hidden_dim: int = 0
    l2: float = DEFAULT_L2
    encoder_rounds: int = 2


@frozen
class BenchmarkConfig:
    methods: tuple[str, ...] = ('greedy', 'exhaustive')


@frozen
class EvalConfig:
    policy: Path | None = None
    checkpoint: Path | None = None
    similarity: bool = False


@frozen
class RunConfig:
    seed: int
    name: str | None = None
    out: Path = DEFAULT_OUT
    threads: int = field(default=1)
    data: Path | None = None
    synth: SynthConfig | None = None
    # a built-in registry name or the path of a registry manifest
    registry: str = 'vector'
    # rows kept for tree search; None searches on everything
    search_subset: int | None = None
    model: ModelConfig = ModelConfig()
    search: SearchConfig = SearchConfig()
    bilevel: BilevelConfig = BilevelConfig()
    benchmark: BenchmarkConfig = BenchmarkConfig()
    eval: EvalConfig = EvalConfig()

    @threads.validator
    def _check_threads(self, attribute: Any, value: int) -> None:
        if value < 1:
            raise ConfigError(f"threads must be at least 1, got {value}")

    def run_dir(self, timestamp: str) -> Path:
        return self.out / f"run_{self.name or timestamp}"

    def search_config(self) -> SearchConfig:
        """The search settings with the run's seed and thread count."""
        return evolve(self.search, seed=self.seed, threads=self.threads)

    def bilevel_config(self) -> BilevelConfig:
        return evolve(self.bilevel, seed=self.seed)


def merge_sources(*sources: dict[str, Any]) -> dict[str, Any]:
    merged: dict[str, Any] = {}
    for source in sources:
        merged = _MERGER.merge(merged, json.loads(json.dumps(source)))
    return merged


def read_config_file(path: Path | None) -> dict[str, Any]:
    if path is None:
        if not _CONFIG_FILE.exists():
            return {}
        path = _CONFIG_FILE
    elif not path.exists():
        raise ConfigError(f"Config file {path} does not exist")
    try:
        with path.open('r') as f:
            loaded = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    if not isinstance(loaded, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    return loaded


def load_config(path: Path | None, overrides: dict[str, Any]) -> RunConfig:
    """Merge the config file with flag overrides and check the result."""
    merged = merge_sources(read_config_file(path), overrides)
    if merged.get('seed') is None:
        raise ConfigError("A seed is required: pass --seed or set \"seed\" in the config file")
    try:
        config = SERIALIZER.structure(merged, RunConfig)
    except (BaseValidationError, ForbiddenExtraKeysError, AugForestError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    check_paths(config)
    return config


def check_paths(config: RunConfig) -> None:
    paths = [config.data, config.eval.policy, config.eval.checkpoint]
    if config.registry not in REGISTRIES:
        paths.append(Path(config.registry))
    for path in paths:
        if path is not None and not path.exists():
            raise ConfigError(f"Path {path} does not exist")


def snapshot(config: RunConfig, path: Path) -> None:
    path.write_text(json.dumps(SERIALIZER.unstructure(config), indent=2, sort_keys=True) + '\n')


def build_registry(config: RunConfig) -> Registry:
    factory = REGISTRIES.get(config.registry)
    if factory is not None:
        return factory()
    return load_manifest(Path(config.registry))


def build_dataset(config: RunConfig) -> Dataset:
    if config.data is not None:
        if config.synth is not None:
            logging.warning("Both a data path and synthetic settings given; using the data path")
        return load_dataset(config.data)
    synth = config.synth
    if synth is None:
        raise ConfigError("No dataset: pass --data PATH or --synth {gaussian,graphs}")
    if synth.kind is SynthKind.GRAPHS:
        return synth_random_graphs(
            synth.groups * synth.n_per_group,
            synth.size_range,
            synth.edge_prob_range,
            synth.label_rule,
            config.seed,
            feature_dim=synth.feature_dim,
            size_bins=synth.groups,
            degree_bins=1,
            val_fraction=synth.val_fraction,
        )
    if synth.layout is GroupLayout.REPLICATED:
        one = synth_gaussian_groups(
            1, synth.n_per_group, None, config.seed, synth.separation, val_fraction=synth.val_fraction
        )
        return replicate_groups(one, synth.groups)
    shifts = conflicting_shifts(synth.groups) if synth.layout is GroupLayout.CONFLICTING else None
    return synth_gaussian_groups(
        synth.groups, synth.n_per_group, shifts, config.seed, synth.separation, val_fraction=synth.val_fraction
    )
