"""
Dataset files.

Vector datasets are a single CSV with columns feat_0..feat_{d-1}, then either
`label` or label_0..label_{C-1} (multilabel), then `group` and `split`.
Graph datasets are a JSON manifest listing one graph file per row.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np
from attrs import frozen
from cattrs import Converter
from cattrs.errors import BaseValidationError, ForbiddenExtraKeysError

from augforest.data.dataset import Dataset
from augforest.errors import DatasetError, TransformError
from augforest.transforms.graph import Graph, dump_graph, load_graph

MANIFEST_VERSION = 1

SERIALIZER = Converter()


@frozen
class ManifestEntry:
    path: str
    label: list[int]
    group: int
    split: str


@frozen
class GraphManifest:
    version: int
    num_classes: int
    multilabel: bool
    entries: list[ManifestEntry]


def save_dataset(dataset: Dataset, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(dataset.samples, np.ndarray):
        _save_csv(dataset, path)
    else:
        _save_manifest(dataset, path)


def load_dataset(path: Path) -> Dataset:
    if not path.exists():
        raise DatasetError(f"Dataset file {path} does not exist")
    if path.suffix == '.csv':
        return _load_csv(path)
    return _load_manifest(path)


def _label_columns(dataset: Dataset) -> list[str]:
    if dataset.multilabel:
        return [f"label_{c}" for c in range(dataset.num_classes)]
    return ['label']


def _save_csv(dataset: Dataset, path: Path) -> None:
    samples = np.asarray(dataset.samples)
    d = samples.shape[1] if samples.ndim == 2 else 0
    header = [f"feat_{j}" for j in range(d)] + _label_columns(dataset) + ['group', 'split']
    with path.open('w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i in range(len(dataset)):
            labels = dataset.labels[i].tolist() if dataset.multilabel else [int(dataset.labels[i])]
            writer.writerow(
                [repr(float(v)) for v in samples[i]]
                + labels
                + [int(dataset.groups[i]), dataset.splits[i]]
            )


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"Row {line}: column {column} is not a number ({text!r})") from None
    if not math.isfinite(value):
        raise DatasetError(f"Row {line}: column {column} is {text}")
    return value


def _parse_int(text: str, line: int, column: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DatasetError(f"Row {line}: column {column} is not an integer ({text!r})") from None


def _load_csv(path: Path) -> Dataset:
    with path.open('r', newline='') as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path} is empty") from None
        if 'group' not in header:
            raise DatasetError("group column required")
        if 'split' not in header:
            raise DatasetError("split column required")
        feature_cols = [h for h in header if h.startswith('feat_')]
        multilabel = 'label' not in header
        label_cols = ['label'] if not multilabel else [h for h in header if h.startswith('label_')]
        if not label_cols:
            raise DatasetError("label column required")
        position = {h: i for i, h in enumerate(header)}

        features: list[list[float]] = []
        labels: list[int | list[int]] = []
        groups: list[int] = []
        splits: list[str] = []
        # line 1 is the header
        for line, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetError(f"Row {line}: expected {len(header)} fields, got {len(row)}")
            features.append([_parse_float(row[position[c]], line, c) for c in feature_cols])
            parsed = [_parse_int(row[position[c]], line, c) for c in label_cols]
            labels.append(parsed if multilabel else parsed[0])
            groups.append(_parse_int(row[position['group']], line, 'group'))
            splits.append(row[position['split']])

    label_array = np.asarray(labels, dtype=np.int64)
    if multilabel:
        num_classes = len(label_cols)
    else:
        num_classes = max(2, int(label_array.max()) + 1) if len(label_array) else 2
    return Dataset(
        np.asarray(features, dtype=np.float64).reshape(len(features), len(feature_cols)),
        label_array,
        groups,
        splits,
        num_classes,
        multilabel,
    )


def _save_manifest(dataset: Dataset, path: Path) -> None:
    graph_dir = path.parent / f"{path.stem}_graphs"
    entries = []
    for i, graph in enumerate(dataset.samples):
        assert isinstance(graph, Graph)
        name = f"graph_{i:06d}.json"
        dump_graph(graph, graph_dir / name)
        label = dataset.labels[i].tolist() if dataset.multilabel else [int(dataset.labels[i])]
        entries.append(
            ManifestEntry(f"{graph_dir.name}/{name}", label, int(dataset.groups[i]), str(dataset.splits[i]))
        )
    manifest = GraphManifest(MANIFEST_VERSION, dataset.num_classes, dataset.multilabel, entries)
    path.write_text(json.dumps(SERIALIZER.unstructure(manifest), indent=2) + '\n')


def _load_manifest(path: Path) -> Dataset:
    try:
        manifest = SERIALIZER.structure(json.loads(path.read_text()), GraphManifest)
    except (json.JSONDecodeError, BaseValidationError, ForbiddenExtraKeysError, KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"Malformed graph manifest {path}: {e}") from e
    graphs = []
    for number, entry in enumerate(manifest.entries):
        graph_path = path.parent / entry.path
        if not graph_path.exists():
            raise DatasetError(f"Manifest entry {number}: graph file {graph_path} does not exist")
        try:
            graphs.append(load_graph(graph_path))
        except (DatasetError, TransformError, json.JSONDecodeError) as e:
            raise DatasetError(f"Manifest entry {number}: {e}") from e
    return Dataset(
        tuple(graphs),
        [e.label if manifest.multilabel else e.label[0] for e in manifest.entries],
        [e.group for e in manifest.entries],
        [e.split for e in manifest.entries],
        manifest.num_classes,
        manifest.multilabel,
    )
