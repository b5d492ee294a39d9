import logging
from collections.abc import Iterator, Sequence
from enum import Enum
from typing import Any

import numpy as np
from attrs import cmp_using, field, frozen

from augforest.errors import DatasetError
from augforest.seeding import derive_seed
from augforest.transforms.graph import Graph
from augforest.transforms.registry import Domain, Sample

logger = logging.getLogger(__name__)

DEFAULT_VAL_FRACTION = 0.25


class Split(Enum):
    TRAIN = 'train'
    VAL = 'val'
    TEST = 'test'


type Samples = np.ndarray | tuple[Graph, ...]


def _as_samples(value: Any) -> Samples:
    if isinstance(value, np.ndarray):
        return value.astype(np.float64, copy=False)
    items = tuple(value)
    if items and isinstance(items[0], Graph):
        return items
    return np.asarray(items, dtype=np.float64)


def _samples_equal(a: Samples, b: Samples) -> bool:
    if isinstance(a, np.ndarray) and isinstance(b, np.ndarray):
        return a.shape == b.shape and bool(np.array_equal(a, b))
    if isinstance(a, tuple) and isinstance(b, tuple):
        return a == b
    return False


def _as_labels(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=np.int64)


def _as_groups(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=np.int64).reshape(-1)


def _as_splits(value: Any) -> np.ndarray:
    return np.asarray([s.value if isinstance(s, Split) else str(s) for s in value], dtype=object)


def _take(samples: Samples, indices: np.ndarray) -> Samples:
    if isinstance(samples, np.ndarray):
        return samples[indices]
    return tuple(samples[int(i)] for i in indices)


@frozen
class GroupStats:
    group_id: int
    count: int
    proportion: float


@frozen
class GroupData:
    """The rows of one group within one split."""

    group_id: int
    samples: Samples = field(eq=cmp_using(eq=_samples_equal))
    labels: np.ndarray = field(eq=cmp_using(eq=np.array_equal))
    indices: np.ndarray = field(eq=cmp_using(eq=np.array_equal))

    def __len__(self) -> int:
        return len(self.labels)

    def sample(self, position: int) -> Sample:
        return self.samples[position]


@frozen
class Dataset:
    """
    Samples with labels, group ids and split tags.

    Vector samples are rows of a 2-d float array; graph samples are a tuple of
    Graph values. Labels are class indices, or a 0/1 matrix when multilabel.
    """

    samples: Samples = field(converter=_as_samples, eq=cmp_using(eq=_samples_equal))
    labels: np.ndarray = field(converter=_as_labels, eq=cmp_using(eq=np.array_equal))
    groups: np.ndarray = field(converter=_as_groups, eq=cmp_using(eq=np.array_equal))
    splits: np.ndarray = field(converter=_as_splits, eq=cmp_using(eq=np.array_equal))
    num_classes: int = 2
    multilabel: bool = False

    def __attrs_post_init__(self) -> None:
        n = len(self.samples)
        if not (len(self.labels) == len(self.groups) == len(self.splits) == n):
            raise DatasetError(
                f"Column lengths differ: {n} samples, {len(self.labels)} labels, "
                f"{len(self.groups)} groups, {len(self.splits)} splits"
            )
        if n and self.groups.min() < 1:
            raise DatasetError("Group ids must be positive integers")
        known = {s.value for s in Split}
        unknown = set(self.splits.tolist()) - known
        if unknown:
            raise DatasetError(f"Unknown split tags {sorted(unknown)}")
        if self.multilabel:
            if self.labels.ndim != 2 or self.labels.shape[1] != self.num_classes:
                raise DatasetError("Multilabel labels must be an n x C matrix of 0/1")
            if n and not np.isin(self.labels, (0, 1)).all():
                raise DatasetError("Multilabel labels must be 0 or 1")
        elif n and (self.labels.ndim != 1 or self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"Labels must be class indices in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def domain(self) -> Domain:
        return Domain.VECTOR if isinstance(self.samples, np.ndarray) else Domain.GRAPH

    @property
    def feature_dim(self) -> int:
        if isinstance(self.samples, np.ndarray):
            return int(self.samples.shape[1]) if self.samples.ndim == 2 else 0
        return self.samples[0].feature_dim if self.samples else 0

    @property
    def group_ids(self) -> tuple[int, ...]:
        return tuple(int(g) for g in np.unique(self.groups))

    def sample(self, index: int) -> Sample:
        return self.samples[index]

    def take(self, indices: Sequence[int] | np.ndarray) -> 'Dataset':
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            _take(self.samples, idx),
            self.labels[idx],
            self.groups[idx],
            self.splits[idx],
            self.num_classes,
            self.multilabel,
        )

    def split(self, which: Split) -> 'Dataset':
        return self.take(np.flatnonzero(self.splits == which.value))

    def with_splits(self, splits: Sequence[str] | np.ndarray) -> 'Dataset':
        return Dataset(self.samples, self.labels, self.groups, splits, self.num_classes, self.multilabel)

    def only_group(self, group_id: int) -> 'Dataset':
        return self.take(np.flatnonzero(self.groups == group_id))

    def pooled(self, group_id: int = 1) -> 'Dataset':
        """The same rows with every group merged into one."""
        return Dataset(
            self.samples,
            self.labels,
            np.full(len(self), group_id),
            self.splits,
            self.num_classes,
            self.multilabel,
        )

    def by_group(self, which: Split) -> dict[int, GroupData]:
        out: dict[int, GroupData] = {}
        for group_id in self.group_ids:
            idx = np.flatnonzero((self.groups == group_id) & (self.splits == which.value))
            if len(idx):
                out[group_id] = GroupData(group_id, _take(self.samples, idx), self.labels[idx], idx)
        return out

    def group_stats(self, which: Split = Split.TRAIN) -> list[GroupStats]:
        mask = self.splits == which.value
        total = int(mask.sum())
        if total == 0:
            raise DatasetError(f"The {which.value} split is empty")
        ids, counts = np.unique(self.groups[mask], return_counts=True)
        return [
            GroupStats(int(g), int(c), float(c) / total)
            for g, c in zip(ids, counts, strict=True)
        ]

    def require_groups(self) -> None:
        """Every group must have rows in both the train and the val split."""
        for group_id in self.group_ids:
            rows = self.splits[self.groups == group_id]
            for which in (Split.TRAIN, Split.VAL):
                if not np.any(rows == which.value):
                    raise DatasetError(f"Group {group_id} has no {which.value} rows")

    def search_subset(self, size: int | None, rng_seed: int) -> 'Dataset':
        """
        A reduced copy with about `size` rows for policy search.

        Every (split, group) cell keeps its share of rows, and at least one.
        """
        if size is None or size >= len(self):
            return self
        if size < 1:
            raise DatasetError(f"Search subset size must be positive, got {size}")
        rng = np.random.default_rng(rng_seed)
        keep: list[np.ndarray] = []
        for which in Split:
            for group_id in self.group_ids:
                idx = np.flatnonzero((self.groups == group_id) & (self.splits == which.value))
                if not len(idx):
                    continue
                share = max(1, int(round(size * len(idx) / len(self))))
                keep.append(np.sort(rng.choice(idx, size=min(share, len(idx)), replace=False)))
        return self.take(np.sort(np.concatenate(keep)))

    def iter_samples(self) -> Iterator[Sample]:
        for index in range(len(self)):
            yield self.samples[index]


def _strata(labels: np.ndarray) -> np.ndarray:
    if labels.ndim == 1:
        return labels
    _, inverse = np.unique(labels, axis=0, return_inverse=True)
    return inverse.reshape(-1)


def assign_splits(
    dataset: Dataset,
    rng_seed: int,
    val_fraction: float = DEFAULT_VAL_FRACTION,
    test_fraction: float = 0.0,
) -> Dataset:
    """
    Tag rows train/val/test, stratified by group and label.

    Each group with at least two rows keeps at least one train and one val row.
    """
    if not 0.0 < val_fraction < 1.0 or not 0.0 <= test_fraction < 1.0 or val_fraction + test_fraction >= 1.0:
        raise DatasetError(f"Bad split fractions val={val_fraction} test={test_fraction}")
    splits = np.full(len(dataset), Split.TRAIN.value, dtype=object)
    strata = _strata(dataset.labels)
    for group_id in dataset.group_ids:
        in_group = dataset.groups == group_id
        for stratum in np.unique(strata[in_group]):
            idx = np.flatnonzero(in_group & (strata == stratum))
            rng = np.random.default_rng(derive_seed(rng_seed, group_id, int(stratum)))
            idx = rng.permutation(idx)
            n_test = int(np.floor(test_fraction * len(idx) + 0.5))
            n_val = int(np.floor(val_fraction * len(idx) + 0.5))
            splits[idx[:n_test]] = Split.TEST.value
            splits[idx[n_test : n_test + n_val]] = Split.VAL.value
        group_idx = np.flatnonzero(in_group)
        if len(group_idx) >= 2:
            tags = splits[group_idx]
            if not np.any(tags == Split.VAL.value):
                splits[_last_of(group_idx, tags, Split.TRAIN)] = Split.VAL.value
            tags = splits[group_idx]
            if not np.any(tags == Split.TRAIN.value):
                splits[_last_of(group_idx, tags, Split.VAL)] = Split.TRAIN.value
    return dataset.with_splits(splits)


def _last_of(group_idx: np.ndarray, tags: np.ndarray, which: Split) -> int:
    candidates = group_idx[tags == which.value]
    if not len(candidates):
        candidates = group_idx[tags == Split.TEST.value]
    return int(candidates[-1])
