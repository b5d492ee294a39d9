"""Synthetic grouped datasets whose groups want different augmentations."""

import logging
import math
from collections.abc import Sequence
from enum import Enum

import numpy as np
from attrs import field, frozen

from augforest.data.dataset import DEFAULT_VAL_FRACTION, Dataset, Split, assign_splits
from augforest.data.groups import partition_by_intervals
from augforest.errors import DatasetError
from augforest.seeding import derive_seed
from augforest.transforms.graph import Graph

logger = logging.getLogger(__name__)


def _as_pair(value: Sequence[float]) -> tuple[float, float]:
    x, y = value
    return float(x), float(y)


@frozen
class GroupShift:
    """
    How one group's data is laid out.

    The two class means sit at +/- separation/2 along `base_angle_deg`.
    Validation and test rows are then rotated by `heldout_rotation_deg` and
    translated by `heldout_translation`, so an augmentation that undoes the
    shift helps that group. `label_noise` flips that fraction of train labels.
    """

    base_angle_deg: float = 0.0
    heldout_rotation_deg: float = 0.0
    heldout_translation: tuple[float, float] = field(default=(0.0, 0.0), converter=_as_pair)
    label_noise: float = 0.0


def rotation_shifts(m: int, step_deg: float) -> tuple[GroupShift, ...]:
    """Group g's held-out rows are rotated by (g - 1) * step_deg."""
    return tuple(GroupShift(heldout_rotation_deg=g * step_deg) for g in range(m))


def conflicting_shifts(m: int) -> tuple[GroupShift, ...]:
    """
    Odd groups are unshifted. Even groups lie along 210 degrees with noisy
    train labels and held-out rows turned half a circle, so only they gain from
    a rotation.
    """
    return tuple(
        GroupShift() if g % 2 else GroupShift(base_angle_deg=210.0, heldout_rotation_deg=180.0, label_noise=0.1)
        for g in range(1, m + 1)
    )


def replicate_groups(dataset: Dataset, m: int) -> Dataset:
    """m verbatim copies of a single-group dataset, as groups 1..m."""
    if m < 1:
        raise DatasetError(f"Need at least one group, got m={m}")
    if len(dataset.group_ids) != 1:
        raise DatasetError(f"Can only replicate a single-group dataset, got groups {list(dataset.group_ids)}")
    n = len(dataset)
    if isinstance(dataset.samples, np.ndarray):
        samples: np.ndarray | tuple[Graph, ...] = np.concatenate([dataset.samples] * m)
    else:
        samples = tuple(dataset.samples) * m
    return Dataset(
        samples,
        np.concatenate([dataset.labels] * m),
        np.repeat(np.arange(1, m + 1), n),
        np.concatenate([dataset.splits] * m),
        dataset.num_classes,
        dataset.multilabel,
    )


def _rotate(points: np.ndarray, degrees: float) -> np.ndarray:
    angle = math.radians(degrees)
    c, s = math.cos(angle), math.sin(angle)
    rotation = np.array([[c, -s], [s, c]])
    return points @ rotation.T


def synth_gaussian_groups(
    m: int,
    n_per_group: int,
    shifts: Sequence[GroupShift] | None,
    rng_seed: int,
    separation: float = 3.0,
    class_std: float = 1.0,
    val_fraction: float = DEFAULT_VAL_FRACTION,
    test_fraction: float = 0.0,
) -> Dataset:
    """m groups of balanced two-class 2-d Gaussian data, one GroupShift each."""
    if m < 1:
        raise DatasetError(f"Need at least one group, got m={m}")
    if n_per_group < 4:
        raise DatasetError(f"Need at least 4 rows per group, got {n_per_group}")
    shifts = tuple(shifts) if shifts is not None else tuple(GroupShift() for _ in range(m))
    if len(shifts) != m:
        raise DatasetError(f"Got {len(shifts)} group shifts for {m} groups")

    features: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    groups: list[np.ndarray] = []
    for g, shift in enumerate(shifts, start=1):
        rng = np.random.default_rng(derive_seed(rng_seed, g))
        y = np.arange(n_per_group) % 2
        direction = np.array(
            [math.cos(math.radians(shift.base_angle_deg)), math.sin(math.radians(shift.base_angle_deg))]
        )
        means = np.where(y[:, None] == 1, 1.0, -1.0) * (separation / 2.0) * direction
        features.append(means + rng.normal(0.0, class_std, size=(n_per_group, 2)))
        labels.append(y)
        groups.append(np.full(n_per_group, g))

    dataset = assign_splits(
        Dataset(np.concatenate(features), np.concatenate(labels), np.concatenate(groups), ['train'] * (m * n_per_group)),
        rng_seed,
        val_fraction,
        test_fraction,
    )

    x = dataset.samples.copy()  # type: ignore[union-attr]
    y = dataset.labels.copy()
    for g, shift in enumerate(shifts, start=1):
        heldout = (dataset.groups == g) & (dataset.splits != Split.TRAIN.value)
        if shift.heldout_rotation_deg:
            x[heldout] = _rotate(x[heldout], shift.heldout_rotation_deg)
        x[heldout] += np.asarray(shift.heldout_translation)
        if shift.label_noise > 0.0:
            train = np.flatnonzero((dataset.groups == g) & (dataset.splits == Split.TRAIN.value))
            rng = np.random.default_rng(derive_seed(rng_seed, g, 1))
            flip = train[rng.random(len(train)) < shift.label_noise]
            y[flip] = 1 - y[flip]
    return Dataset(x, y, dataset.groups, dataset.splits, 2)


class LabelRule(Enum):
    DEGREE = 'degree'
    SIZE = 'size'
    MULTI = 'multi'


def _random_graph(rng: np.random.Generator, size: int, edge_prob: float, feature_dim: int) -> Graph:
    u, v = np.triu_indices(size, 1)
    pairs = len(u)
    count = int(rng.binomial(pairs, edge_prob)) if pairs else 0
    chosen = np.sort(rng.choice(pairs, size=count, replace=False)) if count else np.empty(0, dtype=np.int64)
    features = np.ones((size, feature_dim))
    if feature_dim > 1:
        features[:, 1:] = rng.normal(size=(size, feature_dim - 1))
    return Graph(size, features, np.stack([u[chosen], v[chosen]], axis=1))


def synth_random_graphs(
    n: int,
    size_range: tuple[int, int],
    edge_prob_range: tuple[float, float],
    label_rule: LabelRule | str,
    rng_seed: int,
    feature_dim: int = 2,
    size_bins: int = 2,
    degree_bins: int = 2,
    val_fraction: float = DEFAULT_VAL_FRACTION,
) -> Dataset:
    """
    Erdos-Renyi graphs grouped by size and average degree.

    Labels threshold structural statistics at their median over the generated
    set: average degree, node count, or (multilabel) degree, size and density.
    """
    rule = LabelRule(label_rule)
    lo, hi = size_range
    p_lo, p_hi = edge_prob_range
    if n < 1:
        raise DatasetError(f"Need at least one graph, got n={n}")
    if lo < 1 or hi < lo:
        raise DatasetError(f"Degenerate size range {size_range}")
    if not 0.0 <= p_lo <= p_hi <= 1.0:
        raise DatasetError(f"Degenerate edge probability range {edge_prob_range}")
    if feature_dim < 1:
        raise DatasetError(f"feature_dim must be positive, got {feature_dim}")

    rng = np.random.default_rng(rng_seed)
    graphs = []
    for _ in range(n):
        size = int(rng.integers(lo, hi + 1))
        edge_prob = float(rng.uniform(p_lo, p_hi))
        graphs.append(_random_graph(rng, size, edge_prob, feature_dim))

    degree = np.array([g.average_degree() for g in graphs])
    sizes = np.array([g.node_count for g in graphs], dtype=np.float64)
    density = np.array(
        [2.0 * g.edge_count / (g.node_count * (g.node_count - 1)) if g.node_count > 1 else 0.0 for g in graphs]
    )

    def above_median(values: np.ndarray) -> np.ndarray:
        return (values > np.median(values)).astype(np.int64)

    if rule is LabelRule.DEGREE:
        labels, num_classes, multilabel = above_median(degree), 2, False
    elif rule is LabelRule.SIZE:
        labels, num_classes, multilabel = above_median(sizes), 2, False
    else:
        labels = np.stack([above_median(degree), above_median(sizes), above_median(density)], axis=1)
        num_classes, multilabel = 3, True

    assignment = partition_by_intervals(graphs, size_bins, degree_bins)
    dataset = Dataset(
        tuple(graphs), labels, assignment.group_ids, ['train'] * n, num_classes, multilabel
    )
    return assign_splits(dataset, derive_seed(rng_seed, 1), val_fraction)
