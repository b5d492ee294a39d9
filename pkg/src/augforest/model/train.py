import logging
from collections.abc import Mapping

import numpy as np

from augforest.data.dataset import GroupData
from augforest.errors import ModelError, UnknownGroupError
from augforest.model.network import grad
from augforest.model.problem import Problem, example_seeds
from augforest.model.spec import Batch, concat_batches
from augforest.policy.forest import Forest
from augforest.policy.tree import AugTree
from augforest.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

type Policy = AugTree | Forest | None


def _tree_for(policy: Policy, group_id: int) -> AugTree | None:
    if isinstance(policy, Forest):
        tree = policy.tree_for(group_id)
        if tree is None:
            raise UnknownGroupError(f"Group {group_id} is not in the forest")
        return tree
    return policy


def _group_batch(
    problem: Problem,
    data: GroupData,
    rows: np.ndarray,
    tree: AugTree | None,
    rng_seed: int,
    weight: float,
) -> Batch:
    samples = [data.sample(int(r)) for r in rows]
    features = problem.augment_sampled(tree, samples, example_seeds(rng_seed, rows))
    return Batch(features, data.labels[rows], np.full(len(rows), weight / len(rows)))


def sample_step_batch(
    problem: Problem,
    groups: Mapping[int, GroupData],
    policy: Policy,
    batch_size: int,
    rng_seed: int,
    weights: Mapping[int, float] | None = None,
) -> Batch:
    """
    One SGD step's batch.

    With weights, each group contributes its own batch of up to `batch_size`
    rows carrying total weight w_g. Without, rows are drawn from all groups
    pooled.
    """
    rng = make_rng(rng_seed)
    group_ids = sorted(groups)
    if weights is None:
        sizes = np.array([len(groups[g]) for g in group_ids])
        total = int(sizes.sum())
        picks = np.sort(rng.choice(total, size=min(batch_size, total), replace=False))
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        parts = []
        for position, group_id in enumerate(group_ids):
            mine = picks[(picks >= offsets[position]) & (picks < offsets[position + 1])] - offsets[position]
            if len(mine):
                parts.append(
                    _group_batch(
                        problem, groups[group_id], mine, _tree_for(policy, group_id), rng_seed, float(len(mine))
                    )
                )
        return concat_batches(parts)
    parts = []
    for group_id in group_ids:
        w = float(weights.get(group_id, 0.0))
        if w <= 0.0:
            continue
        data = groups[group_id]
        rows = np.sort(rng.choice(len(data), size=min(batch_size, len(data)), replace=False))
        parts.append(_group_batch(problem, data, rows, _tree_for(policy, group_id), rng_seed, w))
    if not parts:
        raise ModelError("No group carries positive weight")
    return concat_batches(parts)


def train_sgd(
    problem: Problem,
    theta0: np.ndarray,
    groups: Mapping[int, GroupData] | GroupData,
    policy: Policy,
    steps: int,
    lr: float,
    batch_size: int,
    rng_seed: int,
    weights: Mapping[int, float] | None = None,
) -> np.ndarray:
    """
    Plain SGD on the (weighted) augmented training loss.

    Step t draws its rows and its augmentations from seeds derived from
    (rng_seed, t), so the result is a deterministic function of the inputs.
    """
    if isinstance(groups, GroupData):
        groups = {groups.group_id: groups}
    if steps < 0 or batch_size < 1:
        raise ModelError(f"Bad training schedule steps={steps} batch_size={batch_size}")
    if not groups or any(len(g) == 0 for g in groups.values()):
        raise ModelError("Training needs at least one row per group")
    theta = np.array(theta0, dtype=np.float64, copy=True)
    for step in range(steps):
        batch = sample_step_batch(problem, groups, policy, batch_size, derive_seed(rng_seed, step), weights)
        theta -= lr * grad(problem.spec, theta, batch)
        if not np.all(np.isfinite(theta)):
            raise ModelError(f"Parameters became non-finite at step {step}; lower the learning rate")
    logger.debug(f"Trained {steps} steps at lr={lr}")
    return theta
