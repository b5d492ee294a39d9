import csv
import json
import logging
from pathlib import Path

import numpy as np
from prettyprinter import pprint

from augforest.commands.common import RunContext, open_run
from augforest.config import RunConfig
from augforest.data.dataset import Split
from augforest.errors import ConfigError, ModelError, PolicyError
from augforest.forest import resolve_q, weighted_val_loss
from augforest.model.checkpoint import load_checkpoint
from augforest.model.evaluate import group_loss
from augforest.model.network import init_params
from augforest.model.train import train_sgd
from augforest.oracle import similarity_matrix
from augforest.policy.forest import Forest
from augforest.policy.io import load_policy
from augforest.policy.tree import AugTree, validate
from augforest.seeding import derive_seed

logger = logging.getLogger(__name__)

_TRAIN_STREAM = 1
_EVAL_STREAM = 2


def _load_policy(run: RunContext, path: Path) -> AugTree | Forest:
    try:
        policy = load_policy(path)
    except PolicyError as e:
        raise ConfigError(f"Invalid policy file {path}: {e}") from e
    trees = [tree for _, tree in policy.trees] if isinstance(policy, Forest) else [policy]
    for tree in trees:
        violation = validate(tree, registry=run.registry)
        if violation is not None:
            raise ConfigError(f"Invalid policy file {path}: {violation}")
    return policy


def _parameters(run: RunContext, policy: AugTree | Forest) -> np.ndarray:
    config = run.config
    if config.eval.checkpoint is not None:
        try:
            checkpoint = load_checkpoint(config.eval.checkpoint)
        except ModelError as e:
            raise ConfigError(str(e)) from e
        if checkpoint.spec != run.problem.spec:
            raise ConfigError(f"Checkpoint {config.eval.checkpoint} was trained for a different model")
        return checkpoint.params
    logger.info("No checkpoint given, training a model on the policy first")
    weights = dict(zip(policy.group_ids, policy.weights, strict=True)) if isinstance(policy, Forest) else None
    return train_sgd(
        run.problem,
        init_params(run.problem.spec, derive_seed(config.seed, _TRAIN_STREAM)),
        run.dataset.by_group(Split.TRAIN),
        policy,
        config.search.train_steps,
        config.search.lr,
        config.search.batch_size,
        derive_seed(config.seed, _TRAIN_STREAM, 1),
        weights,
    )


def evaluate(config: RunConfig) -> Path:
    """Per-group and q-weighted losses of a trained model under a tree or forest."""
    if config.eval.policy is None:
        raise ConfigError("eval needs --policy PATH")
    with open_run(config) as run:
        policy = _load_policy(run, config.eval.policy)
        theta = _parameters(run, policy)
        val = run.dataset.by_group(Split.VAL)
        q = resolve_q(run.dataset, config.bilevel.group_weights)
        mode = config.search.mode
        rows = []
        for group_id in sorted(val):
            tree = policy.tree_for(group_id) if isinstance(policy, Forest) else policy
            if tree is None:
                raise PolicyError(f"Group {group_id} is not in the forest")
            rows.append(
                {
                    'group': group_id,
                    'rows': len(val[group_id]),
                    'q': q[group_id],
                    'loss': weighted_val_loss(run.problem, theta, {group_id: val[group_id]}, {group_id: 1.0}),
                    'augmented_loss': group_loss(
                        run.problem, theta, val[group_id], tree, mode, derive_seed(config.seed, _EVAL_STREAM)
                    ),
                }
            )
        report: dict[str, object] = {
            'eval_mode': str(mode),
            'groups': rows,
            'weighted_loss': weighted_val_loss(run.problem, theta, val, q),
            'weighted_augmented_loss': float(sum(r['q'] * r['augmented_loss'] for r in rows)),  # type: ignore[operator]
        }
        out = run.run_dir
        if config.eval.similarity:
            ids, matrix = similarity_matrix(run.problem, theta, val)
            report['similarity'] = {'groups': ids, 'matrix': matrix.tolist()}
            with (out / 'similarity.csv').open('w', newline='') as f:
                writer = csv.writer(f)
                writer.writerow(['group', *ids])
                for group_id, values in zip(ids, matrix, strict=True):
                    writer.writerow([group_id, *(repr(float(v)) for v in values)])
        (out / 'eval.json').write_text(json.dumps(report, indent=2) + '\n')
        pprint(report)
        return out
