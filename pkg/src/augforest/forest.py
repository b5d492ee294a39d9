"""
Learning a forest: one searched tree per group plus simplex weights over groups.

The weights are the upper level of a bilevel problem. The model is trained
for a few SGD steps on the w-weighted augmented training loss, then w takes
one exponentiated-gradient step along the implicit gradient of the
q-weighted validation loss through the trained parameters.
"""

import csv
import logging
import math
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np
from attrs import field, frozen

from augforest.data.dataset import Dataset, GroupData, Split
from augforest.errors import ConfigError, DatasetError, DivergenceError
from augforest.linalg import HVP, HVPSampler, InverseConfig, Solver, inv_hvp
from augforest.model.network import init_params
from augforest.model.objective import ModelObjective, Objective, SumObjective
from augforest.model.problem import Problem
from augforest.model.spec import concat_batches
from augforest.model.train import train_sgd
from augforest.parallel import parallel_map
from augforest.policy.forest import Forest
from augforest.policy.tree import EMPTY_TREE, AugTree
from augforest.search import SearchConfig, SearchResult, search_tree
from augforest.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

# seed streams
_INIT_STREAM = 1
_SGD_STREAM = 2
_INNER_STREAM = 3
_HESSIAN_STREAM = 4
_BASELINE_STREAM = 5

MIN_WEIGHT = float(np.finfo(np.float64).tiny)


def _positive(instance: object, attribute: object, value: float) -> None:
    if value <= 0:
        raise ConfigError(f"{attribute.name} must be positive, got {value}")  # type: ignore[attr-defined]


def _nonnegative(instance: object, attribute: object, value: float) -> None:
    if value < 0:
        raise ConfigError(f"{attribute.name} must be nonnegative, got {value}")  # type: ignore[attr-defined]


def _optional_positive(instance: object, attribute: object, value: float | None) -> None:
    if value is not None:
        _positive(instance, attribute, value)


@frozen
class BilevelConfig:
    iterations: int = field(default=10, validator=_positive)
    inner_steps: int = field(default=50, validator=_positive)
    eta: float = field(default=1.0, validator=_nonnegative)
    lr: float = field(default=0.5, validator=_positive)
    batch_size: int = field(default=32, validator=_positive)
    damping: float = field(default=1e-3, validator=_positive)
    neumann_terms: int = field(default=100, validator=_nonnegative)
    # None picks gamma from a curvature probe
    gamma: float | None = field(default=None, validator=_optional_positive)
    # rows per Hessian term of the Neumann recursion; None uses every row
    hessian_batch: int | None = field(default=None, validator=_optional_positive)
    solver: Solver = Solver.NEUMANN
    # validation mixture q; None uses the training proportions
    group_weights: tuple[float, ...] | None = None
    seed: int = 0

    def __attrs_post_init__(self) -> None:
        if self.gamma is not None and self.gamma > 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")

    def inverse(self, iteration: int) -> InverseConfig:
        return InverseConfig(
            solver=self.solver,
            terms=self.neumann_terms,
            gamma=self.gamma,
            damping=self.damping,
            seed=derive_seed(self.seed, _HESSIAN_STREAM, iteration),
        )


@frozen
class HistoryRow:
    iteration: int
    weighted_train_loss: float
    val_loss: float
    weights: tuple[float, ...]
    effective_size: float


@frozen
class ForestResult:
    forest: Forest
    theta: np.ndarray
    history: tuple[HistoryRow, ...]
    q: tuple[float, ...]
    # empty when the trees were supplied rather than searched
    searches: Mapping[int, SearchResult] = field(factory=dict)


def mirror_descent_step(w: np.ndarray, d: np.ndarray, eta: float) -> np.ndarray:
    """w_i exp(-eta d_i), renormalized; entries that underflow are clipped to the smallest float."""
    w = np.asarray(w, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise DivergenceError(f"Non-finite weight gradient {d.tolist()}")
    if eta == 0.0:
        return w.copy()
    logits = np.log(w) - eta * d
    logits -= logits.max()
    out = np.exp(logits)
    out /= out.sum()
    if np.any(out <= 0.0):
        logger.warning(f"Clipping {int(np.sum(out <= 0.0))} group weights that underflowed to zero")
        out = np.maximum(out, MIN_WEIGHT)
        out /= out.sum()
    return out


def effective_sample_size(w: Sequence[float] | np.ndarray, sizes: Sequence[int] | np.ndarray) -> float:
    """(sum_g w_g^2 / n_g)^-1."""
    w = np.asarray(w, dtype=np.float64)
    n = np.asarray(sizes, dtype=np.float64)
    if len(w) != len(n):
        raise DatasetError(f"{len(w)} weights for {len(n)} groups")
    if np.any(n < 1):
        raise DatasetError("Every group needs at least one row")
    return float(1.0 / np.sum(w * w / n))


def implicit_grad(
    outer: Objective,
    inner: Sequence[Objective],
    w: np.ndarray,
    theta: np.ndarray,
    ridge: float,
    inverse: InverseConfig,
    hessian_batch: int | None = None,
    threads: int = 1,
) -> np.ndarray:
    """
    d_i = -grad(outer)^T (H + damping I)^-1 grad(inner_i), with
    H = sum_g w_g hess(inner_g) + ridge I.

    With a hessian_batch, term j of the Neumann recursion sees
    multinomial(b, w) rows drawn from the groups.
    """
    w = np.asarray(w, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    dim = len(theta)
    v = outer.grad(theta)
    grads = parallel_map(lambda objective: objective.grad(theta), inner, threads)
    if not np.all(np.isfinite(v)) or any(not np.all(np.isfinite(g)) for g in grads):
        raise DivergenceError("Non-finite gradient in the implicit weight gradient")

    total = SumObjective(inner, tuple(w))

    def hvp(u: np.ndarray) -> np.ndarray:
        return total.hvp(theta, u) + ridge * u

    sampler: HVPSampler | None = None
    if hessian_batch is not None and inverse.solver is Solver.NEUMANN:

        def sample_term(term: int) -> HVP:
            rng = make_rng(inverse.seed, term)
            counts = rng.multinomial(hessian_batch, w)
            parts = [
                (count / hessian_batch, objective.subsample(rng, int(count)))
                for count, objective in zip(counts, inner, strict=True)
                if count > 0
            ]

            def term_hvp(u: np.ndarray) -> np.ndarray:
                out = ridge * u
                for share, objective in parts:
                    out = out + share * objective.hvp(theta, u)
                return out

            return term_hvp

        sampler = sample_term

    # H is symmetric, so one solve against the outer gradient serves every group
    x = inv_hvp(hvp, v, dim, inverse, sampler)
    return np.array([-float(x @ g) for g in grads])


def resolve_q(dataset: Dataset, override: Sequence[float] | None) -> dict[int, float]:
    group_ids = dataset.group_ids
    if override is None:
        return {s.group_id: s.proportion for s in dataset.group_stats(Split.TRAIN)}
    if len(override) != len(group_ids):
        raise ConfigError(f"{len(override)} group weights for {len(group_ids)} groups")
    values = np.asarray(override, dtype=np.float64)
    if np.any(values < 0) or values.sum() <= 0:
        raise ConfigError(f"Group weights must be nonnegative with a positive sum, got {list(override)}")
    values = values / values.sum()
    return {g: float(v) for g, v in zip(group_ids, values, strict=True)}


def validation_objective(problem: Problem, val: Mapping[int, GroupData], q: Mapping[int, float]) -> ModelObjective:
    """sum_g q_g mean loss of group g's unaugmented validation rows, without the penalty."""
    batches = [problem.batch(val[g], None, weight=q[g]) for g in sorted(val) if q.get(g, 0.0) > 0.0]
    return ModelObjective(problem.spec, concat_batches(batches), include_penalty=False)


def training_objectives(
    problem: Problem,
    train: Mapping[int, GroupData],
    forest: Forest,
    rng_seed: int,
) -> list[ModelObjective]:
    """
    Each group's training rows, augmented once by its own tree, without the
    penalty. Every group draws from the same seed, so groups with equal rows
    and equal trees get equal objectives.
    """
    return [
        ModelObjective(
            problem.spec,
            problem.batch(train[g], forest.tree_for(g), rng_seed),
            include_penalty=False,
        )
        for g in forest.group_ids
    ]


def weighted_val_loss(
    problem: Problem, theta: np.ndarray, val: Mapping[int, GroupData], q: Mapping[int, float]
) -> float:
    return validation_objective(problem, val, q).value(theta)


def search_group_trees(
    problem: Problem,
    dataset: Dataset,
    config: SearchConfig,
    threads: int = 1,
) -> dict[int, SearchResult]:
    """One independent search per group, all from the same seed."""
    train = dataset.by_group(Split.TRAIN)
    val = dataset.by_group(Split.VAL)

    def one(group_id: int) -> SearchResult:
        logger.info(f"Searching the tree for group {group_id}")
        return search_tree(problem, train[group_id], val[group_id], config)

    ids = list(dataset.group_ids)
    return dict(zip(ids, parallel_map(one, ids, threads), strict=True))


def _history_row(
    iteration: int,
    theta: np.ndarray,
    w: np.ndarray,
    inner: Sequence[Objective],
    outer: Objective,
    sizes: Sequence[int],
) -> HistoryRow:
    train_loss = math.fsum(float(wg) * objective.value(theta) for wg, objective in zip(w, inner, strict=True))
    return HistoryRow(
        iteration,
        train_loss,
        outer.value(theta),
        tuple(float(x) for x in w),
        effective_sample_size(w, sizes),
    )


def learn_forest(
    dataset: Dataset,
    problem: Problem,
    search_config: SearchConfig,
    config: BilevelConfig,
    threads: int = 1,
    trees: Mapping[int, AugTree] | None = None,
) -> ForestResult:
    """
    Search a tree per group (unless trees are given), then alternate
    `inner_steps` of weighted SGD with one mirror-descent step on the group
    weights, `iterations` times.

    History row t records (theta, w) at the start of iteration t; the last
    row is the returned state.
    """
    dataset.require_groups()
    train = dataset.by_group(Split.TRAIN)
    val = dataset.by_group(Split.VAL)
    group_ids = list(dataset.group_ids)
    for g in group_ids:
        if g not in train or g not in val:
            raise DatasetError(f"Group {g} needs both training and validation rows")

    searches: dict[int, SearchResult] = {}
    if trees is None:
        searches = search_group_trees(problem, dataset, search_config, threads)
        trees = {g: result.tree for g, result in searches.items()}
    chosen = {g: trees.get(g, EMPTY_TREE) for g in group_ids}

    q = resolve_q(dataset, config.group_weights)
    sizes = [len(train[g]) for g in group_ids]
    w = np.full(len(group_ids), 1.0 / len(group_ids))
    outer = validation_objective(problem, val, q)
    theta = init_params(problem.spec, derive_seed(config.seed, _INIT_STREAM))
    history: list[HistoryRow] = []

    for t in range(config.iterations):
        forest = Forest(tuple(chosen.items()), tuple(w))
        inner = training_objectives(problem, train, forest, derive_seed(config.seed, _INNER_STREAM, t))
        history.append(_history_row(t, theta, w, inner, outer, sizes))
        theta = train_sgd(
            problem,
            theta,
            train,
            forest,
            config.inner_steps,
            config.lr,
            config.batch_size,
            derive_seed(config.seed, _SGD_STREAM, t),
            weights=dict(zip(group_ids, w, strict=True)),
        )
        if config.eta == 0.0 or len(group_ids) == 1:
            continue
        d = implicit_grad(
            outer,
            inner,
            w,
            theta,
            problem.spec.l2,
            config.inverse(t),
            config.hessian_batch,
            threads,
        )
        w = mirror_descent_step(w, d, config.eta)
        logger.debug(f"Iteration {t}: d={np.round(d, 6).tolist()} w={np.round(w, 6).tolist()}")

    forest = Forest(tuple(chosen.items()), tuple(w))
    inner = training_objectives(
        problem, train, forest, derive_seed(config.seed, _INNER_STREAM, config.iterations)
    )
    history.append(_history_row(config.iterations, theta, w, inner, outer, sizes))
    logger.info(
        f"Forest learned: weights {np.round(w, 4).tolist()}, "
        f"val loss {history[0].val_loss:.6f} -> {history[-1].val_loss:.6f}"
    )
    return ForestResult(forest, theta, tuple(history), tuple(q[g] for g in group_ids), searches)


def pooled_baseline(
    dataset: Dataset,
    problem: Problem,
    search_config: SearchConfig,
    config: BilevelConfig,
) -> tuple[AugTree, np.ndarray, float]:
    """
    One tree searched on all groups pooled, then the same SGD budget on pooled
    rows. Returns (tree, theta, q-weighted validation loss).
    """
    pooled = dataset.pooled()
    result = search_tree(
        problem,
        pooled.by_group(Split.TRAIN)[1],
        pooled.by_group(Split.VAL)[1],
        search_config,
    )
    theta = train_sgd(
        problem,
        init_params(problem.spec, derive_seed(config.seed, _INIT_STREAM)),
        dataset.by_group(Split.TRAIN),
        result.tree,
        config.iterations * config.inner_steps,
        config.lr,
        config.batch_size,
        derive_seed(config.seed, _BASELINE_STREAM),
    )
    q = resolve_q(dataset, config.group_weights)
    return result.tree, theta, weighted_val_loss(problem, theta, dataset.by_group(Split.VAL), q)


def write_history_csv(history: Sequence[HistoryRow], group_ids: Sequence[int], path: Path) -> None:
    with path.open('w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['iter', 'weighted_train_loss', 'val_loss', *(f"w_{g}" for g in group_ids), 'N_w'])
        for row in history:
            writer.writerow(
                [
                    row.iteration,
                    repr(row.weighted_train_loss),
                    repr(row.val_loss),
                    *(repr(x) for x in row.weights),
                    repr(row.effective_size),
                ]
            )
