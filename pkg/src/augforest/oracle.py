"""
Reference computations the fast paths are checked against: exhaustive tree
enumeration, retraining finite differences of the weight gradient, dense
inverse Hessians and the feature-subspace similarity between groups.
"""

import csv
import logging
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np
from attrs import frozen
from scipy.linalg import svd
from scipy.optimize import minimize

from augforest.data.dataset import GroupData
from augforest.errors import BudgetExceededError, InnerSolveError, OracleError
from augforest.linalg import HVP, dense_hessian, dense_solve
from augforest.model.evaluate import Evaluator
from augforest.model.network import hidden_features
from augforest.model.objective import Objective
from augforest.model.problem import Problem
from augforest.parallel import parallel_map
from augforest.policy.refs import IDENTITY, TransformRef
from augforest.policy.tree import AugTree, TreeNode
from augforest.search import (
    SearchConfig,
    candidate_refs,
    initial_params,
    node_evaluator,
    tie_break_key,
    train_node_model,
)
from augforest.transforms.registry import Registry

logger = logging.getLogger(__name__)

EXHAUSTIVE_BUDGET = 100_000
EXHAUSTIVE_MAX_DEPTH = 2
DENSE_MAX_DIM = 500
SIMILARITY_MASS = 0.99
CLT_WIDTH = 3.0


@frozen
class RankedTree:
    tree: AugTree
    loss: float


@frozen
class ExhaustiveResult:
    best: RankedTree
    candidate_count: int
    # every enumerated tree, best first
    table: tuple[RankedTree, ...]
    theta: np.ndarray


def exhaustive_count(transforms: int, probs: int, d_max: int) -> int:
    """
    Trees enumerated by exhaustive_search.

    `transforms` counts non-identity candidates and `probs` the grid size.
    The identity root stands alone; under each non-identity root come no
    children, a lone non-identity child on either side, or a sibling pair
    that is not all identity.
    """
    if d_max > EXHAUSTIVE_MAX_DEPTH:
        raise OracleError(f"Exhaustive search supports d_max <= {EXHAUSTIVE_MAX_DEPTH}, got {d_max}")
    k, roots = transforms, transforms * probs
    if d_max == 1:
        return 1 + roots
    pairs = ((k + 1) ** 2 - 1) * probs
    return 1 + roots * (1 + 2 * roots + pairs)


def enumerate_trees(refs: Sequence[TransformRef], probs: Sequence[float], d_max: int) -> list[AugTree]:
    """Every depth <= d_max tree over the candidates, in canonical order."""
    grid = sorted(set(probs))
    transforms = [ref for ref in refs if not ref.is_identity]
    with_identity = [*transforms, IDENTITY]
    trees = [AugTree({1: TreeNode(1, IDENTITY, 0.0)}, d_max)]
    for ref in transforms:
        for p in grid:
            root = TreeNode(1, ref, p)
            trees.append(AugTree({1: root}, d_max))
            if d_max < 2:
                continue
            for index in (2, 3):
                for child in transforms:
                    for pc in grid:
                        trees.append(AugTree({1: root, index: TreeNode(index, child, pc)}, d_max))
            for left in with_identity:
                for right in with_identity:
                    if left.is_identity and right.is_identity:
                        continue
                    for pl in grid:
                        trees.append(
                            AugTree(
                                {1: root, 2: TreeNode(2, left, pl), 3: TreeNode(3, right, 1.0 - pl)},
                                d_max,
                            )
                        )
    return trees


def _tree_key(registry: Registry, tree: AugTree) -> tuple:
    return tuple(tie_break_key(registry, node.transform, node.prob) for node in tree)


def exhaustive_search(
    problem: Problem,
    train: GroupData,
    val: GroupData,
    config: SearchConfig,
    budget: int = EXHAUSTIVE_BUDGET,
) -> ExhaustiveResult:
    """
    Score every tree with one frozen model, the model the greedy search
    trains at its root, so the two searches share their depth-one choices.
    """
    refs = candidate_refs(problem.registry, config.transforms)
    grid = sorted(set(config.probs))
    transforms = sum(1 for ref in refs if not ref.is_identity)
    count = exhaustive_count(transforms, len(grid), config.d_max)
    if count > budget:
        raise BudgetExceededError(f"Exhaustive search needs {count} candidates, budget is {budget}")
    trees = enumerate_trees(refs, grid, config.d_max)
    theta = train_node_model(problem, initial_params(problem, config), train, AugTree({}, config.d_max), config, 1)
    evaluator = node_evaluator(problem, theta, val, config)
    mode = config.mode
    losses = parallel_map(lambda tree: evaluator.evaluate(tree, mode).value, trees, config.threads)
    ranked = sorted(
        (RankedTree(tree, loss) for tree, loss in zip(trees, losses, strict=True)),
        key=lambda r: (r.loss, _tree_key(problem.registry, r.tree)),
    )
    logger.info(f"Exhaustive search scored {len(trees)} trees, best L_val={ranked[0].loss:.6f}")
    return ExhaustiveResult(ranked[0], len(trees), tuple(ranked), theta)


def describe_tree(tree: AugTree, registry: Registry) -> str:
    return ' '.join(f"{node.index}:{registry.label(node.transform)}@{node.prob:g}" for node in tree)


def write_comparison_csv(result: ExhaustiveResult, registry: Registry, path: Path) -> None:
    with path.open('w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['candidate', 'L_val', 'rank'])
        for rank, entry in enumerate(result.table, start=1):
            writer.writerow([describe_tree(entry.tree, registry), repr(entry.loss), rank])


def solve_inner(
    inner: Sequence[Objective],
    w: Sequence[float] | np.ndarray,
    ridge: float,
    theta0: np.ndarray,
    tolerance: float = 1e-8,
    max_iterations: int = 1000,
) -> np.ndarray:
    """argmin sum_g w_g inner_g + ridge/2 |theta|^2, to a gradient norm within tolerance."""
    weights = np.asarray(w, dtype=np.float64)

    def value(theta: np.ndarray) -> float:
        return sum(float(wg) * f.value(theta) for wg, f in zip(weights, inner, strict=True)) + 0.5 * ridge * float(
            theta @ theta
        )

    def gradient(theta: np.ndarray) -> np.ndarray:
        out = ridge * theta
        for wg, f in zip(weights, inner, strict=True):
            out = out + wg * f.grad(theta)
        return out

    def hessp(theta: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = ridge * v
        for wg, f in zip(weights, inner, strict=True):
            out = out + wg * f.hvp(theta, v)
        return out

    result = minimize(
        value,
        np.asarray(theta0, dtype=np.float64),
        jac=gradient,
        hessp=hessp,
        method='trust-ncg',
        options={'gtol': tolerance, 'maxiter': max_iterations},
    )
    norm = float(np.linalg.norm(gradient(result.x)))
    if not np.all(np.isfinite(result.x)) or norm > tolerance:
        raise InnerSolveError(f"Inner solve stopped at gradient norm {norm:.3g} > {tolerance:g}: {result.message}")
    return result.x


def simplex_perturbation(w: np.ndarray, index: int, eps: float) -> np.ndarray:
    """(w + eps e_i) / (1 + eps); its derivative at eps = 0 is e_i - w."""
    out = np.asarray(w, dtype=np.float64).copy()
    out[index] += eps
    return out / (1.0 + eps)


def implicit_tangent(d: np.ndarray, w: np.ndarray, index: int) -> float:
    """The weight gradient d projected on the simplex direction e_i - w."""
    return float(d[index] - np.asarray(w) @ np.asarray(d))


def fd_implicit_grad(
    outer: Objective,
    inner: Sequence[Objective],
    w: Sequence[float] | np.ndarray,
    index: int,
    ridge: float,
    theta0: np.ndarray,
    eps: float = 1e-3,
    tolerance: float = 1e-8,
) -> float:
    """
    Central difference of outer(theta*(w)) along e_i - w, retraining the inner
    problem to tolerance at both ends.
    """
    w = np.asarray(w, dtype=np.float64)
    if not eps < w[index]:
        raise OracleError(f"Step {eps} would leave the simplex at w_{index}={w[index]}")
    plus = solve_inner(inner, simplex_perturbation(w, index, eps), ridge, theta0, tolerance)
    minus = solve_inner(inner, simplex_perturbation(w, index, -eps), ridge, theta0, tolerance)
    return (outer.value(plus) - outer.value(minus)) / (2.0 * eps)


def exact_inv_hvp(hvp: HVP, v: np.ndarray, dim: int, damping: float) -> np.ndarray:
    if dim > DENSE_MAX_DIM:
        raise OracleError(f"Dense Hessian of dimension {dim} exceeds {DENSE_MAX_DIM}")
    return dense_solve(dense_hessian(hvp, dim), v, damping)


def quadratic_implicit_grad(
    matrices: Sequence[np.ndarray],
    centers: Sequence[np.ndarray],
    q: Sequence[float],
    w: Sequence[float],
    theta: np.ndarray,
    damping: float,
) -> np.ndarray:
    """Closed-form weight gradient for L_g = 1/2 (theta - c_g)^T A_g (theta - c_g)."""
    theta = np.asarray(theta, dtype=np.float64)
    grads = [a @ (theta - c) for a, c in zip(matrices, centers, strict=True)]
    v = sum(qg * g for qg, g in zip(q, grads, strict=True))
    h = sum(wg * a for wg, a in zip(w, matrices, strict=True)) + damping * np.eye(len(theta))
    x = np.linalg.solve(h, v)
    return np.array([-float(x @ g) for g in grads])


def _subspace(features: np.ndarray) -> np.ndarray:
    """U D^(1/2) of X^T X, truncated to SIMILARITY_MASS of its singular values."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise OracleError(f"Feature matrix must be 2-d with at least one row, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise OracleError("Feature matrix has non-finite entries")
    _, s, vt = svd(x, full_matrices=False)
    # singular values of X^T X are s^2, their square roots s
    mass = np.cumsum(s * s)
    if mass[-1] <= 0.0:
        raise OracleError("Feature matrix is zero")
    rank = min(int(np.searchsorted(mass, SIMILARITY_MASS * mass[-1])) + 1, len(s))
    return vt[:rank].T * s[:rank]


def feature_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """|Z_a^T Z_b|_F / (|Z_a|_F |Z_b|_F) for the truncated covariance factors Z."""
    if np.shape(a)[-1] != np.shape(b)[-1]:
        raise OracleError(f"Feature dimensions differ: {np.shape(a)[-1]} and {np.shape(b)[-1]}")
    za, zb = _subspace(a), _subspace(b)
    value = np.linalg.norm(za.T @ zb) / (np.linalg.norm(za) * np.linalg.norm(zb))
    return float(min(1.0, max(0.0, value)))


def group_features(problem: Problem, theta: np.ndarray, data: GroupData) -> np.ndarray:
    return hidden_features(problem.spec, theta, problem.featurize(data.samples))


def similarity_matrix(
    problem: Problem, theta: np.ndarray, groups: Mapping[int, GroupData]
) -> tuple[list[int], np.ndarray]:
    """Pairwise feature similarity of the groups, the diagonal included."""
    ids = sorted(groups)
    features = {g: group_features(problem, theta, groups[g]) for g in ids}
    out = np.zeros((len(ids), len(ids)))
    for i, gi in enumerate(ids):
        for j in range(i, len(ids)):
            out[i, j] = out[j, i] = feature_similarity(features[gi], features[ids[j]])
    return ids, out


@frozen
class MonteCarloCheck:
    exact: float
    estimate: float
    stderr: float
    gap: float
    bound: float

    @property
    def within(self) -> bool:
        return self.gap <= self.bound


def mc_vs_enum_check(
    problem: Problem,
    theta: np.ndarray,
    data: GroupData,
    tree: AugTree,
    replicates: int,
    rng_seed: int,
) -> MonteCarloCheck:
    """Monte-Carlo estimate against path enumeration, with a 3 sigma CLT bound."""
    evaluator = Evaluator(problem, theta, data, rng_seed)
    exact = evaluator.exact(tree).value
    estimate = evaluator.monte_carlo(tree, replicates)
    gap = abs(estimate.value - exact)
    check = MonteCarloCheck(exact, estimate.value, estimate.stderr, gap, CLT_WIDTH * estimate.stderr)
    if not check.within:
        logger.warning(f"Monte-Carlo gap {gap:.3g} exceeds the 3 sigma bound {check.bound:.3g}")
    return check
